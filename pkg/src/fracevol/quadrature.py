"""Quadrature helpers for kernels with integrable singularities at the origin.

Convolutions of two kernels that both blow up at ``t = 0`` are split at the
midpoint so that each half carries a single endpoint singularity. That half
is integrated in the logarithmic variable ``s = exp(y)`` with composite
Gauss-Legendre panels, and the sliver ``[0, eps]`` is taken from the
singular factor's primitive.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

_TINY = 1e-300


@lru_cache(maxsize=32)
def gauss_legendre_01(n):
    """Gauss-Legendre nodes and weights on ``[0, 1]``."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _panel_edges(lo, hi, panel, breaks=()):
    edges = np.linspace(lo, hi, max(1, int(np.ceil((hi - lo) / panel))) + 1)
    extra = [b for b in breaks if lo < b < hi]
    if extra:
        edges = np.unique(np.concatenate([edges, extra]))
    return edges


def log_panel_integral(f, lo, hi, panel=1.5, order=24, breaks=()):
    """Integrate ``f`` over ``[lo, hi]`` (``0 < lo < hi``) in the variable ``log s``.

    ``f`` must accept a 1-D array. ``breaks`` are interior points where ``f``
    has a kink; panels are split there.
    """
    if hi <= lo:
        return 0.0
    ylo, yhi = np.log(lo), np.log(hi)
    ybreaks = [np.log(b) for b in breaks if lo < b < hi]
    edges = _panel_edges(ylo, yhi, panel, ybreaks)
    x, w = gauss_legendre_01(order)
    a = edges[:-1, None]
    h = np.diff(edges)[:, None]
    y = (a + h * x).ravel()
    ww = (h * w).ravel()
    s = np.exp(y)
    return float(np.sum(f(s) * s * ww))


def linear_panel_integral(f, lo, hi, panel, order=24, breaks=()):
    """Composite Gauss-Legendre on ``[lo, hi]`` with panels of width ``panel``."""
    if hi <= lo:
        return 0.0
    edges = _panel_edges(lo, hi, panel, breaks)
    x, w = gauss_legendre_01(order)
    a = edges[:-1, None]
    h = np.diff(edges)[:, None]
    s = (a + h * x).ravel()
    return float(np.sum(f(s) * (h * w).ravel()))


def _near_origin_mass(g, G, eps):
    if G is not None:
        return float(G(np.array([eps]))[0])
    return log_panel_integral(g, _TINY, eps, panel=3.0)


def half_convolution(smooth, singular, singular_primitive, t, breaks=()):
    """``int_0^{t/2} smooth(t - s) singular(s) ds`` for a single ``t > 0``."""
    half = 0.5 * t
    eps = max(t * 1e-15, 1e-280)
    head = float(smooth(np.array([t]))[0]) * _near_origin_mass(singular, singular_primitive, eps)
    body = log_panel_integral(lambda s: smooth(t - s) * singular(s), eps, half, breaks=breaks)
    return head + body


def convolution_at(a, b, t, A=None, B=None, breaks_a=(), breaks_b=()):
    """Evaluate ``(a * b)(t) = int_0^t a(t - s) b(s) ds`` for each ``t``.

    Parameters
    ----------
    a, b : callable
        Vectorised kernels, possibly singular at 0, zero on negative reals.
    A, B : callable, optional
        Primitives ``int_0^t`` of ``a`` and ``b``; used for the ``[0, eps]``
        sliver. Without them the sliver is integrated numerically.
    breaks_a, breaks_b : sequence of float
        Points where ``a`` / ``b`` are not smooth (e.g. truncation points).
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty_like(t)
    for i, ti in enumerate(t):
        if ti <= 0.0:
            out[i] = 0.0
            continue
        # a(t - s) b(s): b singular at s = 0; kinks of a at s = t - p, of b at s = p
        br1 = [ti - p for p in breaks_a] + list(breaks_b)
        br2 = [ti - p for p in breaks_b] + list(breaks_a)
        out[i] = half_convolution(a, b, B, ti, br1) + half_convolution(b, a, A, ti, br2)
    return out
