"""Memory kernels ``k``, their Sonine conjugates and Bernstein symbols.

A kernel ``k`` is nonnegative, non-increasing, locally integrable and
vanishes at infinity. Its Laplace transform ``Lk`` determines the symbol
``psi(lam) = lam * Lk(lam)``, which equals the Levy integral
``int (1 - exp(-lam s)) M(ds)`` for the measure with tail ``M((s, inf)) = k(s)``.
A conjugate ``k_tilde`` satisfies ``(k_tilde * k)(t) = 1``.

The catalogue covers the Caputo kernel, its truncated variant, the
distributed-order kernel, the exponentially tempered kernel, the gamma
subordinator kernel, multi-term kernels, the classical limit (``psi(lam) =
lam``, i.e. the first derivative) and user supplied kernels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import integrate, special
from scipy.signal import fftconvolve

from .errors import EvaluationFailure, IllConditioned, NoConjugate, ParamOutOfRange
from .quadrature import convolution_at, gauss_legendre_01

__all__ = [
    "FAMILIES",
    "KernelSpec",
    "SonineReport",
    "KernelConditionReport",
    "make_kernel",
    "psi",
    "levy_tail",
    "levy_integral",
    "sonine_conjugate",
    "conjugate_cell_integrals",
    "laplace_of_cells",
    "verify_kernel_conditions",
    "catalogue",
]

FAMILIES = (
    "caputo",
    "truncated_stable",
    "distributed_order",
    "exp_weighted",
    "gamma_sub",
    "multi_term",
    "classical",
    "custom",
)

_CHUNK = 4096


def _real_in(fn):
    """Evaluate ``fn`` on a float array; return a float for scalar input."""

    def wrapper(t):
        arr = np.asarray(t, dtype=float)
        out = fn(np.atleast_1d(arr))
        return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)

    wrapper.__name__ = getattr(fn, "__name__", "kernel_fn")
    return wrapper


def _complex_in(fn):
    """Evaluate a transform on complex input; keep real output for real input."""

    def wrapper(lam):
        arr = np.asarray(lam)
        z = np.atleast_1d(arr).astype(complex)
        out = fn(z)
        if not np.iscomplexobj(arr):
            out = out.real
        return out[0] if arr.ndim == 0 else out.reshape(arr.shape)

    return wrapper


@dataclass(frozen=True)
class KernelSpec:
    """An admissible memory kernel with its evaluators.

    All evaluators are vectorised and treat the kernel as zero for ``t < 0``.
    """

    family: str
    params: dict = field(hash=False)
    k_eval: Callable = field(repr=False, hash=False)
    k_primitive: Callable = field(repr=False, hash=False)
    laplace_k: Callable = field(repr=False, hash=False)
    singular_at_zero: bool = True
    k_tilde_eval: Optional[Callable] = field(default=None, repr=False, hash=False)
    k_tilde_primitive: Optional[Callable] = field(default=None, repr=False, hash=False)
    levy_density: Optional[Callable] = field(default=None, repr=False, hash=False)
    laplace_k_tilde: Optional[Callable] = field(default=None, repr=False, hash=False)
    breakpoints: tuple = ()

    @property
    def id(self):
        args = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()) if not callable(v))
        return f"{self.family}({args})"

    def same_as(self, other):
        return (
            self.family == other.family
            and self.family != "custom"
            and json.dumps(self.params, sort_keys=True, default=str)
            == json.dumps(other.params, sort_keys=True, default=str)
        )

    def k(self, t):
        return self.k_eval(t)

    def K(self, t):
        return self.k_primitive(t)

    def k_tilde(self, t):
        if self.k_tilde_eval is None:
            raise NoConjugate(f"{self.id} has no closed-form conjugate")
        return self.k_tilde_eval(t)

    def laplace(self, lam):
        return self.laplace_k(lam)

    def psi(self, lam):
        return psi(self, lam)

    @property
    def has_closed_conjugate(self):
        return self.k_tilde_eval is not None


# --------------------------------------------------------------------------
# family constructors


def _check_beta(beta, name="beta"):
    if not 0.0 < beta < 1.0:
        raise ParamOutOfRange(name, beta, "0 < beta < 1")


def _check_pos(value, name):
    if not value > 0.0:
        raise ParamOutOfRange(name, value, f"{name} > 0")


def _caputo(beta):
    _check_beta(beta)
    g1 = special.rgamma(1.0 - beta)

    @_real_in
    def k(t):
        out = np.zeros_like(t)
        pos = t > 0
        out[pos] = t[pos] ** (-beta) * g1
        out[t == 0] = np.inf
        return out

    @_real_in
    def K(t):
        return np.where(t > 0, np.maximum(t, 0.0) ** (1.0 - beta) * special.rgamma(2.0 - beta), 0.0)

    @_real_in
    def kt(t):
        out = np.zeros_like(t)
        pos = t > 0
        out[pos] = t[pos] ** (beta - 1.0) * special.rgamma(beta)
        out[t == 0] = np.inf
        return out

    @_real_in
    def Kt(t):
        return np.where(t > 0, np.maximum(t, 0.0) ** beta * special.rgamma(1.0 + beta), 0.0)

    @_real_in
    def levy(s):
        return np.where(s > 0, beta * g1 * np.maximum(s, 1e-300) ** (-1.0 - beta), 0.0)

    return KernelSpec(
        "caputo",
        {"beta": beta},
        k,
        K,
        _complex_in(lambda z: z ** (beta - 1.0)),
        True,
        kt,
        Kt,
        levy,
        _complex_in(lambda z: z ** (-beta)),
    )


@lru_cache(maxsize=64)
def _jacobi_nodes(n, beta):
    # weight x^{-beta} on [0, 1]
    y, w = special.roots_jacobi(n, 0.0, -beta)
    return 0.5 * (y + 1.0), w * 2.0 ** (beta - 1.0)


def _power_laplace_finite(z, beta, delta):
    """``int_0^delta t^{-beta} exp(-z t) dt`` for complex ``z`` with Re z >= 0."""
    zmax = float(np.max(np.abs(z))) * delta if z.size else 0.0
    n = int(min(6000, 40 + 0.75 * zmax))
    x, w = _jacobi_nodes(n, beta)
    out = np.empty(z.shape, dtype=complex)
    step = max(1, 2_000_000 // n)
    for i in range(0, z.size, step):
        zz = z.ravel()[i : i + step]
        out.ravel()[i : i + step] = np.exp(-np.outer(zz * delta, x)) @ w
    return out * delta ** (1.0 - beta)


def _truncated(beta, delta):
    _check_beta(beta)
    _check_pos(delta, "delta")
    g1 = special.rgamma(1.0 - beta)
    cut = delta ** (-beta)

    @_real_in
    def k(t):
        out = np.zeros_like(t)
        inside = (t > 0) & (t <= delta)
        out[inside] = (t[inside] ** (-beta) - cut) * g1
        out[t == 0] = np.inf
        return out

    @_real_in
    def K(t):
        m = np.clip(t, 0.0, delta)
        return (m ** (1.0 - beta) / (1.0 - beta) - cut * m) * g1

    @_real_in
    def levy(s):
        inside = (s > 0) & (s <= delta)
        return np.where(inside, beta * g1 * np.maximum(s, 1e-300) ** (-1.0 - beta), 0.0)

    def laplace(z):
        out = np.empty(z.shape, dtype=complex)
        real = (np.abs(z.imag) == 0) & (z.real > 0)
        x = z.real[real]
        # real axis: regularised lower incomplete gamma
        head = x ** (beta - 1.0) * special.gamma(1.0 - beta) * special.gammainc(1.0 - beta, x * delta)
        tail = -cut * (-np.expm1(-x * delta)) / x
        out[real] = (head + tail) * g1
        zc = z[~real]
        if zc.size:
            zero = zc == 0
            zs = np.where(zero, 1.0, zc)
            tail_c = -cut * (-np.expm1(-zs * delta)) / zs
            tail_c = np.where(zero, -cut * delta, tail_c)
            out[~real] = (_power_laplace_finite(zc, beta, delta) + tail_c) * g1
        return out

    return KernelSpec(
        "truncated_stable",
        {"beta": beta, "delta": delta},
        k,
        K,
        _complex_in(laplace),
        True,
        levy_density=levy,
        breakpoints=(delta,),
    )


def _order_quadrature(t, integrand):
    """``int_0^1 integrand(b, log t) db`` by Gauss-Legendre, chunked over ``t``."""
    b, w = gauss_legendre_01(256)
    out = np.empty(t.shape)
    logt = np.log(t)
    for i in range(0, t.size, _CHUNK):
        lt = logt[i : i + _CHUNK, None]
        out[i : i + _CHUNK] = integrand(b[None, :], lt) @ w
    return out


def _exp_e1(t):
    """``exp(t) E_1(t)`` without overflow."""
    out = np.empty_like(t)
    small = t <= 600.0
    out[small] = np.exp(t[small]) * special.exp1(t[small])
    x = t[~small]
    out[~small] = (1.0 - 1.0 / x + 2.0 / x**2 - 6.0 / x**3 + 24.0 / x**4) / x
    return out


def _distributed_order():
    @_real_in
    def k(t):
        out = np.zeros_like(t)
        pos = t > 0
        out[pos] = _order_quadrature(t[pos], lambda b, lt: np.exp((b - 1.0) * lt) * special.rgamma(b))
        out[t == 0] = np.inf
        return out

    @_real_in
    def K(t):
        out = np.zeros_like(t)
        pos = t > 0
        out[pos] = _order_quadrature(t[pos], lambda b, lt: np.exp(b * lt) * special.rgamma(1.0 + b))
        return out

    @_real_in
    def levy(s):
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = _order_quadrature(
            s[pos], lambda b, lt: (1.0 - b) * np.exp((b - 2.0) * lt) * special.rgamma(b)
        )
        return out

    @_real_in
    def kt(t):
        out = np.zeros_like(t)
        pos = t > 0
        out[pos] = _exp_e1(t[pos])
        out[t == 0] = np.inf
        return out

    def _log_ratio(z):
        # log(z) / (z - 1), analytic through z = 1
        d = z - 1.0
        near = np.abs(d) < 1e-6
        safe = np.where(near, 2.0, z)
        val = np.log(safe) / (safe - 1.0)
        series = 1.0 - d / 2.0 + d**2 / 3.0
        return np.where(near, series, val)

    def laplace(z):
        return 1.0 / (z * _log_ratio(z))

    def laplace_tilde(z):
        return _log_ratio(z)

    return KernelSpec(
        "distributed_order",
        {},
        k,
        K,
        _complex_in(laplace),
        True,
        kt,
        None,
        levy,
        _complex_in(laplace_tilde),
    )


def _exp_weighted(beta, lam_w):
    _check_beta(beta)
    _check_pos(lam_w, "lam_w")
    g1 = special.rgamma(1.0 - beta)
    scale = lam_w ** (1.0 - beta)

    @_real_in
    def k(t):
        out = np.zeros_like(t)
        pos = t > 0
        out[pos] = t[pos] ** (-beta) * np.exp(-lam_w * t[pos]) * g1
        out[t == 0] = np.inf
        return out

    @_real_in
    def K(t):
        return np.where(t > 0, lam_w ** (beta - 1.0) * special.gammainc(1.0 - beta, lam_w * np.maximum(t, 0.0)), 0.0)

    @_real_in
    def levy(s):
        pos = np.maximum(s, 1e-300)
        val = (beta * pos ** (-1.0 - beta) + lam_w * pos ** (-beta)) * np.exp(-lam_w * pos) * g1
        return np.where(s > 0, val, 0.0)

    # Conjugate of g_{1-beta} e^{-lam t}: Laplace transform (z + lam)^{1-beta} / z.
    @_real_in
    def kt(t):
        out = np.zeros_like(t)
        pos = t > 0
        x = lam_w * t[pos]
        out[pos] = scale * (1.0 + x ** (beta - 1.0) * np.exp(-x) * special.rgamma(beta) - special.gammaincc(beta, x))
        out[t == 0] = np.inf
        return out

    @_real_in
    def Kt(t):
        out = np.zeros_like(t)
        pos = t > 0
        tp = t[pos]
        x = lam_w * tp
        p = special.gammainc(beta, x)
        q = special.gammaincc(beta, x)
        p1 = special.gammainc(beta + 1.0, x)
        out[pos] = scale * (tp + (p - x * q - beta * p1) / lam_w)
        return out

    return KernelSpec(
        "exp_weighted",
        {"beta": beta, "lam_w": lam_w},
        k,
        K,
        _complex_in(lambda z: (z + lam_w) ** (beta - 1.0)),
        True,
        kt,
        Kt,
        levy,
        _complex_in(lambda z: (z + lam_w) ** (1.0 - beta) / z),
    )


def _gamma_sub(a, b):
    _check_pos(a, "a")
    _check_pos(b, "b")

    @_real_in
    def k(t):
        out = np.zeros_like(t)
        pos = t > 0
        out[pos] = a * special.exp1(b * t[pos])
        out[t == 0] = np.inf
        return out

    @_real_in
    def K(t):
        out = np.zeros_like(t)
        pos = t > 0
        x = b * t[pos]
        out[pos] = a / b * (x * special.exp1(x) - np.expm1(-x))
        return out

    @_real_in
    def levy(s):
        pos = np.maximum(s, 1e-300)
        return np.where(s > 0, a * np.exp(-b * pos) / pos, 0.0)

    return KernelSpec(
        "gamma_sub",
        {"a": a, "b": b},
        k,
        K,
        _complex_in(lambda z: a / z * np.log1p(z / b)),
        True,
        levy_density=levy,
    )


def _multi_term(terms):
    terms = tuple((float(a), float(b)) for a, b in terms)
    if not terms:
        raise ParamOutOfRange("terms", terms, "at least one (a_j, beta_j) pair")
    for a, b in terms:
        _check_pos(a, "a_j")
        _check_beta(b, "beta_j")
    betas = [b for _, b in terms]
    if any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
        raise ParamOutOfRange("beta_j", betas, "0 < beta_1 < ... < beta_n < 1")
    coef = np.array([a for a, _ in terms])
    bet = np.array(betas)

    @_real_in
    def k(t):
        out = np.zeros_like(t)
        pos = t > 0
        tp = t[pos, None]
        out[pos] = (coef * tp ** (-bet) * special.rgamma(1.0 - bet)).sum(axis=1)
        out[t == 0] = np.inf
        return out

    @_real_in
    def K(t):
        tp = np.maximum(t, 0.0)[:, None]
        return (coef * tp ** (1.0 - bet) * special.rgamma(2.0 - bet)).sum(axis=1)

    @_real_in
    def levy(s):
        sp = np.maximum(s, 1e-300)[:, None]
        val = (coef * bet * sp ** (-1.0 - bet) * special.rgamma(1.0 - bet)).sum(axis=1)
        return np.where(s > 0, val, 0.0)

    def laplace(z):
        return sum(a * z ** (b - 1.0) for a, b in terms)

    def laplace_tilde(z):
        return 1.0 / sum(a * z**b for a, b in terms)

    return KernelSpec(
        "multi_term",
        {"terms": [list(tm) for tm in terms]},
        k,
        K,
        _complex_in(laplace),
        True,
        levy_density=levy,
        laplace_k_tilde=_complex_in(laplace_tilde),
    )


def _classical():
    # psi(lam) = lam: k is the Dirac mass at 0, K the Heaviside function.
    @_real_in
    def k(t):
        return np.where(t == 0, np.inf, 0.0)

    @_real_in
    def K(t):
        return np.where(t > 0, 1.0, 0.0)

    @_real_in
    def kt(t):
        return np.where(t >= 0, 1.0, 0.0)

    @_real_in
    def Kt(t):
        return np.maximum(t, 0.0)

    return KernelSpec(
        "classical",
        {},
        k,
        K,
        _complex_in(lambda z: np.ones_like(z)),
        True,
        kt,
        Kt,
        None,
        _complex_in(lambda z: 1.0 / z),
    )


def _numeric_laplace(k_fn, z, rtol=1e-10):
    """Truncated adaptive quadrature of ``int_0^T k(t) exp(-z t) dt``."""
    out = np.empty(z.shape, dtype=complex)
    for i, lam in enumerate(z.ravel()):
        if lam.real <= 0:
            raise EvaluationFailure(f"numeric Laplace transform needs Re(lam) > 0, got {lam}")
        T = 1.0
        while True:
            bound = abs(k_fn(T)) * abs(np.exp(-lam * T) / lam)
            if bound < 1e-12 or T > 1e8:
                break
            T *= 2.0
        if T > 1e8:
            raise EvaluationFailure(f"Laplace tail bound not reached for lam={lam}")
        pieces = [0.0, min(1.0, T)] + ([T] if T > 1.0 else [])
        total = 0.0 + 0.0j
        for lo, hi in zip(pieces, pieces[1:]):
            limit = 200 + int(abs(lam.imag) * (hi - lo))
            re, er = integrate.quad(lambda s: k_fn(s) * math.exp(-lam.real * s) * math.cos(lam.imag * s), lo, hi, limit=limit)
            im, ei = integrate.quad(lambda s: -k_fn(s) * math.exp(-lam.real * s) * math.sin(lam.imag * s), lo, hi, limit=limit)
            if er + ei > max(1e-8, rtol * abs(re + 1j * im)):
                raise EvaluationFailure(f"Laplace quadrature did not converge at lam={lam} (err {er + ei:.2e})")
            total += re + 1j * im
        out.ravel()[i] = total
    return out


def _custom(k=None, K=None, laplace=None, k_tilde=None, k_tilde_primitive=None, t=None, values=None, singular=None):
    if t is not None:
        ts = np.asarray(t, dtype=float)
        ks = np.asarray(values, dtype=float)
        if ts.ndim != 1 or ts.shape != ks.shape or ts.size < 2 or np.any(np.diff(ts) <= 0):
            raise ParamOutOfRange("samples", ts.size, "strictly increasing times with matching values")
        if ts[0] != 0.0:
            ts = np.concatenate([[0.0], ts])
            ks = np.concatenate([[ks[0]], ks])
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (ks[1:] + ks[:-1]) * np.diff(ts))])

        @_real_in
        def k_fn(x):
            return np.where((x >= 0) & (x <= ts[-1]), np.interp(x, ts, ks), 0.0)

        @_real_in
        def K_fn(x):
            xc = np.clip(x, 0.0, ts[-1])
            idx = np.clip(np.searchsorted(ts, xc, side="right") - 1, 0, ts.size - 2)
            dx = xc - ts[idx]
            slope = (ks[idx + 1] - ks[idx]) / (ts[idx + 1] - ts[idx])
            return cum[idx] + ks[idx] * dx + 0.5 * slope * dx**2

        params = {"source": "samples", "n": int(ts.size)}
        sing = bool(singular) if singular is not None else False
    else:
        if k is None:
            raise ParamOutOfRange("k", None, "custom kernel needs a callable k or samples")
        k_fn = _real_in(lambda x: np.where(x > 0, np.vectorize(k, otypes=[float])(np.maximum(x, 1e-300)), 0.0))
        if K is not None:
            K_fn = _real_in(lambda x: np.vectorize(K, otypes=[float])(np.maximum(x, 0.0)))
        else:

            def _K(x):
                out = np.empty_like(x)
                for i, xi in enumerate(x):
                    out[i] = integrate.quad(k, 0.0, xi, limit=200)[0] if xi > 0 else 0.0
                return out

            K_fn = _real_in(_K)
        params = {"source": "callable"}
        sing = bool(singular) if singular is not None else not np.isfinite(k_fn(1e-300))
    if laplace is not None:
        lap = _complex_in(lambda z: np.asarray(laplace(z), dtype=complex))
    else:
        lap = _complex_in(lambda z: _numeric_laplace(k_fn, z))
    kt = _real_in(lambda x: np.asarray(k_tilde(x), dtype=float)) if k_tilde is not None else None
    Kt = _real_in(lambda x: np.asarray(k_tilde_primitive(x), dtype=float)) if k_tilde_primitive is not None else None
    return KernelSpec("custom", params, k_fn, K_fn, lap, sing, kt, Kt)


def make_kernel(family, **params):
    """Build a :class:`KernelSpec` from a family id and its parameters.

    Families and parameters::

        caputo             beta
        truncated_stable   beta, delta
        distributed_order  (none)
        exp_weighted       beta, lam_w
        gamma_sub          a, b
        multi_term         terms=[(a_j, beta_j), ...]  or  alpha, beta
        classical          (none)   -- the beta -> 1 limit, psi(lam) = lam
        custom             k, K, laplace, k_tilde  or  t, values

    Raises
    ------
    ParamOutOfRange
        If a parameter is outside its admissible range.
    """
    fam = family.lower().replace("-", "_")
    try:
        if fam == "caputo":
            return _caputo(float(params.pop("beta")))
        if fam in ("truncated_stable", "truncated"):
            return _truncated(float(params.pop("beta")), float(params.pop("delta", params.pop("delta_trunc", 1.0))))
        if fam in ("distributed_order", "distributed"):
            return _distributed_order()
        if fam in ("exp_weighted", "exponential"):
            return _exp_weighted(float(params.pop("beta")), float(params.pop("lam_w", params.pop("lam", 1.0))))
        if fam in ("gamma_sub", "gamma"):
            return _gamma_sub(float(params.pop("a", 1.0)), float(params.pop("b", 1.0)))
        if fam in ("multi_term", "multiterm"):
            if "terms" in params:
                return _multi_term(params.pop("terms"))
            a = float(params.pop("alpha"))
            b = float(params.pop("beta"))
            lo, hi = sorted((a, b))
            if lo == hi:
                raise ParamOutOfRange("alpha", a, "alpha != beta")
            return _multi_term([(1.0, lo), (1.0, hi)])
        if fam == "classical":
            return _classical()
        if fam == "custom":
            return _custom(**params)
    except KeyError as exc:
        raise ParamOutOfRange(exc.args[0], None, f"required by family {family!r}") from None
    raise ParamOutOfRange("family", family, f"one of {FAMILIES}")


def catalogue():
    """One representative kernel per built-in family (custom excluded)."""
    return [
        make_kernel("caputo", beta=0.5),
        make_kernel("truncated_stable", beta=0.5, delta=1.0),
        make_kernel("distributed_order"),
        make_kernel("exp_weighted", beta=0.5, lam_w=1.0),
        make_kernel("gamma_sub", a=1.0, b=1.0),
        make_kernel("multi_term", alpha=0.3, beta=0.7),
        make_kernel("classical"),
    ]


# --------------------------------------------------------------------------
# symbols


def psi(kernel, lam):
    """Bernstein symbol ``psi(lam) = lam * Lk(lam)``; ``psi(0) = 0``."""
    arr = np.asarray(lam)
    z = np.atleast_1d(arr)
    if np.any(np.real(z) < 0):
        raise ParamOutOfRange("lam", lam, "Re(lam) >= 0")
    nz = z != 0
    zs = np.where(nz, z, 1.0)
    vals = np.where(nz, zs * kernel.laplace(zs), 0.0)
    if not np.all(np.isfinite(vals)):
        raise EvaluationFailure(f"non-finite symbol value for {kernel.id}")
    return vals[0] if arr.ndim == 0 else vals.reshape(arr.shape)


def levy_tail(kernel, s):
    """Tail ``M((s, inf))`` of the Levy measure, which is ``k(s)``."""
    return kernel.k(s)


def levy_integral(kernel, lam):
    """``int (1 - exp(-lam s)) M(ds)`` by adaptive quadrature of the Levy density.

    Independent of the Laplace-transform route used by :func:`psi`.
    """
    if kernel.levy_density is None:
        raise EvaluationFailure(f"{kernel.id} has no absolutely continuous Levy measure")
    m = kernel.levy_density

    def f(s):
        return -math.expm1(-lam * s) * m(s)

    def f_log(y):
        s = math.exp(y)
        return f(s) * s

    # below eps, 1 - exp(-lam s) = lam s (1 + O(lam eps)) and int_0^eps s M(ds) = K(eps) - eps k(eps);
    # this carries the slowly decaying mass of kernels like the distributed-order one
    eps = 1e-10 / max(lam, 1e-300)
    ke = float(kernel.k(np.array([eps]))[0])
    Ke = float(kernel.K(np.array([eps]))[0])
    total = lam * (Ke - eps * ke) * (1.0 - 0.5 * lam * eps)
    pts = [eps, 1.0 / max(lam, 1e-300)] + list(kernel.breakpoints)
    pts = sorted(set(p for p in pts if p >= eps))
    for lo, hi in zip(pts, pts[1:]):
        if lo == eps:
            total += integrate.quad(f_log, math.log(lo), math.log(hi), epsabs=0.0, epsrel=1e-12, limit=400)[0]
        else:
            total += integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-12, limit=400)[0]
    # tail: M((S, inf)) = k(S) minus an exponentially damped remainder
    big = pts[-1]
    damped = integrate.quad(lambda s: math.exp(-lam * s) * m(s), big, np.inf, epsabs=0.0, epsrel=1e-12, limit=400)[0]
    total += float(kernel.k(np.array([big]))[0]) - damped
    return total


# --------------------------------------------------------------------------
# Sonine conjugates


@dataclass
class SonineReport:
    grid: np.ndarray
    residual: np.ndarray
    max_residual: float
    method: str  # "closed_form" or "numeric_volterra"
    midpoint_residual: float = float("nan")

    def to_dict(self):
        d = {"method": self.method, "max_residual": float(self.max_residual), "n_points": int(self.grid.size)}
        if np.isfinite(self.midpoint_residual):
            d["midpoint_residual"] = float(self.midpoint_residual)
        return d


def _uniform_step(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ParamOutOfRange("grid", grid.size, "at least 2 points")
    tau = grid[1] - grid[0]
    if tau <= 0 or not np.allclose(np.diff(grid), tau, rtol=1e-9, atol=0):
        raise ParamOutOfRange("grid", "non-uniform", "uniform increasing grid")
    start = grid[0] / tau
    if abs(start - round(start)) > 1e-9 or round(start) > 1:
        raise ParamOutOfRange("grid", grid[0], "grid starting at 0 or tau")
    N = int(round(grid[-1] / tau))
    return tau, N


def _forward_substitution(D, rhs, block=128):
    """Solve ``sum_{i<=n} c_i D_{n-i} = rhs_n`` for ``c``.

    Lower-triangular Toeplitz forward substitution; off-diagonal blocks are
    applied by FFT convolution (divide and conquer, O(N log^2 N)).
    """
    N = rhs.size
    c = np.zeros(N)
    r = np.array(rhs, dtype=float)
    inv = 1.0 / D[0]

    def solve(lo, hi):
        if hi - lo <= block:
            for n in range(lo, hi):
                acc = np.dot(c[lo:n], D[n - lo : 0 : -1]) if n > lo else 0.0
                c[n] = (r[n] - acc) * inv
            return
        mid = (lo + hi) // 2
        solve(lo, mid)
        r[mid:hi] -= fftconvolve(c[lo:mid], D[: hi - lo])[mid - lo : hi - lo]
        solve(mid, hi)

    solve(0, N)
    return c


def _volterra_cells(kernel, tau, N):
    """Cell values of the piecewise-constant conjugate on ``((j-1)tau, j tau]``."""
    Kv = kernel.K(tau * np.arange(N + 1))
    D = np.diff(Kv)  # D[m] = K(t_{m+1}) - K(t_m)
    if not D[0] > 0:
        raise NoConjugate(f"zero pivot K(tau)={D[0]!r} for {kernel.id}")
    c = _forward_substitution(D, np.ones(N))
    bad = np.flatnonzero(c < -1e-10 * max(1.0, abs(c[0])))
    if bad.size:
        n = int(bad[0])
        raise NoConjugate(f"negative conjugate value {c[n]:.3e} at cell {n + 1} for {kernel.id}")
    return c, D


def sonine_conjugate(kernel, grid, tol=None, max_check_points=200):
    """Conjugate kernel on a uniform grid and a certificate of ``k_tilde * k = 1``.

    Closed forms are returned where the catalogue has them; their residual is
    evaluated by singular-aware quadrature at up to ``max_check_points`` grid
    points. Otherwise the first-kind Volterra equation is solved with a
    piecewise-constant conjugate and cell-exact kernel integrals; entry ``j``
    of the returned samples is the value on the cell ``(t_{j-1}, t_j]`` and
    entry 0 is NaN. The collocation residual is certified at the grid nodes;
    the residual of the piecewise-constant conjugate at cell midpoints is
    reported as ``midpoint_residual`` (it is first order in the cell width
    and largest in the first cells).

    Raises
    ------
    NoConjugate
        On a non-positive pivot or a negative solution value.
    IllConditioned
        If the certified residual exceeds ``tol`` (1e-6 closed form, 1e-4
        numeric).
    """
    tau, N = _uniform_step(grid)
    t = tau * np.arange(N + 1)
    if kernel.has_closed_conjugate and kernel.family != "classical":
        samples = kernel.k_tilde(t)
        idx = np.unique(np.round(np.geomspace(1, N, min(N, max_check_points))).astype(int))
        pts = t[idx]
        conv = convolution_at(
            kernel.k_tilde_eval,
            kernel.k_eval,
            pts,
            A=kernel.k_tilde_primitive,
            B=kernel.k_primitive,
            breaks_b=kernel.breakpoints,
        )
        res = np.abs(conv - 1.0)
        method, limit = "closed_form", 1e-6 if tol is None else tol
    elif kernel.family == "classical":
        samples = np.ones(N + 1)
        pts, res = t[1:], np.zeros(N)
        method, limit = "closed_form", 1e-6 if tol is None else tol
    else:
        c, D = _volterra_cells(kernel, tau, N)
        samples = np.concatenate([[np.nan], c])
        conv = fftconvolve(c, D)[:N]
        res = np.abs(conv - 1.0)
        pts = t[1:]
        method, limit = "numeric_volterra", 1e-4 if tol is None else tol
        Kh = kernel.K(tau * (np.arange(N) + 0.5))
        mid = np.abs(fftconvolve(c, np.diff(np.concatenate([[0.0], Kh])))[:N] - 1.0)
        report = SonineReport(pts, res, float(res.max()), method, float(mid.max()))
    if method == "closed_form":
        report = SonineReport(pts, res, float(res.max()), method)
    if not np.isfinite(report.max_residual) or report.max_residual > limit:
        raise IllConditioned(f"Sonine residual {report.max_residual:.3e} exceeds {limit:.1e} for {kernel.id}")
    return samples, report


def conjugate_cell_integrals(kernel, tau, N):
    """``int_{t_{j-1}}^{t_j} k_tilde`` for ``j = 1..N``."""
    if kernel.k_tilde_primitive is not None:
        return np.diff(kernel.k_tilde_primitive(tau * np.arange(N + 1)))
    if kernel.k_tilde_eval is not None:
        kt = kernel.k_tilde_eval
        out = np.empty(N)
        for j in range(N):
            out[j] = integrate.quad(lambda s: float(kt(s)), j * tau, (j + 1) * tau, limit=200)[0]
        return out
    c, _ = _volterra_cells(kernel, tau, N)
    return c * tau


def laplace_of_cells(values, tau, lam):
    """Laplace transform of a piecewise-constant function with given cell values."""
    values = np.asarray(values, dtype=float)
    j = np.arange(values.size)
    return float(np.sum(values * (np.exp(-lam * tau * j) - np.exp(-lam * tau * (j + 1)))) / lam)


# --------------------------------------------------------------------------
# condition checks


@dataclass
class KernelConditionReport:
    kernel: str
    records: list
    singular_at_zero: bool

    @property
    def all_pass(self):
        return all(r["pass"] for r in self.records)

    def by_condition(self):
        return {r["condition"]: r["pass"] for r in self.records}

    def to_json(self):
        return json.dumps(
            {"kernel": self.kernel, "singular_at_zero": self.singular_at_zero, "records": self.records}, indent=2
        )


def verify_kernel_conditions(kernel, grid=None, tol=1e-10, vanish_ratio=0.05):
    """Sampled checks of nonnegativity, monotonicity, decay and local integrability.

    ``grid`` should be log-spaced over several decades; the default spans
    ``1e-6 .. 1e100`` so that logarithmically decaying kernels register.
    Decay passes when ``k(grid[-1]) <= vanish_ratio * k(1)`` (or
    ``k(grid[0])`` when ``k(1) = 0``).
    """
    if grid is None:
        grid = np.logspace(-6, 100, 425)
    grid = np.asarray(grid, dtype=float)
    kv = np.asarray(kernel.k(grid), dtype=float)
    scale = np.max(np.abs(kv[np.isfinite(kv)])) if np.any(np.isfinite(kv)) else 1.0
    records = []

    i = int(np.argmin(kv))
    records.append(
        {"condition": "nonnegative", "pass": bool(kv[i] >= -tol * scale), "worst_point": float(grid[i]), "worst_value": float(kv[i])}
    )

    inc = np.diff(kv)
    rel = inc - tol * np.maximum(np.abs(kv[:-1]), scale * 1e-300)
    i = int(np.argmax(rel))
    records.append(
        {
            "condition": "non_increasing",
            "pass": bool(rel[i] <= 0),
            "worst_point": float(grid[i + 1]),
            "worst_value": float(inc[i]),
        }
    )

    ref = float(kernel.k(1.0))
    if not ref > 0:
        ref = float(kv[0])
    tail = float(kv[-1])
    records.append(
        {
            "condition": "vanishes_at_infinity",
            "pass": bool(tail <= vanish_ratio * ref),
            "worst_point": float(grid[-1]),
            "worst_value": tail,
        }
    )

    K1 = float(kernel.K(1.0))
    records.append(
        {"condition": "locally_integrable", "pass": bool(np.isfinite(K1) and K1 >= 0), "worst_point": 1.0, "worst_value": K1}
    )
    return KernelConditionReport(kernel.id, records, bool(kernel.singular_at_zero))
