"""Discrete memory operators for the derivative ``d/dt (k * v)``.

Two backends produce convolution weights on a uniform grid ``t_n = n tau``:

* backward-Euler convolution quadrature (CQ), where the weights are the
  Taylor coefficients of ``psi((1 - zeta) / tau)``;
* product integration (PI), a generalised L1 scheme built from the cell
  integrals ``K(t_{m+1}) - K(t_m)`` of the kernel.

Both act on the shifted variable ``v = u - u0`` so that ``v_0 = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.signal import fftconvolve

from .errors import AliasingError, HistoryTooLong, ParamOutOfRange, PrimitiveUnavailable, SymbolEvaluationFailure

__all__ = ["MemoryScheme", "cq_weights", "pi_weights", "make_scheme", "apply_memory", "apply_full", "history_sum", "transfer_function"]


@dataclass(frozen=True)
class MemoryScheme:
    """Convolution weights ``w_0..w_N`` for a uniform step ``tau``.

    ``apply_memory`` returns ``sum_j w_j v_{n-j}``. For the product
    integration backend ``increments[m] = (K(t_{m+1}) - K(t_m)) / tau`` is
    kept as well; the two forms agree whenever ``v_0 = 0``.
    """

    tau: float
    N: int
    weights: np.ndarray
    backend: str
    kernel_id: str = ""
    increments: Optional[np.ndarray] = None

    @property
    def w0(self):
        return float(self.weights[0])

    def to_csv(self, path):
        idx = np.arange(self.weights.size)
        np.savetxt(path, np.column_stack([idx, self.weights]), delimiter=",", header="index,weight", comments="", fmt=["%d", "%.17g"])


def _check_grid(tau, N):
    if not (np.isfinite(tau) and tau > 0):
        raise ParamOutOfRange("tau", tau, "tau > 0")
    if int(N) != N or N < 1:
        raise ParamOutOfRange("N", N, "integer N >= 1")


def _cq_raw(kernel, tau, N, M):
    rho = np.finfo(float).eps ** (1.0 / (2 * M))
    zeta = rho * np.exp(2j * np.pi * np.arange(M) / M)
    z = (1.0 - zeta) / tau
    try:
        vals = z * np.asarray(kernel.laplace(z), dtype=complex)
    except Exception as exc:  # noqa: BLE001 - any transform failure is reported uniformly
        raise SymbolEvaluationFailure(f"symbol evaluation failed for {kernel.id}: {exc}") from exc
    if not np.all(np.isfinite(vals)):
        raise SymbolEvaluationFailure(f"non-finite symbol values for {kernel.id} on the CQ contour")
    coeffs = np.fft.fft(vals)[: N + 1] / M
    return coeffs * rho ** (-np.arange(N + 1.0))


def cq_weights(kernel, tau, N, oversample=4, check_aliasing=True):
    """Backward-Euler convolution quadrature weights.

    The generating function ``psi((1 - zeta)/tau)`` is sampled at
    ``M >= oversample * (N + 1)`` points of the circle of radius
    ``rho = eps**(1/(2M))`` and inverted by FFT.

    Raises
    ------
    SymbolEvaluationFailure
        If the symbol cannot be evaluated on the contour.
    AliasingError
        If doubling ``M`` (which moves the contour closer to the unit circle)
        changes the weights by more than ``1e-8`` relative to ``max |w|``.
    """
    _check_grid(tau, N)
    N = int(N)
    if kernel.family == "classical":
        w = np.zeros(N + 1)
        w[0], w[1] = 1.0 / tau, -1.0 / tau
        return MemoryScheme(float(tau), N, w, "cq", kernel.id)
    M = 1 << int(np.ceil(np.log2(oversample * (N + 1))))
    c = _cq_raw(kernel, tau, N, M)
    scale = np.max(np.abs(c))
    if np.max(np.abs(c.imag)) > 1e-10 * max(abs(c[0]), scale):
        raise SymbolEvaluationFailure(f"CQ weights for {kernel.id} have imaginary parts {np.max(np.abs(c.imag)):.2e}")
    if check_aliasing:
        c2 = _cq_raw(kernel, tau, N, 2 * M)
        if np.max(np.abs(c2.real - c.real)) > 1e-8 * scale:
            raise AliasingError(f"CQ weights for {kernel.id} depend on the contour beyond 1e-8")
    return MemoryScheme(float(tau), N, c.real.copy(), "cq", kernel.id)


def pi_weights(kernel, tau, N):
    """Product-integration weights from the kernel primitive ``K``.

    The derivative at ``t_n`` is approximated by
    ``sum_{j=1}^n (v_j - v_{j-1}) (K(t_{n-j+1}) - K(t_{n-j})) / tau``, which is
    exact for piecewise linear ``v``.
    """
    _check_grid(tau, N)
    N = int(N)
    if kernel.k_primitive is None:
        raise PrimitiveUnavailable(f"{kernel.id} has no primitive")
    Kv = np.asarray(kernel.K(tau * np.arange(N + 1)), dtype=float)
    if not np.all(np.isfinite(Kv)):
        raise PrimitiveUnavailable(f"non-finite primitive values for {kernel.id}")
    a = np.diff(Kv) / tau
    w = np.empty(N + 1)
    w[0] = a[0]
    w[1:N] = a[1:] - a[:-1]
    w[N] = -a[N - 1]
    return MemoryScheme(float(tau), N, w, "pi", kernel.id, a)


def make_scheme(kernel, tau, N, backend="cq", **kw):
    """Dispatch on ``backend`` in ``{"cq", "pi"}``."""
    if backend == "cq":
        return cq_weights(kernel, tau, N, **kw)
    if backend == "pi":
        return pi_weights(kernel, tau, N)
    raise ParamOutOfRange("backend", backend, "'cq' or 'pi'")


def apply_memory(scheme, history):
    """Discrete derivative at the last time of ``history = (v_0, ..., v_n)``.

    ``history`` has shape ``(n + 1,)`` or ``(n + 1, d)``.
    """
    v = np.asarray(history, dtype=float)
    n = v.shape[0] - 1
    if n > scheme.N:
        raise HistoryTooLong(f"history of {n} steps exceeds scheme horizon N={scheme.N}")
    if n <= 0:
        return np.zeros(v.shape[1:]) if v.ndim > 1 else 0.0
    if scheme.backend == "pi":
        dv = np.diff(v, axis=0)
        a = scheme.increments[n - 1 :: -1]
        return np.tensordot(a, dv, axes=(0, 0))
    return np.tensordot(scheme.weights[n::-1], v, axes=(0, 0))


def history_sum(scheme, history, n):
    """Part of the derivative at ``t_n`` that does not involve ``v_n``.

    ``history`` holds at least ``v_0 .. v_{n-1}``; returns
    ``sum_{j>=1} w_j v_{n-j}`` in the convolution form (``v_0 = 0`` assumed
    for the product-integration backend).
    """
    if n > scheme.N:
        raise HistoryTooLong(f"step {n} exceeds scheme horizon N={scheme.N}")
    v = history[:n]
    return np.tensordot(scheme.weights[n:0:-1], v, axes=(0, 0))


def apply_full(scheme, values):
    """Discrete derivative at every grid time of a full trajectory.

    Uses one FFT convolution along the time axis.
    """
    v = np.asarray(values, dtype=float)
    n = v.shape[0] - 1
    if n > scheme.N:
        raise HistoryTooLong(f"trajectory of {n} steps exceeds scheme horizon N={scheme.N}")
    if scheme.backend == "pi":
        dv = np.diff(v, axis=0)
        a = scheme.increments[:n]
        out = np.zeros_like(v)
        if n:
            aa = a.reshape((-1,) + (1,) * (v.ndim - 1))
            out[1:] = fftconvolve(aa, dv, axes=0)[:n]
        return out
    w = scheme.weights[: n + 1].reshape((-1,) + (1,) * (v.ndim - 1))
    return fftconvolve(w, v, axes=0)[: n + 1]


def transfer_function(scheme, zeta):
    """Generating polynomial ``sum_j w_j zeta^j`` of the weights."""
    zeta = np.asarray(zeta, dtype=complex)
    return np.polynomial.polynomial.polyval(zeta, scheme.weights)
