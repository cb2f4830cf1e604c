"""Additive noise driven through a memory kernel.

The stochastic convolution is ``F(t) = int_0^t kappa(t - s) B(s) dW(s)`` with
the effective kernel ``kappa = k1_tilde * k2``. The noisy equation is solved
pathwise through the shift ``X = u + F``, where ``u`` solves the deterministic
problem with the operator ``A(t, u + F(t))``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy import special
from scipy.signal import fftconvolve

from .errors import FracEvolError, NotSquareIntegrable, ParamOutOfRange
from .kernels import conjugate_cell_integrals
from .operators import OperatorModel
from .quadrature import convolution_at, gauss_legendre_01
from .solver import SolveConfig, run

__all__ = [
    "EffectiveKernel",
    "NoiseModel",
    "Ensemble",
    "effective_kernel",
    "make_noise_model",
    "path_generator",
    "sample_noise_path",
    "sample_noise_paths",
    "noise_variance",
    "solve_spde",
    "compensated_sum",
]


@dataclass(frozen=True)
class EffectiveKernel:
    """Cell data of ``kappa`` on a uniform grid.

    ``cell_integrals[m] = int_{m tau}^{(m+1) tau} kappa``; ``values`` are the
    point values at ``t_1..t_N`` for closed forms and cell averages otherwise.
    """

    tau: float
    N: int
    cell_integrals: np.ndarray
    values: np.ndarray
    method: str

    @property
    def cell_averages(self):
        return self.cell_integrals / self.tau


def _caputo_pair(beta1, beta2, tau, N):
    order = beta1 - beta2
    if order <= -0.5:
        raise NotSquareIntegrable(f"kappa(t) ~ t^{order:.3g} is not square integrable near 0 (needs {beta2} < {beta1} + 1/2)")
    t = tau * np.arange(N + 1)
    prim = t ** (order + 1.0) / special.gamma(order + 2.0)
    vals = t[1:] ** order / special.gamma(order + 1.0)
    return EffectiveKernel(tau, N, np.diff(prim), vals, "closed_form")


def effective_kernel(k1, k2, tau, N, check_l2=True):
    """``kappa = k1_tilde * k2`` on ``N`` cells of width ``tau``.

    Identical kernels give ``kappa = 1``. Two Caputo kernels of orders
    ``b1``, ``b2`` give ``t^(b1-b2) / Gamma(1 + b1 - b2)``. Otherwise the
    conjugate cell integrals of ``k1`` are convolved with cell averages of
    the primitive of ``k2``.

    Raises
    ------
    NotSquareIntegrable
        If ``kappa`` is not square integrable near 0.
    """
    if not tau > 0 or N < 1:
        raise ParamOutOfRange("grid", (tau, N), "tau > 0, N >= 1")
    if k1.same_as(k2):
        return EffectiveKernel(tau, N, np.full(N, tau), np.ones(N), "identity")
    if k1.family == "caputo" and k2.family == "caputo":
        return _caputo_pair(k1.params["beta"], k2.params["beta"], tau, N)
    ki = _numeric_cells(k1, k2, tau, N)
    if check_l2:
        # kappa ~ t^-a near 0 with a >= 1/2 makes the first-cell mass of
        # kappa^2 stop shrinking as the grid is refined
        coarse = _numeric_cells(k1, k2, tau, 2)
        fine = _numeric_cells(k1, k2, tau / 8.0, 2)
        m_coarse = coarse[0] ** 2 / tau
        m_fine = fine[0] ** 2 / (tau / 8.0)
        if not np.isfinite(m_fine) or m_fine >= 0.999 * m_coarse:
            raise NotSquareIntegrable(f"kappa for ({k1.id}, {k2.id}) is not square integrable near 0")
    return EffectiveKernel(tau, N, ki, ki / tau, "numeric")


def _numeric_cells(k1, k2, tau, N):
    if k1.has_closed_conjugate and k1.k_tilde_primitive is not None and k1.family != "classical":
        # primitive of kappa at grid points by singular-aware quadrature
        t = tau * np.arange(1, N + 1)
        P = convolution_at(k1.k_tilde_eval, k2.k_primitive, t, A=k1.k_tilde_primitive, breaks_b=k2.breakpoints)
        return np.diff(np.concatenate([[0.0], P]))
    # piecewise-constant conjugate from the Volterra solve; first order, with
    # the error concentrated in the first cells
    c = conjugate_cell_integrals(k1, tau, N)
    x, w = gauss_legendre_01(16)
    t = tau * (np.arange(N)[:, None] + x[None, :])
    K2_avg = np.asarray(k2.K(t.ravel()), dtype=float).reshape(t.shape) @ w
    # primitive of kappa at t_n: sum_m c_m * average of K2 over cell n - m
    P = np.concatenate([[0.0], fftconvolve(c, K2_avg)[:N]])
    return np.diff(P)


def _as_B_fn(B, d_state, d_noise):
    if callable(B):
        return B
    arr = np.asarray(B, dtype=float)
    if arr.ndim == 0:
        if d_state != d_noise:
            raise ParamOutOfRange("B", float(arr), "scalar B needs d_state == d_noise")
        mat = float(arr) * np.eye(d_state)
    else:
        mat = arr.reshape(d_state, d_noise)
    return lambda t: mat


@dataclass
class NoiseModel:
    """Kernel pair, diffusion map ``B(t)`` (``d_state x d_noise``) and RNG policy."""

    k1: object
    k2: object
    B: Callable
    d_state: int
    d_noise: int
    seed: int = 0
    constant_B: Optional[np.ndarray] = field(default=None, repr=False)

    def B_at(self, t):
        return np.asarray(self.B(t), dtype=float).reshape(self.d_state, self.d_noise)


def make_noise_model(k1, k2, B, d_state=1, d_noise=None, seed=0):
    """Build a :class:`NoiseModel`; ``B`` is a number, a matrix or a callable of time."""
    d_noise = d_state if d_noise is None else int(d_noise)
    if seed < 0:
        raise ParamOutOfRange("seed", seed, "seed >= 0")
    fn = _as_B_fn(B, d_state, d_noise)
    const = None if callable(B) else np.asarray(fn(0.0), dtype=float).reshape(d_state, d_noise)
    return NoiseModel(k1, k2, fn, int(d_state), d_noise, int(seed), const)


def path_generator(seed, path_id):
    """Counter-based generator keyed by ``(seed, path_id)``.

    Draws are consumed in time order so step ``j`` of a path does not depend
    on the horizon.
    """
    if path_id < 0:
        raise ParamOutOfRange("path_id", path_id, "path_id >= 0")
    return np.random.Generator(np.random.Philox(key=[int(path_id), int(seed)]))


def _increments(model, tau, N, path_ids):
    xi = np.empty((len(path_ids), N, model.d_noise))
    for i, pid in enumerate(path_ids):
        xi[i] = path_generator(model.seed, pid).standard_normal((N, model.d_noise))
    t = tau * np.arange(N)
    if model.constant_B is not None:
        Y = xi @ model.constant_B.T
    else:
        Bs = np.stack([model.B_at(tj) for tj in t])  # (N, d_state, d_noise)
        Y = np.einsum("jsn,pjn->pjs", Bs, xi)
    return Y * math.sqrt(tau)


def sample_noise_paths(model, tau, N, path_ids, kappa=None):
    """Stochastic convolution samples ``F_0..F_N`` for several paths.

    ``F_n = sum_{j<n} kbar_{n-1-j} B(t_j) xi_j sqrt(tau)`` with ``kbar`` the
    cell averages of ``kappa`` and left-point ``B``. Returns an array of
    shape ``(len(path_ids), N + 1, d_state)``.
    """
    if kappa is None:
        kappa = effective_kernel(model.k1, model.k2, tau, N)
    Y = _increments(model, tau, N, list(path_ids))
    F = np.zeros((Y.shape[0], N + 1, model.d_state))
    if kappa.method == "identity":
        F[:, 1:] = np.cumsum(Y, axis=1)
    else:
        kb = kappa.cell_averages[:N][None, :, None]
        F[:, 1:] = fftconvolve(kb, Y, axes=1)[:, :N]
    return F


def sample_noise_path(model, tau, N, path_id, kappa=None):
    """Single-path version of :func:`sample_noise_paths`, shape ``(N + 1, d_state)``."""
    return sample_noise_paths(model, tau, N, [path_id], kappa)[0]


def noise_variance(model, tau, N, kappa=None):
    """Exact variance of the sampled ``F_n``: ``tau sum_j kbar_{n-1-j}^2 |B(t_j)|_HS^2``.

    Returns an array of shape ``(N + 1, d_state)`` (componentwise variance).
    """
    if kappa is None:
        kappa = effective_kernel(model.k1, model.k2, tau, N)
    t = tau * np.arange(N)
    rows = np.stack([np.sum(model.B_at(tj) ** 2, axis=1) for tj in t])  # (N, d_state)
    kb2 = kappa.cell_averages[:N] ** 2
    out = np.zeros((N + 1, model.d_state))
    out[1:] = tau * fftconvolve(kb2[:, None], rows, axes=0)[:N]
    return out


def compensated_sum(arrays):
    """Neumaier-compensated sum of a sequence of equally shaped arrays."""
    total = None
    comp = None
    for a in arrays:
        a = np.asarray(a, dtype=float)
        if total is None:
            total = a.copy()
            comp = np.zeros_like(total)
            continue
        t = total + a
        big = np.abs(total) >= np.abs(a)
        comp += np.where(big, (total - t) + a, (a - t) + total)
        total = t
    return total + comp


@dataclass
class Ensemble:
    times: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    se: np.ndarray
    n_paths: int
    paths: Optional[np.ndarray] = None
    noise: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    def to_csv(self, path):
        d = self.mean.shape[1]
        cols = ["t"] + [f"mean_{i + 1}" for i in range(d)] + [f"var_{i + 1}" for i in range(d)] + [f"se_{i + 1}" for i in range(d)]
        np.savetxt(path, np.column_stack([self.times, self.mean, self.var, self.se]), delimiter=",", header=",".join(cols), comments="", fmt="%.17g")


def _stacked(op, P, F):
    """Operator ``u -> A(t, u + F(t))`` acting on ``P`` stacked states."""
    d = op.size
    tau_grid = {"tau": None}

    def idx(t):
        return int(round(t / tau_grid["tau"]))

    def apply(t, u):
        shift = F[:, idx(t)].reshape(-1)
        x = u + shift
        if op.pointwise:
            return op.apply(t, x)
        return np.concatenate([op.apply(t, xi) for xi in x.reshape(P, d)])

    def jac(t, u):
        shift = F[:, idx(t)].reshape(-1)
        x = u + shift
        if op.pointwise:
            return op.jacobian(t, x)
        return sp.block_diag([op.jacobian(t, xi) for xi in x.reshape(P, d)], format="csr")

    def norm(x):
        # largest per-path norm, so tolerances do not depend on the path count
        if op.pointwise and op.norm_fn is None:
            return float(np.sqrt(op.weight * np.max(np.sum(x.reshape(P, d) ** 2, axis=1))))
        return max(op.norm_H(xi) for xi in x.reshape(P, d))

    stacked = OperatorModel(
        f"{op.name}[shifted x{P}]", apply, jac, dict(op.constants), P * d, "l2", op.weight, None, None, None, op.pointwise, dict(op.params), norm
    )
    return stacked, tau_grid


def _solve_batch(k1, op, x0, forcing, inner_cfg, F, ids):
    n_paths = F.shape[0]
    tau, N = inner_cfg.tau, inner_cfg.N
    stacked, tau_grid = _stacked(op, n_paths, F)
    tau_grid["tau"] = tau
    if forcing is None:
        f_stacked = None
    elif callable(forcing):
        f_stacked = lambda t: np.tile(np.broadcast_to(np.asarray(forcing(t), dtype=float), (op.size,)), n_paths)  # noqa: E731
    else:
        f_stacked = np.tile(np.broadcast_to(np.asarray(forcing, dtype=float), (op.size,)), n_paths)
    try:
        traj = run(k1, stacked, np.tile(x0, n_paths), f_stacked, inner_cfg)
    except FracEvolError as exc:
        exc.path_ids = list(ids)
        raise
    U = traj.states.reshape(N + 1, n_paths, op.size).transpose(1, 0, 2)
    return U + F, float(np.max(traj.residuals))


def solve_spde(k1, noise, op, x0, cfg, n_paths, forcing=None, first_path=0, keep_paths=False, max_keep=1_000_000, batch_size=2048, threads=1):
    """Pathwise solution of the noisy equation with ensemble statistics.

    Paths are grouped in fixed batches of ``batch_size``; each batch is
    stepped as one block-diagonal system and ``threads`` batches run
    concurrently. Each path uses its own counter-based noise stream and the
    batch layout does not depend on ``threads``, so results are reproducible
    for any thread count. When the noise vanishes identically every path
    equals the deterministic solution, which is computed once.

    Errors raised by the solver are re-raised with the offending path ids
    attached as ``exc.path_ids``.
    """
    if n_paths < 1:
        raise ParamOutOfRange("n_paths", n_paths, "n_paths >= 1")
    if batch_size < 1 or threads < 1:
        raise ParamOutOfRange("batch_size/threads", (batch_size, threads), ">= 1")
    if noise.d_state != op.size:
        raise ParamOutOfRange("B", noise.d_state, f"d_state equal to operator size {op.size}")
    tau, N = cfg.tau, cfg.N
    kappa = effective_kernel(noise.k1, noise.k2, tau, N)
    ids = list(range(first_path, first_path + n_paths))
    F = sample_noise_paths(noise, tau, N, ids, kappa)  # (P, N+1, d)
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (op.size,)).copy()
    inner_cfg = SolveConfig(tau, N, cfg.backend, "newton", cfg.newton, cfg.fixedpoint, cfg.initial_guess, False)
    if not np.any(F):
        try:
            traj = run(k1, op, x0, forcing, inner_cfg)
        except FracEvolError as exc:
            exc.path_ids = ids
            raise
        X = np.broadcast_to(traj.states, (n_paths,) + traj.states.shape).copy()
        max_res = float(np.max(traj.residuals))
    else:
        starts = range(0, n_paths, batch_size)
        jobs = [(F[s : s + batch_size], ids[s : s + batch_size]) for s in starts]
        if threads > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(lambda jb: _solve_batch(k1, op, x0, forcing, inner_cfg, *jb), jobs))
        else:
            results = [_solve_batch(k1, op, x0, forcing, inner_cfg, *jb) for jb in jobs]
        X = np.concatenate([r[0] for r in results])
        max_res = max(r[1] for r in results)
    if not np.any(F):
        mean, var = traj.states.copy(), np.zeros_like(traj.states)
    else:
        mean = compensated_sum(X) / n_paths
        var = compensated_sum((X - mean) ** 2) / max(n_paths - 1, 1)
    se = np.sqrt(var / n_paths)
    keep = keep_paths and X.size <= max_keep
    times = tau * np.arange(N + 1)
    info = {"kappa_method": kappa.method, "seed": noise.seed, "max_step_residual": max_res, "batch_size": batch_size}
    return Ensemble(times, mean, var, se, n_paths, X if keep else None, F if keep else None, info)
