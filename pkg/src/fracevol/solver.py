"""Implicit time stepping for ``d/dt(k * (u - u0)) + A(t, u) = f(t)``.

Two strategies are available:

* ``newton``: at each step solve ``w0 v_n + A(t_n, v_n + u0) = f_n - sum_{j>=1} w_j v_{n-j}``
  for ``v_n = u_n - u0`` by damped Newton;
* ``fixed_point``: the global iteration ``g <- C1 u_g`` where ``u_g`` solves the
  problem with the monotone operator ``A + C1 I`` and forcing ``f + g``; it
  contracts in the norm weighted by ``exp(-gamma t)`` with factor
  ``2 C1 / psi(gamma)``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ContractionViolated, NewtonDiverged, NotAttainable, ParamOutOfRange, SingularJacobian
from .kernels import conjugate_cell_integrals, psi
from .memory import MemoryScheme, history_sum, make_scheme

__all__ = [
    "NewtonOptions",
    "FixedPointOptions",
    "SolveConfig",
    "Trajectory",
    "step",
    "run",
    "choose_gamma",
    "weighted_norm",
    "weighted_fixed_point",
    "integral_form_residual",
]


@dataclass
class NewtonOptions:
    max_iter: int = 50
    abs_tol: float = 1e-12
    rel_tol: float = 1e-12
    max_halvings: int = 30
    armijo: float = 1e-4
    min_iter: int = 1

    def __post_init__(self):
        if self.min_iter < 0 or self.min_iter > self.max_iter:
            raise ParamOutOfRange("newton.min_iter", self.min_iter, "0 <= min_iter <= max_iter")
        if self.max_iter < 1 or self.abs_tol <= 0 or self.rel_tol <= 0 or self.max_halvings < 0:
            raise ParamOutOfRange("newton", vars(self), "max_iter >= 1, positive tolerances")


@dataclass
class FixedPointOptions:
    gamma: float | None = None
    max_sweeps: int = 50
    sweep_tol: float = 1e-10
    margin: float = 0.25

    def __post_init__(self):
        if self.max_sweeps < 1 or self.sweep_tol <= 0:
            raise ParamOutOfRange("fixedpoint", vars(self), "max_sweeps >= 1, sweep_tol > 0")
        if self.gamma is not None and not self.gamma > 0:
            raise ParamOutOfRange("gamma", self.gamma, "gamma > 0")


@dataclass
class SolveConfig:
    """Time grid and solver settings."""

    tau: float
    N: int
    backend: str = "cq"
    strategy: str = "newton"
    newton: NewtonOptions = field(default_factory=NewtonOptions)
    fixedpoint: FixedPointOptions = field(default_factory=FixedPointOptions)
    initial_guess: str = "previous"  # or "zero"
    integral_residual: bool = True

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ParamOutOfRange("tau", self.tau, "tau > 0")
        if int(self.N) != self.N or self.N < 1:
            raise ParamOutOfRange("N", self.N, "integer N >= 1")
        if self.strategy not in ("newton", "fixed_point"):
            raise ParamOutOfRange("strategy", self.strategy, "'newton' or 'fixed_point'")
        if self.initial_guess not in ("previous", "zero"):
            raise ParamOutOfRange("initial_guess", self.initial_guess, "'previous' or 'zero'")

    @property
    def T(self):
        return self.tau * self.N


@dataclass
class Trajectory:
    """States ``u_0..u_N`` on the uniform grid ``times`` with diagnostics."""

    times: np.ndarray
    states: np.ndarray
    residuals: np.ndarray
    iterations: np.ndarray
    memory_seconds: np.ndarray
    norm_H: np.ndarray
    norm_V: np.ndarray
    memory_ops: int = 0
    integral_residual: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def final(self):
        return self.states[-1]

    def diagnostics(self):
        return {
            "max_residual": float(np.max(self.residuals)) if self.residuals.size else 0.0,
            "total_newton_iterations": int(np.sum(self.iterations)),
            "memory_seconds": float(np.sum(self.memory_seconds)),
            "memory_ops": int(self.memory_ops),
            "integral_residual": self.integral_residual,
            "final_norm_H": float(self.norm_H[-1]),
            "final_norm_V": float(self.norm_V[-1]),
            **self.info,
        }

    def to_csv(self, path):
        d = self.states.shape[1]
        header = ",".join(["t"] + [f"u_{i + 1}" for i in range(d)])
        np.savetxt(path, np.column_stack([self.times, self.states]), delimiter=",", header=header, comments="", fmt="%.17g")


def _solve_linear(J, r, step_index):
    try:
        if sp.issparse(J):
            if J.shape[0] == 1 or _is_diagonal(J):
                d = J.diagonal()
                if np.any(d == 0) or not np.all(np.isfinite(d)):
                    raise SingularJacobian("zero pivot in diagonal Jacobian; consider raising eps_reg", step_index)
                return r / d
            with np.errstate(all="raise"):
                x = spla.spsolve(J.tocsc(), r)
        else:
            x = np.linalg.solve(J, r)
    except (np.linalg.LinAlgError, RuntimeError, FloatingPointError) as exc:
        raise SingularJacobian(f"Jacobian solve failed ({exc}); consider raising eps_reg", step_index) from exc
    if not np.all(np.isfinite(x)):
        raise SingularJacobian("singular Jacobian; consider raising eps_reg", step_index)
    return x


def _is_diagonal(J):
    J = J.tocoo()
    return bool(np.all(J.row == J.col))


def step(scheme, op, history, t_n, f_n, cfg, u0=None, guess=None, step_index=None):
    """Solve one implicit step and return ``u_n``.

    ``history`` holds ``u_0 .. u_{n-1}`` (shape ``(n, d)``); ``u0`` defaults
    to ``history[0]``. Returns ``(u_n, residual, iterations)`` where the
    residual is the H norm of the step equation divided by ``w0``.

    Raises
    ------
    NewtonDiverged
        With the best iterate attached, if the tolerance is not met.
    SingularJacobian
        If the Newton matrix cannot be factorised.
    """
    hist = np.asarray(history, dtype=float)
    n = hist.shape[0]
    u0 = hist[0] if u0 is None else np.asarray(u0, dtype=float)
    v_hist = hist - u0
    rhs = np.asarray(f_n, dtype=float) - history_sum(scheme, v_hist, n)
    v_guess = (hist[-1] - u0) if guess is None else np.asarray(guess, dtype=float) - u0
    v, res, it = _newton(scheme.w0, op, t_n, u0, rhs, v_guess, cfg.newton, n)
    return v + u0, res, it


def _newton(w0, op, t, u0, rhs, v, opts, step_index):
    eye = sp.identity(v.size, format="csr")

    def residual(vv):
        return w0 * vv + op.apply(t, vv + u0) - rhs

    R = residual(v)
    nR = op.norm_H(R)
    target = max(opts.abs_tol, opts.rel_tol * op.norm_H(rhs)) * w0
    best_v, best_n = v.copy(), nR
    for it in range(opts.max_iter + 1):
        # at least min_iter corrections, so small solutions are not frozen at abs_tol
        if nR <= target and (it >= opts.min_iter or nR == 0.0):
            return v, nR / w0, it
        if it == opts.max_iter:
            break
        J = w0 * eye + _as_sparse(op.jacobian(t, v + u0))
        dv = _solve_linear(J, -R, step_index)
        lam = 1.0
        for _ in range(opts.max_halvings + 1):
            v_try = v + lam * dv
            R_try = residual(v_try)
            n_try = op.norm_H(R_try)
            if np.isfinite(n_try) and n_try <= (1.0 - opts.armijo * lam) * nR:
                break
            lam *= 0.5
        else:
            if nR <= 10.0 * target:
                # stagnation at roundoff level
                return v, nR / w0, it
            raise NewtonDiverged(f"line search failed at step {step_index}", best_v + u0, best_n / w0, step_index)
        v, R, nR = v_try, R_try, n_try
        if nR < best_n:
            best_v, best_n = v.copy(), nR
    raise NewtonDiverged(
        f"Newton did not converge in {opts.max_iter} iterations at step {step_index} (residual {nR / w0:.3e})",
        best_v + u0,
        best_n / w0,
        step_index,
    )


def _as_sparse(J):
    return J if sp.issparse(J) else sp.csr_matrix(np.atleast_2d(J))


def _forcing_fn(forcing, d):
    if forcing is None:
        return lambda t: np.zeros(d)
    if callable(forcing):
        return lambda t: np.broadcast_to(np.asarray(forcing(t), dtype=float), (d,)).copy()
    arr = np.asarray(forcing, dtype=float)
    return lambda t: np.broadcast_to(arr, (d,)).copy()


def run(kernel, op, u0, forcing, cfg, scheme=None):
    """Integrate from ``u0`` over ``N`` steps of size ``tau``.

    ``forcing`` is ``None``, a constant (scalar or vector) or a callable of
    time. A prebuilt ``scheme`` may be passed to reuse weights.

    The returned trajectory records per-step residuals and Newton counts,
    the wall time spent in memory sums, the number of state-vector
    multiply-adds in those sums and, if requested, the residual of the
    integral form ``u = u0 + k_tilde * (f - A(u))`` on the grid.
    """
    if cfg.strategy == "fixed_point":
        traj, _ = weighted_fixed_point(kernel, op, u0, forcing, cfg, scheme=scheme)
        return traj
    u0 = np.atleast_1d(np.asarray(u0, dtype=float)).copy()
    d = u0.size
    if scheme is None:
        scheme = make_scheme(kernel, cfg.tau, cfg.N, cfg.backend)
    _check_scheme(scheme, cfg)
    f = _forcing_fn(forcing, d)
    N = cfg.N
    times = cfg.tau * np.arange(N + 1)
    V = np.zeros((N + 1, d))
    res = np.zeros(N + 1)
    iters = np.zeros(N + 1, dtype=int)
    mem_t = np.zeros(N + 1)
    ops = 0
    for n in range(1, N + 1):
        t0 = time.perf_counter()
        hist = history_sum(scheme, V, n)
        mem_t[n] = time.perf_counter() - t0
        ops += n
        rhs = f(times[n]) - hist
        guess = V[n - 1] if cfg.initial_guess == "previous" else -u0
        try:
            V[n], res[n], iters[n] = _newton(scheme.w0, op, times[n], u0, rhs, guess.copy(), cfg.newton, n)
        except NewtonDiverged as exc:
            exc.step_index = n
            raise
        except SingularJacobian as exc:
            exc.step_index = n
            raise
    U = V + u0
    traj = Trajectory(
        times,
        U,
        res,
        iters,
        mem_t,
        np.array([op.norm_H(u) for u in U]),
        np.array([op.norm_V(u) for u in U]),
        ops,
        info={"backend": scheme.backend, "tau": cfg.tau, "N": N, "kernel": kernel.id, "operator": op.name},
    )
    if cfg.integral_residual:
        try:
            traj.integral_residual = integral_form_residual(kernel, op, traj, f)
        except Exception as exc:  # noqa: BLE001 - diagnostic only
            traj.info["integral_residual_error"] = str(exc)
    return traj


def _check_scheme(scheme, cfg):
    if not isinstance(scheme, MemoryScheme) or scheme.N < cfg.N or abs(scheme.tau - cfg.tau) > 1e-14 * cfg.tau:
        raise ParamOutOfRange("scheme", getattr(scheme, "N", None), f"scheme with tau={cfg.tau} and N>={cfg.N}")
    if not scheme.w0 > 0:
        raise ParamOutOfRange("w0", scheme.w0, "w0 > 0")


def integral_form_residual(kernel, op, traj, forcing=None):
    """Max H-norm of ``u_n - u0 - sum_j c_{n-j+1} (f - A(u))_j`` over the grid.

    ``c_m`` are the exact cell integrals of the conjugate kernel on
    ``((m-1) tau, m tau]``; ``f - A(u)`` is taken at right endpoints, the
    consistency order of this check is one.
    """
    U = traj.states
    N = U.shape[0] - 1
    tau = traj.times[1] - traj.times[0]
    c = conjugate_cell_integrals(kernel, tau, N)
    f = forcing if forcing is not None else (lambda t: np.zeros(U.shape[1]))
    g = np.array([f(t) - op.apply(t, u) for t, u in zip(traj.times, U)])
    from scipy.signal import fftconvolve

    conv = fftconvolve(c[:, None], g[1:], axes=0)[:N]
    R = U[1:] - U[0] - conv
    return float(max(op.norm_H(r) for r in R))


def choose_gamma(kernel, C1, margin=0.25, max_exponent=40):
    """Smallest ``gamma`` (to bisection accuracy) with ``psi(gamma) >= 2 C1 (1 + margin)``.

    Returns 1 when ``C1 = 0``.

    Raises
    ------
    NotAttainable
        When ``psi(2**max_exponent)`` is still below the target; carries the
        largest symbol value seen as ``sup_estimate``.
    """
    if C1 < 0:
        raise ParamOutOfRange("C1", C1, "C1 >= 0")
    if C1 == 0:
        return 1.0
    target = 2.0 * C1 * (1.0 + margin)
    sym = lambda g: float(np.real(psi(kernel, g)))  # noqa: E731
    hi = 1.0
    if sym(hi) >= target:
        lo = hi
        while sym(lo) >= target and lo > 2.0**-max_exponent:
            lo *= 0.5
        if sym(lo) >= target:
            return lo
    else:
        lo = hi
        while sym(hi) < target:
            lo = hi
            hi *= 2.0
            if hi > 2.0**max_exponent:
                raise NotAttainable(f"psi(2^{max_exponent}) = {sym(2.0**max_exponent):.6g} < {target:.6g}", sym(2.0**max_exponent))
    # invariant: sym(lo) < target <= sym(hi)
    if lo == hi:
        lo = hi * 0.5
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if sym(mid) >= target:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-14 * hi:
            break
    return hi


def weighted_norm(op, values, times, gamma):
    """``(sum_n |x_n|_H^2 exp(-gamma t_n) tau)^(1/2)``."""
    tau = times[1] - times[0]
    sq = np.array([op.inner(x, x) for x in values])
    return float(np.sqrt(np.sum(sq * np.exp(-gamma * times)) * tau))


def weighted_fixed_point(kernel, op, u0, forcing, cfg, scheme=None, stall_sweeps=3):
    """Global weighted fixed-point iteration ``g <- C1 u_g``.

    Returns ``(trajectory, rho_hat)`` where ``rho_hat`` is the largest ratio
    of successive weighted increments over the sweeps after the first.

    Raises
    ------
    ContractionViolated
        If the measured ratio exceeds ``2 C1 / psi(gamma) + 0.1`` for
        ``stall_sweeps`` consecutive sweeps.
    """
    fp = cfg.fixedpoint
    C1 = op.C1
    u0 = np.atleast_1d(np.asarray(u0, dtype=float)).copy()
    d = u0.size
    if scheme is None:
        scheme = make_scheme(kernel, cfg.tau, cfg.N, cfg.backend)
    gamma = fp.gamma if fp.gamma is not None else choose_gamma(kernel, C1, fp.margin)
    bound_factor = 2.0 * C1 / float(np.real(psi(kernel, gamma))) if C1 > 0 else 0.0
    if C1 > 0 and bound_factor >= 1.0:
        raise ParamOutOfRange("gamma", gamma, "psi(gamma) > 2 C1")
    inner_op = op.shifted(C1)
    f = _forcing_fn(forcing, d)
    times = cfg.tau * np.arange(cfg.N + 1)
    inner_cfg = SolveConfig(cfg.tau, cfg.N, cfg.backend, "newton", cfg.newton, fp, cfg.initial_guess, False)

    g = np.zeros((cfg.N + 1, d))
    increments, ratios = [], []
    over = 0
    traj = None
    for sweep in range(fp.max_sweeps):
        gg = g
        traj = run(kernel, inner_op, u0, lambda t, gg=gg: f(t) + gg[int(round(t / cfg.tau))], inner_cfg, scheme=scheme)
        g_new = C1 * traj.states
        inc = weighted_norm(op, g_new - g, times, gamma)
        increments.append(inc)
        g = g_new
        if len(increments) >= 2 and increments[-2] > 0:
            ratios.append(increments[-1] / increments[-2])
            if ratios[-1] > bound_factor + 0.1 and increments[-1] > 10.0 * fp.sweep_tol:
                over += 1
                if over >= stall_sweeps:
                    raise ContractionViolated(
                        f"measured contraction {ratios[-1]:.3f} exceeds {bound_factor + 0.1:.3f} for {stall_sweeps} sweeps"
                    )
            else:
                over = 0
        if inc < fp.sweep_tol or C1 == 0:
            break
    # ratios at roundoff level carry no information
    meaningful = [r for r, a in zip(ratios, increments[1:]) if a > 100.0 * fp.sweep_tol * 1e-3]
    rho_hat = float(max(meaningful)) if meaningful else 0.0
    traj.info.update(
        {
            "strategy": "fixed_point",
            "gamma": gamma,
            "contraction_bound": bound_factor,
            "rho_hat": rho_hat,
            "sweeps": len(increments),
            "increments": increments,
        }
    )
    if cfg.integral_residual:
        try:
            traj.integral_residual = integral_form_residual(kernel, op, traj, f)
        except Exception as exc:  # noqa: BLE001 - diagnostic only
            traj.info["integral_residual_error"] = str(exc)
    return traj, rho_hat
