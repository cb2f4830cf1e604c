"""Numerical certificates for the structural identities of the memory calculus.

* strong dissipativity: ``int <D u, u> e^{-gamma s} ds >= psi(gamma)/2 int |u|^2 e^{-gamma s} ds``
  with ``D u = d/dt (k * u)``;
* subordination: for ``psi(lam) = sqrt(lam)`` the measures with Laplace
  transform ``exp(-t psi)`` have the density ``t exp(-t^2/(4s)) / (2 sqrt(pi) s^1.5)``
  and the shift semigroup they generate contracts the weighted norm by
  ``exp(-psi(gamma) t)``;
* Fourier symbol: the transform of ``D u`` is ``psi(-i r)`` times that of ``u``;
* power-law relaxation for the Caputo kernel.

Every check returns a record with the JSON schema
``{check, kernel, params, lhs, rhs, margin, tol, pass}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import ParamOutOfRange, ResolutionInsufficient, TailNotNegligible, UnsupportedKernel
from .kernels import psi, sonine_conjugate
from .memory import apply_full, cq_weights, make_scheme
from .operators import relaxation_operator
from .solver import SolveConfig, run

__all__ = [
    "TEST_PATHS",
    "CheckRecord",
    "DissipativityReport",
    "check_dissipativity",
    "extrapolated_margin",
    "dissipativity_suite",
    "subordination_density",
    "check_subordination_normalization",
    "check_subordination_laplace",
    "check_weighted_contraction",
    "bump_path",
    "check_fourier_symbol",
    "check_relaxation_decay",
    "check_sonine",
]


def _te(t):
    return t * np.exp(-t)


def _t2e(t):
    return t * t * np.exp(-t)


def _sine(t):
    return np.sin(t) * np.exp(-t)


TEST_PATHS = {"t_exp": _te, "t2_exp": _t2e, "sin_exp": _sine}


@dataclass
class CheckRecord:
    check: str
    kernel: str
    params: dict
    lhs: float
    rhs: float
    margin: float
    tol: float
    passed: bool
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {
            "check": self.check,
            "kernel": self.kernel,
            "params": self.params,
            "lhs": _jsonable(self.lhs),
            "rhs": _jsonable(self.rhs),
            "margin": _jsonable(self.margin),
            "tol": _jsonable(self.tol),
            "pass": bool(self.passed),
        }
        if self.extra:
            d["extra"] = {k: _jsonable(v) for k, v in self.extra.items()}
        return d


def _jsonable(x):
    if isinstance(x, complex) or np.iscomplexobj(x):
        return [float(np.real(x)), float(np.imag(x))]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


# --------------------------------------------------------------------------
# dissipativity


@dataclass
class DissipativityReport:
    """Both sides of the weighted dissipativity inequality on a grid.

    ``lhs`` pairs the CQ derivative with the path by the right-endpoint rule.
    For CQ weights of a Bernstein symbol the discrete sum obeys
    ``lhs >= psi((1 - exp(-gamma tau/2))/tau) * S`` with ``S = tau sum u_n^2 e^{-gamma t_n}``,
    so ``tol_discrete = max(psi(gamma)/2 - psi((1 - exp(-gamma tau/2))/tau), 0) * S``
    bounds any negative margin caused by the discretisation.
    """

    kernel: str
    gamma: float
    path: str
    lhs: float
    rhs: float
    margin: float
    tol_discrete: float
    tail_bound: float
    tau: float
    backend: str
    T_cut: float

    @property
    def passed(self):
        return bool(self.margin >= -self.tol_discrete - 1e-13 * max(abs(self.lhs), abs(self.rhs), 1e-300))

    def to_dict(self):
        return CheckRecord(
            "dissipativity",
            self.kernel,
            {"gamma": self.gamma, "path": self.path, "tau": self.tau, "backend": self.backend, "T_cut": self.T_cut},
            self.lhs,
            self.rhs,
            self.margin,
            self.tol_discrete,
            self.passed,
            {"tail_bound": self.tail_bound},
        ).to_dict()


def _resolve_path(path):
    if callable(path):
        return getattr(path, "__name__", "custom"), path
    if path in TEST_PATHS:
        return path, TEST_PATHS[path]
    raise ParamOutOfRange("path", path, f"callable or one of {sorted(TEST_PATHS)}")


def check_dissipativity(kernel, gamma, path="t_exp", tau=0.005, T_cut=30.0, backend="cq", scheme=None):
    """Weighted dissipativity of the discrete derivative along a test path.

    Raises
    ------
    ParamOutOfRange
        If ``gamma <= 0``.
    TailNotNegligible
        If the truncation at ``T_cut`` may change the sides by more than 1 %
        of ``rhs``.
    """
    if not gamma > 0:
        raise ParamOutOfRange("gamma", gamma, "gamma > 0")
    name, u = _resolve_path(path)
    N = int(round(T_cut / tau))
    t = tau * np.arange(N + 1)
    v = np.asarray(u(t), dtype=float)
    if abs(v[0]) > 1e-14:
        raise ParamOutOfRange("path", name, "u(0) = 0")
    if scheme is None:
        scheme = make_scheme(kernel, tau, N, backend)
    D = apply_full(scheme, v)
    w = np.exp(-gamma * t)
    S = tau * np.sum(v * v * w)
    p = float(np.real(psi(kernel, gamma)))
    lhs = float(tau * np.sum(D * v * w))
    rhs = 0.5 * p * S
    p_disc = float(np.real(psi(kernel, -math.expm1(-gamma * tau / 2.0) / tau)))
    tol = max(0.5 * p - p_disc, 0.0) * S
    sq_tail = integrate.quad(lambda s: float(u(s)) ** 2 * math.exp(-gamma * s), T_cut, np.inf, limit=200)[0]
    abs_tail = integrate.quad(lambda s: abs(float(u(s))) * math.exp(-gamma * s), T_cut, np.inf, limit=200)[0]
    tail = 0.5 * p * sq_tail + float(np.max(np.abs(D))) * abs_tail
    if tail > 0.01 * rhs and rhs > 0:
        raise TailNotNegligible(f"tail bound {tail:.3e} exceeds 1% of rhs {rhs:.3e}; increase T_cut")
    return DissipativityReport(kernel.id, float(gamma), name, lhs, rhs, lhs - rhs, tol, tail, float(tau), scheme.backend, float(T_cut))


def extrapolated_margin(kernel, gamma, path="t_exp", tau=0.0025, T_cut=30.0):
    """Richardson extrapolation ``2 m(tau/2) - m(tau)`` of the first-order margin."""
    coarse = check_dissipativity(kernel, gamma, path, tau, T_cut)
    fine = check_dissipativity(kernel, gamma, path, tau / 2.0, T_cut)
    return 2.0 * fine.margin - coarse.margin


def dissipativity_suite(kernels, gammas=(0.5, 1.0, 5.0), paths=tuple(TEST_PATHS), taus=(0.01, 0.005, 0.0025), T_cut=30.0):
    """Reports for every (kernel, gamma, path, tau); weights are reused across gamma and paths.

    Returns ``(reports, summary)``. ``summary`` holds, per refinement level,
    the smallest margin over all tuples, whether it is non-decreasing, whether
    its negative part is non-increasing, whether every tuple passed, and per
    tuple whether the margins move monotonically.
    """
    reports = []
    by_tuple = {}
    for kernel in kernels:
        for tau in taus:
            N = int(round(T_cut / tau))
            scheme = cq_weights(kernel, tau, N, check_aliasing=False)
            for g in gammas:
                for pth in paths:
                    rep = check_dissipativity(kernel, g, pth, tau, T_cut, scheme=scheme)
                    reports.append(rep)
                    by_tuple.setdefault((kernel.id, g, rep.path), []).append(rep.margin)
    worst = [min(r.margin for r in reports if r.tau == tau) for tau in taus]
    monotone = {}
    nondecreasing = {}
    for key, ms in by_tuple.items():
        d = np.diff(ms)
        monotone[key] = bool(np.all(d >= 0) or np.all(d <= 0))
        nondecreasing[key] = bool(np.all(d >= 0))
    summary = {
        "all_pass": all(r.passed for r in reports),
        "worst_margin_per_tau": worst,
        "worst_margin_nondecreasing": bool(np.all(np.diff(worst) >= 0)),
        # shortfall below zero; positive margins may shrink toward a positive limit
        "worst_deficit_nonincreasing": bool(np.all(np.diff(np.maximum(-np.array(worst), 0.0)) <= 0)),
        "tuples_monotone": monotone,
        "tuples_nondecreasing": nondecreasing,
    }
    return reports, summary


# --------------------------------------------------------------------------
# subordination for psi(lam) = sqrt(lam)


def _require_half(kernel):
    if not (kernel.family == "caputo" and abs(kernel.params.get("beta", 0) - 0.5) < 1e-15):
        raise UnsupportedKernel(f"subordination density implemented for caputo(beta=0.5) only, got {kernel.id}")


def subordination_density(t, s):
    """Density of the subordinator law at time ``t`` for ``psi(lam) = sqrt(lam)``."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    sp_ = s[pos]
    out[pos] = t * np.exp(-t * t / (4.0 * sp_)) / (2.0 * math.sqrt(math.pi) * sp_**1.5)
    return out if out.ndim else float(out)


def _density_integral(t, weight):
    # integrate in log s; the density peaks near s = t^2/6
    f = lambda y: float(subordination_density(t, math.exp(y))) * weight(math.exp(y)) * math.exp(y)  # noqa: E731
    c = math.log(t * t / 6.0)
    pts = [c - 40.0, c - 5.0, c, c + 5.0, c + 60.0]
    total = 0.0
    for lo, hi in zip(pts, pts[1:]):
        total += integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-13, limit=400)[0]
    # tail beyond exp(c + 60): density ~ t s^-1.5/(2 sqrt(pi)), integrated exactly
    s_hi = math.exp(pts[-1])
    total += t / math.sqrt(math.pi) * s_hi**-0.5 * weight(s_hi) if weight(s_hi) > 0 else 0.0
    return total


def check_subordination_normalization(kernel, t=1.0, tol=1e-8):
    """The subordination density integrates to one."""
    _require_half(kernel)
    mass = _density_integral(t, lambda s: 1.0)
    return CheckRecord("subordination_normalization", kernel.id, {"t": t}, mass, 1.0, abs(mass - 1.0), tol, abs(mass - 1.0) <= tol)


def check_subordination_laplace(kernel, lam, t, tol=1e-6):
    """``int exp(-lam s) mu_t(ds) = exp(-t psi(lam))``."""
    _require_half(kernel)
    lhs = _density_integral(t, lambda s: math.exp(-lam * s))
    rhs = math.exp(-t * float(np.real(psi(kernel, lam))))
    return CheckRecord("subordination_laplace", kernel.id, {"lam": lam, "t": t}, lhs, rhs, abs(lhs - rhs), tol, abs(lhs - rhs) <= tol)


def check_weighted_contraction(kernel, gamma, t, f=None, s_max=None):
    """``int |f * mu_t|^2 e^{-gamma s} ds <= exp(-psi(gamma) t) int |f|^2 e^{-gamma s} ds``.

    ``f`` is a scalar function on ``[0, inf)`` (zero for negative times),
    default ``exp(-s)``. The check first certifies the density normalisation.
    """
    _require_half(kernel)
    norm = check_subordination_normalization(kernel, t)
    if not norm.passed:
        return CheckRecord("weighted_contraction", kernel.id, {"gamma": gamma, "t": t}, np.nan, np.nan, np.nan, 0.0, False, {"normalization": norm.lhs})
    if f is None:
        f = lambda s: math.exp(-s)  # noqa: E731
    if s_max is None:
        s_max = 60.0 / gamma + 50.0

    def shifted(s):
        if s <= 0:
            return 0.0
        return integrate.quad(lambda r: f(s - r) * float(subordination_density(t, r)), 0.0, s, epsabs=1e-15, epsrel=1e-12, limit=200)[0]

    lhs = integrate.quad(lambda s: shifted(s) ** 2 * math.exp(-gamma * s), 0.0, s_max, epsabs=1e-15, epsrel=1e-10, limit=200)[0]
    base = integrate.quad(lambda s: f(s) ** 2 * math.exp(-gamma * s), 0.0, s_max, epsabs=1e-15, epsrel=1e-12, limit=200)[0]
    rhs = math.exp(-float(np.real(psi(kernel, gamma))) * t) * base
    slack = rhs - lhs
    return CheckRecord("weighted_contraction", kernel.id, {"gamma": gamma, "t": t}, lhs, rhs, slack, 0.0, slack >= -1e-12 * rhs, {"normalization": norm.lhs})


# --------------------------------------------------------------------------
# Fourier symbol


def bump_path(support=4.0):
    """Smooth compactly supported path ``sin(pi t / support)^4`` on ``[0, support]``."""

    def u(t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= 0) & (t <= support), np.sin(np.pi * t / support) ** 4, 0.0)

    u.__name__ = f"bump({support:g})"
    return u


def check_fourier_symbol(kernel, r_values=(0.5, 1.0, 2.0), path=None, tau=1e-3, t_end=None, tol=1e-3, support=4.0):
    """Ratio of the transforms ``int e^{i r t} (.) dt`` of ``D u`` and ``u`` against ``psi(-i r)``.

    ``D u`` is computed by convolution quadrature on ``[0, t_end]``. The
    predicted error, the symbol perturbation ``|psi((1 - e^{i r tau})/tau) - psi(-i r)|``
    plus the truncated tail ``|D u(t_end)| / r``, must be below ``tol``
    relative to ``|psi(-i r)|``; otherwise ResolutionInsufficient is raised.
    At ``r = 0`` the transform of ``D u`` equals ``(k * u)(t_end)`` and must
    stay below the tail bound ``k(t_end - support) int |u|``.
    """
    u = bump_path(support) if path is None else path
    if t_end is None:
        t_end = support + 1.0 if kernel.family == "classical" else 400.0
    N = int(round(t_end / tau))
    t = tau * np.arange(N + 1)
    v = u(t)
    D = apply_full(cq_weights(kernel, tau, N, check_aliasing=False), v)
    tail = abs(float(D[-1]))
    # the transform at r = 0 is (k * u)(t_end), bounded by k(t_end - support) int u
    # for a nonincreasing kernel once the path has left its support
    mass = float(np.trapezoid(np.abs(v), t))
    zero_bound = 1e-12 if kernel.family == "classical" else 1.01 * float(kernel.k(t_end - support)) * mass + 1e-12
    records = []
    for r in r_values:
        phase = np.exp(1j * r * t)
        Dh = tau * np.sum(D * phase)
        uh = tau * np.sum(v * phase)
        if r == 0:
            bound = zero_bound
            rec = CheckRecord("fourier_symbol", kernel.id, {"r": 0.0, "tau": tau, "t_end": t_end}, Dh, 0.0, abs(Dh), bound, abs(Dh) <= bound)
            records.append(rec)
            continue
        target = complex(psi(kernel, -1j * r))
        z_disc = (1.0 - np.exp(1j * r * tau)) / tau
        predicted = abs(complex(psi(kernel, z_disc)) - target) + tail / (r * max(abs(uh), 1e-300))
        if predicted > tol * abs(target):
            raise ResolutionInsufficient(f"predicted relative error {predicted / abs(target):.2e} at r={r} exceeds {tol:g}; refine tau or extend t_end")
        ratio = Dh / uh
        err = abs(ratio - target) / abs(target)
        records.append(
            CheckRecord("fourier_symbol", kernel.id, {"r": r, "tau": tau, "t_end": t_end}, ratio, target, err, tol, err <= tol, {"predicted": predicted / abs(target)})
        )
    return records


# --------------------------------------------------------------------------
# relaxation decay


def check_relaxation_decay(kernel, rate=1.0, T_long=1000.0, tau=None, slope_tol=0.15, curvature_tol=0.02):
    """Log-log slope of the relaxation ``D(u - 1) + rate u = 0`` on ``[T/10, T]``.

    The fit is rejected when the log-log curve is not straight: the largest
    deviation from the linear fit exceeds ``curvature_tol`` times the range of
    ``log u``, or ``u`` falls below ``1e-12`` (the resolution of the shifted
    unknown ``u - 1``). For Caputo kernels the slope must be
    ``-beta +- slope_tol``; other kernels are reported descriptively.
    """
    if tau is None:
        tau = T_long / 10000.0
    N = int(round(T_long / tau))
    cfg = SolveConfig(tau, N, integral_residual=False)
    traj = run(kernel, relaxation_operator(rate), [1.0], None, cfg)
    t = traj.times
    u = traj.states[:, 0]
    sel = t >= T_long / 10.0
    ts, us = t[sel], u[sel]
    extra = {"tau": tau}
    # the solver works with u - u0, so values below ~1e-12 |u0| carry no digits
    floor = 1e-12
    if np.any(us <= floor):
        fit = "rejected: decays below the resolution floor"
        return CheckRecord("relaxation_decay", kernel.id, {"rate": rate, "T_long": T_long}, np.nan, np.nan, np.nan, slope_tol, kernel.family != "caputo", {**extra, "fit": fit})
    x, y = np.log(ts), np.log(us)
    slope, icpt = np.polyfit(x, y, 1)
    dev = float(np.max(np.abs(y - (slope * x + icpt))))
    straight = dev <= curvature_tol * max(float(np.ptp(y)), 1e-300)
    extra.update({"slope": float(slope), "max_deviation": dev, "log_range": float(np.ptp(y)), "fit": "accepted" if straight else "rejected: curvature"})
    if kernel.family == "caputo":
        beta = kernel.params["beta"]
        ok = straight and abs(slope + beta) <= slope_tol
        return CheckRecord("relaxation_decay", kernel.id, {"rate": rate, "T_long": T_long}, float(slope), -beta, float(slope + beta), slope_tol, ok, extra)
    return CheckRecord("relaxation_decay", kernel.id, {"rate": rate, "T_long": T_long}, float(slope) if straight else np.nan, np.nan, np.nan, slope_tol, True, extra)


# --------------------------------------------------------------------------
# Sonine


def check_sonine(kernel, tau=1e-3, T=10.0, tol=None):
    """Delegates to :func:`fracevol.kernels.sonine_conjugate` and wraps the report."""
    N = int(round(T / tau))
    grid = tau * np.arange(N + 1)
    try:
        _, rep = sonine_conjugate(kernel, grid, tol=np.inf)
    except Exception as exc:  # noqa: BLE001 - reported as a failed check
        return CheckRecord("sonine", kernel.id, {"tau": tau, "T": T}, np.nan, 1.0, np.nan, np.nan, False, {"error": f"{type(exc).__name__}: {exc}"})
    limit = tol if tol is not None else (1e-6 if rep.method == "closed_form" else 1e-4)
    return CheckRecord("sonine", kernel.id, {"tau": tau, "T": T, "method": rep.method}, rep.max_residual, 0.0, rep.max_residual, limit, rep.max_residual <= limit)
