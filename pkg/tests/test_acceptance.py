"""One test per acceptance criterion, each printing a PASS/FAIL line."""

import math
import time

import numpy as np
import scipy.sparse as sp
from scipy import special
from scipy.signal import fftconvolve

from fracevol.kernels import catalogue, laplace_of_cells, levy_integral, make_kernel, psi, sonine_conjugate
from fracevol.operators import SpatialGrid, dirichlet_laplacian, p_laplace_operator, porous_medium_operator, relaxation_operator
from fracevol.solver import FixedPointOptions, SolveConfig, choose_gamma, run, weighted_fixed_point, weighted_norm
from fracevol.stochastic import effective_kernel, make_noise_model, noise_variance, sample_noise_paths, solve_spde
from fracevol.verify import (
    TEST_PATHS,
    check_relaxation_decay,
    check_subordination_laplace,
    check_subordination_normalization,
    check_weighted_contraction,
    dissipativity_suite,
    extrapolated_margin,
)

C5 = make_kernel("caputo", beta=0.5)


def test_01_sonine_identity(criterion):
    start = time.perf_counter()
    kernels = [make_kernel("caputo", beta=b) for b in (0.25, 0.5, 0.75)]
    kernels += [make_kernel("distributed_order"), make_kernel("exp_weighted", beta=0.5, lam_w=1.0), make_kernel("multi_term", alpha=0.3, beta=0.7)]
    tau = 1e-3
    grid = tau * np.arange(10001)
    worst = {}
    ok = True
    for k in kernels:
        _, rep = sonine_conjugate(k, grid, tol=np.inf)
        limit = 1e-6 if rep.method == "closed_form" else 1e-4
        worst[k.id] = (rep.method, rep.max_residual)
        ok &= rep.max_residual <= limit
    # numeric conjugate: independent Laplace cross-check on a finer grid
    mt = kernels[-1]
    fine = 1e-4
    samples, rep = sonine_conjugate(mt, fine * np.arange(100001), tol=np.inf)
    lap = laplace_of_cells(samples[1:], fine, 2.0)
    lap_err = abs(lap * (2**0.3 + 2**0.7) - 1.0)
    # off-node residual of the piecewise-constant conjugate, reported only
    n = samples.size - 1
    mid = fine * (np.arange(n) + 0.5)
    conv = fftconvolve(samples[1:], np.diff(np.concatenate([[0.0], mt.K(mid)])))[:n]
    off_node = float(np.max(np.abs(conv - 1.0)[mid >= 1e-3]))
    ok &= lap_err <= 1e-4
    elapsed = time.perf_counter() - start
    ok &= elapsed < 10.0
    detail = ", ".join(f"{kid} [{m}] {r:.1e}" for kid, (m, r) in worst.items())
    detail += f"; multi-term Laplace rel err {lap_err:.2e}, off-node residual on [1e-3, 10] {off_node:.1e} (informational); {elapsed:.1f} s"
    assert criterion("1 Sonine identity", ok, detail)


def test_02_bernstein_symbol(criterion):
    lams = (0.5, 1.0, 2.0, 5.0, 10.0)
    worst_levy = 0.0
    for k in (C5, make_kernel("gamma_sub", a=1.0, b=1.0), make_kernel("gamma_sub", a=2.0, b=3.0)):
        for lam in lams:
            p = float(np.real(psi(k, lam)))
            worst_levy = max(worst_levy, abs(levy_integral(k, lam) - p) / p)
    worst_closed = 0.0
    for a, b in ((1.0, 1.0), (2.0, 3.0)):
        k = make_kernel("gamma_sub", a=a, b=b)
        for lam in lams:
            ref = a * math.log1p(lam / b)
            worst_closed = max(worst_closed, abs(float(np.real(psi(k, lam))) - ref) / ref)
    ok = worst_levy <= 1e-6 and worst_closed <= 1e-10
    assert criterion("2 Bernstein symbol", ok, f"Levy quadrature rel {worst_levy:.1e} (<=1e-6), gamma closed form rel {worst_closed:.1e} (<=1e-10)")


def test_03_relaxation_convergence(criterion):
    start = time.perf_counter()
    exact = float(special.erfcx(1.0))
    ks = np.arange(4, 10)
    errs = []
    for k in ks:
        N = 2**k
        traj = run(C5, relaxation_operator(1.0), 1.0, None, SolveConfig(1.0 / N, N, integral_residual=False))
        errs.append(abs(traj.final[0] - exact))
    elapsed = time.perf_counter() - start
    order = -np.polyfit(ks, np.log2(errs), 1)[0]
    ok = 0.8 <= order <= 1.2 and elapsed < 5.0 and errs[-1] < errs[0]
    assert criterion("3 relaxation convergence", ok, f"E_1/2(-1)={exact:.6f}, errors {errs[0]:.2e}..{errs[-1]:.2e}, order {order:.3f} in [0.8,1.2], {elapsed:.2f} s")


def test_04_classical_limit(criterion):
    k = make_kernel("classical")
    tau, N, lam = 0.02, 50, 1.3
    traj = run(k, relaxation_operator(lam), 1.0, 0.2, SolveConfig(tau, N))
    u, worst_relax = 1.0, 0.0
    for n in range(1, N + 1):
        u = (u + tau * 0.2) / (1 + tau * lam)
        worst_relax = max(worst_relax, abs(traj.states[n, 0] - u))
    grid = SpatialGrid(1, 20)
    L = dirichlet_laplacian(grid).toarray()
    v = grid.sample(lambda x: np.sin(np.pi * x) * (1 + x))
    heat = run(k, porous_medium_operator(grid, r=1.0), v, None, SolveConfig(tau, N))
    M = np.eye(grid.size) - tau * L
    worst_heat = 0.0
    for n in range(1, N + 1):
        v = np.linalg.solve(M, v)
        worst_heat = max(worst_heat, float(np.max(np.abs(heat.states[n] - v))))
    ok = worst_relax <= 1e-12 and worst_heat <= 1e-12
    assert criterion("4 classical limit", ok, f"relaxation {worst_relax:.1e}, heat {worst_heat:.1e} per step (<=1e-12)")


def test_05_dissipativity_suite(criterion):
    reports, summary = dissipativity_suite(catalogue(), gammas=(0.5, 1.0, 5.0), taus=(0.01, 0.005, 0.0025), T_cut=30.0)
    classical = make_kernel("classical")
    witness = max(abs(extrapolated_margin(classical, g, p, tau=0.00125)) for g in (0.5, 1.0, 5.0) for p in TEST_PATHS)
    monotone = all(summary["tuples_monotone"].values())
    n_nd = sum(summary["tuples_nondecreasing"].values())
    worst = summary["worst_margin_per_tau"]
    ok = summary["all_pass"] and summary["worst_margin_nondecreasing"] and monotone and witness <= 1e-6
    detail = (
        f"{len(reports)} reports all >= -tol_discrete: {summary['all_pass']}; worst margin per tau "
        + ", ".join(f"{w:.2e}" for w in worst)
        + f" non-decreasing: {summary['worst_margin_nondecreasing']}; per-tuple monotone: {monotone}"
        + f" ({n_nd}/{len(summary['tuples_nondecreasing'])} individually non-decreasing); equality witness {witness:.1e} (<=1e-6)"
    )
    assert criterion("5 dissipativity", ok, detail)


def test_06_fixed_point_contraction(criterion):
    op = relaxation_operator(-1.0)
    fp = FixedPointOptions(gamma=25.0, max_sweeps=60, sweep_tol=1e-10)
    cfg = SolveConfig(0.01, 100, strategy="fixed_point", fixedpoint=fp)
    traj, rho = weighted_fixed_point(C5, op, 1.0, None, cfg)
    ref = run(C5, op, 1.0, None, SolveConfig(0.01, 100))
    gap = weighted_norm(op, traj.states - ref.states, traj.times, 25.0)
    g = choose_gamma(C5, 1.0)
    ok = rho <= 0.5 and gap <= 10 * fp.sweep_tol and abs(g - 6.25) <= 1e-10
    assert criterion("6 fixed-point contraction", ok, f"rho_hat {rho:.3f} (<=0.5, bound 0.4), weighted gap {gap:.1e} (<=1e-9), choose_gamma {g:.12g}")


def test_07_subordination(criterion):
    laps = [check_subordination_laplace(C5, lam, t) for lam, t in ((1.0, 1.0), (4.0, 1.0), (1.0, 2.0))]
    norm = check_subordination_normalization(C5)
    contr = check_weighted_contraction(C5, 1.0, 1.0)
    ok = all(r.passed for r in laps) and norm.passed and contr.passed
    detail = "Laplace errors " + ", ".join(f"{r.margin:.1e}" for r in laps) + f" (<=1e-6); mass-1 {norm.margin:.1e} (<=1e-8); contraction slack {contr.margin:.3e}"
    assert criterion("7 subordination identity", ok, detail)


def test_08_stochastic(criterion):
    start = time.perf_counter()
    kap = effective_kernel(C5, C5, 1 / 256, 256)
    collapse = float(np.max(np.abs(kap.cell_averages - 1.0)))
    for k in (make_kernel("gamma_sub", a=1.0, b=1.0), make_kernel("multi_term", alpha=0.3, beta=0.7)):
        collapse = max(collapse, float(np.max(np.abs(effective_kernel(k, k, 0.01, 100).cell_averages - 1.0))))
    n = 10_000
    model = make_noise_model(make_kernel("caputo", beta=0.7), make_kernel("caputo", beta=0.4), 0.5, seed=17)
    F = sample_noise_paths(model, 0.01, 100, range(n))[:, -1, 0]
    var_ref = noise_variance(model, 0.01, 100)[-1, 0]
    var_z = abs(F.var(ddof=1) - var_ref) / (var_ref * math.sqrt(2.0 / (n - 1)))
    ens = solve_spde(C5, make_noise_model(C5, C5, 1.0, seed=2), relaxation_operator(1.0), 1.0, SolveConfig(1 / 256, 256), n)
    mean_z = abs(ens.mean[-1, 0] - special.erfcx(1.0)) / ens.se[-1, 0]
    elapsed = time.perf_counter() - start
    ok = collapse <= 1e-10 and var_z <= 3 and mean_z <= 3 and elapsed < 60
    detail = f"kappa-1 {collapse:.1e} (<=1e-10); variance {var_z:.2f} SE; SPDE mean {ens.mean[-1, 0]:.5f} vs {special.erfcx(1.0):.5f} at {mean_z:.2f} SE; {elapsed:.1f} s"
    assert criterion("8 stochastic collapse and isometry", ok, detail)


def _dense(J):
    return J.toarray() if sp.issparse(J) else np.atleast_2d(J)


def test_09_operator_properties(criterion):
    rng = np.random.default_rng(2024)
    worst_p = np.inf
    for p in (2.0, 3.0, 4.0):
        op = p_laplace_operator(SpatialGrid(2, 5), p=p, eps_reg=0.0)
        for _ in range(1000):
            x, y = rng.standard_normal((2, op.size))
            worst_p = min(worst_p, float((op.apply(0.0, x) - op.apply(0.0, y)) @ (x - y)))
    pme = porous_medium_operator(SpatialGrid(1, 16), r=2.0)
    worst_pme = np.inf
    for _ in range(1000):
        x, y = rng.standard_normal((2, pme.size))
        worst_pme = min(worst_pme, pme.inner(pme.apply(0.0, x) - pme.apply(0.0, y), x - y))
    worst_jac = 0.0
    eps = 1e-6
    for op in (pme, p_laplace_operator(SpatialGrid(1, 12), p=3.0, eps_reg=1e-3), p_laplace_operator(SpatialGrid(2, 5), p=4.0, eps_reg=1e-3)):
        for _ in range(50):
            u, d = rng.standard_normal((2, op.size))
            fd = (op.apply(0.0, u + eps * d) - op.apply(0.0, u - eps * d)) / (2 * eps)
            jd = _dense(op.jacobian(0.0, u)) @ d
            worst_jac = max(worst_jac, float(np.linalg.norm(fd - jd) / np.linalg.norm(jd)))
    ok = worst_p >= -1e-12 and worst_pme >= -1e-12 and worst_jac <= 1e-5
    assert criterion("9 operator properties", ok, f"p-Laplace min pairing {worst_p:.2e}, PME min H-pairing {worst_pme:.2e} (>=-1e-12), Jacobian rel {worst_jac:.1e} (<=1e-5)")


def test_10_decay_slope(criterion):
    slopes = {}
    ok = True
    for beta in (0.3, 0.5, 0.8):
        rec = check_relaxation_decay(make_kernel("caputo", beta=beta), T_long=1000.0)
        slopes[beta] = rec.extra.get("slope", float("nan"))
        ok &= rec.passed and abs(slopes[beta] + beta) <= 0.15
    assert criterion("10 decay slope", ok, ", ".join(f"beta={b}: {s:.3f}" for b, s in slopes.items()) + " (target -beta +- 0.15)")
