import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from fracevol.errors import NotAttainable, ParamOutOfRange
from fracevol.kernels import make_kernel
from fracevol.memory import make_scheme
from fracevol.operators import SpatialGrid, dirichlet_laplacian, porous_medium_operator, relaxation_operator, zero_operator
from fracevol.solver import (
    FixedPointOptions,
    NewtonOptions,
    SolveConfig,
    choose_gamma,
    run,
    step,
    weighted_fixed_point,
    weighted_norm,
)

CAPUTO = make_kernel("caputo", beta=0.5)
CLASSICAL = make_kernel("classical")
# u(1) for u' of order 1/2 plus u = 0, u(0) = 1: E_{1/2}(-1) = e * erfc(1)
ML_AT_ONE = float(special.erfcx(1.0))


def test_mittag_leffler_oracle_value():
    assert ML_AT_ONE == pytest.approx(0.427584, abs=1e-6)


@pytest.mark.parametrize("backend", ["cq", "pi"])
def test_relaxation_converges_at_first_order(backend):
    errs = []
    for k in range(4, 10):
        N = 2**k
        traj = run(CAPUTO, relaxation_operator(1.0), 1.0, None, SolveConfig(1.0 / N, N, backend=backend, integral_residual=False))
        errs.append(abs(traj.final[0] - ML_AT_ONE))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    observed = np.polyfit(np.arange(4, 10), np.log2(errs), 1)[0]
    assert 0.8 <= -observed <= 1.2
    assert np.all((orders > 0.7) & (orders < 1.3))


def test_relaxation_whole_trajectory_matches_oracle():
    N = 512
    traj = run(CAPUTO, relaxation_operator(1.0), 1.0, None, SolveConfig(1.0 / N, N))
    exact = special.erfcx(np.sqrt(traj.times))
    assert np.max(np.abs(traj.states[:, 0] - exact)) < 0.02


def test_integral_form_residual_vanishes_under_refinement():
    # right-endpoint sampling of a solution with a sqrt(t) start limits the rate to 1/2
    res = [run(CAPUTO, relaxation_operator(1.0), 1.0, None, SolveConfig(1.0 / N, N)).integral_residual for N in (128, 256, 512, 1024)]
    rates = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(rates >= 0.4) and res[-1] < 5e-3


def test_classical_relaxation_is_backward_euler():
    tau, N, lam = 0.05, 40, 1.7
    traj = run(CLASSICAL, relaxation_operator(lam), 2.0, 0.5, SolveConfig(tau, N))
    u = 2.0
    for n in range(1, N + 1):
        u = (u + tau * 0.5) / (1 + tau * lam)
        assert traj.states[n, 0] == pytest.approx(u, abs=1e-12)


def test_classical_heat_is_backward_euler():
    grid = SpatialGrid(1, 15)
    op = porous_medium_operator(grid, r=1.0)
    L = dirichlet_laplacian(grid).toarray()
    x = grid.coordinates()
    u = np.sin(np.pi * x) + 0.3 * np.sin(3 * np.pi * x)
    tau, N = 0.01, 20
    traj = run(CLASSICAL, op, u, None, SolveConfig(tau, N))
    M = np.eye(grid.size) - tau * L
    for n in range(1, N + 1):
        u = np.linalg.solve(M, u)
        assert np.max(np.abs(traj.states[n] - u)) <= 1e-12


@pytest.mark.parametrize("backend", ["cq", "pi"])
def test_zero_data_gives_zero_solution(backend):
    op = porous_medium_operator(SpatialGrid(1, 8), r=2.0)
    traj = run(CAPUTO, op, np.zeros(8), None, SolveConfig(0.05, 20, backend=backend))
    assert np.all(traj.states == 0.0)


def test_steady_state_is_preserved():
    # u0 = f / rate is a stationary point of every memory law
    traj = run(CAPUTO, relaxation_operator(2.0), 1.5, 3.0, SolveConfig(0.1, 30))
    assert np.allclose(traj.states, 1.5, atol=1e-12)


def test_porous_medium_sup_norm_non_increasing():
    grid = SpatialGrid(1, 20)
    op = porous_medium_operator(grid, r=2.0)
    x = grid.coordinates()
    u0 = np.maximum(0.0, 1 - 4 * (x - 0.5) ** 2)
    traj = run(CAPUTO, op, u0, None, SolveConfig(0.01, 50))
    sup = np.max(np.abs(traj.states), axis=1)
    assert np.all(np.diff(sup) <= 1e-12)
    assert traj.iterations[1:].max() < 20


def test_newton_residuals_recorded_below_tolerance():
    op = porous_medium_operator(SpatialGrid(1, 10), r=3.0)
    u0 = np.linspace(0.1, 1.0, 10)
    traj = run(CAPUTO, op, u0, None, SolveConfig(0.02, 25))
    assert traj.residuals[1:].max() < 1e-9
    assert traj.diagnostics()["total_newton_iterations"] >= 25


def test_uniqueness_echo_initial_guess_independent():
    op = porous_medium_operator(SpatialGrid(1, 10), r=2.0)
    u0 = np.sin(np.pi * SpatialGrid(1, 10).coordinates())
    a = run(CAPUTO, op, u0, None, SolveConfig(0.02, 25, initial_guess="previous"))
    b = run(CAPUTO, op, u0, None, SolveConfig(0.02, 25, initial_guess="zero"))
    assert np.max(np.abs(a.states - b.states)) < 1e-10


def test_memory_cost_is_quadratic():
    counts = []
    for N in (50, 100, 200):
        traj = run(CAPUTO, relaxation_operator(1.0), 1.0, None, SolveConfig(1.0 / N, N, integral_residual=False))
        counts.append(traj.memory_ops)
    assert counts == [N * (N + 1) // 2 for N in (50, 100, 200)]


def test_single_step_matches_run():
    cfg = SolveConfig(0.1, 5)
    scheme = make_scheme(CAPUTO, 0.1, 5)
    traj = run(CAPUTO, relaxation_operator(1.0), 1.0, None, cfg, scheme=scheme)
    history = traj.states[:3]
    out = step(scheme, relaxation_operator(1.0), history, traj.times[3], 0.0, cfg, u0=np.array([1.0]))
    u = out[0] if isinstance(out, tuple) else out
    assert np.allclose(u, traj.states[3], atol=1e-12)


def test_config_validation():
    with pytest.raises(ParamOutOfRange):
        SolveConfig(0.0, 10)
    with pytest.raises(ParamOutOfRange):
        SolveConfig(0.1, 0)
    with pytest.raises(ParamOutOfRange):
        SolveConfig(0.1, 10, strategy="explicit")
    with pytest.raises(ParamOutOfRange):
        NewtonOptions(min_iter=5, max_iter=2)
    with pytest.raises(ParamOutOfRange):
        FixedPointOptions(gamma=-1.0)


def test_scheme_grid_mismatch_rejected():
    with pytest.raises(ParamOutOfRange):
        run(CAPUTO, relaxation_operator(), 1.0, None, SolveConfig(0.1, 10), scheme=make_scheme(CAPUTO, 0.2, 10))


# ---------------------------------------------------------------- weighted fixed point


def test_choose_gamma_values():
    assert choose_gamma(CAPUTO, 0.0) == 1.0
    # psi(gamma) = sqrt(gamma) = 2 C1 (1 + 1/4)
    assert choose_gamma(CAPUTO, 1.0) == pytest.approx(6.25, rel=1e-12)
    # psi = log(1 + gamma) reaches 2 * 10 * 1.25 = 25
    assert choose_gamma(make_kernel("gamma_sub", a=1.0, b=1.0), 10.0) == pytest.approx(math.expm1(25.0), rel=1e-12)


def test_choose_gamma_unattainable_for_logarithmic_symbol():
    # log(1 + 2**40) is about 27.7, far below the target 250
    with pytest.raises(NotAttainable) as info:
        choose_gamma(make_kernel("gamma_sub", a=1.0, b=1.0), 100.0)
    assert info.value.sup_estimate > 0


def test_fixed_point_contraction_and_agreement():
    op = relaxation_operator(-1.0)
    assert op.C1 == 1.0
    fp = FixedPointOptions(gamma=25.0, max_sweeps=60, sweep_tol=1e-10)
    cfg = SolveConfig(0.01, 100, strategy="fixed_point", fixedpoint=fp)
    traj, rho = weighted_fixed_point(CAPUTO, op, 1.0, None, cfg)
    assert traj.info["contraction_bound"] == pytest.approx(0.4)
    assert 0 < rho <= 0.5
    ref = run(CAPUTO, op, 1.0, None, SolveConfig(0.01, 100))
    # agreement is measured in the weighted norm that drives the sweeps
    assert weighted_norm(op, traj.states - ref.states, traj.times, 25.0) <= 10 * fp.sweep_tol


def test_fixed_point_with_zero_defect_is_single_sweep():
    cfg = SolveConfig(0.05, 20, strategy="fixed_point")
    traj, rho = weighted_fixed_point(CAPUTO, relaxation_operator(1.0), 1.0, None, cfg)
    assert traj.info["sweeps"] == 1 and rho == 0.0


def test_fixed_point_rejects_too_small_gamma():
    cfg = SolveConfig(0.05, 20, strategy="fixed_point", fixedpoint=FixedPointOptions(gamma=1.0))
    with pytest.raises(ParamOutOfRange):
        weighted_fixed_point(CAPUTO, relaxation_operator(-1.0), 1.0, None, cfg)


# ---------------------------------------------------------------- properties


@settings(max_examples=15, deadline=None)
@given(rate=st.floats(0.1, 5.0), beta=st.floats(0.2, 0.9), u0=st.floats(-3.0, 3.0))
def test_linear_relaxation_is_homogeneous(rate, beta, u0):
    k = make_kernel("caputo", beta=beta)
    cfg = SolveConfig(0.05, 20, integral_residual=False)
    a = run(k, relaxation_operator(rate), u0, None, cfg)
    b = run(k, relaxation_operator(rate), 1.0, None, cfg)
    assert np.allclose(a.states, u0 * b.states, atol=1e-12)
    # relaxation decays monotonically and keeps its sign
    assert np.all(np.diff(b.states[:, 0]) <= 1e-14) and np.all(b.states > 0)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_zero_operator_keeps_initial_datum(seed):
    u0 = np.random.default_rng(seed).standard_normal(4)
    traj = run(CAPUTO, zero_operator(4), u0, None, SolveConfig(0.1, 10))
    assert np.allclose(traj.states, u0, atol=1e-14)
