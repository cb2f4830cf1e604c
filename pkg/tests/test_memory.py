import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from fracevol.errors import HistoryTooLong, ParamOutOfRange
from fracevol.kernels import catalogue, make_kernel, psi
from fracevol.memory import apply_full, apply_memory, cq_weights, history_sum, make_scheme, pi_weights, transfer_function

CAPUTO = make_kernel("caputo", beta=0.5)


def grunwald(beta, n):
    # coefficients of (1 - z)^beta by the recursion w_j = w_{j-1} (j - 1 - beta) / j
    w = np.empty(n + 1)
    w[0] = 1.0
    for j in range(1, n + 1):
        w[j] = w[j - 1] * (j - 1 - beta) / j
    return w


def test_cq_caputo_weights_are_grunwald_letnikov():
    s = cq_weights(CAPUTO, 1.0, 200)
    assert np.allclose(s.weights, grunwald(0.5, 200), atol=1e-12, rtol=0)


def test_cq_weights_scale_with_step():
    tau = 0.01
    s = cq_weights(make_kernel("caputo", beta=0.3), tau, 64)
    assert np.allclose(s.weights, grunwald(0.3, 64) / tau**0.3, rtol=1e-10, atol=1e-10)


def test_classical_cq_weights_are_backward_difference():
    s = cq_weights(make_kernel("classical"), 0.1, 10)
    assert s.weights[0] == pytest.approx(10.0)
    assert s.weights[1] == pytest.approx(-10.0)
    assert np.all(s.weights[2:] == 0.0)


def test_gamma_weights_sum_reproduces_kernel_at_horizon():
    # unit jump: sum_{j<=N} w_j ~ d/dt (k * 1)(t_N) = k(t_N)
    k = make_kernel("gamma_sub", a=1.0, b=1.0)
    s = cq_weights(k, 0.1, 100)
    assert abs(s.weights.sum() - float(k.k(10.0))) <= 1e-4


def test_pi_first_coefficient_is_primitive_at_one():
    s = pi_weights(CAPUTO, 1.0, 8)
    assert s.increments[0] == pytest.approx(1.0 / special.gamma(1.5), rel=1e-14)
    assert s.increments[0] == pytest.approx(1.128379, abs=1e-6)


def test_pi_classical_is_backward_difference():
    s = pi_weights(make_kernel("classical"), 0.2, 5)
    v = np.array([0.0, 1.0, 3.0, 2.0])
    assert apply_memory(s, v) == pytest.approx((2.0 - 3.0) / 0.2)


@pytest.mark.parametrize("backend", ["cq", "pi"])
def test_classical_history_gives_difference_quotient(backend):
    s = make_scheme(make_kernel("classical"), 0.25, 4, backend)
    assert apply_memory(s, np.array([0.0, 1.5])) == pytest.approx(6.0)


@pytest.mark.parametrize("backend", ["cq", "pi"])
def test_zero_history_gives_zero(backend):
    s = make_scheme(CAPUTO, 0.1, 20, backend)
    assert apply_memory(s, np.zeros(15)) == 0.0
    assert np.all(apply_full(s, np.zeros((21, 3))) == 0.0)


@pytest.mark.parametrize("backend", ["cq", "pi"])
def test_caputo_derivative_of_linear_path_converges(backend):
    # d/dt (k * t)(t) = t^0.5 / Gamma(1.5) for the Caputo kernel of order 1/2
    exact = 1.0 / special.gamma(1.5)
    errs = []
    for n in (16, 32, 64, 128):
        tau = 1.0 / n
        s = make_scheme(CAPUTO, tau, n, backend)
        errs.append(abs(apply_memory(s, tau * np.arange(n + 1)) - exact))
    # product integration is exact for piecewise-linear paths
    if backend == "pi":
        assert max(errs) < 1e-12
    else:
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders >= 0.95)


def test_history_too_long():
    s = cq_weights(CAPUTO, 0.1, 5)
    with pytest.raises(HistoryTooLong):
        apply_memory(s, np.zeros(8))
    with pytest.raises(HistoryTooLong):
        history_sum(s, np.zeros(8), 7)


def test_bad_grid_rejected():
    with pytest.raises(ParamOutOfRange):
        cq_weights(CAPUTO, -0.1, 5)
    with pytest.raises(ParamOutOfRange):
        make_scheme(CAPUTO, 0.1, 5, backend="bdf2")


@pytest.mark.parametrize("kernel", catalogue(), ids=lambda k: k.family)
def test_cq_sign_structure(kernel):
    s = cq_weights(kernel, 0.05, 200)
    assert s.w0 > 0
    assert np.all(s.weights[1:] <= 1e-12 * s.w0)


@pytest.mark.parametrize("kernel", [k for k in catalogue() if k.family != "classical"], ids=lambda k: k.family)
def test_backends_agree_to_first_order(kernel):
    # disagreement of CQ and PI at t=1 for v = t e^{-t} halves with tau
    diffs = []
    for n in (32, 64, 128):
        tau = 1.0 / n
        t = tau * np.arange(n + 1)
        v = t * np.exp(-t)
        diffs.append(abs(apply_memory(cq_weights(kernel, tau, n), v) - apply_memory(pi_weights(kernel, tau, n), v)))
    ratios = np.array(diffs[:-1]) / np.array(diffs[1:])
    assert np.all((ratios >= 1.6) & (ratios <= 2.4)), ratios


@pytest.mark.parametrize("kernel", [k for k in catalogue() if k.family != "classical"], ids=lambda k: k.family)
def test_transfer_function_converges_to_symbol(kernel):
    for lam in (1.0, 2.0):
        errs = []
        for tau in (0.02, 0.01):
            N = int(40 / tau)
            s = cq_weights(kernel, tau, N, check_aliasing=False)
            errs.append(abs(transfer_function(s, np.exp(-lam * tau)).real - float(np.real(psi(kernel, lam)))))
        assert errs[1] < errs[0]
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.25)


def test_weights_csv_round_trip(tmp_path):
    s = cq_weights(CAPUTO, 0.1, 30)
    s.to_csv(tmp_path / "w.csv")
    back = np.loadtxt(tmp_path / "w.csv", delimiter=",", skiprows=1)
    assert np.array_equal(back[:, 1], s.weights)


@settings(max_examples=30, deadline=None)
@given(
    beta=st.floats(0.1, 0.9),
    a=st.floats(-5, 5),
    b=st.floats(-5, 5),
    n=st.integers(2, 40),
    seed=st.integers(0, 2**16),
)
def test_memory_operator_is_linear(beta, a, b, n, seed):
    rng = np.random.default_rng(seed)
    k = make_kernel("caputo", beta=beta)
    for s in (cq_weights(k, 0.1, 50, check_aliasing=False), pi_weights(k, 0.1, 50)):
        x = np.concatenate([[0.0], rng.standard_normal(n)])
        y = np.concatenate([[0.0], rng.standard_normal(n)])
        lhs = apply_memory(s, a * x + b * y)
        rhs = a * apply_memory(s, x) + b * apply_memory(s, y)
        assert lhs == pytest.approx(rhs, abs=1e-9 * (1 + abs(lhs)))


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 60), seed=st.integers(0, 2**16))
def test_full_application_matches_pointwise(n, seed):
    rng = np.random.default_rng(seed)
    v = np.concatenate([[0.0], rng.standard_normal(n)])
    for s in (cq_weights(CAPUTO, 0.05, 60), pi_weights(CAPUTO, 0.05, 60)):
        full = apply_full(s, v)
        assert full[-1] == pytest.approx(apply_memory(s, v), abs=1e-10)
        # history part plus the diagonal term is the whole derivative
        assert full[-1] == pytest.approx(history_sum(s, v, n) + s.w0 * v[n], abs=1e-10)


def test_caputo_weights_decay_like_power_law():
    s = cq_weights(CAPUTO, 1.0, 4000)
    # |w_j| ~ j^(-1 - beta) / |Gamma(-beta)|
    j = 4000
    assert abs(s.weights[j]) == pytest.approx(j**-1.5 / abs(math.gamma(-0.5)), rel=1e-3)
