import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from markovsa import bounds
from markovsa.errors import (
    InvalidStep,
    KTooSmall,
    MomentOrderTooHigh,
    NotNegativeDefinite,
    PreconditionViolated,
    ScheduleInvalid,
    StepInvalid,
)


def example_constants(epsilon=1e-4, tau=5):
    return bounds.compute_constants(b_max=1.0, gamma_max=0.5, gamma_min=0.5, tau=tau, epsilon=epsilon)


def test_kappa_examples():
    assert bounds.kappas(0.5, 1.0) == (62.0, 220.0, 441.0)
    assert bounds.kappas(1.0, 0.0) == (62.0, 55.0, 110.0)


def test_validity_example():
    c = example_constants()
    assert c.drift == pytest.approx(62 * 5e-4 + 0.5e-4)
    assert c.drift == pytest.approx(0.03105)
    assert c.step_tau_ok and c.drift_ok and c.valid
    assert not example_constants(epsilon=2e-4).drift_ok
    with pytest.raises(InvalidStep):
        bounds.compute_constants(1.0, 0.5, 0.5, 5, 0.0)


def test_mean_square_bound_example():
    c = example_constants()
    assert bounds.mean_square_bound(c, 0.0, 5) == pytest.approx(0.25 + 0.245, rel=1e-13)
    with pytest.raises(KTooSmall):
        bounds.mean_square_bound(c, 0.0, 4)
    with pytest.raises(StepInvalid):
        bounds.mean_square_bound(example_constants(epsilon=1e-3), 0.0, 5)


def test_mean_square_bound_at_tau_and_limit():
    c = bounds.compute_constants(0.3, 2.0, 0.7, 3, 1e-5)
    r = 1.5 * 1.2 + 0.5 * 0.3
    steady = c.kappa2_tilde * 2.0 * 1e-5 * 3 / (0.9 * 0.7)
    assert bounds.mean_square_bound(c, 1.2, 3) == pytest.approx((2.0 / 0.7) * r * r + steady, rel=1e-14)
    assert bounds.mean_square_bound(c, 1.2, 10**9) == pytest.approx(steady, rel=1e-12)


def test_bound_non_increasing_in_k():
    c = example_constants()
    curve = bounds.mean_square_bound_curve(c, 2.0, range(5, 20000, 97))
    assert np.all(np.diff(curve) <= 0)
    assert curve[-1] > c.steady_state_term


def test_steady_state_term_linear_in_step():
    c1 = example_constants(epsilon=4e-5)
    c2 = example_constants(epsilon=8e-5)
    assert c2.steady_state_term == pytest.approx(2 * c1.steady_state_term, rel=1e-15)


def test_sample_complexity_example():
    c = example_constants()
    k = bounds.sample_complexity(c, 2.0)
    # brute force: first m with 0.25 a^m <= 0.245
    a = 1 - 0.9e-4 / 0.5
    m = 0
    while 0.25 * a**m > 0.245 * (1 + 1e-15):
        m += 1
    assert k == 5 + m
    assert m == math.ceil(math.log(0.98) / math.log(a))
    assert 110 <= m <= 114
    assert bounds.sample_complexity(c, 3.0) == 5  # 0.25 <= 2 * 0.245 already at k = tau


def test_sample_complexity_scales_like_inverse_step():
    ks = []
    for eps in (1e-3, 5e-4, 2.5e-4):
        c = bounds.compute_constants(0.1, 0.5, 0.5, 2, eps)
        ks.append(bounds.sample_complexity(c, 1.5, theta0_norm=5.0) - 2)
    # tau + O((1/eps) log(1/eps)): each halving more than doubles, by at most the log factor
    for a, b in zip(ks, ks[1:]):
        assert 2.0 <= b / a <= 2.0 * math.log(1 / 2.5e-4) / math.log(1 / 1e-3)


def test_double_factorial():
    assert [bounds.double_factorial(n) for n in range(1, 6)] == [1, 3, 15, 105, 945]
    for n in (1, 5, 40, 150):
        assert bounds.log_double_factorial(n) == pytest.approx(math.log(bounds.double_factorial(n)), rel=1e-12)
    assert bounds.log_double_factorial(200) == pytest.approx(sum(math.log(j) for j in range(1, 400, 2)), rel=1e-13)
    assert bounds.double_factorial(120) == pytest.approx(math.exp(sum(math.log(j) for j in range(1, 240, 2))), rel=1e-12)
    assert math.isinf(bounds.double_factorial(400))


def test_higher_moment_examples():
    c = example_constants()
    b1, k1 = bounds.higher_moment_bound(c, 1, c_const=3.0, c_tilde=2.0)
    assert b1 == pytest.approx(3.0 * 5 * 1e-4)
    assert k1 == math.ceil(5 + (2.0 / 1e-4) * math.log(1e4))
    x = 0.01 / (5 * 1e-4)
    b3, k3 = bounds.higher_moment_bound(c, 3, c_const=x, c_tilde=2.0)
    assert b3 == pytest.approx(15e-6, rel=1e-12)
    assert k3 == math.ceil(15 + (2.0 / 1e-4) * math.log(1e4) * (1 + 1 / 2 + 1 / 3))


def test_higher_moment_ratio_and_defaults():
    c = example_constants()
    cc, ct = bounds.default_higher_moment_constants(c)
    assert cc == pytest.approx(11 * 441 * 0.5 / 0.5)
    assert ct == pytest.approx(10 * 0.5 / 9)
    for n in range(1, 8):
        bn, _ = bounds.higher_moment_bound(c, n)
        bn1, _ = bounds.higher_moment_bound(c, n + 1)
        assert bn1 / bn == pytest.approx((2 * n + 1) * cc * 5 * 1e-4, rel=1e-12)


def test_higher_moment_order_limit():
    c = example_constants()
    limit = (1 / (4 * math.sqrt(0.5))) * (1 / 0.5 + 1.0)
    n_max = math.floor(limit / (5e-4))
    bounds.higher_moment_bound(c, n_max)
    with pytest.raises(MomentOrderTooHigh):
        bounds.higher_moment_bound(c, n_max + 1)


def test_diminishing_two_step_horizon_by_hand():
    eps = np.array([4e-4, 3e-4, 2e-4, 1e-4])
    taus = np.array([1, 1, 1, 1])
    dc = bounds.diminishing_constants(eps, taus, gamma_max=0.5, b_max=0.0)
    assert dc.k_star == 1
    assert dc.kappa_s == pytest.approx(2.0)
    k_hat = dc.k_hat
    lead = (0.5 / 0.25) * (1.5 * 1.0) ** 2
    a = 1 - 0.9 * eps[k_hat] / 0.5
    expected = lead * a + dc.kappa2_check * eps[k_hat] ** 2 * 1
    got = bounds.diminishing_bound(dc, eps, 1.0, 0.0, 0.5, 0.25, k_hat + 1)
    assert got == pytest.approx(expected, rel=1e-14)
    assert bounds.diminishing_bound(dc, eps, 1.0, 0.0, 0.5, 0.25, k_hat) == pytest.approx(lead)


def test_diminishing_kappa_s_harmonic():
    # eps_j = eps0 / (j + 1): kappa_s = (k + 1) / (k - tau + 1) at the smallest admissible k
    eps = 1e-4 / (np.arange(2000) + 1.0)
    taus = np.full(2000, 3)
    dc = bounds.diminishing_constants(eps, taus, 0.5, 0.2)
    assert dc.k_star == 3
    assert dc.kappa_s == pytest.approx(4 / 1)
    k1, k2, _ = bounds.kappas(0.5, 0.2)
    assert dc.kappa2_check == pytest.approx(2 * k2 * 4 + 2 * 0.5 * 0.04)


def test_diminishing_constant_schedule_reduction():
    eps, tau = 1e-4, 5
    E = np.full(30_000, eps)
    dc = bounds.diminishing_constants(E, np.full(30_000, tau), 0.5, 1.0)
    assert dc.kappa_s == 1.0
    curve = bounds.diminishing_bound_curve(dc, E, 2.0, 1.0, 0.5, 0.4, 29_999)
    for k in (dc.k_hat, dc.k_hat + 1, 1000, 29_999):
        ref = bounds.constant_schedule_reference(dc, eps, tau, 2.0, 1.0, 0.5, 0.4, k)
        assert curve[k - dc.k_hat] == pytest.approx(ref, rel=1e-12)


def test_diminishing_errors():
    with pytest.raises(ScheduleInvalid):
        bounds.diminishing_constants([0.1, 0.2, 0.3], [1, 1, 1], 0.5, 0.0)
    # eps0 so large that k_hat * eps0 > 1/4
    with pytest.raises(ScheduleInvalid):
        bounds.diminishing_constants(0.5 / (np.arange(5000) + 1.0) ** 0.5, np.ones(5000, dtype=int), 0.5, 0.0)


def test_neg_def_examples():
    assert bounds.neg_def_rate(-np.eye(3)) == pytest.approx(1.0)
    assert bounds.neg_def_rate(np.diag([-1.0, -3.0])) == pytest.approx(1.0)
    with pytest.raises(NotNegativeDefinite):
        bounds.neg_def_rate([[-1.0, 10.0], [0.0, -1.0]])
    v = bounds.neg_def_bound(-np.eye(2), 0.2, 1.0, 100, 2, 1e-4)
    k1, _, k2t = bounds.kappas(1.0, 0.2)
    expected = (1 - 0.9e-4) ** 98 * (1.5 + 0.1) ** 2 + k2t * 1e-4 * 2 / 0.9
    assert v == pytest.approx(expected, rel=1e-13)
    with pytest.raises(PreconditionViolated):
        bounds.neg_def_bound(-0.05 * np.eye(2), 0.2, 1.0, 100, 2, 1e-4)


@settings(max_examples=50, deadline=None)
@given(
    st.floats(0.5, 5.0), st.floats(0.01, 1.0), st.floats(0.0, 2.0),
    st.integers(1, 20), st.floats(0.0, 3.0),
)
def test_bound_dominates_steady_state_and_decreases(g_max, g_ratio, b_max, tau, th0):
    k1, _, _ = bounds.kappas(g_max, b_max)
    eps = 0.05 / (k1 * tau + g_max) * 0.999
    c = bounds.compute_constants(b_max, g_max, g_max * g_ratio, tau, eps)
    assert c.valid
    ks = [tau, tau + 1, tau + 100, tau + 10_000]
    vals = bounds.mean_square_bound_curve(c, th0, ks)
    assert np.all(np.diff(vals) <= 0)
    assert np.all(vals >= c.steady_state_term)
