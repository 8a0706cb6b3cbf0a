import math

import numpy as np
import pytest

from markovsa import bounds
from markovsa.experiments import (
    diminishing_check,
    fit_decay_rate,
    largest_valid_epsilon,
    make_setup,
    mean_square_check,
    record_grid,
    relaxation_horizon,
    schedule_mixing_times,
    window_moments,
)
from markovsa.lsa import StepSchedule
from markovsa.markov import mixing_time
from markovsa.td import TdProblem, compile_td0, compile_tdlambda

IID = np.full((2, 2), 0.5)


def two_state():
    return compile_td0(TdProblem(IID, [1.0, 0.0], 0.2, np.eye(2)))


def test_largest_valid_epsilon_is_valid_and_tight():
    comp = two_state()
    eps, tau = largest_valid_epsilon(comp)
    assert tau == mixing_time(comp.model, eps)
    setup = make_setup(comp, eps)
    assert setup.constants.valid
    # 1% more step breaks one of the two validity conditions
    bigger = make_setup(comp, eps * 1.01)
    assert not bigger.constants.valid


def test_largest_valid_epsilon_trace_model():
    comp = compile_tdlambda(TdProblem(IID, [1.0, 0.0], 0.2, np.eye(2), 0.5))
    eps, tau = largest_valid_epsilon(comp)
    assert make_setup(comp, eps).constants.valid


def test_record_grid():
    g = record_grid(3, 100, n_points=5)
    assert list(g[:5]) == [3, 6, 9, 12, 15]
    assert g[-1] == 100 and np.all(np.diff(g) > 0)
    with pytest.raises(ValueError):
        record_grid(10, 5)


def test_mean_square_check_small():
    comp = two_state()
    setup = make_setup(comp)
    horizon = relaxation_horizon(setup)
    assert horizon == math.ceil(setup.gamma_max / (0.9 * setup.epsilon))
    rec = record_grid(setup.tau, horizon, 10)
    chk = mean_square_check(setup, comp.centered_start(), rec, 300, seed=5)
    assert chk.all_dominated and chk.worst_ratio < 1
    np.testing.assert_array_equal(chk.k, rec)


def test_window_moments_iid_scalar():
    # Theta_{k+1} = (1 - eps) Theta_k + eps X with X = +-1: stationary E Theta^2 = eps / (2 - eps)
    from markovsa.markov import FiniteChain, MarkovNoiseModel

    model = MarkovNoiseModel(FiniteChain(IID), np.array([[[-1.0]], [[-1.0]]]), np.array([[1.0], [-1.0]]))
    eps = 0.05
    wm = window_moments(model, [0.0], eps, 400, 2000, (1,), 2000, seed=3, n_samples=50)
    assert abs(wm.estimates[0] - eps / (2 - eps)) <= 4 * wm.std_errors[0]


def test_fit_decay_rate_exact():
    k = np.arange(0, 100)
    assert fit_decay_rate(k, 3.0 * np.exp(-0.02 * k)) == pytest.approx(0.02, rel=1e-10)
    with pytest.raises(ValueError):
        fit_decay_rate(k[:2], np.ones(2))


def test_schedule_mixing_times_match_direct():
    comp = compile_td0(TdProblem(
        0.9 * np.full((3, 3), 1 / 3) + 0.1 * np.roll(np.eye(3), 1, axis=1), [1.0, 0.0, 0.5], 0.3, np.eye(3)
    ))
    eps = StepSchedule.power(1e-2, 0.7, 50).steps(50)
    taus = schedule_mixing_times(comp.model, eps)
    assert list(taus) == [mixing_time(comp.model, e) for e in eps]


def test_diminishing_check_small():
    comp = two_state()
    H = 4000
    sched = StepSchedule.power(2e-3, 0.7, H + 1)
    chk = diminishing_check(comp, comp.centered_start(), sched, H, np.linspace(0, H, 20).astype(int), 200, seed=9)
    assert chk.k[0] >= chk.constants.k_hat
    assert chk.all_dominated
    assert chk.constants.k_hat * 2e-3 <= bounds.STEP_TAU_LIMIT
