"""Monte Carlo experiments that put simulated moments next to the analytic bounds.

These are the building blocks of the command-line kinds and of the
acceptance suite: choosing a valid constant step, recording grids, the
mean-square domination check, steady-state scaling, higher-moment scaling and
the diminishing-step check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import bounds
from .errors import StepInvalid
from .linalg import LyapunovCertificate, solve_lyapunov
from .lsa import StepSchedule, ensemble_sq_norms, moments_from_samples, _mean_and_se
from .markov import MarkovNoiseModel, mixing_profile, mixing_time
from .td import CompiledTd, TraceNoiseModel, tdlambda_mixing_time


def _tau_fn(target):
    if isinstance(target, CompiledTd) and isinstance(target.model, TraceNoiseModel):
        return lambda d: tdlambda_mixing_time(target, d)
    model = target.model if isinstance(target, CompiledTd) else target
    return lambda d: mixing_time(model, d)


def _noise_model(target):
    return target.model if isinstance(target, CompiledTd) else target


@dataclass(frozen=True)
class Setup:
    """A noise model with its Lyapunov certificate, step size and bound constants."""

    model: object
    certificate: LyapunovCertificate
    epsilon: float
    tau: int
    constants: bounds.BoundConstants

    @property
    def gamma_min(self) -> float:
        return self.certificate.gamma_min

    @property
    def gamma_max(self) -> float:
        return self.certificate.gamma_max


def largest_valid_epsilon(target, start: float = 0.01, max_iter: int = 200) -> tuple[float, int]:
    """Fixed point of eps = min(0.05 / (kappa1 tau_eps + gamma_max), 1 / (4 tau_eps)).

    The mixing time is taken at delta = eps. Each pass can only shrink eps (a
    smaller delta never lowers tau), so the iteration stops once tau settles.
    """
    model = _noise_model(target)
    cert = solve_lyapunov(model.A_bar)
    if not cert.hurwitz:
        raise StepInvalid("averaged matrix is not Hurwitz; no step size is valid")
    tau_at = _tau_fn(target)
    k1, _, _ = bounds.kappas(cert.gamma_max, model.b_max)
    eps = float(start)
    tau = tau_at(eps)
    for _ in range(max_iter):
        cap = min(bounds.DRIFT_LIMIT / (k1 * tau + cert.gamma_max), bounds.STEP_TAU_LIMIT / tau)
        # a relative hair below the cap keeps the validity check clear of rounding
        eps = min(eps, cap * (1.0 - 1e-9))
        new_tau = tau_at(eps)
        if new_tau == tau:
            break
        tau = new_tau
    else:
        raise StepInvalid("step-size fixed point did not settle")
    return eps, tau


def make_setup(target, epsilon: float | None = None) -> Setup:
    """Certificate, mixing time at delta = eps, and mean-square bound constants for one step size."""
    model = _noise_model(target)
    cert = solve_lyapunov(model.A_bar)
    if epsilon is None:
        epsilon, tau = largest_valid_epsilon(target)
    else:
        tau = _tau_fn(target)(epsilon)
    c = bounds.compute_constants(model.b_max, cert.gamma_max, cert.gamma_min, tau, epsilon, model.A_max)
    return Setup(model, cert, float(epsilon), int(tau), c)


def record_grid(tau: int, horizon: int, n_points: int = 50) -> np.ndarray:
    """tau, 2 tau, ..., n_points tau together with n_points evenly spaced steps up to ``horizon``."""
    if horizon < tau:
        raise ValueError("horizon must be >= tau")
    multiples = tau * np.arange(1, n_points + 1)
    spaced = np.linspace(tau, horizon, n_points).round().astype(np.int64)
    grid = np.union1d(multiples[multiples <= horizon], spaced)
    return grid.astype(np.int64)


def relaxation_horizon(setup: Setup) -> int:
    """Steps for the transient factor (1 - 0.9 eps / gamma_max)^k to fall by e."""
    return max(setup.tau, math.ceil(setup.gamma_max / (bounds.CONTRACTION * setup.epsilon)))


@dataclass(frozen=True)
class BoundCheck:
    k: np.ndarray
    empirical_msq: np.ndarray
    std_err: np.ndarray
    bound: np.ndarray
    n_sigma: float

    @property
    def dominated(self) -> np.ndarray:
        return self.empirical_msq + self.n_sigma * self.std_err <= self.bound

    @property
    def all_dominated(self) -> bool:
        return bool(np.all(self.dominated))

    @property
    def worst_ratio(self) -> float:
        """Largest (empirical + n_sigma SE) / bound over the grid."""
        return float(np.max((self.empirical_msq + self.n_sigma * self.std_err) / self.bound))


def mean_square_check(
    setup: Setup,
    theta0,
    record,
    n_runs: int,
    seed: int,
    threads: int = 1,
    n_sigma: float = 3.0,
) -> BoundCheck:
    """Empirical E||Theta_k||^2 against the constant-step mean-square bound on ``record``."""
    theta0 = np.asarray(theta0, dtype=float)
    rec, sq, logsq = ensemble_sq_norms(
        setup.model, theta0, StepSchedule.constant(setup.epsilon), record, n_runs, seed, threads
    )
    if rec[0] < setup.tau:
        raise ValueError(f"recorded steps must be >= tau={setup.tau}")
    mom = moments_from_samples(sq, logsq, rec, (1,), n_runs, seed)
    bound = bounds.mean_square_bound_curve(setup.constants, float(np.linalg.norm(theta0)), rec)
    return BoundCheck(rec, mom.estimates[:, 0], mom.std_errors[:, 0], bound, n_sigma)


@dataclass(frozen=True)
class WindowMoments:
    """Per-order moments averaged over a window of steps, with run-level standard errors."""

    orders: tuple[int, ...]
    estimates: np.ndarray
    std_errors: np.ndarray
    window: np.ndarray


def window_moments(
    model,
    theta0,
    epsilon: float,
    start: int,
    stop: int,
    orders,
    n_runs: int,
    seed: int,
    n_samples: int = 200,
    threads: int = 1,
) -> WindowMoments:
    """Average ||Theta_k||^{2n} over ``n_samples`` evenly spaced k in [start, stop].

    Each run contributes one time-average per order; the standard error is
    taken across runs, which are independent.
    """
    window = np.unique(np.linspace(start, stop, n_samples).round().astype(np.int64))
    _, sq, _ = ensemble_sq_norms(model, theta0, StepSchedule.constant(epsilon), window, n_runs, seed, threads)
    orders = tuple(int(n) for n in orders)
    est = np.empty(len(orders))
    se = np.empty(len(orders))
    for i, n in enumerate(orders):
        per_run = np.mean(sq**n, axis=1)
        est[i], se[i] = _mean_and_se(per_run)
    return WindowMoments(orders, est, se, window)


def fit_decay_rate(k: np.ndarray, excess: np.ndarray) -> float:
    """Least-squares rate r in excess ~ C exp(-r k), using only positive excess values."""
    keep = excess > 0
    if np.count_nonzero(keep) < 3:
        raise ValueError("not enough positive points to fit a rate")
    slope, _ = np.polyfit(k[keep].astype(float), np.log(excess[keep]), 1)
    return float(-slope)


@dataclass(frozen=True)
class DiminishingCheck:
    k: np.ndarray
    empirical_msq: np.ndarray
    std_err: np.ndarray
    bound: np.ndarray
    constants: bounds.DiminishingConstants
    n_sigma: float

    @property
    def dominated(self) -> np.ndarray:
        return self.empirical_msq + self.n_sigma * self.std_err <= self.bound

    @property
    def all_dominated(self) -> bool:
        return bool(np.all(self.dominated))


def schedule_mixing_times(model: MarkovNoiseModel, epsilons) -> np.ndarray:
    """tau at delta = eps_j for every step of a schedule, from one mixing profile."""
    eps = np.asarray(epsilons, dtype=float)
    profile = mixing_profile(model, float(np.min(eps)))
    return profile.taus(eps)


def diminishing_check(
    target,
    theta0,
    schedule: StepSchedule,
    horizon: int,
    record,
    n_runs: int,
    seed: int,
    threads: int = 1,
    n_sigma: float = 3.0,
) -> DiminishingCheck:
    """Empirical E||Theta_k||^2 under a decreasing schedule against the diminishing-step bound."""
    model = _noise_model(target)
    cert = solve_lyapunov(model.A_bar)
    eps = schedule.steps(horizon + 1)
    taus = schedule_mixing_times(model, eps)
    dc = bounds.diminishing_constants(eps, taus, cert.gamma_max, model.b_max)
    rec = np.asarray(sorted(set(int(k) for k in record if dc.k_hat <= int(k) <= horizon)), dtype=np.int64)
    if rec.size == 0:
        raise ValueError(f"no recorded step in [k_hat={dc.k_hat}, {horizon}]")
    theta0 = np.asarray(theta0, dtype=float)
    r, sq, logsq = ensemble_sq_norms(model, theta0, schedule, rec, n_runs, seed, threads)
    mom = moments_from_samples(sq, logsq, r, (1,), n_runs, seed)
    curve = bounds.diminishing_bound_curve(
        dc, eps, float(np.linalg.norm(theta0)), model.b_max, cert.gamma_max, cert.gamma_min, int(r[-1])
    )
    return DiminishingCheck(r, mom.estimates[:, 0], mom.std_errors[:, 0], curve[r - dc.k_hat], dc, n_sigma)
