"""Finite-time moment bounds for constant and diminishing step sizes.

Naming follows the quantities the bounds are built from: ``kappa1``/``kappa2``
bound the mixing-conditioned drift error, ``kappa2_tilde`` the one-step
forcing, and ``gamma_min``/``gamma_max`` are the extreme eigenvalues of the
Lyapunov matrix P.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidStep,
    KTooSmall,
    MomentOrderTooHigh,
    NotNegativeDefinite,
    PreconditionViolated,
    ScheduleInvalid,
    StepInvalid,
)
from .linalg import eig_extremes_symmetric

DRIFT_LIMIT = 0.05
STEP_TAU_LIMIT = 0.25
CONTRACTION = 0.9


@dataclass(frozen=True)
class BoundConstants:
    b_max: float
    A_max: float
    gamma_min: float
    gamma_max: float
    tau: int
    epsilon: float
    kappa1: float
    kappa2: float
    kappa2_tilde: float

    @property
    def step_tau_ok(self) -> bool:
        return self.epsilon * self.tau <= STEP_TAU_LIMIT

    @property
    def drift(self) -> float:
        return self.kappa1 * self.epsilon * self.tau + self.epsilon * self.gamma_max

    @property
    def drift_ok(self) -> bool:
        return self.drift <= DRIFT_LIMIT

    @property
    def valid(self) -> bool:
        return self.step_tau_ok and self.drift_ok

    @property
    def contraction(self) -> float:
        """Per-step factor 1 - 0.9 eps / gamma_max of the Lyapunov drift."""
        return 1.0 - CONTRACTION * self.epsilon / self.gamma_max

    @property
    def steady_state_term(self) -> float:
        return self.kappa2_tilde * self.gamma_max * self.epsilon * self.tau / (CONTRACTION * self.gamma_min)

    def transient_term(self, theta0_norm: float, k: int) -> float:
        r = 1.5 * theta0_norm + 0.5 * self.b_max
        return (self.gamma_max / self.gamma_min) * self.contraction ** (k - self.tau) * r * r


def kappas(gamma_max: float, b_max: float) -> tuple[float, float, float]:
    k1 = 62.0 * gamma_max * (1.0 + b_max)
    k2 = 55.0 * gamma_max * (1.0 + b_max) ** 3
    return k1, k2, 2.0 * (k2 + gamma_max * b_max**2)


def compute_constants(
    b_max: float,
    gamma_max: float,
    gamma_min: float,
    tau: int,
    epsilon: float,
    A_max: float = 1.0,
) -> BoundConstants:
    if not epsilon > 0:
        raise InvalidStep(f"step size must be positive, got {epsilon}")
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if not (gamma_max > 0 and gamma_min > 0) or gamma_min > gamma_max:
        raise ValueError("need 0 < gamma_min <= gamma_max")
    if b_max < 0:
        raise ValueError("b_max must be non-negative")
    k1, k2, k2t = kappas(gamma_max, b_max)
    return BoundConstants(
        b_max=float(b_max), A_max=float(A_max), gamma_min=float(gamma_min),
        gamma_max=float(gamma_max), tau=int(tau), epsilon=float(epsilon),
        kappa1=k1, kappa2=k2, kappa2_tilde=k2t,
    )


def _require_valid(c: BoundConstants) -> None:
    if not c.contraction > 0:
        # cannot happen when A_max <= 1 (then gamma_max >= 1/2), but guards raw inputs
        raise StepInvalid(f"0.9 eps / gamma_max = {1 - c.contraction:.4g} >= 1: no contraction")
    if not c.valid:
        raise StepInvalid(
            f"step size {c.epsilon:g} with tau={c.tau}: eps*tau={c.epsilon * c.tau:.4g} "
            f"(limit 0.25), kappa1*eps*tau + eps*gamma_max={c.drift:.4g} (limit 0.05)"
        )


def mean_square_bound(c: BoundConstants, theta0_norm: float, k: int) -> float:
    """Upper bound on E||Theta_k||^2 for k >= tau under the step validity conditions."""
    _require_valid(c)
    if k < c.tau:
        raise KTooSmall(f"bound holds for k >= tau={c.tau}, got k={k}")
    return c.transient_term(theta0_norm, k) + c.steady_state_term


def mean_square_bound_curve(c: BoundConstants, theta0_norm: float, ks) -> np.ndarray:
    return np.array([mean_square_bound(c, theta0_norm, int(k)) for k in ks])


def sample_complexity(c: BoundConstants, target_multiple: float, theta0_norm: float = 0.0) -> int:
    """Smallest k >= tau whose transient term is <= (target_multiple - 1) x steady-state term."""
    if not target_multiple > 1:
        raise ValueError("target_multiple must exceed 1")
    threshold = (target_multiple - 1.0) * c.steady_state_term
    t0 = c.transient_term(theta0_norm, c.tau)
    if t0 <= threshold:
        return c.tau
    a = c.contraction
    m = max(0, math.ceil(math.log(threshold / t0) / math.log(a)))
    # guard the ceiling against rounding in the logs
    while m > 0 and c.transient_term(theta0_norm, c.tau + m - 1) <= threshold:
        m -= 1
    while c.transient_term(theta0_norm, c.tau + m) > threshold:
        m += 1
    return c.tau + m


def log_double_factorial(n: int) -> float:
    """log((2n - 1)!!) = log((2n)!) - n log 2 - log(n!)."""
    if n <= 0:
        return 0.0
    return math.lgamma(2 * n + 1) - n * math.log(2.0) - math.lgamma(n + 1)


def double_factorial(n: int) -> float:
    """(2n - 1)!! = 1 * 3 * ... * (2n - 1) as a float (log-domain above n = 150)."""
    if n <= 0:
        return 1.0
    if n > 150:
        log_value = log_double_factorial(n)
        return math.exp(log_value) if log_value < 709.0 else math.inf
    out = 1.0
    for j in range(1, 2 * n, 2):
        out *= j
    return out


def default_higher_moment_constants(c: BoundConstants) -> tuple[float, float]:
    """(c_const, c_tilde) defaults: 11 kappa2_tilde gamma_max / gamma_min and 10 gamma_max / 9.

    The higher-moment constants are only asserted to exist; these defaults take
    the computable branch and are not claimed to be the sharp values.
    """
    return 11.0 * c.kappa2_tilde * c.gamma_max / c.gamma_min, 10.0 * c.gamma_max / 9.0


def higher_moment_order_limit(c: BoundConstants) -> float:
    """Right-hand side of the admissibility condition eps * tau * n <= limit."""
    return (1.0 / (4.0 * math.sqrt(c.gamma_min))) * (1.0 / c.gamma_min + c.b_max)


def higher_moment_bound(
    c: BoundConstants, n: int, c_const: float | None = None, c_tilde: float | None = None
) -> tuple[float, int]:
    """Bound (2n-1)!! (c_const tau eps)^n on E||Theta_k||^{2n} and the k_n after which it applies."""
    if n < 1:
        raise ValueError("moment order n must be >= 1")
    dc, dt = default_higher_moment_constants(c)
    c_const = dc if c_const is None else float(c_const)
    c_tilde = dt if c_tilde is None else float(c_tilde)
    if not (c_const > 0 and c_tilde > 0):
        raise ValueError("c_const and c_tilde must be positive")
    if c.epsilon * c.tau * n > higher_moment_order_limit(c):
        raise MomentOrderTooHigh(
            f"eps*tau*n = {c.epsilon * c.tau * n:.4g} exceeds {higher_moment_order_limit(c):.4g}"
        )
    x = c_const * c.tau * c.epsilon
    log_bound = log_double_factorial(n) + n * math.log(x)
    bound = math.exp(log_bound) if log_bound < 709.0 else math.inf
    if n <= 150 and bound != math.inf:
        bound = double_factorial(n) * x**n
    harmonic = sum(1.0 / m for m in range(1, n + 1))
    k_n = math.ceil(n * c.tau + (c_tilde / c.epsilon) * math.log(1.0 / c.epsilon) * harmonic)
    return bound, k_n


# --- diminishing step sizes -------------------------------------------------------


@dataclass(frozen=True)
class DiminishingConstants:
    """Constants for a non-increasing schedule over a finite horizon.

    ``taus[j]`` is the mixing time at delta = eps_j for j < horizon.
    """

    k_star: int
    kappa_s: float
    kappa2_check: float
    k_hat: int
    taus: np.ndarray
    kappa1: float
    kappa2: float

    @property
    def horizon(self) -> int:
        return len(self.taus)


def diminishing_constants(
    epsilons, taus, gamma_max: float, b_max: float
) -> DiminishingConstants:
    """k*, kappa_s, kappa2_check and k_hat for a schedule ``epsilons`` with mixing times ``taus``.

    Both arrays cover the same finite horizon; the "for all k >= ..." conditions
    are checked on that horizon.
    """
    eps = np.asarray(epsilons, dtype=float)
    taus = np.asarray(taus, dtype=np.int64)
    if eps.shape != taus.shape or eps.ndim != 1 or eps.size < 2:
        raise ValueError("epsilons and taus must be matching 1-D arrays")
    if np.any(np.diff(eps) > 0) or np.any(eps <= 0):
        raise ScheduleInvalid("step sizes must be positive and non-increasing")
    H = eps.size
    ks = np.arange(H)
    short = np.flatnonzero(ks - taus < 0)
    k_star = max(1, int(short[-1]) + 1 if short.size else 1)
    if k_star >= H:
        raise ScheduleInvalid("horizon too short: k - tau_{eps_k} < 0 throughout")
    tail = ks[k_star:]
    ratios = eps[tail - taus[tail]] / eps[tail]
    kappa_s = float(np.max(ratios))
    k1, k2, _ = kappas(gamma_max, b_max)
    kappa2_check = 2.0 * k2 * kappa_s + 2.0 * gamma_max * b_max**2

    drift = k1 * kappa_s * eps * taus + gamma_max * eps
    ok = drift <= DRIFT_LIMIT
    # k_hat must leave every later step (on the horizon) drift-valid
    bad_after = np.flatnonzero(~ok)
    first_all_ok = int(bad_after[-1]) + 1 if bad_after.size else 0
    k_hat = max(k_star, first_all_ok)
    if k_hat >= H:
        raise ScheduleInvalid("drift condition never holds on the horizon")
    if k_hat * eps[0] > STEP_TAU_LIMIT:
        raise ScheduleInvalid(
            f"k_hat={k_hat} violates k_hat * eps_0 <= 1/4 (eps_0={eps[0]:g}); decrease eps_0"
        )
    return DiminishingConstants(k_star, kappa_s, kappa2_check, k_hat, taus, k1, k2)


def diminishing_bound_curve(
    dc: DiminishingConstants,
    epsilons,
    theta0_norm: float,
    b_max: float,
    gamma_max: float,
    gamma_min: float,
    k_max: int,
) -> np.ndarray:
    """Bound values for k = k_hat..k_max (index 0 is k_hat)."""
    eps = np.asarray(epsilons, dtype=float)
    if k_max < dc.k_hat:
        raise KTooSmall(f"bound holds for k >= k_hat={dc.k_hat}")
    if k_max > dc.horizon:
        raise ValueError(f"k_max={k_max} beyond the horizon {dc.horizon}")
    r = 1.5 * theta0_norm + 0.5 * b_max
    lead = (gamma_max / gamma_min) * r * r
    out = np.empty(k_max - dc.k_hat + 1)
    prod = 1.0
    acc = 0.0
    out[0] = lead
    for i, j in enumerate(range(dc.k_hat, k_max), start=1):
        a_j = 1.0 - CONTRACTION * eps[j] / gamma_max
        b_j = eps[j] ** 2 * dc.taus[j]
        prod *= a_j
        acc = a_j * acc + b_j
        out[i] = lead * prod + dc.kappa2_check * acc
    return out


def diminishing_bound(
    dc: DiminishingConstants,
    epsilons,
    theta0_norm: float,
    b_max: float,
    gamma_max: float,
    gamma_min: float,
    k: int,
) -> float:
    return float(diminishing_bound_curve(dc, epsilons, theta0_norm, b_max, gamma_max, gamma_min, k)[-1])


def constant_schedule_reference(
    dc: DiminishingConstants,
    epsilon: float,
    tau: int,
    theta0_norm: float,
    b_max: float,
    gamma_max: float,
    gamma_min: float,
    k: int,
) -> float:
    """Closed form of the diminishing bound when eps_j = eps and tau_j = tau.

    Products become a^(k - k_hat) and the forcing sum a geometric series:
    lead a^m + kappa2_check eps^2 tau (1 - a^m) / (1 - a), m = k - k_hat.
    """
    if k < dc.k_hat:
        raise KTooSmall(f"bound holds for k >= k_hat={dc.k_hat}")
    m = k - dc.k_hat
    log_a = math.log1p(-CONTRACTION * epsilon / gamma_max)
    r = 1.5 * theta0_norm + 0.5 * b_max
    lead = (gamma_max / gamma_min) * r * r
    geometric = -math.expm1(m * log_a) / (CONTRACTION * epsilon / gamma_max)
    return lead * math.exp(m * log_a) + dc.kappa2_check * epsilon**2 * tau * geometric


# --- negative-definite A_bar --------------------------------------------------------


def neg_def_rate(A_bar) -> float:
    """rho = -lambda_max((A + A^T) / 2); raises unless the symmetric part is negative definite."""
    A = np.atleast_2d(np.asarray(A_bar, dtype=float))
    _, lam_max = eig_extremes_symmetric(0.5 * (A + A.T))
    if lam_max >= 0:
        raise NotNegativeDefinite(f"symmetric part has eigenvalue {lam_max:.4g} >= 0")
    return -lam_max


def neg_def_bound(A_bar, b_max: float, theta0_norm: float, k: int, tau: int, epsilon: float) -> float:
    """Mean-square bound from the plain ||theta||^2 Lyapunov function (P = I).

    With rho = -lambda_max of the symmetric part of A_bar, the one-step drift is
    at most -(2 rho - 0.1) eps E||Theta_k||^2 + kappa2_tilde eps^2 tau, so the
    contraction 1 - 0.9 rho eps is admissible for rho >= 1/11 and the recursion
    settles at kappa2_tilde eps tau / (0.9 rho).
    """
    rho = neg_def_rate(A_bar)
    if rho < 1.0 / 11.0:
        raise PreconditionViolated(f"rho={rho:.4g} < 1/11: the 0.9 rho contraction is not implied")
    c = compute_constants(b_max, 1.0, 1.0, tau, epsilon)
    _require_valid(c)
    if k < tau:
        raise KTooSmall(f"bound holds for k >= tau={tau}, got k={k}")
    r = 1.5 * theta0_norm + 0.5 * b_max
    return (1.0 - CONTRACTION * rho * epsilon) ** (k - tau) * r * r + c.kappa2_tilde * epsilon * tau / (CONTRACTION * rho)
