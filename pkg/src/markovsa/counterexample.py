"""Scalar recursion with i.i.d. two-point noise whose high moments blow up.

X = +1 or -1 with probability 1/2 each, A(+1) = b(+1) = 1, A(-1) = -2, b(-1) = -1.
Because the noise is i.i.d., E[Theta_k^j] for j = 0..m obeys an exact linear
recursion, so moment existence can be decided without sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lsa import StepSchedule, ensemble_sq_norms
from .markov import FiniteChain, MarkovNoiseModel

OVERFLOW = 1e300
MAX_ORDER = 200


@dataclass(frozen=True)
class TwoPointScalarModel:
    epsilon: float
    a_plus: float = 1.0
    b_plus: float = 1.0
    a_minus: float = -2.0
    b_minus: float = -1.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")

    @property
    def mean_A(self) -> float:
        return 0.5 * (self.a_plus + self.a_minus)

    @property
    def mean_b(self) -> float:
        return 0.5 * (self.b_plus + self.b_minus)

    def as_noise_model(self) -> MarkovNoiseModel:
        """Same dynamics as a two-state chain with identical rows (i.i.d. noise)."""
        chain = FiniteChain(np.full((2, 2), 0.5))
        A = np.array([[[self.a_plus]], [[self.a_minus]]])
        b = np.array([[self.b_plus], [self.b_minus]])
        return MarkovNoiseModel(chain, A, b, labels=[+1, -1])


def binomial_table(m: int) -> np.ndarray:
    """Pascal triangle rows 0..m as floats (row j holds C(j, 0..j))."""
    if m > MAX_ORDER:
        raise ValueError(f"orders above {MAX_ORDER} are not supported")
    C = np.zeros((m + 1, m + 1))
    C[:, 0] = 1.0
    for j in range(1, m + 1):
        C[j, 1 : j + 1] = C[j - 1, : j] + C[j - 1, 1 : j + 1]
    return C


def transition_coefficients(model: TwoPointScalarModel, m: int) -> np.ndarray:
    """Matrix M with E[Theta_{k+1}^j] = sum_i M[j, i] E[Theta_k^i] for j, i <= m.

    M[j, i] = C(j, i) * 0.5 * sum over both outcomes of (1 + eps a)^i (eps b)^(j - i).
    """
    e = model.epsilon
    C = binomial_table(m)
    M = np.zeros((m + 1, m + 1))
    for a, b in ((model.a_plus, model.b_plus), (model.a_minus, model.b_minus)):
        growth = (1.0 + e * a) ** np.arange(m + 1)
        forcing = (e * b) ** np.arange(m + 1)
        for j in range(m + 1):
            M[j, : j + 1] += 0.5 * C[j, : j + 1] * growth[: j + 1] * forcing[j::-1]
    return M


@dataclass(frozen=True)
class MomentTable:
    """``values[k, j]`` = E[Theta_k^j]; ``overflow[k, j]`` marks entries past 1e300."""

    values: np.ndarray
    overflow: np.ndarray

    @property
    def K(self) -> int:
        return self.values.shape[0] - 1

    def rows(self):
        """(k, order, value, overflowed) tuples for export."""
        for k in range(self.values.shape[0]):
            for j in range(self.values.shape[1]):
                yield k, j, float(self.values[k, j]), bool(self.overflow[k, j])


def exact_moment_recursion(model: TwoPointScalarModel, max_order: int, K: int, theta0: float) -> MomentTable:
    if max_order < 0 or max_order % 2:
        raise ValueError("max_order must be a non-negative even integer")
    if K < 1:
        raise ValueError("K must be >= 1")
    M = transition_coefficients(model, max_order)
    values = np.empty((K + 1, max_order + 1))
    overflow = np.zeros_like(values, dtype=bool)
    values[0] = float(theta0) ** np.arange(max_order + 1)
    dead = np.zeros(max_order + 1, dtype=bool)
    for k in range(K):
        with np.errstate(over="ignore", invalid="ignore"):
            nxt = M @ np.where(dead, 0.0, values[k])
        # an order depends on all lower ones, so overflow propagates upward
        dead = dead | ~np.isfinite(nxt) | (np.abs(nxt) > OVERFLOW)
        dead = np.maximum.accumulate(dead)
        values[k + 1] = np.where(dead, np.inf, nxt)
        overflow[k + 1] = dead
    return MomentTable(values, overflow)


def leading_coefficient(epsilon: float, m: int, model: TwoPointScalarModel | None = None) -> float:
    """E[(1 + eps A)^m], the factor multiplying E[Theta^m] in its own recursion."""
    model = model or TwoPointScalarModel(epsilon)
    return 0.5 * ((1.0 + epsilon * model.a_plus) ** m + (1.0 + epsilon * model.a_minus) ** m)


def divergence_threshold(epsilon: float, max_order: int = MAX_ORDER) -> int:
    """Smallest even m with E[(1 + eps A)^m] > 1.

    Above it the m-th moment recursion has a growth factor over 1 plus the
    positive forcing eps^m E[b^m], so E[Theta_k^m] grows without bound.
    """
    if not 0.0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 0.5)")
    for m in range(2, max_order + 1, 2):
        if leading_coefficient(epsilon, m) > 1.0:
            return m
    raise ValueError(f"no divergent order up to {max_order}")


def moment_fixed_point_2(model: TwoPointScalarModel) -> float:
    """Stationary E[Theta^2] = eps^2 E[b^2] / (1 - E[(1 + eps A)^2]) when E[b] = 0."""
    e = model.epsilon
    eb2 = 0.5 * (model.b_plus**2 + model.b_minus**2)
    growth = 0.5 * ((1 + e * model.a_plus) ** 2 + (1 + e * model.a_minus) ** 2)
    if growth >= 1.0:
        return math.inf
    return e * e * eb2 / (1.0 - growth)


@dataclass(frozen=True)
class CrossCheck:
    order: int
    K: int
    exact: float
    empirical: float
    std_error: float

    @property
    def z_score(self) -> float:
        if self.std_error == 0.0:
            return 0.0 if self.exact == self.empirical else math.inf
        return abs(self.empirical - self.exact) / self.std_error

    @property
    def agrees(self) -> bool:
        return self.z_score <= 4.0


def monte_carlo_cross_check(
    model: TwoPointScalarModel, order: int, K: int, n_runs: int, seed: int, theta0: float = 0.0, threads: int = 1
) -> CrossCheck:
    """Compare the simulated E[Theta_K^m] (m even) against the exact recursion."""
    if order % 2:
        raise ValueError("order must be even")
    exact = float(exact_moment_recursion(model, max(order, 2), K, theta0).values[K, order])
    if order == 0:
        return CrossCheck(0, K, exact, 1.0, 0.0)
    noise = model.as_noise_model()
    _, sq, _ = ensemble_sq_norms(
        noise, [theta0], StepSchedule.constant(model.epsilon), [K], n_runs, seed, threads
    )
    samples = np.ascontiguousarray(sq[:, 0]) ** (order // 2)
    mean = float(np.sum(samples) / n_runs)
    se = float(np.std(samples, ddof=1) / math.sqrt(n_runs))
    return CrossCheck(order, K, exact, mean, se)


def order_report(epsilon: float, max_order: int, K: int, theta0: float = 0.0):
    """Per even order: leading coefficient, E[Theta_K^m], and converged/diverged status."""
    model = TwoPointScalarModel(epsilon)
    table = exact_moment_recursion(model, max_order, K, theta0)
    m_star = divergence_threshold(epsilon)
    out = []
    for m in range(2, max_order + 1, 2):
        coef = leading_coefficient(epsilon, m)
        out.append({
            "order": m,
            "leading_coefficient": coef,
            "moment_at_K": float(table.values[K, m]),
            "diverged": bool(coef > 1.0),
            "m_star": m_star,
        })
    return out, table
