"""TD(0) and TD(lambda) policy evaluation as centered linear stochastic approximation.

Both compilers normalize the features first, then center the iterate at the
projected fixed point theta*, so the compiled noise has a zero stationary mean
of b and the averaged matrix equals the ODE matrix A_tilde.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .errors import NotHurwitz, PeriodicChain, RankDeficientFeatures, ZeroFeatures
from .linalg import solve_lyapunov
from .markov import FiniteChain, MarkovNoiseModel, mixing_time, stationary_distribution


@dataclass(frozen=True)
class TdProblem:
    """Fixed-policy MDP with linear features.

    ``features`` is N x d with row i the feature vector of state i.
    """

    chain: FiniteChain
    rewards: np.ndarray
    discount: float
    features: np.ndarray
    lam: float = 0.0

    def __post_init__(self):
        chain = self.chain if isinstance(self.chain, FiniteChain) else FiniteChain(self.chain)
        object.__setattr__(self, "chain", chain)
        c = np.asarray(self.rewards, dtype=float).reshape(-1)
        F = np.asarray(self.features, dtype=float)
        if F.ndim == 1:
            F = F[:, None]
        N = chain.n_states
        if c.shape != (N,):
            raise ValueError(f"rewards must have length {N}")
        if F.ndim != 2 or F.shape[0] != N:
            raise ValueError(f"features must be {N} x d")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if not 0.0 <= self.lam < 1.0:
            raise ValueError("lambda must lie in [0, 1)")
        object.__setattr__(self, "rewards", c)
        object.__setattr__(self, "features", F)

    @property
    def n_states(self) -> int:
        return self.chain.n_states

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def phi_max(self) -> float:
        return float(np.max(np.linalg.norm(self.features, axis=1)))

    @property
    def c_max(self) -> float:
        return float(np.max(np.abs(self.rewards)))

    def value_function(self) -> np.ndarray:
        """V = (I - alpha Gamma)^{-1} c_bar."""
        N = self.n_states
        return np.linalg.solve(np.eye(N) - self.discount * self.chain.transition, self.rewards)


def normalization_target(discount: float, lam: float = 0.0) -> float:
    return math.sqrt((1.0 - discount * lam) / (1.0 + discount))


def normalize_features(p: TdProblem) -> tuple[TdProblem, float]:
    """Scale features so phi_max <= sqrt((1 - alpha lambda) / (1 + alpha)).

    That cap keeps every per-sample matrix at induced norm <= 1.
    """
    phi_max = p.phi_max
    if phi_max == 0.0:
        raise ZeroFeatures("all feature vectors are zero")
    scale = min(1.0, normalization_target(p.discount, p.lam) / phi_max)
    if scale == 1.0:
        return p, 1.0
    return replace(p, features=p.features * scale), scale


def _check_rank(F: np.ndarray) -> None:
    if np.linalg.matrix_rank(F) < F.shape[1]:
        raise RankDeficientFeatures(f"feature matrix ({F.shape[0]}x{F.shape[1]}) is not full column rank")


@dataclass(frozen=True)
class TraceNoiseModel:
    """TD(lambda) noise X_k = (Z_k, Z_{k+1}, trace_k) with trace_k = alpha lambda trace_{k-1} + phi(Z_k).

    The state space is uncountable, so this carries the ingredients the
    simulator needs rather than per-state matrices. Iterates are centered:
    A(X) theta + b(X) = trace (c(z) - (phi(z) - alpha phi(z'))^T (theta + theta*)).
    """

    chain: FiniteChain
    features: np.ndarray
    rewards: np.ndarray
    discount: float
    lam: float
    theta_star: np.ndarray
    A_bar: np.ndarray

    @property
    def trace_decay(self) -> float:
        return self.discount * self.lam

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @cached_property
    def pi(self) -> np.ndarray:
        return stationary_distribution(self.chain)

    @property
    def phi_max(self) -> float:
        return float(np.max(np.linalg.norm(self.features, axis=1)))

    @property
    def trace_bound(self) -> float:
        return self.phi_max / (1.0 - self.trace_decay)

    @property
    def A_max(self) -> float:
        """Norm bound (1 + alpha) phi_max^2 / (1 - alpha lambda) over all noise states."""
        return (1.0 + self.discount) * self.phi_max**2 / (1.0 - self.trace_decay)

    @property
    def b_max(self) -> float:
        c_max = float(np.max(np.abs(self.rewards)))
        th = float(np.linalg.norm(self.theta_star))
        return (c_max + (1.0 + self.discount) * self.phi_max * th) * self.trace_bound


@dataclass(frozen=True)
class CompiledTd:
    model: object
    A_tilde: np.ndarray
    b_tilde: np.ndarray
    theta_star: np.ndarray
    normalization_scale: float
    problem: TdProblem
    pi: np.ndarray

    @property
    def dim(self) -> int:
        return self.A_tilde.shape[0]

    def centered_start(self, theta0=None) -> np.ndarray:
        """Centered initial iterate for an uncentered start (default: zero weights)."""
        t0 = np.zeros(self.dim) if theta0 is None else np.asarray(theta0, dtype=float)
        return t0 - self.theta_star


def _prepare(p: TdProblem, expect_lambda: bool):
    if expect_lambda and not 0.0 < p.lam < 1.0:
        raise ValueError("TD(lambda) needs lambda in (0, 1)")
    if not expect_lambda and p.lam != 0.0:
        raise ValueError("TD(0) needs lambda = 0")
    if not p.chain.is_aperiodic():
        raise PeriodicChain(f"TD chain must be aperiodic (period {p.chain.period()})")
    scaled, scale = normalize_features(p)
    _check_rank(scaled.features)
    pi = stationary_distribution(scaled.chain)
    return scaled, scale, pi


def _equilibrium(A_tilde: np.ndarray, b_tilde: np.ndarray) -> np.ndarray:
    cert = solve_lyapunov(A_tilde)
    if not cert.hurwitz:
        raise NotHurwitz(f"compiled A_tilde is not Hurwitz: {cert.diagnostics}")
    return -np.linalg.solve(A_tilde, b_tilde)


def td0_matrices(p: TdProblem, pi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    F, G, a = p.features, p.chain.transition, p.discount
    FD = F.T * pi
    return -FD @ (F - a * G @ F), FD @ p.rewards


def compile_td0(p: TdProblem) -> CompiledTd:
    scaled, scale, pi = _prepare(p, expect_lambda=False)
    A_tilde, b_tilde = td0_matrices(scaled, pi)
    theta_star = _equilibrium(A_tilde, b_tilde)

    F, G, a, c = scaled.features, scaled.chain.transition, scaled.discount, scaled.rewards
    pairs = [(z, z2) for z in range(scaled.n_states) for z2 in range(scaled.n_states) if G[z, z2] > 0]
    index = {pr: i for i, pr in enumerate(pairs)}
    S = len(pairs)
    T = np.zeros((S, S))
    for i, (_, z2) in enumerate(pairs):
        for z3 in np.flatnonzero(G[z2] > 0):
            T[i, index[(z2, z3)]] = G[z2, z3]
    A = np.empty((S, scaled.dim, scaled.dim))
    b = np.empty((S, scaled.dim))
    for i, (z, z2) in enumerate(pairs):
        A[i] = -np.outer(F[z], F[z] - a * F[z2])
        # centered: Theta <- Theta - theta* turns the forcing into A theta* + c phi
        b[i] = A[i] @ theta_star + c[z] * F[z]
    model = MarkovNoiseModel(FiniteChain(T), A, b, labels=pairs)
    return CompiledTd(model, A_tilde, b_tilde, theta_star, scale, scaled, pi)


def tdlambda_matrices(p: TdProblem, pi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """A_tilde = F^T D (U - I) F and b_tilde = F^T D c_tilde with the series in closed form."""
    F, G, a, lam = p.features, p.chain.transition, p.discount, p.lam
    N = p.n_states
    resolvent = np.linalg.inv(np.eye(N) - lam * a * G)
    U = (1.0 - lam) * a * G @ resolvent
    c_tilde = resolvent @ p.rewards
    FD = F.T * pi
    return FD @ (U - np.eye(N)) @ F, FD @ c_tilde


def compile_tdlambda(p: TdProblem) -> CompiledTd:
    scaled, scale, pi = _prepare(p, expect_lambda=True)
    A_tilde, b_tilde = tdlambda_matrices(scaled, pi)
    theta_star = _equilibrium(A_tilde, b_tilde)
    model = TraceNoiseModel(
        chain=scaled.chain, features=np.ascontiguousarray(scaled.features),
        rewards=np.ascontiguousarray(scaled.rewards), discount=float(scaled.discount),
        lam=float(scaled.lam), theta_star=theta_star, A_bar=A_tilde,
    )
    return CompiledTd(model, A_tilde, b_tilde, theta_star, scale, scaled, pi)


def _z_chain_tv(G: np.ndarray, pi: np.ndarray, k: int) -> float:
    return float(np.max(np.abs(np.linalg.matrix_power(G, k) - pi).sum(axis=1)))


def tdlambda_mixing_time(compiled: CompiledTd, delta: float, k_cap: int = 10_000) -> int:
    """Deterministic over-estimate of the TD(lambda) mixing time.

    tau = tau_chain(delta / 2) + ceil(log(2 C / delta) / log(1 / (alpha lambda))), where
    tau_chain is the first k with max_i ||Gamma^(k-1)(i, .) - pi||_1 * M <= delta / 2
    (M bounds the per-state A and b spread) and C = (1 + alpha) phi_max^2 / (1 - alpha lambda)
    (or the b-norm bound, if larger) caps what trace terms older than the
    window can contribute.
    """
    model = compiled.model
    if not isinstance(model, TraceNoiseModel):
        raise TypeError("expects a compiled TD(lambda) problem")
    G, pi = model.chain.transition, model.pi
    spread = 2.0 * max(model.A_max, model.b_max)
    tau_chain = None
    Gk = np.eye(len(pi))
    for k in range(1, k_cap + 1):
        # X_k = (Z_k, Z_{k+1}, .) conditioned on Z_1 after one step
        if float(np.max(np.abs(Gk - pi).sum(axis=1))) * spread <= delta / 2:
            tau_chain = k
            break
        Gk = Gk @ G
    if tau_chain is None:
        raise ValueError(f"chain does not mix within {k_cap} steps")
    # dropping trace terms older than m steps moves A by <= decay^m * C_A and b by <= decay^m * C_b
    C_A = (1.0 + model.discount) * model.phi_max * model.trace_bound
    C_b = model.b_max
    C = max(C_A, C_b)
    decay = model.trace_decay
    extra = max(0, math.ceil(math.log(2.0 * C / delta) / math.log(1.0 / decay)))
    return tau_chain + extra


def estimate_trace_deviation(compiled: CompiledTd, k: int, n_samples: int, seed: int) -> float:
    """Monte Carlo estimate of max_z ||A_tilde - E[A(X_k) | Z_0 = z]|| (trace started at phi(Z_0))."""
    model = compiled.model
    G = model.chain.transition
    F, a, lam = model.features, model.discount, model.lam
    rng = np.random.default_rng(seed)
    N = len(model.pi)
    cum = np.cumsum(G, axis=1)
    cum[:, -1] = 1.0
    worst = 0.0
    for z0 in range(N):
        z = np.full(n_samples, z0)
        trace = np.repeat(F[z0][None, :], n_samples, axis=0)
        for _ in range(k):
            u = rng.random(n_samples)
            z = np.minimum((u[:, None] >= cum[z]).sum(axis=1), N - 1)
            trace = a * lam * trace + F[z]
        u = rng.random(n_samples)
        zn = np.minimum((u[:, None] >= cum[z]).sum(axis=1), N - 1)
        mean_A = -np.einsum("si,sj->ij", trace, F[z] - a * F[zn]) / n_samples
        worst = max(worst, float(np.linalg.norm(compiled.A_tilde - mean_A, 2)))
    return worst


def td0_mixing_time(compiled: CompiledTd, delta: float) -> int:
    return mixing_time(compiled.model, delta)
