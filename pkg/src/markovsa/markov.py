"""Finite Markov chains and the Markov noise model driving the recursion.

The mixing time here is the uniform-over-initial-state quantity: the first
``tau >= 1`` after which the conditional means of ``A(X_k)`` and ``b(X_k)`` stay
within ``delta`` of their stationary values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .errors import MixingExceedsCap, NonStochastic, NotIrreducible, SteadyStateBiased
from .linalg import induced_norm

ROW_SUM_TOL = 1e-12
STEADY_STATE_TOL = 1e-10
DEFAULT_K_CAP = 10_000


@dataclass(frozen=True)
class FiniteChain:
    transition: np.ndarray

    def __post_init__(self):
        T = np.array(self.transition, dtype=float)
        if T.ndim != 2 or T.shape[0] != T.shape[1] or T.shape[0] == 0:
            raise NonStochastic(f"transition matrix must be square and non-empty, got {T.shape}")
        if np.any(T < 0.0) or np.any(T > 1.0) or not np.all(np.isfinite(T)):
            raise NonStochastic("transition entries must lie in [0, 1]")
        sums = T.sum(axis=1)
        if np.max(np.abs(sums - 1.0)) > ROW_SUM_TOL:
            raise NonStochastic(f"row sums deviate from 1 by up to {np.max(np.abs(sums - 1.0)):.3e}")
        T.setflags(write=False)
        object.__setattr__(self, "transition", T)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    def is_irreducible(self) -> bool:
        n, _ = connected_components(self.transition > 0, directed=True, connection="strong")
        return n == 1

    def period(self) -> int:
        """gcd of cycle lengths through state 0 (the period, for an irreducible chain)."""
        adj = self.transition > 0
        order, _ = breadth_first_order(adj, 0, directed=True, return_predecessors=True)
        level = np.full(self.n_states, -1)
        level[0] = 0
        for u in order:
            for v in np.flatnonzero(adj[u]):
                if level[v] < 0:
                    level[v] = level[u] + 1
        g = 0
        for u, v in zip(*np.nonzero(adj)):
            if level[u] >= 0 and level[v] >= 0:
                g = math.gcd(g, int(level[u] + 1 - level[v]))
        return abs(g)

    def is_aperiodic(self) -> bool:
        return self.period() == 1


def stationary_distribution(chain: FiniteChain) -> np.ndarray:
    """Unique stationary distribution of an irreducible chain (pi Gamma = pi)."""
    if not chain.is_irreducible():
        raise NotIrreducible("transition graph is not strongly connected")
    T = chain.transition
    n = chain.n_states
    M = T.T - np.eye(n)
    M[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    pi = np.linalg.solve(M, rhs)
    # one step of iterative refinement keeps the residual at rounding level
    r = rhs - M @ pi
    pi = pi + np.linalg.solve(M, r)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


@dataclass(frozen=True)
class MarkovNoiseModel:
    """Chain plus per-state ``A(x)`` (d x d) and ``b(x)`` (d,) arrays.

    ``labels`` optionally names the states (TD(0) uses ``(z, z')`` pairs).
    """

    chain: FiniteChain
    A: np.ndarray
    b: np.ndarray
    labels: Sequence | None = field(default=None, compare=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        b = np.array(self.b, dtype=float)
        S = self.chain.n_states
        if A.ndim != 3 or A.shape[0] != S or A.shape[1] != A.shape[2]:
            raise ValueError(f"A must have shape ({S}, d, d), got {A.shape}")
        if b.shape != (S, A.shape[1]):
            raise ValueError(f"b must have shape ({S}, {A.shape[1]}), got {b.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("A and b must be finite")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def n_states(self) -> int:
        return self.chain.n_states

    @cached_property
    def pi(self) -> np.ndarray:
        return stationary_distribution(self.chain)

    @cached_property
    def A_bar(self) -> np.ndarray:
        return np.einsum("x,xij->ij", self.pi, self.A)

    @cached_property
    def b_bar(self) -> np.ndarray:
        return self.pi @ self.b

    @cached_property
    def A_max(self) -> float:
        return max(induced_norm(a) for a in self.A)

    @cached_property
    def b_max(self) -> float:
        return float(np.max(np.linalg.norm(self.b, axis=1)))


def conditional_means(model: MarkovNoiseModel, k: int):
    """Exact ``E[A(X_k) | X_0 = i]`` and ``E[b(X_k) | X_0 = i]`` for every state i.

    Returns arrays of shape (S, d, d) and (S, d).
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    Gk = np.linalg.matrix_power(model.chain.transition, k)
    return np.einsum("ij,jab->iab", Gk, model.A), Gk @ model.b


@dataclass(frozen=True)
class MixingProfile:
    """Exact deviations ``dev[k]`` for k = 1..len(dev) plus a tail certificate.

    ``tail_bound`` bounds every deviation at steps k >= len(dev).
    """

    deviations: np.ndarray
    tail_bound: float

    def tau(self, delta: float) -> int | None:
        if self.tail_bound > delta:
            return None
        above = np.flatnonzero(self.deviations > delta)
        return 1 if above.size == 0 else int(above[-1]) + 2

    def taus(self, deltas) -> np.ndarray:
        """Vectorized :meth:`tau` for many deltas (all must be covered by the tail bound)."""
        deltas = np.asarray(deltas, dtype=float)
        if np.any(deltas < self.tail_bound):
            raise ValueError("profile does not certify the smallest delta; recompute it")
        dev = self.deviations
        if dev.size == 0:
            return np.ones(deltas.shape, dtype=np.int64)
        # tau(delta) = 1 + (last k with dev_k > delta) = 1 + #{k : suffix_max_k > delta}
        suffix = np.maximum.accumulate(dev[::-1])[::-1]
        desc = -suffix  # suffix max is non-increasing, so -suffix is sorted ascending
        count = np.searchsorted(desc, -deltas, side="left")
        return (1 + count).astype(np.int64)


def _tail_scale(model: MarkovNoiseModel) -> float:
    a_spread = max(induced_norm(a - model.A_bar) for a in model.A)
    return max(a_spread, model.b_max)


def mixing_profile(model: MarkovNoiseModel, delta: float, k_cap: int = DEFAULT_K_CAP) -> MixingProfile:
    """Deviations at k = 1, 2, ... until the tail certificate drops to ``delta``.

    For j >= k every deviation is at most ``||Gamma^k - 1 pi||_inf * C`` with
    C = max(max_x ||A(x) - A_bar||, b_max): the row-wise l1 distance to pi never
    increases, because Gamma has unit infinity-norm. This makes the
    "for all k >= tau" quantifier decidable without a heuristic decay fit.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    pi = model.pi
    if np.linalg.norm(model.b_bar) > STEADY_STATE_TOL:
        raise SteadyStateBiased(
            f"stationary mean of b is {np.linalg.norm(model.b_bar):.3e}, expected 0"
        )
    T = model.chain.transition
    scale = _tail_scale(model)
    A_bar = model.A_bar
    devs = []
    Gk = T.copy()
    for _ in range(k_cap):
        tail = float(np.max(np.abs(Gk - pi).sum(axis=1))) * scale
        if tail <= delta:
            return MixingProfile(np.array(devs), tail)
        EA = np.einsum("ij,jab->iab", Gk, model.A)
        Eb = Gk @ model.b
        dev_b = np.linalg.norm(Eb, axis=1).max()
        dev_A = max(induced_norm(A_bar - ea) for ea in EA)
        devs.append(max(dev_A, dev_b))
        Gk = Gk @ T
    raise MixingExceedsCap(f"no mixing time <= {k_cap} certified for delta={delta:g}")


def mixing_time(model: MarkovNoiseModel, delta: float, k_cap: int = DEFAULT_K_CAP) -> int:
    tau = mixing_profile(model, delta, k_cap).tau(delta)
    assert tau is not None
    return tau


def fit_mixing_constant(model: MarkovNoiseModel, deltas: Sequence[float], k_cap: int = DEFAULT_K_CAP) -> dict:
    """Least-squares fit of tau_delta against log(1/delta) over a delta grid.

    Reports the fitted slope/intercept and ``K_sup = max tau / log(1/delta)``, the
    smallest K with ``tau_delta <= K log(1/delta)`` on the grid.
    """
    deltas = np.asarray(deltas, dtype=float)
    if np.any(deltas <= 0) or np.any(deltas >= 1):
        raise ValueError("deltas must lie in (0, 1)")
    taus = np.array([mixing_time(model, d, k_cap) for d in deltas], dtype=float)
    x = np.log(1.0 / deltas)
    if len(deltas) >= 2 and np.ptp(x) > 0:
        slope, intercept = np.polyfit(x, taus, 1)
    else:
        slope, intercept = float("nan"), float("nan")
    return {
        "deltas": deltas,
        "taus": taus.astype(int),
        "slope": float(slope),
        "intercept": float(intercept),
        "K_sup": float(np.max(taus / x)),
    }
