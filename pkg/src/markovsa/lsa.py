"""Simulation of Theta_{k+1} = Theta_k + eps_k (A(X_k) Theta_k + b(X_k)).

Randomness
----------
A single trajectory with seed ``s`` draws ``K + 1`` uniforms from
``numpy.random.Generator(PCG64(s))``: the first picks ``X_0`` from the
stationary distribution (it is drawn, and ignored, even when ``x0`` is given)
and ``u[k + 1]`` drives the transition out of ``X_k`` by inverse-CDF lookup on
the transition row. Trajectory ``r`` of an ensemble uses
``s = derive_seed(base_seed, r)`` (a splitmix64 finalizer), so any single run
can be replayed with :func:`simulate` and results never depend on how the
runs are scheduled across threads.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import PreconditionViolated
from .markov import MarkovNoiseModel

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
# rounding allowance for the path-wise inequality checks
PATH_TOL = 1e-12
# largest log-value that still exponentiates to a finite double
_LOG_MAX = 709.0


def derive_seed(base_seed: int, index: int) -> int:
    """splitmix64 finalizer applied to ``base_seed + (index + 1) * golden_gamma``."""
    z = (int(base_seed) + (int(index) + 1) * GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _uniforms(seed: int, K: int) -> np.ndarray:
    return np.random.Generator(np.random.PCG64(int(seed) & MASK64)).random(K + 1)


@dataclass(frozen=True)
class StepSchedule:
    kind: str = "constant"
    epsilon: float | None = None
    epsilons: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "constant":
            if self.epsilon is None or not self.epsilon > 0:
                raise ValueError("constant schedule needs epsilon > 0")
        elif self.kind == "sequence":
            eps = np.asarray(self.epsilons, dtype=float)
            if eps.ndim != 1 or eps.size == 0 or np.any(eps <= 0):
                raise ValueError("sequence schedule needs a non-empty positive 1-D sequence")
            if np.any(np.diff(eps) > 0):
                raise ValueError("step-size sequence must be non-increasing")
            eps.setflags(write=False)
            object.__setattr__(self, "epsilons", eps)
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def constant(cls, epsilon: float) -> StepSchedule:
        return cls("constant", epsilon=float(epsilon))

    @classmethod
    def sequence(cls, epsilons) -> StepSchedule:
        return cls("sequence", epsilons=epsilons)

    @classmethod
    def power(cls, epsilon0: float, exponent: float, length: int) -> StepSchedule:
        """eps_j = epsilon0 / (j + 1) ** exponent for j < length."""
        j = np.arange(length, dtype=float)
        return cls("sequence", epsilons=epsilon0 / (j + 1.0) ** exponent)

    def steps(self, K: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(K, self.epsilon)
        if len(self.epsilons) < K:
            raise ValueError(f"schedule has {len(self.epsilons)} steps, {K} requested")
        return np.ascontiguousarray(self.epsilons[:K])

    def max_step(self, K: int | None = None) -> float:
        if self.kind == "constant":
            return self.epsilon
        return float(self.epsilons[0])


@dataclass(frozen=True)
class Trajectory:
    """Iterates Theta_0..Theta_K and the noise path.

    For finite models ``noise_path[k]`` is X_k (k < K). For eligibility-trace
    models it is the underlying chain path Z_0..Z_K, with X_k = (Z_k, Z_{k+1}, trace_k).
    """

    theta: np.ndarray
    noise_path: np.ndarray
    schedule: StepSchedule
    model: object = field(default=None, repr=False, compare=False)
    trace_norms: np.ndarray | None = field(default=None, repr=False)

    @property
    def K(self) -> int:
        return self.theta.shape[0] - 1

    @property
    def steps(self) -> np.ndarray:
        return self.schedule.steps(self.K)


def _is_trace_model(model) -> bool:
    return hasattr(model, "trace_decay")


def _sample_start(pi: np.ndarray, u0: float) -> int:
    cum = np.cumsum(pi)
    return int(min(np.searchsorted(cum, u0, side="right"), len(pi) - 1))


def _cum_rows(T: np.ndarray) -> np.ndarray:
    cum = np.cumsum(T, axis=1)
    cum[:, -1] = 1.0
    return np.ascontiguousarray(cum)


def simulate(model, theta0, schedule: StepSchedule, K: int, seed: int, x0: int | None = None) -> Trajectory:
    """Run one trajectory of K steps. Deterministic in (seed, inputs)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    theta0 = np.asarray(theta0, dtype=float).reshape(-1)
    if theta0.shape[0] != model.dim:
        raise ValueError(f"theta0 has dimension {theta0.shape[0]}, model has {model.dim}")
    eps = schedule.steps(K)
    u = _uniforms(seed, K)
    thetas = np.empty((K + 1, model.dim))
    if _is_trace_model(model):
        z0 = _sample_start(model.pi, u[0]) if x0 is None else int(x0)
        zs = np.empty(K + 1, dtype=np.int64)
        norms = np.empty(K)
        _kernels.trace_full(
            model.features, model.rewards, model.discount, model.lam, model.theta_star,
            _cum_rows(model.chain.transition), theta0, z0, eps, u, thetas, zs, norms,
        )
        return Trajectory(thetas, zs, schedule, model, norms)
    x = _sample_start(model.pi, u[0]) if x0 is None else int(x0)
    states = np.empty(K, dtype=np.int64)
    _kernels.finite_full(
        np.ascontiguousarray(model.A), np.ascontiguousarray(model.b),
        _cum_rows(model.chain.transition), theta0, x, eps, u, thetas, states,
    )
    return Trajectory(thetas, states, schedule, model)


def ensemble_sq_norms(
    model,
    theta0,
    schedule: StepSchedule,
    record: Sequence[int],
    n_runs: int,
    base_seed: int,
    threads: int = 1,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Squared norms ||Theta_k||^2 (and their logs) at the recorded k, per run.

    Returns the sorted record plus two ``(n_runs, len(record))`` arrays. Row r depends only on
    ``derive_seed(base_seed, r)``; ``threads`` only changes wall time.
    """
    record = np.asarray(sorted(set(int(k) for k in record)), dtype=np.int64)
    if record.size == 0 or record[0] < 0:
        raise ValueError("record must be a non-empty set of non-negative step indices")
    K = max(int(record[-1]), 1)
    theta0 = np.asarray(theta0, dtype=float).reshape(-1)
    eps = schedule.steps(K)
    cum = _cum_rows(model.chain.transition)
    pi = model.pi
    sq = np.empty((n_runs, record.size))
    logsq = np.empty((n_runs, record.size))
    trace = _is_trace_model(model)
    if not trace:
        A = np.ascontiguousarray(model.A)
        b = np.ascontiguousarray(model.b)

    def work(rows: range) -> None:
        for r in rows:
            u = _uniforms(derive_seed(base_seed, r), K)
            x = _sample_start(pi, u[0])
            if trace:
                _kernels.trace_record(
                    model.features, model.rewards, model.discount, model.lam, model.theta_star,
                    cum, theta0, x, eps, u, record, sq[r], logsq[r],
                )
            else:
                _kernels.finite_record(A, b, cum, theta0, x, eps, u, record, sq[r], logsq[r])

    threads = resolve_threads(threads)
    if threads == 1:
        work(range(n_runs))
    else:
        chunk = max(1, math.ceil(n_runs / (4 * threads)))
        blocks = [range(i, min(i + chunk, n_runs)) for i in range(0, n_runs, chunk)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, blocks))
    return record, sq, logsq


def resolve_threads(threads: int | None) -> int:
    if not threads:
        return os.cpu_count() or 1
    return max(1, int(threads))


@dataclass(frozen=True)
class EnsembleMoments:
    """Sample means of ||Theta_k||^{2n} with standard errors.

    ``estimates[i, j]`` belongs to ``record[i]`` and ``orders[j]``; ``inf``
    marks a moment that overflowed even in the log domain.
    """

    orders: tuple[int, ...]
    record: np.ndarray
    estimates: np.ndarray
    std_errors: np.ndarray
    n_runs: int
    seed: int

    def estimate(self, k: int, n: int) -> float:
        return float(self.estimates[self._row(k), self.orders.index(n)])

    def std_error(self, k: int, n: int) -> float:
        return float(self.std_errors[self._row(k), self.orders.index(n)])

    def _row(self, k: int) -> int:
        idx = np.flatnonzero(self.record == k)
        if idx.size == 0:
            raise KeyError(f"step {k} was not recorded")
        return int(idx[0])


def _mean_and_se(values: np.ndarray) -> tuple[float, float]:
    # contiguous 1-D np.sum is pairwise; shifting by the first sample keeps
    # identical samples at exactly zero spread
    v = np.ascontiguousarray(values)
    n = v.shape[0]
    shift = v[0]
    dev = v - shift
    mean_dev = np.sum(dev) / n
    mean = shift + mean_dev
    spread = float(np.max(np.abs(dev)))
    if spread == 0.0:
        return float(mean), 0.0
    # scaled so squaring cannot overflow for samples near the double range
    z = dev / spread
    var = np.sum((z - mean_dev / spread) ** 2) / (n - 1)
    return float(mean), spread * float(math.sqrt(var / n))


def moment_from_samples(sq: np.ndarray, logsq: np.ndarray, n: int) -> tuple[float, float]:
    """Mean and standard error of ``sq ** n`` with a log-domain fallback."""
    if n == 0:
        return 1.0, 0.0
    direct_ok = np.all(np.isfinite(sq)) and np.all(n * logsq < _LOG_MAX)
    if direct_ok:
        return _mean_and_se(sq**n)
    logs = n * logsq
    if np.any(np.isnan(logs)) or np.any(logs == np.inf):
        return math.inf, math.inf
    top = float(np.max(logs))
    scaled = np.exp(logs - top)
    m, se = _mean_and_se(scaled)
    log_mean = top + math.log(m)
    if log_mean >= _LOG_MAX:
        return math.inf, math.inf
    log_se = top + math.log(se) if se > 0 else -math.inf
    return math.exp(log_mean), math.exp(log_se) if log_se < _LOG_MAX else math.inf


def moments_from_samples(sq, logsq, record, orders, n_runs, seed) -> EnsembleMoments:
    orders = tuple(int(n) for n in orders)
    est = np.empty((len(record), len(orders)))
    se = np.empty_like(est)
    for i in range(len(record)):
        col_sq = np.ascontiguousarray(sq[:, i])
        col_log = np.ascontiguousarray(logsq[:, i])
        for j, n in enumerate(orders):
            est[i, j], se[i, j] = moment_from_samples(col_sq, col_log, n)
    return EnsembleMoments(orders, np.asarray(record), est, se, int(n_runs), int(seed))


def run_ensemble(
    model,
    theta0,
    schedule: StepSchedule,
    K: int,
    n_runs: int,
    orders: Sequence[int],
    base_seed: int,
    record: Sequence[int] | None = None,
    threads: int = 1,
) -> EnsembleMoments:
    """Monte Carlo estimates of E||Theta_k||^{2n} for k in ``record`` (default 0..K)."""
    if n_runs < 2:
        raise ValueError("n_runs must be >= 2")
    if not orders:
        raise ValueError("orders must be non-empty")
    if record is None:
        record = range(K + 1)
    rec, sq, logsq = ensemble_sq_norms(model, theta0, schedule, record, n_runs, base_seed, threads)
    return moments_from_samples(sq, logsq, rec, orders, n_runs, base_seed)


# --- path-wise inequality checks -------------------------------------------------


@dataclass(frozen=True)
class InequalityReport:
    holds: bool
    checked: int
    violations: list = field(default_factory=list)
    min_slack: float = math.inf

    def __bool__(self) -> bool:
        return self.holds


def check_lemma1(trajectory: Trajectory, tau: int, b_max: float, epsilon: float | None = None) -> InequalityReport:
    """Check the three tau-window displacement bounds on every window of the path.

    For each start j (0 <= j <= K - tau), with D = ||Theta_{j+tau} - Theta_j||:
    D <= 2 eps tau (||Theta_j|| + b_max), D <= 4 eps tau (||Theta_{j+tau}|| + b_max)
    and D^2 <= 32 eps^2 tau^2 (||Theta_{j+tau}||^2 + b_max^2).
    ``epsilon`` defaults to the largest step in the schedule. Assumes A_max <= 1.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    K = trajectory.K
    eps = trajectory.schedule.max_step(K) if epsilon is None else float(epsilon)
    et = eps * tau
    if et > 0.25:
        raise PreconditionViolated(f"eps * tau = {et:.4g} exceeds 1/4")
    theta = trajectory.theta
    norms = np.linalg.norm(theta, axis=1)
    if K < tau:
        return InequalityReport(True, 0)
    D = np.linalg.norm(theta[tau:] - theta[:-tau], axis=1)
    n0, nt = norms[:-tau], norms[tau:]
    lhs = np.stack([D, D, D * D])
    rhs = np.stack([
        2 * et * n0 + 2 * et * b_max,
        4 * et * nt + 4 * et * b_max,
        32 * et * et * nt * nt + 32 * et * et * b_max * b_max,
    ])
    bad = lhs > rhs * (1.0 + PATH_TOL)
    violations = [
        (int(j), int(w) + 1, float(lhs[w, j]), float(rhs[w, j]))
        for w, j in zip(*np.nonzero(bad))
    ]
    return InequalityReport(not violations, int(lhs.size), violations, float(np.min(rhs - lhs)))


def check_quadratic_increment(trajectory: Trajectory, P, gamma_max: float, b_max: float) -> InequalityReport:
    """|dTheta^T P dTheta| <= 2 eps_k^2 gamma_max (||Theta_k||^2 + b_max^2) on every step."""
    P = np.asarray(P, dtype=float)
    theta = trajectory.theta
    eps = trajectory.steps
    delta = np.diff(theta, axis=0)
    lhs = np.abs(np.einsum("ki,ij,kj->k", delta, P, delta))
    rhs = 2 * eps**2 * gamma_max * (np.sum(theta[:-1] ** 2, axis=1) + b_max**2)
    bad = [
        (int(k), float(lhs[k]), float(rhs[k]))
        for k in np.flatnonzero(lhs > rhs * (1.0 + PATH_TOL))
    ]
    return InequalityReport(not bad, int(lhs.size), bad, float(np.min(rhs - lhs)))


def check_step_bound(trajectory: Trajectory, b_max: float) -> InequalityReport:
    """||Theta_{k+1} - Theta_k|| <= eps_k (||Theta_k|| + b_max) on every step (A_max <= 1)."""
    theta = trajectory.theta
    eps = trajectory.steps
    lhs = np.linalg.norm(np.diff(theta, axis=0), axis=1)
    rhs = eps * (np.linalg.norm(theta[:-1], axis=1) + b_max)
    bad = [(int(k), float(lhs[k]), float(rhs[k])) for k in np.flatnonzero(lhs > rhs * (1.0 + PATH_TOL))]
    return InequalityReport(not bad, int(lhs.size), bad, float(np.min(rhs - lhs)))


def replay_increments(trajectory: Trajectory) -> np.ndarray:
    """Recompute eps_k (A(X_k) Theta_k + b(X_k)) from the noise path (finite models)."""
    model = trajectory.model
    if not isinstance(model, MarkovNoiseModel):
        raise TypeError("replay needs a finite MarkovNoiseModel")
    theta = trajectory.theta[:-1]
    x = trajectory.noise_path
    drift = np.einsum("kij,kj->ki", model.A[x], theta) + model.b[x]
    return trajectory.steps[:, None] * drift
