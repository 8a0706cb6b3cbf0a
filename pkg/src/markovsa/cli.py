"""Config-driven experiment runner.

One JSON config per invocation; ``kind`` selects the experiment. Results go
to ``results.csv`` (numbers at 17 significant digits, so reruns with the same
seed are byte-identical) and ``manifest.json`` (config echo, seed, version,
CSV column contract, timestamp). Failures write ``error.json`` and exit with
2 (config or I/O), 3 (model invariant) or 4 (numerical failure).
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, counterexample, experiments
from .errors import ConfigError, MarkovSAError, ModelError, NumericalError, StepInvalid
from .linalg import solve_lyapunov
from .lsa import StepSchedule, run_ensemble, simulate
from .markov import FiniteChain, MarkovNoiseModel, mixing_time
from .td import TdProblem, compile_td0, compile_tdlambda, tdlambda_mixing_time

DEFAULT_SEED = 20240607
CSV_SCHEMA_VERSION = "1"

COLUMNS = {
    "lyapunov": ["quantity", "row", "col", "value"],
    "mixing": ["delta", "tau"],
    "simulate": ["k", "noise_state", "component", "theta"],
    "bound-check": ["k", "empirical_msq", "std_err", "theorem1_bound", "dominated"],
    "td0": ["quantity", "row", "col", "value"],
    "tdlambda": ["quantity", "row", "col", "value"],
    "counterexample": ["order", "leading_coefficient", "moment_at_K", "diverged", "m_star"],
    "moments": ["k", "order", "estimate", "std_err"],
}

EXIT_OK, EXIT_CONFIG, EXIT_MODEL, EXIT_NUMERICAL = 0, 2, 3, 4


def fmt(x) -> str:
    """Fixed CSV formatting: bools as true/false, ints as-is, floats at 17 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    if x is None:
        return ""
    return str(x)


# --- config parsing ---------------------------------------------------------------


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"missing required field {key!r}")
    return cfg[key]


def _array(value, name: str, ndim: int) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be a numeric array: {exc}") from None
    if arr.ndim != ndim:
        raise ConfigError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


def _positive_int(cfg: dict, key: str, default=None) -> int:
    value = cfg.get(key, default)
    if value is None:
        raise ConfigError(f"missing required field {key!r}")
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError(f"{key} must be a positive integer")
    return value


def _load_matrix_field(value, name: str, base: Path, ndim: int) -> np.ndarray:
    # arrays may be inline or a path to a JSON file holding the array
    if isinstance(value, str):
        path = (base / value) if not Path(value).is_absolute() else Path(value)
        if not path.is_file():
            raise ConfigError(f"{name}: referenced file {value!r} does not exist")
        value = json.loads(path.read_text())
    return _array(value, name, ndim)


def parse_model(cfg: dict, base: Path) -> MarkovNoiseModel:
    spec = _require(cfg, "model")
    if not isinstance(spec, dict):
        raise ConfigError("model must be an object")
    T = _load_matrix_field(_require(spec, "transition"), "model.transition", base, 2)
    A = _load_matrix_field(_require(spec, "A"), "model.A", base, 3)
    b = _load_matrix_field(_require(spec, "b"), "model.b", base, 2)
    try:
        return MarkovNoiseModel(FiniteChain(T), A, b)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_problem(cfg: dict, base: Path, lam_default: float = 0.0) -> TdProblem:
    spec = _require(cfg, "problem")
    if not isinstance(spec, dict):
        raise ConfigError("problem must be an object")
    T = _load_matrix_field(_require(spec, "transition"), "problem.transition", base, 2)
    c = _load_matrix_field(_require(spec, "rewards"), "problem.rewards", base, 1)
    F = _load_matrix_field(_require(spec, "features"), "problem.features", base, 2)
    try:
        return TdProblem(FiniteChain(T), c, float(_require(spec, "discount")), F, float(spec.get("lambda", lam_default)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_schedule(cfg: dict) -> StepSchedule | None:
    """None means "pick the largest valid constant step" (``"epsilon": "auto"``)."""
    spec = cfg.get("schedule")
    if spec is None:
        raise ConfigError("missing required field 'schedule'")
    kind = spec.get("kind", "constant")
    try:
        if kind == "constant":
            eps = _require(spec, "epsilon")
            if eps == "auto":
                return None
            return StepSchedule.constant(float(eps))
        if kind == "power":
            return StepSchedule.power(float(_require(spec, "epsilon0")), float(_require(spec, "exponent")),
                                      int(_require(spec, "length")))
        if kind == "sequence":
            return StepSchedule.sequence(_array(_require(spec, "epsilons"), "schedule.epsilons", 1))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"schedule: {exc}") from None
    raise ConfigError(f"unknown schedule kind {kind!r}")


def _theta0(cfg: dict, dim: int, default) -> np.ndarray:
    if "theta0" not in cfg:
        return np.asarray(default, dtype=float)
    th = _array(cfg["theta0"], "theta0", 1)
    if th.shape != (dim,):
        raise ConfigError(f"theta0 must have length {dim}")
    return th


# --- experiment kinds -------------------------------------------------------------


def _matrix_rows(name: str, M) -> list:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return [[name, i, j, M[i, j]] for i in range(M.shape[0]) for j in range(M.shape[1])]


def _vector_rows(name: str, v) -> list:
    return [[name, i, None, x] for i, x in enumerate(np.asarray(v, dtype=float))]


def _scalar(name: str, value) -> list:
    return [name, None, None, value]


def run_lyapunov(cfg, base, seed, threads):
    A = _array(_require(cfg, "A_bar"), "A_bar", 2)
    if A.shape[0] != A.shape[1]:
        raise ConfigError("A_bar must be square")
    cert = solve_lyapunov(A)
    rows = _matrix_rows("P", cert.P)
    rows += [
        _scalar("gamma_min", cert.gamma_min),
        _scalar("gamma_max", cert.gamma_max),
        _scalar("hurwitz", bool(cert.hurwitz)),
        _scalar("residual", cert.residual),
    ]
    return rows


def run_mixing(cfg, base, seed, threads):
    model = parse_model(cfg, base)
    deltas = cfg.get("deltas", [cfg.get("delta")])
    if not deltas or any(d is None for d in deltas):
        raise ConfigError("mixing needs 'delta' or 'deltas'")
    deltas = [float(d) for d in deltas]
    if any(not 0 < d for d in deltas):
        raise ConfigError("deltas must be positive")
    k_cap = _positive_int(cfg, "k_cap", 10_000)
    return [[d, mixing_time(model, d, k_cap)] for d in deltas]


def run_simulate(cfg, base, seed, threads):
    model = parse_model(cfg, base)
    schedule = parse_schedule(cfg)
    if schedule is None:
        raise ConfigError("simulate needs an explicit step size")
    K = _positive_int(cfg, "K")
    theta0 = _theta0(cfg, model.dim, np.zeros(model.dim))
    traj = simulate(model, theta0, schedule, K, seed)
    rows = []
    for k in range(K + 1):
        x = int(traj.noise_path[k]) if k < K else None
        for i in range(model.dim):
            rows.append([k, x, i, traj.theta[k, i]])
    return rows


def _compile(cfg, base, lam_default=0.0):
    problem = parse_problem(cfg, base, lam_default)
    return compile_tdlambda(problem) if problem.lam > 0 else compile_td0(problem)


def run_bound_check(cfg, base, seed, threads):
    compiled = _compile(cfg, base)
    schedule = parse_schedule(cfg)
    if schedule is not None and schedule.kind != "constant":
        raise ConfigError("bound-check needs a constant step size")
    setup = experiments.make_setup(compiled, None if schedule is None else schedule.epsilon)
    if not setup.constants.valid:
        raise StepInvalid(
            f"epsilon={setup.epsilon:g} with tau={setup.tau} violates the step validity conditions"
        )
    n_runs = _positive_int(cfg, "n_runs")
    theta0 = _theta0(cfg, compiled.dim, compiled.centered_start())
    if "record" in cfg:
        record = [int(k) for k in cfg["record"]]
    else:
        horizon = int(cfg.get("K", experiments.relaxation_horizon(setup)))
        record = experiments.record_grid(setup.tau, horizon, int(cfg.get("n_points", 50)))
    check = experiments.mean_square_check(setup, theta0, record, n_runs, seed, threads)
    return [
        [int(k), m, s, b, bool(d)]
        for k, m, s, b, d in zip(check.k, check.empirical_msq, check.std_err, check.bound, check.dominated)
    ]


def _td_rows(compiled, cfg):
    model = compiled.model
    cert = solve_lyapunov(compiled.A_tilde)
    rows = _matrix_rows("A_tilde", compiled.A_tilde)
    rows += _vector_rows("b_tilde", compiled.b_tilde)
    rows += _vector_rows("theta_star", compiled.theta_star)
    rows += [
        _scalar("normalization_scale", compiled.normalization_scale),
        _scalar("gamma_min", cert.gamma_min),
        _scalar("gamma_max", cert.gamma_max),
        _scalar("A_max", model.A_max),
        _scalar("b_max", model.b_max),
    ]
    return rows, cert


def run_td0(cfg, base, seed, threads):
    problem = parse_problem(cfg, base)
    if problem.lam != 0.0:
        raise ConfigError("td0 requires lambda = 0")
    compiled = compile_td0(problem)
    rows, _ = _td_rows(compiled, cfg)
    if "delta" in cfg:
        rows.append(_scalar("tau", mixing_time(compiled.model, float(cfg["delta"]))))
    return rows


def run_tdlambda(cfg, base, seed, threads):
    problem = parse_problem(cfg, base)
    if not problem.lam > 0.0:
        raise ConfigError("tdlambda requires lambda in (0, 1)")
    compiled = compile_tdlambda(problem)
    rows, _ = _td_rows(compiled, cfg)
    rows.append(_scalar("trace_bound", compiled.model.trace_bound))
    if "delta" in cfg:
        rows.append(_scalar("tau", tdlambda_mixing_time(compiled, float(cfg["delta"]))))
    return rows


def run_counterexample(cfg, base, seed, threads):
    eps = float(_require(cfg, "epsilon"))
    max_order = int(cfg.get("max_order", 8))
    K = _positive_int(cfg, "K", 500)
    theta0 = float(cfg.get("theta0", 0.0))
    try:
        report, _ = counterexample.order_report(eps, max_order, K, theta0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return [
        [r["order"], r["leading_coefficient"], r["moment_at_K"], r["diverged"], r["m_star"]]
        for r in report
    ]


def run_moments(cfg, base, seed, threads):
    if "problem" in cfg:
        compiled = _compile(cfg, base)
        model, default0 = compiled.model, compiled.centered_start()
    else:
        model = parse_model(cfg, base)
        default0 = np.zeros(model.dim)
    schedule = parse_schedule(cfg)
    if schedule is None:
        raise ConfigError("moments needs an explicit step size")
    K = _positive_int(cfg, "K")
    n_runs = _positive_int(cfg, "n_runs")
    if n_runs < 2:
        raise ConfigError("n_runs must be >= 2")
    orders = cfg.get("orders", [1])
    if not orders or any(isinstance(n, bool) or not isinstance(n, int) or n < 0 for n in orders):
        raise ConfigError("orders must be a list of non-negative integers")
    record = cfg.get("record")
    theta0 = _theta0(cfg, model.dim, default0)
    mom = run_ensemble(model, theta0, schedule, K, n_runs, orders, seed, record, threads)
    rows = []
    for i, k in enumerate(mom.record):
        for j, n in enumerate(mom.orders):
            rows.append([int(k), n, mom.estimates[i, j], mom.std_errors[i, j]])
    return rows


RUNNERS = {
    "lyapunov": run_lyapunov,
    "mixing": run_mixing,
    "simulate": run_simulate,
    "bound-check": run_bound_check,
    "td0": run_td0,
    "tdlambda": run_tdlambda,
    "counterexample": run_counterexample,
    "moments": run_moments,
}


# --- driver -----------------------------------------------------------------------


def write_csv(path: Path, header: list[str], rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])


def load_config(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {path!r} does not exist")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    kind = cfg.get("kind")
    if kind not in RUNNERS:
        raise ConfigError(f"kind must be one of {sorted(RUNNERS)}, got {kind!r}")
    return cfg


def resolve_seed(cfg: dict, override: int | None) -> int:
    seed = override if override is not None else cfg.get("seed", DEFAULT_SEED)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return seed


def run(config_path: str, out_dir: str, seed: int | None = None, threads: int = 1) -> dict:
    """Execute one experiment; returns the manifest. Raises on failure."""
    cfg = load_config(config_path)
    seed = resolve_seed(cfg, seed)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out_dir!r}: {exc}") from None
    kind = cfg["kind"]
    rows = RUNNERS[kind](cfg, Path(config_path).resolve().parent, seed, threads)
    write_csv(out / "results.csv", COLUMNS[kind], rows)
    manifest = {
        "kind": kind,
        "config": cfg,
        "seed": seed,
        "version": __version__,
        "csv_schema": {"version": CSV_SCHEMA_VERSION, "columns": COLUMNS[kind]},
        "threads": threads,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ModelError):
        return EXIT_MODEL
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    return EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="markovsa", description="Run a linear stochastic approximation experiment.")
    p.add_argument("--config", required=True, help="path to the JSON experiment config")
    p.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed (overrides the config)")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for ensembles, 0 = all cores")
    p.add_argument("--quiet", action="store_true", help="suppress the summary line")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads
    if threads < 0:
        print("--threads must be >= 0", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest = run(args.config, args.out, args.seed, threads)
    except (MarkovSAError, OSError, ValueError) as exc:
        code = exit_code_for(exc)
        record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        try:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            (Path(args.out) / "error.json").write_text(json.dumps(record, indent=2) + "\n")
        except OSError:
            pass
        print(json.dumps(record), file=sys.stderr)
        return code
    if not args.quiet:
        print(f"{manifest['kind']}: wrote {Path(args.out) / 'results.csv'} (seed {manifest['seed']})")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
