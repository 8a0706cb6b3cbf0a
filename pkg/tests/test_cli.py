import csv
import json

import numpy as np
import pytest

from markovsa import cli

TD_PROBLEM = {
    "transition": [[0.5, 0.5], [0.5, 0.5]],
    "rewards": [1.0, 0.0],
    "discount": 0.2,
    "features": [[1.0, 0.0], [0.0, 1.0]],
}
MODEL = {
    "transition": [[0.9, 0.1], [0.2, 0.8]],
    "A": [[[-1.0]], [[-0.5]]],
    "b": [[0.5], [-1.0]],
}


def run_config(tmp_path, cfg, *extra, name="out"):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / name
    code = cli.main(["--config", str(path), "--out", str(out), "--quiet", *extra])
    return code, out


def read_rows(out):
    with open(out / "results.csv") as fh:
        return list(csv.reader(fh))


def test_lyapunov_minus_identity(tmp_path):
    code, out = run_config(tmp_path, {"kind": "lyapunov", "A_bar": [[-1, 0], [0, -1]]})
    assert code == 0
    rows = read_rows(out)
    assert rows[0] == ["quantity", "row", "col", "value"]
    table = {(r[0], r[1], r[2]): r[3] for r in rows[1:]}
    assert table[("P", "0", "0")] == "0.5" and table[("P", "1", "1")] == "0.5"
    assert table[("gamma_min", "", "")] == "0.5" and table[("gamma_max", "", "")] == "0.5"
    assert table[("hurwitz", "", "")] == "true"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == cli.DEFAULT_SEED
    assert manifest["csv_schema"]["columns"] == ["quantity", "row", "col", "value"]
    assert manifest["config"]["kind"] == "lyapunov"


def test_counterexample_kind(tmp_path):
    code, out = run_config(tmp_path, {"kind": "counterexample", "epsilon": 0.1, "max_order": 8, "K": 300})
    assert code == 0
    rows = read_rows(out)[1:]
    assert [r[3] for r in rows] == ["false", "false", "true", "true"]
    assert all(r[4] == "6" for r in rows)


def test_bound_check_all_dominated_and_reproducible(tmp_path):
    cfg = {
        "kind": "bound-check", "problem": TD_PROBLEM, "schedule": {"epsilon": "auto"},
        "n_runs": 200, "K": 3000, "n_points": 10, "seed": 11,
    }
    code, out1 = run_config(tmp_path, cfg, name="a")
    code2, out2 = run_config(tmp_path, cfg, "--threads", "3", name="b")
    assert code == code2 == 0
    rows = read_rows(out1)
    assert rows[0] == ["k", "empirical_msq", "std_err", "theorem1_bound", "dominated"]
    assert all(r[4] == "true" for r in rows[1:])
    assert (out1 / "results.csv").read_bytes() == (out2 / "results.csv").read_bytes()


def test_seed_override_changes_results(tmp_path):
    cfg = {"kind": "moments", "model": MODEL, "schedule": {"epsilon": 0.1}, "K": 20, "n_runs": 50,
           "orders": [1, 2], "record": [10, 20]}
    _, a = run_config(tmp_path, cfg, "--seed", "1", name="a")
    _, b = run_config(tmp_path, cfg, "--seed", "2", name="b")
    _, c = run_config(tmp_path, cfg, "--seed", "1", name="c")
    assert (a / "results.csv").read_bytes() != (b / "results.csv").read_bytes()
    assert (a / "results.csv").read_bytes() == (c / "results.csv").read_bytes()
    assert len(read_rows(a)) == 1 + 4


def test_simulate_and_mixing(tmp_path):
    code, out = run_config(tmp_path, {"kind": "simulate", "model": MODEL, "schedule": {"epsilon": 0.1},
                                      "K": 5, "theta0": [1.0]})
    assert code == 0
    rows = read_rows(out)
    assert len(rows) == 1 + 6
    assert rows[1] == ["0", rows[1][1], "0", "1"]
    code, out = run_config(tmp_path, {"kind": "mixing", "model": {**MODEL, "b": [[0.5], [-1.0]]},
                                      "deltas": [0.1, 0.01]}, name="mix")
    assert code == 0
    taus = [int(r[1]) for r in read_rows(out)[1:]]
    assert taus[0] <= taus[1]


def test_td_kinds(tmp_path):
    code, out = run_config(tmp_path, {"kind": "td0", "problem": TD_PROBLEM, "delta": 1e-3})
    assert code == 0
    names = {r[0] for r in read_rows(out)[1:]}
    assert {"A_tilde", "b_tilde", "theta_star", "normalization_scale", "tau"} <= names
    code, out = run_config(tmp_path, {"kind": "tdlambda", "problem": {**TD_PROBLEM, "lambda": 0.5}, "delta": 0.01},
                           name="lam")
    assert code == 0
    assert "trace_bound" in {r[0] for r in read_rows(out)[1:]}


def test_array_from_file(tmp_path):
    (tmp_path / "T.json").write_text(json.dumps(TD_PROBLEM["transition"]))
    code, _ = run_config(tmp_path, {"kind": "td0", "problem": {**TD_PROBLEM, "transition": "T.json"}})
    assert code == 0
    code, out = run_config(tmp_path, {"kind": "td0", "problem": {**TD_PROBLEM, "transition": "missing.json"}},
                           name="missing")
    assert code == 2


@pytest.mark.parametrize(
    "cfg, expected",
    [
        ({"kind": "unknown"}, 2),
        ({"kind": "moments", "model": MODEL, "schedule": {"epsilon": 0.1}, "n_runs": 5}, 2),
        ({"kind": "td0", "problem": {**TD_PROBLEM, "transition": [[0.5, 0.4], [0.5, 0.5]]}}, 3),
        ({"kind": "mixing", "model": {**MODEL, "b": [[1.0], [1.0]]}, "delta": 0.1}, 3),
        ({"kind": "mixing", "model": {"transition": [[0.999999, 1e-6], [1e-6, 0.999999]],
                                      "A": [[[1.0]], [[-1.0]]], "b": [[0.0], [0.0]]},
          "delta": 1e-3, "k_cap": 50}, 4),
    ],
)
def test_exit_codes_and_error_record(tmp_path, cfg, expected):
    code, out = run_config(tmp_path, cfg)
    assert code == expected
    record = json.loads((out / "error.json").read_text())
    assert record["exit_code"] == expected
    assert record["message"]


def test_missing_config_file(tmp_path):
    assert cli.main(["--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o"), "--quiet"]) == 2


def test_fmt():
    assert cli.fmt(0.1) == "0.10000000000000001"
    assert cli.fmt(True) == "true"
    assert cli.fmt(np.int64(3)) == "3"
    assert cli.fmt(float("inf")) == "inf"
    assert cli.fmt(None) == ""
