import json

import numpy as np

from bads.cli import _bench, _optimize, resolve_objective


def quadratic(x):
    return float(np.sum((np.asarray(x) - 1.0) ** 2))


def test_resolve_objective():
    f = resolve_objective("tests.test_cli:quadratic", 2, {})
    assert f(np.ones(2)) == 0.0
    g = resolve_objective("bench:sphere", 3, {"instance_seed": 4})
    assert g(np.zeros(3)) > 0


def test_optimize_cli(tmp_path, capsys):
    problem = {
        "objective": "tests.test_cli:quadratic",
        "lb": [-3, -3], "ub": [3, 3], "x0": [0, 0], "plb": [-2, -2], "pub": [2, 2],
        "noise": {"type": "deterministic"}, "max_fun_evals": 100, "kernel": "se",
    }
    path = tmp_path / "p.json"
    path.write_text(json.dumps(problem))
    trace = tmp_path / "t.jsonl"
    assert _optimize(["--problem", str(path), "--seed", "3", "--trace", str(trace)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["y_end"] < 1e-3 and out["fun_evals"] <= 100
    lines = trace.read_text().splitlines()
    assert len(lines) >= out["fun_evals"]


def test_optimize_cli_bad_problem(tmp_path, capsys):
    path = tmp_path / "p.json"
    path.write_text(json.dumps({"objective": "tests.test_cli:quadratic", "lb": [1], "ub": [0], "x0": [0.5]}))
    assert _optimize(["--problem", str(path)]) == 2


def test_bench_cli_run_and_aggregate(tmp_path):
    cfg = {"functions": ["sphere"], "dims": [2], "algorithms": ["random"], "n_runs": 2, "budget_multiplier": 10}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert _bench(["run", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "out")]) == 0
    assert _bench(["aggregate", "--in", str(tmp_path / "out"), "--out", str(tmp_path / "agg.json")]) == 0
    agg = json.loads((tmp_path / "agg.json").read_text())
    stored = json.loads((tmp_path / "out" / "aggregate.json").read_text())
    assert agg["cells"] == stored["cells"]


def test_bench_cli_reports_failed_cells(tmp_path):
    cfg = {"functions": ["sphere"], "dims": [2], "algorithms": ["bogus"], "n_runs": 1, "budget_multiplier": 10}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert _bench(["run", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "out")]) == 1
