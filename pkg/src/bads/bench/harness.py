"""Benchmark sweeps: cell execution, success-fraction aggregation and export."""

from __future__ import annotations

import csv
import io
import json
import shlex
import subprocess
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..engine import Options, RunResult, run
from ..problem import NoiseSpec, ProblemSpec
from .baselines import baseline_nelder_mead, baseline_random_search
from .functions import BOX, make_function
from .noise import NoiseWrapper, as_objective

ALGORITHMS = ("bads", "random", "nelder_mead")
N_EPS = 25
EPS_DETERMINISTIC = (0.01, 10.0)
EPS_NOISY = (0.1, 10.0)
BUDGET_DETERMINISTIC = 500
BUDGET_NOISY = 200
N_T_GRID = 50


def eps_grid(noisy: bool, n: int = N_EPS) -> np.ndarray:
    lo, hi = EPS_NOISY if noisy else EPS_DETERMINISTIC
    return np.logspace(np.log10(lo), np.log10(hi), n)


@dataclass
class BenchConfig:
    functions: list
    dims: list
    algorithms: list = field(default_factory=lambda: list(ALGORITHMS))
    n_runs: int = 5
    budget_multiplier: Optional[int] = None
    noise: str = "none"
    tolerances: Optional[list] = None
    seed_base: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "BenchConfig":
        keys = ("functions", "dims", "algorithms", "n_runs", "budget_multiplier", "noise", "tolerances", "seed_base")
        return cls(**{k: doc[k] for k in keys if k in doc})

    @property
    def noisy(self) -> bool:
        return self.noise != "none"

    def budget(self, D: int) -> int:
        mult = self.budget_multiplier or (BUDGET_NOISY if self.noisy else BUDGET_DETERMINISTIC)
        return int(mult * D)

    def tolerance_grid(self) -> np.ndarray:
        if self.tolerances:
            return np.asarray(self.tolerances, dtype=float)
        return eps_grid(self.noisy)


@dataclass
class Cell:
    function: str
    dim: int
    algorithm: str
    seed: int
    status: str = "ok"
    y_best: list = field(default_factory=list)
    final_error: float = float("nan")
    end_error: float = float("nan")
    n_evals: int = 0
    elapsed: float = 0.0

    @property
    def key(self):
        return (self.function, self.dim, self.algorithm, self.seed)


@dataclass
class BenchmarkReport:
    config: BenchConfig
    cells: list

    def metadata(self) -> dict:
        return {
            "config": asdict(self.config),
            "tolerances": self.config.tolerance_grid().tolist(),
            "function_subset": "10-function representative suite spanning 5 groups",
            "n_cells": len(self.cells),
            "n_failed": sum(c.status != "ok" for c in self.cells),
        }


def _seed(*parts) -> np.random.SeedSequence:
    ints = [p if isinstance(p, int) else zlib.crc32(str(p).encode()) for p in parts]
    return np.random.SeedSequence(ints)


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


# ---------------------------------------------------------------------------
# external optimizers


def run_external(cmd: str, spec: ProblemSpec, seed: int, budget: int, objective) -> RunResult:
    """Drive an external optimizer over a line protocol.

    The process receives one JSON header line, then alternates: it writes a
    JSON point (list) and reads back a value line. A line ``{"candidates":
    [...]}`` or end of output ends the run.
    """
    header = {
        "dim": len(spec.lb),
        "lb": list(map(float, spec.lb)),
        "ub": list(map(float, spec.ub)),
        "plb": list(map(float, spec.plb)),
        "pub": list(map(float, spec.pub)),
        "x0": list(map(float, spec.x0)),
        "budget": budget,
        "seed": seed,
    }
    proc = subprocess.Popen(shlex.split(cmd), stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
    X, Y, cands = [], [], []
    try:
        proc.stdin.write(json.dumps(header) + "\n")
        proc.stdin.flush()
        for line in proc.stdout:
            msg = json.loads(line)
            if isinstance(msg, dict):
                cands = [np.asarray(c, dtype=float) for c in msg.get("candidates", [])]
                break
            if len(Y) >= budget:
                break
            x = np.asarray(msg, dtype=float)
            y = float(objective(x))
            X.append(x)
            Y.append(y)
            proc.stdin.write(repr(y) + "\n")
            proc.stdin.flush()
    finally:
        proc.stdin.close()
        proc.wait(timeout=30)
    if not Y:
        raise RuntimeError(f"external optimizer {cmd!r} made no evaluations")
    Y = np.array(Y)
    order = np.argsort(Y, kind="stable")
    return RunResult(
        x_end=X[order[0]],
        y_end=float(Y[order[0]]),
        y_end_se=0.0,
        fun_evals=len(Y),
        final_evals=0,
        reason="budget",
        noisy=False,
        iterations=0,
        candidates=cands[:3] or [X[j] for j in order[:3]],
        y_trace=Y,
    )


# ---------------------------------------------------------------------------
# cells


def bads_with_restarts(spec: ProblemSpec, seed: int, budget: int, options: Optional[Options] = None) -> RunResult:
    """Restart from a fresh plausible-box point whenever a run ends early."""
    rng = np.random.default_rng(seed)
    plb = np.asarray(spec.lb if spec.plb is None else spec.plb, dtype=float)
    pub = np.asarray(spec.ub if spec.pub is None else spec.pub, dtype=float)
    ys, ends = [], []
    x0 = np.asarray(spec.x0, dtype=float)
    used = 0
    while used < budget:
        sub = ProblemSpec(
            spec.objective, spec.lb, spec.ub, x0, spec.plb, spec.pub, spec.barrier,
            spec.periodic_dims, spec.noise, budget - used,
        )
        r = run(sub, int(rng.integers(2**31)), options)
        used += r.fun_evals
        ys.append(r.y_trace)
        ends.append(r)
        x0 = rng.uniform(plb, pub)
    y = np.concatenate(ys)
    best = min(ends, key=lambda r: r.y_end)
    pool = sorted(ends, key=lambda r: r.y_end)
    cands = [c for r in pool for c in r.candidates[:1]] if best.noisy else best.candidates
    return RunResult(
        x_end=best.x_end,
        y_end=best.y_end,
        y_end_se=best.y_end_se,
        fun_evals=used,
        final_evals=sum(r.final_evals for r in ends),
        reason="budget" if used >= budget else best.reason,
        noisy=best.noisy,
        iterations=sum(r.iterations for r in ends),
        candidates=cands[:3],
        y_trace=y,
    )


def cell_problem(function: str, dim: int, noise: str, seed_base: int, run_index: int):
    """The (function instance, noisy objective factory, spec) shared by all algorithms of a run."""
    fn = make_function(function, dim, np.random.default_rng(_seed(seed_base, "instance", function, dim, run_index)))
    wrapper = NoiseWrapper(fn, noise)
    x0 = np.random.default_rng(_seed(seed_base, "x0", function, dim, run_index)).uniform(-BOX, BOX, dim)
    spec = ProblemSpec(
        None, fn.lb, fn.ub, x0, fn.lb, fn.ub,
        noise=NoiseSpec("stochastic" if noise != "none" else "deterministic"),
    )
    return fn, wrapper, spec


def run_cell(config: BenchConfig, function: str, dim: int, algorithm: str, run_index: int) -> Cell:
    cell = Cell(function, dim, algorithm, run_index)
    budget = config.budget(dim)
    t0 = time.perf_counter()
    try:
        fn, wrapper, spec = cell_problem(function, dim, config.noise, config.seed_base, run_index)
        ss = _seed(config.seed_base, "algorithm", function, dim, algorithm, run_index)
        noise_ss, alg_ss = ss.spawn(2)
        spec.objective = as_objective(wrapper, np.random.default_rng(noise_ss))
        alg_seed = _int_seed(alg_ss)
        if algorithm == "bads":
            r = bads_with_restarts(spec, alg_seed, budget)
        elif algorithm == "random":
            r = baseline_random_search(spec, alg_seed, budget)
        elif algorithm == "nelder_mead":
            r = baseline_nelder_mead(spec, alg_seed, budget)
        elif algorithm.startswith("ext:"):
            r = run_external(algorithm[4:], spec, alg_seed, budget, spec.objective)
        else:
            raise ValueError(f"unknown algorithm {algorithm!r}")
        cell.y_best = np.minimum.accumulate(r.y_trace).tolist()
        cell.n_evals = int(r.fun_evals)
        # Scoring uses the noiseless objective at up to three returned points.
        cands = r.candidates or [r.x_end]
        cell.final_error = float(min(fn(c) for c in cands[:3]) - fn.f_min)
        cell.end_error = float(fn(r.x_end) - fn.f_min)
    except Exception as exc:  # a failed cell is recorded, never fatal
        cell.status = f"error: {type(exc).__name__}: {exc}"
    cell.elapsed = time.perf_counter() - t0
    return cell


def _cells_of(config: BenchConfig):
    jobs = [
        (f, int(d), a, r)
        for f in config.functions
        for d in config.dims
        for a in config.algorithms
        for r in range(config.n_runs)
    ]
    return sorted(jobs, key=lambda k: (k[0], k[1], k[2], k[3]))


def _run_cell_args(args):
    return run_cell(*args)


def run_benchmark(config: BenchConfig, jobs: int = 1) -> BenchmarkReport:
    todo = [(config,) + k for k in _cells_of(config)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            cells = list(ex.map(_run_cell_args, todo))
    else:
        cells = [_run_cell_args(t) for t in todo]
    cells.sort(key=lambda c: c.key)
    return BenchmarkReport(config, cells)


# ---------------------------------------------------------------------------
# aggregation


def t_grid(budget: int, n: int = N_T_GRID) -> np.ndarray:
    return np.unique(np.round(np.geomspace(1, budget, n)).astype(int))


def success_at(y_best, t: int, eps: np.ndarray, f_min: float = 0.0) -> np.ndarray:
    """Success indicators at evaluation ``t`` (1-based) for each tolerance."""
    y_best = np.asarray(y_best, dtype=float)
    if len(y_best) == 0:
        return np.zeros(len(eps), dtype=bool)
    v = y_best[min(t, len(y_best)) - 1] - f_min
    return v <= eps


def aggregate(cells, noisy: bool, tolerances: np.ndarray, budgets: dict) -> dict:
    """Success fractions per (function, dim, algorithm) and per algorithm.

    Deterministic: best-so-far curve on a t grid, averaged over tolerances.
    Noisy: final true error against each tolerance.
    """
    eps = np.asarray(tolerances, dtype=float)
    groups: dict = {}
    for c in cells:
        if c.status != "ok":
            continue
        groups.setdefault((c.function, c.dim, c.algorithm), []).append(c)
    out = {"noisy": noisy, "tolerances": eps.tolist(), "cells": [], "algorithms": {}}
    per_alg: dict = {}
    for (fname, dim, alg), cs in sorted(groups.items()):
        budget = budgets[dim]
        entry = {"function": fname, "dim": dim, "algorithm": alg, "n": len(cs)}
        if noisy:
            S = np.array([c.final_error <= eps for c in cs], dtype=float)
            entry["success_vs_eps"] = S.mean(axis=0).tolist()
            entry["success"] = float(S.mean())
        else:
            ts = t_grid(budget)
            curve = [float(np.mean([success_at(c.y_best, int(t), eps) for c in cs])) for t in ts]
            S_end = np.array([success_at(c.y_best, budget, eps) for c in cs], dtype=float)
            entry["t"] = ts.tolist()
            entry["success_vs_t"] = curve
            entry["success_vs_eps"] = S_end.mean(axis=0).tolist()
            entry["success"] = float(S_end.mean())
        out["cells"].append(entry)
        per_alg.setdefault(alg, []).append(entry["success"])
    out["algorithms"] = {a: float(np.mean(v)) for a, v in sorted(per_alg.items())}
    return out


def aggregate_report(report: BenchmarkReport) -> dict:
    cfg = report.config
    budgets = {int(d): cfg.budget(int(d)) for d in cfg.dims}
    agg = aggregate(report.cells, cfg.noisy, cfg.tolerance_grid(), budgets)
    agg["metadata"] = report.metadata()
    return agg


# ---------------------------------------------------------------------------
# export

CELL_FIELDS = ("function", "dim", "algorithm", "seed", "t", "y_best")
FINAL_FIELDS = ("function", "dim", "algorithm", "seed", "status", "n_evals", "final_error", "end_error")


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def export_report(report: BenchmarkReport, out_dir, fmt: str = "csv") -> list[Path]:
    """Write cells.csv, final.csv, aggregate.json and timing.csv into ``out_dir``.

    Timing lives in its own file so the other outputs are reproducible
    byte for byte.
    """
    if fmt not in ("csv", "json"):
        raise ValueError("format must be csv or json")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = sorted(report.cells, key=lambda c: c.key)
    written = []
    rows = [
        (c.function, c.dim, c.algorithm, c.seed, t, repr(float(y)))
        for c in cells
        for t, y in enumerate(c.y_best, start=1)
    ]
    _write_csv(out / "cells.csv", CELL_FIELDS, rows)
    final = [(c.function, c.dim, c.algorithm, c.seed, c.status, c.n_evals, repr(float(c.final_error)), repr(float(c.end_error))) for c in cells]
    _write_csv(out / "final.csv", FINAL_FIELDS, final)
    written += [out / "cells.csv", out / "final.csv"]
    (out / "aggregate.json").write_text(json.dumps(aggregate_report(report), indent=1, sort_keys=True) + "\n")
    (out / "config.json").write_text(json.dumps(asdict(report.config), indent=1, sort_keys=True) + "\n")
    written += [out / "aggregate.json", out / "config.json"]
    _write_csv(out / "timing.csv", ("function", "dim", "algorithm", "seed", "seconds"), [(*c.key, f"{c.elapsed:.4f}") for c in cells])
    written.append(out / "timing.csv")
    return written


def load_report(in_dir) -> BenchmarkReport:
    """Rebuild a report from an exported directory (timings are not restored)."""
    d = Path(in_dir)
    config = BenchConfig.from_dict(json.loads((d / "config.json").read_text()))
    cells = {}
    with open(d / "final.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            c = Cell(row["function"], int(row["dim"]), row["algorithm"], int(row["seed"]), row["status"])
            c.n_evals = int(row["n_evals"])
            c.final_error = float(row["final_error"])
            c.end_error = float(row["end_error"])
            cells[c.key] = c
    with open(d / "cells.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["function"], int(row["dim"]), row["algorithm"], int(row["seed"]))
            cells[key].y_best.append(float(row["y_best"]))
    return BenchmarkReport(config, [cells[k] for k in sorted(cells)])
