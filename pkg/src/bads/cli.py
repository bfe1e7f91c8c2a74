"""Command-line entry points: ``bench`` (run / aggregate) and ``optimize``."""

from __future__ import annotations

import argparse
import importlib
import json
import sys
from pathlib import Path

import numpy as np

from .bench.functions import make_function
from .bench.harness import BenchConfig, aggregate_report, export_report, load_report, run_benchmark
from .bench.noise import NoiseWrapper, as_objective
from .engine import ObjectiveError, Options, run
from .problem import ProblemError, ProblemSpec


def resolve_objective(ref: str, dim: int, doc: dict):
    """``module:function`` or ``bench:<suite name>`` -> callable."""
    if ref.startswith("bench:"):
        fn = make_function(ref[len("bench:"):], dim, int(doc.get("instance_seed", 0)))
        noise = doc.get("bench_noise", "none")
        return as_objective(NoiseWrapper(fn, noise), np.random.default_rng(int(doc.get("noise_seed", 0))))
    module, _, name = ref.partition(":")
    if not name:
        raise ValueError(f"objective must look like module:function, got {ref!r}")
    return getattr(importlib.import_module(module), name)


def _optimize(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="optimize", description="Run one bound-constrained optimization.")
    ap.add_argument("--problem", required=True, help="problem JSON file")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--trace", default=None, help="write line-delimited JSON trace here")
    args = ap.parse_args(argv)

    doc = json.loads(Path(args.problem).read_text())
    spec = ProblemSpec.from_json(doc)
    spec.objective = resolve_objective(doc["objective"], len(spec.lb), doc)
    if "barrier" in doc:
        spec.barrier = resolve_objective(doc["barrier"], len(spec.lb), doc)
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    options = Options.from_dict(doc)
    try:
        if args.trace:
            with open(args.trace, "w") as fp:
                result = run(spec, seed, options, trace_fp=fp)
        else:
            result = run(spec, seed, options)
    except (ProblemError, ObjectiveError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = {
        "x_end": result.x_end.tolist(),
        "y_end": result.y_end,
        "y_end_se": result.y_end_se,
        "fun_evals": result.fun_evals,
        "final_evals": result.final_evals,
        "reason": result.reason,
        "noisy": result.noisy,
    }
    print(json.dumps(out))
    return 0


def _bench(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="bench", description="Benchmark sweeps over the test-function suite.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--seed-base", type=int, default=None)
    a = sub.add_parser("aggregate")
    a.add_argument("--in", dest="in_dir", required=True)
    a.add_argument("--out", required=True)
    args = ap.parse_args(argv)

    if args.cmd == "run":
        config = BenchConfig.from_dict(json.loads(Path(args.config).read_text()))
        if args.seed_base is not None:
            config.seed_base = args.seed_base
        report = run_benchmark(config, jobs=args.jobs)
        export_report(report, args.out)
        failed = [c for c in report.cells if c.status != "ok"]
        for c in failed:
            print(f"{c.function} D={c.dim} {c.algorithm} seed={c.seed}: {c.status}", file=sys.stderr)
        return 0 if not failed else 1

    report = load_report(args.in_dir)
    Path(args.out).write_text(json.dumps(aggregate_report(report), indent=1, sort_keys=True) + "\n")
    return 0


def optimize_main() -> None:
    sys.exit(_optimize())


def bench_main() -> None:
    sys.exit(_bench())
