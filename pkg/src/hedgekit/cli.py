"""
Command-line front end.

``hedgekit solve``       run one algorithm on a problem file
``hedgekit bench``       repeated seeded runs with quartile aggregation
``hedgekit make-hydro``  write a hydro problem file

Exit codes: 0 ok, 2 parse or usage error, 3 infeasible subproblem,
4 numerical failure, 5 runtime failure (for example every worker crashed).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .algorithms import ALGORITHMS, solve
from .bench import BenchCase, bench_csv, run_bench
from .config import AlgorithmConfig, ConfigError, SamplingLaw
from .hydro import HydroParams
from .io import (
    ParseError, cached_reference, load_problem, load_reference, save_hydro,
    solution_dict, write_json, write_metrics,
)
from .prox_qp import INFEASIBLE, ProxError
from .runtime import SimSchedule

EXIT_OK, EXIT_PARSE, EXIT_INFEASIBLE, EXIT_NUMERICAL, EXIT_RUNTIME = 0, 2, 3, 4, 5

log = logging.getLogger("hedgekit")


class CliError(Exception):
    def __init__(self, code, category, message):
        super().__init__(message)
        self.code = code
        self.category = category


def _add_config_flags(p):
    p.add_argument("--problem", required=True, help="problem file (JSON)")
    p.add_argument("--sampling", default="uniform", help="uniform, p, or a JSON file with the law q")
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--eta", default="unit", help="unit | rdr | fixed:<v> | theorem3:<c>,<tau|auto>")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--max-time", type=float, default=3600.0, help="seconds (ticks under a simulated schedule)")
    p.add_argument("--max-subproblems", type=int, default=10**6)
    p.add_argument("--max-iterations", type=int, default=None)
    p.add_argument("--eps-abs", type=float, default=1e-8)
    p.add_argument("--eps-rel", type=float, default=1e-4)
    p.add_argument("--eps-sub", type=float, default=1e-10)
    p.add_argument("--residual-window", type=int, default=None, help="updates per residual window (default S)")
    p.add_argument("--reference", default="none", help="none | extensive-form | reference JSON file")
    p.add_argument("--sim-schedule", default="none", help="simulated schedule JSON file, or none")
    p.add_argument("--mode", choices=("real", "inline"), default="real", help="pool without a simulated schedule")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hedgekit", description="Progressive Hedging solvers")
    ap.add_argument("--version", action="version", version=f"hedgekit {__version__}")
    ap.add_argument("--log-level", default="WARNING")
    sub = ap.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="run one algorithm")
    ps.add_argument("--algo", choices=ALGORITHMS, required=True)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--out", required=True, help="output directory")
    _add_config_flags(ps)

    pb = sub.add_parser("bench", help="repeated runs with quartile aggregation")
    pb.add_argument("--algos", default="ph,rph", help="comma-separated algorithms")
    pb.add_argument("--repetitions", "-R", type=int, default=10)
    pb.add_argument("--seed-base", type=int, default=0)
    pb.add_argument("--bins", type=int, default=20)
    pb.add_argument("--jobs", type=int, default=1)
    pb.add_argument("--out", required=True, help="aggregated CSV path")
    _add_config_flags(pb)

    ph = sub.add_parser("make-hydro", help="write a hydro problem file")
    ph.add_argument("--dams", "-B", type=int, default=3)
    ph.add_argument("--stages", "-T", type=int, default=4)
    ph.add_argument("--seed", type=int, default=0)
    ph.add_argument("--p-dry", type=float, default=0.4)
    ph.add_argument("--reg", type=float, default=0.0)
    ph.add_argument("--out", required=True)
    return ap


def _sampling(spec, tree):
    if spec in ("uniform", "p"):
        return spec
    try:
        doc = json.loads(Path(spec).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"sampling file {spec}: {exc}") from exc
    q = doc["q"] if isinstance(doc, dict) else doc
    return SamplingLaw.resolve(SamplingLaw.explicit(q), tree)


def _schedule(spec):
    if spec in (None, "none"):
        return None
    try:
        return SimSchedule.from_dict(json.loads(Path(spec).read_text()))
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise ParseError(f"schedule file {spec}: {exc}") from exc


def _reference(spec, problem_path, tree, problems):
    if spec == "none":
        return None, {"kind": "none"}
    if spec == "extensive-form":
        ref, hit = cached_reference(problem_path, tree, problems)
        return ref, {"kind": "extensive-form", "f_star": ref.f_star, "cache_hit": hit}
    ref = load_reference(spec, tree, problems)
    return ref, {"kind": "file", "path": str(spec), "f_star": ref.f_star}


def _config(args, tree, seed) -> AlgorithmConfig:
    return AlgorithmConfig(
        mu=args.mu, sampling=_sampling(args.sampling, tree), eta=args.eta,
        workers=args.workers, seed=seed, max_time=args.max_time,
        max_subproblems=args.max_subproblems, max_iterations=args.max_iterations,
        eps_abs=args.eps_abs, eps_rel=args.eps_rel, eps_sub=args.eps_sub,
        residual_window=args.residual_window,
    )


def _load(args):
    tree, problems, hydro = load_problem(args.problem)
    digest = hashlib.sha256(Path(args.problem).read_bytes()).hexdigest()
    return tree, problems, hydro, digest


def cmd_solve(args) -> int:
    tree, problems, hydro, digest = _load(args)
    config = _config(args, tree, args.seed)
    schedule = _schedule(args.sim_schedule)
    reference, ref_info = _reference(args.reference, args.problem, tree, problems)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kw = {} if args.algo == "rph" else {"mode": args.mode}
    record = solve(args.algo, tree, problems, config, reference, schedule=schedule, **kw)

    write_metrics(out / "metrics.csv", record.rows)
    write_json(out / "solution.json", solution_dict(record))
    write_json(out / "run_manifest.json", {
        "hedgekit_version": __version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "algo": args.algo,
        "config": config.to_dict(),
        "mode": "simulated" if schedule is not None else args.mode,
        "schedule": None if schedule is None else schedule.to_dict(),
        "problem": {"path": str(args.problem), "sha256": digest, "S": tree.S, "n": tree.n,
                    "hydro": None if hydro is None else hydro.to_dict()},
        "reference": ref_info,
    })
    print(json.dumps(record.summary(), sort_keys=True))
    if record.termination == "worker-failure":
        raise CliError(EXIT_RUNTIME, "worker-failure", "; ".join(record.worker_failures))
    return EXIT_OK


def cmd_bench(args) -> int:
    tree, problems, _, _ = _load(args)
    schedule = _schedule(args.sim_schedule)
    reference, _ = _reference(args.reference, args.problem, tree, problems)
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    bad = [a for a in algos if a not in ALGORITHMS]
    if bad:
        raise ParseError(f"unknown algorithms {bad}")
    config = _config(args, tree, args.seed_base)
    cases = [BenchCase(a, config, schedule, args.mode) for a in algos]
    table, failures = run_bench(
        cases, tree, problems, reference, args.repetitions, args.seed_base, args.bins, args.jobs,
    )
    Path(args.out).write_text(bench_csv(table))
    for name, seed, msg in failures:
        print(f"run failed: {name} seed {seed}: {msg}", file=sys.stderr)
    print(json.dumps({"cases": algos, "repetitions": args.repetitions, "failures": len(failures)}))
    if failures and all(not rows for rows in table.values()):
        raise CliError(EXIT_RUNTIME, "runtime", "every run failed")
    return EXIT_OK


def cmd_make_hydro(args) -> int:
    params = HydroParams.generate(
        B=args.dams, T=args.stages, seed=args.seed, p_dry=args.p_dry, reg=args.reg,
    )
    save_hydro(args.out, params)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "bench": cmd_bench, "make-hydro": cmd_make_hydro}


def _classify(exc) -> tuple[int, str]:
    if isinstance(exc, CliError):
        return exc.code, exc.category
    if isinstance(exc, (ParseError, ConfigError)):
        return EXIT_PARSE, "parse"
    if isinstance(exc, ProxError):
        if exc.status == INFEASIBLE:
            return EXIT_INFEASIBLE, "infeasible"
        return EXIT_NUMERICAL, "prox-failure"
    if isinstance(exc, (np.linalg.LinAlgError, FloatingPointError, ArithmeticError)):
        return EXIT_NUMERICAL, "numerical"
    if isinstance(exc, (OSError, ValueError)):
        return EXIT_PARSE, "parse"
    return EXIT_RUNTIME, "runtime"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        code, category = _classify(exc)
        print(json.dumps({"error": category, "message": str(exc)}), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
