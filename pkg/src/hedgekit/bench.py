"""
Repeated seeded runs and quartile aggregation over logarithmic time bins.

Each run's metric curve is read as a step function of wall time: the value
at time ``t`` is that of the last row emitted at or before ``t``.  Per bin
edge the median, first and third quartile across runs are reported, over
the runs that have a value there.
"""

from __future__ import annotations

import csv
import io as _io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .algorithms import solve

log = logging.getLogger(__name__)

BENCH_METRICS = ("n_subproblems", "steplength", "subopt_rel", "feas_err")


@dataclass
class BenchCase:
    """One algorithm configuration to repeat."""

    algo: str
    config: object
    schedule: object = None
    mode: str = "real"
    label: str | None = None

    @property
    def name(self) -> str:
        return self.label or self.algo


def log_bins(rows_by_run, n_bins: int = 20) -> np.ndarray:
    """Geometric bin edges from the earliest positive time to the latest."""
    times = [r.wall_time_s for rows in rows_by_run for r in rows]
    pos = [t for t in times if t > 0]
    if not pos:
        return np.zeros(1)
    lo, hi = min(pos), max(times)
    if hi <= lo or n_bins < 2:
        return np.array([hi])
    return np.geomspace(lo, hi, n_bins)


def _value_at(rows, metric, t):
    val = None
    for r in rows:
        if r.wall_time_s > t:
            break
        v = getattr(r, metric)
        if v is not None:
            val = abs(v) if metric == "subopt_rel" else v
    return val


def aggregate(rows_by_run, edges) -> list[dict]:
    """Median and quartiles of every metric at every bin edge."""
    out = []
    for t in edges:
        rec = {"bin_time_s": float(t)}
        for m in BENCH_METRICS:
            vals = [v for v in (_value_at(rows, m, t) for rows in rows_by_run) if v is not None]
            if vals:
                q1, med, q3 = np.percentile(vals, [25, 50, 75])
                rec[f"{m}_median"], rec[f"{m}_q1"], rec[f"{m}_q3"] = float(med), float(q1), float(q3)
            else:
                rec[f"{m}_median"] = rec[f"{m}_q1"] = rec[f"{m}_q3"] = None
            rec[f"{m}_runs"] = len(vals)
        out.append(rec)
    return out


def _one(args):
    case, tree, problems, reference, seed = args
    cfg = replace(case.config, seed=seed)
    kw = {}
    if case.algo in ("par", "async", "ph"):
        kw["mode"] = case.mode
    try:
        rec = solve(case.algo, tree, problems, cfg, reference, schedule=case.schedule, **kw)
        return rec.rows, None
    except Exception as exc:  # noqa: BLE001 - failures are recorded, not fatal
        return None, f"{type(exc).__name__}: {exc}"


def run_bench(cases, tree, problems, reference=None, repetitions=10, seed_base=0, n_bins=20, jobs=1):
    """
    Run every case ``repetitions`` times with seeds ``seed_base + r``.

    Returns ``(table, failures)`` where ``table`` maps a case name to its
    aggregated rows and ``failures`` lists ``(name, seed, message)``.
    Concurrent repetitions (``jobs > 1``) are refused for cases that run
    their own workers in real time, since they would distort each other's
    timings.
    """
    if repetitions < 1:
        raise ValueError("need at least one repetition")
    table, failures = {}, []
    for case in cases:
        parallel_inside = case.schedule is None and case.config.workers > 1
        n_jobs = 1 if parallel_inside else jobs
        if parallel_inside and jobs > 1:
            log.warning("case %s runs its own workers; repetitions run sequentially", case.name)
        tasks = [(case, tree, problems, reference, seed_base + r) for r in range(repetitions)]
        if n_jobs > 1:
            with ProcessPoolExecutor(max_workers=n_jobs) as ex:
                results = list(ex.map(_one, tasks))
        else:
            results = [_one(t) for t in tasks]
        runs = []
        for r, (rows, err) in enumerate(results):
            if err is not None:
                failures.append((case.name, seed_base + r, err))
            else:
                runs.append(rows)
        table[case.name] = aggregate(runs, log_bins(runs, n_bins)) if runs else []
    return table, failures


def bench_csv(table) -> str:
    cols = ["algo", "bin_time_s"] + [
        f"{m}_{k}" for m in BENCH_METRICS for k in ("median", "q1", "q3", "runs")
    ]
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for name, rows in table.items():
        for rec in rows:
            w.writerow([name] + ["" if rec[c] is None else format(rec[c], ".17g") if isinstance(rec[c], float) else rec[c] for c in cols[1:]])
    return buf.getvalue()
