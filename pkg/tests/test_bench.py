import numpy as np
import pytest

from hedgekit.algorithms import AlgorithmConfig, MetricsRow, solve
from hedgekit.bench import BenchCase, aggregate, bench_csv, log_bins, run_bench
from hedgekit.runtime import SimSchedule


def row(t, sub):
    return MetricsRow(t, 1, 1, 1.0, sub, 0.0)


def test_log_bins_are_geometric():
    runs = [[row(0.0, 1.0), row(1e-3, 1.0), row(10.0, 1.0)]]
    edges = log_bins(runs, 5)
    assert edges[0] == pytest.approx(1e-3) and edges[-1] == pytest.approx(10.0)
    assert np.allclose(np.diff(np.log(edges)), np.log(10.0))


def test_quartiles_ordered_and_step_lookup():
    runs = [[row(1.0, v), row(2.0, v / 10)] for v in (1.0, 2.0, 3.0, 4.0)]
    out = aggregate(runs, [1.5, 2.0, 0.5])
    first = out[0]
    assert first["subopt_rel_q1"] <= first["subopt_rel_median"] <= first["subopt_rel_q3"]
    assert first["subopt_rel_median"] == 2.5 and first["subopt_rel_runs"] == 4
    assert out[1]["subopt_rel_median"] == pytest.approx(0.25)
    assert out[2]["subopt_rel_median"] is None and out[2]["subopt_rel_runs"] == 0


def test_single_repetition_equals_single_run(desk_hydro):
    tree, problems, ref = desk_hydro
    cfg = AlgorithmConfig(max_subproblems=80, seed=0)
    case = BenchCase("rph", cfg, SimSchedule())
    table, failures = run_bench([case], tree, problems, ref, repetitions=1, seed_base=9, n_bins=6)
    assert not failures
    rec = solve("rph", tree, problems, AlgorithmConfig(max_subproblems=80, seed=9), ref, schedule=SimSchedule())
    expected = aggregate([rec.rows], log_bins([rec.rows], 6))
    assert table["rph"] == expected
    last = rec.rows[-1]
    assert table["rph"][-1]["subopt_rel_median"] == abs(last.subopt_rel)


def test_parallel_jobs_match_sequential(desk_hydro):
    tree, problems, ref = desk_hydro
    case = BenchCase("async", AlgorithmConfig(workers=2, max_subproblems=60, eta="theorem3:0.9,auto"),
                     SimSchedule(base=1.0, slow=(0,), slow_extra=1.0))
    seq, _ = run_bench([case], tree, problems, ref, repetitions=3, n_bins=4, jobs=1)
    par, _ = run_bench([case], tree, problems, ref, repetitions=3, n_bins=4, jobs=2)
    assert seq == par
    assert bench_csv(seq) == bench_csv(par)


def test_failures_are_recorded(desk_hydro):
    tree, problems, _ = desk_hydro
    case = BenchCase("ph", AlgorithmConfig(max_iterations=2), SimSchedule(), label="bad")
    table, failures = run_bench([case], tree, problems[:-1], None, repetitions=2)
    assert table["bad"] == [] and len(failures) == 2
    with pytest.raises(ValueError):
        run_bench([case], tree, problems, repetitions=0)
