"""
Progressive Hedging and its randomized, parallel and asynchronous variants.

All four solvers keep the Douglas-Rachford variable ``z`` (one row per
scenario) as their state and report the projection ``x~ = P_W(z)`` as the
current feasible point.

* ``solve_ph``: prox of every scenario at ``x - mu w``, projection, dual step.
* ``solve_rph``: one sampled scenario per iteration.
* ``solve_rph_parallel``: ``M`` sampled scenarios per round, barrier, then
  all updates.  Duplicate draws in a round are dropped.
* ``solve_rph_async``: each completion updates its scenario with stepsize
  ``eta`` using the projected row taken at dispatch, then the worker gets a
  fresh scenario.

Metrics rows are emitted every PH iteration and every ``S`` subproblems for
the other variants, plus a final row.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import AlgorithmConfig, SamplingLaw, scenario_stream
from .hydro import expected_objective
from .prox_qp import INFEASIBLE, SOLVED, ProxError
from .runtime import DelayStats, InlinePool, SimSchedule, SimulatedPool, pool_create
from .scenario_tree import ScenarioTree

log = logging.getLogger(__name__)

ALGORITHMS = ("ph", "rph", "par", "async")
FEASIBILITY_TOL = 1e-10


@dataclass
class MetricsRow:
    wall_time_s: float
    iteration: int
    n_subproblems: int
    steplength: float
    subopt_rel: float | None = None
    feas_err: float | None = None


METRIC_COLUMNS = tuple(MetricsRow.__dataclass_fields__)


@dataclass
class RunRecord:
    """
    Outcome of one solver run.

    ``x`` is the final feasible point, ``z`` the final splitting variable.
    ``termination`` is one of ``residual``, ``max-time``,
    ``max-subproblems``, ``max-iterations`` or ``worker-failure``.
    """

    algo: str
    rows: list
    x: np.ndarray
    z: np.ndarray
    termination: str
    iterations: int
    subproblems: int
    objective: float
    wall_time_s: float
    delays: DelayStats | None = None
    prox_warnings: int = 0
    worker_failures: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def tau_obs(self) -> int | None:
        return None if self.delays is None or not len(self.delays) else self.delays.tau_obs

    def summary(self) -> dict:
        return {
            "algo": self.algo,
            "termination": self.termination,
            "iterations": self.iterations,
            "subproblems": self.subproblems,
            "objective": self.objective,
            "wall_time_s": self.wall_time_s,
            "tau_obs": self.tau_obs,
            "prox_warnings": self.prox_warnings,
            "worker_failures": list(self.worker_failures),
        }


class WorkerFailure(RuntimeError):
    """A round could not complete because a worker crashed."""


def residual_stop(z_prev, z_curr, eps_abs, eps_rel) -> bool:
    """``||z_curr - z_prev||_F <= eps_abs + eps_rel ||z_curr||_F``."""
    z_prev = np.asarray(z_prev, dtype=np.float64)
    z_curr = np.asarray(z_curr, dtype=np.float64)
    if z_prev.shape != z_curr.shape:
        raise ValueError("iterate shapes differ")
    return bool(np.linalg.norm(z_curr - z_prev) <= eps_abs + eps_rel * np.linalg.norm(z_curr))


def metrics(x_tilde, y_hat, reference, tree: ScenarioTree, problems):
    """
    ``(subopt_rel, feas_err)`` of a feasible point.

    ``subopt_rel = (f(x~) - f*) / f*`` (signed, ``None`` without a
    reference) and ``feas_err = max_s ||y^s - x~^s||``.
    """
    feas = float(np.max(np.linalg.norm(np.asarray(y_hat) - np.asarray(x_tilde), axis=1)))
    if reference is None:
        return None, feas
    f_star = float(reference.f_star)
    if f_star == 0.0:
        raise ValueError("relative suboptimality needs a nonzero reference objective")
    return (expected_objective(x_tilde, tree, problems) - f_star) / f_star, feas


def apply_update(z, s, coef, y_hat, x_bar):
    """``z[s] += coef (y_hat - x_bar)``; returns the squared step norm."""
    step = coef * (y_hat - x_bar)
    z[s] = z[s] + step
    return float(np.dot(step, step))


class _Monitor:
    """Counters, stopping tests and metric rows shared by all solvers."""

    def __init__(self, algo, tree, problems, config: AlgorithmConfig, pool, reference, callback):
        self.algo = algo
        self.tree = tree
        self.problems = problems
        self.config = config
        self.pool = pool
        self.reference = reference
        self.callback = callback
        self.rows: list[MetricsRow] = []
        self.y_last = np.zeros((tree.S, tree.n))
        self.k = 0
        self.n_sub = 0
        self.warnings = 0
        window = config.residual_window or tree.S
        self.window = deque(maxlen=window)
        self.every = config.metrics_every or tree.S
        self._emitted_block = 0

    def check_result(self, res):
        if res.infeasible:
            raise ProxError(f"scenario {res.scenario} subproblem is infeasible", res.scenario, INFEASIBLE)
        if res.inner_stats.status != SOLVED:
            self.warnings += 1
            log.warning("scenario %d prox stopped with status %s", res.scenario, res.inner_stats.status)
        self.y_last[res.scenario] = res.minimizer

    def emit(self, x_tilde, steplength):
        sub, feas = metrics(x_tilde, self.y_last, self.reference, self.tree, self.problems)
        self.rows.append(
            MetricsRow(self.pool.now(), self.k, self.n_sub, float(steplength), sub, feas)
        )

    def maybe_emit(self, z, steplength):
        """Emit when the subproblem count enters a new block of ``every``."""
        block = self.n_sub // self.every
        if block > self._emitted_block:
            self._emitted_block = block
            self.emit(self.tree.project(z), steplength)

    def window_residual(self) -> float:
        return math.sqrt(sum(self.window))

    def window_stop(self, z) -> bool:
        if len(self.window) < self.window.maxlen:
            return False
        c = self.config
        return self.window_residual() <= c.eps_abs + c.eps_rel * float(np.linalg.norm(z))

    def budget_reason(self):
        c = self.config
        if self.n_sub >= c.max_subproblems:
            return "max-subproblems"
        if c.max_iterations is not None and self.k >= c.max_iterations:
            return "max-iterations"
        if self.pool.now() >= c.max_time:
            return "max-time"
        return None

    def finish(self, termination, x_tilde, z, steplength, **kw) -> RunRecord:
        if not self.rows or self.rows[-1].iteration != self.k:
            self.emit(x_tilde, steplength)
        return RunRecord(
            algo=self.algo,
            rows=self.rows,
            x=x_tilde,
            z=z,
            termination=termination,
            iterations=self.k,
            subproblems=self.n_sub,
            objective=expected_objective(x_tilde, self.tree, self.problems),
            wall_time_s=self.pool.now(),
            prox_warnings=self.warnings,
            **kw,
        )


def _check_inputs(tree, problems, config):
    if len(problems) != tree.S:
        raise ValueError(f"{len(problems)} problems for {tree.S} scenarios")
    for s, pb in enumerate(problems):
        if pb.n != tree.n:
            raise ValueError(f"scenario {s} has dimension {pb.n}, tree has {tree.n}")
    config.validate()


def _in_W(tree, x, name):
    x = tree.check_matrix(x)
    gap = np.linalg.norm(tree.project(x) - x)
    if gap > FEASIBILITY_TOL * (1.0 + np.linalg.norm(x)):
        raise ValueError(f"{name} is not non-anticipative (gap {gap:.3e})")
    return np.array(x, dtype=np.float64)


def _make_pool(problems, config, n_workers, schedule, mode):
    if schedule is not None:
        return SimulatedPool(problems, config.mu, n_workers, schedule, config.eps_sub)
    if mode == "inline" or n_workers == 1:
        return InlinePool(problems, config.mu, n_workers, config.eps_sub)
    return pool_create(problems, config.mu, n_workers, mode, None, config.eps_sub)


class _PoolScope:
    """Use a caller's pool as is, or build one and close it afterwards."""

    def __init__(self, pool, *args):
        self.owned = pool is None
        self.pool = _make_pool(*args) if pool is None else pool

    def __enter__(self):
        return self.pool

    def __exit__(self, *exc):
        if self.owned:
            self.pool.close()


def _run_batch(pool, anchors: dict, epoch: int, monitor: _Monitor) -> dict:
    """Solve ``{s: anchor}`` on the pool and wait for all of them."""
    order = list(anchors)
    results = {}
    failure = None
    while order or pool.in_flight:
        while order and pool.idle_workers and failure is None:
            s = order.pop(0)
            pool.submit(s, anchors[s], epoch)
        if failure is not None and not pool.in_flight:
            break
        res = pool.next_completion()
        if res.poisoned:
            failure = failure or f"scenario {res.scenario}: {res.error}"
            continue
        results[res.scenario] = res
    if failure is not None:
        raise WorkerFailure(failure)
    for s in anchors:
        monitor.check_result(results[s])
    return results


def solve_ph(
    tree: ScenarioTree, problems, config: AlgorithmConfig | None = None, reference=None, *,
    x0=None, w0=None, pool=None, schedule: SimSchedule | None = None, mode="inline", callback=None,
) -> RunRecord:
    """
    Progressive Hedging.

    Parameters
    ----------
    tree, problems
        Scenario tree and one :class:`~hedgekit.prox_qp.QpScenarioProblem`
        per scenario.
    config : AlgorithmConfig
        ``workers`` > 1 solves each iteration's batch concurrently.
    reference : ReferenceSolution, optional
        Enables the relative suboptimality column.
    x0, w0
        Starting primal point in W and dual point orthogonal to W
        (default zeros).
    callback : callable, optional
        Called after each iteration with a dict holding ``k``, ``x``, ``w``,
        ``z`` and ``y``.
    """
    config = config or AlgorithmConfig()
    _check_inputs(tree, problems, config)
    mu = config.mu
    x = np.zeros((tree.S, tree.n)) if x0 is None else _in_W(tree, x0, "x0")
    if w0 is None:
        w = np.zeros((tree.S, tree.n))
    else:
        w = tree.check_matrix(w0).astype(np.float64, copy=True)
        if np.linalg.norm(tree.project(w)) > FEASIBILITY_TOL * (1.0 + np.linalg.norm(w)):
            raise ValueError("w0 is not orthogonal to the non-anticipative subspace")

    with _PoolScope(pool, problems, config, config.workers, schedule, mode) as pool:
        mon = _Monitor("ph", tree, problems, config, pool, reference, callback)
        z = x + mu * w
        step = 0.0
        termination = None
        while termination is None:
            anchors = {s: x[s] - mu * w[s] for s in range(tree.S)}
            try:
                results = _run_batch(pool, anchors, mon.k, mon)
            except WorkerFailure as exc:
                x_tilde = tree.project(z)
                return mon.finish("worker-failure", x_tilde, z, step, worker_failures=[str(exc)])
            y = np.vstack([results[s].minimizer for s in range(tree.S)])
            x = tree.project(y)
            w = w + (y - x) / mu
            z_new = x + mu * w
            step = float(np.linalg.norm(z_new - z))
            stop = residual_stop(z, z_new, config.eps_abs, config.eps_rel)
            z = z_new
            mon.k += 1
            mon.n_sub += tree.S
            if callback is not None:
                callback({"k": mon.k, "x": x, "w": w, "z": z, "y": y})
            mon.emit(x, step)
            termination = "residual" if stop else mon.budget_reason()
        return mon.finish(termination, x, z, step, extra={"w": w})


def _sampling(config, tree):
    return SamplingLaw.resolve(config.sampling, tree)


def _z0(tree, z0):
    return np.zeros((tree.S, tree.n)) if z0 is None else _in_W(tree, z0, "z0")


def solve_rph(
    tree: ScenarioTree, problems, config: AlgorithmConfig | None = None, reference=None, *,
    z0=None, pool=None, schedule: SimSchedule | None = None, callback=None,
) -> RunRecord:
    """
    Randomized Progressive Hedging: one sampled scenario per iteration.

    The draw ``s`` uses the sampling law of ``config``; the update is
    ``z^s += y - x_bar`` with ``x_bar`` the projected row ``s`` and ``y`` the
    prox at ``2 x_bar - z^s``.  ``callback`` receives ``k``, ``s``, ``z``,
    ``x_bar`` and ``y`` after each update.
    """
    config = config or AlgorithmConfig()
    _check_inputs(tree, problems, config)
    law = _sampling(config, tree)
    rng = scenario_stream(config.seed)
    z = _z0(tree, z0)
    with _PoolScope(pool, problems, config, 1, schedule, "inline") as pool:
        mon = _Monitor("rph", tree, problems, config, pool, reference, callback)
        termination = None
        while termination is None:
            s = law.draw(rng)
            x_bar = tree.project_row(z, s)
            pool.submit(s, 2.0 * x_bar - z[s], mon.k)
            res = pool.next_completion()
            if res.poisoned:
                return mon.finish("worker-failure", tree.project(z), z, mon.window_residual(),
                                  worker_failures=[res.error])
            mon.check_result(res)
            mon.window.append(apply_update(z, s, 1.0, res.minimizer, x_bar))
            mon.k += 1
            mon.n_sub += 1
            if callback is not None:
                callback({"k": mon.k, "s": s, "z": z, "x_bar": x_bar, "y": res.minimizer})
            mon.maybe_emit(z, mon.window_residual())
            termination = "residual" if mon.window_stop(z) else mon.budget_reason()
        return mon.finish(termination, tree.project(z), z, mon.window_residual())


def solve_rph_parallel(
    tree: ScenarioTree, problems, config: AlgorithmConfig | None = None, reference=None, *,
    z0=None, pool=None, schedule: SimSchedule | None = None, mode="real", callback=None,
    draw_batch=None,
) -> RunRecord:
    """
    Parallel randomized Progressive Hedging.

    Each round draws ``config.workers`` scenarios, drops repeated ones,
    computes their projected rows from the current ``z``, solves all
    subproblems and then applies all updates.  ``draw_batch(rng, M)`` may
    replace the sampler (for testing).
    """
    config = config or AlgorithmConfig()
    _check_inputs(tree, problems, config)
    law = _sampling(config, tree)
    rng = scenario_stream(config.seed)
    M = config.workers
    draw_batch = draw_batch or (lambda g, m: [law.draw(g) for _ in range(m)])
    z = _z0(tree, z0)
    with _PoolScope(pool, problems, config, M, schedule, mode) as pool:
        mon = _Monitor("par", tree, problems, config, pool, reference, callback)
        termination = None
        while termination is None:
            batch = list(dict.fromkeys(int(s) for s in draw_batch(rng, M)))
            x_bars = {s: tree.project_row(z, s) for s in batch}
            anchors = {s: 2.0 * x_bars[s] - z[s] for s in batch}
            try:
                results = _run_batch(pool, anchors, mon.k, mon)
            except WorkerFailure as exc:
                return mon.finish("worker-failure", tree.project(z), z, mon.window_residual(),
                                  worker_failures=[str(exc)])
            for s in batch:
                mon.window.append(apply_update(z, s, 1.0, results[s].minimizer, x_bars[s]))
            mon.k += 1
            mon.n_sub += len(batch)
            if callback is not None:
                callback({"k": mon.k, "batch": batch, "z": z})
            mon.maybe_emit(z, mon.window_residual())
            termination = "residual" if mon.window_stop(z) else mon.budget_reason()
        return mon.finish(termination, tree.project(z), z, mon.window_residual())


def solve_rph_async(
    tree: ScenarioTree, problems, config: AlgorithmConfig | None = None, reference=None, *,
    z0=None, pool=None, schedule: SimSchedule | None = None, mode="real", callback=None,
) -> RunRecord:
    """
    Asynchronous randomized Progressive Hedging.

    Each worker holds one task.  On completion the master applies
    ``z^s += (2 eta_s / (S q_s)) (y - x_bar)`` with ``x_bar`` the projected
    row taken at dispatch, records the delay in master updates, draws a new
    scenario and sends the worker ``2 x_bar' - z^{s'}`` computed from the
    current ``z``.  A crashed worker is retired; the run stops when none
    remain.  The ``theorem3`` stepsize with no explicit ``tau`` uses the
    pool's delay bound.
    """
    config = config or AlgorithmConfig()
    _check_inputs(tree, problems, config)
    law = _sampling(config, tree)
    rng = scenario_stream(config.seed)
    z = _z0(tree, z0)
    with _PoolScope(pool, problems, config, config.workers, schedule, mode) as pool:
        eta = config.eta.resolve(law, pool.delay_bound())
        coef = 2.0 * eta / (tree.S * law.q)
        mon = _Monitor("async", tree, problems, config, pool, reference, callback)
        delays = DelayStats()
        failures = []
        slots = {}

        def launch(worker):
            s = law.draw(rng)
            x_bar = tree.project_row(z, s)
            w = pool.submit(s, 2.0 * x_bar - z[s], mon.k, worker)
            slots[w] = (s, x_bar)

        for worker in pool.idle_workers:
            launch(worker)
        termination = None
        while termination is None:
            res = pool.next_completion()
            s, x_bar = slots.pop(res.worker)
            if res.poisoned:
                failures.append(f"worker {res.worker}, scenario {s}: {res.error}")
                pool.retire(res.worker)
                if pool.live_workers == 0:
                    termination = "worker-failure"
                continue
            mon.check_result(res)
            res.completion_epoch = mon.k
            delays.record(mon.k - res.dispatch_epoch)
            mon.window.append(apply_update(z, s, coef[s], res.minimizer, x_bar))
            mon.k += 1
            mon.n_sub += 1
            if callback is not None:
                callback({"k": mon.k, "s": s, "z": z, "x_bar": x_bar, "y": res.minimizer,
                          "delay": delays.delays[-1]})
            mon.maybe_emit(z, mon.window_residual())
            termination = "residual" if mon.window_stop(z) else mon.budget_reason()
            if termination is None:
                launch(res.worker)
        return mon.finish(
            termination, tree.project(z), z, mon.window_residual(),
            delays=delays, worker_failures=failures,
            extra={"eta": [float(v) for v in np.unique(eta)]},
        )


SOLVERS = {
    "ph": solve_ph,
    "rph": solve_rph,
    "par": solve_rph_parallel,
    "async": solve_rph_async,
}


def solve(algo: str, tree, problems, config=None, reference=None, **kw) -> RunRecord:
    if algo not in SOLVERS:
        raise ValueError(f"unknown algorithm {algo!r}; choose from {ALGORITHMS}")
    return SOLVERS[algo](tree, problems, config, reference, **kw)
