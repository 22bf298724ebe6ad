"""
Master-worker execution substrate.

A pool receives :class:`TaskMessage` objects (scenario, prox anchor) and
returns :class:`ResultMessage` objects in completion order.  Three pools
share one interface:

``InlinePool``
    Solves at dispatch time in the caller's thread.  Completions are FIFO.
``ThreadPool``
    One thread per worker with in-process queues.  Completion order is
    whatever the platform produces.
``SimulatedPool``
    Deterministic discrete-event scheduler.  Task durations come from a
    seeded delay model and the prox is evaluated when the task completes.
    ``now()`` returns simulated time.

Workers keep only prox warm-start caches keyed by scenario.  Delays are
counted in master update epochs: the master stamps ``completion_epoch`` on
receipt and records ``completion_epoch - dispatch_epoch``.
"""

from __future__ import annotations

import heapq
import math
import queue
import threading
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .config import worker_streams
from .prox_qp import DEFAULT_TOL, INFEASIBLE, ProxResult, ProxWorkspace, prox


class PoolError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TaskMessage:
    """Scenario/anchor pair sent to a worker."""

    scenario: int
    point: np.ndarray
    dispatch_epoch: int = 0
    task_id: int = 0

    def __post_init__(self):
        point = np.array(self.point, dtype=np.float64)
        if not np.all(np.isfinite(point)):
            raise ValueError(f"non-finite anchor for scenario {self.scenario}")
        point.setflags(write=False)
        object.__setattr__(self, "point", point)


@dataclass(eq=False)
class ResultMessage:
    """
    Worker reply.

    ``error`` is set on a poisoned completion, in which case ``minimizer``
    is ``None``.  ``completion_epoch`` is filled in by the master.
    """

    scenario: int
    minimizer: np.ndarray | None
    inner_stats: ProxResult | None
    worker: int
    task_id: int
    dispatch_epoch: int
    completion_epoch: int | None = None
    error: str | None = None

    @property
    def poisoned(self) -> bool:
        return self.error is not None

    @property
    def infeasible(self) -> bool:
        return self.inner_stats is not None and self.inner_stats.status == INFEASIBLE


@dataclass
class DelayStats:
    """Observed per-update delays ``d^k`` and their running maximum."""

    delays: list = field(default_factory=list)
    tau_obs: int = 0
    histogram: Counter = field(default_factory=Counter)

    def record(self, delay: int):
        if delay < 0:
            raise ValueError("negative delay")
        self.delays.append(int(delay))
        self.histogram[int(delay)] += 1
        self.tau_obs = max(self.tau_obs, int(delay))

    def __len__(self):
        return len(self.delays)

    def to_dict(self) -> dict:
        return {
            "tau_obs": self.tau_obs,
            "count": len(self.delays),
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
        }


def measure_tau(stats: DelayStats) -> int:
    if not stats.delays:
        raise ValueError("no completed updates")
    return stats.tau_obs


@dataclass
class SimSchedule:
    """
    Simulated delay model, durations in ticks.

    ``base`` is one duration for all scenarios or one per scenario.
    Scenarios in ``slow`` take ``slow_extra`` more.  ``jitter`` adds a
    uniform draw in ``[0, jitter)`` from the worker's seeded stream.  A
    non-empty ``trace`` replaces the duration model: it lists worker
    indices in completion order (as recorded by a real run) and each event
    takes one tick.
    """

    base: object = 1.0
    slow: tuple = ()
    slow_extra: float = 0.0
    jitter: float = 0.0
    seed: int = 0
    tick_seconds: float = 1.0
    trace: tuple = ()

    def __post_init__(self):
        self.slow = tuple(int(s) for s in self.slow)
        self.trace = tuple(int(w) for w in self.trace)
        base = np.atleast_1d(np.asarray(self.base, dtype=np.float64))
        if np.any(base <= 0) or self.slow_extra < 0 or self.jitter < 0 or self.tick_seconds <= 0:
            raise ValueError("durations must be positive")
        if any(w < 0 for w in self.trace):
            raise ValueError("negative worker index in trace")

    @property
    def model(self) -> str:
        if self.trace:
            return "trace"
        if self.slow and self.slow_extra > 0:
            return "two-point"
        return "constant"

    def duration_range(self, S: int) -> tuple[float, float]:
        base = np.broadcast_to(np.atleast_1d(np.asarray(self.base, dtype=np.float64)), (S,)).copy()
        base[list(s for s in self.slow if s < S)] += self.slow_extra
        return float(base.min()), float(base.max() + self.jitter)

    def to_dict(self) -> dict:
        base = self.base if np.isscalar(self.base) else [float(b) for b in self.base]
        return {
            "base": base, "slow": list(self.slow), "slow_extra": self.slow_extra,
            "jitter": self.jitter, "seed": self.seed, "tick_seconds": self.tick_seconds,
            "trace": list(self.trace),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimSchedule":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown schedule keys {sorted(extra)}")
        return cls(**d)


class WorkerPool:
    """Common bookkeeping: warm-start caches, task ids, idle workers."""

    def __init__(self, problems, mu: float, n_workers: int, tol: float = DEFAULT_TOL):
        if n_workers < 1:
            raise ValueError("need at least one worker")
        self.problems = list(problems)
        self.mu = float(mu)
        self.tol = float(tol)
        self.M = int(n_workers)
        self._caches = [dict() for _ in range(self.M)]
        self._busy = [False] * self.M
        self._retired = [False] * self.M
        self._next_id = 0
        self.completion_log: list[int] = []
        self.fail_tasks: set[int] = set()

    # -- worker side -----------------------------------------------------

    def _work(self, worker: int, task: TaskMessage) -> ResultMessage:
        try:
            if task.task_id in self.fail_tasks:
                raise PoolError(f"injected failure of task {task.task_id}")
            ws = self._caches[worker].setdefault(task.scenario, ProxWorkspace())
            res = prox(self.problems[task.scenario], task.point, self.mu, self.tol, ws)
            return ResultMessage(task.scenario, res.y, res, worker, task.task_id, task.dispatch_epoch)
        except Exception as exc:  # noqa: BLE001 - surfaced as a poisoned completion
            return ResultMessage(
                task.scenario, None, None, worker, task.task_id, task.dispatch_epoch,
                error=f"{type(exc).__name__}: {exc}",
            )

    # -- master side -----------------------------------------------------

    @property
    def idle_workers(self) -> list[int]:
        return [i for i in range(self.M) if not self._busy[i] and not self._retired[i]]

    @property
    def live_workers(self) -> int:
        return sum(not r for r in self._retired)

    @property
    def in_flight(self) -> int:
        return sum(self._busy)

    def retire(self, worker: int):
        self._retired[worker] = True

    def _claim(self, task: TaskMessage, worker):
        if worker is None:
            idle = self.idle_workers
            if not idle:
                raise PoolError("no idle worker")
            worker = idle[0]
        if self._busy[worker] or self._retired[worker]:
            raise PoolError(f"worker {worker} is not available")
        self._busy[worker] = True
        # ids are assigned here, in dispatch order
        task = TaskMessage(task.scenario, task.point, task.dispatch_epoch, self._next_id)
        self._next_id += 1
        return worker, task

    def _release(self, result: ResultMessage) -> ResultMessage:
        self._busy[result.worker] = False
        self.completion_log.append(result.worker)
        return result

    def submit(self, scenario: int, point, epoch: int, worker: int | None = None) -> int:
        """Dispatch a new task; returns the worker that took it."""
        return self.dispatch(TaskMessage(scenario, point, epoch), worker)

    def dispatch(self, task: TaskMessage, worker: int | None = None) -> int:
        raise NotImplementedError

    def next_completion(self) -> ResultMessage:
        raise NotImplementedError

    def now(self) -> float:
        raise NotImplementedError

    def delay_bound(self) -> float | None:
        return None

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class InlinePool(WorkerPool):
    """Synchronous pool: the prox runs at dispatch, completions are FIFO."""

    def __init__(self, problems, mu, n_workers=1, tol=DEFAULT_TOL):
        super().__init__(problems, mu, n_workers, tol)
        self._done: list[ResultMessage] = []
        self._t0 = time.perf_counter()

    def dispatch(self, task, worker=None):
        worker, task = self._claim(task, worker)
        self._done.append(self._work(worker, task))
        return worker

    def next_completion(self):
        if not self._done:
            raise PoolError("nothing in flight")
        return self._release(self._done.pop(0))

    def now(self):
        return time.perf_counter() - self._t0

    def delay_bound(self):
        return 0 if self.M == 1 else None


class ThreadPool(WorkerPool):
    """One thread per worker; completions arrive on a shared queue."""

    def __init__(self, problems, mu, n_workers, tol=DEFAULT_TOL):
        super().__init__(problems, mu, n_workers, tol)
        self._inboxes = [queue.Queue() for _ in range(self.M)]
        self._outbox: queue.Queue = queue.Queue()
        self._threads = []
        for i in range(self.M):
            th = threading.Thread(target=self._loop, args=(i,), daemon=True, name=f"hedgekit-worker-{i}")
            th.start()
            self._threads.append(th)
        self._t0 = time.perf_counter()

    def _loop(self, worker):
        inbox = self._inboxes[worker]
        while True:
            task = inbox.get()
            if task is None:
                return
            self._outbox.put(self._work(worker, task))

    def dispatch(self, task, worker=None):
        worker, task = self._claim(task, worker)
        self._inboxes[worker].put(task)
        return worker

    def next_completion(self):
        if not self.in_flight:
            raise PoolError("nothing in flight")
        return self._release(self._outbox.get())

    def now(self):
        return time.perf_counter() - self._t0

    def close(self):
        for inbox in self._inboxes:
            inbox.put(None)
        for th in self._threads:
            th.join()
        self._threads = []


class SimulatedPool(WorkerPool):
    """
    Deterministic discrete-event pool.

    Ties in finish time are broken by dispatch order.  With a completion
    trace the next completing worker is read from the trace instead.
    """

    def __init__(self, problems, mu, n_workers, schedule: SimSchedule | None = None, tol=DEFAULT_TOL):
        super().__init__(problems, mu, n_workers, tol)
        self.schedule = schedule or SimSchedule()
        S = len(self.problems)
        base = np.atleast_1d(np.asarray(self.schedule.base, dtype=np.float64))
        if base.size not in (1, S):
            raise ValueError(f"schedule has {base.size} base durations for {S} scenarios")
        self._base = np.broadcast_to(base, (S,)).copy()
        self._base[[s for s in self.schedule.slow if s < S]] += self.schedule.slow_extra
        self._rngs = worker_streams(self.schedule.seed, self.M)
        self._heap: list = []
        self._pending: dict[int, tuple] = {}
        self._seq = 0
        self._clock = 0.0
        self._trace_pos = 0

    def duration(self, scenario: int, worker: int) -> float:
        d = float(self._base[scenario])
        if self.schedule.jitter > 0:
            d += self.schedule.jitter * self._rngs[worker].random()
        return d

    def dispatch(self, task, worker=None):
        worker, task = self._claim(task, worker)
        self._seq += 1
        if self.schedule.trace:
            self._pending[worker] = (self._seq, task)
        else:
            finish = self._clock + self.duration(task.scenario, worker)
            heapq.heappush(self._heap, (finish, self._seq, worker, task))
        return worker

    def next_completion(self):
        if self.schedule.trace:
            if not self._pending:
                raise PoolError("nothing in flight")
            if self._trace_pos >= len(self.schedule.trace):
                raise PoolError("completion trace exhausted")
            worker = self.schedule.trace[self._trace_pos]
            if worker not in self._pending:
                raise PoolError(f"trace names idle worker {worker}")
            self._trace_pos += 1
            _, task = self._pending.pop(worker)
            self._clock += 1.0
        else:
            if not self._heap:
                raise PoolError("nothing in flight")
            finish, _, worker, task = heapq.heappop(self._heap)
            self._clock = finish
        return self._release(self._work(worker, task))

    def now(self):
        return self._clock * self.schedule.tick_seconds

    def delay_bound(self) -> int:
        """
        Worst-case delay under the redispatch-on-completion pattern.

        Duration model: each other worker completes at most
        ``floor(d_max / d_min) + 1`` tasks while one task runs.  Trace model:
        the largest gap between consecutive completions of a worker.
        """
        if self.schedule.trace:
            last = {}
            worst = 0
            for j, w in enumerate(self.schedule.trace):
                worst = max(worst, j - last.get(w, -1) - 1)
                last[w] = j
            return worst
        lo, hi = self.schedule.duration_range(len(self.problems))
        return (self.M - 1) * (math.floor(hi / lo) + 1)


def pool_create(problems, mu, n_workers=1, mode="inline", schedule=None, tol=DEFAULT_TOL) -> WorkerPool:
    """Build a pool: ``mode`` is ``inline``, ``real`` (threads) or ``simulated``."""
    if mode == "simulated":
        return SimulatedPool(problems, mu, n_workers, schedule, tol)
    if mode == "real":
        if n_workers == 1:
            return InlinePool(problems, mu, 1, tol)
        return ThreadPool(problems, mu, n_workers, tol)
    if mode == "inline":
        return InlinePool(problems, mu, n_workers, tol)
    raise ValueError(f"unknown pool mode {mode!r}")
