"""
Solver configuration: sampling laws, stepsize rules, stopping thresholds and
seeded random streams.

Random streams
--------------
All randomness comes from numpy's PCG64 bit generator seeded through
``numpy.random.SeedSequence``.  A run seed spawns independent child
sequences; child 0 drives scenario draws.  Simulated schedules use their own
seed, with one child sequence per worker.  Scenario draws use inverse-CDF
sampling: ``u = rng.random()`` then the first index with ``cumsum(q) > u``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np


class ConfigError(ValueError):
    pass


def scenario_stream(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed).spawn(1)[0]))


def worker_streams(seed: int, n_workers: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(n_workers)
    return [np.random.Generator(np.random.PCG64(ch)) for ch in children]


@dataclass(frozen=True, eq=False)
class SamplingLaw:
    """Probability ``q`` of drawing each scenario."""

    kind: str
    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64).ravel()
        if q.size == 0 or np.any(~np.isfinite(q)) or np.any(q <= 0):
            raise ConfigError("sampling probabilities must be positive")
        if abs(q.sum() - 1.0) > 1e-12:
            raise ConfigError(f"sampling probabilities sum to {q.sum()!r}")
        if self.kind not in ("uniform", "p", "explicit"):
            raise ConfigError(f"unknown sampling kind {self.kind!r}")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @classmethod
    def uniform(cls, S: int) -> "SamplingLaw":
        return cls("uniform", np.full(S, 1.0 / S))

    @classmethod
    def proportional(cls, probabilities) -> "SamplingLaw":
        return cls("p", np.asarray(probabilities, dtype=np.float64))

    @classmethod
    def explicit(cls, q) -> "SamplingLaw":
        return cls("explicit", np.asarray(q, dtype=np.float64))

    @classmethod
    def resolve(cls, spec, tree) -> "SamplingLaw":
        if isinstance(spec, SamplingLaw):
            law = spec
        elif spec == "uniform":
            law = cls.uniform(tree.S)
        elif spec == "p":
            law = cls.proportional(tree.probabilities)
        else:
            law = cls.explicit(spec)
        if law.q.size != tree.S:
            raise ConfigError(f"sampling law has {law.q.size} entries for {tree.S} scenarios")
        return law

    @property
    def S(self) -> int:
        return self.q.size

    @property
    def q_min(self) -> float:
        return float(self.q.min())

    @cached_property
    def _cum(self) -> np.ndarray:
        return np.cumsum(self.q)

    def draw(self, rng: np.random.Generator) -> int:
        u = rng.random()
        return min(int(np.searchsorted(self._cum, u, side="right")), self.S - 1)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "q": self.q.tolist()}


def theorem3_stepsize(c: float, tau: float, S: int, q_min: float) -> float:
    """Largest stepsize allowed for delays bounded by ``tau``: c S q_min / (2 tau sqrt(q_min) + 1)."""
    if not 0.0 < c < 1.0:
        raise ConfigError("c must lie in (0, 1)")
    if tau < 0:
        raise ConfigError("tau must be nonnegative")
    return c * S * q_min / (2.0 * tau * math.sqrt(q_min) + 1.0)


@dataclass(frozen=True)
class StepsizeRule:
    """
    Asynchronous stepsize.

    ``unit``: 1.  ``fixed``: ``value``.  ``theorem3``: delay-safe bound with
    constant ``c`` and delay bound ``tau`` (``None`` means take the bound from
    the worker pool).  ``rdr``: ``S q_s / 2`` for the updated scenario ``s``,
    which turns the asynchronous update into the randomized one.
    """

    kind: str = "unit"
    value: float | None = None
    c: float | None = None
    tau: float | None = None

    def __post_init__(self):
        if self.kind not in ("unit", "fixed", "theorem3", "rdr"):
            raise ConfigError(f"unknown stepsize rule {self.kind!r}")
        if self.kind == "fixed" and not (self.value is not None and self.value > 0):
            raise ConfigError("fixed stepsize must be positive")
        if self.kind == "theorem3":
            if self.c is None or not 0.0 < self.c < 1.0:
                raise ConfigError("theorem3 needs 0 < c < 1")
            if self.tau is not None and self.tau < 0:
                raise ConfigError("tau must be nonnegative")

    @classmethod
    def parse(cls, text: str) -> "StepsizeRule":
        """Parse ``unit``, ``rdr``, ``fixed:<v>`` or ``theorem3:<c>,<tau|auto>``."""
        if isinstance(text, StepsizeRule):
            return text
        head, _, rest = str(text).partition(":")
        try:
            if head in ("unit", "rdr") and not rest:
                return cls(head)
            if head == "fixed":
                return cls("fixed", value=float(rest))
            if head == "theorem3":
                c, _, tau = rest.partition(",")
                tau = None if tau in ("", "auto") else float(tau)
                return cls("theorem3", c=float(c), tau=tau)
        except ValueError as exc:
            raise ConfigError(f"bad stepsize {text!r}: {exc}") from None
        raise ConfigError(f"bad stepsize {text!r}")

    def describe(self) -> str:
        if self.kind == "fixed":
            return f"fixed:{self.value!r}"
        if self.kind == "theorem3":
            tau = "auto" if self.tau is None else repr(self.tau)
            return f"theorem3:{self.c!r},{tau}"
        return self.kind

    def resolve(self, law: SamplingLaw, tau_bound: float | None = None):
        """Per-scenario stepsize array."""
        S = law.S
        if self.kind == "unit":
            return np.ones(S)
        if self.kind == "fixed":
            return np.full(S, float(self.value))
        if self.kind == "rdr":
            return S * law.q / 2.0
        tau = self.tau if self.tau is not None else tau_bound
        if tau is None:
            raise ConfigError("theorem3 stepsize needs a delay bound")
        return np.full(S, theorem3_stepsize(self.c, tau, S, law.q_min))


@dataclass
class AlgorithmConfig:
    """
    Knobs shared by all solvers.

    ``residual_window`` of ``None`` means one window per ``S`` updates.
    ``workers`` is the batch size of the parallel variant and the worker
    count of the asynchronous one.
    """

    mu: float = 1.0
    sampling: object = "uniform"
    eta: object = "unit"
    workers: int = 1
    seed: int = 0
    max_time: float = 3600.0
    max_subproblems: int = 10**6
    max_iterations: int | None = None
    eps_abs: float = 1e-8
    eps_rel: float = 1e-4
    eps_sub: float = 1e-10
    residual_window: int | None = None
    metrics_every: int | None = None

    def __post_init__(self):
        self.eta = StepsizeRule.parse(self.eta)
        self.validate()

    def validate(self):
        if not self.mu > 0:
            raise ConfigError("mu must be positive")
        if self.workers < 1:
            raise ConfigError("need at least one worker")
        if self.eps_abs < 0 or self.eps_rel < 0:
            raise ConfigError("residual thresholds must be nonnegative")
        if self.eps_abs == 0 and self.eps_rel == 0:
            raise ConfigError("eps_abs and eps_rel cannot both be zero")
        if not self.eps_sub > 0:
            raise ConfigError("eps_sub must be positive")
        if self.max_time <= 0 or self.max_subproblems < 1:
            raise ConfigError("stopping budgets must be positive")
        if self.residual_window is not None and self.residual_window < 1:
            raise ConfigError("residual window must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eta"] = self.eta.describe()
        if isinstance(self.sampling, SamplingLaw):
            d["sampling"] = self.sampling.to_dict()
        elif not isinstance(self.sampling, str):
            d["sampling"] = {"kind": "explicit", "q": list(map(float, self.sampling))}
        return d


KNOBS = tuple(AlgorithmConfig.__dataclass_fields__)
