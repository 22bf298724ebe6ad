"""
Scenario trees and the non-anticipativity subspace.

A tree is stored as one partition of the scenario indices per stage.  The
stage-1 partition is a single bundle and every later partition refines the
previous one.  Decisions of scenarios in a common bundle must agree on that
stage's block of variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAX_SCENARIOS = 1 << 20
PROBABILITY_ATOL = 1e-12


class TreeError(ValueError):
    """Malformed tree, or arrays that do not fit the tree."""


class CapacityError(TreeError):
    """Requested tree exceeds the configured scenario limit."""


@dataclass(frozen=True)
class StageLayout:
    """Per-stage block sizes of a scenario's decision vector."""

    stage_dims: tuple[int, ...]
    offsets: tuple[tuple[int, int], ...] = field(init=False)
    n: int = field(init=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.stage_dims)
        if len(dims) < 1:
            raise TreeError("need at least one stage")
        if any(d < 1 for d in dims):
            raise TreeError(f"stage dimensions must be positive, got {dims}")
        offs, start = [], 0
        for d in dims:
            offs.append((start, start + d))
            start += d
        object.__setattr__(self, "stage_dims", dims)
        object.__setattr__(self, "offsets", tuple(offs))
        object.__setattr__(self, "n", start)

    @property
    def T(self) -> int:
        return len(self.stage_dims)

    def stage_slice(self, t: int) -> slice:
        """Column slice of stage ``t`` (0-based)."""
        lo, hi = self.offsets[t]
        return slice(lo, hi)


class ScenarioTree:
    """
    Immutable scenario tree.

    Parameters
    ----------
    probabilities : array_like
        Scenario probabilities, positive and summing to one (1e-12).
        They are renormalized to sum to one exactly after validation.
    partitions : sequence of sequences of sequences of int
        ``partitions[t]`` lists the bundles of stage ``t`` (0-based).
    stage_dims : sequence of int
        Variable count of each stage.
    """

    def __init__(self, probabilities, partitions, stage_dims):
        p = np.asarray(probabilities, dtype=np.float64).ravel()
        S = p.size
        if S < 1:
            raise TreeError("need at least one scenario")
        if S > MAX_SCENARIOS:
            raise CapacityError(f"{S} scenarios exceed limit {MAX_SCENARIOS}")
        if not np.all(np.isfinite(p)) or np.any(p <= 0):
            raise TreeError("scenario probabilities must be positive and finite")
        if abs(p.sum() - 1.0) > PROBABILITY_ATOL:
            raise TreeError(f"probabilities sum to {p.sum()!r}, expected 1")
        if abs(p.sum() - 1.0) > 4 * np.finfo(float).eps:
            p = p / p.sum()  # skipped when already normalized, so reloading is exact

        self.layout = StageLayout(tuple(stage_dims))
        if len(partitions) != self.layout.T:
            raise TreeError(
                f"{len(partitions)} partitions given for {self.layout.T} stages"
            )

        self.S = S
        self.probabilities = p
        self.probabilities.setflags(write=False)

        bundles: list[tuple[np.ndarray, ...]] = []
        labels = np.empty((self.layout.T, S), dtype=np.int64)
        for t, part in enumerate(partitions):
            seen = np.zeros(S, dtype=bool)
            stage_bundles = []
            for b, members in enumerate(part):
                idx = np.array(sorted(int(m) for m in members), dtype=np.int64)
                if idx.size == 0:
                    raise TreeError(f"empty bundle at stage {t}")
                if idx[0] < 0 or idx[-1] >= S:
                    raise TreeError(f"scenario index out of range at stage {t}")
                if np.any(seen[idx]) or np.unique(idx).size != idx.size:
                    raise TreeError(f"bundles overlap at stage {t}")
                seen[idx] = True
                labels[t, idx] = b
                idx.setflags(write=False)
                stage_bundles.append(idx)
            if not seen.all():
                raise TreeError(f"stage {t} partition does not cover all scenarios")
            bundles.append(tuple(stage_bundles))

        if len(bundles[0]) != 1:
            raise TreeError("stage-1 partition must be a single bundle")
        for t in range(1, self.layout.T):
            for idx in bundles[t]:
                parents = np.unique(labels[t - 1, idx])
                if parents.size != 1:
                    raise TreeError(
                        f"stage {t + 1} partition does not refine stage {t}"
                    )

        self._bundles = tuple(bundles)
        self._labels = labels
        self._labels.setflags(write=False)

        # normalized in-bundle weights p_s / sum_{B} p; singletons get exactly 1.0
        weights = []
        for t in range(self.layout.T):
            stage_w = []
            for idx in self._bundles[t]:
                w = p[idx] / p[idx].sum()
                w.setflags(write=False)
                stage_w.append(w)
            weights.append(tuple(stage_w))
        self._weights = tuple(weights)
        self.bundle_mass = tuple(
            np.array([p[idx].sum() for idx in self._bundles[t]])
            for t in range(self.layout.T)
        )

    # -- structure -------------------------------------------------------

    @property
    def T(self) -> int:
        return self.layout.T

    @property
    def n(self) -> int:
        return self.layout.n

    def partitions(self) -> list[list[list[int]]]:
        return [[idx.tolist() for idx in stage] for stage in self._bundles]

    def bundles(self, t: int) -> tuple[np.ndarray, ...]:
        return self._bundles[t]

    def bundle_id(self, s: int, t: int) -> int:
        return int(self._labels[t, s])

    def bundle(self, s: int, t: int) -> np.ndarray:
        """Scenarios indistinguishable from ``s`` at stage ``t`` (0-based)."""
        self._check_scenario(s)
        return self._bundles[t][self._labels[t, s]]

    def _check_scenario(self, s):
        if not 0 <= s < self.S:
            raise IndexError(f"scenario {s} out of range [0, {self.S})")

    def check_matrix(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.S, self.n):
            raise TreeError(f"expected shape {(self.S, self.n)}, got {z.shape}")
        return z

    def __repr__(self):
        return f"ScenarioTree(S={self.S}, stage_dims={self.layout.stage_dims})"

    def __eq__(self, other):
        if not isinstance(other, ScenarioTree):
            return NotImplemented
        return (
            self.layout == other.layout
            and np.array_equal(self.probabilities, other.probabilities)
            and self.partitions() == other.partitions()
        )

    # -- projections -----------------------------------------------------

    def project(self, z) -> np.ndarray:
        """P-orthogonal projection of an S x n matrix onto the subspace W."""
        z = self.check_matrix(z)
        x = np.empty_like(z)
        for t in range(self.T):
            sl = self.layout.stage_slice(t)
            for idx, w in zip(self._bundles[t], self._weights[t]):
                x[idx, sl] = np.dot(w, z[idx, sl])
        return x

    def project_row(self, z, s: int) -> np.ndarray:
        """Row ``s`` of :meth:`project` without touching other rows' averages."""
        z = self.check_matrix(z)
        self._check_scenario(s)
        row = np.empty(self.n)
        for t in range(self.T):
            sl = self.layout.stage_slice(t)
            b = self._labels[t, s]
            row[sl] = np.dot(self._weights[t][b], z[self._bundles[t][b], sl])
        return row

    def inner(self, a, b) -> float:
        """Weighted inner product sum_s p_s <a^s, b^s>."""
        a = self.check_matrix(a)
        b = self.check_matrix(b)
        return float(np.dot(self.probabilities, np.einsum("ij,ij->i", a, b)))

    def norm(self, a) -> float:
        return float(np.sqrt(max(self.inner(a, a), 0.0)))

    def random_in_W(self, rng: np.random.Generator) -> np.ndarray:
        """Random point of W, one independent value per (bundle, coordinate)."""
        x = np.empty((self.S, self.n))
        for t in range(self.T):
            sl = self.layout.stage_slice(t)
            for idx in self._bundles[t]:
                x[idx, sl] = rng.standard_normal(sl.stop - sl.start)
        return x


def project_nonanticipative(z, tree: ScenarioTree) -> np.ndarray:
    return tree.project(z)


def project_scenario(z, s: int, tree: ScenarioTree) -> np.ndarray:
    return tree.project_row(z, s)


def p_inner(a, b, tree: ScenarioTree) -> float:
    return tree.inner(a, b)


def binary_tree(
    T: int,
    stage_dims: Sequence[int] | int,
    probabilities=None,
    max_scenarios: int = MAX_SCENARIOS,
) -> ScenarioTree:
    """
    Balanced binary tree with ``2**(T-1)`` scenarios.

    Bundles at stage ``t`` are contiguous index blocks of size
    ``S / 2**(t-1)``, so scenario ``s`` branches at stage ``t`` according
    to bit ``T-1-t`` of ``s``.
    """
    if T < 1:
        raise TreeError("T must be at least 1")
    if T - 1 >= 63 or (1 << (T - 1)) > max_scenarios:
        raise CapacityError(f"binary tree with T={T} exceeds {max_scenarios} scenarios")
    S = 1 << (T - 1)
    if isinstance(stage_dims, (int, np.integer)):
        stage_dims = [int(stage_dims)] * T
    if len(stage_dims) != T:
        raise TreeError(f"{len(stage_dims)} stage dims for T={T}")
    partitions = []
    for t in range(T):
        size = S >> t
        partitions.append(
            [list(range(j * size, (j + 1) * size)) for j in range(1 << t)]
        )
    if probabilities is None:
        probabilities = np.full(S, 1.0 / S)
    return ScenarioTree(probabilities, partitions, stage_dims)

