"""
Douglas-Rachford building blocks in the probability-weighted geometry.

``B`` is the normal cone of the non-anticipativity subspace W, so its
resolvent is the projection onto W.  ``A`` stacks the scenario costs, so its
resolvent is the row-wise prox.  Progressive Hedging is the averaged
composition of the two reflections; the randomized and asynchronous variants
update one row at a time.

The global variable ``z`` is the only state.  The decomposition
``z = x + mu w`` with ``x`` in W and ``w`` in its orthogonal complement is
recomputed on demand.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .prox_qp import DEFAULT_TOL, INFEASIBLE, SOLVED, ProxError, ProxWorkspace, prox
from .scenario_tree import ScenarioTree

log = logging.getLogger(__name__)


@dataclass
class SplittingState:
    """Global Douglas-Rachford variable ``z`` and prox parameter ``mu``."""

    z: np.ndarray
    mu: float = 1.0

    def __post_init__(self):
        self.z = np.array(self.z, dtype=np.float64, ndmin=2)
        if not np.all(np.isfinite(self.z)):
            raise ValueError("z must be finite")
        if not self.mu > 0:
            raise ValueError("mu must be positive")

    def decompose(self, tree: ScenarioTree):
        """Return ``(x, w)`` with ``z = x + mu w``."""
        x = tree.project(self.z)
        return x, (self.z - x) / self.mu


def solve_scenario(problem, v, mu, tol=DEFAULT_TOL, workspace=None, scenario=None):
    """
    Prox of one scenario with failure policy applied.

    Infeasibility raises :class:`ProxError`.  Running out of inner iterations
    logs a warning and returns the best iterate.
    """
    res = prox(problem, v, mu, tol, workspace)
    if res.status == INFEASIBLE:
        raise ProxError(f"scenario {scenario} subproblem is infeasible", scenario, INFEASIBLE)
    if res.status != SOLVED:
        log.warning("scenario %s prox stopped with status %s", scenario, res.status)
    return res


def reflected_resolvent_B(z, tree: ScenarioTree, mu: float = 1.0):
    """Projection ``x`` of ``z`` onto W and its reflection ``2x - z``."""
    x = tree.project(z)
    return x, 2.0 * x - z


def reflected_resolvent_A(z, problems, mu: float, eps_sub: float = DEFAULT_TOL, workspaces=None):
    """Row-wise prox ``y`` of ``z`` and its reflection ``2y - z``."""
    z = np.asarray(z, dtype=np.float64)
    if len(problems) != z.shape[0]:
        raise ValueError(f"{len(problems)} problems for {z.shape[0]} rows")
    y = np.empty_like(z)
    for s, pb in enumerate(problems):
        ws = workspaces[s] if workspaces is not None else None
        y[s] = solve_scenario(pb, z[s], mu, eps_sub, ws, scenario=s).y
    return y, 2.0 * y - z


def dr_step(state: SplittingState, tree, problems, eps_sub=DEFAULT_TOL, workspaces=None):
    """One full iteration ``z+ = (O_A(O_B z) + z) / 2``."""
    _, rb = reflected_resolvent_B(state.z, tree, state.mu)
    _, ra = reflected_resolvent_A(rb, problems, state.mu, eps_sub, workspaces)
    return SplittingState(0.5 * ra + 0.5 * state.z, state.mu)


def _row_innovation(z, s, tree, problem, mu, eps_sub, workspace):
    """``(x_bar, y_hat)`` for row ``s``: projected row and prox at its reflection."""
    x_bar = tree.project_row(z, s)
    y_hat = solve_scenario(problem, 2.0 * x_bar - z[s], mu, eps_sub, workspace, scenario=s).y
    return x_bar, y_hat


def rdr_step(state: SplittingState, tree, problems, s: int, eps_sub=DEFAULT_TOL, workspace=None):
    """
    Randomized step: only row ``s`` moves, to its value under :func:`dr_step`.

    With ``x_bar`` the projected row and ``y_hat`` the prox at ``2 x_bar - z^s``
    the new row is ``z^s + y_hat - x_bar``.
    """
    if not 0 <= s < tree.S:
        raise IndexError(f"scenario {s} out of range")
    x_bar, y_hat = _row_innovation(state.z, s, tree, problems[s], state.mu, eps_sub, workspace)
    z = state.z.copy()
    z[s] = z[s] + (y_hat - x_bar)
    return SplittingState(z, state.mu)


def arock_step(
    state: SplittingState, stale_z, s: int, eta: float, q_s: float, tree, problems,
    eps_sub=DEFAULT_TOL, workspace=None,
):
    """
    Delayed coordinate step.

    Row ``s`` of the current ``z`` moves by ``(2 eta / (S q_s)) (y_hat - x_bar)``
    where ``x_bar`` and ``y_hat`` are computed from ``stale_z``.
    """
    if not eta > 0 or not q_s > 0:
        raise ValueError("eta and q_s must be positive")
    stale_z = np.asarray(stale_z, dtype=np.float64)
    if stale_z.shape != state.z.shape:
        raise ValueError("stale_z shape differs from z")
    x_bar, y_hat = _row_innovation(stale_z, s, tree, problems[s], state.mu, eps_sub, workspace)
    z = state.z.copy()
    z[s] = z[s] + (2.0 * eta / (tree.S * q_s)) * (y_hat - x_bar)
    return SplittingState(z, state.mu)


def p_norm(a, tree: ScenarioTree) -> float:
    return tree.norm(a)


def fixed_point_residual(state: SplittingState, tree, problems, eps_sub=DEFAULT_TOL) -> float:
    """``||dr_step(z) - z||_P``."""
    return tree.norm(dr_step(state, tree, problems, eps_sub).z - state.z)


__all__ = [
    "SplittingState", "ProxWorkspace", "solve_scenario", "reflected_resolvent_A",
    "reflected_resolvent_B", "dr_step", "rdr_step", "arock_step", "p_norm",
    "fixed_point_residual",
]
