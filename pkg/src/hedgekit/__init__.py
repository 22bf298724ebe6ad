"""Progressive Hedging and its randomized, parallel and asynchronous variants."""

__version__ = "0.1.0"

from .algorithms import (  # noqa: E402
    MetricsRow, RunRecord, metrics, residual_stop, solve, solve_ph, solve_rph,
    solve_rph_async, solve_rph_parallel,
)
from .config import AlgorithmConfig, SamplingLaw, StepsizeRule, theorem3_stepsize  # noqa: E402
from .hydro import HydroParams, ReferenceSolution, build_hydro, extensive_form  # noqa: E402
from .prox_qp import ProxError, ProxResult, ProxWorkspace, QpScenarioProblem, prox  # noqa: E402
from .runtime import DelayStats, SimSchedule, measure_tau, pool_create  # noqa: E402
from .scenario_tree import ScenarioTree, binary_tree, project_nonanticipative, project_scenario  # noqa: E402
from .splitting import SplittingState, arock_step, dr_step, rdr_step  # noqa: E402

__all__ = [
    "AlgorithmConfig", "DelayStats", "HydroParams", "MetricsRow", "ProxError", "ProxResult",
    "ProxWorkspace", "QpScenarioProblem", "ReferenceSolution", "RunRecord", "SamplingLaw",
    "ScenarioTree", "SimSchedule", "SplittingState", "StepsizeRule", "arock_step", "binary_tree",
    "build_hydro", "dr_step", "extensive_form", "measure_tau", "metrics", "pool_create", "project_nonanticipative",
    "project_scenario", "prox", "rdr_step", "residual_stop", "solve", "solve_ph", "solve_rph",
    "solve_rph_async", "solve_rph_parallel", "theorem3_stepsize",
]
