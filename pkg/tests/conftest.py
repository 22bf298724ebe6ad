import numpy as np
import pytest

from hedgekit.hydro import HydroParams, build_hydro, extensive_form
from hedgekit.prox_qp import QpScenarioProblem
from hedgekit.scenario_tree import ScenarioTree


def random_tree(rng, max_S=6, max_T=3, max_dim=2):
    """Random tree whose last stage separates every scenario."""
    S = int(rng.integers(1, max_S + 1))
    T = int(rng.integers(1, max_T + 1))
    dims = [int(d) for d in rng.integers(1, max_dim + 1, T)]
    partitions = [[list(range(S))]]
    for t in range(1, T):
        if t == T - 1:
            partitions.append([[s] for s in range(S)])
            break
        stage = []
        for bundle in partitions[-1]:
            cuts = sorted(set(int(c) for c in rng.integers(1, len(bundle) + 1, 2)))
            pieces, start = [], 0
            for cut in cuts + [len(bundle)]:
                if cut > start:
                    pieces.append(bundle[start:cut])
                    start = cut
            stage.extend(pieces)
        partitions.append(stage)
    p = rng.uniform(0.2, 1.0, S)
    return ScenarioTree(p / p.sum(), partitions, dims)


def random_problem(rng, n, m_in=2, bounds=True, strongly_convex=False, x0=None):
    """Random convex QP that is feasible at ``x0`` (random by default)."""
    L = rng.standard_normal((n, n)) * 0.5
    Q = L @ L.T
    if strongly_convex:
        Q += 0.5 * np.eye(n)
    x0 = rng.uniform(-1.0, 1.0, n) if x0 is None else x0
    A_in = rng.standard_normal((m_in, n))
    b_in = A_in @ x0 + rng.uniform(0.0, 1.0, m_in)
    kw = {}
    if bounds:
        kw["lower"] = x0 - rng.uniform(0.1, 2.0, n)
        kw["upper"] = x0 + rng.uniform(0.1, 2.0, n)
    return QpScenarioProblem.create(n, Q=Q, c=rng.standard_normal(n), A_in=A_in, b_in=b_in, **kw)


def random_instance(rng, strongly_convex=False, **kw):
    """Random tree and scenario QPs sharing a feasible point, so the whole problem is feasible."""
    tree = random_tree(rng, **kw)
    x0 = rng.uniform(-1.0, 1.0, tree.n)
    problems = [
        random_problem(rng, tree.n, m_in=int(rng.integers(0, 3)), strongly_convex=strongly_convex, x0=x0)
        for _ in range(tree.S)
    ]
    return tree, problems


@pytest.fixture(scope="session")
def tiny_hydro():
    tree, problems = build_hydro(HydroParams.generate(B=1, T=2, seed=0))
    return tree, problems, extensive_form(tree, problems)


@pytest.fixture(scope="session")
def desk_hydro():
    tree, problems = build_hydro(HydroParams.generate(B=2, T=4, seed=0))
    return tree, problems, extensive_form(tree, problems)


# -- acceptance report --------------------------------------------------

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    key = report.nodeid.split("::")[-1].split("[")[0]
    if report.when == "call" or not report.passed:
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        if _ACCEPTANCE.get(key) != "FAIL":
            _ACCEPTANCE[key] = status


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        number = int(key.split("_")[2])
        label = " ".join(key.split("_")[3:])
        terminalreporter.write_line(f"criterion {number:2d} {_ACCEPTANCE[key]}  {label}")
