import numpy as np
import pytest

from hedgekit.hydro import (
    HydroParams, build_hydro, expected_objective, extensive_form, scenario_branches,
)
from hedgekit.prox_qp import QpScenarioProblem, prox
from hedgekit.scenario_tree import ScenarioTree
from oracles import hydro_lp_reference


@pytest.mark.parametrize("B, T", [(1, 1), (1, 2), (2, 3), (3, 4)])
def test_dimensions(B, T):
    tree, problems = build_hydro(HydroParams.generate(B, T, seed=1))
    assert tree.S == 2 ** (T - 1) and tree.n == (2 * B + 1) * T
    for pb in problems:
        assert pb.A_eq.shape == (B * T, tree.n)
        assert pb.A_in.shape == (T + B * T, tree.n)
        assert np.all(pb.lower == 0) and np.all(np.isinf(pb.upper))
    assert tree.probabilities.sum() == pytest.approx(1.0, abs=1e-14)


def test_six_stages_give_32_scenarios():
    tree, _ = build_hydro(HydroParams.generate(1, 6))
    assert tree.S == 32


def test_scenario_probabilities():
    params = HydroParams.generate(1, 3, p_dry=0.3)
    tree, _ = build_hydro(params)
    assert scenario_branches(0, 3) == [0, 0] and scenario_branches(3, 3) == [1, 1]
    assert np.allclose(tree.probabilities, [0.09, 0.21, 0.21, 0.49], atol=1e-15)


def test_shared_history_shares_inflows():
    params = HydroParams.generate(2, 4, seed=3)
    tree, problems = build_hydro(params)
    B = params.B
    for t in range(tree.T):
        for bundle in tree.bundles(t):
            rows = slice(0, (t + 1) * B)
            first = problems[bundle[0]].b_eq[rows]
            for s in bundle[1:]:
                assert np.array_equal(problems[s].b_eq[rows], first)


def test_invalid_params():
    base = HydroParams.generate(1, 2).to_dict()
    for change in ({"p_dry": 1.0}, {"c_E": -1.0}, {"W_1": [100.0]}, {"c_H": [1.0]}, {"T": 0}):
        with pytest.raises(ValueError):
            HydroParams(**{**base, **change})


@pytest.mark.parametrize("B, T, seed", [(1, 2, 0), (2, 3, 1), (3, 4, 2), (2, 5, 3)])
def test_extensive_form_matches_highs(B, T, seed):
    tree, problems = build_hydro(HydroParams.generate(B, T, seed=seed))
    ref = extensive_form(tree, problems)
    x_lp, f_lp = hydro_lp_reference(tree, problems)
    assert ref.f_star == pytest.approx(f_lp, rel=1e-9)
    assert np.abs(tree.project(ref.x) - ref.x).max() <= 1e-10
    assert max(pb.violation(row) for pb, row in zip(problems, ref.x)) <= 1e-9
    assert ref.f_star == pytest.approx(expected_objective(x_lp, tree, problems), rel=1e-9)


def test_regularized_instance_matches_highs_bound():
    tree, problems = build_hydro(HydroParams.generate(2, 3, seed=4, reg=0.01))
    ref = extensive_form(tree, problems)
    x_lp, _ = hydro_lp_reference(tree, problems)
    # the LP optimum ignores the quadratic term, so it can only be worse for the full cost
    assert ref.f_star <= expected_objective(x_lp, tree, problems) + 1e-9


def test_single_scenario_is_one_prox_limit():
    rng = np.random.default_rng(0)
    Q = np.diag(rng.uniform(0.5, 2.0, 3))
    pb = QpScenarioProblem.create(3, Q=Q, c=rng.standard_normal(3), A_in=[[1.0, 1.0, 1.0]], b_in=[1.0],
                                  lower=np.full(3, -2.0))
    tree = ScenarioTree([1.0], [[[0]]], [3])
    ref = extensive_form(tree, [pb])
    # minimizer is the fixed point of its own prox
    assert np.allclose(prox(pb, ref.x[0], 1.0).y, ref.x[0], atol=1e-10)


def test_tiny_hydro_by_hand(tiny_hydro):
    tree, problems, ref = tiny_hydro
    x_lp, f_lp = hydro_lp_reference(tree, problems)
    assert abs(ref.f_star - f_lp) <= 1e-9 * abs(f_lp)
    assert ref.f_star > 0
