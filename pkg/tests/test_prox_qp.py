import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hedgekit.prox_qp import (
    INFEASIBLE, SOLVED, ProxError, ProxWorkspace, QpScenarioProblem, kkt_residuals, prox,
    prox_batch,
)
from oracles import brute_force_prox


def random_small_qp(rng):
    n = int(rng.integers(1, 5))
    m_in = int(rng.integers(0, 5))
    m_eq = int(rng.integers(0, min(n, 2) + 1)) if rng.random() < 0.3 else 0
    L = rng.standard_normal((n, n)) * rng.uniform(0, 1)
    Q = L @ L.T
    x0 = rng.uniform(-1, 1, n)
    A_in = rng.standard_normal((m_in, n))
    b_in = A_in @ x0 + rng.uniform(0, 1, m_in)
    A_eq = rng.standard_normal((m_eq, n))
    b_eq = A_eq @ x0
    lower = np.where(rng.random(n) < 0.5, x0 - rng.uniform(0, 1, n), -np.inf)
    upper = np.where(rng.random(n) < 0.5, x0 + rng.uniform(0, 1, n), np.inf)
    pb = QpScenarioProblem.create(
        n, Q=Q, c=rng.standard_normal(n), A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in,
        lower=lower, upper=upper,
    )
    return pb, rng.standard_normal(n) * 2, float(rng.uniform(0.2, 5.0))


def oracle(pb, v, mu):
    return brute_force_prox(pb.Q, pb.c, pb.A_eq, pb.b_eq, pb.A_in, pb.b_in, pb.lower, pb.upper, v, mu)


def test_halfspace_example():
    # y1 + y2 >= 1 with Q = I, mu = 1, v = 0: minimize y'y subject to the cut
    pb = QpScenarioProblem.create(2, Q=np.eye(2), A_in=[[-1.0, -1.0]], b_in=[-1.0])
    res = prox(pb, np.zeros(2), 1.0)
    assert res.status == SOLVED
    assert np.allclose(res.y, [0.5, 0.5], atol=1e-12)
    assert np.allclose(res.y, oracle(pb, np.zeros(2), 1.0), atol=1e-12)
    # upper-active convention: the cut is written as -y1 - y2 <= -1
    assert res.lam_in[0] > 0


def test_unconstrained_linear_closed_form():
    a = np.array([1.0, -2.0, 0.5])
    pb = QpScenarioProblem.create(3, c=-a)
    v = np.array([0.3, 0.1, -4.0])
    assert np.allclose(prox(pb, v, 1.0).y, v + a, atol=1e-12)
    pb2 = QpScenarioProblem.create(3, Q=np.eye(3), c=-a)
    assert np.allclose(prox(pb2, v, 1.0).y, (v + a) / 2, atol=1e-12)


def test_orthant_projection():
    pb = QpScenarioProblem.create(4, lower=np.zeros(4))
    v = np.array([-1.0, 2.0, 0.0, -3.5])
    assert np.allclose(prox(pb, v, 0.7).y, np.maximum(v, 0), atol=1e-12)


def test_zero_function_is_identity():
    pb = QpScenarioProblem.create(3)
    v = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(prox(pb, v, 2.0).y, v)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matches_active_set_enumeration(seed):
    pb, v, mu = random_small_qp(np.random.default_rng(seed))
    res = prox(pb, v, mu)
    assert res.status == SOLVED
    assert np.abs(res.y - oracle(pb, v, mu)).max() <= 1e-7


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_firmly_nonexpansive(seed):
    rng = np.random.default_rng(seed)
    pb, a, mu = random_small_qp(rng)
    b = a + rng.standard_normal(pb.n) * rng.uniform(0.01, 3)
    pa, pbv = prox(pb, a, mu).y, prox(pb, b, mu).y
    d = pa - pbv
    assert d @ d <= d @ (a - b) + 1e-9 * (1 + np.abs(a - b).max() ** 2)


def test_vertex_with_bound_nearly_active():
    # regression: adding a bound and a cut in one active-set step made the
    # set overdetermined, and rho adaptation then oscillated without end
    pb, v, mu = random_small_qp(np.random.default_rng(277250459))
    res = prox(pb, v, mu)
    assert res.status == SOLVED
    assert np.abs(res.y - oracle(pb, v, mu)).max() <= 1e-9


def test_warm_start_gives_same_answer():
    rng = np.random.default_rng(11)
    pb, v, mu = random_small_qp(rng)
    ws = ProxWorkspace()
    for _ in range(20):
        v = v + rng.standard_normal(pb.n) * 0.1
        warm = prox(pb, v, mu, workspace=ws)
        cold = prox(pb, v, mu)
        assert np.abs(warm.y - cold.y).max() <= 1e-8


def test_kkt_residuals_small_at_solution():
    rng = np.random.default_rng(5)
    pb, v, mu = random_small_qp(rng)
    res = prox(pb, v, mu)
    lam = np.concatenate([res.lam_eq, res.lam_in, res.lam_bound[np.isfinite(pb.lower) | np.isfinite(pb.upper)]])
    pr, dr = kkt_residuals(pb, v, mu, res.y, lam)
    assert pr <= 1e-10 and dr <= 1e-10


def test_infeasible_detected():
    pb = QpScenarioProblem.create(2, A_in=[[1.0, 1.0], [-1.0, -1.0]], b_in=[-1.0, -1.0])
    assert prox(pb, np.zeros(2), 1.0).status == INFEASIBLE
    pb = QpScenarioProblem.create(2, A_eq=[[1.0, 0.0]], b_eq=[2.0], upper=[1.0, 5.0])
    assert prox(pb, np.zeros(2), 1.0).status == INFEASIBLE


def test_large_anchor_stays_feasible():
    pb = QpScenarioProblem.create(
        3, c=[1.0, 2.0, 3.0], A_eq=[[1.0, 1.0, 0.0]], b_eq=[4.0], A_in=[[0.0, -1.0, -1.0]],
        b_in=[-1.0], lower=np.zeros(3),
    )
    rng = np.random.default_rng(0)
    ws = ProxWorkspace()
    for scale in (1.0, 1e3, 1e6):
        for _ in range(10):
            v = rng.standard_normal(3) * scale
            res = prox(pb, v, 1.0, workspace=ws)
            assert res.status == SOLVED
            assert pb.violation(res.y) <= 1e-9 * (1 + np.abs(res.y).max())


@pytest.mark.parametrize(
    "kwargs",
    [
        {"Q": [[1.0, 2.0], [0.0, 1.0]]},
        {"Q": [[-1.0, 0.0], [0.0, 1.0]]},
        {"c": [np.nan, 0.0]},
        {"lower": [1.0, 0.0], "upper": [0.0, 1.0]},
        {"A_in": [[1.0, 0.0]], "b_in": [1.0, 2.0]},
    ],
)
def test_invalid_problems(kwargs):
    with pytest.raises(ValueError):
        QpScenarioProblem.create(2, **kwargs)


def test_bad_arguments():
    pb = QpScenarioProblem.create(2)
    with pytest.raises(ValueError):
        prox(pb, np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        prox(pb, np.zeros(3), 1.0)
    with pytest.raises(ValueError):
        prox(pb, np.array([np.inf, 0.0]), 1.0)


def test_batch_reports_index():
    good = QpScenarioProblem.create(2)
    with pytest.raises(ProxError) as info:
        prox_batch([good, good], [np.zeros(2), np.zeros(3)], 1.0)
    assert info.value.scenario == 1
