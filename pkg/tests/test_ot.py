import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from mgm.ot import (DiscreteDistribution, canonical_metric, pairwise_cost, w1_between_points, w1_discrete,
                    w1_empirical)

from oracles import brute_force_w1, lp_vertex_w1

EUCLID = lambda a, b: float(np.sqrt(((a - b) ** 2).sum()))  # noqa: E731


def scipy_lp(p, q, cost):
    m, n = cost.shape
    A = np.zeros((m + n, m * n))
    for i in range(m):
        A[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        A[m + j, j::n] = 1.0
    res = linprog(cost.reshape(-1), A_eq=A, b_eq=np.concatenate([p, q]), bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


def test_single_points():
    assert w1_empirical([[0.0, 0.0]], [[3.0, 4.0]]) == 5.0
    assert w1_empirical([[0.0, 0.0]], [[3.0, 4.0]], metric="manhattan") == 7.0
    assert w1_empirical([[1.0, 2.0]], [[1.0, 2.0]]) == 0.0


def test_swapped_pair_is_matched_for_free():
    a = np.array([[0.0, 0.0], [1.0, 1.0]])
    assert w1_empirical(a, a[::-1]) == 0.0


def test_point_mass_against_two_points():
    plan = w1_between_points([1.0], [0.5, 0.5], [[0.0]], [[-1.0], [3.0]])
    assert plan.value == pytest.approx(2.0, abs=1e-15)
    assert np.allclose(plan.plan, [[0.5, 0.5]])


def test_translation_by_a_vector():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(30, 2))
    # shifting every point by v costs |v| and nothing can do better
    assert w1_empirical(a, a + [0.3, 0.4]) == pytest.approx(0.5, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 6))
def test_empirical_matches_brute_force(seed, n):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
    assert w1_empirical(a, b) == pytest.approx(brute_force_w1(a, b, EUCLID), abs=1e-12)


def test_discrete_matches_vertex_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(10):
        p, q = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(4))
        cost = rng.uniform(0, 5, size=(3, 4))
        assert w1_discrete(p, q, cost).value == pytest.approx(lp_vertex_w1(p, q, cost), abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), m=st.integers(1, 9), n=st.integers(1, 9))
def test_discrete_matches_scipy_linprog(seed, m, n):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(m)), rng.dirichlet(np.ones(n))
    cost = pairwise_cost(rng.normal(size=(m, 2)), rng.normal(size=(n, 2)))
    assert w1_discrete(p, q, cost).value == pytest.approx(scipy_lp(p, q, cost), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), m=st.integers(1, 8), n=st.integers(1, 8), sparse=st.booleans())
def test_plan_is_feasible_and_certified_by_its_duals(seed, m, n, sparse):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(m)), rng.dirichlet(np.ones(n))
    if sparse:
        # degenerate instances: zero masses and integer costs with ties
        p[rng.random(m) < 0.3] = 0.0
        p = p / p.sum() if p.sum() > 0 else np.full(m, 1.0 / m)
        cost = rng.integers(0, 3, size=(m, n)).astype(float)
    else:
        cost = rng.uniform(0, 1, size=(m, n))
    tp = w1_discrete(p, q, cost)
    assert (tp.plan >= 0).all()
    assert np.abs(tp.plan.sum(axis=1) - p).max() < 1e-12
    assert np.abs(tp.plan.sum(axis=0) - q).max() < 1e-12
    assert (tp.f[:, None] + tp.g[None, :] <= cost + 1e-12).all()
    assert abs(tp.value - tp.dual_value) < 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_metric_axioms(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(5, 2))
    w = [rng.dirichlet(np.ones(5)) for _ in range(3)]
    d = lambda a, b: w1_between_points(a, b, pts, pts).value  # noqa: E731
    assert d(w[0], w[0]) == 0.0
    assert d(w[0], w[1]) == pytest.approx(d(w[1], w[0]), abs=1e-12)
    assert d(w[0], w[2]) <= d(w[0], w[1]) + d(w[1], w[2]) + 1e-12
    assert d(w[0], w[1]) > 0


def test_empirical_equals_discrete_on_uniform_weights():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(12, 2)), rng.normal(size=(12, 2))
    u = np.full(12, 1 / 12)
    assert w1_empirical(a, b) == pytest.approx(w1_between_points(u, u, a, b).value, abs=1e-12)


def test_discrete_metric_is_total_variation():
    p, q = np.array([0.5, 0.3, 0.2]), np.array([0.1, 0.3, 0.6])
    pts = np.arange(3.0)[:, None]
    assert w1_between_points(p, q, pts, pts, metric="discrete").value == pytest.approx(0.4, abs=1e-15)


def test_large_cloud_runs():
    rng = np.random.default_rng(0)
    assert w1_empirical(rng.normal(size=(2000, 2)), rng.normal(size=(2000, 2))) > 0


def test_metric_aliases():
    assert canonical_metric("l1") == "manhattan" and canonical_metric("euclid") == "euclidean"
    with pytest.raises(ValueError):
        canonical_metric("cosine")


@pytest.mark.parametrize("a,b", [
    (np.zeros((3, 2)), np.zeros((4, 2))),
    (np.zeros((0, 2)), np.zeros((0, 2))),
    (np.array([[np.nan, 0.0]]), np.zeros((1, 2))),
    (np.zeros((2, 2)), np.zeros((2, 3))),
])
def test_empirical_rejects_bad_clouds(a, b):
    with pytest.raises(ValueError):
        w1_empirical(a, b)


def test_discrete_rejects_bad_inputs():
    with pytest.raises(ValueError):
        w1_discrete([0.5, 0.6], [1.0], np.zeros((2, 1)))
    with pytest.raises(ValueError):
        w1_discrete([1.0], [1.0], np.zeros((2, 1)))
    with pytest.raises(ValueError):
        w1_discrete([-0.5, 1.5], [1.0], np.zeros((2, 1)))
    with pytest.raises(ValueError):
        DiscreteDistribution([[0.0], [1.0]], [1.0])
