import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kmdp.infogain import (
    MigInputError,
    analytic_mig,
    cached_mig_schedule,
    candidate_mesh,
    exact_mig,
    greedy_mig,
    info_gain,
    mig_schedule,
    sequential_gains,
)
from kmdp.kernels import IndexDelta, Linear, Matern, Product, SquaredExponential, Sum, gram


def test_info_gain_empty_and_single_point():
    k = SquaredExponential(d=1)
    assert info_gain(k, np.zeros((0, 1)), 1.0) == 0.0
    assert info_gain(k, [[0.3]], 2.0) == pytest.approx(0.5 * math.log(1 + 1 / 2.0))


def test_info_gain_matches_slogdet():
    rng = np.random.default_rng(0)
    k = Matern(d=2, nu=1.5, lengthscale=0.4)
    X = rng.uniform(size=(25, 2))
    _, logdet = np.linalg.slogdet(np.eye(25) + gram(k, X) / 0.3)
    assert info_gain(k, X, 0.3) == pytest.approx(0.5 * logdet, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 40), st.floats(0.01, 5))
def test_telescoping_any_order(seed, n, lam):
    rng = np.random.default_rng(seed)
    k = Sum(SquaredExponential(d=2, lengthscale=0.5), Linear(d=2), shared=True)
    X = rng.uniform(-1, 1, (n, 2))
    batch = info_gain(k, X, lam)
    for _ in range(3):
        assert abs(sequential_gains(k, X[rng.permutation(n)], lam).sum() - batch) <= 1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 40), st.floats(0.01, 5))
def test_variance_sum_bound(seed, n, lam):
    rng = np.random.default_rng(seed)
    k = SquaredExponential(d=2, lengthscale=0.3)
    X = rng.uniform(0, 1, (n, 2))
    g = sequential_gains(k, X, lam)
    variances = lam * np.expm1(2 * g)
    assert variances.sum() <= (2 * lam + 1) * g.sum() + 1e-8


def test_greedy_picks_highest_variance_first_with_lowest_index_ties():
    k = SquaredExponential(d=1)
    C = np.array([[0.0], [0.5], [1.0]])
    est = greedy_mig(k, C, 1, 1.0)
    np.testing.assert_array_equal(est.selected_points, [[0.0]])


def test_greedy_and_exact_agree_at_t1():
    k = SquaredExponential(d=1)
    C = np.random.default_rng(0).uniform(size=(7, 1))
    assert greedy_mig(k, C, 1, 0.5).value == pytest.approx(exact_mig(k, C, 1, 0.5).value)


def test_greedy_submodular_guarantee():
    rng = np.random.default_rng(5)
    for _ in range(20):
        k = SquaredExponential(d=2, lengthscale=rng.uniform(0.1, 1))
        C = rng.uniform(size=(rng.integers(4, 11), 2))
        t = int(rng.integers(1, 5))
        lam = float(rng.uniform(0.05, 2))
        assert greedy_mig(k, C, t, lam).value >= (1 - 1 / math.e) * exact_mig(k, C, t, lam).value - 1e-9


def test_exact_limits_and_errors():
    k = Linear(d=1)
    C = np.linspace(0, 1, 8)[:, None]
    with pytest.raises(MigInputError):
        exact_mig(k, C, 7, 1.0)
    with pytest.raises(MigInputError):
        greedy_mig(k, C, 9, 1.0)
    with pytest.raises(MigInputError):
        greedy_mig(k, C, 2, 0.0)
    assert greedy_mig(k, C, 0, 1.0).value == 0.0
    assert greedy_mig(k, C, 20, 1.0, replacement=True).t == 20


def test_schedule_nondecreasing_and_prefix_consistent():
    k = SquaredExponential(d=1, lengthscale=0.2)
    C = candidate_mesh(k, 0, 1, size=64)
    s = mig_schedule(k, C, 30, 0.5)
    assert np.all(np.diff(s) >= 0)
    assert s[9] == pytest.approx(greedy_mig(k, C, 10, 0.5).value, rel=1e-12)


def test_linear_kernel_greedy_equals_rank_formula_on_axis_mesh():
    # with replacement, d orthogonal axes share the budget; gamma grows like d/2 ln(t)
    k = Linear(d=2)
    C = candidate_mesh(k, -1, 1, size=25)
    s = mig_schedule(k, C, 400, 1.0, replacement=True)
    assert s[-1] == pytest.approx(2 * 0.5 * math.log(1 + 2 * 200 / 1.0), rel=0.05)


def test_candidate_mesh_enumerates_index_coordinates():
    k = Product(SquaredExponential(d=1), IndexDelta(cardinality=3))
    M = candidate_mesh(k, 0, 1, size=5)
    assert M.shape == (15, 2)
    assert sorted(set(M[:, 1])) == [0.0, 1.0, 2.0]
    S = candidate_mesh(SquaredExponential(d=2), 0, 1, size=16, kind="sobol", seed=3)
    assert S.shape == (16, 2) and S.min() >= 0 and S.max() <= 1


def test_cache_round_trip(tmp_path):
    k = SquaredExponential(d=1, lengthscale=0.3)
    C = candidate_mesh(k, 0, 1, size=32)
    a = cached_mig_schedule(k, C, 20, 0.5, tmp_path)
    assert len(list(tmp_path.glob("*.npy"))) == 1
    b = cached_mig_schedule(k, C, 20, 0.5, tmp_path)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, mig_schedule(k, C, 20, 0.5))


def test_analytic_rates():
    t = 1000.0
    assert analytic_mig(Linear(d=3), t) == pytest.approx(3 * math.log(t))
    assert analytic_mig(SquaredExponential(d=2), t) == pytest.approx(math.log(t) ** 2)
    e = 2 * 3 / (2 * 2.5 + 2 * 3)
    assert analytic_mig(Matern(d=2, nu=2.5), t) == pytest.approx(t**e * math.log(t))
    s = Sum(Linear(d=1), SquaredExponential(d=1))
    assert analytic_mig(s, t) == pytest.approx(math.log(t) + math.log(t) + 2 * math.log(t))
    p = Product(SquaredExponential(d=1), IndexDelta(cardinality=2))
    assert analytic_mig(p, t) == pytest.approx(2 * math.log(t) + 2 * math.log(t))


def _projections(C, k):
    d1 = k.left.dim
    return np.unique(C[:, :d1], axis=0), np.unique(C[:, d1:], axis=0)


def test_composite_bounds_on_exact_instances():
    rng = np.random.default_rng(11)
    for trial in range(15):
        lam = float(rng.uniform(0.1, 2))
        t = int(rng.integers(1, 4))
        a, b = rng.uniform(size=(3, 1)), rng.uniform(size=(3, 1))
        C = np.array([[x[0], y[0]] for x in a for y in b])  # 9 points, product structure
        s = Sum(SquaredExponential(d=1, lengthscale=0.3), Linear(d=1))
        X1, X2 = _projections(C, s)
        lhs = exact_mig(s, C, t, lam).value
        rhs = exact_mig(s.left, X1, t, lam, replacement=True).value + exact_mig(s.right, X2, t, lam, replacement=True).value
        assert lhs <= rhs + 2 * math.log(t) + 1e-9
        # product with an index kernel of rank 2
        p = Product(SquaredExponential(d=1, lengthscale=0.3), IndexDelta(cardinality=2))
        Cp = np.array([[x[0], i] for x in a for i in (0.0, 1.0)])
        lhs = exact_mig(p, Cp, t, lam).value
        rhs = 2 * exact_mig(p.left, np.unique(Cp[:, :1], axis=0), t, lam, replacement=True).value + 2 * math.log(t)
        assert lhs <= rhs + 1e-9
