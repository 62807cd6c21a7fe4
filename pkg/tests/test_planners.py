import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kmdp.envs import LqrEnv
from kmdp.gp import GPPosterior, TransitionPosterior
from kmdp.kernels import IndexDelta, Product, SquaredExponential
from kmdp.planners import (
    FiniteModel,
    Grid,
    PlannerError,
    Policy,
    brute_force_value,
    evaluate_policy,
    evaluate_uniform,
    optimistic_plan,
    optimistic_surrogate,
    oracle_plan,
    plan,
    read_policy_csv,
    snapped_model,
    write_policy_csv,
)


def random_model(rng, S, A, tabular):
    R = rng.uniform(-1, 1, (S, A))
    if tabular:
        return FiniteModel(R, probs=rng.dirichlet(np.ones(S), size=(S, A)))
    return FiniteModel(R, next_index=rng.integers(0, S, (S, A)))


def naive_value(model, acts, s, h, H):
    """Recursive value of the Markov policy ``acts[s, h]``; no vectorization."""
    if h == H:
        return 0.0
    a = acts[s, h]
    P = model.probs[s, a] if model.probs is not None else np.eye(model.n_states)[model.next_index[s, a]]
    return model.reward[s, a] + sum(P[t] * naive_value(model, acts, t, h + 1, H) for t in range(model.n_states) if P[t])


def enumerate_best(model, H):
    S, A = model.n_states, model.n_actions
    best = np.full(S, -np.inf)
    for flat in itertools.product(range(A), repeat=S * H):
        acts = np.array(flat).reshape(S, H)
        best = np.maximum(best, [naive_value(model, acts, s, 0, H) for s in range(S)])
    return best


def test_h1_is_greedy():
    model = FiniteModel(np.array([[0.1, 0.5, 0.5], [2.0, -1.0, 0.0]]), next_index=np.zeros((2, 3), int))
    pol, val = plan(model, 1)
    np.testing.assert_array_equal(pol.actions[:, 0], [1, 0])  # tie goes to the lower index
    np.testing.assert_array_equal(val.values[:, 0], [0.5, 2.0])


def test_constant_reward_values():
    model = FiniteModel(np.full((3, 2), 0.7), next_index=np.array([[1, 2], [0, 0], [2, 1]]))
    _, val = plan(model, 4)
    for h in range(5):
        np.testing.assert_allclose(val.values[:, h], 0.7 * (4 - h))
    assert np.all(val.values[:, 4] == 0)


@pytest.mark.parametrize("tabular", [False, True])
def test_dp_matches_independent_enumeration(tabular):
    rng = np.random.default_rng(0 if tabular else 1)
    for _ in range(5):
        model = random_model(rng, 3, 2, tabular)
        pol, val = plan(model, 2)
        oracle = enumerate_best(model, 2)
        np.testing.assert_allclose(val.values[:, 0], oracle, atol=1e-12)
        np.testing.assert_allclose(brute_force_value(model, 2), oracle, atol=1e-12)
        np.testing.assert_allclose(evaluate_policy(model, pol).values, val.values, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 4), st.integers(2, 3), st.integers(1, 3), st.booleans())
def test_dp_dominates_every_policy(seed, S, A, H, tabular):
    rng = np.random.default_rng(seed)
    model = random_model(rng, S, A, tabular)
    _, val = plan(model, H)
    for _ in range(10):
        other = evaluate_policy(model, Policy(rng.integers(0, A, (S, H))))
        assert np.all(other.values[:, 0] <= val.values[:, 0] + 1e-12)
    assert np.all(evaluate_uniform(model, H).values[:, 0] <= val.values[:, 0] + 1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 5))
def test_values_monotone_in_horizon_for_nonnegative_rewards(seed, H):
    rng = np.random.default_rng(seed)
    model = FiniteModel(rng.uniform(0, 1, (4, 3)), next_index=rng.integers(0, 4, (4, 3)))
    _, short = plan(model, H)
    _, long = plan(model, H + 1)
    assert np.all(long.values[:, 0] >= short.values[:, 0])


def test_brute_force_refuses_huge_instances():
    model = FiniteModel(np.zeros((10, 3)), next_index=np.zeros((10, 3), int))
    with pytest.raises(PlannerError):
        brute_force_value(model, 5)


def test_model_validation():
    with pytest.raises(PlannerError):
        FiniteModel(np.zeros((2, 2)))
    with pytest.raises(PlannerError):
        FiniteModel(np.zeros((2, 2)), next_index=np.zeros((2, 2), int), probs=np.zeros((2, 2, 2)))
    with pytest.raises(PlannerError):
        plan(FiniteModel(np.zeros((2, 2)), next_index=np.zeros((2, 2), int)), 0)


def test_grid_snap_and_layout():
    g = Grid.uniform(-1, 1, 5, 0, 1, 2)
    assert g.n_states == 5 and g.n_actions == 2
    assert g.snap(np.array([0.49])) == 3
    np.testing.assert_array_equal(g.snap(np.array([[-0.9], [0.2]])), [0, 2])
    Z = g.z_points()
    np.testing.assert_array_equal(Z[3], [g.state_points[1, 0], g.action_points[1, 0]])
    assert g.max_snap_distance() == pytest.approx(0.25)


def test_snapped_model_indices():
    g = Grid.uniform(0, 1, 3, 0, 1, 2)
    mean_next = np.array([[0.1, 0.4], [0.6, 0.9], [1.0, 0.0]])
    model = snapped_model(g, np.zeros(6), mean_next)
    np.testing.assert_array_equal(model.next_index, [[0, 1], [1, 2], [2, 0]])


def posteriors(k, m=1):
    return GPPosterior(k, 1.0), TransitionPosterior(Product(k, IndexDelta(cardinality=m)), m, 1.0)


def test_empty_posterior_plans_lowest_action():
    g = Grid.uniform(0, 1, 4, 0, 1, 3)
    rp, tp = posteriors(SquaredExponential(d=2))
    pol, val, _ = optimistic_plan(rp, tp, 1.0, 1.0, 1.0, g, 3)
    assert np.all(pol.actions == 0)
    # every cell gets the same bonus 1 + L * 1
    np.testing.assert_allclose(val.values[:, 0], 3 * 2.0)


def test_zero_width_equals_planning_on_means():
    rng = np.random.default_rng(3)
    k = SquaredExponential(d=2, lengthscale=0.4)
    rp, tp = posteriors(k)
    Z = rng.uniform(size=(20, 2))
    rp = rp.update(Z, np.sin(3 * Z[:, 0]) - Z[:, 1])
    tp = tp.update(Z, Z[:, :1] * 0.8)
    g = Grid.uniform(0, 1, 6, 0, 1, 3)
    pol, val, model = optimistic_plan(rp, tp, 0.0, 0.0, 2.0, g, 4)
    mu_r, _ = rp.predict_many(g.z_points())
    mu_p, _ = tp.predict_many(g.z_points())
    ref_pol, ref_val = plan(snapped_model(g, mu_r, mu_p), 4)
    np.testing.assert_array_equal(pol.actions, ref_pol.actions)
    np.testing.assert_allclose(val.values, ref_val.values)


def test_surrogate_dominates_mean_and_respects_clip():
    rng = np.random.default_rng(4)
    k = SquaredExponential(d=2, lengthscale=0.4)
    rp, tp = posteriors(k)
    Z = rng.uniform(size=(10, 2))
    rp = rp.update(Z, 5 * rng.normal(size=10))
    tp = tp.update(Z, rng.uniform(size=(10, 1)))
    g = Grid.uniform(0, 1, 5, 0, 1, 2)
    model, radius = optimistic_surrogate(rp, tp, 1.5, 0.7, 3.0, g)
    mu_r, sd_r = rp.predict_many(g.z_points())
    assert np.all(model.reward.reshape(-1) >= mu_r + 1.5 * sd_r - 1e-12)
    assert np.all(radius >= 0)
    clipped, _ = optimistic_surrogate(rp, tp, 1.5, 0.7, 3.0, g, clip=1.0)
    assert np.abs(clipped.reward).max() <= 1.0
    with pytest.raises(PlannerError):
        optimistic_surrogate(rp, tp, -1.0, 0.0, 1.0, g)


def test_transition_optimism_reaches_best_successor_in_ball():
    # untrained posterior: the ball of radius beta_p covers the whole grid
    g = Grid.uniform(0, 1, 3, 0, 1, 1)
    k = SquaredExponential(d=2)
    rp = GPPosterior(k, 1.0).update(g.z_points(), np.array([0.0, 0.0, 1.0]) * 10)
    _, tp = posteriors(k)
    pol, val, model = optimistic_plan(rp, tp, 0.0, 5.0, 1.0, g, 2, transition_optimism=True)
    mu_r, _ = rp.predict_many(g.z_points())
    # first period from state 0: jump to the high-reward state 2 for the second
    assert val.values[0, 0] == pytest.approx(mu_r[0] + mu_r[2])
    np.testing.assert_allclose(model.reward.reshape(-1), mu_r)


def test_optimistic_value_bounds_true_value_when_truth_in_band():
    # truth drawn inside the band: the bonus plan must be optimistic on the grid
    rng = np.random.default_rng(6)
    k = SquaredExponential(d=2, lengthscale=0.5)
    rp, tp = posteriors(k)
    g = Grid.uniform(0, 1, 5, 0, 1, 3)
    Z = rng.uniform(size=(15, 2))
    rp = rp.update(Z, rng.normal(size=15))
    tp = tp.update(Z, rng.uniform(size=(15, 1)))
    mu_r, sd_r = rp.predict_many(g.z_points())
    mu_p, _ = tp.predict_many(g.z_points())
    truth = snapped_model(g, mu_r + rng.uniform(-1, 1, mu_r.shape) * sd_r, mu_p)
    _, val, _ = optimistic_plan(rp, tp, 1.0, 0.0, 1.0, g, 3)
    _, true_val = plan(truth, 3)
    assert np.all(val.values[:, 0] >= true_val.values[:, 0] - 1e-12)


def test_policy_csv_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    model = random_model(rng, 4, 3, False)
    pol, val = plan(model, 3)
    write_policy_csv(tmp_path / "p.csv", pol, val)
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "state,period,action,value"
    assert len(lines) == 1 + 4 * 4
    p2, v2 = read_policy_csv(tmp_path / "p.csv")
    np.testing.assert_array_equal(p2.actions, pol.actions)
    np.testing.assert_array_equal(v2.values, val.values)


def test_oracle_plan_on_lqr_prefers_small_actions_at_origin():
    env = LqrEnv(0.5, 0.5, 1.0, 1.0, 3, -1, 1, -1, 1)
    g = Grid.for_env(env, 21, 11)
    pol, val = oracle_plan(env, g)
    s0 = g.snap(np.zeros(1))
    assert g.action_points[pol(s0, 0), 0] == 0.0
    assert val(s0) == 0.0
