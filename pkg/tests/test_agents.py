import numpy as np
import pytest

from kmdp.agents import (
    AgentConfig,
    AgentError,
    EpisodeRecord,
    _Learner,
    decompose_episode,
    decompose_regret,
    gamma_schedules,
    run_baseline,
    run_gp_ucrl,
    run_psrl,
)
from kmdp.confidence import ConfidenceConfig
from kmdp.envs import LqrEnv, TabularEnv, tabular_as_kernel
from kmdp.kernels import IndexDelta, Linear, Product, Quadratic, SquaredExponential, Sum
from kmdp.planners import FiniteModel, Grid, Policy, plan


def small_lqr(sigma=0.05):
    return LqrEnv(0.5, 0.5, 1.0, 1.0, 3, -1, 1, -1, 1, sigma_R=sigma, sigma_P=sigma, initial_state=[0.8])


def lqr_cfg(env, L=2.0, **kw):
    kR = Sum(Quadratic(d=1), Quadratic(d=1))
    kP = Product(Sum(Linear(d=1), Linear(d=1)), IndexDelta(cardinality=1))
    conf = ConfidenceConfig(B_R=1.5, B_P=1.0, sigma_R=env.sigma_R, sigma_P=env.sigma_P, delta=0.1, H=env.H, m=1, L=L)
    return AgentConfig(kR, kP, conf, **kw)


def grid_for(env):
    return Grid.for_env(env, 9, 5)


def chain_env(H=3):
    R = np.array([[0.0, 0.1], [1.0, 0.2]])
    T = np.zeros((2, 2, 2))
    T[0, 0, 0] = T[0, 1, 1] = T[1, 0, 1] = T[1, 1, 0] = 1.0
    return TabularEnv(R, T, H)


def tabular_cfg(env, lam=0.01):
    kR, kP = tabular_as_kernel(env)
    conf = ConfidenceConfig(B_R=1.0, B_P=1.0, sigma_R=0.0, sigma_P=0.0, delta=0.1, H=env.H, m=1, L=1.0)
    return AgentConfig(kR, kP, conf, lambda_R=lam, lambda_P=lam)


def test_zero_episodes_is_empty():
    env = small_lqr()
    assert run_gp_ucrl(env, lqr_cfg(env), grid_for(env), 0, 0) == []
    assert run_psrl(env, lqr_cfg(env), grid_for(env), 0, 0) == []
    assert run_baseline(env, "random", grid_for(env), 0, 0) == []


def test_record_columns():
    assert EpisodeRecord.columns() == [
        "episode", "realized_return", "optimal_value", "policy_value", "inst_regret", "cum_regret",
        "beta_r", "beta_p", "reward_dev_sum", "trans_dev_sum", "wall_ms",
    ]


@pytest.mark.parametrize("runner", [run_gp_ucrl, run_psrl])
def test_same_seed_same_records(runner):
    env = small_lqr()
    a = runner(env, lqr_cfg(env), grid_for(env), 6, 3)
    b = runner(env, lqr_cfg(env), grid_for(env), 6, 3)
    assert [r.row() for r in a] == [r.row() for r in b]
    c = runner(env, lqr_cfg(env), grid_for(env), 6, 4)
    assert [r.realized_return for r in a] != [r.realized_return for r in c]


def test_posterior_sizes_after_l_episodes():
    env = small_lqr()
    learner = _Learner(env, lqr_cfg(env), grid_for(env), 4, 0, "ucrl")
    recs = learner.run()
    assert len(recs) == 4
    assert len(learner.rpost) == 4 * env.H
    assert len(learner.tpost) == 4 * env.H * env.m


def test_record_invariants():
    env = small_lqr()
    recs = run_gp_ucrl(env, lqr_cfg(env), grid_for(env), 8, 1)
    cum = np.cumsum([r.inst_regret for r in recs])
    np.testing.assert_allclose([r.cum_regret for r in recs], cum)
    assert all(r.inst_regret >= -1e-12 for r in recs)
    assert all(r.wall_ms == 0.0 for r in recs)
    assert all(r.beta_r > 0 and r.beta_p > 0 for r in recs)
    betas = [r.beta_r for r in recs]
    assert all(a <= b for a, b in zip(betas, betas[1:]))


def test_timing_is_recorded_on_request():
    env = small_lqr()
    recs = run_gp_ucrl(env, lqr_cfg(env, record_timing=True), grid_for(env), 2, 0)
    assert all(r.wall_ms > 0 for r in recs)


def test_dimension_mismatch_rejected():
    env = small_lqr()
    cfg = lqr_cfg(env)
    bad = AgentConfig(SquaredExponential(d=3), cfg.kernel_P, cfg.confidence)
    with pytest.raises(AgentError):
        run_gp_ucrl(env, bad, grid_for(env), 1, 0)
    with pytest.raises(AgentError):
        AgentConfig(cfg.kernel_R, cfg.kernel_P, cfg.confidence, mig_method="exact")


def test_default_lambdas():
    env = small_lqr()
    assert lqr_cfg(env).lambdas() == (3.0, 3.0)
    conf = ConfidenceConfig(1, 1, 0.0, 0.2, 0.1, 3, 1, 1.0, mode="bayes-gp")
    lr, lp = AgentConfig(SquaredExponential(d=2), SquaredExponential(d=3), conf).lambdas()
    assert lr == 1e-8 and lp == pytest.approx(0.04)


def test_gamma_schedules_shapes():
    env = small_lqr()
    gr, gp = gamma_schedules(lqr_cfg(env), grid_for(env), 5)
    assert len(gr) == 1 + 4 * env.H and len(gp) == 1 + 4 * env.H
    assert gr[0] == 0.0 and np.all(np.diff(gr) >= 0)
    ar, _ = gamma_schedules(lqr_cfg(env, mig_method="analytic-rate"), grid_for(env), 5)
    assert len(ar) == len(gr)


def test_oracle_baseline_has_zero_regret():
    env = small_lqr()
    recs = run_baseline(env, "oracle", grid_for(env), 10, 0)
    assert all(r.inst_regret == 0.0 for r in recs)


def test_random_baseline_regret_is_linear():
    env = small_lqr()
    recs = run_baseline(env, "random", grid_for(env), 50, 0)
    y = np.array([r.cum_regret for r in recs])
    x = np.arange(1, 51)
    slope, icpt = np.polyfit(x, y, 1)
    r2 = 1 - np.sum((y - (slope * x + icpt)) ** 2) / np.sum((y - y.mean()) ** 2)
    assert slope > 0 and r2 >= 0.9
    with pytest.raises(AgentError):
        run_baseline(env, "greedy", grid_for(env), 1, 0)


def test_gp_ucrl_tabular_learns_optimal_policy():
    env = chain_env()
    recs = run_gp_ucrl(env, tabular_cfg(env), Grid.for_env(env, 0, 0), 15, 0)
    assert all(r.inst_regret == 0.0 for r in recs[8:])


def test_psrl_with_concentrated_posterior_matches_oracle():
    # noiseless tabular env, tiny lambda: once every cell is seen the draw is the truth
    env = chain_env()
    g = Grid.for_env(env, 0, 0)
    diag = []
    recs = run_psrl(env, tabular_cfg(env, lam=1e-8), g, 40, 0, diagnostics=diag, keep_models=True)
    opt_policy, _ = plan(env.oracle_model(g), env.H)
    assert recs[-1].inst_regret == 0.0
    last = diag[-1]
    np.testing.assert_allclose(last["model"].reward, env.rewards, atol=1e-3)  # draw sd ~ sqrt(lam / n)
    np.testing.assert_array_equal(last["policy"].actions[:, 0], opt_policy.actions[:, 0])


def test_decomposition_of_exact_model_is_zero():
    env = chain_env()
    g = Grid.for_env(env, 0, 0)
    truth = env.oracle_model(g)
    pol, _ = plan(truth, env.H)
    d = decompose_episode(truth, truth, pol, [0, 1, 0], L=1.0)
    assert d.value_gap == 0.0 and d.reward_term == 0.0 and d.transition_term == 0.0
    assert d.identity_error == 0.0 and d.holds


def test_decomposition_identity_on_random_tabular_models():
    rng = np.random.default_rng(2)
    for _ in range(20):
        S, A, H = 4, 3, 4
        truth = FiniteModel(rng.uniform(size=(S, A)), probs=rng.dirichlet(np.ones(S), size=(S, A)))
        model = FiniteModel(rng.uniform(size=(S, A)), probs=rng.dirichlet(np.ones(S), size=(S, A)))
        pol = Policy(rng.integers(0, A, (S, H)))
        d = decompose_episode(model, truth, pol, rng.integers(0, S, H), L=1.0)
        assert d.identity_error <= 1e-10
        assert d.holds


def test_decomposition_transition_term_vanishes_with_zero_l():
    rng = np.random.default_rng(3)
    S, A, H = 5, 2, 3
    mean = rng.uniform(size=(S, A, 1))
    truth = FiniteModel(rng.uniform(size=(S, A)), next_index=rng.integers(0, S, (S, A)), mean_next=mean)
    model = FiniteModel(rng.uniform(size=(S, A)), next_index=truth.next_index, mean_next=mean + 0.3)
    pol = Policy(rng.integers(0, A, (S, H)))
    d = decompose_episode(model, truth, pol, [0, 1, 2], L=0.0)
    assert d.transition_term == 0.0


def test_decompose_regret_on_lqr_run():
    env = small_lqr()
    g = grid_for(env)
    diag = []
    run_gp_ucrl(env, lqr_cfg(env), g, 5, 0, diagnostics=diag, keep_models=True)
    parts = decompose_regret(env, g, diag, L=2.0)
    assert len(parts) == 5
    assert all(p.identity_error <= 1e-9 for p in parts)
    assert all(p.holds for p in parts)


def test_optimism_rarely_fails():
    env = small_lqr()
    g = grid_for(env)
    diag = []
    recs = run_gp_ucrl(env, lqr_cfg(env), g, 30, 5, diagnostics=diag)
    under = [d["planned_value"] < r.optimal_value - 1e-9 for d, r in zip(diag, recs)]
    assert np.mean(under) <= 0.1
    assert all(d["reward_viol"] == 0.0 and d["trans_viol"] == 0.0 for d in diag)
