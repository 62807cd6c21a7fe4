"""Episodic learning loops: GP-UCRL, PSRL and reference baselines.

Every loop snaps the current state to the planning grid, looks up the action,
executes it in the environment, and after ``H`` steps feeds the continuous
``(z, r, s')`` samples to the reward and transition posteriors.  The executed
policy is scored by exact DP evaluation on the true snapped model, so the
per-episode regret is free of Monte-Carlo noise.
"""
from __future__ import annotations

import time
from dataclasses import astuple, dataclass, fields

import numpy as np

from .confidence import (
    ConfidenceConfig,
    betas,
    reward_slack,
    reward_violations,
    transition_slack,
    transition_violations,
)
from .gp import GPPosterior, TransitionPosterior, indexed_points, sample_on_grid
from .infogain import analytic_schedule, cached_mig_schedule, mig_schedule
from .kernels import KernelSpec
from .planners import (
    FiniteModel,
    Grid,
    Policy,
    evaluate_policy,
    evaluate_uniform,
    optimistic_plan,
    plan,
    snapped_model,
)
from .seeding import stream

MIG_METHODS = ("greedy-mesh", "analytic-rate")


class AgentError(RuntimeError):
    pass


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    realized_return: float
    optimal_value: float
    policy_value: float
    inst_regret: float
    cum_regret: float
    beta_r: float
    beta_p: float
    reward_dev_sum: float
    trans_dev_sum: float
    wall_ms: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> tuple:
        return astuple(self)


@dataclass(frozen=True)
class AgentConfig:
    """Learner settings.  Kernels must already be bound to the env boxes if capped.

    ``lambda_R``/``lambda_P`` default to ``H`` and ``m H`` in frequentist mode
    and to the noise variances (floored at 1e-8) in Bayes-GP mode.
    """

    kernel_R: KernelSpec
    kernel_P: KernelSpec
    confidence: ConfidenceConfig
    lambda_R: float | None = None
    lambda_P: float | None = None
    mig_method: str = "greedy-mesh"
    mig_const: float = 1.0
    mig_cache_dir: str | None = None
    transition_optimism: bool = False
    clip_factor: float = 10.0
    record_timing: bool = False

    def __post_init__(self):
        if self.mig_method not in MIG_METHODS:
            raise AgentError(f"mig_method must be one of {MIG_METHODS}")

    def lambdas(self) -> tuple[float, float]:
        c = self.confidence
        if c.mode == "bayes-gp":
            lr, lp = max(c.sigma_R**2, 1e-8), max(c.sigma_P**2, 1e-8)
        else:
            lr, lp = float(c.H), float(c.m * c.H)
        return (self.lambda_R or lr), (self.lambda_P or lp)


def _check_dims(env, cfg: AgentConfig, grid: Grid):
    d = env.m + env.n
    if cfg.kernel_R.dim != d or cfg.kernel_P.dim != d + 1:
        raise AgentError(f"kernel dims ({cfg.kernel_R.dim}, {cfg.kernel_P.dim}) do not match env (m+n={d})")
    if grid.m != env.m or grid.n != env.n:
        raise AgentError("grid dimensions do not match env")
    if cfg.confidence.H != env.H or cfg.confidence.m != env.m:
        raise AgentError("confidence config H/m do not match env")


def gamma_schedules(cfg: AgentConfig, grid: Grid, episodes: int) -> tuple[np.ndarray, np.ndarray]:
    """``gamma_R[t]`` and ``gamma_P[t]`` with a leading zero, long enough for ``episodes``.

    Greedy values are computed on the planning grid with repeats allowed, so
    they stay defined once ``t`` exceeds the grid size.
    """
    H, m = cfg.confidence.H, cfg.confidence.m
    tr, tp = max(episodes - 1, 0) * H, max(episodes - 1, 0) * H * m
    lr, lp = cfg.lambdas()
    if cfg.mig_method == "analytic-rate":
        gr = analytic_schedule(cfg.kernel_R, tr, cfg.mig_const)
        gp_ = analytic_schedule(cfg.kernel_P, tp, cfg.mig_const)
    else:
        Z = grid.z_points()
        ZI = indexed_points(Z, m)
        if cfg.mig_cache_dir:
            gr = cached_mig_schedule(cfg.kernel_R, Z, tr, lr, cfg.mig_cache_dir, replacement=True)
            gp_ = cached_mig_schedule(cfg.kernel_P, ZI, tp, lp, cfg.mig_cache_dir, replacement=True)
        else:
            gr = mig_schedule(cfg.kernel_R, Z, tr, lr, replacement=True)
            gp_ = mig_schedule(cfg.kernel_P, ZI, tp, lp, replacement=True)
    return np.concatenate([[0.0], gr]), np.concatenate([[0.0], gp_])


@dataclass
class _Episode:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    s_idx: np.ndarray
    a_idx: np.ndarray


def _rollout(env, grid: Grid, choose_action, rng) -> _Episode:
    H, m, n = env.H, env.m, env.n
    S = np.empty((H, m))
    A = np.empty((H, n))
    R = np.empty(H)
    S2 = np.empty((H, m))
    si = np.empty(H, dtype=int)
    ai = np.empty(H, dtype=int)
    s = env.initial_state.copy()
    for h in range(H):
        si[h] = grid.snap(s)
        ai[h] = choose_action(si[h], h)
        a = grid.action_points[ai[h]]
        r, s2 = env.step(s, a, rng)
        S[h], A[h], R[h], S2[h] = s, a, r, s2
        s = s2
    return _Episode(S, A, R, S2, si, ai)


def _deviation_sums(model: FiniteModel, truth: FiniteModel, ep: _Episode, L: float) -> tuple[float, float]:
    r_dev = float(np.sum(np.abs(model.reward[ep.s_idx, ep.a_idx] - truth.reward[ep.s_idx, ep.a_idx])))
    if model.mean_next is None or truth.mean_next is None:
        return r_dev, float("nan")
    gap = model.mean_next[ep.s_idx, ep.a_idx] - truth.mean_next[ep.s_idx, ep.a_idx]
    return r_dev, float(L * np.sum(np.linalg.norm(gap, axis=-1)))


class _Learner:
    """Shared GP-based loop; ``mode`` picks optimistic planning or posterior sampling."""

    def __init__(self, env, cfg: AgentConfig, grid: Grid, episodes: int, rng_seed: int, mode: str):
        _check_dims(env, cfg, grid)
        self.env, self.cfg, self.grid, self.mode = env, cfg, grid, mode
        self.episodes = int(episodes)
        self.seed = rng_seed
        self.Z = grid.z_points()
        lr, lp = cfg.lambdas()
        track = mode == "psrl"
        self.rpost = GPPosterior(cfg.kernel_R, lr).with_grid(self.Z, track_cov=track)
        self.tpost = TransitionPosterior(cfg.kernel_P, env.m, lp).with_grid(self.Z, track_cov=track)
        self.truth = env.oracle_model(grid)
        self.truth_reward = self.truth.reward.reshape(-1)
        self.truth_next = np.clip(
            self.truth.mean_next.reshape(-1, env.m), env.state_low, env.state_high
        )
        self.opt_policy, self.opt_values = plan(self.truth, env.H)
        self.s1 = grid.snap(env.initial_state)
        if cfg.confidence.mode == "frequentist" and self.episodes > 0:
            self.gamma_r, self.gamma_p = gamma_schedules(cfg, grid, self.episodes)
        else:
            self.gamma_r = self.gamma_p = None

    def _betas(self, l):
        c = self.cfg.confidence
        if c.mode == "frequentist":
            t = (l - 1) * c.H
            return betas(c, l, self.gamma_r[t], self.gamma_p[t * c.m])
        return betas(c, l)

    def _coverage(self, br, bp, sr, sp):
        mu_r, var_r = self.rpost.grid_predict()
        mu_p, sd_p = self.tpost.grid_predict()
        vr = reward_violations(mu_r, np.sqrt(var_r), br, self.truth_reward, sr)
        vp = transition_violations(mu_p, sd_p, bp, self.truth_next, sp)
        return float(vr.mean()), float(vp.mean())

    def _model(self, l, br, bp, sr, sp, rng):
        env, cfg, grid = self.env, self.cfg, self.grid
        if self.mode == "ucrl":
            clip = cfg.clip_factor * cfg.confidence.B_R * env.H
            return optimistic_plan(
                self.rpost,
                self.tpost,
                br,
                bp,
                cfg.confidence.L,
                grid,
                env.H,
                clip=clip,
                slack_r=sr,
                slack_p=sp,
                transition_optimism=cfg.transition_optimism,
            )
        r = sample_on_grid(self.rpost, self.Z, rng)
        p = sample_on_grid(self.tpost.inner, self.tpost.inner.grid_points, rng).reshape(-1, env.m)
        model = snapped_model(grid, r, np.clip(p, env.state_low, env.state_high))
        pol, val = plan(model, env.H)
        return pol, val, model

    def run(self, diagnostics: list | None = None, keep_models: bool = False) -> list[EpisodeRecord]:
        env, cfg = self.env, self.cfg
        env_rng = stream(self.seed, "env")
        psrl_rng = stream(self.seed, "psrl")
        L = cfg.confidence.L
        out, cum = [], 0.0
        for l in range(1, self.episodes + 1):
            t0 = time.perf_counter()
            try:
                br, bp = self._betas(l)
                sr, sp = reward_slack(cfg.confidence, l), transition_slack(cfg.confidence, l)
                policy, values, model = self._model(l, br, bp, sr, sp, psrl_rng)
                ep = _rollout(env, self.grid, policy, env_rng)
                cover = self._coverage(br, bp, sr, sp) if diagnostics is not None else None
                self.rpost = self.rpost.update(np.hstack([ep.states, ep.actions]), ep.rewards)
                self.tpost = self.tpost.update(np.hstack([ep.states, ep.actions]), ep.next_states)
            except Exception as exc:
                raise AgentError(f"episode {l}: {exc}") from exc
            pv = evaluate_policy(self.truth, policy).values[self.s1, 0]
            opt = self.opt_values.values[self.s1, 0]
            inst = float(opt - pv)
            cum += inst
            r_dev, t_dev = _deviation_sums(model, self.truth, ep, L)
            wall = (time.perf_counter() - t0) * 1e3 if cfg.record_timing else 0.0
            out.append(
                EpisodeRecord(l, float(ep.rewards.sum()), float(opt), float(pv), inst, cum, br, bp, r_dev, t_dev, wall)
            )
            if diagnostics is not None:
                d = {
                    "episode": l,
                    "planned_value": float(values.values[self.s1, 0]),
                    "reward_viol": cover[0],
                    "trans_viol": cover[1],
                }
                if keep_models:
                    d.update(model=model, policy=policy, s_idx=ep.s_idx, a_idx=ep.a_idx)
                diagnostics.append(d)
        return out


def run_gp_ucrl(env, cfg: AgentConfig, grid: Grid, episodes: int, rng_seed: int, diagnostics=None, keep_models=False):
    """Optimistic planning against the bonus surrogate; see ``planners.optimistic_plan``."""
    return _Learner(env, cfg, grid, episodes, rng_seed, "ucrl").run(diagnostics, keep_models)


def run_psrl(env, cfg: AgentConfig, grid: Grid, episodes: int, rng_seed: int, diagnostics=None, keep_models=False):
    """Plan against one joint posterior draw on the grid per episode."""
    return _Learner(env, cfg, grid, episodes, rng_seed, "psrl").run(diagnostics, keep_models)


def run_baseline(env, policy_kind: str, grid: Grid, episodes: int, rng_seed: int, record_timing: bool = False):
    """``random``: uniform grid actions; ``oracle``: the optimal policy of the snapped true model."""
    if policy_kind not in ("random", "oracle"):
        raise AgentError(f"unknown baseline {policy_kind!r}")
    truth = env.oracle_model(grid)
    opt_policy, opt_values = plan(truth, env.H)
    s1 = grid.snap(env.initial_state)
    opt = float(opt_values.values[s1, 0])
    if policy_kind == "oracle":
        pv = float(evaluate_policy(truth, opt_policy).values[s1, 0])
        choose = opt_policy
    else:
        pv = float(evaluate_uniform(truth, env.H).values[s1, 0])
        act_rng = stream(rng_seed, "policy")
        choose = lambda s, h: int(act_rng.integers(grid.n_actions))  # noqa: E731
    env_rng = stream(rng_seed, "env")
    out, cum = [], 0.0
    for l in range(1, int(episodes) + 1):
        t0 = time.perf_counter()
        ep = _rollout(env, grid, choose, env_rng)
        inst = opt - pv
        cum += inst
        wall = (time.perf_counter() - t0) * 1e3 if record_timing else 0.0
        out.append(EpisodeRecord(l, float(ep.rewards.sum()), opt, pv, inst, cum, 0.0, 0.0, 0.0, 0.0, wall))
    return out


# -- regret decomposition ------------------------------------------------------------------


@dataclass(frozen=True)
class Decomposition:
    episode: int
    value_gap: float
    reward_term: float
    transition_term: float
    residual: float
    exact_transition_term: float
    identity_error: float
    holds: bool


def decompose_episode(
    model: FiniteModel,
    truth: FiniteModel,
    policy: Policy,
    s_idx,
    L: float,
    slack: float = 0.0,
    episode: int = 0,
) -> Decomposition:
    """Split ``V^{M_l}_1 - V^{M*}_1`` for ``policy`` along the visited grid states.

    Each period contributes the reward gap, the transition gap acting on the
    model's next-period value, and the residual ``Delta_h`` (expected minus
    realized change of the value gap).  The exact identity
    ``gap = sum(reward gaps) + sum(exact transition gaps) + sum(Delta_h)`` holds
    for any visited sequence; the reported inequality replaces the exact
    transition gap by ``L * ||mean_next gap||``.
    """
    s_idx = np.asarray(s_idx, dtype=int)
    H = policy.H
    Vl = evaluate_policy(model, policy).values
    Vs = evaluate_policy(truth, policy).values
    gap = float(Vl[s_idx[0], 0] - Vs[s_idx[0], 0])
    r_term = signed_r = t_term = t_exact = resid = 0.0
    for h in range(H):
        s = s_idx[h]
        a = policy.actions[s, h]
        r_gap = model.reward[s, a] - truth.reward[s, a]
        r_term += abs(r_gap)
        signed_r += r_gap
        tl = model.expect(Vl[:, h + 1])[s, a]
        ts = truth.expect(Vl[:, h + 1])[s, a]
        t_exact += tl - ts
        if model.mean_next is not None and truth.mean_next is not None:
            t_term += L * float(np.linalg.norm(model.mean_next[s, a] - truth.mean_next[s, a]))
        else:
            t_term += abs(tl - ts)
        diff_next = Vl[:, h + 1] - Vs[:, h + 1]
        expected = truth.expect(diff_next)[s, a]
        realized = diff_next[s_idx[h + 1]] if h + 1 < H else 0.0
        resid += expected - realized
    ident = abs(gap - (signed_r + t_exact + resid))
    holds = gap <= r_term + t_term + resid + slack + 1e-9
    return Decomposition(episode, gap, r_term, t_term, resid, t_exact, ident, bool(holds))


def decompose_regret(env, grid: Grid, details: list[dict], L: float, slack: float | None = None) -> list[Decomposition]:
    """Per-episode decomposition from ``diagnostics`` collected with ``keep_models=True``.

    The default slack covers snapping: ``2 L H`` times the grid's max snap distance.
    """
    truth = env.oracle_model(grid)
    if slack is None:
        slack = 2.0 * L * env.H * grid.max_snap_distance()
    return [
        decompose_episode(d["model"], truth, d["policy"], d["s_idx"], L, slack, d["episode"]) for d in details
    ]
