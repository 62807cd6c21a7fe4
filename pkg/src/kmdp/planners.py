"""Finite-horizon dynamic programming on state/action grids.

Models are finite: ``reward[s, a]`` plus either a deterministic successor
index ``next_index[s, a]`` (continuous envs, mean next state snapped to the
grid) or a probability table ``probs[s, a, s']`` (tabular envs).  Periods are
zero-based in arrays: column ``h`` holds period ``h + 1`` and ``values[:, H]``
is the terminal zero.  Ties always go to the lowest action index.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree


class PlannerError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Grid:
    state_points: np.ndarray
    action_points: np.ndarray

    def __post_init__(self):
        S = np.asarray(self.state_points, dtype=float)
        A = np.asarray(self.action_points, dtype=float)
        S = S[:, None] if S.ndim == 1 else S
        A = A[:, None] if A.ndim == 1 else A
        object.__setattr__(self, "state_points", S)
        object.__setattr__(self, "action_points", A)
        object.__setattr__(self, "_tree", cKDTree(S))

    @classmethod
    def uniform(cls, state_low, state_high, state_res, action_low, action_high, action_res):
        """Tensor grids with ``res`` points per axis including the box corners."""
        return cls(_box_grid(state_low, state_high, state_res), _box_grid(action_low, action_high, action_res))

    @classmethod
    def for_env(cls, env, state_res, action_res):
        from .envs import TabularEnv

        if isinstance(env, TabularEnv):
            return cls(np.arange(env.n_states, dtype=float)[:, None], np.arange(env.n_actions, dtype=float)[:, None])
        return cls.uniform(env.state_low, env.state_high, state_res, env.action_low, env.action_high, action_res)

    @property
    def n_states(self) -> int:
        return len(self.state_points)

    @property
    def n_actions(self) -> int:
        return len(self.action_points)

    @property
    def m(self) -> int:
        return self.state_points.shape[1]

    @property
    def n(self) -> int:
        return self.action_points.shape[1]

    def snap(self, states) -> np.ndarray:
        """Nearest grid-state indices for an ``(N, m)`` array (or one state -> int)."""
        X = np.asarray(states, dtype=float)
        if X.ndim == 1:
            return int(self._tree.query(X[None, :])[1][0])
        return self._tree.query(X)[1].astype(int)

    def z_points(self) -> np.ndarray:
        """All state-action pairs, state-major: row ``s * n_actions + a``."""
        S = np.repeat(self.state_points, self.n_actions, axis=0)
        A = np.tile(self.action_points, (self.n_states, 1))
        return np.hstack([S, A])

    def max_snap_distance(self) -> float:
        """Half the largest per-axis spacing, combined over axes (box grids)."""
        gaps = []
        for col in self.state_points.T:
            u = np.unique(col)
            gaps.append(np.max(np.diff(u)) / 2 if len(u) > 1 else 0.0)
        return float(np.linalg.norm(gaps))


def _box_grid(low, high, res):
    low = np.atleast_1d(np.asarray(low, dtype=float))
    high = np.atleast_1d(np.asarray(high, dtype=float))
    res = np.broadcast_to(np.asarray(res, dtype=int), low.shape)
    if np.any(res < 1):
        raise PlannerError("grid resolution must be >= 1")
    axes = [np.linspace(lo, hi, r) if r > 1 else np.array([0.5 * (lo + hi)]) for lo, hi, r in zip(low, high, res)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(low))


@dataclass
class FiniteModel:
    """``reward[s, a]`` with either ``next_index[s, a]`` or ``probs[s, a, s']``.

    ``mean_next[s, a]`` (state coordinates, optional) keeps the unsnapped
    mean next state for deviation diagnostics.
    """

    reward: np.ndarray
    next_index: np.ndarray | None = None
    probs: np.ndarray | None = None
    mean_next: np.ndarray | None = None

    def __post_init__(self):
        self.reward = np.asarray(self.reward, dtype=float)
        if (self.next_index is None) == (self.probs is None):
            raise PlannerError("give exactly one of next_index and probs")
        S, A = self.reward.shape
        if self.next_index is not None:
            self.next_index = np.asarray(self.next_index, dtype=int)
            if self.next_index.shape != (S, A):
                raise PlannerError("next_index must be (S, A)")
        else:
            self.probs = np.asarray(self.probs, dtype=float)
            if self.probs.shape != (S, A, S):
                raise PlannerError("probs must be (S, A, S)")

    @property
    def n_states(self):
        return self.reward.shape[0]

    @property
    def n_actions(self):
        return self.reward.shape[1]

    def expect(self, V: np.ndarray) -> np.ndarray:
        """``E[V(s') | s, a]`` as an ``(S, A)`` array."""
        if self.next_index is not None:
            return V[self.next_index]
        return _weighted_sum(self.probs, V)


def _weighted_sum(P, V):
    """``sum_t P[..., t] V[..., t]`` accumulated in index order.

    A fixed elementwise order (rather than BLAS) makes DP and policy
    enumeration round identically, so their values can be compared exactly.
    """
    out = P[..., 0] * V[..., 0]
    for t in range(1, P.shape[-1]):
        out = out + P[..., t] * V[..., t]
    return out


def snapped_model(grid: Grid, reward, mean_next) -> FiniteModel:
    mean_next = np.asarray(mean_next, dtype=float).reshape(grid.n_states, grid.n_actions, grid.m)
    idx = grid.snap(mean_next.reshape(-1, grid.m)).reshape(grid.n_states, grid.n_actions)
    return FiniteModel(np.asarray(reward, dtype=float).reshape(grid.n_states, grid.n_actions), next_index=idx, mean_next=mean_next)


@dataclass(frozen=True)
class Policy:
    actions: np.ndarray  # (S, H) action indices

    @property
    def H(self):
        return self.actions.shape[1]

    def __call__(self, s_index: int, h: int) -> int:
        """Action index at grid state ``s_index`` in zero-based period ``h``."""
        return int(self.actions[s_index, h])


@dataclass(frozen=True)
class ValueTable:
    values: np.ndarray  # (S, H + 1), last column zero

    def __call__(self, s_index: int, h: int = 0) -> float:
        return float(self.values[s_index, h])


def plan(model: FiniteModel, H: int) -> tuple[Policy, ValueTable]:
    """Backward induction; returns an optimal policy for ``model``."""
    if H < 1:
        raise PlannerError("H must be >= 1")
    S = model.n_states
    V = np.zeros((S, H + 1))
    pi = np.zeros((S, H), dtype=int)
    for h in range(H - 1, -1, -1):
        Qh = model.reward + model.expect(V[:, h + 1])
        pi[:, h] = np.argmax(Qh, axis=1)
        V[:, h] = Qh[np.arange(S), pi[:, h]]
    return Policy(pi), ValueTable(V)


def evaluate_policy(model: FiniteModel, policy: Policy) -> ValueTable:
    """Exact value of a deterministic policy under ``model``."""
    S, H = policy.actions.shape
    V = np.zeros((S, H + 1))
    rows = np.arange(S)
    for h in range(H - 1, -1, -1):
        a = policy.actions[:, h]
        V[:, h] = model.reward[rows, a] + model.expect(V[:, h + 1])[rows, a]
    return ValueTable(V)


def evaluate_uniform(model: FiniteModel, H: int) -> ValueTable:
    """Value of the policy that picks every grid action with equal probability."""
    V = np.zeros((model.n_states, H + 1))
    for h in range(H - 1, -1, -1):
        V[:, h] = np.mean(model.reward + model.expect(V[:, h + 1]), axis=1)
    return ValueTable(V)


def brute_force_value(model: FiniteModel, H: int) -> np.ndarray:
    """Max of V_1 over every deterministic Markov policy, by exhaustive enumeration.

    All ``A^(S H)`` policies are scored; suffix values are shared across
    prefixes so only the first period is looped over.
    """
    S, A = model.n_states, model.n_actions
    if A ** (S * H) > 50_000_000:
        raise PlannerError("too many policies to enumerate")
    rules = np.array(list(itertools.product(range(A), repeat=S)), dtype=int)  # (R, S)
    rows = np.arange(S)
    probs = model.probs if model.probs is not None else np.eye(S)[model.next_index]
    R_r = model.reward[rows, rules]  # (R, S)
    P_r = probs[rows, rules]  # (R, S, S)
    suffix = np.zeros((1, S))
    for _ in range(H - 1):
        # every rule combined with every suffix value vector
        suffix = (R_r[:, None, :] + _weighted_sum(P_r[:, None, :, :], suffix[None, :, None, :])).reshape(-1, S)
    best = np.full(S, -np.inf)
    for r in range(len(rules)):
        vals = R_r[r][None, :] + _weighted_sum(P_r[r][None, :, :], suffix[:, None, :])
        best = np.maximum(best, vals.max(axis=0))
    return best


# -- optimistic surrogate --------------------------------------------------------------


def _grid_moments(posterior, Z):
    if posterior.grid_points is not None and posterior.grid_points.shape == Z.shape and np.array_equal(posterior.grid_points, Z):
        return posterior.grid_predict()
    return posterior.predict_many(Z)


def optimistic_surrogate(
    reward_posterior,
    transition_posterior,
    beta_r: float,
    beta_p: float,
    L: float,
    grid: Grid,
    clip: float = np.inf,
    slack_r: float = 0.0,
    slack_p: float = 0.0,
) -> tuple[FiniteModel, np.ndarray]:
    """Bonus model ``mu_R + beta_r sigma_R + L (beta_p ||sigma_P|| + slack)`` with snapped mean transitions.

    Also returns the transition-ball radii ``(S, A)``.
    """
    if beta_r < 0 or beta_p < 0:
        raise PlannerError("confidence widths must be nonnegative")
    Z = grid.z_points()
    mu_r, sd_r = _grid_moments(reward_posterior, Z)
    mu_p, sd_p = _grid_moments(transition_posterior, Z)
    radius = beta_p * np.linalg.norm(sd_p, axis=1) + slack_p
    r = mu_r + beta_r * sd_r + slack_r + L * radius
    r = np.clip(r, -clip, clip).reshape(grid.n_states, grid.n_actions)
    return snapped_model(grid, r, mu_p), radius.reshape(grid.n_states, grid.n_actions)


def optimistic_plan(
    reward_posterior,
    transition_posterior,
    beta_r: float,
    beta_p: float,
    L: float,
    grid: Grid,
    H: int,
    clip: float = np.inf,
    slack_r: float = 0.0,
    slack_p: float = 0.0,
    transition_optimism: bool = False,
    state_clip=None,
) -> tuple[Policy, ValueTable, FiniteModel]:
    """Plan against the optimistic surrogate.

    With ``transition_optimism`` the ``L * radius`` bonus is replaced by an
    explicit search, per (s, a, h), for the best grid successor inside the
    transition ball (falling back to the snapped mean when the ball holds no
    grid point).  ``state_clip`` is an optional ``(low, high)`` pair applied to
    mean next states before snapping.
    """
    model, radius = optimistic_surrogate(
        reward_posterior, transition_posterior, beta_r, beta_p, L, grid, clip, slack_r, slack_p
    )
    if state_clip is not None:
        model = snapped_model(grid, model.reward, np.clip(model.mean_next, *state_clip))
    if not transition_optimism:
        pol, val = plan(model, H)
        return pol, val, model
    base = np.clip(model.reward - L * radius, -clip, clip)
    dist = np.linalg.norm(model.mean_next[:, :, None, :] - grid.state_points[None, None, :, :], axis=-1)
    inside = dist <= radius[:, :, None]
    inside[np.arange(grid.n_states)[:, None], np.arange(grid.n_actions)[None, :], model.next_index] = True
    S = grid.n_states
    V = np.zeros((S, H + 1))
    pi = np.zeros((S, H), dtype=int)
    for h in range(H - 1, -1, -1):
        cont = np.where(inside, V[None, None, :, h + 1], -np.inf).max(axis=2)
        Qh = base + cont
        pi[:, h] = np.argmax(Qh, axis=1)
        V[:, h] = Qh[np.arange(S), pi[:, h]]
    return Policy(pi), ValueTable(V), FiniteModel(base, next_index=model.next_index, mean_next=model.mean_next)


def oracle_plan(env, grid: Grid, H: int | None = None) -> tuple[Policy, ValueTable]:
    return plan(env.oracle_model(grid), env.H if H is None else H)


# -- export ------------------------------------------------------------------------------


def write_policy_csv(path, policy: Policy, values: ValueTable) -> None:
    """Rows ``state,period,action,value`` with one-based periods; period H+1 has action -1."""
    S, H = policy.actions.shape
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "period", "action", "value"])
        for s in range(S):
            for h in range(H + 1):
                a = int(policy.actions[s, h]) if h < H else -1
                w.writerow([s, h + 1, a, repr(float(values.values[s, h]))])


def read_policy_csv(path) -> tuple[Policy, ValueTable]:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    S = max(int(r["state"]) for r in rows) + 1
    H = max(int(r["period"]) for r in rows) - 1
    acts = np.zeros((S, H), dtype=int)
    vals = np.zeros((S, H + 1))
    for r in rows:
        s, h = int(r["state"]), int(r["period"]) - 1
        vals[s, h] = float(r["value"])
        if h < H:
            acts[s, h] = int(r["action"])
    return Policy(acts), ValueTable(vals)
