"""Episodic environments with oracle access to their mean reward and transition.

Points ``z = (s, a)`` are flat vectors of length ``m + n``.  ``step`` always
draws one reward normal followed by ``m`` transition normals (or one uniform
for tabular envs), so two agents fed the same generator see the same noise
sequence step for step.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy.linalg import eigh

from .gp import NumericalError
from .kernels import IndexDelta, KernelSpec, Product, RkhsFunction, rkhs_sample
from .gp import indexed_points

BOX_TOL = 1e-9


class EnvError(ValueError):
    pass


def _vec(x, d, name):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size == 1 and d > 1:
        x = np.full(d, float(x[0]))
    if x.shape != (d,):
        raise EnvError(f"{name} must have length {d}")
    return x


class EpisodicEnv:
    """Common box/noise/step machinery; subclasses supply the mean functions."""

    def __init__(self, m, n, H, state_low, state_high, action_low, action_high, sigma_R, sigma_P, initial_state=None):
        self.m, self.n, self.H = int(m), int(n), int(H)
        if self.H < 1:
            raise EnvError("horizon must be >= 1")
        self.state_low = _vec(state_low, self.m, "state_low")
        self.state_high = _vec(state_high, self.m, "state_high")
        self.action_low = _vec(action_low, self.n, "action_low")
        self.action_high = _vec(action_high, self.n, "action_high")
        if np.any(self.state_high < self.state_low) or np.any(self.action_high < self.action_low):
            raise EnvError("box bounds are inverted")
        if sigma_R < 0 or sigma_P < 0:
            raise EnvError("noise scales must be nonnegative")
        self.sigma_R, self.sigma_P = float(sigma_R), float(sigma_P)
        if initial_state is None:
            initial_state = 0.5 * (self.state_low + self.state_high)
        self.initial_state = _vec(initial_state, self.m, "initial_state")
        self._check_box(self.initial_state[None, :], self.state_low, self.state_high, "initial state")

    # -- geometry ---------------------------------------------------------------
    @property
    def z_low(self):
        return np.concatenate([self.state_low, self.action_low])

    @property
    def z_high(self):
        return np.concatenate([self.state_high, self.action_high])

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.state_high - self.state_low))

    def clip_state(self, S):
        return np.clip(S, self.state_low, self.state_high)

    @staticmethod
    def _check_box(X, lo, hi, what):
        if np.any(X < lo - BOX_TOL) or np.any(X > hi + BOX_TOL):
            raise EnvError(f"{what} outside its box")

    # -- means --------------------------------------------------------------------
    def oracle_mean_reward(self, Z) -> np.ndarray:
        raise NotImplementedError

    def oracle_mean_transition(self, Z) -> np.ndarray:
        """Mean next state (before clipping), shape ``(N, m)``."""
        raise NotImplementedError

    def _points(self, Z):
        Z = np.asarray(Z, dtype=float)
        single = Z.ndim == 1
        Z = np.atleast_2d(Z)
        if Z.shape[1] != self.m + self.n:
            raise EnvError(f"points must have dimension {self.m + self.n}")
        return Z, single

    # -- dynamics -------------------------------------------------------------------
    def step_many(self, S, A, rng):
        S = np.atleast_2d(np.asarray(S, dtype=float))
        A = np.atleast_2d(np.asarray(A, dtype=float))
        self._check_box(S, self.state_low, self.state_high, "state")
        self._check_box(A, self.action_low, self.action_high, "action")
        Z = np.hstack([S, A])
        r = self.oracle_mean_reward(Z) + self.sigma_R * rng.standard_normal(len(Z))
        nxt = self._next_states(Z, rng)
        return r, nxt

    def _next_states(self, Z, rng):
        eps = rng.standard_normal((len(Z), self.m))
        return self.clip_state(self.oracle_mean_transition(Z) + self.sigma_P * eps)

    def step(self, s, a, rng) -> tuple[float, np.ndarray]:
        r, nxt = self.step_many(np.asarray(s, dtype=float)[None, :], np.asarray(a, dtype=float)[None, :], rng)
        return float(r[0]), nxt[0]

    # -- planning view ----------------------------------------------------------------
    def oracle_model(self, grid):
        """True means on the planning grid as a finite model (snapped mean transitions)."""
        from .planners import snapped_model

        Z = grid.z_points()
        reward = self.oracle_mean_reward(Z).reshape(grid.n_states, grid.n_actions)
        mean_next = self.oracle_mean_transition(Z).reshape(grid.n_states, grid.n_actions, self.m)
        return snapped_model(grid, reward, self.clip_state(mean_next))


def step(env: EpisodicEnv, s, a, rng):
    return env.step(s, a, rng)


# -- LQR -------------------------------------------------------------------------------


class LqrEnv(EpisodicEnv):
    """Bounded linear-quadratic system ``s' = A s + B a + noise``.

    The reward is ``-(s^T P s + a^T Q a)`` unless ``positive_quadratic_reward`` is set,
    in which case the quadratic form is returned with a positive sign.
    """

    def __init__(
        self,
        A,
        B,
        P,
        Q,
        H,
        state_low,
        state_high,
        action_low,
        action_high,
        sigma_R=0.0,
        sigma_P=0.0,
        initial_state=None,
        positive_quadratic_reward=False,
    ):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.P = np.atleast_2d(np.asarray(P, dtype=float))
        self.Q = np.atleast_2d(np.asarray(Q, dtype=float))
        m, n = self.B.shape
        if self.A.shape != (m, m) or self.P.shape != (m, m) or self.Q.shape != (n, n):
            raise EnvError("inconsistent LQR matrix shapes")
        self.positive_quadratic_reward = bool(positive_quadratic_reward)
        super().__init__(m, n, H, state_low, state_high, action_low, action_high, sigma_R, sigma_P, initial_state)

    def oracle_mean_reward(self, Z):
        Z, single = self._points(Z)
        S, A = Z[:, : self.m], Z[:, self.m :]
        q = np.einsum("ij,jk,ik->i", S, self.P, S) + np.einsum("ij,jk,ik->i", A, self.Q, A)
        out = q if self.positive_quadratic_reward else -q
        return float(out[0]) if single else out

    def oracle_mean_transition(self, Z):
        Z, single = self._points(Z)
        out = Z[:, : self.m] @ self.A.T + Z[:, self.m :] @ self.B.T
        return out[0] if single else out

    @property
    def reward_weights_norm(self) -> float:
        return float(np.sqrt(np.sum(self.P**2) + np.sum(self.Q**2)))

    @property
    def transition_weights_norm(self) -> float:
        return float(np.sqrt(np.sum(self.A**2) + np.sum(self.B**2)))


def riccati_map(G, A, B, P, Q):
    """One step of the discrete Riccati recursion for cost ``s'Ps + a'Qa``."""
    BtG = B.T @ G
    return P + A.T @ G @ A - A.T @ G @ B @ np.linalg.solve(Q + BtG @ B, BtG @ A)


def riccati_solution(A, B, P, Q, tol=1e-10, max_iter=10_000):
    G = np.array(P, dtype=float)
    for _ in range(max_iter):
        G_next = riccati_map(G, A, B, P, Q)
        G_next = 0.5 * (G_next + G_next.T)
        if not np.all(np.isfinite(G_next)) or np.max(np.abs(G_next)) > 1e150:
            raise NumericalError("Riccati iteration diverged")
        if np.max(np.abs(G_next - G)) <= tol:
            return G_next
        G = G_next
    raise NumericalError(f"Riccati iteration did not converge in {max_iter} steps")


def lqr_lipschitz_bound(env: LqrEnv) -> float:
    """``D * lambda_max(G)`` with ``G`` the Riccati fixed point and ``D`` the state-box diameter."""
    G = riccati_solution(env.A, env.B, env.P, env.Q)
    lam1 = float(eigh(G, eigvals_only=True)[-1])
    return env.diameter * lam1


# -- tabular ---------------------------------------------------------------------------


class TabularEnv(EpisodicEnv):
    """Finite MDP with states and actions encoded as scalar indices.

    The mean transition is the expected next-state index; the planning view
    uses the exact transition table.
    """

    def __init__(self, rewards, transitions, H, sigma_R=0.0, sigma_P=None, initial_state=0):
        R = np.asarray(rewards, dtype=float)
        T = np.asarray(transitions, dtype=float)
        if R.ndim != 2 or T.shape != (R.shape[0], R.shape[1], R.shape[0]):
            raise EnvError("rewards must be (S, A) and transitions (S, A, S)")
        if np.any(T < 0) or np.any(np.abs(T.sum(axis=2) - 1.0) > 1e-12):
            raise EnvError("transition rows must be probability vectors (sum to 1 within 1e-12)")
        self.rewards, self.transitions = R, T
        self.n_states, self.n_actions = R.shape
        if sigma_P is None:
            sigma_P = 0.5 * (self.n_states - 1)
        self._cdf = np.cumsum(T, axis=2)
        super().__init__(
            1, 1, H, 0, self.n_states - 1, 0, self.n_actions - 1, sigma_R, sigma_P, [float(initial_state)]
        )

    def _cells(self, Z):
        s = np.rint(Z[:, 0]).astype(int)
        a = np.rint(Z[:, 1]).astype(int)
        if np.any(np.abs(Z[:, 0] - s) > 1e-9) or np.any(np.abs(Z[:, 1] - a) > 1e-9):
            raise EnvError("tabular states and actions must be integers")
        return s, a

    def oracle_mean_reward(self, Z):
        Z, single = self._points(Z)
        s, a = self._cells(Z)
        out = self.rewards[s, a]
        return float(out[0]) if single else out

    def oracle_mean_transition(self, Z):
        Z, single = self._points(Z)
        s, a = self._cells(Z)
        out = (self.transitions[s, a] @ np.arange(self.n_states, dtype=float))[:, None]
        return out[0] if single else out

    def _next_states(self, Z, rng):
        s, a = self._cells(Z)
        u = rng.random(len(Z))
        cdf = self._cdf[s, a]
        nxt = np.minimum((u[:, None] >= cdf).sum(axis=1), self.n_states - 1)
        return nxt[:, None].astype(float)

    def oracle_model(self, grid):
        from .planners import FiniteModel

        S = np.rint(grid.state_points[:, 0]).astype(int)
        A = np.rint(grid.action_points[:, 0]).astype(int)
        if not (np.array_equal(S, np.arange(self.n_states)) and np.array_equal(A, np.arange(self.n_actions))):
            raise EnvError("tabular planning grid must enumerate all states and actions in order")
        mean_next = (self.transitions @ np.arange(self.n_states, dtype=float))[..., None]
        return FiniteModel(self.rewards.copy(), probs=self.transitions.copy(), mean_next=mean_next)

    @classmethod
    def from_csv(cls, path, H, sigma_R=0.0, sigma_P=None, initial_state=0):
        """Load ``s,a,reward_mean,p0,...`` rows (one per state-action cell)."""
        with open(Path(path), newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[:3] != ["s", "a", "reward_mean"]:
            raise EnvError("tabular CSV header must start with s,a,reward_mean")
        nS = len(header) - 3
        cells = [(int(r[0]), int(r[1]), float(r[2]), [float(x) for x in r[3:]]) for r in body if r]
        nA = max(c[1] for c in cells) + 1
        R = np.full((nS, nA), np.nan)
        T = np.full((nS, nA, nS), np.nan)
        for s, a, rm, p in cells:
            R[s, a] = rm
            T[s, a] = p
        if np.isnan(R).any():
            raise EnvError("tabular CSV is missing state-action rows")
        return cls(R, T, H, sigma_R, sigma_P, initial_state)

    def to_csv(self, path):
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "a", "reward_mean"] + [f"p{j}" for j in range(self.n_states)])
            for s in range(self.n_states):
                for a in range(self.n_actions):
                    w.writerow([s, a, repr(float(self.rewards[s, a]))] + [repr(float(x)) for x in self.transitions[s, a]])


def tabular_as_kernel(env: TabularEnv) -> tuple[KernelSpec, KernelSpec]:
    """Indicator product kernels under which GP regression is per-cell shrunken averaging."""
    cell = Product(IndexDelta(cardinality=env.n_states), IndexDelta(cardinality=env.n_actions))
    return cell, Product(cell, IndexDelta(cardinality=1))


# -- synthetic RKHS ----------------------------------------------------------------------


class RkhsEnv(EpisodicEnv):
    """Mean reward and mean transition are given RKHS members.

    ``transition_fn`` lives on ``Z x {0..m-1}``; component ``i`` of the mean
    next state is ``transition_fn(z, i)``.
    """

    def __init__(
        self,
        reward_fn: RkhsFunction,
        transition_fn: RkhsFunction,
        m,
        n,
        H,
        state_low,
        state_high,
        action_low,
        action_high,
        sigma_R=0.0,
        sigma_P=0.0,
        initial_state=None,
    ):
        if reward_fn.kernel.dim != m + n or transition_fn.kernel.dim != m + n + 1:
            raise EnvError("RKHS function kernels do not match the state/action dimensions")
        self.reward_fn, self.transition_fn = reward_fn, transition_fn
        super().__init__(m, n, H, state_low, state_high, action_low, action_high, sigma_R, sigma_P, initial_state)

    @classmethod
    def random(
        cls,
        k_R: KernelSpec,
        k_P: KernelSpec,
        m,
        n,
        H,
        B_R,
        B_P,
        state_low,
        state_high,
        action_low,
        action_high,
        sigma_R=0.0,
        sigma_P=0.0,
        n_centers=10,
        seed=0,
        initial_state=None,
    ):
        ss = np.random.SeedSequence(seed)
        sr, sp = ss.spawn(2)
        zl = np.concatenate([np.broadcast_to(state_low, (m,)), np.broadcast_to(action_low, (n,))])
        zh = np.concatenate([np.broadcast_to(state_high, (m,)), np.broadcast_to(action_high, (n,))])
        f_r = rkhs_sample(k_R, n_centers, B_R, np.random.default_rng(sr), zl, zh)
        f_p = rkhs_sample(k_P, n_centers, B_P, np.random.default_rng(sp), np.append(zl, 0), np.append(zh, 0))
        return cls(f_r, f_p, m, n, H, state_low, state_high, action_low, action_high, sigma_R, sigma_P, initial_state)

    def oracle_mean_reward(self, Z):
        Z, single = self._points(Z)
        out = self.reward_fn(Z)
        return float(out[0]) if single else out

    def oracle_mean_transition(self, Z):
        Z, single = self._points(Z)
        out = self.transition_fn(indexed_points(Z, self.m)).reshape(-1, self.m)
        return out[0] if single else out
