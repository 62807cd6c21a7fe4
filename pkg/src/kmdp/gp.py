"""Gaussian-process posteriors with incremental Cholesky updates.

``GPPosterior`` is a value: ``update`` returns a new posterior and leaves the
old one usable.  Internally the triangular factor lives in a growable buffer
that successive updates append to, so a linear chain of updates costs
``O(n^2)`` per added point instead of a refactorization.  Branching off an
older posterior is still correct; it just copies the buffer first.

A posterior can also *track* a fixed set of query points (the planning grid).
It then keeps ``W = L^{-1} K(X, grid)`` and the grid means, variances and,
optionally, the full grid covariance up to date under updates, which is what
the episode loops query every episode.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .kernels import KernelSpec, as_points, from_dict, to_dict

JITTERS = (1e-10, 1e-8, 1e-6)
VAR_CLAMP = 1e-10


class GPInputError(ValueError):
    pass


class NumericalError(ArithmeticError):
    pass


def jittered_cholesky(M: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``M + jitter*I``, escalating jitter 1e-10 -> 1e-6."""
    eye = np.eye(len(M))
    for jitter in JITTERS:
        try:
            return cholesky(M + jitter * eye, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(f"matrix of size {len(M)} not positive definite even with jitter {JITTERS[-1]}")


class _Store:
    """Growable row storage shared by a chain of posteriors."""

    def __init__(self, width: int, capacity: int, square: bool = False):
        self.square = square
        self.data = np.zeros((capacity, capacity if square else width))
        self.used = 0

    def view(self, n):
        return self.data[:n, :n] if self.square else self.data[:n]


def _writable(store: _Store | None, n: int, extra: int, width: int, square: bool) -> _Store:
    """Store that may be written at rows ``n .. n+extra`` without disturbing other owners."""
    need = n + extra
    if store is not None and store.used == n and len(store.data) >= need:
        return store
    cap = max(need, 2 * n, 16)
    new = _Store(width, cap, square)
    if store is not None and n:
        if square:
            new.data[:n, :n] = store.data[:n, :n]
        else:
            new.data[:n] = store.data[:n]
    new.used = n
    return new


@dataclass
class _GridState:
    points: np.ndarray
    prior_diag: np.ndarray
    prior_cov: np.ndarray | None
    W: _Store
    mean: np.ndarray
    var: np.ndarray
    cov: np.ndarray | None


class GPPosterior:
    """GP regression state for one scalar function.

    ``noise_lambda`` is the ridge term added to the Gram matrix.  Predictions
    follow the standard posterior
    ``mean = k(z)^T (K + lambda I)^{-1} y`` and
    ``var = k(z, z) - k(z)^T (K + lambda I)^{-1} k(z)``.
    """

    def __init__(self, kernel: KernelSpec, noise_lambda: float):
        if not noise_lambda > 0:
            raise GPInputError("noise_lambda must be positive")
        self.kernel = kernel
        self.noise_lambda = float(noise_lambda)
        self.n = 0
        self._X: _Store | None = None
        self._y: _Store | None = None
        self._L: _Store | None = None
        self._u: _Store | None = None  # L^{-1} y
        self._grid: _GridState | None = None

    # -- views ----------------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.kernel.dim

    @property
    def inputs(self) -> np.ndarray:
        return self._X.view(self.n).copy() if self.n else np.zeros((0, self.dim))

    @property
    def targets(self) -> np.ndarray:
        return self._y.view(self.n)[:, 0].copy() if self.n else np.zeros(0)

    @property
    def chol(self) -> np.ndarray:
        return self._L.view(self.n).copy() if self.n else np.zeros((0, 0))

    @property
    def alpha(self) -> np.ndarray:
        if not self.n:
            return np.zeros(0)
        L = self._L.view(self.n)
        return solve_triangular(L, self._u.view(self.n)[:, 0], lower=True, trans="T")

    def __len__(self):
        return self.n

    # -- updates ----------------------------------------------------------------
    def _clone(self) -> "GPPosterior":
        new = GPPosterior.__new__(GPPosterior)
        new.__dict__.update(self.__dict__)
        return new

    def update(self, new_points, new_targets) -> "GPPosterior":
        """Posterior after also observing ``new_targets`` at ``new_points``."""
        Xn = np.asarray(new_points, dtype=float)
        yn = np.asarray(new_targets, dtype=float).reshape(-1)
        if Xn.size == 0 and yn.size == 0:
            return self._clone()
        Xn = as_points(Xn, self.dim)
        if len(Xn) != len(yn):
            raise GPInputError(f"{len(Xn)} points but {len(yn)} targets")
        if not np.all(np.isfinite(yn)) or not np.all(np.isfinite(Xn)):
            raise GPInputError("non-finite observation")
        n, k = self.n, len(Xn)
        lam = self.noise_lambda

        K22 = self.kernel.cross(Xn, Xn)
        K22 = 0.5 * (K22 + K22.T) + lam * np.eye(k)
        if n:
            L11 = self._L.view(n)
            X = self._X.view(n)
            V = solve_triangular(L11, self.kernel.cross(X, Xn), lower=True, check_finite=False)
            S = K22 - V.T @ V
        else:
            V = np.zeros((0, k))
            S = K22
        L22 = jittered_cholesky(0.5 * (S + S.T))
        u_old = self._u.view(n)[:, 0] if n else np.zeros(0)
        u_new = solve_triangular(L22, yn - V.T @ u_old, lower=True, check_finite=False)

        new = self._clone()
        Ls = _writable(self._L, n, k, 0, square=True)
        Ls.data[n : n + k, :n] = V.T
        Ls.data[:n, n : n + k] = 0.0
        Ls.data[n : n + k, n : n + k] = L22
        Xs = _writable(self._X, n, k, self.dim, square=False)
        Xs.data[n : n + k] = Xn
        ys = _writable(self._y, n, k, 1, square=False)
        ys.data[n : n + k, 0] = yn
        us = _writable(self._u, n, k, 1, square=False)
        us.data[n : n + k, 0] = u_new
        for s in (Ls, Xs, ys, us):
            s.used = n + k
        new._L, new._X, new._y, new._u = Ls, Xs, ys, us
        new.n = n + k

        if self._grid is not None:
            g = self._grid
            Kg = self.kernel.cross(Xn, g.points)
            if n:
                Kg = Kg - V.T @ g.W.view(n)
            Wn = solve_triangular(L22, Kg, lower=True, check_finite=False)
            Ws = _writable(g.W, n, k, len(g.points), square=False)
            Ws.data[n : n + k] = Wn
            Ws.used = n + k
            cov = None if g.cov is None else g.cov - Wn.T @ Wn
            new._grid = _GridState(
                g.points,
                g.prior_diag,
                g.prior_cov,
                Ws,
                g.mean + Wn.T @ u_new,
                g.var - np.einsum("ij,ij->j", Wn, Wn),
                cov,
            )
        return new

    def with_grid(self, points, track_cov: bool = False) -> "GPPosterior":
        """Copy of this posterior that keeps predictions at ``points`` current."""
        G = as_points(points, self.dim).copy()
        diag = self.kernel.diag(G)
        prior_cov = self.kernel.cross(G, G) if track_cov else None
        if prior_cov is not None:
            prior_cov = 0.5 * (prior_cov + prior_cov.T)
        Ws = _Store(len(G), max(self.n, 16))
        if self.n:
            W = solve_triangular(
                self._L.view(self.n), self.kernel.cross(self._X.view(self.n), G), lower=True
            )
            Ws.data[: self.n] = W
            Ws.used = self.n
            mean = W.T @ self._u.view(self.n)[:, 0]
            var = diag - np.einsum("ij,ij->j", W, W)
            cov = None if prior_cov is None else prior_cov - W.T @ W
        else:
            mean = np.zeros(len(G))
            var = diag.copy()
            cov = None if prior_cov is None else prior_cov.copy()
        new = self._clone()
        new._grid = _GridState(G, diag, prior_cov, Ws, mean, var, cov)
        return new

    # -- prediction -----------------------------------------------------------
    def _clamp(self, var, prior):
        tol = VAR_CLAMP * np.maximum(1.0, prior)
        if np.any(var < -tol):
            raise NumericalError(f"posterior variance {var.min():.3e} is negative beyond tolerance")
        return np.maximum(var, 0.0)

    def predict_many(self, Z) -> tuple[np.ndarray, np.ndarray]:
        Z = as_points(Z, self.dim)
        prior = self.kernel.diag(Z)
        if not self.n:
            return np.zeros(len(Z)), prior
        V = solve_triangular(
            self._L.view(self.n), self.kernel.cross(self._X.view(self.n), Z), lower=True, check_finite=False
        )
        mean = V.T @ self._u.view(self.n)[:, 0]
        var = prior - np.einsum("ij,ij->j", V, V)
        return mean, self._clamp(var, prior)

    def predict(self, z) -> tuple[float, float]:
        z = np.asarray(z, dtype=float)
        if z.ndim != 1:
            raise GPInputError("predict takes a single point; use predict_many")
        mean, var = self.predict_many(z[None, :])
        return float(mean[0]), float(var[0])

    def covariance(self, Z) -> np.ndarray:
        """Posterior covariance matrix at the points ``Z``."""
        Z = as_points(Z, self.dim)
        C = self.kernel.cross(Z, Z)
        if self.n:
            V = solve_triangular(self._L.view(self.n), self.kernel.cross(self._X.view(self.n), Z), lower=True)
            C = C - V.T @ V
        return 0.5 * (C + C.T)

    @property
    def grid_points(self) -> np.ndarray | None:
        return None if self._grid is None else self._grid.points

    def grid_predict(self) -> tuple[np.ndarray, np.ndarray]:
        """Means and variances at the tracked grid."""
        if self._grid is None:
            raise GPInputError("no tracked grid; call with_grid first")
        g = self._grid
        return g.mean.copy(), self._clamp(g.var.copy(), g.prior_diag)

    def grid_covariance(self) -> np.ndarray:
        if self._grid is None or self._grid.cov is None:
            raise GPInputError("grid covariance not tracked; use with_grid(..., track_cov=True)")
        C = self._grid.cov
        return 0.5 * (C + C.T)

    # -- persistence ----------------------------------------------------------
    def save(self, path) -> None:
        """Binary snapshot: inputs, targets, lambda and kernel spec.  The factor is rebuilt on load."""
        np.savez(
            Path(path),
            inputs=self.inputs,
            targets=self.targets,
            noise_lambda=np.array(self.noise_lambda),
            kernel=np.array(json.dumps(to_dict(self.kernel))),
        )

    @classmethod
    def load(cls, path, kernel: KernelSpec | None = None) -> "GPPosterior":
        """Restore a snapshot.  Pass ``kernel`` when the saved spec relies on a bound box."""
        with np.load(Path(path), allow_pickle=False) as f:
            spec = kernel if kernel is not None else from_dict(json.loads(str(f["kernel"])))
            post = cls(spec, float(f["noise_lambda"]))
            return post.update(f["inputs"], f["targets"])


def sample_on_grid(p: GPPosterior, grid, rng_seed) -> np.ndarray:
    """One joint posterior draw at ``grid``.

    Reuses the tracked grid covariance when ``grid`` is the tracked grid.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    G = as_points(grid, p.dim)
    if len(G) == 0:
        raise GPInputError("grid must be nonempty")
    tracked = p._grid is not None and p._grid.cov is not None and (
        p._grid.points is grid or np.array_equal(p._grid.points, G)
    )
    if tracked:
        mean, _ = p.grid_predict()
        C = p.grid_covariance()
    else:
        mean, _ = p.predict_many(G)
        C = p.covariance(G)
    Lc = jittered_cholesky(C)
    return mean + Lc @ rng.standard_normal(len(G))


def indexed_points(Z, m: int) -> np.ndarray:
    """Stack ``(z, i)`` for ``i = 0..m-1`` in z-major order."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    n = len(Z)
    idx = np.tile(np.arange(m, dtype=float), n)
    return np.column_stack([np.repeat(Z, m, axis=0), idx])


class TransitionPosterior:
    """Vector-valued mean-transition posterior as one scalar GP on ``Z x {0..m-1}``.

    Each observed next state contributes ``m`` indexed samples.
    """

    def __init__(self, kernel: KernelSpec, m: int, noise_lambda: float, inner: GPPosterior | None = None):
        if kernel.dim < 2:
            raise GPInputError("transition kernel must include an index coordinate")
        self.m = int(m)
        self.inner = inner if inner is not None else GPPosterior(kernel, noise_lambda)

    @property
    def kernel(self):
        return self.inner.kernel

    @property
    def noise_lambda(self):
        return self.inner.noise_lambda

    @property
    def z_dim(self):
        return self.inner.dim - 1

    def __len__(self):
        return len(self.inner)

    def update(self, z_points, next_states) -> "TransitionPosterior":
        Z = np.asarray(z_points, dtype=float)
        S = np.asarray(next_states, dtype=float)
        if Z.size == 0:
            return TransitionPosterior(self.kernel, self.m, self.noise_lambda, self.inner.update([], []))
        Z = as_points(Z, self.z_dim)
        S = S.reshape(len(Z), self.m)
        return TransitionPosterior(
            self.kernel, self.m, self.noise_lambda, self.inner.update(indexed_points(Z, self.m), S.reshape(-1))
        )

    def with_grid(self, Z, track_cov: bool = False) -> "TransitionPosterior":
        Z = as_points(Z, self.z_dim)
        return TransitionPosterior(
            self.kernel, self.m, self.noise_lambda, self.inner.with_grid(indexed_points(Z, self.m), track_cov)
        )

    def predict_many(self, Z) -> tuple[np.ndarray, np.ndarray]:
        """Means and standard deviations, each shaped ``(len(Z), m)``."""
        Z = as_points(Z, self.z_dim)
        mean, var = self.inner.predict_many(indexed_points(Z, self.m))
        return mean.reshape(-1, self.m), np.sqrt(var).reshape(-1, self.m)

    @property
    def grid_points(self) -> np.ndarray | None:
        """Tracked state-action points (without the index coordinate)."""
        G = self.inner.grid_points
        return None if G is None else G[:: self.m, :-1]

    def grid_predict(self) -> tuple[np.ndarray, np.ndarray]:
        mean, var = self.inner.grid_predict()
        return mean.reshape(-1, self.m), np.sqrt(var).reshape(-1, self.m)


def update(p, new_points, new_targets):
    return p.update(new_points, new_targets)


def predict(p: GPPosterior, z) -> tuple[float, float]:
    return p.predict(z)


def predict_transition(p: TransitionPosterior, z) -> tuple[np.ndarray, np.ndarray]:
    mean, sd = p.predict_many(np.asarray(z, dtype=float)[None, :])
    return mean[0], sd[0]
