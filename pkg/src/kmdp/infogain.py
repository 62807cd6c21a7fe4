"""Information gain of GP observations and maximum-information-gain estimates.

The information gain of noisy observations at points ``x_1..x_t`` under
``N(0, lambda)`` noise is ``0.5 * log det(I + K / lambda)``.  Its maximum over
point sets of size ``t`` is estimated greedily on a finite candidate mesh,
which by submodularity is within a factor ``1 - 1/e`` of the best subset of
that mesh.  Small instances can be solved exactly by enumeration.
"""
from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cholesky
from scipy.stats import qmc

from .gp import NumericalError
from .kernels import (
    IndexDelta,
    KernelSpec,
    Linear,
    Matern,
    Product,
    Quadratic,
    SquaredExponential,
    Sum,
    as_points,
    gram,
    index_cardinalities,
    spec_hash,
)

EXACT_T_MAX = 6


class MigInputError(ValueError):
    pass


@dataclass(frozen=True)
class MigEstimate:
    value: float
    selected_points: np.ndarray
    t: int
    lam: float
    method: str
    gains: np.ndarray = field(default=None, repr=False)


def info_gain(k: KernelSpec, points, lam: float) -> float:
    """``0.5 * log det(I + K / lam)`` from the Cholesky diagonal."""
    if not lam > 0:
        raise MigInputError("lambda must be positive")
    X = np.asarray(points, dtype=float)
    if X.size == 0:
        return 0.0
    K = gram(k, as_points(X, k.dim))
    try:
        L = cholesky(np.eye(len(K)) + K / lam, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("I + K/lambda is not positive definite") from exc
    return float(np.sum(np.log(np.diag(L))))


def sequential_gains(k: KernelSpec, points, lam: float) -> np.ndarray:
    """Per-step gains ``0.5 * ln(1 + sigma_{s-1}^2(x_s) / lam)`` along a sequence."""
    X = as_points(points, k.dim)
    C = gram(k, X)
    out = np.empty(len(X))
    for s in range(len(X)):
        v = max(C[s, s], 0.0)
        out[s] = 0.5 * math.log1p(v / lam)
        c = C[:, s].copy()
        C -= np.outer(c, c) / (lam + v)
    return out


def _greedy(k: KernelSpec, C: np.ndarray, t: int, lam: float, replacement: bool):
    """Greedy variance maximization with rank-one posterior covariance updates."""
    S = gram(k, C)
    var = np.diag(S).copy()
    taken = np.zeros(len(C), dtype=bool)
    picks = np.empty(t, dtype=int)
    gains = np.empty(t)
    for s in range(t):
        score = np.where(taken, -np.inf, var) if not replacement else var
        j = int(np.argmax(score))
        v = max(var[j], 0.0)
        picks[s] = j
        gains[s] = 0.5 * math.log1p(v / lam)
        col = S[:, j].copy()
        S -= np.outer(col, col) / (lam + v)
        var = np.diag(S).copy()
        if not replacement:
            taken[j] = True
    return picks, gains


def _check(candidates, k, t, lam, replacement):
    if not lam > 0:
        raise MigInputError("lambda must be positive")
    C = np.asarray(candidates, dtype=float)
    C = as_points(C, k.dim) if C.size else np.zeros((0, k.dim))
    if t < 0:
        raise MigInputError("t must be nonnegative")
    if t > len(C) and not replacement:
        raise MigInputError(f"t={t} exceeds the {len(C)} candidates")
    if t > 0 and len(C) == 0:
        raise MigInputError("no candidates")
    return C


def greedy_mig(k: KernelSpec, candidates, t: int, lam: float, replacement: bool = False) -> MigEstimate:
    """Greedy information-gain estimate of the MIG after ``t`` observations.

    Each round adds the candidate with the largest posterior variance (ties go
    to the lowest index).  With ``replacement`` a candidate may be chosen
    repeatedly, which lets ``t`` exceed the mesh size.
    """
    C = _check(candidates, k, t, lam, replacement)
    picks, gains = _greedy(k, C, t, lam, replacement) if t else (np.zeros(0, int), np.zeros(0))
    return MigEstimate(float(gains.sum()), C[picks], t, lam, "greedy", gains)


def mig_schedule(k: KernelSpec, candidates, t_max: int, lam: float, replacement: bool = False) -> np.ndarray:
    """Greedy prefix values ``[gamma_1, ..., gamma_t_max]`` (nondecreasing)."""
    est = greedy_mig(k, candidates, t_max, lam, replacement)
    return np.cumsum(est.gains)


def exact_mig(k: KernelSpec, candidates, t: int, lam: float, replacement: bool = False) -> MigEstimate:
    """Best information gain over all size-``t`` subsets (multisets with ``replacement``)."""
    C = _check(candidates, k, t, lam, replacement)
    if t > EXACT_T_MAX:
        raise MigInputError(f"exact MIG is limited to t <= {EXACT_T_MAX}")
    if t == 0:
        return MigEstimate(0.0, C[:0], 0, lam, "exact-small")
    K = gram(k, C)
    combos = (
        itertools.combinations_with_replacement(range(len(C)), t)
        if replacement
        else itertools.combinations(range(len(C)), t)
    )
    best, best_idx = -np.inf, None
    eye = np.eye(t)
    for idx in combos:
        idx = list(idx)
        sign, logdet = np.linalg.slogdet(eye + K[np.ix_(idx, idx)] / lam)
        val = 0.5 * logdet
        if val > best + 1e-15:
            best, best_idx = val, idx
    return MigEstimate(float(best), C[best_idx], t, lam, "exact-small")


# -- candidate meshes ---------------------------------------------------------


def candidate_mesh(k: KernelSpec, low, high, size: int = 512, kind: str = "grid", seed: int = 0) -> np.ndarray:
    """Finite surrogate of a box domain: uniform grid or scrambled Sobol points.

    Index coordinates are enumerated over their full range; ``size`` counts
    points per index combination.
    """
    card = index_cardinalities(k)
    cont = np.flatnonzero(card == 0)
    lo = np.broadcast_to(np.asarray(low, dtype=float), (k.dim,))[cont]
    hi = np.broadcast_to(np.asarray(high, dtype=float), (k.dim,))[cont]
    d = len(cont)
    if d == 0:
        base = np.zeros((1, 0))
    elif kind == "grid":
        per = max(2, int(round(size ** (1.0 / d))))
        axes = [np.linspace(lo[j], hi[j], per) for j in range(d)]
        base = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
    elif kind == "sobol":
        u = qmc.Sobol(d, scramble=True, seed=seed).random(size)
        base = qmc.scale(u, lo, hi) if d else u
    else:
        raise MigInputError(f"unknown mesh kind {kind!r}")
    idx_axes = [np.arange(c, dtype=float) for c in card[card > 0]]
    combos = list(itertools.product(*idx_axes)) if idx_axes else [()]
    out = np.empty((len(base) * len(combos), k.dim))
    for r, combo in enumerate(combos):
        block = out[r * len(base) : (r + 1) * len(base)]
        block[:, cont] = base
        for j, v in zip(np.flatnonzero(card), combo):
            block[:, j] = v
    return out


def cached_mig_schedule(
    k: KernelSpec,
    candidates,
    t_max: int,
    lam: float,
    cache_dir,
    mesh_seed: int | None = None,
    replacement: bool = False,
) -> np.ndarray:
    """``mig_schedule`` memoized on disk by (kernel, mesh, lambda, t_max)."""
    C = np.ascontiguousarray(np.asarray(candidates, dtype=float))
    mesh_key = str(mesh_seed) if mesh_seed is not None else hashlib.sha256(C.tobytes()).hexdigest()[:16]
    key = f"{spec_hash(k)}-{mesh_key}-{lam!r}-{t_max}-{int(replacement)}"
    path = Path(cache_dir) / f"mig-{hashlib.sha256(key.encode()).hexdigest()[:24]}.npy"
    if path.exists():
        return np.load(path)
    sched = mig_schedule(k, C, t_max, lam, replacement)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npy")
    np.save(tmp, sched)
    tmp.replace(path)
    return sched


# -- closed-form rates ----------------------------------------------------------


def _rank(k: KernelSpec) -> float:
    if isinstance(k, IndexDelta):
        return k.cardinality
    if isinstance(k, Linear):
        return k.d
    if isinstance(k, Quadratic):
        return k.d * (k.d + 1) // 2
    if isinstance(k, Sum):
        return _rank(k.left) + _rank(k.right)
    if isinstance(k, Product):
        return _rank(k.left) * _rank(k.right)
    return math.inf


def analytic_mig(k: KernelSpec, t: float, const: float = 1.0) -> float:
    """Asymptotic MIG rate with user constant, composed through sums and products.

    Linear: ``d ln t``; SE: ``(ln t)^d``; Matern: ``t^{d(d+1)/(2 nu + d(d+1))} ln t``.
    Sums add the parts plus ``2 ln t``; products with a rank-``r`` factor give
    ``r * gamma(other) + r ln t``.
    """
    if t <= 1:
        return 0.0 if t <= 0 else const
    lt = math.log(t)
    if isinstance(k, Linear):
        return const * k.d * lt
    if isinstance(k, Quadratic):
        return const * _rank(k) * lt
    if isinstance(k, IndexDelta):
        return const * k.cardinality * lt
    if isinstance(k, SquaredExponential):
        return const * lt ** k.d
    if isinstance(k, Matern):
        e = k.d * (k.d + 1) / (2 * k.nu + k.d * (k.d + 1))
        return const * t**e * lt
    if isinstance(k, Sum):
        return analytic_mig(k.left, t, const) + analytic_mig(k.right, t, const) + 2 * lt
    if isinstance(k, Product):
        rl, rr = _rank(k.left), _rank(k.right)
        if rr < math.inf and (rr <= rl):
            return rr * analytic_mig(k.left, t, const) + rr * lt
        if rl < math.inf:
            return rl * analytic_mig(k.right, t, const) + rl * lt
        return analytic_mig(k.left, t, const) + analytic_mig(k.right, t, const)
    raise MigInputError(f"no analytic rate for {type(k).__name__}")


def analytic_schedule(k: KernelSpec, t_max: int, const: float = 1.0) -> np.ndarray:
    return np.array([analytic_mig(k, t, const) for t in range(1, t_max + 1)])
