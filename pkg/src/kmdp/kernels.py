"""Kernel algebra over flat real-vector points.

A kernel is described by a small tree of frozen dataclasses.  Leaves are the
base kernels (linear, squared exponential, Matern, quadratic, index delta);
inner nodes are ``Sum`` and ``Product``.  By default a composite node acts on
a *factored* domain: the left child consumes the first ``left.dim``
coordinates of a point and the right child the rest.  With ``shared=True``
both children see the whole point.

Index components (consumed by ``IndexDelta``) are stored in the point vector
as integral floats in ``0 .. cardinality - 1``.  The transition domain
``Z x {1..m}`` is therefore ``(s, a, i)`` with ``i`` zero-based.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

MATERN_NUS = (0.5, 1.5, 2.5)


class KernelError(ValueError):
    """Malformed kernel spec or point of the wrong shape."""


@dataclass(frozen=True)
class KernelSpec:
    variance_cap: bool = field(default=False, kw_only=True)
    # divisor applied when variance_cap is set; filled in by bind_box
    cap_divisor: float | None = field(default=None, kw_only=True, compare=False)

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def _raw_cross(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _raw_diag(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _divisor(self) -> float:
        if not self.variance_cap:
            return 1.0
        if self.cap_divisor is None:
            raise KernelError(
                f"{type(self).__name__} has variance_cap set but no bounding box; call bind_box first"
            )
        return self.cap_divisor

    def cross(self, X, Y) -> np.ndarray:
        """Kernel matrix ``[k(x_i, y_j)]`` between two point sets."""
        X = as_points(X, self.dim)
        Y = as_points(Y, self.dim)
        return self._raw_cross(X, Y) / self._divisor()

    def diag(self, X) -> np.ndarray:
        X = as_points(X, self.dim)
        return self._raw_diag(X) / self._divisor()

    def __call__(self, z, z2) -> float:
        return float(self.cross(np.atleast_1d(z), np.atleast_1d(z2))[0, 0])


@dataclass(frozen=True)
class Linear(KernelSpec):
    d: int = 1

    @property
    def dim(self):
        return self.d

    def _raw_cross(self, X, Y):
        return X @ Y.T

    def _raw_diag(self, X):
        return np.einsum("ij,ij->i", X, X)


@dataclass(frozen=True)
class Quadratic(KernelSpec):
    """``(x^T x')^2``, the product of a linear kernel with itself."""

    d: int = 1

    @property
    def dim(self):
        return self.d

    def _raw_cross(self, X, Y):
        return (X @ Y.T) ** 2

    def _raw_diag(self, X):
        return np.einsum("ij,ij->i", X, X) ** 2


def _sqdist(X, Y):
    d2 = (
        np.einsum("ij,ij->i", X, X)[:, None]
        + np.einsum("ij,ij->i", Y, Y)[None, :]
        - 2.0 * X @ Y.T
    )
    return np.maximum(d2, 0.0)


@dataclass(frozen=True)
class SquaredExponential(KernelSpec):
    d: int = 1
    lengthscale: float = 1.0

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise KernelError("lengthscale must be positive")

    @property
    def dim(self):
        return self.d

    def _raw_cross(self, X, Y):
        return np.exp(-0.5 * _sqdist(X, Y) / self.lengthscale**2)

    def _raw_diag(self, X):
        return np.ones(len(X))


@dataclass(frozen=True)
class Matern(KernelSpec):
    d: int = 1
    nu: float = 2.5
    lengthscale: float = 1.0

    def __post_init__(self):
        if self.nu not in MATERN_NUS:
            raise KernelError(f"Matern nu must be one of {MATERN_NUS}, got {self.nu}")
        if not self.lengthscale > 0:
            raise KernelError("lengthscale must be positive")

    @property
    def dim(self):
        return self.d

    def _raw_cross(self, X, Y):
        r = np.sqrt(_sqdist(X, Y)) / self.lengthscale
        if self.nu == 0.5:
            return np.exp(-r)
        if self.nu == 1.5:
            c = np.sqrt(3.0) * r
            return (1.0 + c) * np.exp(-c)
        c = np.sqrt(5.0) * r
        return (1.0 + c + c * c / 3.0) * np.exp(-c)

    def _raw_diag(self, X):
        return np.ones(len(X))


@dataclass(frozen=True)
class IndexDelta(KernelSpec):
    """Indicator kernel ``1{i == j}`` on ``{0, ..., cardinality - 1}``."""

    cardinality: int = 1

    def __post_init__(self):
        if self.cardinality < 1:
            raise KernelError("cardinality must be >= 1")

    @property
    def dim(self):
        return 1

    def _check(self, X):
        idx = X[:, 0]
        r = np.rint(idx)
        if np.any(np.abs(idx - r) > 1e-9) or np.any(r < 0) or np.any(r >= self.cardinality):
            raise KernelError(f"index component outside 0..{self.cardinality - 1}")
        return r

    def _raw_cross(self, X, Y):
        return (self._check(X)[:, None] == self._check(Y)[None, :]).astype(float)

    def _raw_diag(self, X):
        self._check(X)
        return np.ones(len(X))


@dataclass(frozen=True)
class _Composite(KernelSpec):
    left: KernelSpec = None
    right: KernelSpec = None
    shared: bool = False

    def __post_init__(self):
        if not isinstance(self.left, KernelSpec) or not isinstance(self.right, KernelSpec):
            raise KernelError("composite kernel needs two KernelSpec children")
        if self.shared and self.left.dim != self.right.dim:
            raise KernelError(
                f"shared composite needs equal child dims, got {self.left.dim} and {self.right.dim}"
            )

    @property
    def dim(self):
        return self.left.dim if self.shared else self.left.dim + self.right.dim

    def _split(self, X):
        if self.shared:
            return X, X
        d = self.left.dim
        return X[:, :d], X[:, d:]

    def _children(self, X, Y):
        XL, XR = self._split(X)
        YL, YR = self._split(Y)
        return self.left.cross(XL, YL), self.right.cross(XR, YR)

    def _children_diag(self, X):
        XL, XR = self._split(X)
        return self.left.diag(XL), self.right.diag(XR)


@dataclass(frozen=True)
class Sum(_Composite):
    def _raw_cross(self, X, Y):
        a, b = self._children(X, Y)
        return a + b

    def _raw_diag(self, X):
        a, b = self._children_diag(X)
        return a + b


@dataclass(frozen=True)
class Product(_Composite):
    def _raw_cross(self, X, Y):
        a, b = self._children(X, Y)
        return a * b

    def _raw_diag(self, X):
        a, b = self._children_diag(X)
        return a * b


def as_points(X, dim: int) -> np.ndarray:
    """Coerce to a float ``(n, dim)`` array; a 1-D input is one point."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != dim:
        raise KernelError(f"expected points of dimension {dim}, got shape {X.shape}")
    return X


def eval_kernel(k: KernelSpec, z, z2) -> float:
    return k(z, z2)


def gram(k: KernelSpec, points) -> np.ndarray:
    X = as_points(points, k.dim)
    if len(X) == 0:
        raise KernelError("gram needs at least one point")
    K = k.cross(X, X)
    return 0.5 * (K + K.T)


# -- variance capping ---------------------------------------------------------


def _max_self(k: KernelSpec, lo: np.ndarray, hi: np.ndarray) -> float:
    """Upper bound of k(z, z) over the box, counting caps of descendants."""
    if isinstance(k, (Linear, Quadratic)):
        r2 = float(np.sum(np.maximum(lo**2, hi**2)))
        raw = r2 if isinstance(k, Linear) else r2**2
    elif isinstance(k, (SquaredExponential, Matern, IndexDelta)):
        raw = 1.0
    else:
        if k.shared:
            a = _max_self(k.left, lo, hi)
            b = _max_self(k.right, lo, hi)
        else:
            d = k.left.dim
            a = _max_self(k.left, lo[:d], hi[:d])
            b = _max_self(k.right, lo[d:], hi[d:])
        raw = a + b if isinstance(k, Sum) else a * b
    if k.variance_cap:
        return 1.0 if raw > 0 else 0.0
    return raw


def _raw_max_self(k, lo, hi):
    return _max_self(replace(k, variance_cap=False), lo, hi)


def bind_box(k: KernelSpec, low, high) -> KernelSpec:
    """Return a copy of ``k`` whose capped nodes divide by their max self-similarity
    over the box ``[low, high]``.  Index coordinates may carry any bounds."""
    lo = np.broadcast_to(np.asarray(low, dtype=float), (k.dim,)).copy()
    hi = np.broadcast_to(np.asarray(high, dtype=float), (k.dim,)).copy()
    return _bind(k, lo, hi)


def _bind(k, lo, hi):
    if isinstance(k, _Composite):
        if k.shared:
            left, right = _bind(k.left, lo, hi), _bind(k.right, lo, hi)
        else:
            d = k.left.dim
            left, right = _bind(k.left, lo[:d], hi[:d]), _bind(k.right, lo[d:], hi[d:])
        k = replace(k, left=left, right=right)
    if k.variance_cap:
        m = _raw_max_self(k, lo, hi)
        if m <= 0:
            raise KernelError("cannot cap a kernel that vanishes on the whole box")
        k = replace(k, cap_divisor=m)
    return k


def max_self_similarity(k: KernelSpec, low, high) -> float:
    lo = np.broadcast_to(np.asarray(low, dtype=float), (k.dim,))
    hi = np.broadcast_to(np.asarray(high, dtype=float), (k.dim,))
    return _max_self(k, lo, hi)


def index_mask(k: KernelSpec) -> np.ndarray:
    """Boolean mask of the coordinates that are consumed by IndexDelta leaves."""
    if isinstance(k, IndexDelta):
        return np.array([True])
    if isinstance(k, _Composite):
        if k.shared:
            return index_mask(k.left) | index_mask(k.right)
        return np.concatenate([index_mask(k.left), index_mask(k.right)])
    return np.zeros(k.dim, dtype=bool)


def index_cardinalities(k: KernelSpec) -> np.ndarray:
    """Cardinality per coordinate (0 for continuous coordinates)."""
    if isinstance(k, IndexDelta):
        return np.array([k.cardinality])
    if isinstance(k, _Composite):
        if k.shared:
            return np.maximum(index_cardinalities(k.left), index_cardinalities(k.right))
        return np.concatenate([index_cardinalities(k.left), index_cardinalities(k.right)])
    return np.zeros(k.dim, dtype=int)


# -- serialization ------------------------------------------------------------

_TAGS = {
    "linear": Linear,
    "quadratic": Quadratic,
    "se": SquaredExponential,
    "matern": Matern,
    "index_delta": IndexDelta,
    "sum": Sum,
    "product": Product,
}
_NAMES = {v: k for k, v in _TAGS.items()}
_FIELDS = {
    Linear: ("dim",),
    Quadratic: ("dim",),
    SquaredExponential: ("dim", "lengthscale"),
    Matern: ("dim", "nu", "lengthscale"),
    IndexDelta: ("cardinality",),
    Sum: ("left", "right", "shared"),
    Product: ("left", "right", "shared"),
}
_OPTIONAL = ("shared", "lengthscale", "nu")


def to_dict(k: KernelSpec) -> dict[str, Any]:
    cls = type(k)
    out: dict[str, Any] = {"type": _NAMES[cls]}
    for name in _FIELDS[cls]:
        if name == "dim":
            out["dim"] = k.d
        elif name in ("left", "right"):
            out[name] = to_dict(getattr(k, name))
        else:
            out[name] = getattr(k, name)
    if k.variance_cap:
        out["variance_cap"] = True
    return out


def from_dict(d: dict[str, Any]) -> KernelSpec:
    if not isinstance(d, dict) or "type" not in d:
        raise KernelError(f"kernel record must be a mapping with a 'type' tag: {d!r}")
    tag = d["type"]
    if tag not in _TAGS:
        raise KernelError(f"unknown kernel type {tag!r}; expected one of {sorted(_TAGS)}")
    cls = _TAGS[tag]
    allowed = set(_FIELDS[cls]) | {"type", "variance_cap"}
    unknown = set(d) - allowed
    if unknown:
        raise KernelError(f"unknown keys for {tag} kernel: {sorted(unknown)}")
    kw: dict[str, Any] = {"variance_cap": bool(d.get("variance_cap", False))}
    for name in _FIELDS[cls]:
        if name not in d:
            if name in _OPTIONAL:
                continue
            raise KernelError(f"{tag} kernel needs '{name}'")
        v = d[name]
        if name == "dim":
            if int(v) != v or v < 1:
                raise KernelError(f"dim must be a positive integer, got {v!r}")
            kw["d"] = int(v)
        elif name == "cardinality":
            kw["cardinality"] = int(v)
        elif name in ("left", "right"):
            kw[name] = from_dict(v)
        elif name == "shared":
            kw["shared"] = bool(v)
        else:
            kw[name] = float(v)
    return cls(**kw)


def spec_hash(k: KernelSpec) -> str:
    payload = {"spec": to_dict(k), "caps": _caps(k)}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _caps(k):
    out = [k.cap_divisor]
    if isinstance(k, _Composite):
        out += _caps(k.left) + _caps(k.right)
    return out


# -- RKHS members -------------------------------------------------------------


@dataclass(frozen=True)
class RkhsFunction:
    """``f(z) = sum_i alpha_i k(center_i, z)``."""

    kernel: KernelSpec
    centers: np.ndarray
    coefficients: np.ndarray

    def __call__(self, Z) -> np.ndarray | float:
        Z = np.asarray(Z, dtype=float)
        single = Z.ndim == 1
        vals = self.kernel.cross(as_points(Z, self.kernel.dim), self.centers) @ self.coefficients
        return float(vals[0]) if single else vals

    @property
    def rkhs_norm(self) -> float:
        a = self.coefficients
        q = float(a @ gram(self.kernel, self.centers) @ a)
        return float(np.sqrt(max(q, 0.0)))


def random_points(k: KernelSpec, n: int, rng, low=0.0, high=1.0) -> np.ndarray:
    """Uniform points in the box, with index coordinates drawn uniformly from their range."""
    lo = np.broadcast_to(np.asarray(low, dtype=float), (k.dim,))
    hi = np.broadcast_to(np.asarray(high, dtype=float), (k.dim,))
    X = rng.uniform(lo, hi, size=(n, k.dim))
    card = index_cardinalities(k)
    for j in np.flatnonzero(card):
        X[:, j] = rng.integers(0, card[j], size=n)
    return X


def rkhs_sample(
    k: KernelSpec, n_centers: int, norm_bound: float, rng_seed, low=0.0, high=1.0, centers=None
) -> RkhsFunction:
    """Random RKHS member with norm exactly ``norm_bound``.

    Centers default to uniform draws from the box ``[low, high]``; Gaussian
    coefficients are rescaled so that ``sqrt(alpha^T K alpha) == norm_bound``.
    """
    if n_centers < 1:
        raise KernelError("n_centers must be >= 1")
    if not norm_bound > 0:
        raise KernelError("norm_bound must be positive")
    rng = np.random.default_rng(rng_seed)
    if centers is None:
        centers = random_points(k, n_centers, rng, low, high)
    else:
        centers = as_points(centers, k.dim)
    alpha = rng.standard_normal(len(centers))
    K = gram(k, centers)
    q = float(alpha @ K @ alpha)
    if q <= 1e-14 * float(alpha @ alpha):
        q = float(alpha @ (K + 1e-10 * np.eye(len(K))) @ alpha)
        if float(alpha @ K @ alpha) <= 0.0:
            raise KernelError("sampled function has zero RKHS norm (degenerate centers)")
    alpha = alpha * (norm_bound / np.sqrt(q))
    return RkhsFunction(k, centers, alpha)


def min_norm_interpolant(k: KernelSpec, centers, values, rcond: float = 1e-10) -> RkhsFunction:
    """Minimum-RKHS-norm function matching ``values`` at ``centers``.

    For finite-rank kernels with centers spanning the feature space this
    recovers the exact RKHS norm of the generating function.
    """
    X = as_points(centers, k.dim)
    K = gram(k, X)
    alpha = np.linalg.pinv(K, rcond=rcond, hermitian=True) @ np.asarray(values, dtype=float)
    return RkhsFunction(k, X, alpha)
