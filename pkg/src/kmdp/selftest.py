"""Fast invariant checks run by ``kmdp selftest`` (a few seconds)."""
from __future__ import annotations

import math
import tempfile
from pathlib import Path

import numpy as np
from scipy.linalg import solve

from .agents import EpisodeRecord
from .envs import LqrEnv, riccati_map, riccati_solution
from .gp import GPPosterior
from .harness import read_records, write_records
from .infogain import exact_mig, greedy_mig, info_gain, sequential_gains
from .kernels import Linear, Product, SquaredExponential, Sum, gram
from .planners import FiniteModel, brute_force_value, plan


def _gp_dense(rng):
    k = Sum(SquaredExponential(d=2, lengthscale=0.5), Linear(d=2), shared=True)
    X = rng.uniform(-1, 1, (30, 2))
    y = rng.standard_normal(30)
    Z = rng.uniform(-1, 1, (7, 2))
    p = GPPosterior(k, 0.3).update(X[:10], y[:10]).update(X[10:], y[10:])
    mu, var = p.predict_many(Z)
    K = gram(k, X) + 0.3 * np.eye(30)
    kz = k.cross(X, Z)
    mu_d = kz.T @ solve(K, y)
    var_d = k.diag(Z) - np.einsum("ij,ij->j", kz, solve(K, kz))
    return np.max(np.abs(mu - mu_d)) < 1e-8 and np.max(np.abs(var - var_d)) < 1e-8


def _telescoping(rng):
    k = SquaredExponential(d=1, lengthscale=0.3)
    X = rng.uniform(0, 1, (15, 1))
    return abs(info_gain(k, X, 0.5) - sequential_gains(k, X, 0.5).sum()) < 1e-8


def _greedy_ratio(rng):
    k = SquaredExponential(d=1, lengthscale=0.2)
    C = rng.uniform(0, 1, (8, 1))
    g, e = greedy_mig(k, C, 3, 0.1).value, exact_mig(k, C, 3, 0.1).value
    return g >= (1 - 1 / math.e) * e - 1e-9


def _planner(rng):
    S, A, H = 3, 2, 2
    P = rng.dirichlet(np.ones(S), size=(S, A))
    model = FiniteModel(rng.uniform(-1, 1, (S, A)), probs=P)
    return np.allclose(plan(model, H)[1].values[:, 0], brute_force_value(model, H), rtol=0, atol=1e-12)


def _riccati(rng):
    env = LqrEnv(0.5, 0.5, 1.0, 1.0, 5, -1, 1, -1, 1)
    G = riccati_solution(env.A, env.B, env.P, env.Q)
    return np.max(np.abs(G - riccati_map(G, env.A, env.B, env.P, env.Q))) <= 1e-8


def _csv_roundtrip(rng):
    recs = [EpisodeRecord(i + 1, *rng.standard_normal(10)) for i in range(5)]
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "r.csv"
        write_records(path, recs)
        return read_records(path) == recs


def _product_psd(rng):
    k = Product(SquaredExponential(d=1), Linear(d=1))
    return np.linalg.eigvalsh(gram(k, rng.uniform(-1, 1, (20, 2)))).min() >= -1e-8 * 20


CHECKS = {
    "gp_incremental_vs_dense": _gp_dense,
    "info_gain_telescoping": _telescoping,
    "greedy_mig_ratio": _greedy_ratio,
    "planner_vs_enumeration": _planner,
    "riccati_residual": _riccati,
    "csv_roundtrip": _csv_roundtrip,
    "product_kernel_psd": _product_psd,
}


def run_selftest(seed: int = 0) -> dict[str, bool]:
    rng = np.random.default_rng(seed)
    return {name: bool(fn(rng)) for name, fn in CHECKS.items()}
