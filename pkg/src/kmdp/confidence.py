"""Confidence widths and membership tests for the reward and transition posteriors.

Frequentist mode uses RKHS-norm widths that grow with the information gain
gathered so far.  Bayes-GP mode uses union-bound widths over discretizations
whose sizes come from derivative tail constants of the GP sample paths.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

MODES = ("frequentist", "bayes-gp")


class ConfidenceError(ValueError):
    pass


@dataclass(frozen=True)
class ConfidenceConfig:
    B_R: float
    B_P: float
    sigma_R: float
    sigma_P: float
    delta: float
    H: int
    m: int
    L: float
    mode: str = "frequentist"
    n: int = 1
    a_R: float = 1.0
    b_R: float = 1.0
    a_P: float = 1.0
    b_P: float = 1.0
    c1: float = 1.0
    c2: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfidenceError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0 < self.delta <= 1:
            raise ConfidenceError(f"delta must lie in (0, 1], got {self.delta}")
        for name in ("B_R", "B_P", "a_R", "b_R", "a_P", "b_P", "c1", "c2"):
            if not getattr(self, name) > 0:
                raise ConfidenceError(f"{name} must be positive")
        for name in ("sigma_R", "sigma_P", "L"):
            if getattr(self, name) < 0:
                raise ConfidenceError(f"{name} must be nonnegative")
        if self.H < 1 or self.m < 1 or self.n < 1:
            raise ConfidenceError("H, m and n must be positive integers")

    def as_dict(self):
        return asdict(self)


def _check_l(l):
    if l < 1:
        raise ConfidenceError(f"episode index must be >= 1, got {l}")


def beta_r(cfg: ConfidenceConfig, l: int, gamma_prev: float) -> float:
    """Reward width for episode ``l`` given the MIG after ``(l-1) H`` observations."""
    _check_l(l)
    return cfg.B_R + cfg.sigma_R / math.sqrt(cfg.H) * math.sqrt(2.0 * (math.log(3.0 / cfg.delta) + gamma_prev))


def beta_p(cfg: ConfidenceConfig, l: int, gamma_prev: float) -> float:
    """Transition width for episode ``l`` given the MIG after ``m (l-1) H`` observations."""
    _check_l(l)
    mH = cfg.m * cfg.H
    return cfg.B_P + cfg.sigma_P / math.sqrt(mH) * math.sqrt(2.0 * (math.log(3.0 / cfg.delta) + gamma_prev))


def _ceil(x: float) -> int:
    # guard against 2.0000000000000004 rounding up to 3
    return max(1, math.ceil(x - 1e-9 * max(1.0, abs(x))))


def _grid_factor(c, dim, l, b, a, mult, delta):
    arg = mult * a / delta
    if arg <= 1.0:
        raise ConfidenceError("derivative constants give a nonpositive log term; increase a or decrease delta")
    return (2.0 * c * dim * l * l * b * math.sqrt(math.log(arg))) ** dim


def bayes_grid_sizes(cfg: ConfidenceConfig, l: int) -> tuple[int, int]:
    """Sizes of the state and action discretizations used in episode ``l``."""
    if cfg.mode != "bayes-gp":
        raise ConfidenceError("bayes_grid_sizes needs mode 'bayes-gp'")
    _check_l(l)
    m, n = cfg.m, cfg.n
    mr, mp = 6 * (m + n), 6 * m * (m + n)
    S = max(
        _grid_factor(cfg.c1, m, l, cfg.b_R, cfg.a_R, mr, cfg.delta),
        _grid_factor(cfg.c1, m, l, cfg.b_P, cfg.a_P, mp, cfg.delta),
    )
    A = max(
        _grid_factor(cfg.c2, n, l, cfg.b_R, cfg.a_R, mr, cfg.delta),
        _grid_factor(cfg.c2, n, l, cfg.b_P, cfg.a_P, mp, cfg.delta),
    )
    return _ceil(S), _ceil(A)


def bayes_beta_r(cfg: ConfidenceConfig, l: int, S_size: int, A_size: int) -> float:
    _check_l(l)
    return math.sqrt(2.0 * math.log(S_size * A_size * math.pi**2 * l * l / cfg.delta))


def bayes_beta_p(cfg: ConfidenceConfig, l: int, S_size: int, A_size: int) -> float:
    _check_l(l)
    return math.sqrt(2.0 * math.log(S_size * A_size * cfg.m * math.pi**2 * l * l / cfg.delta))


def reward_slack(cfg: ConfidenceConfig, l: int) -> float:
    """Additive band slack: ``1/l^2`` in Bayes-GP mode, 0 otherwise."""
    return 1.0 / (l * l) if cfg.mode == "bayes-gp" else 0.0


def transition_slack(cfg: ConfidenceConfig, l: int) -> float:
    return math.sqrt(cfg.m) / (l * l) if cfg.mode == "bayes-gp" else 0.0


def betas(cfg: ConfidenceConfig, l: int, gamma_r_prev: float = 0.0, gamma_p_prev: float = 0.0) -> tuple[float, float]:
    """Both widths for episode ``l`` in the configured mode."""
    if cfg.mode == "frequentist":
        return beta_r(cfg, l, gamma_r_prev), beta_p(cfg, l, gamma_p_prev)
    S, A = bayes_grid_sizes(cfg, l)
    return bayes_beta_r(cfg, l, S, A), bayes_beta_p(cfg, l, S, A)


def reward_band(posterior, beta: float, z, slack: float = 0.0) -> tuple[float, float]:
    """``[mu - beta sigma - slack, mu + beta sigma + slack]`` at ``z``."""
    if beta < 0:
        raise ConfidenceError("beta must be nonnegative")
    mu, var = posterior.predict(z)
    w = beta * math.sqrt(var) + slack
    return mu - w, mu + w


def transition_ball(tposterior, beta: float, z, slack: float = 0.0) -> tuple[np.ndarray, float]:
    """Center ``mu_P(z)`` and radius ``beta * ||sigma_P(z)||_2 + slack``."""
    if beta < 0:
        raise ConfidenceError("beta must be nonnegative")
    mean, sd = tposterior.predict_many(np.asarray(z, dtype=float)[None, :])
    return mean[0], float(beta * np.linalg.norm(sd[0]) + slack)


def reward_violations(mean, sd, beta, truth, slack=0.0) -> np.ndarray:
    """Boolean mask of grid points where the true reward lies outside its band."""
    return np.abs(np.asarray(truth) - mean) > beta * sd + slack + 1e-12


def transition_violations(mean, sd, beta, truth, slack=0.0) -> np.ndarray:
    """Mask of grid points whose true mean next state lies outside the ball."""
    gap = np.linalg.norm(np.asarray(truth) - mean, axis=-1)
    return gap > beta * np.linalg.norm(sd, axis=-1) + slack + 1e-12
