"""Experiment configs, sweeps over (agent, seed) cells, CSV persistence and summaries.

Config files (``*.kmdp.conf``) are YAML mappings with a ``schema`` version
field; unknown keys anywhere are errors.  Each cell writes
``{agent}_seed{seed}.csv`` (per-episode records) and, for GP agents,
``{agent}_seed{seed}.coverage.csv``; ``summary.csv`` is rebuilt from those
files after all cells finish.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .agents import AgentConfig, EpisodeRecord, run_baseline, run_gp_ucrl, run_psrl
from .confidence import ConfidenceConfig, ConfidenceError, betas, reward_violations, transition_violations
from .envs import LqrEnv, RkhsEnv, TabularEnv, lqr_lipschitz_bound, tabular_as_kernel
from .gp import GPPosterior, TransitionPosterior, indexed_points
from .infogain import candidate_mesh, mig_schedule
from .kernels import KernelError, bind_box, from_dict, min_norm_interpolant, random_points, rkhs_sample
from .planners import Grid
from .seeding import stream

log = logging.getLogger("kmdp")

SCHEMA_VERSION = 1
AGENTS = ("gp_ucrl", "psrl", "random", "oracle")
GP_AGENTS = ("gp_ucrl", "psrl")
SUMMARY_COLUMNS = [
    "agent",
    "seed",
    "final_regret",
    "growth_p",
    "growth_ci_lo",
    "growth_ci_hi",
    "coverage_viol",
    "secs",
]
COVERAGE_COLUMNS = ["episode", "reward_viol", "trans_viol", "planned_value"]


class ConfigError(ValueError):
    pass


# -- config -------------------------------------------------------------------------------

_TOP_KEYS = {
    "schema",
    "name",
    "env",
    "envs",
    "kernels",
    "confidence",
    "grid",
    "agents",
    "agent_options",
    "episodes",
    "seeds",
    "mig",
    "output",
    "coverage",
}
_ENV_KEYS = {
    "lqr": {"kind", "H", "A", "B", "P", "Q", "state_low", "state_high", "action_low", "action_high",
            "sigma_R", "sigma_P", "initial_state", "positive_quadratic_reward"},
    "tabular": {"kind", "H", "table", "rewards", "transitions", "sigma_R", "sigma_P", "initial_state"},
    "rkhs": {"kind", "H", "m", "n", "state_low", "state_high", "action_low", "action_high", "sigma_R",
             "sigma_P", "initial_state", "norm_R", "norm_P", "n_centers", "seed"},
}
_CONF_KEYS = {"B_R", "B_P", "delta", "L", "mode", "sigma_R", "sigma_P", "a_R", "b_R", "a_P", "b_P", "c1", "c2"}
_GRID_KEYS = {"state_res", "action_res"}
_OPT_KEYS = {"lambda_R", "lambda_P", "transition_optimism", "clip_factor"}
_MIG_KEYS = {"method", "const", "cache_dir"}
_OUT_KEYS = {"dir", "timing"}
_COV_KEYS = {"runs", "episodes", "n_centers", "check_res", "seed"}


def _only(d, allowed, where):
    if d is None:
        return {}
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping")
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")
    return d


def _check_env(env, where, kernels):
    env = dict(_only(env, set().union(*_ENV_KEYS.values()), where))
    kind = env.get("kind")
    if kind not in _ENV_KEYS:
        raise ConfigError(f"{where}.kind must be one of {sorted(_ENV_KEYS)}")
    _only(env, _ENV_KEYS[kind], f"{where} ({kind})")
    if "H" not in env:
        raise ConfigError(f"{where}.H is required")
    if kernels is None and kind != "tabular":
        raise ConfigError("kernels.reward and kernels.transition are required for non-tabular envs")
    return env


@dataclass
class ExperimentConfig:
    name: str
    envs: list
    kernels: dict | None
    confidence: dict
    grid: dict
    agents: list
    agent_options: dict
    episodes: int
    seeds: list
    mig: dict
    output_dir: Path
    timing: bool = False
    coverage: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_mapping(cls, raw: dict, base_dir=None) -> "ExperimentConfig":
        raw = _only(raw, _TOP_KEYS, "config")
        if raw.get("schema") != SCHEMA_VERSION:
            raise ConfigError(f"config schema must be {SCHEMA_VERSION}, got {raw.get('schema')!r}")
        if ("env" in raw) == ("envs" in raw):
            raise ConfigError("give exactly one of 'env' (a mapping) or 'envs' (a list of named mappings)")
        kernels = raw.get("kernels")
        if kernels is not None:
            _only(kernels, {"reward", "transition"}, "kernels")
        if "env" in raw:
            envs = [("", _check_env(raw["env"], "env", kernels))]
        else:
            if not isinstance(raw["envs"], list) or not raw["envs"]:
                raise ConfigError("envs must be a nonempty list")
            envs = []
            for i, e in enumerate(raw["envs"]):
                if not isinstance(e, dict) or not e.get("name"):
                    raise ConfigError(f"envs[{i}] needs a 'name'")
                e = dict(e)
                envs.append((str(e.pop("name")), _check_env(e, f"envs[{i}]", kernels)))
            names = [nm for nm, _ in envs]
            if len(set(names)) != len(names):
                raise ConfigError("env names must be unique")
        conf = dict(_only(raw.get("confidence"), _CONF_KEYS, "confidence"))
        delta = conf.get("delta", 0.1)
        if not (isinstance(delta, (int, float)) and 0 < delta <= 1):
            raise ConfigError(f"confidence.delta must lie in (0, 1], got {delta!r}")
        agents = list(raw.get("agents", []))
        bad = [a for a in agents if a not in AGENTS]
        if bad:
            raise ConfigError(f"unknown agents {bad}; expected a subset of {AGENTS}")
        seeds = raw.get("seeds")
        if not seeds:
            raise ConfigError("seeds must be a nonempty list")
        seeds = [int(s) for s in seeds]
        episodes = int(raw.get("episodes", 0))
        if episodes < 0:
            raise ConfigError("episodes must be >= 0")
        out = _only(raw.get("output"), _OUT_KEYS, "output")
        base = Path(base_dir) if base_dir is not None else Path.cwd()
        out_dir = Path(out.get("dir", "out"))
        return cls(
            name=str(raw.get("name", "experiment")),
            envs=envs,
            kernels=kernels,
            confidence=conf,
            grid=dict(_only(raw.get("grid"), _GRID_KEYS, "grid")),
            agents=agents,
            agent_options=dict(_only(raw.get("agent_options"), _OPT_KEYS, "agent_options")),
            episodes=episodes,
            seeds=seeds,
            mig=dict(_only(raw.get("mig"), _MIG_KEYS, "mig")),
            output_dir=out_dir if out_dir.is_absolute() else base / out_dir,
            timing=bool(out.get("timing", False)),
            coverage=dict(_only(raw.get("coverage"), _COV_KEYS, "coverage")),
            base_dir=base,
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
        return cls.from_mapping(raw, base_dir=path.parent)


@dataclass
class Setup:
    """Objects built from a config: env, grid and (for GP agents) learner settings."""

    env: object
    grid: Grid
    agent_cfg: AgentConfig | None


def _mat(x, name):
    a = np.atleast_2d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(a)):
        raise ConfigError(f"{name} must be finite")
    return a


def _env_spec(cfg: ExperimentConfig, env_name: str = ""):
    for name, e in cfg.envs:
        if name == env_name:
            return e
    raise ConfigError(f"no env named {env_name!r}")


def build_env(cfg: ExperimentConfig, env_name: str = ""):
    e = _env_spec(cfg, env_name)
    kind, H = e["kind"], int(e["H"])
    try:
        if kind == "lqr":
            return LqrEnv(
                _mat(e["A"], "A"),
                _mat(e["B"], "B"),
                _mat(e["P"], "P"),
                _mat(e["Q"], "Q"),
                H,
                e["state_low"],
                e["state_high"],
                e["action_low"],
                e["action_high"],
                e.get("sigma_R", 0.0),
                e.get("sigma_P", 0.0),
                e.get("initial_state"),
                e.get("positive_quadratic_reward", False),
            )
        if kind == "tabular":
            if "table" in e:
                p = Path(e["table"])
                p = p if p.is_absolute() else cfg.base_dir / p
                return TabularEnv.from_csv(p, H, e.get("sigma_R", 0.0), e.get("sigma_P"), e.get("initial_state", 0))
            return TabularEnv(e["rewards"], e["transitions"], H, e.get("sigma_R", 0.0), e.get("sigma_P"), e.get("initial_state", 0))
        kR, kP = _kernels(cfg, int(e["m"]), int(e["n"]), e["state_low"], e["state_high"], e["action_low"], e["action_high"])
        return RkhsEnv.random(
            kR,
            kP,
            int(e["m"]),
            int(e["n"]),
            H,
            float(e.get("norm_R", 1.0)),
            float(e.get("norm_P", 1.0)),
            e["state_low"],
            e["state_high"],
            e["action_low"],
            e["action_high"],
            e.get("sigma_R", 0.0),
            e.get("sigma_P", 0.0),
            int(e.get("n_centers", 10)),
            int(e.get("seed", 0)),
            e.get("initial_state"),
        )
    except KeyError as exc:
        raise ConfigError(f"env ({kind}) is missing {exc.args[0]!r}") from exc
    except (ValueError, TypeError, OSError) as exc:
        raise ConfigError(f"env ({kind}): {exc}") from exc


def _z_box(m, n, sl, sh, al, ah):
    lo = np.concatenate([np.broadcast_to(np.asarray(sl, float), (m,)), np.broadcast_to(np.asarray(al, float), (n,))])
    hi = np.concatenate([np.broadcast_to(np.asarray(sh, float), (m,)), np.broadcast_to(np.asarray(ah, float), (n,))])
    return lo, hi


def _kernels(cfg: ExperimentConfig, m, n, sl, sh, al, ah):
    try:
        kR = from_dict(cfg.kernels["reward"])
        kP = from_dict(cfg.kernels["transition"])
    except (KernelError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad kernel spec: {exc}") from exc
    if kR.dim != m + n or kP.dim != m + n + 1:
        raise ConfigError(f"kernel dims ({kR.dim}, {kP.dim}) inconsistent with m={m}, n={n}")
    lo, hi = _z_box(m, n, sl, sh, al, ah)
    return bind_box(kR, lo, hi), bind_box(kP, np.append(lo, 0.0), np.append(hi, m - 1))


def _auto_norms(env, grid: Grid, kR, kP):
    """RKHS norms of the min-norm interpolants of the true means on the planning grid."""
    if isinstance(env, RkhsEnv):
        return env.reward_fn.rkhs_norm, env.transition_fn.rkhs_norm
    Z = grid.z_points()
    b_r = min_norm_interpolant(kR, Z, env.oracle_mean_reward(Z)).rkhs_norm
    b_p = min_norm_interpolant(kP, indexed_points(Z, env.m), env.oracle_mean_transition(Z).reshape(-1)).rkhs_norm
    return b_r, b_p


def build(cfg: ExperimentConfig, env_name: str = "", learner: bool | None = None) -> Setup:
    """Env, planning grid and learner settings for one env of the config.

    Learner settings are built when ``learner`` is true, or by default when a
    GP agent is listed.
    """
    env = build_env(cfg, env_name)
    g = cfg.grid
    grid = Grid.for_env(env, g.get("state_res", 21), g.get("action_res", 11))
    if learner is None:
        learner = any(a in GP_AGENTS for a in cfg.agents)
    if not learner:
        return Setup(env, grid, None)
    if isinstance(env, TabularEnv) and cfg.kernels is None:
        kR, kP = tabular_as_kernel(env)
    else:
        kR, kP = _kernels(cfg, env.m, env.n, env.state_low, env.state_high, env.action_low, env.action_high)
    c = dict(cfg.confidence)
    b_r, b_p = c.get("B_R", "auto"), c.get("B_P", "auto")
    if b_r == "auto" or b_p == "auto":
        ar, ap = _auto_norms(env, grid, kR, kP)
        b_r = ar if b_r == "auto" else b_r
        b_p = ap if b_p == "auto" else b_p
    L = c.get("L", "auto")
    if L == "auto":
        if not isinstance(env, LqrEnv):
            raise ConfigError("confidence.L: 'auto' is only available for LQR envs")
        L = lqr_lipschitz_bound(env)
    try:
        conf = ConfidenceConfig(
            B_R=float(max(b_r, 1e-12)),
            B_P=float(max(b_p, 1e-12)),
            sigma_R=float(c.get("sigma_R", env.sigma_R)),
            sigma_P=float(c.get("sigma_P", env.sigma_P)),
            delta=float(c.get("delta", 0.1)),
            H=env.H,
            m=env.m,
            L=float(L),
            mode=c.get("mode", "frequentist"),
            n=env.n,
            **{k: float(c[k]) for k in ("a_R", "b_R", "a_P", "b_P", "c1", "c2") if k in c},
        )
    except ConfidenceError as exc:
        raise ConfigError(str(exc)) from exc
    o, mig = cfg.agent_options, cfg.mig
    cache = mig.get("cache_dir")
    if cache is not None and not Path(cache).is_absolute():
        cache = str(cfg.base_dir / cache)
    try:
        acfg = AgentConfig(
            kR,
            kP,
            conf,
            lambda_R=o.get("lambda_R"),
            lambda_P=o.get("lambda_P"),
            mig_method=mig.get("method", "greedy-mesh"),
            mig_const=float(mig.get("const", 1.0)),
            mig_cache_dir=cache,
            transition_optimism=bool(o.get("transition_optimism", False)),
            clip_factor=float(o.get("clip_factor", 10.0)),
            record_timing=cfg.timing,
        )
    except Exception as exc:
        raise ConfigError(str(exc)) from exc
    return Setup(env, grid, acfg)


# -- CSV ---------------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_records(path, records: list[EpisodeRecord]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EpisodeRecord.columns())
        for r in records:
            w.writerow([_fmt(v) for v in r.row()])
    tmp.replace(path)


def read_records(path) -> list[EpisodeRecord]:
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != EpisodeRecord.columns():
            raise ValueError(f"{path}: unexpected header {header}")
        return [EpisodeRecord(int(row[0]), *[float(x) for x in row[1:]]) for row in reader]


def _write_rows(path, header, rows):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in r])
    tmp.replace(path)


def _read_dicts(path):
    with open(Path(path), newline="") as fh:
        return list(csv.DictReader(fh))


# -- growth fit ----------------------------------------------------------------------------


def fit_growth_exponent(cumulative_regret, n_boot: int = 200, seed: int = 0) -> tuple[float, tuple[float, float]]:
    """Slope of ``ln R`` against ``ln T`` over the second half of the episodes.

    Nonpositive entries are dropped; with fewer than two usable points the
    series is treated as flat (``p = 0``).  The interval is the 2.5/97.5
    percentile range of a pairs bootstrap with ``n_boot`` resamples.
    """
    R = np.asarray(cumulative_regret, dtype=float)
    T = np.arange(1, len(R) + 1, dtype=float)
    half = len(R) // 2
    R, T = R[half:], T[half:]
    keep = R > 0
    x, y = np.log(T[keep]), np.log(R[keep])
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0, (0.0, 0.0)
    p = float(np.polyfit(x, y, 1)[0])
    rng = stream(seed, "bootstrap")
    slopes = []
    for _ in range(n_boot):
        idx = rng.integers(0, len(x), len(x))
        xb = x[idx]
        if np.ptp(xb) == 0:
            continue
        slopes.append(np.polyfit(xb, y[idx], 1)[0])
    if not slopes:
        return p, (p, p)
    lo, hi = np.percentile(slopes, [2.5, 97.5])
    return p, (float(lo), float(hi))


# -- sweep ---------------------------------------------------------------------------------


@dataclass
class RunSummary:
    """Summary rows (with an ``env`` key, empty for single-env configs) and failed cells."""

    rows: list[dict]
    failures: list[tuple[str, str, int, str]]
    out_dir: Path
    skipped: int = 0


def _cell_paths(out_dir: Path, agent: str, seed: int):
    return out_dir / f"{agent}_seed{seed}.csv", out_dir / f"{agent}_seed{seed}.coverage.csv"


def env_dir(cfg: ExperimentConfig, env_name: str = "") -> Path:
    """Output directory of one env: the output dir itself, or a subdirectory per named env."""
    return cfg.output_dir / env_name if env_name else cfg.output_dir


def run_cell(cfg: ExperimentConfig, agent: str, seed: int, env_name: str = "") -> None:
    """Run one (agent, seed) cell and write its CSVs."""
    setup = build(cfg, env_name, learner=agent in GP_AGENTS)
    main, side = _cell_paths(env_dir(cfg, env_name), agent, seed)
    if agent in GP_AGENTS:
        diag: list = []
        fn = run_gp_ucrl if agent == "gp_ucrl" else run_psrl
        recs = fn(setup.env, setup.agent_cfg, setup.grid, cfg.episodes, seed, diagnostics=diag)
        _write_rows(
            side,
            COVERAGE_COLUMNS,
            [(d["episode"], d["reward_viol"], d["trans_viol"], d["planned_value"]) for d in diag],
        )
    else:
        recs = run_baseline(setup.env, agent, setup.grid, cfg.episodes, seed, record_timing=cfg.timing)
    write_records(main, recs)


def _safe_cell(args):
    cfg, env_name, agent, seed = args
    try:
        run_cell(cfg, agent, seed, env_name)
        return env_name, agent, seed, None
    except Exception as exc:  # per-cell failures must not stop the sweep
        return env_name, agent, seed, f"{type(exc).__name__}: {exc}"


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("KMDP_THREADS", "1")))
    except ValueError:
        return 1


def summarize_cell(out_dir: Path, agent: str, seed: int, boot_seed: int = 0) -> dict:
    """Summary row computed only from the persisted cell CSVs."""
    main, side = _cell_paths(out_dir, agent, seed)
    recs = read_records(main)
    cum = [r.cum_regret for r in recs]
    p, (lo, hi) = fit_growth_exponent(cum, seed=boot_seed) if cum else (float("nan"), (float("nan"), float("nan")))
    viol = float("nan")
    if side.exists():
        rows = _read_dicts(side)
        if rows:
            viol = float(np.mean([float(r["reward_viol"]) > 0 or float(r["trans_viol"]) > 0 for r in rows]))
    return {
        "agent": agent,
        "seed": seed,
        "final_regret": cum[-1] if cum else 0.0,
        "growth_p": p,
        "growth_ci_lo": lo,
        "growth_ci_hi": hi,
        "coverage_viol": viol,
        "secs": sum(r.wall_ms for r in recs) / 1e3,
    }


def run_experiment(cfg: ExperimentConfig, force: bool = False) -> RunSummary:
    """Run every (env, agent, seed) cell, then rebuild each ``summary.csv`` from the cell files.

    Cells whose CSV already exists are skipped unless ``force``.  An env that
    fails to build marks all its cells failed; if every env fails the config
    itself is rejected.
    """
    todo, skipped, failures = [], 0, []
    broken = {}
    for name, _ in cfg.envs:
        if not cfg.agents:
            continue
        try:
            build(cfg, name)
        except (ConfigError, ArithmeticError) as exc:
            broken[name] = f"{type(exc).__name__}: {exc}"
    if cfg.agents and len(broken) == len(cfg.envs):
        raise ConfigError("; ".join(broken.values()))
    for name, _ in cfg.envs:
        out = env_dir(cfg, name)
        out.mkdir(parents=True, exist_ok=True)
        for agent in cfg.agents:
            for seed in cfg.seeds:
                if name in broken:
                    failures.append((name, agent, seed, broken[name]))
                elif not force and _cell_paths(out, agent, seed)[0].exists():
                    skipped += 1
                else:
                    todo.append((cfg, name, agent, seed))
    workers = min(_threads(), max(1, len(todo)))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_safe_cell, todo))
    else:
        results = [_safe_cell(t) for t in todo]
    failures += [(e, a, s, msg) for e, a, s, msg in results if msg is not None]
    for e, a, s, msg in failures:
        log.error("cell %s%s seed %d failed: %s", f"{e}/" if e else "", a, s, msg)
    failed = {(e, a, s) for e, a, s, _ in failures}
    rows = []
    for name, _ in cfg.envs:
        out = env_dir(cfg, name)
        env_rows = []
        for agent in cfg.agents:
            for seed in cfg.seeds:
                if (name, agent, seed) in failed or not _cell_paths(out, agent, seed)[0].exists():
                    continue
                env_rows.append(summarize_cell(out, agent, seed))
        _write_rows(out / "summary.csv", SUMMARY_COLUMNS, [[r[c] for c in SUMMARY_COLUMNS] for r in env_rows])
        rows += [{"env": name, **r} for r in env_rows]
    return RunSummary(rows, failures, cfg.output_dir, skipped)


def read_summary(path) -> list[dict]:
    rows = _read_dicts(path)
    for r in rows:
        r["seed"] = int(r["seed"])
        for c in SUMMARY_COLUMNS[2:]:
            r[c] = float(r[c])
    return rows


# -- coverage Monte Carlo --------------------------------------------------------------------


@dataclass(frozen=True)
class CoverageResult:
    runs: int
    delta: float
    reward_rate: float
    transition_rate: float
    reward_pointwise: float
    transition_pointwise: float
    std_error: float

    @property
    def threshold(self) -> float:
        return self.delta + 2.0 * self.std_error

    @property
    def passed(self) -> bool:
        return self.reward_rate <= self.threshold and self.transition_rate <= self.threshold


def run_coverage(cfg: ExperimentConfig, runs: int | None = None, zero_beta: bool = False) -> CoverageResult:
    """Monte-Carlo check of the reward band and transition ball.

    Each run draws fresh RKHS ground truths with norms ``B_R`` and ``B_P``,
    observes them with Gaussian noise at ``H`` uniform random points per
    episode, and before every episode tests the bands at all check-grid
    points.  A run counts as a violation if any point fails in any episode;
    the pointwise rates average over points and episodes instead.
    """
    cv = cfg.coverage
    runs = int(cv.get("runs", 200) if runs is None else runs)
    if runs < 1:
        raise ConfigError("coverage runs must be >= 1")
    setup = build(cfg, cfg.envs[0][0], learner=True)
    env, acfg = setup.env, setup.agent_cfg
    conf = acfg.confidence
    m, H = env.m, env.H
    kR, kP = acfg.kernel_R, acfg.kernel_P
    lo, hi = env.z_low, env.z_high
    lr, lp = acfg.lambdas()
    episodes = int(cv.get("episodes", 10))
    res = int(cv.get("check_res", 9))
    check = Grid.uniform(env.state_low, env.state_high, res, env.action_low, env.action_high, res).z_points()
    check_i = indexed_points(check, m)
    mesh = candidate_mesh(kR, lo, hi, size=256)
    mesh_p = candidate_mesh(kP, np.append(lo, 0), np.append(hi, m - 1), size=256)
    g_r = np.concatenate([[0.0], mig_schedule(kR, mesh, (episodes - 1) * H, lr, replacement=True)])
    g_p = np.concatenate([[0.0], mig_schedule(kP, mesh_p, (episodes - 1) * H * m, lp, replacement=True)])
    n_centers = int(cv.get("n_centers", 8))
    master = int(cv.get("seed", 0))
    bad_r = bad_p = 0
    pw_r, pw_p = [], []
    for i in range(runs):
        rng = stream(master, f"coverage-{i}")
        f_r = rkhs_sample(kR, n_centers, conf.B_R, rng, lo, hi)
        f_p = rkhs_sample(kP, n_centers, conf.B_P, rng, np.append(lo, 0), np.append(hi, m - 1))
        truth_r = f_r(check)
        truth_p = f_p(check_i).reshape(-1, m)
        rp = GPPosterior(kR, lr).with_grid(check)
        tp = TransitionPosterior(kP, m, lp).with_grid(check)
        vr = vp = False
        for l in range(1, episodes + 1):
            t = (l - 1) * H
            br, bp = betas(conf, l, g_r[t], g_p[t * m]) if conf.mode == "frequentist" else betas(conf, l)
            if zero_beta:
                br = bp = 0.0
            mu, var = rp.grid_predict()
            mr = reward_violations(mu, np.sqrt(var), br, truth_r)
            mu_p, sd_p = tp.grid_predict()
            mp = transition_violations(mu_p, sd_p, bp, truth_p)
            pw_r.append(mr.mean())
            pw_p.append(mp.mean())
            vr |= bool(mr.any())
            vp |= bool(mp.any())
            Z = random_points(kR, H, rng, lo, hi)
            y = f_r(Z) + conf.sigma_R * rng.standard_normal(H)
            s2 = f_p(indexed_points(Z, m)).reshape(H, m) + conf.sigma_P * rng.standard_normal((H, m))
            rp = rp.update(Z, y)
            tp = tp.update(Z, s2)
        bad_r += vr
        bad_p += vp
    se = math.sqrt(conf.delta * (1 - conf.delta) / runs)
    return CoverageResult(
        runs, conf.delta, bad_r / runs, bad_p / runs, float(np.mean(pw_r)), float(np.mean(pw_p)), se
    )
