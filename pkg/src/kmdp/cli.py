"""Command-line entry point: ``kmdp run | mig | coverage | selftest``.

Standard output carries data (CSV or key=value lines); logs go to standard
error.  Exit codes: 0 success, 1 config or usage error, 2 partial failure
(``run``) or failed check (``coverage``, ``selftest``).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .harness import SUMMARY_COLUMNS, ConfigError, ExperimentConfig, run_coverage, run_experiment
from .infogain import MigInputError, candidate_mesh, mig_schedule
from .kernels import KernelError, from_dict

log = logging.getLogger("kmdp")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _fmt(v):
    return v if isinstance(v, str) else (str(v) if isinstance(v, int) else repr(float(v)))


def cmd_run(args) -> int:
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.seeds:
            cfg.seeds = [int(s) for s in args.seeds.split(",")]
        if args.out:
            cfg.output_dir = Path(args.out)
        if args.timing:
            cfg.timing = True
        summary = run_experiment(cfg, force=args.force)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    multi = len(cfg.envs) > 1
    cols = (["env"] if multi else []) + SUMMARY_COLUMNS
    print(",".join(cols))
    for r in summary.rows:
        print(",".join(_fmt(r[c]) for c in cols))
    if summary.skipped:
        log.info("%d existing cells reused (use --force to rerun)", summary.skipped)
    return 2 if summary.failures else 0


def _load_kernel(text: str):
    p = Path(text)
    raw = p.read_text() if p.is_file() else text
    try:
        data = json.loads(raw)
    except json.JSONDecodeError:
        data = yaml.safe_load(raw)
    return from_dict(data)


def cmd_mig(args) -> int:
    try:
        if not args.lam > 0:
            raise MigInputError("--lambda must be positive")
        if args.t < 0:
            raise MigInputError("--t must be nonnegative")
        k = _load_kernel(args.kernel)
        C = candidate_mesh(k, args.low, args.high, size=args.mesh, kind=args.mesh_kind, seed=args.seed)
        sched = mig_schedule(k, C, args.t, args.lam, replacement=args.replacement)
    except (MigInputError, KernelError, yaml.YAMLError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print("t,gamma")
    for t, g in enumerate(sched, start=1):
        print(f"{t},{g!r}")
    return 0


def cmd_coverage(args) -> int:
    if args.runs is not None and args.runs < 1:
        print("error: --runs must be >= 1", file=sys.stderr)
        return 1
    try:
        cfg = ExperimentConfig.load(args.config)
        res = run_coverage(cfg, args.runs, zero_beta=args.zero_beta)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for key in ("runs", "delta", "reward_rate", "transition_rate", "reward_pointwise", "transition_pointwise", "std_error"):
        print(f"{key}={_fmt(getattr(res, key))}")
    print(f"threshold={res.threshold!r}")
    print(f"pass={int(res.passed)}")
    return 0 if res.passed else 2


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest(args.seed)
    for name, ok in results.items():
        print(f"{name}={'pass' if ok else 'fail'}")
    return 0 if all(results.values()) else 2


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="kmdp", description="GP-UCRL / PSRL experiments on kernelized episodic MDPs.")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run an experiment config and print the summary CSV")
    r.add_argument("config")
    r.add_argument("--force", action="store_true", help="recompute cells whose CSV already exists")
    r.add_argument("--seeds", help="comma-separated seed list overriding the config")
    r.add_argument("--out", help="output directory overriding the config")
    r.add_argument("--timing", action="store_true", help="record wall-clock columns (breaks byte-identical reruns)")
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("mig", help="print a greedy MIG schedule as CSV")
    m.add_argument("kernel", help="kernel record as inline JSON/YAML or a file path")
    m.add_argument("--t", type=int, default=100)
    m.add_argument("--lambda", dest="lam", type=float, default=1.0)
    m.add_argument("--mesh", type=int, default=512, help="candidate points per index combination")
    m.add_argument("--mesh-kind", choices=("grid", "sobol"), default="grid")
    m.add_argument("--low", type=float, default=0.0)
    m.add_argument("--high", type=float, default=1.0)
    m.add_argument("--seed", type=int, default=0, help="Sobol scrambling seed")
    m.add_argument("--replacement", action="store_true", help="allow repeated candidates")
    m.set_defaults(func=cmd_mig)

    c = sub.add_parser("coverage", help="Monte-Carlo coverage of the confidence sets")
    c.add_argument("config")
    c.add_argument("--runs", type=int)
    c.add_argument("--zero-beta", action="store_true", help="debug: force both widths to 0")
    c.set_defaults(func=cmd_coverage)

    s = sub.add_parser("selftest", help="fast invariant checks")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
