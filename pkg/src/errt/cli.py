"""Command line entry point: ``errt gen-env | plan | bench``.

Exit codes: 0 success, 1 planning failure, 2 invalid input.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench
from .envgen import PRESETS, EnvSpec, generate, preset, sample_problem
from .errors import ContractViolation, InvalidProblem, NoFreeSpace
from .geometry import Environment
from .planners import VARIANTS, PlannerParams, plan
from .render import render_svg

EXIT_OK, EXIT_FAIL, EXIT_INVALID = 0, 1, 2


class _Invalid(Exception):
    pass


def _read_json(path) -> dict:
    """Parse a JSON file, or inline JSON when the argument starts with ``{``."""
    try:
        text = path if str(path).lstrip().startswith("{") else Path(path).read_text()
        return json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        raise _Invalid(f"cannot read {path}: {exc}") from exc


def _vector(text: str | None, dim: int):
    if text is None:
        return None
    try:
        v = np.array([float(x) for x in text.split(",")])
    except ValueError as exc:
        raise _Invalid(f"bad configuration {text!r}") from exc
    if v.shape[0] != dim:
        raise _Invalid(f"configuration {text!r} must have {dim} components")
    return v


def cmd_gen_env(args) -> int:
    if args.spec in PRESETS:
        spec = preset(args.spec, seed=args.seed)
    else:
        d = _read_json(args.spec)
        d.pop("seed", None)
        spec = EnvSpec.from_dict({**d, "seed": args.seed})
    if args.dim is not None and spec.dim != args.dim:
        raise _Invalid(f"--dim {args.dim} disagrees with spec dimension {spec.dim}")
    env = generate(spec)
    env.save(args.out)
    print(f"wrote {args.out}: {len(env.obstacles)} obstacles, dim {env.dim}")
    return EXIT_OK


def cmd_plan(args) -> int:
    try:
        env = Environment.load(args.env)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise _Invalid(f"cannot load environment {args.env}: {exc}") from exc
    d = _read_json(args.params) if args.params else {}
    d.update(variant=args.planner, seed=args.seed)
    params = PlannerParams.from_dict(d)
    q_s, q_g = _vector(args.start, env.dim), _vector(args.goal, env.dim)
    if q_s is None or q_g is None:
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0xE11]))
        s, g = sample_problem(env, args.min_clearance, rng)
        q_s = s if q_s is None else q_s
        q_g = g if q_g is None else q_g
    rep = plan(env, q_s, q_g, params)
    out = rep.to_dict(include_timing=not args.no_timing)
    out["problem"] = {"q_start": q_s.tolist(), "q_goal": q_g.tolist()}
    Path(args.report).write_text(json.dumps(out, sort_keys=True, indent=1) + "\n")
    if args.svg:
        render_svg(env, args.svg, trees=rep.trees, path=rep.path if rep.success else None,
                   q_start=q_s, q_goal=q_g)
    length = "-" if rep.path_length is None else f"{rep.path_length:.3f}"
    print(f"{rep.variant}: {rep.status} checks={rep.collision_checks} iterations={rep.iterations} length={length}")
    return EXIT_OK if rep.success else EXIT_FAIL


def cmd_bench(args) -> int:
    if args.config:
        d = _read_json(args.config)
        d.setdefault("suite", args.suite)
        if d["suite"] != args.suite:
            raise _Invalid(f"config suite {d['suite']!r} does not match command {args.suite!r}")
        cfg = bench.BenchConfig.from_dict(d)
    else:
        cfg = bench.default_config(args.suite)
    if args.workers is not None:
        cfg.workers = args.workers
    if args.trials is not None:
        cfg.trials = args.trials
    bench.SUITES[args.suite](cfg, args.out_dir)
    print(f"{args.suite} suite written to {args.out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="errt", description="Episodic RRT planners and benchmarks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-env", help="generate a seeded environment")
    g.add_argument("--dim", type=int, choices=(2, 3))
    g.add_argument("--spec", required=True, help=f"JSON spec file or preset ({', '.join(PRESETS)})")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_env)

    pl = sub.add_parser("plan", help="run one planner on a saved environment")
    pl.add_argument("--env", required=True)
    pl.add_argument("--planner", required=True, choices=VARIANTS)
    pl.add_argument("--params", help="JSON planner parameters (file or inline object)")
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--report", required=True)
    pl.add_argument("--svg")
    pl.add_argument("--start", help="comma-separated start; sampled when omitted")
    pl.add_argument("--goal", help="comma-separated goal; sampled when omitted")
    pl.add_argument("--min-clearance", type=float, default=0.5)
    pl.add_argument("--no-timing", action="store_true", help="omit wall-clock fields from the report")
    pl.set_defaults(func=cmd_plan)

    b = sub.add_parser("bench", help="run a benchmark suite")
    b.add_argument("suite", choices=sorted(bench.SUITES))
    b.add_argument("--config", help="JSON bench config; defaults per suite otherwise")
    b.add_argument("--out-dir", required=True)
    b.add_argument("--workers", type=int)
    b.add_argument("--trials", type=int)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (_Invalid, ContractViolation, InvalidProblem, NoFreeSpace, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
