"""Benchmark suites: initial solutions, anytime convergence and ablations.

Determinism: every trial derives its seeds from ``SeedSequence([master, i])``
and every variant in a trial sees the same environment, start, goal and
planner seed. Deterministic outputs (reports, ``metrics.csv``) never contain
wall-clock values; those go to ``timing.csv`` only.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envgen import EnvSpec, generate, preset, sample_problem
from .errors import ContractViolation, InvalidProblem, NoFreeSpace
from .fixtures import Problem, near_goal_fixture
from .planners import BASELINES, EPISODIC, STAR, PlannerParams, PlannerReport, plan

log = logging.getLogger(__name__)

NULL = "null"
METRIC_COLUMNS = ["variant", "trials", "successes", "SUC", "COL", "LEN", "ITER"]
TIMING_COLUMNS = ["variant", "TIME", "ACC", "ACC_pairs"]
ANYTIME_COLUMNS = ["variant", "threshold", "reached", "runs", "extra_checks", "extra_iterations"]
# extra_* means are over runs that reached every threshold
ANYTIME_TIMING_COLUMNS = ["variant", "threshold", "extra_time"]
ABLATION_COLUMNS = ["variant", "ablation", "SUC_full", "SUC_ablation", "dSUC", "COL_full", "COL_ablation"]
ABLATION_TIMING_COLUMNS = ["variant", "ablation", "TIME_full_ms", "TIME_ablation_ms", "dTIME_ms", "dTIME_median_rel"]

ABLATIONS = {
    "NoBisection": {"no_bisection": True},
    "NoBisection&DownSample": {"no_bisection": True, "downsample": True},
    "DownSample": {"downsample": True},
    "HalfStepJump": {"half_step_jump": True},
    "NoJump": {"no_jump": True},
    "2+L_max": {"l_max_delta": True},
}
PAIRED_BASELINE = {"errt": "rrt", "errt_star": "rrt_star", "errt_connect": "rrt_connect"}


@dataclass
class BenchConfig:
    suite: str = "initial"
    env: dict = field(default_factory=lambda: {"preset": "desk2d"})
    fixture: str | None = None
    trials: int = 10
    variants: list = field(default_factory=lambda: ["rrt", "errt"])
    params: dict = field(default_factory=dict)
    variant_params: dict = field(default_factory=dict)
    master_seed: int = 0
    min_clearance: float = 0.5
    workers: int = 1
    thresholds: list = field(default_factory=lambda: [1.10, 1.05, 1.03])
    runs_per_env: int = 1
    reference: dict = field(default_factory=lambda: {"variant": "rrt_star", "max_iterations": 20000,
                                                     "time_limit": None})
    ablations: list = field(default_factory=lambda: list(ABLATIONS))

    def __post_init__(self):
        if self.suite not in ("initial", "anytime", "ablation"):
            raise ContractViolation(f"unknown suite {self.suite!r}")
        if self.trials < 1:
            raise ContractViolation("trials must be at least 1")
        if self.runs_per_env < 1:
            raise ContractViolation("runs_per_env must be at least 1")
        for v in self.variants:
            PlannerParams(variant=v)  # validates the name
        for a in self.ablations:
            if a not in ABLATIONS:
                raise ContractViolation(f"unknown ablation {a!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ContractViolation(f"unknown bench config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "BenchConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def params_for(self, variant: str, seed: int, **extra) -> PlannerParams:
        d = {**self.params, **self.variant_params.get(variant, {}), **extra, "variant": variant, "seed": int(seed)}
        return PlannerParams.from_dict(d)


def trial_seeds(master: int, trial: int) -> tuple[int, int, int]:
    """(environment seed, problem seed, planner seed) for one trial."""
    s = np.random.SeedSequence([int(master), int(trial)]).generate_state(3, dtype=np.uint32)
    return int(s[0]), int(s[1]), int(s[2])


def env_spec(cfg: BenchConfig, seed: int) -> EnvSpec:
    d = dict(cfg.env)
    name = d.pop("preset", None)
    if name is not None:
        return preset(name, seed=seed, **d)
    return EnvSpec.from_dict({**d, "seed": seed})


def make_problem(cfg: BenchConfig, trial: int) -> Problem:
    env_seed, prob_seed, _ = trial_seeds(cfg.master_seed, trial)
    if cfg.fixture == "near_goal":
        return near_goal_fixture(env_seed)
    if cfg.fixture is not None:
        raise ContractViolation(f"unknown fixture {cfg.fixture!r}")
    env = generate(env_spec(cfg, env_seed))
    q_s, q_g = sample_problem(env, cfg.min_clearance, np.random.default_rng(prob_seed))
    return Problem(env, q_s, q_g, f"trial_{trial}")


_WARM = False


def warm_up() -> None:
    """Compile every jitted kernel once per process so TIME excludes JIT cost."""
    global _WARM
    if _WARM:
        return
    _WARM = True
    from .fixtures import wall_with_gap
    for dim in (2, 3):
        env = generate(preset("desk2d" if dim == 2 else "desk3d", seed=0, obstacle_count_mean=5))
        q_s, q_g = sample_problem(env, 0.5, np.random.default_rng(0))
        for v in BASELINES + EPISODIC:
            plan(env, q_s, q_g, PlannerParams(variant=v, time_limit=None, max_iterations=30))
    p = wall_with_gap()
    plan(p.env, p.q_start, p.q_goal, PlannerParams(variant="errt", time_limit=None, max_iterations=30))


def _run(problem: Problem, params: PlannerParams) -> PlannerReport:
    warm_up()
    t0 = time.perf_counter()
    rep = plan(problem.env, problem.q_start, problem.q_goal, params)
    rep.wall_time = time.perf_counter() - t0
    rep.trees = []
    return rep


def _failed_report(params: PlannerParams, status: str) -> PlannerReport:
    return PlannerReport(params.variant, params.seed, False, status, 0.0, 0, 0, [], None, 0,
                         params=params.to_dict())


def _mean(xs) -> float | None:
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else None


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return NULL
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def _write_csv(path: Path, columns: list, rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def _write_report(out_dir: Path, name: str, rep: PlannerReport, problem: Problem) -> None:
    d = rep.to_dict(include_timing=False)
    d["problem"] = {"q_start": problem.q_start.tolist(), "q_goal": problem.q_goal.tolist(), "name": problem.name}
    (out_dir / "reports").mkdir(parents=True, exist_ok=True)
    (out_dir / "reports" / f"{name}.json").write_text(json.dumps(d, sort_keys=True, indent=1) + "\n")


# ---------------------------------------------------------------------------
# initial-solution suite
# ---------------------------------------------------------------------------

def _initial_trial(args):
    cfg, trial = args
    _, _, plan_seed = trial_seeds(cfg.master_seed, trial)
    out = {}
    try:
        problem = make_problem(cfg, trial)
    except (NoFreeSpace, InvalidProblem) as exc:
        log.warning("trial %d unusable: %s", trial, exc)
        return trial, None, {v: _failed_report(cfg.params_for(v, plan_seed), "unreachable") for v in cfg.variants}
    for v in cfg.variants:
        out[v] = _run(problem, cfg.params_for(v, plan_seed))
    return trial, problem, out


def _map(fn, jobs, workers: int):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


@dataclass
class MetricsTable:
    rows: list
    timing: list

    def row(self, variant: str) -> dict:
        return next(r for r in self.rows if r["variant"] == variant)

    def timing_row(self, variant: str) -> dict:
        return next(r for r in self.timing if r["variant"] == variant)


def metrics_table(results: dict, variants: list) -> MetricsTable:
    """Aggregate per-trial reports; means over successful trials only.

    ``results`` maps trial -> {variant: report}. ACC is the paired
    baseline's mean TIME over the mean TIME of the variant, on trials where
    both succeeded.
    """
    rows, timing = [], []
    trials = sorted(results)
    for v in variants:
        reps = [results[t][v] for t in trials]
        ok = [r for r in reps if r.success]
        rows.append({
            "variant": v, "trials": len(reps), "successes": len(ok),
            "SUC": len(ok) / len(reps) if reps else None,
            "COL": _mean([r.collision_checks for r in ok]),
            "LEN": _mean([r.path_length for r in ok]),
            "ITER": _mean([r.iterations for r in ok]),
        })
        acc, pairs = None, 0
        base = PAIRED_BASELINE.get(v)
        if base in variants:
            both = [t for t in trials if results[t][v].success and results[t][base].success]
            pairs = len(both)
            if both:
                tv = np.mean([results[t][v].wall_time for t in both])
                tb = np.mean([results[t][base].wall_time for t in both])
                acc = float(tb / tv) if tv > 0 else None
        timing.append({"variant": v, "TIME": _mean([r.wall_time for r in ok]), "ACC": acc, "ACC_pairs": pairs})
    return MetricsTable(rows, timing)


def run_initial_solution_suite(cfg: BenchConfig, out_dir) -> MetricsTable:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    done = _map(_initial_trial, [(cfg, i) for i in range(cfg.trials)], cfg.workers)
    results = {}
    for trial, problem, reps in done:
        results[trial] = reps
        for v, rep in reps.items():
            if problem is not None:
                _write_report(out_dir, f"trial_{trial:04d}_{v}", rep, problem)
    table = metrics_table(results, cfg.variants)
    _write_csv(out_dir / "metrics.csv", METRIC_COLUMNS, table.rows)
    _write_csv(out_dir / "timing.csv", TIMING_COLUMNS, table.timing)
    return table


# ---------------------------------------------------------------------------
# anytime suite
# ---------------------------------------------------------------------------

def extra_cost_to_threshold(trace: list, reference: float, threshold: float):
    """(extra checks, extra iterations, extra seconds) from the first solution
    until cost <= threshold * reference, or None if never reached."""
    if not trace:
        return None
    it0, ch0, t0, _ = trace[0]
    for it, ch, t, c in trace:
        if c <= threshold * reference * (1 + 1e-12):
            return ch - ch0, it - it0, t - t0
    return None


def _anytime_env(args):
    cfg, trial = args
    env_seed, prob_seed, plan_seed = trial_seeds(cfg.master_seed, trial)
    try:
        problem = make_problem(cfg, trial)
    except (NoFreeSpace, InvalidProblem) as exc:
        log.warning("environment %d unusable: %s", trial, exc)
        return trial, None, None, {}
    ref_d = {**cfg.params, **cfg.reference, "anytime": True, "seed": plan_seed}
    ref_rep = _run(problem, PlannerParams.from_dict(ref_d))
    if not ref_rep.success:
        log.warning("reference run failed on environment %d; excluded", trial)
        return trial, problem, None, {}
    runs = {}
    for v in cfg.variants:
        runs[v] = []
        for k in range(cfg.runs_per_env):
            seed = int(np.random.SeedSequence([cfg.master_seed, trial, k + 1]).generate_state(1)[0])
            runs[v].append(_run(problem, cfg.params_for(v, seed, anytime=True)))
    best_seen = min([ref_rep.cost_trace[-1][3]] + [r.cost_trace[-1][3] for rs in runs.values() for r in rs if r.success])
    return trial, problem, best_seen, runs


def run_anytime_suite(cfg: BenchConfig, out_dir) -> dict:
    """Extra effort after the first solution to reach each cost threshold.

    The reference cost per environment is the best cost found by the long
    reference run or by any trial on that environment.
    """
    for v in cfg.variants:
        if v not in STAR:
            raise ContractViolation(f"anytime suite needs cost-refining variants, got {v!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    done = _map(_anytime_env, [(cfg, i) for i in range(cfg.trials)], cfg.workers)
    rows, trows = [], []
    curves = {}
    for v in cfg.variants:
        per_run = []
        for trial, problem, ref, runs in done:
            if ref is None:
                continue
            for rep in runs[v]:
                per_run.append([extra_cost_to_threshold(rep.cost_trace, ref, t) if rep.success else None
                                for t in cfg.thresholds])
        # means over runs that reached every threshold, so curves are monotone
        common = [r for r in per_run if all(e is not None for e in r)]
        for j, thr in enumerate(cfg.thresholds):
            row = {"variant": v, "threshold": thr,
                   "reached": sum(r[j] is not None for r in per_run), "runs": len(per_run),
                   "extra_checks": _mean([r[j][0] for r in common]),
                   "extra_iterations": _mean([r[j][1] for r in common])}
            trow = {"variant": v, "threshold": thr, "extra_time": _mean([r[j][2] for r in common])}
            rows.append(row)
            trows.append(trow)
            curves[(v, thr)] = {**row, "extra_time": trow["extra_time"], "common": len(common)}
    for trial, problem, ref, runs in done:
        for v, reps in runs.items():
            for k, rep in enumerate(reps):
                _write_report(out_dir, f"env_{trial:04d}_{v}_{k}", rep, problem)
    _write_csv(out_dir / "anytime.csv", ANYTIME_COLUMNS, rows)
    _write_csv(out_dir / "anytime_timing.csv", ANYTIME_TIMING_COLUMNS, trows)
    return curves


# ---------------------------------------------------------------------------
# ablation suite
# ---------------------------------------------------------------------------

def _ablation_trial(args):
    cfg, trial = args
    _, _, plan_seed = trial_seeds(cfg.master_seed, trial)
    try:
        problem = make_problem(cfg, trial)
    except (NoFreeSpace, InvalidProblem) as exc:
        log.warning("trial %d unusable: %s", trial, exc)
        return trial, None, {}
    out = {}
    for v in cfg.variants:
        out[(v, "full")] = _run(problem, cfg.params_for(v, plan_seed))
        for a in cfg.ablations:
            out[(v, a)] = _run(problem, cfg.params_for(v, plan_seed, **ABLATIONS[a]))
    return trial, problem, out


def run_ablation_suite(cfg: BenchConfig, out_dir) -> dict:
    """Each ablation against the full-feature run on paired seeds."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    done = [d for d in _map(_ablation_trial, [(cfg, i) for i in range(cfg.trials)], cfg.workers) if d[1] is not None]
    rows, trows, table = [], [], {}
    for v in cfg.variants:
        full = [d[2][(v, "full")] for d in done]
        for a in cfg.ablations:
            abl = [d[2][(v, a)] for d in done]
            suc_f = float(np.mean([r.success for r in full])) if full else None
            suc_a = float(np.mean([r.success for r in abl])) if abl else None
            tf = _mean([r.wall_time for r in full if r.success])
            ta = _mean([r.wall_time for r in abl if r.success])
            rel = [ra.wall_time / rf.wall_time - 1.0 for rf, ra in zip(full, abl)
                   if rf.success and ra.success and rf.wall_time > 0]
            row = {"variant": v, "ablation": a, "SUC_full": suc_f, "SUC_ablation": suc_a,
                   "dSUC": None if suc_f is None else suc_a - suc_f,
                   "COL_full": _mean([r.collision_checks for r in full if r.success]),
                   "COL_ablation": _mean([r.collision_checks for r in abl if r.success])}
            trow = {"variant": v, "ablation": a,
                    "TIME_full_ms": None if tf is None else 1e3 * tf,
                    "TIME_ablation_ms": None if ta is None else 1e3 * ta,
                    "dTIME_ms": None if tf is None or ta is None else 1e3 * (ta - tf),
                    "dTIME_median_rel": float(np.median(rel)) if rel else None}
            rows.append(row)
            trows.append(trow)
            table[(v, a)] = {**row, **trow, "pairs": [(rf, ra) for rf, ra in zip(full, abl)]}
    for trial, problem, out in done:
        for (v, a), rep in out.items():
            _write_report(out_dir, f"trial_{trial:04d}_{v}_{a.replace('&', '_').replace('+', 'p')}", rep, problem)
    _write_csv(out_dir / "ablation.csv", ABLATION_COLUMNS, rows)
    _write_csv(out_dir / "ablation_timing.csv", ABLATION_TIMING_COLUMNS, trows)
    return table


SUITES = {"initial": run_initial_solution_suite, "anytime": run_anytime_suite, "ablation": run_ablation_suite}


def default_config(suite: str) -> BenchConfig:
    """Desk-scale defaults with iteration budgets so reruns are reproducible."""
    budget = {"time_limit": None, "max_iterations": 20000}
    if suite == "initial":
        return BenchConfig(suite="initial", variants=list(BASELINES + EPISODIC), params=budget)
    if suite == "anytime":
        return BenchConfig(suite="anytime", env={"preset": "anytime2d"}, trials=20, runs_per_env=5,
                           variants=["rrt_star", "errt_star"],
                           params={"time_limit": None, "max_iterations": 3000})
    return BenchConfig(suite="ablation", variants=list(EPISODIC), params=budget)
