"""Compare the numba and numpy backends on the hot kernels.

Each backend runs in its own interpreter because the switch is read at import
time. Numba timings exclude compilation (one warm-up call first).

    python benchmarks/bench_kernels.py [--repeat 5]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

WORKER = r"""
import json, sys, timeit
import numpy as np
from errt import backend
from errt.envgen import generate, preset, sample_problem
from errt.geometry import segment_check
from errt.planners import PlannerParams, plan
from errt.spline import CubicBSpline, resample_equidistant
from errt.tree import SearchTree

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
env = generate(preset("desk2d", seed=1))
P = env.lo + rng.random((20000, 2)) * (env.hi - env.lo)
A = env.lo + rng.random((200, 2)) * (env.hi - env.lo)
B = A + rng.normal(size=(200, 2))
tree = SearchTree(np.zeros(2), capacity=4096)
for i in range(3000):
    tree.insert(rng.random(2) * 30, i)
Q = rng.random((500, 2)) * 30
ctrl = [np.cumsum(rng.normal(size=(8, 2)), axis=0) for _ in range(50)]
q_s, q_g = sample_problem(env, 0.5, np.random.default_rng(3))

def points():
    env.points_in_collision(P)

def segments():
    for a, b in zip(A, B):
        segment_check(a, b, env, 0.05)

def nearest():
    for q in Q:
        tree.nearest(q)

def splines():
    for c in ctrl:
        resample_equidistant(CubicBSpline(c), 0.25)

def planning():
    for s in range(3):
        plan(env, q_s, q_g, PlannerParams(variant="errt", time_limit=None, max_iterations=5000, seed=s))

cases = {"points_in_collision x20000": points, "segment_check x200": segments,
         "tree.nearest x500 (n=3000)": nearest, "spline resample x50": splines,
         "errt plan desk2d x3": planning}
out = {"backend": backend()}
for name, fn in cases.items():
    fn()
    out[name] = min(timeit.repeat(fn, number=1, repeat=repeat))
print(json.dumps(out))
"""


def run(disable: bool, repeat: int) -> dict:
    env = dict(os.environ)
    if disable:
        env["ERRT_DISABLE_NUMBA"] = "1"
    else:
        env.pop("ERRT_DISABLE_NUMBA", None)
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env,
                         capture_output=True, text=True)
    if res.returncode:
        sys.exit(res.stderr)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    fast = run(False, args.repeat)
    slow = run(True, args.repeat)
    print(f"{'kernel':32s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name in fast:
        if name == "backend":
            continue
        a, b = fast[name], slow[name]
        print(f"{name:32s} {1e3 * a:10.2f} {1e3 * b:10.2f} {b / a:8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
