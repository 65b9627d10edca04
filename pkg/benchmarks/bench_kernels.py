"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 7] [--capacity 100000]

Each row reports the best-of-``repeat`` time per call for both backends and
the speed-up.  A final section times whole update steps per scheme, running
the fallback in a child process with ``LA3P_PURE_PYTHON=1``.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from la3p import approx, sum_tree
from la3p.approx import AdamState, Mlp, adam_step
from la3p.replay import ReplayBuffer


def best(fn, repeat: int) -> float:
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def tree_cases(backend: str, capacity: int, rng: np.random.Generator):
    tree = sum_tree.SumTree(capacity, backend)
    tree.load(rng.uniform(1.0, 5.0, capacity))
    idx = rng.integers(0, capacity, 64)
    pri = rng.uniform(1.0, 5.0, 64)
    buf = ReplayBuffer(capacity, 2, 1, backend=backend)
    n = capacity
    buf.extend(rng.normal(size=(n, 2)), rng.uniform(-1, 1, (n, 1)), np.zeros(n),
               rng.normal(size=(n, 2)), np.zeros(n))
    buf.update_priorities(np.arange(n), rng.exponential(2.0, n))
    return {
        "tree.set": lambda: tree.set(int(idx[0]), float(pri[0])),
        "tree.set_many(64)": lambda: tree.set_many(idx, pri),
        "tree.stratified(64)": lambda: tree.stratified_sample(64, rng),
        f"rebuild_inverse({capacity:g})": buf.rebuild_inverse,
    }


def net_cases(backend: str, rng: np.random.Generator):
    net = Mlp([3, 64, 64, 1], rng=rng, backend=backend)
    x = rng.normal(size=(64, 3))
    g = rng.normal(size=(64, 1))
    _, cache = net.forward(x)
    opt = AdamState(net.params.size)
    grad = rng.normal(size=net.params.size) * 1e-3
    target = net.copy()
    return {
        "mlp.forward(64)": lambda: net.forward(x),
        "mlp.backward(64)": lambda: net.backward(cache, g),
        "adam": lambda: adam_step(net, opt, grad),
        "polyak": lambda: approx.polyak_update(target, net, 0.005),
    }


_STEP_SCRIPT = """
import json, sys
from la3p.experiment import time_update_steps
cap = int(sys.argv[1])
print(json.dumps({s: time_update_steps(s, cap, updates=100) for s in ("uniform", "lap", "la3p")}))
"""


def update_steps(capacity: int, pure: bool) -> dict[str, float]:
    env = dict(os.environ)
    if pure:
        env["LA3P_PURE_PYTHON"] = "1"
    else:
        env.pop("LA3P_PURE_PYTHON", None)
    out = subprocess.run([sys.executable, "-c", _STEP_SCRIPT, str(capacity)], env=env,
                         check=True, capture_output=True, text=True).stdout
    return json.loads(out)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=7)
    p.add_argument("--capacity", type=int, default=100_000)
    p.add_argument("--skip-steps", action="store_true", help="skip whole update steps")
    args = p.parse_args(argv)

    if "cython" not in sum_tree.BACKENDS or "cython" not in approx.BACKENDS:
        print("compiled extensions are not built; only the fallback is available")
        return 1

    print(f"{'kernel':<26} {'cython':>10} {'python':>10} {'speed-up':>9}")
    for make in (lambda b, r: tree_cases(b, args.capacity, r), net_cases):
        fast = make("cython", np.random.default_rng(0))
        slow = make("python", np.random.default_rng(0))
        for name in fast:
            tc, tp = best(fast[name], args.repeat), best(slow[name], args.repeat)
            print(f"{name:<26} {tc * 1e6:>8.2f}us {tp * 1e6:>8.2f}us {tp / tc:>8.2f}x")

    if not args.skip_steps:
        fast, slow = update_steps(args.capacity, False), update_steps(args.capacity, True)
        print(f"\nupdate step, capacity {args.capacity:g} (median per step)")
        for name in fast:
            print(f"{name:<26} {fast[name] * 1e3:>8.3f}ms {slow[name] * 1e3:>8.3f}ms "
                  f"{slow[name] / fast[name]:>8.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
