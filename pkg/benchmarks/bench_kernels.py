"""Time the compiled kernels against the pure-Python fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--json]
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from thoughtmdp import kernels
from thoughtmdp.chain import ChainSpec, build_chain
from thoughtmdp.core import flatten, random_policy
from thoughtmdp.horizon import _flat_inputs, goal_chain, split_policies


def _best(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_gauss_seidel(repeat: int) -> dict:
    # 100 joint states, stochastic policy: slow mixing makes many sweeps
    mdp, _ = build_chain(ChainSpec(50, 0.99))
    flat = flatten(mdp)
    pol = random_policy(np.random.default_rng(0), mdp, stochastic=True).probs.reshape(flat.n_states, flat.n_actions)
    P = np.einsum("ik,ikj->ij", pol, flat.transition)
    r = (pol * flat.reward).sum(axis=1)
    thr = 1e-10 * (1 - flat.discount) / flat.discount

    def run(backend):
        v = np.zeros(flat.n_states)
        kernels.gauss_seidel(P, r, flat.discount, v, thr, 100_000, backend=backend)

    return {name: _best(lambda: run(name), repeat) for name in ("cython", "python")
            if name == "python" or kernels.BACKEND == "cython"} | {"states": flat.n_states}


def bench_rollouts(repeat: int, n: int = 20_000, T: int = 20) -> dict:
    gmdp = goal_chain(8)
    think, _ = split_policies(gmdp)
    flat, goal, pi = _flat_inputs(gmdp.mdp, gmdp.goals, think)
    u = np.random.default_rng(1).random((n, T, 2))

    def run(backend):
        kernels.goal_rollouts(flat.transition, pi, goal, 0, -1, u, backend=backend)

    return {name: _best(lambda: run(name), repeat) for name in ("cython", "python")
            if name == "python" or kernels.BACKEND == "cython"} | {"rollouts": n, "T": T}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args()
    results = {"backend_default": kernels.BACKEND,
               "gauss_seidel": bench_gauss_seidel(args.repeat),
               "goal_rollouts": bench_rollouts(args.repeat)}
    if args.json:
        print(json.dumps(results, indent=2))
        return
    print(f"default backend: {results['backend_default']}")
    for name in ("gauss_seidel", "goal_rollouts"):
        res = results[name]
        line = f"{name:14s} python {res['python'] * 1e3:9.2f} ms"
        if "cython" in res:
            line += f"   cython {res['cython'] * 1e3:8.3f} ms   speedup {res['python'] / res['cython']:7.1f}x"
        print(line)


if __name__ == "__main__":
    main()
