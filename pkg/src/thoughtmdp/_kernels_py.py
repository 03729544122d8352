"""Pure-Python versions of the compiled kernels in ``_kernels.pyx``."""
from __future__ import annotations

import numpy as np


def _draw(prob: np.ndarray, u: float) -> int:
    acc = 0.0
    last = 0
    for j, pj in enumerate(prob):
        if pj > 0.0:
            last = j
        acc += pj
        if acc > u:
            return j
    return last


def gauss_seidel(P, r, gamma, v, threshold, max_sweeps):
    n = P.shape[0]
    support = [np.flatnonzero(P[i]) for i in range(n)]
    rows = [P[i, support[i]] for i in range(n)]
    for sweep in range(1, max_sweeps + 1):
        delta = 0.0
        for i in range(n):
            acc = 0.0
            for j, pij in zip(support[i], rows[i]):
                acc += pij * v[j]
            acc = r[i] + gamma * acc
            change = abs(acc - v[i])
            if change > delta:
                delta = change
            v[i] = acc
        if delta <= threshold:
            return sweep
    return -1


def goal_rollouts(P, policy, goal, start, forced, uniforms, first_hit):
    n_roll, horizon = uniforms.shape[0], uniforms.shape[1]
    hits = 0
    for n in range(n_roll):
        s = start
        first_hit[n] = -1
        if goal[s]:
            first_hit[n] = 0
            hits += 1
            continue
        for t in range(horizon):
            if t == 0 and forced >= 0:
                k = forced
            else:
                k = _draw(policy[s], uniforms[n, t, 0])
            s = _draw(P[s, k], uniforms[n, t, 1])
            if goal[s]:
                first_hit[n] = t + 1
                hits += 1
                break
    return hits
