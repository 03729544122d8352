"""Independent reference implementations used to derive expected values.

Nothing here imports the solver; everything works directly on the raw
thought-MDP tables with explicit loops.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def naive_policy_values(mdp, probs: np.ndarray, tol: float = 1e-14, max_iter: int = 200_000) -> np.ndarray:
    """Bellman expectation fixed point by Jacobi sweeps over (s, tau) with explicit case split."""
    S, T = mdp.n_env_states, mdp.n_thought_states
    A, C = mdp.n_env_actions, mdp.n_thought_actions
    gamma = mdp.discount
    term = set(mdp.terminals)
    v = np.zeros((S, T))
    for _ in range(max_iter):
        new = np.zeros_like(v)
        for s in range(S):
            if s in term:
                continue
            for tau in range(T):
                total = 0.0
                for a in range(A):
                    w = probs[s, tau, a]
                    if w:
                        total += w * (mdp.reward[s, a] + gamma * sum(
                            mdp.env_transition[s, a, s2] * v[s2, tau] for s2 in range(S)))
                for c in range(C):
                    w = probs[s, tau, A + c]
                    if w:
                        total += w * gamma * v[s, mdp.thought_next(s, tau, c)]
                new[s, tau] = total
        if np.max(np.abs(new - v)) < tol:
            return new
        v = new
    raise RuntimeError("oracle did not converge")


def optimal_values(mdp, tol: float = 1e-13) -> np.ndarray:
    """Value iteration on the joint state space."""
    S, T = mdp.n_env_states, mdp.n_thought_states
    A, C = mdp.n_env_actions, mdp.n_thought_actions
    gamma = mdp.discount
    term = set(mdp.terminals)
    v = np.zeros((S, T))
    while True:
        new = np.zeros_like(v)
        for s in range(S):
            if s in term:
                continue
            for tau in range(T):
                qs = [mdp.reward[s, a] + gamma * float(mdp.env_transition[s, a] @ v[:, tau]) for a in range(A)]
                qs += [gamma * v[s, mdp.thought_next(s, tau, c)] for c in range(C)]
                new[s, tau] = max(qs)
        if np.max(np.abs(new - v)) < tol:
            return new
        v = new


def chain_values_initial(n: int, gamma: float) -> np.ndarray:
    """Closed form for the chain's initial policy: tau0 walks left forever, tau1 walks right."""
    v = np.zeros((n, 2))
    for s in range(n - 1):
        v[s, 1] = gamma ** (n - 2 - s)
    return v


def enumerate_chain_goal_prob(n: int, start: int, first: str, T: int) -> float:
    """Uniform left/right walk on a chain with absorbing goal n-1: P(goal by step T) by enumeration."""
    total = 0.0
    for tail in itertools.product("LR", repeat=T - 1):
        pos = start
        hit = False
        for k, a in enumerate((first,) + tail):
            if pos == n - 1:
                hit = True
                break
            pos = min(pos + 1, n - 1) if a == "R" else max(pos - 1, 0)
        hit = hit or pos == n - 1
        total += hit * 0.5 ** (T - 1)
    return total


def horizon_formula(n_actions: int, T: int, p: float) -> float:
    return max(1.0, 1.0 + math.log(math.log(2 * T) / p) / math.log(n_actions))


def random_walk_success_C(n_actions: int, cap: int) -> float:
    """P(task C completed within ``cap`` steps from (2,2)) for a uniform policy.

    The first ``4`` of ``n_actions`` are the moves; the rest leave the agent in place.
    """
    size = 5
    dist = {((2, 2), False): 1.0}
    done = 0.0
    deltas = [(-1, 0), (1, 0), (0, -1), (0, 1)] + [(0, 0)] * (n_actions - 4)
    for _ in range(cap):
        nxt: dict = {}
        for (pos, seen), p in dist.items():
            for dr, dc in deltas:
                q = (min(max(pos[0] + dr, 0), size - 1), min(max(pos[1] + dc, 0), size - 1))
                s2 = seen or q == (4, 4)
                if seen and q == (0, 0):
                    done += p / n_actions
                else:
                    nxt[(q, s2)] = nxt.get((q, s2), 0.0) + p / n_actions
        dist = nxt
    return done


def softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def naive_policy_iteration(mdp, choice: np.ndarray, atol: float = 1e-12, max_iters: int = 100):
    """Deterministic policy iteration with keep-current tie-breaking, on explicit loops.

    Returns the list of choice tables, one per completed improvement step
    (index 0 is the initial table), ending at the first repeat.
    """
    S, T = mdp.n_env_states, mdp.n_thought_states
    A, K = mdp.n_env_actions, mdp.n_actions
    gamma = mdp.discount
    history = [choice.copy()]
    for _ in range(max_iters):
        probs = np.zeros((S, T, K))
        for s in range(S):
            for tau in range(T):
                probs[s, tau, choice[s, tau]] = 1.0
        v = naive_policy_values(mdp, probs)
        new = choice.copy()
        for s in range(S):
            if s in mdp.terminals:
                continue
            for tau in range(T):
                q = [mdp.reward[s, a] + gamma * float(mdp.env_transition[s, a] @ v[:, tau]) for a in range(A)]
                q += [gamma * v[s, mdp.thought_next(s, tau, c)] for c in range(K - A)]
                best = max(q)
                tied = [k for k in range(K) if q[k] >= best - atol]
                new[s, tau] = choice[s, tau] if choice[s, tau] in tied else tied[0]
        if np.array_equal(new, choice):
            return history
        choice = new
        history.append(choice.copy())
    raise RuntimeError("no convergence")
