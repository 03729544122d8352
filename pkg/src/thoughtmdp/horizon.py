"""Goal thought MDPs, goal-discovery probabilities and the effective-horizon bound.

For goal MDPs the effective horizon is bounded by
``1 + log(log(2T) / p) / log(n_actions)``, where ``p`` lower-bounds the chance
that the exploration policy reaches a goal within ``T`` steps after any first
action.  A thought action that switches to a better sub-policy raises that
lower bound from ``p0`` to ``max(p0, pc * p1)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .core import ActionRef, TabularPolicy, ThoughtMdp, flatten

LOG_BASE_NOTE = "inner log natural; outer log base n_actions via log ratio; n_actions counts env + thought actions"


@dataclass(frozen=True, eq=False)
class GoalThoughtMdp:
    mdp: ThoughtMdp
    goals: frozenset[int]

    def __post_init__(self) -> None:
        goals = frozenset(int(g) for g in self.goals)
        object.__setattr__(self, "goals", goals)
        m = self.mdp
        for g in goals:
            if not np.all(m.env_transition[g, :, g] == 1.0):
                raise ValueError(f"goal state {g} is not absorbing")
        expected = np.zeros_like(m.reward)
        expected[sorted(goals)] = 1.0
        if not np.array_equal(m.reward, expected):
            raise ValueError("goal MDP rewards must be 1 exactly at goal states and 0 elsewhere")

    @property
    def goal_mask(self) -> np.ndarray:
        mask = np.zeros(self.mdp.n_env_states, dtype=bool)
        mask[sorted(self.goals)] = True
        return mask


def goal_chain(n_env_states: int = 8, discount: float = 0.9) -> GoalThoughtMdp:
    """Deterministic chain with an absorbing rewarding goal at the right end.

    Two thought states, thought actions ``up`` (to tau1) and ``down`` (to tau0).
    """
    n = n_env_states
    goal = n - 1
    p = np.zeros((n, 2, n))
    for s in range(n):
        if s == goal:
            p[s, :, s] = 1.0
        else:
            p[s, 0, max(s - 1, 0)] = 1.0
            p[s, 1, s + 1] = 1.0
    r = np.zeros((n, 2))
    r[goal] = 1.0
    tt = np.zeros((n, 2, 2), dtype=np.int64)
    tt[:, :, 0] = 1
    mdp = ThoughtMdp(p, r, tt, discount, frozenset(), ("left", "right"), ("up", "down"))
    return GoalThoughtMdp(mdp, frozenset({goal}))


@dataclass
class HorizonEstimate:
    p_hat: float
    ci_low: float
    ci_high: float
    n_rollouts: int
    hits: int
    bound: float | None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bound"] = "undefined" if self.bound is None else self.bound
        return d


def wilson_interval(hits: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n <= 0:
        raise ValueError("need at least one trial")
    phat = hits / n
    denom = 1.0 + z * z / n
    centre = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    lo, hi = max(0.0, centre - half), min(1.0, centre + half)
    # guard rounding so that lo <= phat <= hi holds exactly
    return min(lo, phat), max(hi, phat)


def _flat_inputs(mdp: ThoughtMdp, goals, policy: TabularPolicy):
    flat = flatten(mdp)
    goal = np.repeat(np.isin(np.arange(mdp.n_env_states), sorted(goals)), mdp.n_thought_states)
    pi = policy.probs.reshape(flat.n_states, flat.n_actions)
    return flat, goal, pi


def _unwrap(gmdp) -> tuple[ThoughtMdp, frozenset[int]]:
    if isinstance(gmdp, GoalThoughtMdp):
        return gmdp.mdp, gmdp.goals
    mdp, goals = gmdp
    return mdp, frozenset(goals)


def goal_hits(gmdp, policy: TabularPolicy, s: int, tau: int, a: ActionRef | None,
              horizon_T: int, n_rollouts: int, rng: np.random.Generator,
              backend: str | None = None, chunk: int = 20_000) -> np.ndarray:
    """First goal-hit step for each rollout (-1 if none within ``horizon_T``)."""
    if horizon_T < 1 or n_rollouts < 1:
        raise ValueError("horizon_T and n_rollouts must be >= 1")
    mdp, goals = _unwrap(gmdp)
    flat, goal, pi = _flat_inputs(mdp, goals, policy)
    start = mdp.joint_index(s, tau)
    forced = -1 if a is None else mdp.action_index(a)
    out = np.empty(n_rollouts, dtype=np.int_)
    done = 0
    while done < n_rollouts:
        m = min(chunk, n_rollouts - done)
        u = rng.random((m, horizon_T, 2))
        _, first = kernels.goal_rollouts(flat.transition, pi, goal, start, forced, u, backend=backend)
        out[done:done + m] = first
        done += m
    return out


def estimate_goal_prob(gmdp, policy: TabularPolicy, s: int, tau: int, a: ActionRef | None,
                       horizon_T: int, n_rollouts: int, rng: np.random.Generator,
                       backend: str | None = None) -> HorizonEstimate:
    """Monte Carlo probability of occupying a goal within ``horizon_T`` steps.

    The first step takes ``a`` (when given), then ``policy`` is followed.
    """
    first = goal_hits(gmdp, policy, s, tau, a, horizon_T, n_rollouts, rng, backend)
    hits = int((first >= 0).sum())
    lo, hi = wilson_interval(hits, n_rollouts)
    mdp, _ = _unwrap(gmdp)
    p_hat = hits / n_rollouts
    bound = horizon_bound(mdp.n_actions, horizon_T, p_hat) if p_hat > 0 and mdp.n_actions >= 2 else None
    return HorizonEstimate(p_hat, lo, hi, n_rollouts, hits, bound)


def exact_goal_prob(gmdp, policy: TabularPolicy, s: int, tau: int, a: ActionRef | None,
                    horizon_T: int) -> float:
    """Exact probability by pushing the state distribution forward ``horizon_T`` steps."""
    mdp, goals = _unwrap(gmdp)
    flat, goal, pi = _flat_inputs(mdp, goals, policy)
    dist = np.zeros(flat.n_states)
    dist[mdp.joint_index(s, tau)] = 1.0
    reached = float(dist[goal].sum())
    dist[goal] = 0.0
    for t in range(horizon_T):
        if t == 0 and a is not None:
            k = mdp.action_index(a)
            dist = dist @ flat.transition[:, k, :]
        else:
            dist = np.einsum("i,ik,ikj->j", dist, pi, flat.transition)
        reached += float(dist[goal].sum())
        dist[goal] = 0.0
    return reached


def enumerate_goal_prob(gmdp, policy: TabularPolicy, s: int, tau: int, a: ActionRef | None,
                        horizon_T: int) -> float:
    """Brute force over every action sequence; only for deterministic env dynamics.

    Each full sequence is weighted by the product of its policy probabilities
    (the forced first action has weight 1), so tails after a goal hit sum out.
    """
    mdp, goals = _unwrap(gmdp)
    if not np.all((mdp.env_transition == 0) | (mdp.env_transition == 1)):
        raise ValueError("enumeration oracle needs deterministic env transitions")
    A = mdp.n_env_actions
    nxt_env = np.argmax(mdp.env_transition, axis=-1)
    succ = mdp.thought_successors
    head = [mdp.action_index(a)] if a is not None else []
    total = 0.0
    for tail in itertools.product(range(mdp.n_actions), repeat=horizon_T - len(head)):
        cs, ct = s, tau
        weight = 1.0
        hit = cs in goals
        for t, k in enumerate(head + list(tail)):
            if t >= len(head):
                weight *= policy.probs[cs, ct, k]
            if k < A:
                cs = int(nxt_env[cs, k])
            else:
                ct = int(succ[cs, ct, k - A])
            hit = hit or cs in goals
        if hit:
            total += weight
    return total


def horizon_bound(n_actions: int, horizon_T: int, p: float) -> float | None:
    """Upper bound ``1 + log_{n_actions}(log(2T) / p)``, clamped below at 1.

    Returns ``None`` (undefined) for ``p == 0``.
    """
    if n_actions < 2:
        raise ValueError("n_actions must be >= 2")
    if horizon_T < 1:
        raise ValueError("horizon_T must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if p == 0.0:
        return None
    ratio = math.log(2 * horizon_T) / p
    if ratio <= 1.0:
        return 1.0
    return 1.0 + math.log(ratio) / math.log(n_actions)


@dataclass
class ThinkingBoundComparison:
    p0: float
    p1: float
    pc: float
    effective_p: float
    reduced: bool
    bound_without: float | None
    bound_with: float | None
    n_actions: int
    horizon_T: int
    note: str = LOG_BASE_NOTE


def compare_thinking_bounds(p0: float, p1: float, pc: float, n_actions: int = 4,
                         horizon_T: int = 20) -> ThinkingBoundComparison:
    """Compare bounds with and without a thought action into the better sub-policy.

    Both bounds use the same action count, so any difference comes from the
    raised goal-discovery lower bound ``max(p0, pc * p1)``.
    """
    for name, x in (("p0", p0), ("p1", p1), ("pc", pc)):
        if not 0.0 < x <= 1.0:
            raise ValueError(f"{name} must lie in (0, 1]")
    eff = max(p0, pc * p1)
    return ThinkingBoundComparison(
        p0, p1, pc, eff, pc * p1 > p0,
        horizon_bound(n_actions, horizon_T, p0),
        horizon_bound(n_actions, horizon_T, eff),
        n_actions, horizon_T)


# -- the two-arm campaign on the goal chain ----------------------------------


def split_policies(gmdp: GoalThoughtMdp, left_bias: float = 0.7, right_bias: float = 0.9,
                   pc: float = 0.3) -> tuple[TabularPolicy, TabularPolicy]:
    """Stochastic initialisation for the goal chain and its thought-free twin.

    In tau0 the policy mostly walks left and thinks ``up`` with probability
    ``pc``; in tau1 it mostly walks right and never thinks.  The twin drops
    the thought mass in tau0 and renormalises over env actions.
    """
    mdp = gmdp.mdp
    S = mdp.n_env_states
    think = np.zeros((S, 2, 4))
    think[:, 0] = [(1 - pc) * left_bias, (1 - pc) * (1 - left_bias), pc, 0.0]
    think[:, 1] = [1 - right_bias, right_bias, 0.0, 0.0]
    plain = think.copy()
    plain[:, 0] = [left_bias, 1 - left_bias, 0.0, 0.0]
    return TabularPolicy(think, 2), TabularPolicy(plain, 2)


def sub_policy(policy: TabularPolicy, tau: int) -> TabularPolicy:
    """Env-only policy that always acts like ``policy`` does in thought state ``tau``."""
    A = policy.n_env_actions
    row = policy.probs[:, tau, :A]
    row = row / row.sum(axis=-1, keepdims=True)
    probs = np.zeros_like(policy.probs)
    probs[:, :, :A] = row[:, None, :]
    return TabularPolicy(probs, A)


def min_goal_prob(gmdp: GoalThoughtMdp, policy: TabularPolicy, tau: int, horizon_T: int,
                  thoughts: bool = False) -> float:
    """Exact ``min_{s,a} Pr(goal by T | s, tau, a, policy)`` over non-goal ``s``."""
    mdp = gmdp.mdp
    actions = [ActionRef.env(a) for a in range(mdp.n_env_actions)]
    if thoughts:
        actions += [ActionRef.thought(c) for c in range(mdp.n_thought_actions)]
    vals = [exact_goal_prob(gmdp, policy, s, tau, a, horizon_T)
            for s in range(mdp.n_env_states) if s not in gmdp.goals for a in actions]
    return float(min(vals))


def episodes_to_discovery(gmdp: GoalThoughtMdp, policy: TabularPolicy, s: int, tau: int,
                          horizon_T: int, n_repeats: int, rng: np.random.Generator,
                          max_episodes: int = 100_000, backend: str | None = None) -> np.ndarray:
    """Number of exploration episodes until the first goal discovery, repeated."""
    out = np.empty(n_repeats, dtype=np.int64)
    batch = 256
    for i in range(n_repeats):
        used = 0
        found = -1
        while found < 0 and used < max_episodes:
            first = goal_hits(gmdp, policy, s, tau, None, horizon_T, batch, rng, backend)
            idx = np.flatnonzero(first >= 0)
            if len(idx):
                found = used + int(idx[0]) + 1
            used += batch
        out[i] = found if found > 0 else max_episodes
    return out


def mean_ci(x: np.ndarray, z: float = 1.959963984540054) -> tuple[float, float, float]:
    x = np.asarray(x, dtype=float)
    m = float(x.mean())
    half = z * float(x.std(ddof=1)) / math.sqrt(len(x)) if len(x) > 1 else 0.0
    return m, m - half, m + half


@dataclass
class CampaignResult:
    p0: float
    p1: float
    pc: float
    p_think: float
    record: ThinkingBoundComparison
    count_think: tuple[float, float, float]
    count_plain: tuple[float, float, float]

    @property
    def sample_counts_lower(self) -> bool:
        return self.count_think[2] < self.count_plain[1]


def thinking_discovery_campaign(n_env_states: int = 8, horizon_T: int = 20, pc: float = 0.3,
                          left_bias: float = 0.7, right_bias: float = 0.9,
                          n_repeats: int = 200, seed: int = 0,
                          backend: str | None = None) -> CampaignResult:
    """Measure ``p0, p1, pc`` exactly on the goal chain and compare discovery costs.

    Both arms start every exploration episode at ``(0, tau0)`` and share the
    seed stream.
    """
    gmdp = goal_chain(n_env_states)
    think, plain = split_policies(gmdp, left_bias, right_bias, pc)
    p0 = min_goal_prob(gmdp, sub_policy(think, 0), 0, horizon_T)
    p1 = min_goal_prob(gmdp, sub_policy(think, 1), 1, horizon_T)
    p_think = min_goal_prob(gmdp, think, 0, horizon_T)
    pc_min = float(think.probs[:, 0, 2].min())
    rec = compare_thinking_bounds(p0, p1, pc_min, gmdp.mdp.n_actions, horizon_T)
    counts_t = episodes_to_discovery(gmdp, think, 0, 0, horizon_T, n_repeats,
                                     np.random.default_rng(seed), backend=backend)
    counts_p = episodes_to_discovery(gmdp, plain, 0, 0, horizon_T, n_repeats,
                                     np.random.default_rng(seed), backend=backend)
    return CampaignResult(p0, p1, pc_min, p_think, rec, mean_ci(counts_t), mean_ci(counts_p))


__all__ = [
    "GoalThoughtMdp", "HorizonEstimate", "ThinkingBoundComparison", "CampaignResult",
    "goal_chain", "estimate_goal_prob", "exact_goal_prob", "enumerate_goal_prob",
    "horizon_bound", "compare_thinking_bounds", "thinking_discovery_campaign", "wilson_interval",
]
