"""The two-row chain: a corridor of env states times two thought states.

Env actions move left/right along the corridor (clamped at 0); reaching the
right end pays 1 and terminates.  Thought actions move between the bottom row
(tau0) and top row (tau1), self-looping at the edges.  The initial policy
walks away from the goal in tau0 and toward it in tau1, so early policy
iteration learns to "think up" before walking.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import TabularPolicy, ThoughtMdp
from .solver import IterationTrace, _all_q, evaluate_policy, policy_iteration

LEFT, RIGHT = 0, 1
UP, DOWN = 0, 1


@dataclass(frozen=True)
class ChainSpec:
    n_env_states: int = 10
    discount: float = 0.9

    def __post_init__(self) -> None:
        if self.n_env_states < 2:
            raise ValueError("chain needs at least 2 env states")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")


def build_chain(spec: ChainSpec = ChainSpec()) -> tuple[ThoughtMdp, TabularPolicy]:
    n = spec.n_env_states
    goal = n - 1
    p = np.zeros((n, 2, n))
    r = np.zeros((n, 2))
    for s in range(n):
        if s == goal:
            p[s, :, s] = 1.0
            continue
        p[s, LEFT, max(s - 1, 0)] = 1.0
        p[s, RIGHT, s + 1] = 1.0
    r[goal - 1, RIGHT] = 1.0
    tt = np.zeros((n, 2, 2), dtype=np.int64)
    tt[:, :, UP] = 1
    tt[:, :, DOWN] = 0
    mdp = ThoughtMdp(p, r, tt, spec.discount, frozenset({goal}),
                     ("left", "right"), ("up", "down"))
    choice = np.empty((n, 2), dtype=np.int64)
    choice[:, 0] = LEFT
    choice[:, 1] = RIGHT
    return mdp, TabularPolicy.deterministic(choice, 4, 2)


def thought_states_in_row(policy: TabularPolicy, mdp: ThoughtMdp, tau: int = 0) -> set[int]:
    choice = np.argmax(policy.probs, axis=-1)
    return {s for s in range(mdp.n_env_states)
            if not mdp.is_terminal(s) and choice[s, tau] >= mdp.n_env_actions}


class MilestoneError(AssertionError):
    def __init__(self, message: str, trace: IterationTrace):
        rows = []
        for k, rec in enumerate(trace.records):
            rows.append(f"  iter {k}: choice={np.argmax(rec.policy.probs, axis=-1).T.tolist()}")
        super().__init__(message + "\n" + "\n".join(rows))
        self.trace = trace


def check_milestones(mdp: ThoughtMdp, trace: IterationTrace) -> None:
    """Raise :class:`MilestoneError` unless the run shows the expected progression.

    1. The first improvement thinks (up) exactly where the thought action beats
       every env action under the initial values.
    2. The set of thinking states in the bottom row only shrinks, and is always
       the block of states farthest from the goal.
    3. The final policy never thinks.
    """
    A = mdp.n_env_actions
    q0 = _all_q(mdp, trace.records[0].values)
    expected = {s for s in range(mdp.n_env_states)
                if not mdp.is_terminal(s) and q0[s, 0, A + UP] > q0[s, 0, :A].max()}
    if len(trace.records) > 1:
        got = thought_states_in_row(trace.records[1].policy, mdp)
        if got != expected:
            raise MilestoneError(f"iteration 1 thinks at {sorted(got)}, expected {sorted(expected)}", trace)
    prev = None
    for k, rec in enumerate(trace.records[1:], start=1):
        cur = thought_states_in_row(rec.policy, mdp)
        if prev is not None and not cur <= prev:
            raise MilestoneError(f"thinking set grew at iteration {k}", trace)
        if cur and cur != set(range(max(cur) + 1)):
            raise MilestoneError(f"thinking states at iteration {k} are not the far block: {sorted(cur)}", trace)
        prev = cur
    final = trace.records[-1].policy
    for tau in range(mdp.n_thought_states):
        if thought_states_in_row(final, mdp, tau):
            raise MilestoneError("converged policy still thinks", trace)


def run_chain(spec: ChainSpec = ChainSpec(), tie_break: str = "keep-current"):
    mdp, init = build_chain(spec)
    policy, values, trace = policy_iteration(mdp, init, monitor=tie_break != "thought-first",
                                             tie_break=tie_break)
    return mdp, policy, values, trace


def render_snapshot(mdp: ThoughtMdp, trace: IterationTrace, k: int, path: str | Path,
                    vmax: float = 1.0) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rec = trace.snapshot(k)
    n, T = mdp.n_env_states, mdp.n_thought_states
    choice = np.argmax(rec.policy.probs, axis=-1)
    fig, ax = plt.subplots(figsize=(0.6 * n + 1, 0.6 * T + 0.8))
    # top row of the picture is the highest thought state
    img = rec.values.v.T[::-1]
    ax.imshow(img, cmap="viridis", vmin=0.0, vmax=vmax, aspect="equal")
    arrows = {0: (-0.3, 0), 1: (0.3, 0), 2: (0, 0.3), 3: (0, -0.3)}  # left, right, up, down
    for s in range(n):
        for tau in range(T):
            y = T - 1 - tau
            if mdp.is_terminal(s):
                ax.text(s, y, "G", ha="center", va="center", color="white")
                continue
            dx, dy = arrows[int(choice[s, tau])]
            ax.annotate("", xy=(s + dx, y - dy), xytext=(s - dx, y + dy),
                        arrowprops=dict(arrowstyle="->", color="white"))
    ax.set_xticks(range(n))
    ax.set_yticks(range(T))
    ax.set_yticklabels([f"tau{t}" for t in range(T)][::-1])
    ax.set_title(f"after {min(k, trace.n_improvements)} improvement steps")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def reproduce_figure(spec: ChainSpec, snapshot_iters: list[int], out_dir: str | Path,
                     tie_break: str = "keep-current") -> IterationTrace:
    """Run monitored policy iteration, write ``trace.csv`` and one SVG per snapshot."""
    if list(snapshot_iters) != sorted(snapshot_iters):
        raise ValueError("snapshot iterations must be sorted ascending")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mdp, _, _, trace = run_chain(spec, tie_break)
    trace.to_csv(out / "trace.csv", mdp)
    for k in snapshot_iters:
        rec = trace.snapshot(k)
        fresh = evaluate_policy(mdp, rec.policy, method="exact")
        if fresh.sup_distance(rec.values) > 1e-8:
            raise MilestoneError(f"snapshot {k} values disagree with a fresh evaluation", trace)
        render_snapshot(mdp, trace, k, out / f"snapshot_{k}.svg")
    check_milestones(mdp, trace)
    return trace
