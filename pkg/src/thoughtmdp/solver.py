"""Exact dynamic programming on thought MDPs.

Policy evaluation, the action-value case split for env and thought actions,
greedy improvement with env-first tie-breaking, and policy iteration with
runtime monitors for the thinking-as-improvement results:

* an improvement step that switches a cell from an env action to a thought
  action ``c`` (successor ``tau'``) must see ``v(s, tau') > v(s, tau)``;
* two chained thought selections ``tau -> tau' -> tau''`` in one step must see
  ``v(s, tau'') > v(s, tau') > v(s, tau)``;
* successive policies never lose value anywhere.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .core import ContractError, FlatMdp, TabularPolicy, ThoughtMdp, flatten

log = logging.getLogger(__name__)

EXACT_MAX_STATES = 10_000
TIE_ATOL = 1e-12


class ConvergenceError(RuntimeError):
    pass


class MonitorViolation(AssertionError):
    """A value monitor fired; since the results are unconditional this means a bug."""

    def __init__(self, message: str, cell: tuple, trace: "IterationTrace | None" = None):
        super().__init__(f"{message} at {cell}")
        self.cell = cell
        self.trace = trace


@dataclass(frozen=True)
class ValueTable:
    v: np.ndarray  # (S, T)

    def __getitem__(self, key):
        return self.v[key]

    @property
    def shape(self) -> tuple[int, int]:
        return self.v.shape

    def sup_distance(self, other: "ValueTable") -> float:
        return float(np.max(np.abs(self.v - other.v)))


@dataclass(frozen=True)
class ImprovementEvent:
    s: int
    tau: int
    old_action: int
    new_action: int
    q: np.ndarray


@dataclass
class IterationRecord:
    policy: TabularPolicy
    values: ValueTable
    events: list[ImprovementEvent] = field(default_factory=list)


@dataclass
class IterationTrace:
    records: list[IterationRecord] = field(default_factory=list)
    monitor_checks: int = 0

    @property
    def n_improvements(self) -> int:
        return len(self.records) - 1

    def snapshot(self, k: int) -> IterationRecord:
        """State after ``k`` completed improvement steps (clamped to the last)."""
        return self.records[min(k, len(self.records) - 1)]

    def to_csv(self, path: str | Path, mdp: ThoughtMdp) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("# iteration = number of completed policy-improvement steps (0 = initial policy)\n")
            w = csv.writer(fh)
            w.writerow(["iteration", "s", "tau", "action_kind", "action_index", "value"])
            for it, rec in enumerate(self.records):
                choice = _greedy_choice(rec.policy)
                for s in range(mdp.n_env_states):
                    for tau in range(mdp.n_thought_states):
                        ref = mdp.action_ref(int(choice[s, tau]))
                        w.writerow([it, s, tau, ref.kind.value, ref.index,
                                    repr(float(rec.values.v[s, tau]))])


def _greedy_choice(policy: TabularPolicy) -> np.ndarray:
    return np.argmax(policy.probs, axis=-1)


def _policy_matrices(flat: FlatMdp, policy: TabularPolicy) -> tuple[np.ndarray, np.ndarray]:
    pi = policy.probs.reshape(flat.n_states, flat.n_actions)
    P = np.einsum("ik,ikj->ij", pi, flat.transition)
    r = np.einsum("ik,ik->i", pi, flat.reward)
    P[flat.terminal] = 0.0
    r[flat.terminal] = 0.0
    return P, r


def evaluate_policy(mdp: ThoughtMdp, policy: TabularPolicy, tolerance: float = 1e-10,
                    method: str = "iterative", max_sweeps: int = 100_000,
                    flat: FlatMdp | None = None, backend: str | None = None) -> ValueTable:
    """Value of ``policy`` on every joint state; terminal values are pinned to 0.

    ``method="iterative"`` runs Gauss-Seidel sweeps until the sup-norm error
    bound ``gamma/(1-gamma) * delta`` is below ``tolerance``.  ``method="exact"``
    solves the linear system directly (at most 10^4 joint states).
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    # evaluation is meaningful without the reward assumptions, so only structure is required
    flat = flat if flat is not None else flatten(mdp, strict=False)
    if policy.shape != (mdp.n_env_states, mdp.n_thought_states):
        raise ContractError("policy shape does not match the MDP")
    P, r = _policy_matrices(flat, policy)
    gamma = flat.discount
    live = ~flat.terminal
    if method == "exact":
        if flat.n_states > EXACT_MAX_STATES:
            raise ValueError(f"exact solve limited to {EXACT_MAX_STATES} joint states")
        v = np.zeros(flat.n_states)
        Pl = P[np.ix_(live, live)]
        v[live] = np.linalg.solve(np.eye(Pl.shape[0]) - gamma * Pl, r[live]) + 0.0
    elif method == "iterative":
        v = np.zeros(flat.n_states)
        threshold = tolerance * (1.0 - gamma) / gamma
        sweeps = kernels.gauss_seidel(P, r, gamma, v, threshold, max_sweeps, backend=backend)
        if sweeps < 0:
            raise ConvergenceError(f"policy evaluation did not converge in {max_sweeps} sweeps")
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.isfinite(v).all():
        raise ConvergenceError("non-finite values")
    out = v.reshape(mdp.n_env_states, mdp.n_thought_states)
    out.setflags(write=False)
    return ValueTable(out)


def q_values(mdp: ThoughtMdp, values: ValueTable, s: int, tau: int) -> np.ndarray:
    """Action values at ``(s, tau)``, env actions first then thought actions."""
    A, C = mdp.n_env_actions, mdp.n_thought_actions
    q = np.zeros(A + C)
    if mdp.is_terminal(s):
        return q
    v = values.v
    gamma = mdp.discount
    q[:A] = mdp.reward[s] + gamma * mdp.env_transition[s] @ v[:, tau]
    succ = mdp.thought_successors[s, tau]
    q[A:] = gamma * v[s, succ]
    return q


def _all_q(mdp: ThoughtMdp, values: ValueTable) -> np.ndarray:
    """q for every joint state, shape (S, T, A + C)."""
    A = mdp.n_env_actions
    v = values.v
    gamma = mdp.discount
    q = np.empty((mdp.n_env_states, mdp.n_thought_states, mdp.n_actions))
    q[:, :, :A] = (mdp.reward[:, :, None] + gamma * np.einsum("saj,jt->sat", mdp.env_transition, v)
                   ).transpose(0, 2, 1)
    succ = mdp.thought_successors
    rows = np.arange(mdp.n_env_states)[:, None, None]
    q[:, :, A:] = gamma * v[rows, succ]
    q[mdp.terminal_mask] = 0.0
    return q


def greedy_action(q: np.ndarray, n_env_actions: int, tie_break: str = "env-first",
                  atol: float = TIE_ATOL, current: int | None = None) -> int:
    """Index of the best action; values within ``atol`` of the max count as tied.

    ``"env-first"`` takes the lowest tied index, which under the env-first
    ordering prefers env actions.  ``"keep-current"`` keeps ``current`` when it
    is tied for the max and otherwise behaves like ``"env-first"``.
    ``"thought-first"`` takes the lowest tied thought action when one is tied.
    """
    tied = np.flatnonzero(q >= q.max() - atol)
    if tie_break == "keep-current":
        if current is not None and current in tied:
            return int(current)
        return int(tied[0])
    if tie_break == "env-first":
        return int(tied[0])
    if tie_break == "thought-first":
        thoughts = tied[tied >= n_env_actions]
        return int(thoughts[0]) if len(thoughts) else int(tied[0])
    raise ValueError(f"unknown tie_break {tie_break!r}")


def _deterministic_rows(policy: TabularPolicy) -> np.ndarray:
    """Chosen action per cell, or -1 for stochastic rows."""
    choice = np.argmax(policy.probs, axis=-1)
    one_hot = np.take_along_axis(policy.probs, choice[..., None], axis=-1)[..., 0] == 1.0
    return np.where(one_hot, choice, -1)


def improve(mdp: ThoughtMdp, values: ValueTable, tie_break: str = "env-first",
            atol: float = TIE_ATOL, current: TabularPolicy | None = None) -> TabularPolicy:
    """Greedy policy with respect to ``values``.

    Terminal rows are copied from ``current`` when given (nothing is ever
    chosen there), otherwise they get action 0.
    """
    q = _all_q(mdp, values)
    cur = _deterministic_rows(current) if current is not None else None
    choice = np.zeros(q.shape[:2], dtype=np.int64)
    for s in range(q.shape[0]):
        for tau in range(q.shape[1]):
            held = None if cur is None or cur[s, tau] < 0 else int(cur[s, tau])
            choice[s, tau] = greedy_action(q[s, tau], mdp.n_env_actions, tie_break, atol, held)
    probs = np.zeros(q.shape)
    np.put_along_axis(probs, choice[..., None], 1.0, axis=-1)
    if current is not None:
        term = mdp.terminal_mask
        probs[term] = current.probs[term]
    return TabularPolicy(probs, mdp.n_env_actions)


def _check_monitors(mdp: ThoughtMdp, old: TabularPolicy, new: TabularPolicy,
                    changed: np.ndarray, values: ValueTable, trace: IterationTrace) -> None:
    """Value checks on the cells set by this improvement step."""
    A = mdp.n_env_actions
    v = values.v
    succ = mdp.thought_successors
    new_choice = np.argmax(new.probs, axis=-1)
    old_thought = old.thought_mass()
    for s, tau in np.argwhere(changed):
        s, tau = int(s), int(tau)
        if mdp.is_terminal(s):
            continue
        k = int(new_choice[s, tau])
        if k < A:
            continue
        t1 = int(succ[s, tau, k - A])
        if old_thought[s, tau] == 0.0:
            trace.monitor_checks += 1
            if not v[s, t1] > v[s, tau]:
                raise MonitorViolation(
                    f"thought action selected without v(s,tau')={v[s, t1]!r} > v(s,tau)={v[s, tau]!r}",
                    (s, tau), trace)
        k2 = int(new_choice[s, t1])
        if k2 >= A and t1 != tau and changed[s, t1]:
            t2 = int(succ[s, t1, k2 - A])
            trace.monitor_checks += 1
            if not v[s, t2] > v[s, t1] > v[s, tau]:
                raise MonitorViolation(
                    f"chained thoughts without increasing values {v[s, tau]!r}, {v[s, t1]!r}, {v[s, t2]!r}",
                    (s, tau, t1, t2), trace)


def policy_iteration(mdp: ThoughtMdp, init_policy: TabularPolicy, max_iters: int = 1000,
                     tolerance: float = 1e-10, monitor: bool = True,
                     tie_break: str = "keep-current", method: str | None = None,
                     monotone_tol: float = 1e-10,
                     ) -> tuple[TabularPolicy, ValueTable, IterationTrace]:
    """Alternate evaluation and greedy improvement until the policy repeats.

    Record ``k`` of the returned trace holds the policy after ``k`` completed
    improvement steps, its values, and the cells changed by step ``k``.
    With ``monitor`` on, per-cell value and monotonicity checks raise
    :class:`MonitorViolation` with the offending cell.
    """
    flat = flatten(mdp)
    if method is None:
        method = "exact" if flat.n_states <= EXACT_MAX_STATES else "iterative"
    policy = init_policy
    values = evaluate_policy(mdp, policy, tolerance, method=method, flat=flat)
    trace = IterationTrace([IterationRecord(policy, values)])
    for _ in range(max_iters):
        new = improve(mdp, values, tie_break, current=policy)
        q = _all_q(mdp, values)
        old_choice = np.argmax(policy.probs, axis=-1)
        new_choice = np.argmax(new.probs, axis=-1)
        changed = (policy.probs != new.probs).any(axis=-1)
        events = []
        for s, tau in np.argwhere(changed):
            events.append(ImprovementEvent(int(s), int(tau), int(old_choice[s, tau]),
                                           int(new_choice[s, tau]), q[s, tau].copy()))
        if monitor:
            _check_monitors(mdp, policy, new, changed, values, trace)
        if not events:
            trace.records.append(IterationRecord(new, values, []))
            return new, values, trace
        new_values = evaluate_policy(mdp, new, tolerance, method=method, flat=flat)
        if monitor:
            drop = values.v - new_values.v
            if drop.max() > monotone_tol:
                cell = tuple(int(i) for i in np.unravel_index(np.argmax(drop), drop.shape))
                raise MonitorViolation(f"value decreased by {drop.max()!r}", cell, trace)
            trace.monitor_checks += 1
        trace.records.append(IterationRecord(new, new_values, events))
        policy, values = new, new_values
    log.warning("policy iteration stopped after %d improvement steps without converging", max_iters)
    return policy, values, trace


@dataclass
class NoThoughtReport:
    passed: bool
    violations: list[tuple[int, int]]


def verify_no_thought_optimal(mdp: ThoughtMdp, policy: TabularPolicy,
                              values: ValueTable | None = None) -> NoThoughtReport:
    """Check that ``policy`` puts no mass on thought actions at non-terminal states."""
    mass = policy.thought_mass()
    bad = [(int(s), int(t)) for s, t in np.argwhere(mass > 0) if not mdp.is_terminal(int(s))]
    return NoThoughtReport(not bad, bad)
