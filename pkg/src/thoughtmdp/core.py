"""Tabular thought MDPs: data model, assumption checks and joint-state dynamics.

A thought MDP extends an ordinary tabular MDP with a set of thought states and
thought actions.  Thought actions leave the environment state untouched, pay
no reward and move the thought state deterministically; environment actions
leave the thought state untouched.  Joint states are ``(s, tau)`` pairs and
the flattened action set lists environment actions first, then thought
actions.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import NamedTuple

import numpy as np

PROB_TOL = 1e-12


class ActionKind(str, Enum):
    ENV = "env"
    THOUGHT = "thought"


class ActionRef(NamedTuple):
    kind: ActionKind
    index: int

    @classmethod
    def env(cls, index: int) -> "ActionRef":
        return cls(ActionKind.ENV, int(index))

    @classmethod
    def thought(cls, index: int) -> "ActionRef":
        return cls(ActionKind.THOUGHT, int(index))

    def __str__(self) -> str:
        return f"{self.kind.value}[{self.index}]"


class JointState(NamedTuple):
    env: int
    thought: int


class ContractError(RuntimeError):
    """Raised when an operation is called outside its precondition."""


class InvalidMdpError(ValueError):
    def __init__(self, report: "ValidationReport"):
        super().__init__(report.summary())
        self.report = report


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ThoughtMdp:
    """Immutable tabular thought MDP.

    ``thought_transition`` is either an integer table ``(S, T, C)`` of successor
    thought states or a probability table ``(S, T, C, T)``; the latter form only
    exists so that non-deterministic inputs can be represented and rejected by
    :func:`validate`.
    """

    env_transition: np.ndarray  # (S, A, S)
    reward: np.ndarray  # (S, A)
    thought_transition: np.ndarray  # (S, T, C) int or (S, T, C, T) float
    discount: float
    terminals: frozenset[int] = frozenset()
    env_action_names: tuple[str, ...] = ()
    thought_action_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        p = np.asarray(self.env_transition, dtype=float)
        r = np.asarray(self.reward, dtype=float)
        tt = np.asarray(self.thought_transition)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError(f"env_transition must have shape (S, A, S), got {p.shape}")
        if r.shape != p.shape[:2]:
            raise ValueError(f"reward must have shape {p.shape[:2]}, got {r.shape}")
        if tt.ndim not in (3, 4) or tt.shape[0] != p.shape[0]:
            raise ValueError(f"thought_transition has bad shape {tt.shape}")
        if tt.ndim == 3 and not np.issubdtype(tt.dtype, np.integer):
            if not np.all(np.mod(tt, 1) == 0):
                raise ValueError("3-d thought_transition must hold integer successors")
            tt = tt.astype(np.int64)
        object.__setattr__(self, "env_transition", _frozen(p))
        object.__setattr__(self, "reward", _frozen(r))
        object.__setattr__(self, "thought_transition", _frozen(tt))
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "terminals", frozenset(int(t) for t in self.terminals))
        if not self.env_action_names:
            names = tuple(f"a{i}" for i in range(p.shape[1]))
            object.__setattr__(self, "env_action_names", names)
        if not self.thought_action_names:
            names = tuple(f"c{i}" for i in range(tt.shape[2]))
            object.__setattr__(self, "thought_action_names", names)

    @property
    def n_env_states(self) -> int:
        return self.env_transition.shape[0]

    @property
    def n_env_actions(self) -> int:
        return self.env_transition.shape[1]

    @property
    def n_thought_states(self) -> int:
        return self.thought_transition.shape[1]

    @property
    def n_thought_actions(self) -> int:
        return self.thought_transition.shape[2]

    @property
    def n_actions(self) -> int:
        return self.n_env_actions + self.n_thought_actions

    @property
    def terminal_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_env_states, dtype=bool)
        for t in self.terminals:
            if 0 <= t < self.n_env_states:
                mask[t] = True
        return mask

    def thought_next(self, s: int, tau: int, c: int) -> int:
        tt = self.thought_transition
        if tt.ndim == 4:
            return int(np.argmax(tt[s, tau, c]))
        return int(tt[s, tau, c])

    @property
    def thought_successors(self) -> np.ndarray:
        """Integer successor table ``(S, T, C)``."""
        tt = self.thought_transition
        return np.argmax(tt, axis=-1) if tt.ndim == 4 else tt

    def action_index(self, action: ActionRef) -> int:
        """Position of ``action`` in the flattened action list (env first)."""
        if action.kind == ActionKind.ENV:
            if not 0 <= action.index < self.n_env_actions:
                raise ContractError(f"env action {action.index} out of range")
            return action.index
        if not 0 <= action.index < self.n_thought_actions:
            raise ContractError(f"thought action {action.index} out of range")
        return self.n_env_actions + action.index

    def action_ref(self, k: int) -> ActionRef:
        if k < self.n_env_actions:
            return ActionRef.env(k)
        return ActionRef.thought(k - self.n_env_actions)

    def joint_index(self, s: int, tau: int) -> int:
        return s * self.n_thought_states + tau

    def is_terminal(self, s: int) -> bool:
        return s in self.terminals

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n_env_states": self.n_env_states,
            "n_thought_states": self.n_thought_states,
            "env_actions": list(self.env_action_names),
            "thought_actions": list(self.thought_action_names),
            "gamma": self.discount,
            "terminals": sorted(self.terminals),
            "p": self.env_transition.ravel().tolist(),
            "r": self.reward.ravel().tolist(),
            "p_tau": self.thought_transition.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict, check: bool = True) -> "ThoughtMdp":
        S = int(doc["n_env_states"])
        T = int(doc["n_thought_states"])
        env_actions = list(doc["env_actions"])
        thought_actions = list(doc["thought_actions"])
        A, C = len(env_actions), len(thought_actions)
        p = np.asarray(doc["p"], dtype=float).reshape(S, A, S)
        r = np.asarray(doc["r"], dtype=float).reshape(S, A)
        raw = np.asarray(doc["p_tau"])
        if raw.size == S * T * C:
            tt = raw.reshape(S, T, C)
        elif raw.size == S * T * C * T:
            tt = raw.astype(float).reshape(S, T, C, T)
        else:
            raise ValueError(f"p_tau has {raw.size} entries; expected {S*T*C} or {S*T*C*T}")
        mdp = cls(p, r, tt, float(doc["gamma"]), frozenset(doc.get("terminals", [])),
                  tuple(env_actions), tuple(thought_actions))
        if check:
            report = validate(mdp)
            if not report.ok:
                raise InvalidMdpError(report)
        return mdp

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load_json(cls, path: str | Path) -> "ThoughtMdp":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- validation ------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    violation: tuple | None = None
    detail: str = ""


@dataclass
class ValidationReport:
    structural: list[CheckResult] = field(default_factory=list)
    assumptions: list[CheckResult] = field(default_factory=list)

    @property
    def structural_ok(self) -> bool:
        return all(c.passed for c in self.structural)

    @property
    def ok(self) -> bool:
        return self.structural_ok and all(c.passed for c in self.assumptions)

    def assumption(self, number: int) -> CheckResult:
        return self.assumptions[number - 1]

    def failures(self) -> list[CheckResult]:
        return [c for c in self.structural + self.assumptions if not c.passed]

    def summary(self) -> str:
        bad = self.failures()
        if not bad:
            return "valid thought MDP"
        return "; ".join(f"{c.name} failed at {c.violation}: {c.detail}" for c in bad)


def _first(mask: np.ndarray) -> tuple | None:
    idx = np.argwhere(mask)
    return tuple(int(i) for i in idx[0]) if len(idx) else None


def _reachable_from(adj: np.ndarray, start: int, terminal: np.ndarray) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[start] = True
    frontier = [start]
    while frontier:
        s = frontier.pop()
        if terminal[s]:
            continue
        for nxt in np.flatnonzero(adj[s]):
            if not seen[nxt]:
                seen[nxt] = True
                frontier.append(int(nxt))
    return seen


def validate(mdp: ThoughtMdp) -> ValidationReport:
    """Check table structure and the three modelling assumptions (deterministic
    thought transitions, non-negative rewards, reachable positive reward).

    Structural failures (bad probability rows, out-of-range indices, bad
    discount) are reported separately from assumption failures.  Reachability
    is checked as policy-independent reachability over the graph of all
    env transitions with non-zero probability.
    """
    rep = ValidationReport()
    S, A = mdp.n_env_states, mdp.n_env_actions
    T = mdp.n_thought_states
    p, r, tt = mdp.env_transition, mdp.reward, mdp.thought_transition

    finite = np.isfinite(p).all() and np.isfinite(r).all()
    rep.structural.append(CheckResult("finite tables", bool(finite)))
    neg = p < 0
    rep.structural.append(CheckResult("non-negative probabilities", not neg.any(), _first(neg)))
    bad_rows = np.abs(p.sum(axis=2) - 1.0) > PROB_TOL
    rep.structural.append(CheckResult(
        "transition rows sum to 1", not bad_rows.any(), _first(bad_rows),
        "row sum off by more than 1e-12" if bad_rows.any() else ""))
    gamma_ok = 0.0 < mdp.discount < 1.0
    rep.structural.append(CheckResult("discount in (0, 1)", gamma_ok, None if gamma_ok else (mdp.discount,)))
    bad_term = [t for t in mdp.terminals if not 0 <= t < S]
    rep.structural.append(CheckResult("terminals in range", not bad_term, tuple(bad_term[:1]) or None))

    # exactly one successor thought state
    if tt.ndim == 3:
        out = (tt < 0) | (tt >= T)
        rep.structural.append(CheckResult("thought successors in range", not out.any(), _first(out)))
        rep.assumptions.append(CheckResult("deterministic thought transitions", True))
    else:
        one_hot = (np.abs(tt - np.round(tt)) <= PROB_TOL) & (np.round(tt) >= 0)
        ones = np.isclose(tt, 1.0, rtol=0, atol=PROB_TOL).sum(axis=-1)
        zeros = np.isclose(tt, 0.0, rtol=0, atol=PROB_TOL).sum(axis=-1)
        bad = ~((ones == 1) & (zeros == T - 1) & one_hot.all(axis=-1))
        rep.structural.append(CheckResult("thought successors in range", True))
        rep.assumptions.append(CheckResult(
            "deterministic thought transitions", not bad.any(), _first(bad),
            "thought transition is not a point mass" if bad.any() else ""))

    negr = r < 0
    rep.assumptions.append(CheckResult(
        "non-negative rewards", not negr.any(), _first(negr),
        "negative reward" if negr.any() else ""))

    # positive reward reachable from every live state
    terminal = mdp.terminal_mask
    rewarding = (r > 0).any(axis=1) & ~terminal
    if not rewarding.any():
        rep.assumptions.append(CheckResult("reachable positive reward", False, None,
                                           "no positive-reward action exists"))
    elif rep.structural_ok:
        adj = (p > 0).any(axis=1)
        bad_state = None
        for s in range(S):
            if terminal[s]:
                continue
            if not (_reachable_from(adj, s, terminal) & rewarding).any():
                bad_state = (s,)
                break
        rep.assumptions.append(CheckResult(
            "reachable positive reward", bad_state is None, bad_state,
            "no positive reward reachable" if bad_state else ""))
    else:
        rep.assumptions.append(CheckResult("reachable positive reward", False, None,
                                           "skipped: structural failure"))
    return rep


# -- policies --------------------------------------------------------------


class TabularPolicy:
    """Map from joint state ``(s, tau)`` to a distribution over ``A + C``.

    Stored as a probability table of shape ``(S, T, A + C)``.  Deterministic
    policies are one-hot rows and expose :attr:`choice`.
    """

    def __init__(self, probs: np.ndarray, n_env_actions: int):
        probs = np.array(probs, dtype=float)
        if probs.ndim != 3:
            raise ValueError("policy table must be (S, T, A + C)")
        if (probs < 0).any() or (np.abs(probs.sum(axis=-1) - 1.0) > PROB_TOL).any():
            raise ValueError("policy rows must be distributions (tolerance 1e-12)")
        probs.setflags(write=False)
        self.probs = probs
        self.n_env_actions = int(n_env_actions)

    @classmethod
    def deterministic(cls, choice: np.ndarray, n_actions: int, n_env_actions: int) -> "TabularPolicy":
        choice = np.asarray(choice, dtype=np.int64)
        if (choice < 0).any() or (choice >= n_actions).any():
            raise ValueError("action index out of range")
        probs = np.zeros(choice.shape + (n_actions,))
        np.put_along_axis(probs, choice[..., None], 1.0, axis=-1)
        return cls(probs, n_env_actions)

    @classmethod
    def from_refs(cls, mdp: ThoughtMdp, refs) -> "TabularPolicy":
        choice = np.array([[mdp.action_index(a) for a in row] for row in refs], dtype=np.int64)
        return cls.deterministic(choice, mdp.n_actions, mdp.n_env_actions)

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape[:2]

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0) | (self.probs == 1)))

    @property
    def choice(self) -> np.ndarray:
        if not self.is_deterministic:
            raise ContractError("stochastic policy has no single choice")
        return np.argmax(self.probs, axis=-1)

    def action(self, s: int, tau: int) -> ActionRef:
        k = int(self.choice[s, tau])
        if k < self.n_env_actions:
            return ActionRef.env(k)
        return ActionRef.thought(k - self.n_env_actions)

    def thought_mass(self) -> np.ndarray:
        return self.probs[..., self.n_env_actions:].sum(axis=-1)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TabularPolicy) and np.array_equal(self.probs, other.probs)

    def __hash__(self) -> int:
        return hash(self.probs.tobytes())

    def to_dict(self) -> dict:
        if self.is_deterministic:
            return {"n_env_actions": self.n_env_actions, "choice": self.choice.tolist(),
                    "n_actions": self.probs.shape[-1]}
        return {"n_env_actions": self.n_env_actions, "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularPolicy":
        if "choice" in doc:
            return cls.deterministic(np.asarray(doc["choice"]), int(doc["n_actions"]),
                                     int(doc["n_env_actions"]))
        return cls(np.asarray(doc["probs"], dtype=float), int(doc["n_env_actions"]))


# -- dynamics --------------------------------------------------------------


def sample_index(prob_row: np.ndarray, u: float) -> int:
    """Inverse-CDF draw; rounding overflow falls back to the last supported index."""
    k = int(np.searchsorted(np.cumsum(prob_row), u, side="right"))
    if k >= len(prob_row):
        k = int(np.flatnonzero(prob_row)[-1])
    return k


def step(mdp: ThoughtMdp, state: JointState, action: ActionRef,
         rng: np.random.Generator) -> tuple[JointState, float, bool]:
    """Advance one interaction step.

    Exactly one uniform is drawn per call, whatever the action kind, so that a
    rollout stays aligned with the same rollout through :func:`flatten`.
    """
    s, tau = int(state[0]), int(state[1])
    if not (0 <= s < mdp.n_env_states and 0 <= tau < mdp.n_thought_states):
        raise ContractError(f"joint state {state} out of range")
    if mdp.is_terminal(s):
        raise ContractError(f"cannot act from terminal state {s}")
    u = rng.random()
    if action.kind == ActionKind.ENV:
        a = action.index
        if not 0 <= a < mdp.n_env_actions:
            raise ContractError(f"env action {a} out of range")
        s_next = sample_index(mdp.env_transition[s, a], u)
        reward = float(mdp.reward[s, a])
        nxt = JointState(s_next, tau)
    else:
        c = action.index
        if not 0 <= c < mdp.n_thought_actions:
            raise ContractError(f"thought action {c} out of range")
        nxt = JointState(s, mdp.thought_next(s, tau, c))
        reward = 0.0
    return nxt, reward, mdp.is_terminal(nxt.env)


@dataclass(frozen=True, eq=False)
class FlatMdp:
    """Ordinary tabular MDP over joint states ``s * T + tau``.

    Terminal joint states self-loop with zero reward.
    """

    transition: np.ndarray  # (N, K, N)
    reward: np.ndarray  # (N, K)
    discount: float
    terminal: np.ndarray  # (N,) bool
    n_thought_states: int
    n_env_actions: int

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def step(self, i: int, k: int, rng: np.random.Generator) -> tuple[int, float, bool]:
        if self.terminal[i]:
            raise ContractError(f"cannot act from terminal joint state {i}")
        u = rng.random()
        j = sample_index(self.transition[i, k], u)
        return j, float(self.reward[i, k]), bool(self.terminal[j])


def flatten(mdp: ThoughtMdp, strict: bool = True) -> FlatMdp:
    """Standard MDP over joint states ``s * T + tau`` with actions A then C.

    ``strict`` requires every assumption to hold; otherwise only the table
    structure and deterministic thought transitions (needed to build the
    table) are required.
    """
    report = validate(mdp)
    usable = report.structural_ok and report.assumption(1).passed
    if not usable or (strict and not report.ok):
        raise InvalidMdpError(report)
    S, T, A, C = mdp.n_env_states, mdp.n_thought_states, mdp.n_env_actions, mdp.n_thought_actions
    N, K = S * T, A + C
    P = np.zeros((N, K, N))
    R = np.zeros((N, K))
    term_env = mdp.terminal_mask
    succ = mdp.thought_successors
    for s in range(S):
        for tau in range(T):
            i = s * T + tau
            if term_env[s]:
                P[i, :, i] = 1.0
                continue
            # env actions keep tau
            P[i, :A, tau::T] = mdp.env_transition[s]
            R[i, :A] = mdp.reward[s]
            for c in range(C):
                P[i, A + c, s * T + succ[s, tau, c]] = 1.0
    terminal = np.repeat(term_env, T)
    for arr in (P, R, terminal):
        arr.setflags(write=False)
    return FlatMdp(P, R, mdp.discount, terminal, T, A)


def random_thought_mdp(rng: np.random.Generator, max_env_states: int = 6,
                       max_thought_states: int = 3, max_env_actions: int = 3,
                       max_thought_actions: int = 2, deterministic_env: bool = False,
                       max_tries: int = 1000) -> ThoughtMdp:
    """Draw a small instance that passes :func:`validate` (rejection sampling)."""
    for _ in range(max_tries):
        S = int(rng.integers(2, max_env_states + 1))
        T = int(rng.integers(1, max_thought_states + 1))
        A = int(rng.integers(1, max_env_actions + 1))
        C = int(rng.integers(1, max_thought_actions + 1))
        if deterministic_env:
            p = np.zeros((S, A, S))
            nxt = rng.integers(0, S, size=(S, A))
            np.put_along_axis(p, nxt[..., None], 1.0, axis=-1)
        else:
            p = rng.dirichlet(np.full(S, 0.5), size=(S, A))
            p[p < 0.05] = 0.0
            p /= p.sum(axis=-1, keepdims=True)
            # exact row sums despite rounding
            p[..., -1] = 1.0 - p[..., :-1].sum(axis=-1)
            p = np.clip(p, 0.0, 1.0)
        r = rng.random((S, A)) * (rng.random((S, A)) < 0.3)
        tt = rng.integers(0, T, size=(S, T, C))
        n_term = int(rng.integers(0, 2))
        terminals = frozenset(int(x) for x in rng.choice(S, size=n_term, replace=False))
        gamma = float(rng.uniform(0.5, 0.99))
        mdp = ThoughtMdp(p, r, tt, gamma, terminals)
        if validate(mdp).ok:
            return mdp
    raise RuntimeError("could not draw a valid thought MDP")


def random_policy(rng: np.random.Generator, mdp: ThoughtMdp, stochastic: bool = False) -> TabularPolicy:
    shape = (mdp.n_env_states, mdp.n_thought_states)
    if stochastic:
        probs = rng.dirichlet(np.ones(mdp.n_actions), size=shape)
        probs[..., -1] = 1.0 - probs[..., :-1].sum(axis=-1)
        return TabularPolicy(np.clip(probs, 0.0, 1.0), mdp.n_env_actions)
    choice = rng.integers(0, mdp.n_actions, size=shape)
    return TabularPolicy.deterministic(choice, mdp.n_actions, mdp.n_env_actions)
