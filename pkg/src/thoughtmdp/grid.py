"""5x5 gridworld with three commanded tasks and a "play" teacher.

Row 0 is the top; ``(4, 4)`` is the bottom-right corner.  Task A goes to the
bottom-right, task B to the top-left, task C to bottom-right then top-left.
The special actions A, B, C never move the agent.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

SIZE = 5
MOVES = ("up", "down", "left", "right")
SPECIALS = ("A", "B", "C")
ACTIONS = MOVES + SPECIALS
DELTAS = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}

BOTTOM_RIGHT = (SIZE - 1, SIZE - 1)
TOP_LEFT = (0, 0)
CENTER = (SIZE // 2, SIZE // 2)
TASK_TARGETS = {"A": [BOTTOM_RIGHT], "B": [TOP_LEFT], "C": [BOTTOM_RIGHT, TOP_LEFT]}

RL_EPISODE_CAP = 50
PLAY_LENGTH = 40
RESAMPLE_PROB = 0.25
DATASET_SCHEMA = "thoughtmdp.play-episodes/1"

Pos = tuple[int, int]


def grid_step(pos: Pos, action: str) -> Pos:
    if action in SPECIALS:
        return pos
    dr, dc = DELTAS[action]
    return (min(max(pos[0] + dr, 0), SIZE - 1), min(max(pos[1] + dc, 0), SIZE - 1))


def optimal_move(pos: Pos, target: Pos) -> str:
    """A cardinal move that shortens the Manhattan distance, closing rows first."""
    if pos == target:
        raise ValueError("already at target")
    if pos[0] != target[0]:
        return "down" if target[0] > pos[0] else "up"
    return "right" if target[1] > pos[1] else "left"


@dataclass
class EpisodeRecord:
    cue: str
    steps: list[tuple[Pos, str]] = field(default_factory=list)
    final_pos: Pos | None = None
    reward: int = 0
    success: bool = False

    @property
    def length(self) -> int:
        return len(self.steps)

    @property
    def actions(self) -> list[str]:
        return [a for _, a in self.steps]

    def positions(self) -> list[Pos]:
        """Every visited position, including the one after the last action."""
        out = [p for p, _ in self.steps]
        if self.final_pos is not None:
            out.append(self.final_pos)
        return out

    @property
    def n_special(self) -> int:
        return sum(a in SPECIALS for _, a in self.steps)

    def replays(self) -> bool:
        """True when positions follow from the actions under :func:`grid_step`."""
        pos = self.positions()
        for t, (p, a) in enumerate(self.steps):
            if t + 1 < len(pos) and grid_step(p, a) != pos[t + 1]:
                return False
        return True

    def to_dict(self) -> dict:
        return {"cue": self.cue, "steps": [[list(p), a] for p, a in self.steps],
                "final_pos": list(self.final_pos) if self.final_pos is not None else None,
                "reward": self.reward, "success": self.success, "length": self.length}

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeRecord":
        steps = [((int(p[0]), int(p[1])), a) for p, a in d["steps"]]
        fp = d.get("final_pos")
        return cls(d["cue"], steps, tuple(fp) if fp is not None else None,
                   int(d["reward"]), bool(d["success"]))


def success_C(episode: EpisodeRecord) -> bool:
    """Bottom-right visited strictly before a later visit to the top-left."""
    seen_br = False
    for p in episode.positions():
        if seen_br and p == TOP_LEFT:
            return True
        if p == BOTTOM_RIGHT:
            seen_br = True
    return False


def play_rollout(rng: np.random.Generator, length: int = PLAY_LENGTH,
                 start: Pos | None = None, resample_prob: float = RESAMPLE_PROB,
                 tasks: tuple[str, ...] = ("A", "B")) -> EpisodeRecord:
    """Episode of the play teacher.

    The cue is the initial task.  Each step the teacher either emits a freshly
    sampled task label (forced on arriving at the current target, otherwise
    with probability ``resample_prob``) or takes the optimal move toward the
    current target.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    if start is None:
        start = (int(rng.integers(SIZE)), int(rng.integers(SIZE)))
    task = tasks[int(rng.integers(len(tasks)))]
    ep = EpisodeRecord(cue=task)
    pos = start
    for _ in range(length):
        target = TASK_TARGETS[task][0]
        u = rng.random()
        if pos == target or u < resample_prob:
            task = tasks[int(rng.integers(len(tasks)))]
            action = task
        else:
            action = optimal_move(pos, target)
        ep.steps.append((pos, action))
        pos = grid_step(pos, action)
    ep.final_pos = pos
    return ep


def resample_counts(ep: EpisodeRecord) -> tuple[int, int, int]:
    """(random resamples, forced resamples, steps eligible for a random resample)."""
    task = ep.cue
    rand = forced = eligible = 0
    for pos, action in ep.steps:
        target = TASK_TARGETS[task][0]
        if pos == target:
            forced += 1
        else:
            eligible += 1
            rand += action in SPECIALS
        if action in SPECIALS:
            task = action
    return rand, forced, eligible


def grid_thought_mdp(discount: float = 0.9):
    """Task C as a tabular thought MDP.

    Env state ``phase * 25 + row * 5 + col`` with ``phase = 1`` once (4, 4) has
    been visited, plus one absorbing terminal (index 50) entered on reaching
    (0, 0) in phase 1, which pays 1.  Env actions are the four moves; thought
    actions A, B, C set the thought state to the label just emitted.
    """
    from .core import ThoughtMdp

    n_cells = SIZE * SIZE
    goal = 2 * n_cells
    p = np.zeros((goal + 1, len(MOVES), goal + 1))
    r = np.zeros((goal + 1, len(MOVES)))
    br = BOTTOM_RIGHT[0] * SIZE + BOTTOM_RIGHT[1]
    for phase in (0, 1):
        for cell in range(n_cells):
            s = phase * n_cells + cell
            pos = divmod(cell, SIZE)
            for a, move in enumerate(MOVES):
                nxt = grid_step(pos, move)
                nphase = 1 if phase or cell == br or nxt == BOTTOM_RIGHT else 0
                if nphase and nxt == TOP_LEFT:
                    p[s, a, goal] = 1.0
                    r[s, a] = 1.0
                else:
                    p[s, a, nphase * n_cells + nxt[0] * SIZE + nxt[1]] = 1.0
    p[goal, :, goal] = 1.0
    tt = np.broadcast_to(np.arange(len(SPECIALS)), (goal + 1, len(SPECIALS), len(SPECIALS))).copy()
    return ThoughtMdp(p, r, tt, discount, frozenset({goal}), MOVES, SPECIALS)


def teacher_log_probs(ep: EpisodeRecord, resample_prob: float = RESAMPLE_PROB,
                      tasks: tuple[str, ...] = ("A", "B")) -> np.ndarray:
    """Log-probability of each recorded action under the play teacher, given the history.

    The teacher's current task is a function of the history (the cue, then
    the last special action), so this is the Bayes-optimal per-step predictor
    and its mean negative value is the floor on behavior-cloning loss.
    """
    task = ep.cue
    out = np.empty(ep.length)
    pick = 1.0 / len(tasks)
    for t, (pos, action) in enumerate(ep.steps):
        target = TASK_TARGETS[task][0]
        if pos == target:
            p = pick if action in tasks else 0.0
        elif action in SPECIALS:
            p = resample_prob * pick if action in tasks else 0.0
        else:
            p = (1.0 - resample_prob) * (action == optimal_move(pos, target))
        out[t] = np.log(p) if p > 0 else -np.inf
        if action in SPECIALS:
            task = action
    return out


def play_dataset(rng: np.random.Generator, n_episodes: int, length: int = PLAY_LENGTH) -> list[EpisodeRecord]:
    return [play_rollout(rng, length) for _ in range(n_episodes)]


def save_episodes(path: str | Path, episodes: Iterable[EpisodeRecord], meta: dict | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"schema": DATASET_SCHEMA, **(meta or {})}) + "\n")
        for ep in episodes:
            fh.write(json.dumps(ep.to_dict()) + "\n")


def load_episodes(path: str | Path) -> tuple[dict, list[EpisodeRecord]]:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("schema") != DATASET_SCHEMA:
            raise ValueError(f"unsupported dataset schema {header.get('schema')!r}")
        return header, [EpisodeRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def iter_optimal_C(start: Pos = CENTER) -> Iterator[str]:
    """Action labels of the intended thinking route for task C."""
    pos = start
    for label, target in (("A", BOTTOM_RIGHT), ("B", TOP_LEFT)):
        yield label
        while pos != target:
            a = optimal_move(pos, target)
            yield a
            pos = grid_step(pos, a)


def episode_from_actions(cue: str, actions: Iterable[str], start: Pos = CENTER) -> EpisodeRecord:
    ep = EpisodeRecord(cue)
    pos = start
    for a in actions:
        ep.steps.append((pos, a))
        pos = grid_step(pos, a)
    ep.final_pos = pos
    ep.success = success_C(ep) if cue == "C" else False
    ep.reward = int(ep.success)
    return ep
