"""Token vocabulary for gridworld episode histories.

Layout (36 ids): begin, three cue tokens, 25 position tokens (row-major),
seven action tokens in the order up, down, left, right, A, B, C.
"""
from __future__ import annotations

from typing import Iterable

from ..grid import ACTIONS, SIZE, SPECIALS, Pos

VOCAB_VERSION = "gridvocab/1"

BEGIN = 0
CUE_BASE = 1
POS_BASE = CUE_BASE + 3
ACT_BASE = POS_BASE + SIZE * SIZE
VOCAB_SIZE = ACT_BASE + len(ACTIONS)
N_ACTIONS = len(ACTIONS)

CUES = ("A", "B", "C")
SPECIAL_IDS = tuple(ACTIONS.index(a) for a in SPECIALS)  # action indices 4, 5, 6


def cue_token(cue: str) -> int:
    return CUE_BASE + CUES.index(cue)


def pos_token(pos: Pos) -> int:
    return POS_BASE + pos[0] * SIZE + pos[1]


def action_index(label: str) -> int:
    return ACTIONS.index(label)


def action_token(label: str) -> int:
    return ACT_BASE + ACTIONS.index(label)


def action_token_from_index(k: int) -> int:
    return ACT_BASE + k


def encode_history(cue: str, steps: Iterable[tuple[Pos, str]], current: Pos,
                   max_len: int | None = None) -> list[int]:
    """``[begin, cue, pos0, act0, ..., pos_t]``; the last position asks for ``act_t``."""
    toks = [BEGIN, cue_token(cue)]
    for pos, act in steps:
        toks.append(pos_token(pos))
        toks.append(action_token(act))
    toks.append(pos_token(current))
    if max_len is not None and len(toks) > max_len:
        raise ValueError(f"history of {len(toks)} tokens exceeds max length {max_len}")
    return toks


def describe(tokens: Iterable[int]) -> list[str]:
    out = []
    for t in tokens:
        if t == BEGIN:
            out.append("<begin>")
        elif t < POS_BASE:
            out.append(f"cue-{CUES[t - CUE_BASE]}")
        elif t < ACT_BASE:
            k = t - POS_BASE
            out.append(f"({k // SIZE},{k % SIZE})")
        else:
            out.append(ACTIONS[t - ACT_BASE])
    return out
