"""Batching, behavior cloning, REINFORCE, and batched episode sampling."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..grid import (ACTIONS, BOTTOM_RIGHT, CENTER, DELTAS, RL_EPISODE_CAP, TOP_LEFT, EpisodeRecord,
                    Pos, success_C)
from .adam import AdamState
from .model import PolicyNet, mask_thought
from .vocab import ACT_BASE, BEGIN, CUE_BASE, CUES, POS_BASE, SIZE, action_index, action_token, cue_token, pos_token

BC_LR = 1e-4
RL_LR = 1e-5


@dataclass
class TrainBatch:
    tokens: np.ndarray       # (B, L) int64, padded with BEGIN
    targets: np.ndarray      # (B, L) action index predicted at each position
    action_mask: np.ndarray  # (B, L) bool, True where the agent's next action is predicted
    pad_mask: np.ndarray     # (B, L) bool, True on real tokens

    def __post_init__(self) -> None:
        shapes = {a.shape for a in (self.tokens, self.targets, self.action_mask, self.pad_mask)}
        if len(shapes) != 1:
            raise ValueError("batch arrays must share one shape")
        if self.action_mask.dtype != bool or self.pad_mask.dtype != bool:
            raise TypeError("masks must be boolean")
        if np.any(self.action_mask & ~self.pad_mask):
            raise ValueError("action positions must lie on real tokens")

    @property
    def n_actions(self) -> int:
        return int(self.action_mask.sum())


def action_positions(n_steps: int) -> np.ndarray:
    """Index of the position token from which step ``t`` is predicted."""
    return 2 + 2 * np.arange(n_steps)


def make_batch(episodes: Sequence[EpisodeRecord], max_len: int = 128) -> TrainBatch:
    if not episodes:
        raise ValueError("batch must be nonempty")
    lengths = [2 * ep.length + 3 for ep in episodes]
    L = max(lengths)
    if L > max_len:
        raise ValueError(f"episode of {L} tokens exceeds max length {max_len}")
    B = len(episodes)
    tokens = np.full((B, L), BEGIN, dtype=np.int64)
    targets = np.zeros((B, L), dtype=np.int64)
    amask = np.zeros((B, L), dtype=bool)
    pmask = np.zeros((B, L), dtype=bool)
    for b, ep in enumerate(episodes):
        row = [BEGIN, cue_token(ep.cue)]
        for t, (pos, act) in enumerate(ep.steps):
            targets[b, len(row)] = action_index(act)
            amask[b, len(row)] = True
            row += [pos_token(pos), action_token(act)]
        row.append(pos_token(ep.final_pos if ep.final_pos is not None else ep.steps[-1][0]))
        tokens[b, :len(row)] = row
        pmask[b, :len(row)] = True
    return TrainBatch(tokens, targets, amask, pmask)


def bc_loss(net: PolicyNet, batch: TrainBatch, need_grad: bool = True):
    """Mean cross-entropy over the action positions of ``batch``."""
    w = batch.action_mask / max(batch.n_actions, 1)
    return net.loss_and_grad(batch.tokens, batch.targets, w, need_grad=need_grad)


def bc_step(net: PolicyNet, adam: AdamState, batch: TrainBatch, lr: float = BC_LR) -> float:
    if batch.n_actions == 0:
        raise ValueError("batch has no action positions")
    loss, grads = bc_loss(net, batch)
    adam.update(net.params, grads, lr)
    return loss


def thinking_fraction(episodes: Sequence[EpisodeRecord]) -> float:
    total = sum(ep.length for ep in episodes)
    return sum(ep.n_special for ep in episodes) / total if total else 0.0


def reinforce_loss(net: PolicyNet, episodes: Sequence[EpisodeRecord],
                   thought_masked: bool = False, need_grad: bool = True):
    """``-(1/N) sum_i G_i sum_t log pi(a_t | h_t)`` and its gradient.

    Episodes with zero return contribute nothing and are never run through
    the network; with no rewarded episode the gradient is exactly zero.
    """
    for ep in episodes:
        if not ep.replays():
            raise ValueError("episode history does not replay under the grid dynamics")
        if thought_masked and ep.n_special:
            raise ValueError("masked episode contains a special action")
    N = len(episodes)
    if N == 0:
        raise ValueError("no episodes")
    paid = [ep for ep in episodes if ep.reward != 0]
    if not paid:
        return 0.0, {k: np.zeros_like(v) for k, v in net.params.items()}
    batch = make_batch(paid, net.cfg.max_len)
    G = np.array([ep.reward for ep in paid], dtype=np.float64)
    w = batch.action_mask * (G / N)[:, None]
    return net.loss_and_grad(batch.tokens, batch.targets, w, thought_masked=thought_masked,
                             need_grad=need_grad)


def reinforce_step(net: PolicyNet, adam: AdamState, episodes: Sequence[EpisodeRecord],
                   lr: float = RL_LR, thought_masked: bool = False) -> dict:
    loss, grads = reinforce_loss(net, episodes, thought_masked)
    updated = adam.update(net.params, grads, lr)
    return {"surrogate_loss": loss, "updated": updated,
            "mean_return": float(np.mean([ep.reward for ep in episodes])),
            "thinking_fraction": thinking_fraction(episodes),
            "mean_length": float(np.mean([ep.length for ep in episodes]))}


# -- sampling ---------------------------------------------------------------

StepMask = Callable[[int], bool]
Forcing = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


def _draw(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    cdf /= cdf[:, -1:]
    # first index whose cdf exceeds u; zero-probability entries are never chosen
    return np.minimum((cdf <= u[:, None]).sum(axis=-1), probs.shape[-1] - 1)


def prompt_forcing(first: str = "A", on_reach: tuple[Pos, str] = (BOTTOM_RIGHT, "B")) -> Forcing:
    """Force ``first`` at step 0 and ``on_reach[1]`` on first arrival at ``on_reach[0]``."""
    target = on_reach[0][0] * SIZE + on_reach[0][1]
    first_k, reach_k = action_index(first), action_index(on_reach[1])

    def force(t: int, pos_ids: np.ndarray, state: np.ndarray) -> np.ndarray:
        # state: per-episode flag, set once the reach-forcing has fired
        out = np.full(pos_ids.shape, -1, dtype=np.int64)
        if t == 0:
            out[:] = first_k
        hit = (pos_ids == target) & ~state
        out[hit] = reach_k
        state |= hit
        return out

    return force


def sample_episodes(net: PolicyNet, rng: np.random.Generator, n: int, cue: str = "C",
                    start: Pos = CENTER, cap: int = RL_EPISODE_CAP, thought_masked: bool = False,
                    step_mask: StepMask | None = None, forcing: Forcing | None = None,
                    stop_on_success: bool = True) -> list[EpisodeRecord]:
    """Roll out ``n`` episodes in lockstep with a shared key/value cache.

    ``thought_masked`` masks special actions at every step; ``step_mask(t)``
    masks them at selected steps.  ``forcing`` may override sampled actions.
    An episode ends with reward 1 as soon as task C is completed (when
    ``stop_on_success``) or with reward 0 at ``cap`` steps.  One uniform is
    drawn per episode per step.
    """
    if 2 * cap + 3 > net.cfg.max_len:
        raise ValueError(f"cap {cap} does not fit max_len {net.cfg.max_len}")
    if cue not in CUES:
        raise ValueError(f"unknown cue {cue!r}")
    pos = np.full(n, start[0] * SIZE + start[1], dtype=np.int64)
    cache = net.start_decode(n)
    logits = cache.feed(np.stack([np.full(n, BEGIN), np.full(n, CUE_BASE + CUES.index(cue)),
                                  POS_BASE + pos], axis=1))[:, -1]
    eps = [EpisodeRecord(cue) for _ in range(n)]
    alive = np.ones(n, dtype=bool)
    force_state = np.zeros(n, dtype=bool)
    moves = np.array([DELTAS.get(a, (0, 0)) for a in ACTIONS])
    br = BOTTOM_RIGHT[0] * SIZE + BOTTOM_RIGHT[1]
    tl = TOP_LEFT[0] * SIZE + TOP_LEFT[1]
    seen_br = pos == br
    for t in range(cap):
        lg = logits.astype(np.float64)
        if thought_masked or (step_mask is not None and step_mask(t)):
            lg = mask_thought(lg)
        z = lg - lg.max(axis=-1, keepdims=True)
        probs = np.exp(z)
        probs /= probs.sum(axis=-1, keepdims=True)
        act = _draw(probs, rng.random(n))
        if forcing is not None:
            forced = forcing(t, pos, force_state)
            act = np.where(forced >= 0, forced, act)
        r, c = np.divmod(pos, SIZE)
        r = np.clip(r + moves[act, 0], 0, SIZE - 1)
        c = np.clip(c + moves[act, 1], 0, SIZE - 1)
        new_pos = r * SIZE + c
        for i in np.flatnonzero(alive):
            p = divmod(int(pos[i]), SIZE)
            eps[i].steps.append((p, ACTIONS[act[i]]))
        done_now = seen_br & (new_pos == tl) & alive
        seen_br |= new_pos == br
        for i in np.flatnonzero(alive):
            eps[i].final_pos = divmod(int(new_pos[i]), SIZE)
        for i in np.flatnonzero(done_now):
            eps[i].success = True
            eps[i].reward = 1
        if stop_on_success:
            alive &= ~done_now
        pos = new_pos
        if not alive.any() or t == cap - 1:
            break
        logits = cache.feed(np.stack([act + ACT_BASE, POS_BASE + pos], axis=1))[:, -1]
    if not stop_on_success:
        for ep in eps:
            ep.success = success_C(ep)
            ep.reward = int(ep.success)
    return eps
