"""Pre-training, pre-training validation, and the four-condition REINFORCE runs."""
from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ..grid import (BOTTOM_RIGHT, CENTER, PLAY_LENGTH, RL_EPISODE_CAP, TOP_LEFT, EpisodeRecord, play_dataset,
                    teacher_log_probs)
from ..seqpolicy import (AdamState, ModelConfig, NonFiniteError, PolicyNet, bc_loss, bc_step, load_model,
                         make_batch, prompt_forcing, reinforce_step, sample_episodes, save_model)
from ..seqpolicy.train import BC_LR, RL_LR

CONDITIONS = ("Pretrained-Think", "Pretrained-NoThink", "Scratch-Think", "Scratch-NoThink")
METRIC_COLUMNS = ("trial", "iteration", "success_rate", "thinking_fraction", "mean_length")
MODEL_FILE = "model.tmdp"


def default_out_dir() -> Path:
    return Path(os.environ.get("THOUGHTMDP_OUT", "runs"))


def condition_flags(condition: str) -> tuple[bool, bool]:
    """``(pretrained, thought_masked)`` for a condition name."""
    if condition not in CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}; expected one of {CONDITIONS}")
    return condition.startswith("Pretrained"), condition.endswith("NoThink")


def _from_dict(cls, d: dict):
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(extra)}")
    d = dict(d)
    if "model" in d and isinstance(d["model"], dict):
        d["model"] = ModelConfig.from_dict(d["model"])
    if "start" in d:
        d["start"] = tuple(d["start"])
    return cls(**d)


@dataclass(frozen=True)
class PretrainConfig:
    n_episodes: int = 5000
    episode_length: int = PLAY_LENGTH
    epochs: int = 10
    batch_size: int = 64
    lr: float = BC_LR
    holdout: float = 0.1
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self) -> None:
        for name in ("n_episodes", "episode_length", "epochs", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.holdout < 1.0:
            raise ValueError("holdout must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PretrainConfig":
        return _from_dict(cls, d)


@dataclass(frozen=True)
class ExperimentConfig:
    condition: str = "Pretrained-Think"
    iterations: int = 100
    episodes_per_iteration: int = 200
    trials: int = 5
    seed: int = 0
    lr: float = RL_LR
    cap: int = RL_EPISODE_CAP
    start: tuple[int, int] = CENTER
    pretrained_model: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    keep_episodes: bool = False

    def __post_init__(self) -> None:
        condition_flags(self.condition)
        for name in ("iterations", "episodes_per_iteration", "trials", "cap"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["start"] = list(self.start)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _from_dict(cls, d)


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def dataset_hash(episodes: list[EpisodeRecord]) -> str:
    h = hashlib.sha256()
    for ep in episodes:
        h.update(json.dumps(ep.to_dict(), sort_keys=True).encode())
    return h.hexdigest()


def mean_bc_loss(net: PolicyNet, episodes: list[EpisodeRecord], batch_size: int = 256) -> float:
    total = count = 0.0
    for i in range(0, len(episodes), batch_size):
        batch = make_batch(episodes[i:i + batch_size], net.cfg.max_len)
        loss, _ = bc_loss(net, batch, need_grad=False)
        total += loss * batch.n_actions
        count += batch.n_actions
    return total / count


def teacher_floor(episodes: list[EpisodeRecord]) -> float:
    """Per-step cross-entropy of the Bayes-optimal predictor of the play teacher."""
    return float(-np.mean(np.concatenate([teacher_log_probs(ep) for ep in episodes])))


@dataclass
class PretrainResult:
    net: PolicyNet
    manifest: dict
    loss_curve: list[tuple[int, int, float]]


def pretrain(cfg: PretrainConfig, out_dir: str | Path, log=print) -> PretrainResult:
    """Generate play data, behavior-clone it, and save model + manifest + loss curve."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data_ss, init_ss, shuffle_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    episodes = play_dataset(np.random.default_rng(data_ss), cfg.n_episodes, cfg.episode_length)
    n_hold = max(1, int(round(cfg.holdout * len(episodes))))
    train_eps, held_eps = episodes[:-n_hold], episodes[-n_hold:]
    net = PolicyNet.create(cfg.model, np.random.default_rng(init_ss))
    adam = AdamState(net.params)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    manifest = {
        "kind": "pretrain", "config": cfg.to_dict(), "status": "running",
        "seeds": {"root": cfg.seed, "streams": ["data", "init", "shuffle"]},
        "dataset": {"n_train": len(train_eps), "n_heldout": len(held_eps),
                    "sha256": dataset_hash(episodes)},
        "heldout_teacher_floor": teacher_floor(held_eps),
    }
    curve: list[tuple[int, int, float]] = []
    t0 = time.time()
    step = 0
    try:
        for epoch in range(cfg.epochs):
            order = shuffle_rng.permutation(len(train_eps))
            for i in range(0, len(order), cfg.batch_size):
                batch = make_batch([train_eps[j] for j in order[i:i + cfg.batch_size]], cfg.model.max_len)
                loss = bc_step(net, adam, batch, cfg.lr)
                curve.append((epoch, step, loss))
                step += 1
            held = mean_bc_loss(net, held_eps)
            log(f"epoch {epoch + 1}/{cfg.epochs}: train {np.mean([c[2] for c in curve if c[0] == epoch]):.4f}"
                f" heldout {held:.4f} (floor {manifest['heldout_teacher_floor']:.4f}) {time.time() - t0:.0f}s")
            manifest.setdefault("heldout_loss_by_epoch", []).append(held)
    except NonFiniteError as exc:
        manifest.update(status="diverged", error=str(exc), steps=step)
        _write_json(out / "manifest.json", manifest)
        raise
    manifest.update(status="ok", steps=step, final_heldout_loss=manifest["heldout_loss_by_epoch"][-1],
                    seconds=round(time.time() - t0, 1))
    with open(out / "bc_loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "step", "loss"])
        w.writerows((e, s, repr(l)) for e, s, l in curve)
    save_model(out / MODEL_FILE, net, adam, lineage={"pretrain_seed": cfg.seed,
                                                     "dataset_sha256": manifest["dataset"]["sha256"]})
    _write_json(out / "manifest.json", manifest)
    return PretrainResult(net, manifest, curve)


def _corner_hit_rate(episodes: list[EpisodeRecord], within: int) -> float:
    hits = 0
    for ep in episodes:
        hits += any(p in (BOTTOM_RIGHT, TOP_LEFT) for p in ep.positions()[1:within + 1])
    return hits / len(episodes)


def validate_pretrain(net: PolicyNet, seed: int = 0, n: int = 500, cap: int = RL_EPISODE_CAP,
                      start: tuple[int, int] = CENTER, corner_window: int = 15) -> dict:
    """success_C rates for free, prompted, and prompted + alternately masked rollouts."""
    ss = np.random.SeedSequence(seed).spawn(4)
    free = sample_episodes(net, np.random.default_rng(ss[0]), n, cap=cap, start=start)
    forced = sample_episodes(net, np.random.default_rng(ss[1]), n, cap=cap, start=start,
                             forcing=prompt_forcing())
    masked = sample_episodes(net, np.random.default_rng(ss[2]), n, cap=cap, start=start,
                             forcing=prompt_forcing(), step_mask=lambda t: t % 2 == 1)
    wander = sample_episodes(net, np.random.default_rng(ss[3]), n, cap=corner_window, start=start,
                             stop_on_success=False)
    rate = lambda eps: float(np.mean([ep.success for ep in eps]))
    return {"n": n, "cap": cap, "seed": seed,
            "free": rate(free), "forced": rate(forced), "forced_masked": rate(masked),
            "corner_within": corner_window, "corner_rate": _corner_hit_rate(wander, corner_window)}


def trial_seeds(seed: int, trial: int) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    """(init, sampling) streams for a trial; shared across conditions."""
    init_ss, sample_ss = np.random.SeedSequence(seed, spawn_key=(trial,)).spawn(2)
    return init_ss, sample_ss


def load_pretrained(path: str | Path, expected: ModelConfig | None = None) -> PolicyNet:
    net, _, _ = load_model(path, expected)
    return net


def run_trial(cfg: ExperimentConfig, trial: int, base: PolicyNet | None = None,
              episode_log=None) -> tuple[list[dict], PolicyNet]:
    pretrained, masked = condition_flags(cfg.condition)
    init_ss, sample_ss = trial_seeds(cfg.seed, trial)
    if pretrained:
        if base is None:
            raise ValueError(f"{cfg.condition} needs a pretrained model")
        net = base.copy()
    else:
        net = PolicyNet.create(cfg.model, np.random.default_rng(init_ss))
    adam = AdamState(net.params)
    rng = np.random.default_rng(sample_ss)
    rows = []
    for it in range(cfg.iterations):
        eps = sample_episodes(net, rng, cfg.episodes_per_iteration, cap=cfg.cap, start=cfg.start,
                              thought_masked=masked)
        stats = reinforce_step(net, adam, eps, cfg.lr, thought_masked=masked)
        rows.append({"trial": trial, "iteration": it, "success_rate": stats["mean_return"],
                     "thinking_fraction": stats["thinking_fraction"], "mean_length": stats["mean_length"]})
        if episode_log is not None:
            for k, ep in enumerate(eps):
                episode_log.write(json.dumps({"trial": trial, "iteration": it, "episode": k,
                                              **ep.to_dict()}) + "\n")
    return rows, net


def write_metrics(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([r["trial"], r["iteration"], repr(float(r["success_rate"])),
                        repr(float(r["thinking_fraction"])), repr(float(r["mean_length"]))])


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
            raise ValueError(f"{path}: columns {reader.fieldnames} != {list(METRIC_COLUMNS)}")
        return [{"trial": int(r["trial"]), "iteration": int(r["iteration"]),
                 "success_rate": float(r["success_rate"]), "thinking_fraction": float(r["thinking_fraction"]),
                 "mean_length": float(r["mean_length"])} for r in reader]


def train(cfg: ExperimentConfig, out_dir: str | Path, trials: list[int] | None = None, log=print) -> Path:
    """Run the trials of one condition; write one metrics CSV per trial, final models, and a manifest."""
    out = Path(out_dir) / cfg.condition
    out.mkdir(parents=True, exist_ok=True)
    pretrained, _ = condition_flags(cfg.condition)
    base = None
    if pretrained:
        if cfg.pretrained_model is None:
            raise ValueError(f"{cfg.condition} needs pretrained_model")
        base = load_pretrained(cfg.pretrained_model, cfg.model)
    manifest = {"kind": "train", "config": cfg.to_dict(), "trials": {}}
    prev_path = out / "manifest.json"
    if prev_path.exists():
        prev = json.loads(prev_path.read_text())
        # trials run separately under the same config accumulate in one manifest
        if prev.get("config") == manifest["config"]:
            manifest["trials"] = prev.get("trials", {})
    for trial in (trials if trials is not None else range(cfg.trials)):
        t0 = time.time()
        log_fh = open(out / f"episodes_trial{trial}.jsonl", "w") if cfg.keep_episodes else None
        try:
            rows, net = run_trial(cfg, trial, base, log_fh)
        finally:
            if log_fh is not None:
                log_fh.close()
        write_metrics(out / f"metrics_trial{trial}.csv", rows)
        save_model(out / f"model_trial{trial}.tmdp", net,
                   lineage={"seed": cfg.seed, "trial": trial, "condition": cfg.condition,
                            "pretrained_model": cfg.pretrained_model})
        best = max(r["success_rate"] for r in rows)
        log(f"{cfg.condition} trial {trial}: final success {rows[-1]['success_rate']:.3f}"
            f" best {best:.3f} thinking {rows[-1]['thinking_fraction']:.3f} {time.time() - t0:.0f}s")
        manifest["trials"][str(trial)] = {"seconds": round(time.time() - t0, 1)}
    _write_json(out / "manifest.json", manifest)
    return out
