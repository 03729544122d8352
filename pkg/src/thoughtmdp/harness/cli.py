"""Command-line entry point: ``thoughtmdp <group> <command> [options]``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..core import TabularPolicy, ThoughtMdp
from .experiment import (CONDITIONS, MODEL_FILE, ExperimentConfig, PretrainConfig, default_out_dir,
                         load_pretrained, pretrain, train, validate_pretrain)


def _load_config(cls, path: str | None, overrides: dict):
    base = json.loads(Path(path).read_text()) if path else {}
    base.update({k: v for k, v in overrides.items() if v is not None})
    return cls.from_dict(base)


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def cmd_chain_run(args) -> int:
    from ..chain import ChainSpec, reproduce_figure

    out = Path(args.out or default_out_dir() / "chain")
    trace = reproduce_figure(ChainSpec(args.states, args.gamma), args.snapshots, out, args.tie_break)
    final = trace.records[-1]
    print(json.dumps({"out": str(out), "improvement_steps": trace.n_improvements,
                      "final_thought_mass": float(final.policy.thought_mass().max()),
                      "final_values": final.values.v.tolist()}))
    return 0


def cmd_horizon_estimate(args) -> int:
    from ..horizon import LOG_BASE_NOTE, GoalThoughtMdp, estimate_goal_prob

    mdp = ThoughtMdp.load_json(args.mdp)
    policy = TabularPolicy.from_dict(json.loads(Path(args.policy).read_text()))
    if args.goals is not None:
        goals = args.goals
    else:
        goals = [s for s in range(mdp.n_env_states) if np.all(mdp.reward[s] == 1.0)]
    gmdp = GoalThoughtMdp(mdp, frozenset(goals))
    action = None
    if args.action is not None:
        names = list(mdp.env_action_names) + list(mdp.thought_action_names)
        if args.action not in names:
            raise SystemExit(f"unknown action {args.action!r}; choose from {names}")
        action = mdp.action_ref(names.index(args.action))
    est = estimate_goal_prob(gmdp, policy, args.state, args.tau, action, args.T, args.rollouts,
                             np.random.default_rng(args.seed))
    print(json.dumps({"state": [args.state, args.tau], "action": args.action, "T": args.T,
                      "seed": args.seed, "goals": sorted(goals), "n_actions": mdp.n_actions,
                      "log_convention": LOG_BASE_NOTE, **est.to_dict()}))
    return 0


def cmd_grid_pretrain(args) -> int:
    cfg = _load_config(PretrainConfig, args.config, {"seed": args.seed, "n_episodes": args.episodes,
                                                     "epochs": args.epochs})
    out = Path(args.out or default_out_dir() / "pretrain")
    res = pretrain(cfg, out, log=lambda m: print(m, file=sys.stderr))
    print(json.dumps({"model": str(out / MODEL_FILE), "final_heldout_loss": res.manifest["final_heldout_loss"],
                      "heldout_teacher_floor": res.manifest["heldout_teacher_floor"]}))
    return 0


def cmd_grid_validate(args) -> int:
    net = load_pretrained(args.model)
    rep = validate_pretrain(net, seed=args.seed, n=args.episodes,
                           **({"cap": args.cap} if args.cap is not None else {}))
    if args.out:
        Path(args.out).write_text(json.dumps(rep, indent=2) + "\n")
    print(json.dumps(rep))
    return 0


def cmd_grid_train(args) -> int:
    overrides = {"condition": args.condition, "seed": args.seed, "iterations": args.iterations,
                 "trials": args.trials, "episodes_per_iteration": args.episodes, "lr": args.lr,
                 "cap": args.cap, "pretrained_model": args.model}
    if args.keep_episodes:
        overrides["keep_episodes"] = True
    cfg = _load_config(ExperimentConfig, args.config, overrides)
    if cfg.condition.startswith("Pretrained") and cfg.pretrained_model is None:
        guess = default_out_dir() / "pretrain" / MODEL_FILE
        if guess.exists():
            cfg = replace(cfg, pretrained_model=str(guess))
    out = train(cfg, args.out or default_out_dir() / "train", trials=args.trial,
                log=lambda m: print(m, file=sys.stderr))
    print(json.dumps({"out": str(out)}))
    return 0


def cmd_report(args) -> int:
    from .report import report

    run_dir = Path(args.runs or default_out_dir() / "train")
    out = report(run_dir, args.out)
    print(json.dumps({"out": str(out)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thoughtmdp", description=__doc__)
    groups = p.add_subparsers(dest="group", required=True)

    chain = groups.add_parser("chain", help="two-row chain policy iteration").add_subparsers(dest="cmd", required=True)
    c = chain.add_parser("run", help="run monitored policy iteration and render snapshots")
    c.add_argument("--states", type=int, default=10, help="env states in the corridor")
    c.add_argument("--gamma", type=float, default=0.9)
    c.add_argument("--snapshots", type=_int_list, default=[1, 4, 10], help="comma-separated, e.g. 1,4,10")
    c.add_argument("--tie-break", default="keep-current", choices=["keep-current", "env-first"])
    c.add_argument("--out")
    c.set_defaults(func=cmd_chain_run)

    horizon = groups.add_parser("horizon", help="goal-discovery estimates").add_subparsers(dest="cmd", required=True)
    h = horizon.add_parser("estimate", help="Monte Carlo goal probability and horizon bound")
    h.add_argument("--mdp", required=True, help="thought MDP JSON")
    h.add_argument("--policy", required=True, help="policy JSON")
    h.add_argument("--T", type=int, default=20)
    h.add_argument("--rollouts", type=int, default=100_000)
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--state", type=int, default=0)
    h.add_argument("--tau", type=int, default=0)
    h.add_argument("--action", help="action name forced at the first step")
    h.add_argument("--goals", type=int, nargs="+", help="goal env states (default: states rewarding 1 everywhere)")
    h.set_defaults(func=cmd_horizon_estimate)

    grid = groups.add_parser("grid", help="gridworld sequence-policy experiments").add_subparsers(dest="cmd", required=True)
    g = grid.add_parser("pretrain", help="behavior-clone the play teacher")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--episodes", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--out")
    g.set_defaults(func=cmd_grid_pretrain)

    g = grid.add_parser("validate-pretrain", help="prompted rollouts of a pretrained model")
    g.add_argument("--model", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--episodes", type=int, default=500)
    g.add_argument("--cap", type=int, help="episode step cap")
    g.add_argument("--out")
    g.set_defaults(func=cmd_grid_validate)

    g = grid.add_parser("train", help="REINFORCE on task C")
    g.add_argument("--condition", choices=CONDITIONS)
    g.add_argument("--config")
    g.add_argument("--model", help="pretrained model path")
    g.add_argument("--seed", type=int)
    g.add_argument("--iterations", type=int)
    g.add_argument("--trials", type=int)
    g.add_argument("--trial", type=int, nargs="+", help="run only these trial indices")
    g.add_argument("--episodes", type=int, help="episodes per iteration")
    g.add_argument("--lr", type=float)
    g.add_argument("--cap", type=int, help="episode step cap")
    g.add_argument("--keep-episodes", action="store_true")
    g.add_argument("--out")
    g.set_defaults(func=cmd_grid_train)

    r = groups.add_parser("report", help="aggregate metrics with bootstrap bands")
    r.add_argument("--runs")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
