"""Acceptance gate: one verdict line per criterion, tolerances pinned below.

Gridworld criteria read the stored campaign under ``results/`` (override with
``THOUGHTMDP_RESULTS``); regenerate it with the commands in the README.
"""
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest
from acceptance_log import not_run, verdict

from thoughtmdp.chain import RIGHT, ChainSpec, build_chain, run_chain, thought_states_in_row
from thoughtmdp.core import random_policy, random_thought_mdp
from thoughtmdp.grid import CENTER, episode_from_actions, iter_optimal_C, play_dataset
from thoughtmdp.harness.experiment import read_metrics, validate_pretrain
from thoughtmdp.horizon import thinking_discovery_campaign
from thoughtmdp.seqpolicy import ModelConfig, PolicyNet, bc_loss, grad_check, load_model, make_batch, reinforce_loss
from thoughtmdp.solver import MonitorViolation, evaluate_policy, policy_iteration, verify_no_thought_optimal

RESULTS = Path(os.environ.get("THOUGHTMDP_RESULTS", Path(__file__).resolve().parents[1] / "results"))

CHAIN_VALUE_TOL = 1e-8
CHAIN_RUNTIME_S = 1.0
N_RANDOM_MDPS = 100
CAMPAIGN_RUNTIME_S = 30.0
MONOTONE_TOL = 1e-10
GRID_SUCCESS = 0.8
GRID_SUCCESS_WITHIN = 50
SCRATCH_CEILING = 0.05
MIN_TRIALS_OK = 4
THINK_START = (0.2, 0.4)
THINK_END = (0.05, 0.25)
PROMPT_MASK_SUCCESS = 0.95
GRADCHECK_TOL = 1e-3
EXACT_ITERATIVE_TOL = 1e-8
BC_HELDOUT_TARGET = 0.3
CORNER_RATE = 0.8

TINY = ModelConfig(d_model=8, n_layers=1, n_heads=2, d_ff=16, init_scale=0.5, dtype="float64")


def test_criterion_1_chain_reproduction():
    t0 = time.perf_counter()
    mdp, pol, vals, trace = run_chain()
    elapsed = time.perf_counter() - t0
    step1 = trace.snapshot(1).policy.choice
    first_ok = all(step1[s, 0] == mdp.n_env_actions + 0 for s in range(8)) and step1[8, 0] == RIGHT
    no_thought = not thought_states_in_row(pol, mdp, 0) and not thought_states_in_row(pol, mdp, 1)
    all_right = bool(np.all(pol.choice[:9] == RIGHT))
    expected = np.array([mdp.discount ** (8 - s) for s in range(9)])
    err = float(np.abs(vals.v[:9] - expected[:, None]).max())
    ok = (first_ok and no_thought and all_right and trace.n_improvements <= 10
          and err <= CHAIN_VALUE_TOL and elapsed < CHAIN_RUNTIME_S)
    verdict("CRITERION 1 chain reproduction", ok,
            f"step-1 thinks at 0..7 and goes right at 8: {first_ok}; improvements {trace.n_improvements} <= 10;"
            f" converged all-right {all_right}, thought-free {no_thought}; value err {err:.1e} <= 1e-8;"
            f" {elapsed:.3f}s < 1s")
    assert ok


@pytest.fixture(scope="module")
def random_campaign():
    runs, violations = [], []
    t0 = time.perf_counter()
    for seed in range(N_RANDOM_MDPS):
        rng = np.random.default_rng(seed)
        mdp = random_thought_mdp(rng, max_env_states=6, max_thought_states=3)
        init = random_policy(rng, mdp, stochastic=bool(seed % 2))
        try:
            runs.append((mdp,) + policy_iteration(mdp, init, monitor=True))
        except MonitorViolation as exc:
            violations.append((seed, str(exc)))
    return runs, violations, time.perf_counter() - t0


def test_criterion_2_monitors(random_campaign):
    runs, violations, elapsed = random_campaign
    ok = not violations and len(runs) >= N_RANDOM_MDPS and elapsed < CAMPAIGN_RUNTIME_S
    verdict("CRITERION 2 improvement monitors", ok,
            f"{len(runs)} random MDPs, {len(violations)} monitor violations, {elapsed:.1f}s < 30s")
    assert ok, violations[:3]


def test_criterion_3_no_thought_at_optimum(random_campaign):
    runs, _, _ = random_campaign
    bad = [i for i, (mdp, pol, vals, _) in enumerate(runs) if not verify_no_thought_optimal(mdp, pol, vals).passed]
    verdict("CRITERION 3 converged policies are thought-free", not bad,
            f"{len(bad)} exceptions over {len(runs)} converged policies")
    assert not bad


def test_criterion_4_monotone_improvement(random_campaign):
    runs, _, _ = random_campaign
    worst = 0.0
    for _, _, _, trace in runs:
        for a, b in zip(trace.records, trace.records[1:]):
            worst = max(worst, float((a.values.v - b.values.v).max()))
    ok = worst <= MONOTONE_TOL
    verdict("CRITERION 4 monotone improvement", ok, f"largest value decrease {worst:.1e} <= 1e-10")
    assert ok


def test_criterion_5_effective_horizon():
    res = thinking_discovery_campaign(seed=0)
    premise = res.pc * res.p1 > res.p0
    smaller = res.record.bound_with < res.record.bound_without
    ok = premise and smaller and res.sample_counts_lower
    verdict("CRITERION 5 effective horizon", ok,
            f"pc*p1 {res.pc * res.p1:.4f} > p0 {res.p0:.4f}: {premise}; bound {res.record.bound_with:.3f}"
            f" < {res.record.bound_without:.3f}: {smaller}; episodes to discovery"
            f" {res.count_think[0]:.1f} [{res.count_think[1]:.1f}, {res.count_think[2]:.1f}] vs"
            f" {res.count_plain[0]:.1f} [{res.count_plain[1]:.1f}, {res.count_plain[2]:.1f}]")
    assert ok


def _campaign(condition):
    files = sorted((RESULTS / "train" / condition).glob("metrics_trial*.csv"))
    return {int(f.stem.removeprefix("metrics_trial")): read_metrics(f) for f in files}


@pytest.fixture(scope="module")
def grid_runs():
    runs = {c: _campaign(c) for c in ("Pretrained-Think", "Pretrained-NoThink", "Scratch-Think", "Scratch-NoThink")}
    if any(len(r) < 5 for r in runs.values()):
        not_run("CRITERION 6 gridworld learning", f"campaign results missing under {RESULTS / 'train'}")
        pytest.skip("gridworld campaign results not present")
    return runs


def test_criterion_6_gridworld_learning(grid_runs):
    think, nothink = grid_runs["Pretrained-Think"], grid_runs["Pretrained-NoThink"]
    reached = {t: max(r["success_rate"] for r in rows[:GRID_SUCCESS_WITHIN]) for t, rows in think.items()}
    a_ok = sum(v >= GRID_SUCCESS for v in reached.values()) >= MIN_TRIALS_OK
    finals = {c: [rows[-1]["success_rate"] for rows in grid_runs[c].values()]
              for c in ("Scratch-Think", "Scratch-NoThink")}
    b_ok = all(v <= SCRATCH_CEILING for vs in finals.values() for v in vs)
    auc = {c: {t: float(np.mean([r["success_rate"] for r in rows])) for t, rows in grid_runs[c].items()}
           for c in grid_runs}
    wins = sum(auc["Pretrained-Think"][t] > auc["Pretrained-NoThink"][t] for t in think)
    c_ok = wins >= MIN_TRIALS_OK
    start = float(np.mean([rows[0]["thinking_fraction"] for rows in think.values()]))
    end = float(np.mean([rows[-1]["thinking_fraction"] for rows in think.values()]))
    d_ok = THINK_START[0] <= start <= THINK_START[1] and THINK_END[0] <= end <= THINK_END[1]
    mean_auc = {c: np.mean(list(v.values())) for c, v in auc.items()}
    order_ok = mean_auc["Pretrained-Think"] > mean_auc["Pretrained-NoThink"] > max(
        mean_auc["Scratch-Think"], mean_auc["Scratch-NoThink"])
    verdict("CRITERION 6a Pretrained-Think >= 0.8 within 50 iterations", a_ok,
            f"best success per trial {[round(v, 3) for v in reached.values()]}, need >= 4/5")
    verdict("CRITERION 6b Scratch <= 0.05 at final iteration", b_ok,
            "; ".join(f"{c} {[round(v, 3) for v in vs]}" for c, vs in finals.items()))
    verdict("CRITERION 6c Think AUC > NoThink AUC", c_ok,
            f"{wins}/5 trials; AUC think {[round(v, 3) for v in auc['Pretrained-Think'].values()]}"
            f" nothink {[round(v, 3) for v in auc['Pretrained-NoThink'].values()]}")
    verdict("CRITERION 6d thinking fraction start/end", d_ok,
            f"start {start:.3f} in [0.2, 0.4], end {end:.3f} in [0.05, 0.25]")
    verdict("SUPPLEMENT report ordering Think > NoThink > Scratch", bool(order_ok),
            ", ".join(f"{c} {v:.3f}" for c, v in mean_auc.items()))
    assert a_ok and b_ok and c_ok and d_ok


@pytest.fixture(scope="module")
def pretrained():
    path = RESULTS / "pretrain" / "model.tmdp"
    if not path.exists():
        not_run("CRITERION 7 prompted validation", f"no pretrained model at {path}")
        pytest.skip("pretrained model not present")
    net, _, _ = load_model(path)
    manifest = json.loads((RESULTS / "pretrain" / "manifest.json").read_text())
    return net, manifest


def test_criterion_7_prompted_validation(pretrained):
    net, _ = pretrained
    rep = validate_pretrain(net, seed=0, n=500)
    forced_beats_free = rep["forced"] > rep["free"]
    ok = rep["forced_masked"] >= PROMPT_MASK_SUCCESS and forced_beats_free
    verdict("CRITERION 7 prompted validation", ok,
            f"cap {rep['cap']}: forced+mask {rep['forced_masked']:.3f} >= 0.95; forced {rep['forced']:.3f}"
            f" > free {rep['free']:.3f}: {forced_beats_free}")
    verdict("SUPPLEMENT free rollouts reach a corner within 15 steps", rep["corner_rate"] >= CORNER_RATE,
            f"{rep['corner_rate']:.3f} >= 0.8 over 500 rollouts")
    assert ok


def test_pretrain_heldout_loss(pretrained):
    _, manifest = pretrained
    loss, floor = manifest["final_heldout_loss"], manifest["heldout_teacher_floor"]
    ok = loss < BC_HELDOUT_TARGET
    verdict("SUPPLEMENT pretrain held-out BC loss < 0.3", ok,
            f"{loss:.4f}; the play teacher's own entropy puts the floor at {floor:.4f} (gap {loss - floor:.4f})")
    assert ok


def test_criterion_8_numerics():
    m = PolicyNet.create(TINY, np.random.default_rng(0))
    batch = make_batch(play_dataset(np.random.default_rng(1), 3, length=6))
    bc_err = grad_check(m.params, lambda p: bc_loss(m, batch), eps=1e-4, fraction=0.3)
    eps = [episode_from_actions("C", iter_optimal_C(CENTER)), episode_from_actions("C", ["up"] * 4)]
    rl_err = grad_check(m.params, lambda p: reinforce_loss(m, eps), eps=1e-4, fraction=0.3)
    worst, largest = 0.0, 0
    instances = [random_thought_mdp(np.random.default_rng(1000 + seed)) for seed in range(37)]
    instances += [build_chain(ChainSpec(n, 0.95))[0] for n in (50, 200, 1000)]
    for k, mdp in enumerate(instances):
        pol = random_policy(np.random.default_rng(k), mdp, stochastic=True)
        ex = evaluate_policy(mdp, pol, method="exact")
        it = evaluate_policy(mdp, pol, method="iterative")
        worst = max(worst, ex.sup_distance(it))
        largest = max(largest, mdp.n_env_states * mdp.n_thought_states)
    ok = bc_err < GRADCHECK_TOL and rl_err < GRADCHECK_TOL and worst <= EXACT_ITERATIVE_TOL
    verdict("CRITERION 8 numerics", ok,
            f"gradcheck BC {bc_err:.1e}, REINFORCE {rl_err:.1e} < 1e-3; iterative vs exact {worst:.1e} <= 1e-8"
            f" over {len(instances)} instances up to {largest} joint states")
    assert ok
