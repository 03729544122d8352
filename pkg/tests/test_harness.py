import json
from dataclasses import replace

import numpy as np
import pytest

from thoughtmdp.grid import EpisodeRecord
from thoughtmdp.harness.cli import main
from thoughtmdp.harness.experiment import (CONDITIONS, METRIC_COLUMNS, ExperimentConfig, PretrainConfig,
                                           condition_flags, pretrain, read_metrics, train, trial_seeds,
                                           validate_pretrain)
from thoughtmdp.harness.report import (aggregate, bootstrap_ci, load_runs, metric_matrix, report,
                                       trial_auc)
from thoughtmdp.seqpolicy import ModelConfig, PolicyNet, save_model

SMALL = ModelConfig(d_model=16, n_layers=1, n_heads=2, d_ff=32)


def small_cfg(condition, model_path=None, **kw):
    base = dict(condition=condition, iterations=3, episodes_per_iteration=12, trials=2, cap=12,
                lr=1e-3, model=SMALL, pretrained_model=model_path, keep_episodes=True)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def small_model(tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "model.tmdp"
    save_model(path, PolicyNet.create(SMALL, np.random.default_rng(0)))
    return str(path)


@pytest.fixture(scope="module")
def small_runs(tmp_path_factory, small_model):
    out = tmp_path_factory.mktemp("runs")
    for cond in CONDITIONS:
        train(small_cfg(cond, small_model), out, log=lambda m: None)
    return out


def episodes(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_condition_flags():
    assert condition_flags("Pretrained-NoThink") == (True, True)
    assert condition_flags("Scratch-Think") == (False, False)
    with pytest.raises(ValueError):
        condition_flags("Other")


def test_config_round_trip_and_unknown_fields():
    cfg = small_cfg("Scratch-Think")
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError, match="unknown"):
        ExperimentConfig.from_dict({"conditon": "Scratch-Think"})
    assert PretrainConfig.from_dict(PretrainConfig().to_dict()) == PretrainConfig()


def test_trial_seeds_shared_across_conditions_distinct_across_trials():
    a = [np.random.default_rng(s).random() for s in trial_seeds(0, 1)]
    b = [np.random.default_rng(s).random() for s in trial_seeds(0, 1)]
    c = [np.random.default_rng(s).random() for s in trial_seeds(0, 2)]
    assert a == b and a != c and a[0] != a[1]


def test_metrics_csv_columns(small_runs):
    for cond in CONDITIONS:
        header = (small_runs / cond / "metrics_trial0.csv").read_text().splitlines()[0]
        assert tuple(header.split(",")) == METRIC_COLUMNS
        rows = read_metrics(small_runs / cond / "metrics_trial1.csv")
        assert [r["iteration"] for r in rows] == [0, 1, 2]
        assert all(0.0 <= r["success_rate"] <= 1.0 for r in rows)


def test_read_metrics_rejects_bad_columns(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("trial,iteration,success\n0,0,1\n")
    with pytest.raises(ValueError):
        read_metrics(p)


def test_training_is_deterministic(small_runs, small_model, tmp_path):
    train(small_cfg("Pretrained-Think", small_model), tmp_path, log=lambda m: None)
    for k in (0, 1):
        name = f"Pretrained-Think/metrics_trial{k}.csv"
        assert (tmp_path / name).read_bytes() == (small_runs / name).read_bytes()


def test_nothink_emits_no_specials(small_runs):
    for cond in ("Pretrained-NoThink", "Scratch-NoThink"):
        for rec in episodes(small_runs / cond / "episodes_trial0.jsonl"):
            assert EpisodeRecord.from_dict(rec).n_special == 0


def test_thinking_fraction_recomputes_from_episodes(small_runs):
    cond = small_runs / "Scratch-Think"
    recs = episodes(cond / "episodes_trial0.jsonl")
    for row in read_metrics(cond / "metrics_trial0.csv"):
        eps = [EpisodeRecord.from_dict(r) for r in recs if r["iteration"] == row["iteration"]]
        frac = sum(e.n_special for e in eps) / sum(e.length for e in eps)
        assert abs(frac - row["thinking_fraction"]) <= 1e-12
        assert abs(np.mean([e.reward for e in eps]) - row["success_rate"]) <= 1e-12


def test_partial_runs_accumulate_in_manifest(small_model, tmp_path):
    cfg = small_cfg("Scratch-Think", iterations=1, keep_episodes=False)
    train(cfg, tmp_path, trials=[0], log=lambda m: None)
    train(cfg, tmp_path, trials=[1], log=lambda m: None)
    man = json.loads((tmp_path / "Scratch-Think" / "manifest.json").read_text())
    assert sorted(man["trials"]) == ["0", "1"]


def test_pretrained_condition_requires_model(tmp_path):
    with pytest.raises(ValueError):
        train(small_cfg("Pretrained-Think", None), tmp_path, log=lambda m: None)


def test_bootstrap_degenerate_cases():
    rng = np.random.default_rng(0)
    assert bootstrap_ci(np.full(5, 0.4), rng) == (0.4, 0.4, 0.4)
    assert bootstrap_ci(np.array([0.7]), rng) == (0.7, 0.7, 0.7)
    m, lo, hi = bootstrap_ci(np.array([0.0, 1.0, 0.5, 0.25]), rng)
    assert lo <= m <= hi and lo < hi


def test_mismatched_iteration_grids_raise():
    rows = [{"trial": 0, "iteration": 0, "success_rate": 0.0}, {"trial": 1, "iteration": 1, "success_rate": 0.0}]
    with pytest.raises(ValueError):
        metric_matrix(rows, "success_rate")


def test_trial_auc():
    rows = [{"trial": t, "iteration": i, "success_rate": float(t * i)} for t in (0, 1) for i in range(3)]
    assert trial_auc(rows) == {0: 0.0, 1: 1.0}


def test_report_outputs(small_runs, tmp_path):
    out = report(small_runs, tmp_path)
    assert (out / "aggregate.csv").exists()
    for metric in ("success_rate", "thinking_fraction", "mean_length"):
        assert "<svg" in (out / f"{metric}.svg").read_text()
    agg = aggregate(load_runs(small_runs))
    assert agg == aggregate(load_runs(small_runs))
    assert {r["condition"] for r in agg} == set(CONDITIONS)
    assert all(r["ci_low"] <= r["mean"] <= r["ci_high"] for r in agg)


def test_pretrain_and_validate_small(tmp_path):
    cfg = PretrainConfig(n_episodes=30, epochs=1, batch_size=16, model=SMALL)
    res = pretrain(cfg, tmp_path, log=lambda m: None)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"] == "ok" and man["dataset"]["n_heldout"] == 3
    assert man["heldout_teacher_floor"] > 0.5
    assert (tmp_path / "bc_loss.csv").read_text().startswith("epoch,step,loss")
    rep = validate_pretrain(res.net, n=20, cap=12)
    assert set(rep) >= {"free", "forced", "forced_masked", "corner_rate"}


def test_cli_chain_and_report(small_runs, tmp_path, capsys):
    assert main(["chain", "run", "--out", str(tmp_path / "chain")]) == 0
    assert (tmp_path / "chain" / "trace.csv").exists()
    assert main(["report", "--runs", str(small_runs), "--out", str(tmp_path / "rep")]) == 0
    assert json.loads(capsys.readouterr().out.splitlines()[-1])["out"] == str(tmp_path / "rep")


def test_cli_grid_train(small_model, tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(replace(small_cfg("Scratch-NoThink"), keep_episodes=False).to_dict()))
    assert main(["grid", "train", "--config", str(cfg_path), "--iterations", "2", "--trial", "0",
                 "--out", str(tmp_path / "runs")]) == 0
    rows = read_metrics(tmp_path / "runs" / "Scratch-NoThink" / "metrics_trial0.csv")
    assert len(rows) == 2 and all(r["thinking_fraction"] == 0.0 for r in rows)


def test_cli_horizon_estimate(tmp_path, capsys):
    from thoughtmdp.horizon import goal_chain, split_policies

    g = goal_chain(5)
    think, _ = split_policies(g)
    g.mdp.save_json(tmp_path / "mdp.json")
    (tmp_path / "pol.json").write_text(json.dumps(think.to_dict()))
    assert main(["horizon", "estimate", "--mdp", str(tmp_path / "mdp.json"), "--policy",
                 str(tmp_path / "pol.json"), "--T", "8", "--rollouts", "2000", "--goals", *map(str, sorted(g.goals))]) == 0
    out = json.loads(capsys.readouterr().out)
    assert 0.0 <= out["p_hat"] <= 1.0
