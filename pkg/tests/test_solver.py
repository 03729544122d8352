import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from oracles import naive_policy_values, optimal_values

from thoughtmdp import kernels
from thoughtmdp.chain import ChainSpec, build_chain
from thoughtmdp.core import TabularPolicy, ThoughtMdp, random_policy, random_thought_mdp
from thoughtmdp.solver import (ConvergenceError, MonitorViolation, ValueTable, _check_monitors, evaluate_policy,
                               greedy_action, improve, policy_iteration, q_values, verify_no_thought_optimal)
from thoughtmdp.solver import IterationTrace, IterationRecord

GAMMA = 0.9


@pytest.fixture
def chain():
    return build_chain(ChainSpec())


def test_all_zero_rewards_give_zero_values():
    rng = np.random.default_rng(3)
    mdp = random_thought_mdp(rng)
    t = dict(env_transition=mdp.env_transition, reward=np.zeros_like(mdp.reward),
             thought_transition=mdp.thought_transition, discount=mdp.discount, terminals=mdp.terminals)
    zero = ThoughtMdp(**t)
    pol = random_policy(rng, zero, stochastic=True)
    for method in ("exact", "iterative"):
        assert np.all(evaluate_policy(zero, pol, method=method).v == 0.0)


@pytest.mark.parametrize("method", ["exact", "iterative"])
def test_chain_initial_policy_values(chain, method):
    mdp, init = chain
    v = evaluate_policy(mdp, init, method=method).v
    expected_tau1 = np.array([GAMMA ** (8 - s) for s in range(9)])
    np.testing.assert_allclose(v[:9, 1], expected_tau1, rtol=0, atol=1e-9)
    assert np.all(v[:, 0] == 0.0)
    assert v[9, 0] == v[9, 1] == 0.0


def test_q_values_case_formula(chain):
    mdp, init = chain
    vals = evaluate_policy(mdp, init, method="exact")
    q8 = q_values(mdp, vals, 8, 0)
    assert q8[1] == pytest.approx(1.0, abs=1e-12)
    q5 = q_values(mdp, vals, 5, 0)
    assert q5[2] == pytest.approx(GAMMA ** 4, abs=1e-12)
    assert np.all(q_values(mdp, vals, 9, 0) == 0.0)


def test_improve_on_chain_thinks_far_from_goal(chain):
    mdp, init = chain
    vals = evaluate_policy(mdp, init, method="exact")
    new = improve(mdp, vals, current=init)
    choice = new.choice
    assert np.all(choice[:8, 0] == 2)
    assert choice[8, 0] == 1
    assert np.all(choice[:9, 1] == 1)


def test_env_first_tie_break_prefers_env():
    q = np.array([0.5, 0.2, 0.5])
    assert greedy_action(q, 2, "env-first") == 0
    assert greedy_action(q, 2, "thought-first") == 2
    assert greedy_action(q, 2, "keep-current", current=2) == 2
    assert greedy_action(q, 2, "keep-current", current=1) == 0


def test_already_optimal_converges_with_empty_events(chain):
    mdp, _ = chain
    right = TabularPolicy.deterministic(np.ones((10, 2), dtype=np.int64), 4, 2)
    pol, _, trace = policy_iteration(mdp, right)
    assert pol == right
    assert trace.n_improvements == 1
    assert trace.records[-1].events == []


def test_iteration_one_policy_fails_no_thought_check(chain):
    mdp, init = chain
    _, _, trace = policy_iteration(mdp, init)
    rep = verify_no_thought_optimal(mdp, trace.snapshot(1).policy)
    assert not rep.passed
    assert sorted(rep.violations) == [(s, 0) for s in range(8)]
    assert verify_no_thought_optimal(mdp, trace.records[-1].policy).passed


def test_nonconvergent_evaluation_raises(chain):
    mdp, init = chain
    with pytest.raises(ConvergenceError):
        evaluate_policy(mdp, init, method="iterative", max_sweeps=2)


def test_monitor_catches_fabricated_violation(chain):
    mdp, init = chain
    vals = evaluate_policy(mdp, init, method="exact")
    # thinking "down" at (5, tau1) cannot raise value: v(5, tau0) = 0 < v(5, tau1)
    choice = init.choice.copy()
    choice[5, 1] = 3
    bad = TabularPolicy.deterministic(choice, 4, 2)
    changed = np.zeros((10, 2), dtype=bool)
    changed[5, 1] = True
    with pytest.raises(MonitorViolation) as exc:
        _check_monitors(mdp, init, bad, changed, vals, IterationTrace([IterationRecord(init, vals)]))
    assert exc.value.cell == (5, 1)


def test_trace_csv_has_convention_header(chain, tmp_path):
    mdp, init = chain
    _, _, trace = policy_iteration(mdp, init)
    path = tmp_path / "trace.csv"
    trace.to_csv(path, mdp)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#")
    assert lines[1] == "iteration,s,tau,action_kind,action_index,value"
    assert len(lines) == 2 + len(trace.records) * 20


def _campaign_instance(seed):
    rng = np.random.default_rng(seed)
    mdp = random_thought_mdp(rng, max_env_states=6, max_thought_states=3, max_env_actions=3,
                             max_thought_actions=2, deterministic_env=bool(seed % 2))
    return mdp, random_policy(rng, mdp, stochastic=bool(seed % 3 == 0))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_policy_iteration_properties(seed):
    mdp, init = _campaign_instance(seed)
    pol, vals, trace = policy_iteration(mdp, init, monitor=True)
    assert verify_no_thought_optimal(mdp, pol, vals).passed
    for a, b in zip(trace.records, trace.records[1:]):
        assert np.all(b.values.v >= a.values.v - 1e-10)
    np.testing.assert_allclose(vals.v, optimal_values(mdp), atol=1e-8)
    assert np.all(vals.v >= 0.0)
    # events only where the action changed
    for prev, rec in zip(trace.records, trace.records[1:]):
        changed = {(e.s, e.tau) for e in rec.events}
        diff = (prev.policy.probs != rec.policy.probs).any(axis=-1)
        assert changed == {tuple(map(int, c)) for c in np.argwhere(diff)}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_iterative_matches_exact_and_oracle(seed):
    mdp, _ = _campaign_instance(seed)
    pol = random_policy(np.random.default_rng(seed + 7), mdp, stochastic=True)
    ex = evaluate_policy(mdp, pol, method="exact")
    it = evaluate_policy(mdp, pol, method="iterative")
    assert ex.sup_distance(it) <= 1e-8
    np.testing.assert_allclose(ex.v, naive_policy_values(mdp, pol.probs), atol=1e-9)


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not built")
def test_backends_agree_bitwise():
    mdp, _ = _campaign_instance(42)
    pol = random_policy(np.random.default_rng(1), mdp, stochastic=True)
    a = evaluate_policy(mdp, pol, method="iterative", backend="cython").v
    b = evaluate_policy(mdp, pol, method="iterative", backend="python").v
    assert np.array_equal(a, b)


def test_value_table_sup_distance():
    a = ValueTable(np.zeros((2, 2)))
    b = ValueTable(np.array([[0.0, 0.5], [-1.0, 0.0]]))
    assert a.sup_distance(b) == 1.0
