from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lockmem.rules import (
    ALL_RULES,
    Op,
    RuleId,
    RuleStateMismatch,
    NotSolvable,
    buffer_limit,
    catalog,
    init_rule,
    lock_vector,
    replay_ops,
    rule_description,
    solve_rule,
    step_rule,
    verify_rule_exhaustive,
)
from lockmem.safe import JointLocked, PartPhase

K, H, D = Op.TOGGLE_KNOB, Op.TOGGLE_HANDLE, Op.OPEN_DOOR


class ReferenceRule20:
    """Hand transcription of the rule_020 program, kept independent of the engine."""

    def __init__(self, knob: bool):
        self.last_knob = knob
        self.buf: list[str] = []

    def step(self, knob: bool, handle: bool, door: bool) -> bool:
        if handle and knob != self.last_knob:
            self.buf = (self.buf + ["1" if knob else "0"])[-2:]
        unlocked = ("".join(self.buf) == "11" and not handle) or door
        self.last_knob = knob
        return not unlocked


def single_toggle_walk(rng, n):
    phase = PartPhase()
    out = []
    for _ in range(n):
        phase = phase.toggled("knob" if rng.random() < 0.5 else "handle")
        out.append(phase)
    return out


def test_rule_020_matches_reference_automaton():
    rng = np.random.default_rng(2020)
    mismatches = 0
    for _ in range(200):
        oracle = ReferenceRule20(False)
        state = init_rule(20)
        for phase in single_toggle_walk(rng, int(rng.integers(1, 25))):
            state, lv = step_rule(20, state, phase, strict=True)
            mismatches += lv.door_locked != oracle.step(phase.knob_open, phase.handle_open, False)
    assert mismatches == 0


def test_rule_020_password_trace():
    state = init_rule(20)
    assert state.buffer_text == "" and not state.unlocked
    phase = PartPhase()
    for j in ("handle", "knob", "handle", "knob", "handle", "knob", "handle"):
        phase = phase.toggled(j)
        state, lv = step_rule(20, state, phase)
    assert state.buffer_text == "11"
    assert not lv.door_locked


def test_rule_001_needs_both():
    state = init_rule(1)
    assert lock_vector(1, state).door_locked
    state, lv = step_rule(1, state, PartPhase(True, False, False))
    assert lv.door_locked
    state, lv = step_rule(1, state, PartPhase(True, True, False))
    assert not lv.door_locked


def test_rule_002_open_knob_at_init():
    assert not lock_vector(2, init_rule(2, PartPhase(True, False, False))).door_locked


@pytest.mark.parametrize("rule,length", [(1, 3), (20, 8), (13, 5), (2, 2), (5, 4)])
def test_minimal_lengths(rule, length):
    assert len(solve_rule(rule)) == length


def test_rule_020_solution_shape():
    assert solve_rule(20) == [H, K, H, K, H, K, H, D]


def test_rule_013_minimal_set():
    report = verify_rule_exhaustive(13, depth=5)
    assert report.minimal_length == 5
    assert (H, K, K, K, D) in report.minimal_sequences
    assert tuple(solve_rule(13)) in report.minimal_sequences


def test_rule_002_and_005_brute_force():
    assert verify_rule_exhaustive(2, depth=2).minimal_sequences == [(K, D)]
    r5 = verify_rule_exhaustive(5, depth=4)
    assert r5.minimal_sequences == [(K, K, H, D)]


def test_rule_012_needs_all_combinations():
    _, state = replay_ops(12, [K, H, K])
    assert state.visited == frozenset({(False, False), (True, False), (True, True), (False, True)})
    assert not lock_vector(12, state).door_locked
    _, state = replay_ops(12, [K, H])
    assert lock_vector(12, state).door_locked


def test_door_blocked_before_unlock():
    with pytest.raises(JointLocked):
        replay_ops(20, [D])


def test_joint_locks_rules_004_014():
    assert lock_vector(4, init_rule(4)).knob_locked
    assert not lock_vector(14, init_rule(14)).knob_locked
    assert lock_vector(14, init_rule(14)).handle_locked
    assert solve_rule(4)[0] is H


@pytest.mark.parametrize("rule", ALL_RULES, ids=str)
def test_verify_agrees_with_solver(rule):
    ops = solve_rule(rule)
    report = verify_rule_exhaustive(rule, depth=len(ops))
    assert report.minimal_length == len(ops)
    assert tuple(ops) in report.minimal_sequences
    assert report.door_violations == 0
    phase, _ = replay_ops(rule, ops)
    assert phase.door_open


def test_strict_mode_rejects_double_edge():
    with pytest.raises(RuleStateMismatch):
        step_rule(20, init_rule(20), PartPhase(True, True, False), strict=True)
    step_rule(20, init_rule(20), PartPhase(True, True, False))


def test_rule_id_parsing():
    assert str(RuleId.parse("rule_020")) == "rule_020"
    assert RuleId.parse(7).number == 7
    for bad in (0, 21, "rule_x", "foo"):
        with pytest.raises(ValueError):
            RuleId.parse(bad)


def test_solver_depth_limit():
    with pytest.raises(NotSolvable):
        solve_rule(20, max_depth=4)
    with pytest.raises(ValueError):
        solve_rule(1, max_depth=0)


def test_catalog_entries():
    rows = catalog()
    assert [r["rule_id"] for r in rows] == [f"rule_{i:03d}" for i in range(1, 21)]
    assert rows[0]["description"] == "The safe door remains locked unless both the knob and handle are open."
    assert "handle is open" in rule_description(3)
    assert rows[19]["min_solution_len"] == 8
    assert rows[11]["counters_used"] == ["visited"]


phases = st.builds(PartPhase, st.booleans(), st.booleans(), st.booleans())


@settings(max_examples=150, deadline=None)
@given(rule=st.integers(1, 20), seq=st.lists(phases, max_size=20))
def test_engine_invariants(rule, seq):
    state = init_rule(rule)
    unlocked_seen = False
    for phase in seq:
        again, lv_again = step_rule(rule, state, phase)
        state, lv = step_rule(rule, state, phase)
        assert (state, lv) == (again, lv_again)
        assert len(state.buffer) <= max(buffer_limit(rule), 0)
        if unlocked_seen:
            assert state.unlocked
        unlocked_seen = state.unlocked
        # a step with no part edges leaves memory unchanged
        still, _ = step_rule(rule, state, state.last_phase)
        assert still == state
