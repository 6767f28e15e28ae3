from __future__ import annotations

import numpy as np
import pytest

from lockmem.demos import KinematicMap, generate_dataset, make_demo, min_anchor_separation
from lockmem.rules import ALL_RULES, Op
from lockmem.safe import asset_ids, get_asset, randomize_pose
from lockmem.sim import DEFAULT_EPS, progress_score, recognize_ops, segment_progress


@pytest.fixture(scope="module")
def all_rule_demos():
    demos, _ = generate_dataset(ALL_RULES, 1, seed=21)
    return demos


def test_demos_recognized_exactly(all_rule_demos):
    for d in all_rule_demos:
        rec = recognize_ops(d.q, d.model, d.rule_id)
        assert rec.ops == d.oracle_ops, d.rule_id
        assert rec.success
        assert np.array_equal(rec.phases[-1], d.phase[-1])


@pytest.mark.parametrize("asset", asset_ids())
def test_recognition_on_every_asset(asset):
    d = make_demo(20, 0, seed=4, assets=[asset])
    assert recognize_ops(d.q, d.model, 20).ops == d.oracle_ops


def test_pure_noise_has_no_ops():
    rng = np.random.default_rng(0)
    hits = 0
    trials = 300
    for _ in range(trials):
        model = randomize_pose(get_asset(asset_ids()[int(rng.integers(10))]), rng)
        home = KinematicMap(model).home()
        q = home + rng.normal(0, 0.02, (200, 13))
        hits += bool(recognize_ops(q, model, 2).events)
    assert hits == 0


def test_empty_history():
    rec = recognize_ops(np.empty((0, 13)), get_asset("safe_00"), 1)
    assert rec.ops == [] and rec.events == [] and not rec.success


def test_eps_precondition():
    model = get_asset("safe_00")
    sep = min_anchor_separation(KinematicMap(model))
    assert DEFAULT_EPS < sep / 2
    with pytest.raises(ValueError):
        recognize_ops(np.zeros((3, 13)), model, 1, eps=sep)


def test_locked_door_pull_is_ineffective():
    # replay a rule_020 demo under rule_001: the door stays shut
    d = make_demo(20, 0, seed=1)
    rec = recognize_ops(d.q, d.model, 2)
    assert rec.success
    rec = recognize_ops(make_demo(1, 0, seed=1).q[:-1], make_demo(1, 0, seed=1).model, 20)
    pulls = [e for e in rec.events if e.op is Op.OPEN_DOOR]
    assert all(not e.effective for e in pulls)
    assert not rec.success


def test_segment_progress():
    a, b = np.zeros(3), np.array([1.0, 0.0, 0.0])
    assert segment_progress(np.array([0.5, 0.0, 0.0]), a, b) == pytest.approx(0.5)
    assert segment_progress(np.array([1.1, 0.0, 0.0]), a, b) == 1.0
    assert segment_progress(np.array([0.5, 1.0, 0.0]), a, b) is None


def test_progress_score_prefix():
    K, H, D = Op.TOGGLE_KNOB, Op.TOGGLE_HANDLE, Op.OPEN_DOOR
    assert progress_score([], [K, H, D]) == 0.0
    assert progress_score([K, H], [K, H, D]) == pytest.approx(2 / 3)
    assert progress_score([H, K, H, D], [K, H, D]) == 0.0
    assert progress_score([K, H, D], [K, H, D]) == 1.0
