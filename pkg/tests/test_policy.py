from __future__ import annotations

import numpy as np
import pytest

from lockmem.demos import generate_dataset, make_demo
from lockmem.policy import (
    OBS_WIDTH,
    BcPolicy,
    MemoryVariant,
    NotFound,
    OraclePolicy,
    PolicyConfig,
    ZeroPolicy,
    ablate,
    ablation_cells,
    bc_train,
    build_policy,
    evaluate,
    non_markov_witness,
    rollout,
    episode_setup,
)

TINY = dict(hidden=(32,), epochs=1, sample_stride=8)


def test_input_widths(small_vq):
    assert OBS_WIDTH == 13 + 3 + 20
    no_mem = build_policy(PolicyConfig(variant=MemoryVariant.NO_MEMORY, hidden=(8,)))
    assert no_mem.input_width == 36
    vq = build_policy(PolicyConfig(variant="VQMemory", hidden=(8,)), vq=small_vq)
    assert vq.input_width == 36 + 40 * 16
    raw = build_policy(PolicyConfig(variant="RawJoint", hidden=(8,)))
    assert raw.input_width == 36 + 40 * 13
    with pytest.raises(ValueError):
        build_policy(PolicyConfig(variant="VQMemory"))
    with pytest.raises(ValueError):
        PolicyConfig(raw_frames=0)


def test_same_seed_same_params(small_vq):
    cfg = PolicyConfig(hidden=(16,))
    a, b = build_policy(cfg, 3, small_vq), build_policy(cfg, 3, small_vq)
    assert all(np.array_equal(x, y) for x, y in zip(a.net.params, b.net.params))
    assert np.array_equal(a.embed, b.embed)


def test_single_demo_overfit():
    d = make_demo(2, 0, seed=0, noise_sigma=0.0)
    cfg = PolicyConfig(variant="NoMemory", hidden=(512, 512), sample_stride=8, horizon=10,
                       epochs=1500, val_fraction=0.0)
    policy = bc_train([d], cfg, seed=0)
    assert policy.log[-1]["train_loss"] < 1e-4


def test_training_deterministic(small_demos, small_vq):
    cfg = PolicyConfig(**{**TINY, "epochs": 2})
    a = bc_train(small_demos, cfg, seed=1, vq=small_vq)
    b = bc_train(small_demos, cfg, seed=1, vq=small_vq)
    assert a.log == b.log
    with pytest.raises(ValueError):
        bc_train([], cfg, vq=small_vq)


def test_policy_round_trip(tmp_path, small_demos, small_vq):
    policy = bc_train(small_demos, PolicyConfig(**TINY), seed=0, vq=small_vq)
    path = tmp_path / "p.json"
    policy.save(path)
    back = BcPolicy.load(path)
    hist = small_demos[0].q[:120]
    assert np.array_equal(back.act(hist, (False, True, False), 20), policy.act(hist, (False, True, False), 20))
    assert back.config_hash == policy.config_hash


def test_raw_memory_zero_padded():
    policy = build_policy(PolicyConfig(variant="RawJoint", hidden=(8,), raw_frames=3, raw_stride=5))
    q = np.arange(26 * 13, dtype=float).reshape(26, 13)
    mem = policy.raw_memory(q, 7).reshape(3, 13)
    assert np.all(mem[0] == 0)
    assert np.array_equal(mem[1], q[2]) and np.array_equal(mem[2], q[7])


def test_oracle_and_zero_policies():
    model, ss = episode_setup(20, 0, 0)
    res = rollout(OraclePolicy(), 20, model, ss)
    assert res.success and res.process_score == 1.0
    assert [e.op for e in res.recognized_ops] == [e.op for e in res.recognized_ops if e.effective]
    res = rollout(ZeroPolicy(), 20, model, ss, t_max=200)
    assert not res.success and res.process_score == 0.0 and res.frames_used == 200


def test_evaluate_granularity_and_determinism():
    a = evaluate(OraclePolicy(), [1, 20], episodes=20, seed=3)
    assert [r.sr for r in a.rows] == [1.0, 1.0]
    b = evaluate(OraclePolicy(), [1, 20], episodes=20, seed=3)
    assert a.to_dict() == b.to_dict()
    z = evaluate(ZeroPolicy(), [2], episodes=20, seed=0, t_max=60)
    assert (z.rows[0].sr * 20) == round(z.rows[0].sr * 20)
    assert evaluate(OraclePolicy(), [], episodes=5).rows == []


def test_episode_poses_differ_from_training():
    demos, _ = generate_dataset([20], 5, seed=0)
    train_poses = {d.pose for d in demos}
    eval_poses = {episode_setup(20, i, 0)[0].pose for i in range(5)}
    assert not train_poses & eval_poses


def test_witness_rule_020(small_demos):
    w = non_markov_witness(small_demos, 20, delta=0.04)
    assert w.distance < 0.04
    assert w.next_a is not w.next_b
    da, db = small_demos[w.demo_a], small_demos[w.demo_b]
    assert np.array_equal(da.phase[w.frame_a], db.phase[w.frame_b])
    assert w.state_a != w.state_b
    assert set(w.to_dict()) >= {"distance", "next_a", "next_b"}


def test_witness_not_found():
    demos, _ = generate_dataset([2], 3, seed=0)
    with pytest.raises(NotFound):
        non_markov_witness(demos, 2)
    with pytest.raises(NotFound):
        non_markov_witness(demos, 2, delta=0.0)
    with pytest.raises(NotFound):
        non_markov_witness(demos, 20)


def test_witness_zero_delta(small_demos):
    with pytest.raises(NotFound):
        non_markov_witness(small_demos, 20, delta=0.0)


# rules whose minimal plan revisits a part-phase with a different op pending
PHASE_LOOP_RULES = (6, 8, 10, 11, 13, 15, 16, 17, 18, 19, 20)


@pytest.mark.parametrize("rule", PHASE_LOOP_RULES)
def test_witness_for_phase_loop_rules(rule):
    demos, _ = generate_dataset([rule], 3, seed=0, assets=["safe_00"])
    w = non_markov_witness(demos, rule)
    assert w.next_a is not w.next_b


def test_ablation_cells():
    assert ablation_cells() == [(256, 40), (32, 40), (4, 40), (2, 40), (4, 20), (4, 60)]
    assert len(ablation_cells(full_grid=True)) == 12
    assert ablation_cells((4,), (40,)) == [(4, 40)]


def test_one_cell_ablation(small_demos, small_vq):
    report = ablate(small_demos, small_vq, 20, clusters=(4,), lengths=(40,),
                    config=PolicyConfig(**TINY), episodes=2, seed=0)
    assert len(report.cells) == 1
    assert report.cluster_ordering_ok() is None
    text = report.to_text()
    assert "Number of Clusters" in text and "Memory Length" in text
    again = ablate(small_demos, small_vq, 20, clusters=(4,), lengths=(40,),
                   config=PolicyConfig(**TINY), episodes=2, seed=0)
    assert again.to_dict() == report.to_dict()
