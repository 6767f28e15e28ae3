from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lockmem.nn import MLP
from lockmem.vq import (
    ClusterMap,
    DegenerateCodebook,
    MemoryTokens,
    ShapeMismatch,
    VqConfig,
    VqModel,
    cluster_codebook,
    encode,
    frame_tokens,
    gather_memory,
    nearest_codes,
    quantize,
    tokenize,
    train_vqvae,
    vq_forward_backward,
    vq_loss,
)


def toy_model(rng, window=2, dim=2, latent=2, codes=4):
    cfg = VqConfig(window=window, stride=1, joint_dim=dim, latent_dim=latent, codebook_size=codes,
                   clusters=2, hidden=(3,), memory_len=3)
    enc = MLP([window * dim, 3, latent], rng, dtype=np.float64)
    dec = MLP([latent, 3, window * dim], rng, dtype=np.float64)
    return VqModel(cfg, np.zeros(dim), np.ones(dim), enc, dec, rng.normal(size=(codes, latent)),
                   np.ones(codes, dtype=np.int64))


def straight_line_encoder(x, enc):
    """Loop-level evaluation of a one-hidden-layer ReLU network."""
    (w1, w2), (b1, b2) = enc.weights, enc.biases
    h = [max(0.0, b1[j] + sum(x[i] * w1[i, j] for i in range(len(x)))) for j in range(len(b1))]
    return np.array([b2[k] + sum(h[j] * w2[j, k] for j in range(len(h))) for k in range(len(b2))])


def test_encode_matches_straight_line_oracle():
    model = toy_model(np.random.default_rng(0))
    window = np.array([[0.3, -1.2], [0.7, 0.1]])
    z = encode(window, model)
    assert np.allclose(z, straight_line_encoder(window.reshape(-1), model.encoder), atol=1e-6)


def test_zero_weights_give_bias():
    model = toy_model(np.random.default_rng(1))
    for w in model.encoder.weights:
        w[...] = 0
    model.encoder.biases[-1][...] = [0.25, -0.5]
    assert np.allclose(encode(np.zeros((2, 2)), model), [0.25, -0.5])


def test_encode_bit_stable_and_shape_checked():
    model = toy_model(np.random.default_rng(2))
    w = np.random.default_rng(3).normal(size=(2, 2))
    assert np.array_equal(encode(w, model), encode(w, model))
    with pytest.raises(ShapeMismatch):
        encode(np.zeros((3, 2)), model)


def test_quantize_exact_and_tie():
    cb = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [5.0, 5.0]])
    k, e = quantize(cb[3].copy(), cb)
    assert k == 3 and np.array_equal(e, cb[3])
    # equidistant from codes 1 and 2
    assert quantize(np.array([0.0, 3.0]), cb[1:3])[0] == 0
    assert quantize(np.array([0.0, 0.0]), np.array([[1.0, 0.0], [-1.0, 0.0]]))[0] == 0


def test_nearest_codes_matches_scan():
    rng = np.random.default_rng(4)
    cb = rng.normal(size=(256, 8))
    z = rng.normal(size=(300, 8))
    scan = []
    for v in z:
        best, best_d = 0, np.inf
        for k, e in enumerate(cb):
            d = float(np.sum((v - e) ** 2))
            if d < best_d:
                best, best_d = k, d
        scan.append(best)
    assert nearest_codes(z, cb, chunk=64).tolist() == scan


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_quantize_idempotent(seed):
    rng = np.random.default_rng(seed)
    cb = rng.normal(size=(16, 3))
    k, e = quantize(rng.normal(size=3), cb)
    k2, e2 = quantize(e, cb)
    assert k2 == k and np.array_equal(e2, e)


def test_vq_loss_trivial_cases():
    x = np.ones((2, 2))
    z = np.array([0.5, 0.5])
    assert vq_loss(x, x, z, z) == (0.0, 0.0, 0.0)
    total, recon, _ = vq_loss(x, x * 0, z, z * 0, lam=0.0)
    assert total == recon == 4.0


def straight_through_fd_error(seed: int = 0, n: int = 5, d_in: int = 6, latent: int = 2, lam: float = 4.0) -> float:
    """Max relative error of the analytic VQ gradients against central differences.

    The reference loss routes the decoder through z - z0 + e0, which has the
    code's value and the encoder's slope, with codes held fixed.
    """
    rng = np.random.default_rng(seed)
    enc = MLP([d_in, 4, latent], rng, dtype=np.float64)
    dec = MLP([latent, 4, d_in], rng, dtype=np.float64)
    cb = rng.normal(size=(3, latent))
    x = rng.normal(size=(n, d_in))
    _, grads, codes = vq_forward_backward(x, enc, dec, cb, lam)

    z_ref = enc.forward(x)
    e_ref = cb[codes].copy()

    def surrogate():
        z = enc.forward(x)
        e = cb[codes]
        xh = dec.forward(z - z_ref + e_ref)
        return (np.sum((xh - x) ** 2) + lam * (np.sum((z - e_ref) ** 2) + np.sum((z_ref - e) ** 2))) / n

    worst = 0.0
    pairs = list(zip(enc.params, grads["encoder"])) + list(zip(dec.params, grads["decoder"]))
    pairs.append((cb, grads["codebook"]))
    for p, g in pairs:
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + 1e-6
            up = surrogate()
            p[idx] = old - 1e-6
            down = surrogate()
            p[idx] = old
            fd = (up - down) / 2e-6
            if abs(fd) + abs(g[idx]) > 1e-7:
                worst = max(worst, abs(fd - g[idx]) / (abs(fd) + abs(g[idx])))
    return worst


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_straight_through_gradient_finite_difference(seed):
    assert straight_through_fd_error(seed) < 1e-4


def test_constant_data_one_code():
    q = np.tile(np.linspace(-1, 1, 13), (120, 1))
    cfg = VqConfig(window=10, stride=5, codebook_size=8, latent_dim=4, hidden=(16,), epochs=150,
                   batch_size=64, train_stride=1, lr=3e-3)
    model = train_vqvae([q, q.copy()], cfg, seed=0)
    assert model.metrics["active_codes"] == 1
    assert model.log[-1]["recon_mse"] < 1e-3


def test_training_deterministic(small_demos):
    cfg = VqConfig(codebook_size=16, latent_dim=8, hidden=(32,), epochs=2)
    a = train_vqvae(small_demos[:3], cfg, seed=9)
    b = train_vqvae(small_demos[:3], cfg, seed=9)
    assert [e["loss"] for e in a.log] == [e["loss"] for e in b.log]
    assert np.array_equal(a.codebook, b.codebook)


def test_config_validation():
    for bad in (dict(stride=60), dict(clusters=0), dict(clusters=300), dict(commit_weight=0.0)):
        with pytest.raises(ValueError):
            VqConfig(**bad)


def test_two_blob_clustering():
    rng = np.random.default_rng(0)
    blob_a = rng.normal(0, 0.1, size=(20, 4))
    blob_b = rng.normal(0, 0.1, size=(20, 4)) + 10
    cm = cluster_codebook(np.concatenate([blob_a, blob_b]), 2, seed=3)
    assert set(cm.assignment[:20]) == {0} and set(cm.assignment[20:]) == {1}


def test_identity_when_j_equals_k():
    cb = np.random.default_rng(1).normal(size=(6, 3))
    cm = cluster_codebook(cb, 6)
    assert cm.assignment.tolist() == list(range(6))
    assert cm.objective_history == [0.0]


def test_degenerate_codebook():
    with pytest.raises(DegenerateCodebook):
        cluster_codebook(np.zeros((10, 3)), 2)
    cb = np.random.default_rng(0).normal(size=(10, 3))
    with pytest.raises(DegenerateCodebook):
        cluster_codebook(cb, 3, usage=[1, 1] + [0] * 8)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), j=st.integers(2, 8))
def test_kmeans_objective_non_increasing(seed, j):
    rng = np.random.default_rng(seed)
    cb = rng.normal(size=(40, 5))
    usage = rng.integers(0, 5, size=40)
    usage[:j] += 1
    hist = cluster_codebook(cb, j, seed=seed, usage=usage).objective_history
    assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))


def test_cluster_map_round_trip():
    cm = cluster_codebook(np.random.default_rng(2).normal(size=(12, 3)), 3)
    back = ClusterMap.from_json(json.loads(json.dumps(cm.to_json())))
    assert np.array_equal(back.assignment, cm.assignment)


def test_memory_tokens_validation():
    MemoryTokens((4, 4, 1, 2), 4)
    with pytest.raises(ValueError):
        MemoryTokens((1, 4, 2), 4)
    with pytest.raises(ValueError):
        MemoryTokens((5,), 4)


def test_tokenize_short_prefix_all_pad(small_vq):
    w = small_vq.config.window
    toks = tokenize(np.zeros((w - 1, 13)), small_vq)
    assert toks.n_pad == len(toks) == small_vq.config.memory_len


def test_tokenize_constant_trajectory(small_vq):
    toks = tokenize(np.full((400, 13), 0.3), small_vq).ids
    body = [t for t in toks if t != small_vq.pad_id]
    assert len(set(body)) == 1


def test_tokenize_causal_and_consistent(small_vq, small_demos):
    q = small_demos[0].q
    t = 300
    a = tokenize(q[: t + 1], small_vq)
    altered = q.copy()
    altered[t + 1:] += 5.0
    assert tokenize(altered[: t + 1], small_vq) == a
    per_frame = frame_tokens(q, small_vq)
    cfg = small_vq.config
    assert gather_memory(per_frame, t, cfg.memory_len, cfg.stride, small_vq.pad_id).tolist() == list(a.ids)
    assert len(tokenize(q[:50], small_vq, memory_len=7)) == 7


def test_one_token_per_twenty_frames(small_vq):
    cfg = small_vq.config
    t = cfg.window - 1 + cfg.stride * (cfg.memory_len - 1)
    assert tokenize(np.zeros((t + 1, 13)), small_vq).n_pad == 0
    assert tokenize(np.zeros((t, 13)), small_vq).n_pad == 1
    covered = cfg.stride * cfg.memory_len
    assert covered / cfg.memory_len == 20


def test_artifact_round_trip(tmp_path, small_vq):
    path = tmp_path / "vq.json"
    small_vq.save(path)
    back = VqModel.load(path)
    q = np.random.default_rng(0).normal(size=(200, 13))
    assert tokenize(q, back) == tokenize(q, small_vq)
    assert np.array_equal(back.codebook, small_vq.codebook)
    doc = json.loads(path.read_text())
    doc["version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError):
        VqModel.load(path)
