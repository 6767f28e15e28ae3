"""VQ-Memory: a VQ-VAE over joint-state windows, K-means over its codebook, and
the sliding-window tokenizer that turns a trajectory prefix into memory tokens.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .artifacts import TOOL_VERSION, config_hash, decode_array, encode_array, dump_json, load_json
from .nn import MLP, Adam

log = logging.getLogger(__name__)

ARTIFACT_FORMAT = "lockmem.vq"
ARTIFACT_VERSION = 1


class ShapeMismatch(ValueError):
    pass


class Diverged(RuntimeError):
    pass


class DegenerateCodebook(ValueError):
    pass


@dataclass(frozen=True)
class VqConfig:
    window: int = 50
    stride: int = 20
    joint_dim: int = 13
    latent_dim: int = 64
    codebook_size: int = 256
    clusters: int = 4
    commit_weight: float = 4.0
    memory_len: int = 40
    hidden: tuple[int, ...] = (256, 128)
    # training
    epochs: int = 60
    batch_size: int = 256
    lr: float = 1e-3
    train_stride: int = 4
    holdout_fraction: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if not 1 <= self.stride <= self.window:
            raise ValueError("need 1 <= stride <= window")
        if not 1 <= self.clusters <= self.codebook_size:
            raise ValueError("need 1 <= clusters <= codebook_size")
        if self.commit_weight <= 0:
            raise ValueError("commit_weight (lambda) must be > 0")
        if self.memory_len < 1:
            raise ValueError("memory_len must be >= 1")

    @property
    def pad_id(self) -> int:
        return self.clusters

    @property
    def window_size(self) -> int:
        return self.window * self.joint_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> VqConfig:
        return cls(**d)


@dataclass
class ClusterMap:
    centroids: np.ndarray          # (J, d)
    assignment: np.ndarray         # (K,) -> 0..J-1
    objective_history: list[float] = field(default_factory=list)

    @property
    def n_clusters(self) -> int:
        return len(self.centroids)

    def to_json(self) -> dict:
        return {
            "centroids": encode_array(self.centroids),
            "assignment": [int(a) for a in self.assignment],
            "objective_history": [float(o) for o in self.objective_history],
        }

    @classmethod
    def from_json(cls, d: dict) -> ClusterMap:
        return cls(decode_array(d["centroids"]).astype(np.float64), np.asarray(d["assignment"], dtype=int),
                   list(d["objective_history"]))


@dataclass
class VqModel:
    """Everything needed to tokenize: normalization, encoder/decoder, codebook, cluster map."""

    config: VqConfig
    mean: np.ndarray
    std: np.ndarray
    encoder: MLP
    decoder: MLP
    codebook: np.ndarray
    usage: np.ndarray
    cluster_map: ClusterMap | None = None
    log: list[dict] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    @property
    def vocab_size(self) -> int:
        return self.cluster_map.n_clusters if self.cluster_map is not None else len(self.codebook)

    @property
    def pad_id(self) -> int:
        return self.vocab_size

    def with_clusters(self, cluster_map: ClusterMap | None) -> VqModel:
        return replace(self, cluster_map=cluster_map)

    def to_json(self, extra: dict | None = None) -> dict:
        cfg = self.config.to_dict()
        return {
            "format": ARTIFACT_FORMAT,
            "version": ARTIFACT_VERSION,
            "tool_version": TOOL_VERSION,
            "config": cfg,
            "config_hash": config_hash(cfg),
            "norm_mean": encode_array(self.mean),
            "norm_std": encode_array(self.std),
            "encoder": self.encoder.to_json(),
            "decoder": self.decoder.to_json(),
            "codebook": encode_array(self.codebook),
            "usage": [int(u) for u in self.usage],
            "cluster_map": self.cluster_map.to_json() if self.cluster_map is not None else None,
            "training_log": self.log,
            "metrics": self.metrics,
            **(extra or {}),
        }

    @classmethod
    def from_json(cls, d: dict) -> VqModel:
        if d.get("format") != ARTIFACT_FORMAT:
            raise ValueError(f"not a VQ artifact (format={d.get('format')!r})")
        if "version" not in d:
            raise ValueError("VQ artifact is missing its version field")
        if d["version"] != ARTIFACT_VERSION:
            raise ValueError(f"unsupported VQ artifact version {d['version']!r}")
        cm = d.get("cluster_map")
        return cls(
            config=VqConfig.from_dict(d["config"]),
            mean=decode_array(d["norm_mean"]),
            std=decode_array(d["norm_std"]),
            encoder=MLP.from_json(d["encoder"]),
            decoder=MLP.from_json(d["decoder"]),
            codebook=decode_array(d["codebook"]),
            usage=np.asarray(d["usage"], dtype=np.int64),
            cluster_map=ClusterMap.from_json(cm) if cm else None,
            log=d.get("training_log", []),
            metrics=d.get("metrics", {}),
        )

    def save(self, path, extra: dict | None = None) -> None:
        dump_json(path, self.to_json(extra))

    @classmethod
    def load(cls, path) -> VqModel:
        return cls.from_json(load_json(path))


# -- forward pieces ---------------------------------------------------------

def _flatten_windows(windows: np.ndarray, model: VqModel) -> np.ndarray:
    cfg = model.config
    w = np.asarray(windows)
    if w.ndim == 2:
        w = w[None]
    if w.shape[1:] != (cfg.window, cfg.joint_dim):
        raise ShapeMismatch(f"expected window shape ({cfg.window}, {cfg.joint_dim}), got {w.shape[1:]}")
    x = (w - model.mean) / model.std
    return x.reshape(len(x), -1).astype(np.float32)


def encode(window: np.ndarray, model: VqModel) -> np.ndarray:
    """Latent embedding of one (W, D) window, or a batch (N, W, D)."""
    single = np.asarray(window).ndim == 2
    z = model.encoder.forward(_flatten_windows(window, model))
    return z[0] if single else z


def nearest_codes(z: np.ndarray, codebook: np.ndarray, chunk: int = 512) -> np.ndarray:
    """argmin_k ||z - e_k||, ties to the smallest index."""
    z = np.atleast_2d(z)
    out = np.empty(len(z), dtype=np.int64)
    for s in range(0, len(z), chunk):
        diff = z[s:s + chunk, None, :] - codebook[None, :, :]
        out[s:s + chunk] = np.argmin(np.einsum("nkd,nkd->nk", diff, diff), axis=1)
    return out


def quantize(z: np.ndarray, codebook: np.ndarray) -> tuple[int, np.ndarray]:
    if len(codebook) == 0:
        raise ValueError("empty codebook")
    k = int(nearest_codes(np.asarray(z)[None], codebook)[0])
    return k, codebook[k]


def vq_loss(window, reconstruction, z, e, lam: float = 4.0) -> tuple[float, float, float]:
    """(total, recon, commit) for one window; commit sums both stop-gradient terms."""
    recon = float(np.sum((np.asarray(window) - np.asarray(reconstruction)) ** 2))
    d = float(np.sum((np.asarray(z) - np.asarray(e)) ** 2))
    commit = 2.0 * d
    return recon + lam * commit, recon, commit


def vq_forward_backward(x: np.ndarray, encoder: MLP, decoder: MLP, codebook: np.ndarray, lam: float):
    """Batch losses and gradients for flattened normalized windows ``x``.

    The decoder sees the quantized code; its input gradient is copied to the
    encoder output (straight-through).  ||z - sg(e)||^2 feeds the encoder only,
    ||sg(z) - e||^2 feeds the codebook only.  Losses are per-window sums
    averaged over the batch.
    """
    n = len(x)
    z, enc_acts = encoder.forward(x, keep=True)
    codes = nearest_codes(z, codebook)
    e = codebook[codes]
    xh, dec_acts = decoder.forward(e, keep=True)
    diff = xh - x
    recon = float(np.sum(diff * diff)) / n
    dz_e = z - e
    d = float(np.sum(dz_e * dz_e)) / n
    commit = 2.0 * d
    total = recon + lam * commit

    dec_grads, g_dec_in = decoder.backward(dec_acts, (2.0 / n) * diff)
    g_z = g_dec_in + (2.0 * lam / n) * dz_e
    enc_grads, _ = encoder.backward(enc_acts, g_z)
    g_code = np.zeros_like(codebook)
    np.add.at(g_code, codes, (-2.0 * lam / n) * dz_e)
    return (total, recon, commit), {"encoder": enc_grads, "decoder": dec_grads, "codebook": g_code}, codes


# -- data plumbing ----------------------------------------------------------

def _trajectories(data) -> list[np.ndarray]:
    return [np.asarray(d.q if hasattr(d, "q") else d, dtype=float) for d in data]


def trajectory_windows(q: np.ndarray, window: int, step: int = 1) -> np.ndarray:
    """All complete windows ending at frames window-1, window-1+step, ... -> (N, W, D)."""
    if len(q) < window:
        return np.empty((0, window, q.shape[1]))
    v = sliding_window_view(q, window, axis=0)        # (T-W+1, D, W)
    return np.transpose(v, (0, 2, 1))[::step]


def split_holdout(n: int, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    order = rng.permutation(n)
    n_hold = int(round(n * fraction)) if n > 1 else 0
    n_hold = min(max(n_hold, 1 if fraction > 0 and n > 1 else 0), n - 1) if n > 1 else 0
    return np.sort(order[n_hold:]), np.sort(order[:n_hold])


def _windows_for(trajs, cfg: VqConfig, step: int) -> np.ndarray:
    parts = [trajectory_windows(q, cfg.window, step) for q in trajs]
    parts = [p for p in parts if len(p)]
    if not parts:
        return np.empty((0, cfg.window, cfg.joint_dim))
    return np.concatenate(parts)


def reconstruct(windows: np.ndarray, model: VqModel) -> tuple[np.ndarray, np.ndarray]:
    """Decoded windows in raw units and the code index used for each."""
    x = _flatten_windows(windows, model)
    codes = nearest_codes(model.encoder.forward(x), model.codebook)
    xh = model.decoder.forward(model.codebook[codes])
    cfg = model.config
    return xh.reshape(-1, cfg.window, cfg.joint_dim) * model.std + model.mean, codes


def recon_report(windows: np.ndarray, model: VqModel) -> dict:
    """Reconstruction error relative to the signal variance of each joint dimension."""
    if len(windows) == 0:
        return {"mse": float("nan"), "ratio_mean": float("nan"), "ratio_max": float("nan")}
    out = []
    for s in range(0, len(windows), 2048):
        out.append(reconstruct(windows[s:s + 2048], model)[0])
    xh = np.concatenate(out)
    err = ((xh - windows) ** 2).reshape(-1, windows.shape[2]).mean(axis=0)
    var = windows.reshape(-1, windows.shape[2]).var(axis=0)
    ratio = err / np.maximum(var, 1e-12)
    return {"mse": float(err.mean()), "ratio_mean": float(ratio.mean()), "ratio_max": float(ratio.max()),
            "ratio_per_dim": [float(r) for r in ratio]}


# -- training ---------------------------------------------------------------

def train_vqvae(data, config: VqConfig = VqConfig(), seed: int = 0) -> VqModel:
    """Fit encoder, decoder and codebook on trajectories (or Demonstrations)."""
    cfg = config
    rng = np.random.default_rng(seed)
    trajs = _trajectories(data)
    train_idx, hold_idx = split_holdout(len(trajs), cfg.holdout_fraction, rng)
    train_trajs = [trajs[i] for i in train_idx]
    all_frames = np.concatenate(train_trajs)
    mean = all_frames.mean(axis=0)
    std = all_frames.std(axis=0)
    std = np.where(std < 1e-6, 1.0, std)

    encoder = MLP([cfg.window_size, *cfg.hidden, cfg.latent_dim], rng)
    decoder = MLP([cfg.latent_dim, *reversed(cfg.hidden), cfg.window_size], rng)
    model = VqModel(cfg, mean.astype(np.float32), std.astype(np.float32), encoder, decoder,
                    np.zeros((cfg.codebook_size, cfg.latent_dim), np.float32),
                    np.zeros(cfg.codebook_size, np.int64))

    x_all = _flatten_windows(_windows_for(train_trajs, cfg, cfg.train_stride), model)
    if len(x_all) < cfg.codebook_size:
        raise ValueError(f"need at least {cfg.codebook_size} training windows, got {len(x_all)}")

    z0 = encoder.forward(x_all[rng.choice(len(x_all), cfg.codebook_size, replace=False)])
    codebook = (z0 + rng.normal(0, 1e-3, z0.shape)).astype(np.float32)
    model.codebook = codebook
    opt = Adam(encoder.params + decoder.params + [codebook], lr=cfg.lr)
    cb_slot = len(opt.params) - 1

    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(x_all))
        usage = np.zeros(cfg.codebook_size, np.int64)
        sums = np.zeros(3)
        for s in range(0, len(perm), cfg.batch_size):
            xb = x_all[perm[s:s + cfg.batch_size]]
            losses, grads, codes = vq_forward_backward(xb, encoder, decoder, codebook, cfg.commit_weight)
            if not np.isfinite(losses[0]):
                raise Diverged(f"non-finite loss at epoch {epoch}, batch {s // cfg.batch_size}: {losses}")
            opt.step(grads["encoder"] + grads["decoder"] + [grads["codebook"]])
            usage += np.bincount(codes, minlength=cfg.codebook_size)
            sums += np.asarray(losses) * len(xb)
        total, recon, commit = sums / len(x_all)
        dead = np.flatnonzero(usage == 0)
        entry = {"epoch": epoch, "loss": total, "recon": recon, "commit": commit,
                 "recon_mse": recon / cfg.window_size, "utilization": float(np.mean(usage > 0)),
                 "reseeded": int(len(dead))}
        model.log.append(entry)
        log.debug("vq epoch %d: %s", epoch, entry)
        if len(dead) and epoch < cfg.epochs - 1:
            picks = x_all[rng.choice(len(x_all), len(dead), replace=len(dead) > len(x_all))]
            fresh = encoder.forward(picks)
            codebook[dead] = fresh + rng.normal(0, 1e-3, fresh.shape).astype(np.float32)
            opt.m[cb_slot][dead] = 0
            opt.v[cb_slot][dead] = 0

    model.usage = np.bincount(nearest_codes(encoder.forward(x_all), codebook), minlength=cfg.codebook_size)
    hold = _windows_for([trajs[i] for i in hold_idx], cfg, 1)
    model.metrics = {
        "train_windows": int(len(x_all)),
        "active_codes": int(np.sum(model.usage > 0)),
        "heldout_demos": [int(i) for i in hold_idx],
        "heldout": recon_report(hold, model),
    }
    return model


# -- codebook clustering ----------------------------------------------------

def _kmeans_objective(points, weights, centroids, assignment) -> float:
    d = points - centroids[assignment]
    return float(np.sum(weights * np.einsum("kd,kd->k", d, d)))


def cluster_codebook(codebook: np.ndarray, n_clusters: int, seed: int = 0, usage=None,
                     max_iter: int = 100) -> ClusterMap:
    """Usage-weighted Lloyd's K-means over codebook vectors.

    Initialization: one usage-weighted random pick, then greedy farthest
    points among the active codes.  Clusters are relabelled by their smallest
    member code index.  With ``n_clusters == K`` every code is its own cluster.
    """
    points = np.asarray(codebook, dtype=np.float64)
    k_codes = len(points)
    weights = np.ones(k_codes) if usage is None else np.asarray(usage, dtype=np.float64)
    if n_clusters > k_codes:
        raise ValueError("more clusters than codes")
    if n_clusters == k_codes:
        return ClusterMap(points.copy(), np.arange(k_codes), [0.0])
    active = np.flatnonzero(weights > 0)
    if len(np.unique(points[active], axis=0)) < n_clusters:
        raise DegenerateCodebook(
            f"{len(np.unique(points[active], axis=0))} distinct active codes < {n_clusters} clusters")

    rng = np.random.default_rng(seed)
    first = active[rng.choice(len(active), p=weights[active] / weights[active].sum())]
    chosen = [first]
    d_min = np.sum((points[active] - points[first]) ** 2, axis=1)
    for _ in range(1, n_clusters):
        nxt = active[int(np.argmax(d_min))]
        chosen.append(nxt)
        d_min = np.minimum(d_min, np.sum((points[active] - points[nxt]) ** 2, axis=1))
    centroids = points[chosen].copy()

    assignment = None
    history = []
    for _ in range(max_iter):
        new_assignment = nearest_codes(points, centroids)
        history.append(_kmeans_objective(points, weights, centroids, new_assignment))
        if assignment is not None and np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for j in range(n_clusters):
            members = assignment == j
            w = weights[members]
            if w.sum() > 0:
                centroids[j] = (w[:, None] * points[members]).sum(axis=0) / w.sum()
        history.append(_kmeans_objective(points, weights, centroids, assignment))
    assignment = nearest_codes(points, centroids)

    # canonical labels: order clusters by their smallest member code
    first_member = [np.flatnonzero(assignment == j)[0] if np.any(assignment == j) else k_codes + j
                    for j in range(n_clusters)]
    order = np.argsort(first_member, kind="stable")
    relabel = np.empty(n_clusters, dtype=int)
    relabel[order] = np.arange(n_clusters)
    return ClusterMap(centroids[order], relabel[assignment], history)


def weighted_objective(codebook, cluster_map: ClusterMap, usage=None) -> float:
    points = np.asarray(codebook, dtype=np.float64)
    weights = np.ones(len(points)) if usage is None else np.asarray(usage, dtype=np.float64)
    d = points[:, None, :] - cluster_map.centroids[None]
    return float(np.sum(weights * np.min(np.einsum("kjd,kjd->kj", d, d), axis=1)))


# -- tokenizer --------------------------------------------------------------

@dataclass(frozen=True)
class MemoryTokens:
    ids: tuple[int, ...]
    pad_id: int

    def __post_init__(self):
        pads = [i == self.pad_id for i in self.ids]
        n_pad = sum(pads)
        if any(pads[n_pad:]) or not all(pads[:n_pad]):
            raise ValueError("PAD tokens must form a contiguous prefix")
        if any(not 0 <= i <= self.pad_id for i in self.ids):
            raise ValueError("token id out of range")

    def __len__(self):
        return len(self.ids)

    @property
    def n_pad(self) -> int:
        return sum(i == self.pad_id for i in self.ids)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.ids, dtype=np.int64)


def frame_codes(q: np.ndarray, model: VqModel) -> np.ndarray:
    """Code index of the window ending at every frame (-1 where the window is incomplete)."""
    cfg = model.config
    q = np.asarray(q, dtype=float)
    out = np.full(len(q), -1, dtype=np.int64)
    windows = trajectory_windows(q, cfg.window)
    if len(windows):
        z = model.encoder.forward(_flatten_windows(windows, model))
        out[cfg.window - 1:] = nearest_codes(z, model.codebook)
    return out


def code_to_token(codes: np.ndarray, model: VqModel) -> np.ndarray:
    codes = np.asarray(codes)
    if model.cluster_map is None:
        tokens = codes.copy()
    else:
        tokens = model.cluster_map.assignment[np.maximum(codes, 0)]
    return np.where(codes < 0, model.pad_id, tokens)


def frame_tokens(q: np.ndarray, model: VqModel) -> np.ndarray:
    """Token of the window ending at every frame; PAD where the window is incomplete."""
    return code_to_token(frame_codes(q, model), model)


def memory_slots(t: int, memory_len: int, stride: int) -> np.ndarray:
    """Window end frames for a prefix ending at ``t``, oldest first (may be negative)."""
    return t - stride * np.arange(memory_len - 1, -1, -1)


def gather_memory(per_frame: np.ndarray, t, memory_len: int, stride: int, pad_id: int) -> np.ndarray:
    """Memory token ids for one or many end frames ``t`` from per-frame tokens."""
    t = np.asarray(t)
    ends = t[..., None] - stride * np.arange(memory_len - 1, -1, -1)
    vals = per_frame[np.clip(ends, 0, None)]
    return np.where(ends >= 0, vals, pad_id)


def tokenize(prefix: np.ndarray, model: VqModel, memory_len: int | None = None,
             raw_codes: bool = False) -> MemoryTokens:
    """Memory tokens for the trajectory prefix q_0..q_t (t = len(prefix) - 1)."""
    cfg = model.config
    memory_len = memory_len or cfg.memory_len
    prefix = np.asarray(prefix, dtype=float)
    if prefix.ndim != 2 or prefix.shape[1] != cfg.joint_dim:
        raise ShapeMismatch(f"prefix must be (T, {cfg.joint_dim}), got {prefix.shape}")
    t = len(prefix) - 1
    ends = memory_slots(t, memory_len, cfg.stride)
    pad = len(model.codebook) if raw_codes else model.pad_id
    ids = np.full(memory_len, pad, dtype=np.int64)
    complete = ends >= cfg.window - 1
    if complete.any():
        windows = np.stack([prefix[e - cfg.window + 1:e + 1] for e in ends[complete]])
        codes = nearest_codes(encode(windows, model), model.codebook)
        ids[complete] = codes if raw_codes else code_to_token(codes, model)
    return MemoryTokens(tuple(int(i) for i in ids), int(pad))
