"""Behavior-cloned chunking policies, closed-loop evaluation, and the memory ablation."""

from __future__ import annotations

import enum
import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .artifacts import TOOL_VERSION, config_hash, decode_array, dump_json, encode_array, load_json
from .demos import DEFAULT_NOISE, Q_DIM, Demonstration, KinematicMap, expand_plan, pending_op_index, rule_states, \
    synthesize_trajectory
from .nn import MLP, Adam
from .rules import ALL_RULES, Op, RuleId, solve_rule
from .safe import PartPhase, SafeModel, asset_ids, get_asset, randomize_pose
from .sim import DEFAULT_EPS, OpEvent, SafeSim, progress_score
from .vq import VqModel, cluster_codebook, frame_tokens, gather_memory, tokenize

log = logging.getLogger(__name__)

POLICY_FORMAT = "lockmem.policy"
POLICY_VERSION = 1
N_RULES = len(ALL_RULES)
OBS_WIDTH = Q_DIM + 3 + N_RULES
EVAL_STREAM = 0xE7A1


class Diverged(RuntimeError):
    pass


class NotFound(LookupError):
    pass


class MemoryVariant(str, enum.Enum):
    NO_MEMORY = "NoMemory"
    RAW_JOINT = "RawJoint"
    VQ_MEMORY = "VQMemory"


@dataclass(frozen=True)
class PolicyConfig:
    variant: MemoryVariant = MemoryVariant.VQ_MEMORY
    horizon: int = 50
    hidden: tuple[int, ...] = (512, 512)
    memory_len: int = 40
    raw_frames: int = 40
    raw_stride: int = 20
    embed_dim: int = 16
    epochs: int = 30
    batch_size: int = 256
    lr: float = 1e-3
    sample_stride: int = 2
    val_fraction: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "variant", MemoryVariant(self.variant))
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if self.raw_frames <= 0:
            raise ValueError("RawJoint window must be > 0")
        if self.horizon < 1 or self.memory_len < 1:
            raise ValueError("horizon and memory_len must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> PolicyConfig:
        return cls(**d)


def rule_index(rule) -> int:
    return RuleId.parse(rule).number - 1


def observation_features(q: np.ndarray, phase, rule, mean, std) -> np.ndarray:
    """[normalized q | part-phase bits | rule one-hot] for one frame or a batch."""
    q = np.atleast_2d(q)
    phase = np.atleast_2d(np.asarray(phase, dtype=np.float32))
    onehot = np.zeros((len(q), N_RULES), np.float32)
    onehot[:, rule_index(rule)] = 1.0
    return np.concatenate([((q - mean) / std).astype(np.float32), phase, onehot], axis=1)


class BcPolicy:
    """MLP from [observation | memory] to a chunk of H absolute joint targets."""

    def __init__(self, config: PolicyConfig, net: MLP, q_mean, q_std, embed=None, vq: VqModel | None = None,
                 log_: list | None = None):
        self.config = config
        self.net = net
        self.q_mean = np.asarray(q_mean, np.float32)
        self.q_std = np.asarray(q_std, np.float32)
        self.embed = embed
        self.vq = vq
        self.log = log_ or []

    @property
    def variant(self) -> MemoryVariant:
        return self.config.variant

    @property
    def input_width(self) -> int:
        return self.net.sizes[0]

    @property
    def config_hash(self) -> str:
        cfg = self.config.to_dict()
        if self.vq is not None:
            cfg["vq"] = self.vq.config.to_dict()
            cfg["clusters"] = self.vq.vocab_size
        return config_hash(cfg)

    # memory inputs -------------------------------------------------------
    def raw_memory(self, q: np.ndarray, t) -> np.ndarray:
        """Flattened q at t, t-stride, ... (oldest first), zero where before the demo start."""
        cfg = self.config
        t = np.atleast_1d(t)
        ends = t[:, None] - cfg.raw_stride * np.arange(cfg.raw_frames - 1, -1, -1)
        vals = ((q[np.clip(ends, 0, None)] - self.q_mean) / self.q_std).astype(np.float32)
        vals[ends < 0] = 0.0
        return vals.reshape(len(t), -1)

    def memory_from_history(self, history: np.ndarray):
        if self.variant is MemoryVariant.VQ_MEMORY:
            return tokenize(history, self.vq, self.config.memory_len).as_array()[None]
        if self.variant is MemoryVariant.RAW_JOINT:
            return self.raw_memory(history, len(history) - 1)
        return None

    def inputs(self, obs: np.ndarray, memory) -> np.ndarray:
        if self.variant is MemoryVariant.VQ_MEMORY:
            return np.concatenate([obs, self.embed[memory].reshape(len(obs), -1)], axis=1)
        if self.variant is MemoryVariant.RAW_JOINT:
            return np.concatenate([obs, memory], axis=1)
        return obs

    def predict(self, obs, memory, q_now) -> np.ndarray:
        out = self.net.forward(self.inputs(obs, memory))
        delta = out.reshape(len(obs), self.config.horizon, Q_DIM) * self.q_std
        return np.asarray(q_now)[:, None, :] + delta

    def act(self, history: np.ndarray, phase, rule) -> np.ndarray:
        """Chunk of H absolute targets given the observed q history (oldest first)."""
        history = np.asarray(history, dtype=float)
        phase = phase.as_tuple() if isinstance(phase, PartPhase) else tuple(phase)
        obs = observation_features(history[-1], phase, rule, self.q_mean, self.q_std)
        return self.predict(obs, self.memory_from_history(history), history[-1][None])[0]

    # serialization -------------------------------------------------------
    def to_json(self, extra: dict | None = None) -> dict:
        cfg = self.config.to_dict()
        return {
            "format": POLICY_FORMAT,
            "version": POLICY_VERSION,
            "tool_version": TOOL_VERSION,
            "config": cfg,
            "config_hash": self.config_hash,
            "q_mean": encode_array(self.q_mean),
            "q_std": encode_array(self.q_std),
            "net": self.net.to_json(),
            "embed": encode_array(self.embed) if self.embed is not None else None,
            "vq": self.vq.to_json() if self.vq is not None else None,
            "training_log": self.log,
            **(extra or {}),
        }

    @classmethod
    def from_json(cls, d: dict) -> BcPolicy:
        if d.get("format") != POLICY_FORMAT:
            raise ValueError(f"not a policy artifact (format={d.get('format')!r})")
        if d.get("version") != POLICY_VERSION:
            raise ValueError(f"unsupported policy artifact version {d.get('version')!r}")
        return cls(
            PolicyConfig.from_dict(d["config"]),
            MLP.from_json(d["net"]),
            decode_array(d["q_mean"]),
            decode_array(d["q_std"]),
            decode_array(d["embed"]) if d.get("embed") else None,
            VqModel.from_json(d["vq"]) if d.get("vq") else None,
            d.get("training_log", []),
        )

    def save(self, path, extra: dict | None = None) -> None:
        dump_json(path, self.to_json(extra))

    @classmethod
    def load(cls, path) -> BcPolicy:
        return cls.from_json(load_json(path))


def build_policy(config: PolicyConfig, seed: int = 0, vq: VqModel | None = None,
                 q_mean=None, q_std=None) -> BcPolicy:
    rng = np.random.default_rng(seed)
    width = OBS_WIDTH
    embed = None
    if config.variant is MemoryVariant.VQ_MEMORY:
        if vq is None:
            raise ValueError("VQMemory policy needs a tokenizer artifact")
        width += config.memory_len * config.embed_dim
        embed = (rng.standard_normal((vq.vocab_size + 1, config.embed_dim)) * 0.5).astype(np.float32)
    elif config.variant is MemoryVariant.RAW_JOINT:
        width += config.raw_frames * Q_DIM
    net = MLP([width, *config.hidden, config.horizon * Q_DIM], rng, out_scale=0.1)
    q_mean = np.zeros(Q_DIM) if q_mean is None else q_mean
    q_std = np.ones(Q_DIM) if q_std is None else q_std
    return BcPolicy(config, net, q_mean, q_std, embed, vq if config.variant is MemoryVariant.VQ_MEMORY else None)


# -- behavior cloning -------------------------------------------------------

def future_targets(q: np.ndarray, ts: np.ndarray, horizon: int) -> np.ndarray:
    """q[t+1 .. t+H] for each t, holding the final frame past the end."""
    idx = np.minimum(ts[:, None] + np.arange(1, horizon + 1), len(q) - 1)
    return q[idx]


@dataclass
class _Samples:
    obs: np.ndarray
    memory: np.ndarray | None
    target: np.ndarray

    def __len__(self):
        return len(self.obs)

    def batch(self, idx):
        return self.obs[idx], None if self.memory is None else self.memory[idx], self.target[idx]


def _samples(policy: BcPolicy, demos: list[Demonstration]) -> _Samples:
    cfg = policy.config
    obs, mem, tgt = [], [], []
    for d in demos:
        ts = np.arange(0, len(d), cfg.sample_stride)
        obs.append(observation_features(d.q[ts], d.phase[ts], d.rule_id, policy.q_mean, policy.q_std))
        delta = future_targets(d.q, ts, cfg.horizon) - d.q[ts][:, None, :]
        tgt.append((delta / policy.q_std).reshape(len(ts), -1).astype(np.float32))
        if cfg.variant is MemoryVariant.VQ_MEMORY:
            per_frame = frame_tokens(d.q, policy.vq)
            mem.append(gather_memory(per_frame, ts, cfg.memory_len, policy.vq.config.stride, policy.vq.pad_id))
        elif cfg.variant is MemoryVariant.RAW_JOINT:
            mem.append(policy.raw_memory(d.q, ts))
    if not demos:
        width = cfg.horizon * Q_DIM
        memory = None if cfg.variant is MemoryVariant.NO_MEMORY else np.empty((0, 0))
        return _Samples(np.empty((0, OBS_WIDTH), np.float32), memory, np.empty((0, width), np.float32))
    return _Samples(np.concatenate(obs), np.concatenate(mem) if mem else None, np.concatenate(tgt))


def _loss_and_grads(policy: BcPolicy, obs, memory, target, want_grads=True):
    x = policy.inputs(obs, memory)
    out, acts = policy.net.forward(x, keep=True)
    diff = out - target
    loss = float(np.mean(diff * diff))
    if not want_grads:
        return loss, None
    grads, gx = policy.net.backward(acts, (2.0 / diff.size) * diff)
    if policy.variant is MemoryVariant.VQ_MEMORY:
        g_embed = np.zeros_like(policy.embed)
        np.add.at(g_embed, memory, gx[:, OBS_WIDTH:].reshape(len(obs), -1, policy.config.embed_dim))
        grads = grads + [g_embed]
    return loss, grads


def _eval_loss(policy: BcPolicy, samples: _Samples, chunk: int = 4096) -> float:
    if len(samples) == 0:
        return float("nan")
    total = 0.0
    for s in range(0, len(samples), chunk):
        idx = np.arange(s, min(s + chunk, len(samples)))
        total += _loss_and_grads(policy, *samples.batch(idx), want_grads=False)[0] * len(idx)
    return total / len(samples)


def split_demos(n: int, fraction: float, rng: np.random.Generator) -> tuple[list[int], list[int]]:
    order = rng.permutation(n)
    n_val = int(round(n * fraction)) if n > 1 else 0
    n_val = min(n_val, n - 1)
    return sorted(int(i) for i in order[n_val:]), sorted(int(i) for i in order[:n_val])


def bc_train(demos: list[Demonstration], config: PolicyConfig = PolicyConfig(), seed: int = 0,
             vq: VqModel | None = None) -> BcPolicy:
    """Regress the next H frames (as offsets from the current frame) with MSE."""
    if not demos:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    train_idx, val_idx = split_demos(len(demos), config.val_fraction, rng)
    train = [demos[i] for i in train_idx]
    frames = np.concatenate([d.q for d in train])
    std = frames.std(axis=0)
    policy = build_policy(config, seed, vq, frames.mean(axis=0), np.where(std < 1e-6, 1.0, std))
    tr = _samples(policy, train)
    va = _samples(policy, [demos[i] for i in val_idx])

    params = policy.net.params + ([policy.embed] if policy.embed is not None else [])
    opt = Adam(params, lr=config.lr)
    for epoch in range(config.epochs):
        perm = rng.permutation(len(tr))
        total = 0.0
        for s in range(0, len(perm), config.batch_size):
            idx = perm[s:s + config.batch_size]
            loss, grads = _loss_and_grads(policy, *tr.batch(idx))
            if not np.isfinite(loss):
                raise Diverged(f"non-finite loss at epoch {epoch}, batch {s // config.batch_size}")
            opt.step(grads)
            total += loss * len(idx)
        entry = {"epoch": epoch, "train_loss": total / len(tr), "val_loss": _eval_loss(policy, va)}
        policy.log.append(entry)
        log.debug("bc epoch %d: %s", epoch, entry)
    return policy


# -- closed loop ------------------------------------------------------------

class OraclePolicy:
    """Plays back the noise-free oracle trajectory for the episode's safe."""

    def __init__(self, horizon: int = 50):
        self.horizon = horizon
        self._traj = None

    def reset(self, model: SafeModel, rule) -> None:
        plan = expand_plan(solve_rule(rule), model)
        self._traj = synthesize_trajectory(plan, model, np.random.default_rng(0), 0.0, rule=rule, jitter=0.0).q

    def act(self, history, phase, rule) -> np.ndarray:
        t = len(history) - 1
        idx = np.minimum(np.arange(t + 1, t + 1 + self.horizon), len(self._traj) - 1)
        return self._traj[idx]


class ZeroPolicy:
    def __init__(self, horizon: int = 50):
        self.horizon = horizon

    def act(self, history, phase, rule) -> np.ndarray:
        return np.zeros((self.horizon, Q_DIM))


@dataclass
class RolloutResult:
    success: bool
    process_score: float
    frames_used: int
    recognized_ops: list[OpEvent]

    def to_dict(self) -> dict:
        return {"success": self.success, "process_score": self.process_score, "frames_used": self.frames_used,
                "recognized_ops": [{"frame": e.frame, "op": e.op.value, "effective": e.effective}
                                   for e in self.recognized_ops]}


def rollout(policy, rule, model: SafeModel, seed, t_max: int = 1500, noise_sigma: float = DEFAULT_NOISE,
            eps: float = DEFAULT_EPS) -> RolloutResult:
    """Observe, predict a chunk, execute all of it, repeat until the door opens or time runs out."""
    rng = np.random.default_rng(seed)
    if hasattr(policy, "reset"):
        policy.reset(model, rule)
    sim = SafeSim(model, rule, eps)
    q = KinematicMap(model).home()
    obs = np.empty((t_max + 1, Q_DIM))
    sim.step(q)
    obs[0] = q + rng.normal(0.0, noise_sigma, Q_DIM)
    t = 0
    while t < t_max and not sim.success:
        chunk = policy.act(obs[:t + 1], sim.phase, rule)
        for q in chunk:
            t += 1
            sim.step(q)
            obs[t] = q + rng.normal(0.0, noise_sigma, Q_DIM)
            if sim.success or t >= t_max:
                break
    ps = 1.0 if sim.success else progress_score(sim.effective_ops, solve_rule(rule))
    return RolloutResult(sim.success, ps, t, list(sim.events))


def episode_setup(rule, episode: int, seed: int, assets=None) -> tuple[SafeModel, np.random.SeedSequence]:
    """Asset, held-out pose and noise stream for one evaluation episode."""
    ss = np.random.SeedSequence([EVAL_STREAM, int(seed), RuleId.parse(rule).number, int(episode)])
    rng = np.random.default_rng(ss)
    assets = list(assets or asset_ids())
    model = randomize_pose(get_asset(assets[int(rng.integers(len(assets)))]), rng)
    return model, ss.spawn(1)[0]


def _episode_job(args):
    policy, rule, i, seed, assets, t_max, noise_sigma = args
    model, ss = episode_setup(rule, i, seed, assets)
    return rollout(policy, rule, model, ss, t_max, noise_sigma)


@dataclass
class EvalRow:
    variant: str
    rule: str
    sr: float
    ps: float
    episodes: int
    seed: int
    config_hash: str
    results: list[RolloutResult] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"variant": self.variant, "rule": self.rule, "sr": self.sr, "ps": self.ps,
                "episodes": self.episodes, "seed": self.seed, "config_hash": self.config_hash}


@dataclass
class EvalReport:
    rows: list[EvalRow]

    @property
    def macro_sr(self) -> float:
        return float(np.mean([r.sr for r in self.rows])) if self.rows else float("nan")

    @property
    def macro_ps(self) -> float:
        return float(np.mean([r.ps for r in self.rows])) if self.rows else float("nan")

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in self.rows], "macro_sr": self.macro_sr, "macro_ps": self.macro_ps}

    def to_text(self) -> str:
        lines = [f"{'variant':<10} {'rule':<9} {'SR (%)':>7} {'PS (%)':>7} {'episodes':>8}"]
        for r in self.rows:
            lines.append(f"{r.variant:<10} {r.rule:<9} {100 * r.sr:7.1f} {100 * r.ps:7.1f} {r.episodes:8d}")
        if len(self.rows) > 1:
            lines.append(f"{'average':<20} {100 * self.macro_sr:7.1f} {100 * self.macro_ps:7.1f}")
        return "\n".join(lines)


def _variant_name(policy) -> str:
    v = getattr(policy, "variant", None)
    return v.value if isinstance(v, MemoryVariant) else type(policy).__name__


def evaluate(policy, rules, episodes: int = 20, seed: int = 0, assets=None, t_max: int = 1500,
             noise_sigma: float = DEFAULT_NOISE, jobs: int = 1) -> EvalReport:
    rows = []
    for rule in rules:
        rule = str(RuleId.parse(rule))
        args = [(policy, rule, i, seed, assets, t_max, noise_sigma) for i in range(episodes)]
        if jobs > 1 and episodes > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_episode_job, args))
        else:
            results = [_episode_job(a) for a in args]
        sr = float(np.mean([r.success for r in results])) if results else 0.0
        ps = float(np.mean([r.process_score for r in results])) if results else 0.0
        rows.append(EvalRow(_variant_name(policy), rule, sr, ps, episodes, seed,
                            getattr(policy, "config_hash", ""), results))
    return EvalReport(rows)


# -- non-Markovianity witness -----------------------------------------------

@dataclass
class Witness:
    demo_a: int
    frame_a: int
    demo_b: int
    frame_b: int
    distance: float
    next_a: Op
    next_b: Op
    state_a: object
    state_b: object

    def to_dict(self) -> dict:
        def state(s):
            return {"buffer": list(s.buffer), "counters": [list(c) for c in s.counters],
                    "visited": sorted(map(list, s.visited)), "unlocked": bool(s.unlocked)}
        return {"demo_a": self.demo_a, "frame_a": self.frame_a, "demo_b": self.demo_b, "frame_b": self.frame_b,
                "distance": self.distance, "next_a": self.next_a.value, "next_b": self.next_b.value,
                "state_a": state(self.state_a), "state_b": state(self.state_b)}


def _next_ops(d: Demonstration) -> np.ndarray:
    idx = pending_op_index(d)
    codes = np.array([list(Op).index(op) for op in d.oracle_ops] + [-1])
    return codes[np.minimum(idx, len(d.oracle_ops))]


def non_markov_witness(demos, rule, delta: float = 2 * DEFAULT_NOISE) -> Witness:
    """Two frames with matching part-phase and q within ``delta`` (L-inf) whose next ops differ.

    Searches within each demo first, then across demo pairs; the closest pair
    of the first demo (or demo pair) that has one is returned.
    """
    rule = str(RuleId.parse(rule))
    pool = [(i, d) for i, d in enumerate(demos) if d.rule_id == rule]
    if not pool:
        raise NotFound(f"no demonstrations of {rule}")
    nxt = {i: _next_ops(d) for i, d in pool}
    phase_key = {i: d.phase @ np.array([4, 2, 1]) for i, d in pool}
    ops = list(Op)

    def search(ia, ib):
        da, db = demos[ia], demos[ib]
        best = None
        for s in range(0, len(da), 256):
            qa = da.q[s:s + 256]
            dist = np.max(np.abs(qa[:, None, :] - db.q[None, :, :]), axis=2)
            valid = (phase_key[ia][s:s + 256, None] == phase_key[ib][None, :]) \
                & (nxt[ia][s:s + 256, None] != nxt[ib][None, :]) \
                & (nxt[ia][s:s + 256, None] >= 0) & (nxt[ib][None, :] >= 0)
            dist = np.where(valid, dist, np.inf)
            k = int(np.argmin(dist))
            a, b = divmod(k, dist.shape[1])
            if dist[a, b] < delta and (best is None or dist[a, b] < best[0]):
                best = (float(dist[a, b]), s + a, b)
        if best is None:
            return None
        dist, fa, fb = best
        sa, sb = rule_states(da)[fa], rule_states(db)[fb]
        return Witness(ia, fa, ib, fb, dist, ops[nxt[ia][fa]], ops[nxt[ib][fb]], sa, sb)

    for i, _ in pool:
        w = search(i, i)
        if w is not None:
            return w
    for (i, _), (j, _) in itertools.combinations(pool, 2):
        w = search(i, j)
        if w is not None:
            return w
    raise NotFound(f"no {rule} frame pair within {delta} with different next ops")


# -- ablation ---------------------------------------------------------------

@dataclass
class AblationCell:
    clusters: int
    memory_len: int
    sr: float
    ps: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AblationReport:
    rule: str
    episodes: int
    seed: int
    cells: list[AblationCell]
    default_clusters: int = 4
    default_len: int = 40

    def cell(self, clusters, memory_len) -> AblationCell | None:
        for c in self.cells:
            if c.clusters == clusters and c.memory_len == memory_len:
                return c
        return None

    def cluster_ordering_ok(self) -> bool | None:
        """Whether 4 clusters has the best SR among {256, 4, 2} at the default length."""
        cells = [self.cell(j, self.default_len) for j in (256, 4, 2)]
        if any(c is None for c in cells):
            return None
        return cells[1].sr >= max(cells[0].sr, cells[2].sr)

    def to_dict(self) -> dict:
        return {"rule": self.rule, "episodes": self.episodes, "seed": self.seed,
                "cells": [c.to_dict() for c in self.cells], "cluster_ordering_ok": self.cluster_ordering_ok()}

    def to_text(self) -> str:
        lines = [f"Memory ablation on {self.rule} ({self.episodes} episodes, seed {self.seed})",
                 f"{'':<20}{'Variant':>8}  {'Success Rate':>12}  {'Process Score':>13}"]
        clusters = sorted({c.clusters for c in self.cells if c.memory_len == self.default_len}, reverse=True)
        lengths = sorted({c.memory_len for c in self.cells if c.clusters == self.default_clusters})
        for i, j in enumerate(clusters):
            c = self.cell(j, self.default_len)
            lines.append(f"{'Number of Clusters' if i == 0 else '':<20}{j:>8}  {100 * c.sr:12.1f}  {100 * c.ps:13.1f}")
        for i, n in enumerate(lengths):
            c = self.cell(self.default_clusters, n)
            lines.append(f"{'Memory Length' if i == 0 else '':<20}{n:>8}  {100 * c.sr:12.1f}  {100 * c.ps:13.1f}")
        rest = [c for c in self.cells if c.clusters != self.default_clusters and c.memory_len != self.default_len]
        if rest:
            lines.append("Other grid cells (clusters x length)")
            for c in rest:
                lines.append(f"{f'{c.clusters} x {c.memory_len}':>28}  {100 * c.sr:12.1f}  {100 * c.ps:13.1f}")
        return "\n".join(lines)


def ablation_cells(clusters=(256, 32, 4, 2), lengths=(20, 40, 60), full_grid: bool = False,
                   default_clusters: int = 4, default_len: int = 40) -> list[tuple[int, int]]:
    if full_grid:
        return [(j, n) for j in clusters for n in lengths]
    cells = [(j, default_len) for j in clusters] + [(default_clusters, n) for n in lengths]
    return list(dict.fromkeys(cells))


def ablate(demos, vq: VqModel, rule="rule_020", clusters=(256, 32, 4, 2), lengths=(20, 40, 60),
           config: PolicyConfig = PolicyConfig(), episodes: int = 20, seed: int = 0, assets=None,
           full_grid: bool = False, jobs: int = 1) -> AblationReport:
    """Train and evaluate a VQMemory policy per (clusters, memory length) cell."""
    rule = str(RuleId.parse(rule))
    cells = []
    maps = {}
    for j, n in ablation_cells(clusters, lengths, full_grid):
        if j not in maps:
            maps[j] = cluster_codebook(vq.codebook, j, seed, vq.usage)
        policy = bc_train(demos, replace(config, variant=MemoryVariant.VQ_MEMORY, memory_len=n), seed,
                          vq.with_clusters(maps[j]))
        row = evaluate(policy, [rule], episodes, seed, assets, jobs=jobs).rows[0]
        log.info("ablation cell clusters=%d len=%d: sr=%.3f ps=%.3f", j, n, row.sr, row.ps)
        cells.append(AblationCell(j, n, row.sr, row.ps))
    return AblationReport(rule, episodes, seed, cells)
