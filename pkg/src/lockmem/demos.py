"""Synthetic demonstrations: op plans -> sub-op plans -> 10 Hz proprioceptive trajectories.

The robot is a surrogate: 13 abstract coordinates (7 "arm" + 6 "hand").  Each
sub-operation drives either the arm or the hand block toward an anchor
configuration with a minimum-jerk profile.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .rules import Op, RuleId, init_rule, lock_vector, solve_rule, step_rule
from .safe import (
    JointLocked,
    Pose,
    SafeModel,
    SafeState,
    apply_joint_delta,
    asset_ids,
    get_asset,
    part_phase,
    randomize_pose,
)

FRAME_RATE_HZ = 10
DT = 1.0 / FRAME_RATE_HZ
ARM_DIMS = 7
HAND_DIMS = 6
Q_DIM = ARM_DIMS + HAND_DIMS
DEFAULT_NOISE = 0.02


class LockedDuringExecution(Exception):
    """A plan tried to move a joint the rule engine had locked."""


class SubOpKind(enum.Enum):
    PRE_PINCH = "PrePinch"
    REACH = "Reach"
    PINCH = "Pinch"
    ROTATE = "Rotate"
    RELEASE = "Release"
    PULL = "Pull"

    def __str__(self):
        return self.value


HAND_KINDS = frozenset({SubOpKind.PRE_PINCH, SubOpKind.PINCH, SubOpKind.RELEASE})

# nominal durations in frames (10 Hz)
DEFAULT_DURATIONS = {
    SubOpKind.PRE_PINCH: 15,
    SubOpKind.REACH: 35,
    SubOpKind.PINCH: 15,
    SubOpKind.ROTATE: 35,
    SubOpKind.RELEASE: 15,
    SubOpKind.PULL: 40,
}


@dataclass(frozen=True)
class SubOp:
    kind: SubOpKind
    target_joint: str | None = None
    param: float = 0.0
    duration_frames: int = 10
    op_index: int = 0

    def __post_init__(self):
        if self.kind in (SubOpKind.ROTATE, SubOpKind.PULL) and self.target_joint is None:
            raise ValueError(f"{self.kind} needs a target joint")
        if self.duration_frames < 2:
            raise ValueError("duration_frames must be >= 2")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "target": self.target_joint, "param": self.param,
                "duration": self.duration_frames, "op": self.op_index}

    @classmethod
    def from_dict(cls, d: dict) -> SubOp:
        return cls(SubOpKind(d["kind"]), d["target"], float(d["param"]), int(d["duration"]), int(d["op"]))


def min_jerk(s):
    """Normalized minimum-jerk position profile on s in [0, 1]."""
    s = np.asarray(s, dtype=float)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


# canonical (asset-free) anchor geometry
_ARM_HOME = np.zeros(ARM_DIMS)
_ARM_REACH = {
    "knob": np.array([0.80, 0.50, -0.80, 0.90, -0.40, 0.00, 0.00]),
    "handle": np.array([0.80, -0.50, -0.80, 0.90, 0.60, 0.00, 0.00]),
}
# wrist displacement for a 60 degree turn
_WRIST_TURN = {
    "knob": np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.80, 0.60]),
    "handle": np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.80, -0.60]),
}
# arm displacement for a full door pull
_PULL = np.array([-0.80, 0.00, 0.60, -0.60, 0.00, 0.00, 0.00])
_HAND = {
    "home": np.zeros(HAND_DIMS),
    "pre_pinch": np.array([0.5, 0.5, 0.2, 0.8, 0.7, 0.6]),
    "pinch": np.array([0.9, 0.9, 0.8, 0.1, 0.1, 0.9]),
    "release": np.array([0.1, 0.1, 0.0, 0.6, 0.9, 0.3]),
}
_ANCHOR_KEYS = ("home", "reach_knob", "reach_handle", "turn_knob", "turn_handle", "pull")


def _asset_number(asset_id: str) -> int:
    digits = "".join(c for c in asset_id if c.isdigit())
    return int(digits) if digits else sum(map(ord, asset_id))


class KinematicMap:
    """Deterministic anchor configurations for one asset at one pose.

    Arm anchors = canonical geometry + per-asset shift and perturbation +
    an affine pose offset (mostly shared across anchors).  Hand shapes do not
    depend on pose.
    """

    def __init__(self, model: SafeModel):
        self.model = model
        rng = np.random.default_rng([7, _asset_number(model.asset_id)])
        shift = rng.uniform(-0.15, 0.15, ARM_DIMS)
        shared_pose = rng.uniform(-0.04, 0.04, (ARM_DIMS, 3))
        p = model.pose_bounds.normalize(model.pose)
        self._arm = {}
        for key in _ANCHOR_KEYS:
            local = rng.uniform(-0.02, 0.02, ARM_DIMS)
            local_pose = rng.uniform(-0.005, 0.005, (ARM_DIMS, 3))
            self._arm[key] = shift + local + (shared_pose + local_pose) @ p
        self._hand = {k: v + rng.uniform(-0.02, 0.02, HAND_DIMS) for k, v in _HAND.items()}

    def _turn_scale(self, joint: str, param: float) -> float:
        return abs(param) / 60.0 if param else math.degrees(self.model.joint(joint).span) / 60.0

    def home(self) -> np.ndarray:
        return np.concatenate([_ARM_HOME + self._arm["home"], self._hand["home"]])

    def anchor(self, target: str | None, kind: SubOpKind, param: float = 0.0) -> np.ndarray:
        """Full 13-dim configuration at the end of a sub-op in its canonical context."""
        if kind is SubOpKind.PRE_PINCH:
            return np.concatenate([self._arm["home"], self._hand["pre_pinch"]])
        if kind is SubOpKind.RELEASE:
            return np.concatenate([self._arm["home"], self._hand["release"]])
        if kind is SubOpKind.PULL:
            openness = param if param else 1.0
            arm = _ARM_REACH["handle"] + self._arm["reach_handle"] + openness * (_PULL + self._arm["pull"] - self._arm["home"])
            return np.concatenate([arm, self._hand["pinch"]])
        if target not in _ARM_REACH:
            raise ValueError(f"{kind} cannot target {target!r}")
        reach = _ARM_REACH[target] + self._arm[f"reach_{target}"]
        if kind is SubOpKind.REACH:
            return np.concatenate([reach, self._hand["pre_pinch"]])
        if kind is SubOpKind.PINCH:
            return np.concatenate([reach, self._hand["pinch"]])
        if kind is SubOpKind.ROTATE:
            turn = self._turn_scale(target, param) * (_WRIST_TURN[target] + self._arm[f"turn_{target}"] - self._arm["home"])
            return np.concatenate([reach + turn, self._hand["pinch"]])
        raise ValueError(f"unhandled sub-op kind {kind}")

    @staticmethod
    def moving_mask(kind: SubOpKind) -> np.ndarray:
        mask = np.zeros(Q_DIM, dtype=bool)
        if kind in HAND_KINDS:
            mask[ARM_DIMS:] = True
        else:
            mask[:ARM_DIMS] = True
        return mask

    def terminal_anchors(self) -> dict[Op, np.ndarray]:
        """Configuration whose arrival completes each abstract op."""
        return {
            Op.TOGGLE_KNOB: self.anchor("knob", SubOpKind.ROTATE),
            Op.TOGGLE_HANDLE: self.anchor("handle", SubOpKind.ROTATE),
            Op.OPEN_DOOR: self.anchor("door", SubOpKind.PULL, 1.0),
        }

    def targeted_anchors(self) -> dict[tuple[str, str], np.ndarray]:
        out = {}
        for target in ("knob", "handle"):
            for kind in (SubOpKind.REACH, SubOpKind.PINCH, SubOpKind.ROTATE):
                out[(target, kind.value)] = self.anchor(target, kind)
        out[("door", SubOpKind.PULL.value)] = self.anchor("door", SubOpKind.PULL, 1.0)
        return out

    def hand_shapes(self) -> dict[str, np.ndarray]:
        return dict(self._hand)


_MJ_GRID = np.linspace(0.0, 1.0, 2001)
_MJ_VALUES = min_jerk(_MJ_GRID)


def inverse_min_jerk(p):
    """Time fraction at which the minimum-jerk profile reaches position fraction p."""
    return np.interp(p, _MJ_VALUES, _MJ_GRID)


def min_anchor_separation(kmap: KinematicMap) -> float:
    """Smallest L-inf distance between distinct targeted anchors and between hand shapes."""
    seps = []
    pts = list(kmap.targeted_anchors().values())
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            seps.append(np.max(np.abs(pts[i] - pts[j])))
    hands = list(kmap.hand_shapes().values())
    for i in range(len(hands)):
        for j in range(i + 1, len(hands)):
            seps.append(np.max(np.abs(hands[i] - hands[j])))
    return float(min(seps))


def grasp_target(op: Op) -> str:
    return "knob" if op is Op.TOGGLE_KNOB else "handle"


def expand_plan(ops, model: SafeModel, durations: dict | None = None) -> list[SubOp]:
    """Concrete sub-op plan for an abstract op sequence starting from the closed safe."""
    durations = {**DEFAULT_DURATIONS, **(durations or {})}
    is_open = {j.name: False for j in model.joints}
    plan: list[SubOp] = []
    prev_target = None

    def sub(kind, target=None, param=0.0, i=0):
        plan.append(SubOp(kind, target, param, durations[kind], i))

    for i, op in enumerate(ops):
        target = grasp_target(op)
        if prev_target is not None and target != prev_target:
            sub(SubOpKind.RELEASE, None, 0.0, i)
        if op is Op.OPEN_DOOR:
            sub(SubOpKind.REACH, "handle", 0.0, i)
            sub(SubOpKind.PINCH, "handle", 0.0, i)
            sub(SubOpKind.PULL, "door", 1.0, i)
        else:
            joint = op.joint
            degrees = math.degrees(model.joint(joint).span)
            sub(SubOpKind.PRE_PINCH, None, 0.0, i)
            sub(SubOpKind.REACH, joint, 0.0, i)
            sub(SubOpKind.PINCH, joint, 0.0, i)
            sub(SubOpKind.ROTATE, joint, -degrees if is_open[joint] else degrees, i)
            is_open[joint] = not is_open[joint]
        prev_target = target
    return plan


@dataclass
class Demonstration:
    rule_id: str
    asset_id: str
    pose: Pose
    q: np.ndarray            # (T, 13)
    safe: np.ndarray         # (T, 3)
    phase: np.ndarray        # (T, 3) bool
    locks: np.ndarray        # (T, 3) bool
    subop: np.ndarray        # (T,) index into subops, -1 before the first
    subops: list[SubOp]
    op_boundaries: list[int]
    oracle_ops: list[Op]
    success: bool
    noise_sigma: float = DEFAULT_NOISE
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.q)

    @property
    def model(self) -> SafeModel:
        from dataclasses import replace

        return replace(get_asset(self.asset_id), pose=self.pose)


def synthesize_trajectory(plan: list[SubOp], model: SafeModel, rng: np.random.Generator,
                          noise_sigma: float = DEFAULT_NOISE, speed: float = 1.0, *,
                          rule, ops: list[Op] | None = None, jitter: float = 0.2) -> Demonstration:
    """Roll a sub-op plan out at 10 Hz, stepping the rule engine every frame.

    A grasped joint advances linearly in time across its Rotate/Pull sub-op;
    since the arm follows a minimum-jerk profile, the joint fraction equals
    the inverse profile of the arm's progress along the segment.
    """
    rid = RuleId.parse(rule)
    kmap = KinematicMap(model)
    safe = model.initial_state()
    phase = part_phase(safe, model)
    rstate = init_rule(rid, phase)
    safe = safe.with_locks(lock_vector(rid, rstate).as_tuple())
    q = kmap.home()

    qs, safes, phases, locks, subs = [q], [safe.values], [phase.as_tuple()], [safe.locks], [-1]
    boundaries: dict[int, int] = {}
    for s_idx, sub in enumerate(plan):
        factor = rng.uniform(1.0 - jitter, 1.0 + jitter) if jitter > 0 else 1.0
        n = max(2, int(round(sub.duration_frames * factor / speed)))
        boundaries.setdefault(sub.op_index, len(qs))
        mask = kmap.moving_mask(sub.kind)
        goal = q.copy()
        goal[mask] = kmap.anchor(sub.target_joint, sub.kind, sub.param)[mask]
        joint = sub.target_joint if sub.kind in (SubOpKind.ROTATE, SubOpKind.PULL) else None
        if joint is not None:
            spec = model.joint(joint)
            v0 = safe.value(joint)
            v1 = spec.range_lo if (sub.kind is SubOpKind.ROTATE and sub.param < 0) else spec.range_hi
        profile = min_jerk(np.arange(1, n + 1) / n)
        for k in range(1, n + 1):
            if joint is not None:
                target_value = v0 + (v1 - v0) * k / n
                try:
                    safe = apply_joint_delta(safe, joint, target_value - safe.value(joint), model)
                except JointLocked as exc:
                    raise LockedDuringExecution(
                        f"{rid}: {sub.kind} on locked joint {exc.joint} at frame {len(qs)}") from exc
            phase = part_phase(safe, model)
            rstate, lv = step_rule(rid, rstate, phase)
            safe = safe.with_locks(lv.as_tuple())
            qs.append(q + (goal - q) * profile[k - 1])
            safes.append(safe.values)
            phases.append(phase.as_tuple())
            locks.append(safe.locks)
            subs.append(s_idx)
        q = goal

    q_arr = np.asarray(qs)
    if noise_sigma > 0:
        q_arr = q_arr + rng.normal(0.0, noise_sigma, q_arr.shape)
    n_ops = max((s.op_index for s in plan), default=-1) + 1
    return Demonstration(
        rule_id=str(rid),
        asset_id=model.asset_id,
        pose=model.pose,
        q=q_arr,
        safe=np.asarray(safes, dtype=float),
        phase=np.asarray(phases, dtype=bool),
        locks=np.asarray(locks, dtype=bool),
        subop=np.asarray(subs, dtype=int),
        subops=list(plan),
        op_boundaries=[boundaries[i] for i in range(n_ops)],
        oracle_ops=list(ops) if ops is not None else [],
        success=bool(phases[-1][2]),
        noise_sigma=float(noise_sigma),
    )


def demo_seed(seed: int, rule, index: int) -> list[int]:
    return [int(seed), RuleId.parse(rule).number, int(index)]


def make_demo(rule, index: int, seed: int, assets=None, noise_sigma: float = DEFAULT_NOISE,
              speed: float = 1.0, jitter: float = 0.2) -> Demonstration:
    """One seeded demo: random asset and pose, solve, expand, synthesize."""
    rng = np.random.default_rng(demo_seed(seed, rule, index))
    assets = list(assets or asset_ids())
    model = get_asset(assets[int(rng.integers(len(assets)))])
    model = randomize_pose(model, rng)
    ops = solve_rule(rule)
    plan = expand_plan(ops, model)
    return synthesize_trajectory(plan, model, rng, noise_sigma, speed, rule=rule, ops=ops, jitter=jitter)


def _make_demo_job(args):
    return make_demo(*args)


def generate_dataset(rules, n_per_rule: int, seed: int, assets=None, noise_sigma: float = DEFAULT_NOISE,
                     jobs: int = 1) -> tuple[list[Demonstration], dict]:
    """Generate ``n_per_rule`` demos for each rule; returns (demos, manifest)."""
    if n_per_rule < 0:
        raise ValueError("n_per_rule must be >= 0")
    rules = [RuleId.parse(r) for r in rules]
    jobs_args = [(r, i, seed, assets, noise_sigma) for r in rules for i in range(n_per_rule)]
    if jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            demos = list(pool.map(_make_demo_job, jobs_args, chunksize=4))
    else:
        demos = [make_demo(*a) for a in jobs_args]
    per_rule = {}
    for r in rules:
        lengths = [len(d) for d in demos if d.rule_id == str(r)]
        per_rule[str(r)] = {
            "count": len(lengths),
            "mean_length": float(np.mean(lengths)) if lengths else 0.0,
            "seeds": [demo_seed(seed, r, i) for i in range(n_per_rule)],
        }
    manifest = {
        "dataset_seed": int(seed),
        "n_per_rule": int(n_per_rule),
        "noise_sigma": float(noise_sigma),
        "assets": sorted(assets) if assets else "all",
        "total": len(demos),
        "rules": per_rule,
    }
    return demos, manifest


def replay_check(demo: Demonstration) -> list[int]:
    """Frames where replaying safe values through the rule engine disagrees with the stored data."""
    model = demo.model
    bad = []
    rstate = None
    for t in range(len(demo)):
        safe = SafeState(tuple(demo.safe[t]))
        phase = part_phase(safe, model)
        if rstate is None:
            rstate = init_rule(demo.rule_id, phase)
            lv = lock_vector(demo.rule_id, rstate)
        else:
            rstate, lv = step_rule(demo.rule_id, rstate, phase)
        if phase.as_tuple() != tuple(demo.phase[t]) or lv.as_tuple() != tuple(demo.locks[t]):
            bad.append(t)
    return bad


def rule_states(demo: Demonstration) -> list:
    """Per-frame RuleState snapshots reconstructed by replay."""
    model = demo.model
    out = []
    rstate = None
    for t in range(len(demo)):
        phase = part_phase(SafeState(tuple(demo.safe[t])), model)
        rstate = init_rule(demo.rule_id, phase) if rstate is None else step_rule(demo.rule_id, rstate, phase)[0]
        out.append(rstate)
    return out


def pending_op_index(demo: Demonstration) -> np.ndarray:
    """For each frame, index of the first oracle op whose effect has not yet appeared.

    Each op of a solved plan produces exactly one part-phase edge, so the
    count of edges seen so far is the index of the op still required.
    """
    edges = np.any(demo.phase[1:] != demo.phase[:-1], axis=1).astype(int)
    return np.concatenate([[0], np.cumsum(edges)])
