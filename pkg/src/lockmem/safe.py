"""Physics-free articulated safe: knob, handle and door joints with lock flags."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

JOINTS = ("knob", "handle", "door")
JOINT_KINDS = ("revolute", "prismatic")


class JointLocked(Exception):
    """Raised when a locked joint is asked to move."""

    def __init__(self, joint: str):
        super().__init__(f"joint {joint!r} is locked")
        self.joint = joint


def _joint_index(joint: str) -> int:
    try:
        return JOINTS.index(joint)
    except ValueError:
        raise KeyError(f"unknown joint {joint!r}; expected one of {JOINTS}") from None


@dataclass(frozen=True)
class JointSpec:
    name: str
    kind: str
    range_lo: float
    range_hi: float
    open_threshold: float = 0.5
    initial_value: float | None = None

    def __post_init__(self):
        if self.name not in JOINTS:
            raise ValueError(f"joint name must be one of {JOINTS}, got {self.name!r}")
        if self.kind not in JOINT_KINDS:
            raise ValueError(f"joint kind must be one of {JOINT_KINDS}, got {self.kind!r}")
        if not self.range_lo < self.range_hi:
            raise ValueError(f"{self.name}: range_lo must be < range_hi")
        if not 0.0 < self.open_threshold < 1.0:
            raise ValueError(f"{self.name}: open_threshold must lie in (0, 1)")
        if self.initial_value is None:
            object.__setattr__(self, "initial_value", self.range_lo)
        if not self.range_lo <= self.initial_value <= self.range_hi:
            raise ValueError(f"{self.name}: initial_value outside joint range")

    @property
    def span(self) -> float:
        return self.range_hi - self.range_lo

    def clamp(self, value: float) -> float:
        return min(max(value, self.range_lo), self.range_hi)


@dataclass(frozen=True)
class Pose:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw])


@dataclass(frozen=True)
class PoseBounds:
    x: tuple[float, float] = (-0.05, 0.05)
    y: tuple[float, float] = (-0.05, 0.05)
    yaw: tuple[float, float] = (-0.15, 0.15)

    def __post_init__(self):
        for name in ("x", "y", "yaw"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"pose bound {name}: lo > hi")

    def center(self) -> Pose:
        return Pose(*(0.5 * (lo + hi) for lo, hi in (self.x, self.y, self.yaw)))

    def normalize(self, pose: Pose) -> np.ndarray:
        """Map a pose into [-1, 1]^3 (zero-width axes map to 0)."""
        out = []
        for value, (lo, hi) in zip((pose.x, pose.y, pose.yaw), (self.x, self.y, self.yaw)):
            half = 0.5 * (hi - lo)
            out.append(0.0 if half == 0 else (value - 0.5 * (lo + hi)) / half)
        return np.array(out)


@dataclass(frozen=True)
class SafeModel:
    asset_id: str
    joints: tuple[JointSpec, JointSpec, JointSpec]
    pose: Pose = field(default_factory=Pose)
    pose_bounds: PoseBounds = field(default_factory=PoseBounds)

    def __post_init__(self):
        names = tuple(j.name for j in self.joints)
        if names != JOINTS:
            raise ValueError(f"safe must define joints {JOINTS} in order, got {names}")

    def joint(self, name: str) -> JointSpec:
        return self.joints[_joint_index(name)]

    def initial_state(self) -> SafeState:
        """All joints at their initial values; door locked, knob and handle free."""
        return SafeState(
            values=tuple(j.initial_value for j in self.joints),
            locks=(False, False, True),
        )


@dataclass(frozen=True)
class SafeState:
    values: tuple[float, float, float]
    locks: tuple[bool, bool, bool] = (False, False, False)

    def value(self, joint: str) -> float:
        return self.values[_joint_index(joint)]

    def locked(self, joint: str) -> bool:
        return self.locks[_joint_index(joint)]

    def with_locks(self, locks) -> SafeState:
        return replace(self, locks=tuple(bool(x) for x in locks))


@dataclass(frozen=True)
class PartPhase:
    knob_open: bool = False
    handle_open: bool = False
    door_open: bool = False

    def as_tuple(self) -> tuple[bool, bool, bool]:
        return (self.knob_open, self.handle_open, self.door_open)

    def toggled(self, joint: str) -> PartPhase:
        flags = list(self.as_tuple())
        i = _joint_index(joint)
        flags[i] = not flags[i]
        return PartPhase(*flags)

    def __str__(self):
        return "".join(c.upper() if v else c for c, v in zip("khd", self.as_tuple()))


def openness(state: SafeState, joint: str, model: SafeModel) -> float:
    spec = model.joint(joint)
    return (state.value(joint) - spec.range_lo) / spec.span


def part_phase(state: SafeState, model: SafeModel) -> PartPhase:
    return PartPhase(*(openness(state, j.name, model) >= j.open_threshold for j in model.joints))


def apply_joint_delta(state: SafeState, joint: str, delta: float, model: SafeModel) -> SafeState:
    """Move one joint by ``delta`` and clamp it to its range.

    Raises JointLocked (state untouched) when the joint is locked.
    """
    i = _joint_index(joint)
    if state.locks[i]:
        raise JointLocked(joint)
    values = list(state.values)
    values[i] = model.joints[i].clamp(values[i] + delta)
    return replace(state, values=tuple(values))


def randomize_pose(model: SafeModel, rng: np.random.Generator, bounds: PoseBounds | None = None) -> SafeModel:
    bounds = bounds or model.pose_bounds
    pose = Pose(*(float(rng.uniform(lo, hi)) for lo, hi in (bounds.x, bounds.y, bounds.yaw)))
    return replace(model, pose=pose)


def _joint_from_json(d: dict) -> JointSpec:
    return JointSpec(
        name=d["name"],
        kind=d["kind"],
        range_lo=float(d["lo"]),
        range_hi=float(d["hi"]),
        open_threshold=float(d["threshold"]),
        initial_value=float(d.get("init", d["lo"])),
    )


def model_from_json(d: dict) -> SafeModel:
    by_name = {j["name"]: _joint_from_json(j) for j in d["joints"]}
    if sorted(by_name) != sorted(JOINTS) or len(d["joints"]) != 3:
        raise ValueError(f"asset {d.get('asset_id')!r}: joints must be exactly {JOINTS}")
    pb = d.get("pose_bounds", {})
    bounds = PoseBounds(**{k: tuple(v) for k, v in pb.items()})
    return SafeModel(
        asset_id=d["asset_id"],
        joints=tuple(by_name[n] for n in JOINTS),
        pose=bounds.center(),
        pose_bounds=bounds,
    )


def load_assets(path: str | Path | None = None) -> dict[str, SafeModel]:
    """Load asset presets from a JSON list; defaults to the 10 shipped presets."""
    if path is None:
        text = resources.files("lockmem").joinpath("data/assets.json").read_text()
    else:
        text = Path(path).read_text()
    return {m.asset_id: m for m in map(model_from_json, json.loads(text))}


@lru_cache(maxsize=None)
def _default_assets() -> dict[str, SafeModel]:
    return load_assets()


def asset_ids() -> list[str]:
    return sorted(_default_assets())


def get_asset(asset_id: str) -> SafeModel:
    try:
        return _default_assets()[asset_id]
    except KeyError:
        raise KeyError(f"unknown asset {asset_id!r}") from None
