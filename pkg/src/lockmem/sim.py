"""Closed-loop coupling between the surrogate robot and a safe.

A joint is grasped when the hand holds the pinch shape with the arm at that
joint's reach anchor.  While grasped, the joint follows the arm's progress
along its rotate segment (the door follows the pull segment from the handle),
mapped through the inverse minimum-jerk profile so that demonstrations replay
with the same joint timing.
Reaching a terminal anchor completes an op; an op whose joint stayed locked
is recorded as a failed attempt.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .demos import ARM_DIMS, Q_DIM, KinematicMap, SubOpKind, inverse_min_jerk, min_anchor_separation
from .rules import Op, init_rule, lock_vector, step_rule
from .safe import JointLocked, PartPhase, SafeModel, apply_joint_delta, openness, part_phase

DEFAULT_EPS = 0.08          # 4 x the demo noise sigma
SEGMENT_TOL = 0.25
RELEASE_FACTOR = 2.0     # grasp hysteresis: the hand must open well past the pinch ball


@dataclass(frozen=True)
class OpEvent:
    frame: int
    op: Op
    effective: bool


@dataclass
class _Grasp:
    target: str
    v0: float
    v1: float
    door_v0: float
    s_turn: float = 0.0
    s_pull: float = 0.0
    turned: bool = False
    pulled: bool = False


def segment_progress(x: np.ndarray, a: np.ndarray, b: np.ndarray, tol: float = SEGMENT_TOL) -> float | None:
    """Fraction along a->b of the projection of x, or None when x is off the segment."""
    ab = b - a
    s = float(np.clip(np.dot(x - a, ab) / np.dot(ab, ab), 0.0, 1.0))
    if np.max(np.abs(x - (a + s * ab))) > tol:
        return None
    return s


class SafeSim:
    """Safe + rule engine driven frame by frame by robot configurations."""

    def __init__(self, model: SafeModel, rule, eps: float = DEFAULT_EPS):
        self.model = model
        self.rule = rule
        self.eps = eps
        kmap = KinematicMap(model)
        self._pinch = kmap.hand_shapes()["pinch"]
        self._reach = {j: kmap.anchor(j, SubOpKind.REACH)[:ARM_DIMS] for j in ("knob", "handle")}
        self._turn = {j: kmap.anchor(j, SubOpKind.ROTATE)[:ARM_DIMS] for j in ("knob", "handle")}
        self._pull = kmap.anchor("door", SubOpKind.PULL, 1.0)[:ARM_DIMS]
        self._terminal = kmap.terminal_anchors()
        safe = model.initial_state()
        self.phase = part_phase(safe, model)
        self.rstate = init_rule(rule, self.phase)
        self.safe = safe.with_locks(lock_vector(rule, self.rstate).as_tuple())
        self.grasp: _Grasp | None = None
        self.events: list[OpEvent] = []
        self.frame = -1

    @property
    def success(self) -> bool:
        return self.phase.door_open

    def _near(self, x, y) -> bool:
        return float(np.max(np.abs(x - y))) < self.eps

    def _drive(self, joint: str, value: float) -> None:
        try:
            self.safe = apply_joint_delta(self.safe, joint, value - self.safe.value(joint), self.model)
        except JointLocked:
            pass

    def step(self, q: np.ndarray) -> PartPhase:
        self.frame += 1
        arm, hand = q[:ARM_DIMS], q[ARM_DIMS:]
        hand_err = float(np.max(np.abs(hand - self._pinch)))
        if self.grasp is not None and hand_err >= RELEASE_FACTOR * self.eps:
            self.grasp = None
        if self.grasp is None and hand_err < self.eps:
            for j in ("knob", "handle"):
                if self._near(arm, self._reach[j]):
                    spec = self.model.joint(j)
                    v0 = self.safe.value(j)
                    is_open = openness(self.safe, j, self.model) >= spec.open_threshold
                    self.grasp = _Grasp(j, v0, spec.range_lo if is_open else spec.range_hi,
                                        self.safe.value("door"))
                    break

        g = self.grasp
        if g is not None:
            s = segment_progress(arm, self._reach[g.target], self._turn[g.target])
            if s is not None and s > g.s_turn:
                g.s_turn = s
                self._drive(g.target, g.v0 + float(inverse_min_jerk(s)) * (g.v1 - g.v0))
            op = Op.TOGGLE_KNOB if g.target == "knob" else Op.TOGGLE_HANDLE
            if not g.turned and self._near(q, self._terminal[op]):
                g.turned = True
                self._drive(g.target, g.v1)
                done = abs(self.safe.value(g.target) - g.v1) < 1e-9
                self.events.append(OpEvent(self.frame, op, done))
            if g.target == "handle":
                s = segment_progress(arm, self._reach["handle"], self._pull)
                door = self.model.joint("door")
                if s is not None and s > g.s_pull:
                    g.s_pull = s
                    self._drive("door", g.door_v0 + float(inverse_min_jerk(s)) * (door.range_hi - g.door_v0))
                if not g.pulled and self._near(q, self._terminal[Op.OPEN_DOOR]):
                    g.pulled = True
                    self._drive("door", door.range_hi)
                    self.events.append(OpEvent(self.frame, Op.OPEN_DOOR,
                                               abs(self.safe.value("door") - door.range_hi) < 1e-9))

        self.phase = part_phase(self.safe, self.model)
        self.rstate, lv = step_rule(self.rule, self.rstate, self.phase)
        self.safe = self.safe.with_locks(lv.as_tuple())
        return self.phase

    @property
    def effective_ops(self) -> list[Op]:
        return [e.op for e in self.events if e.effective]


@dataclass
class Recognition:
    events: list[OpEvent]
    phases: np.ndarray
    success: bool
    ops: list[Op] = field(default_factory=list)


def recognize_ops(q: np.ndarray, model: SafeModel, rule, eps: float = DEFAULT_EPS) -> Recognition:
    """Replay a joint trajectory through the simulator and report the ops it performs."""
    sep = min_anchor_separation(KinematicMap(model))
    if eps >= sep / 2:
        raise ValueError(f"epsilon {eps} must be below half the minimum anchor separation ({sep:.4f})")
    sim = SafeSim(model, rule, eps)
    phases = []
    for frame in np.asarray(q, dtype=float).reshape(-1, Q_DIM):
        phases.append(sim.step(frame).as_tuple())
    return Recognition(list(sim.events), np.asarray(phases, dtype=bool).reshape(-1, 3), sim.success,
                       sim.effective_ops)


def progress_score(ops, oracle_ops) -> float:
    """Longest prefix of the oracle sequence matched by ``ops``, as a fraction."""
    oracle_ops = list(oracle_ops)
    if not oracle_ops:
        return 1.0
    n = 0
    for a, b in zip(ops, oracle_ops):
        if a is not b:
            break
        n += 1
    return n / len(oracle_ops)
