"""Lock automata for the 20 safe rules.

Each rule reacts to part-phase *edges* (a knob or handle changing between open
and closed) by updating a small hidden memory -- the task-phase -- and exposes
per-joint lock flags.  The door unlock latches once the door is seen open.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .safe import PartPhase, SafeModel, SafeState, JointLocked, apply_joint_delta, get_asset, part_phase

N_RULES = 20


class RuleStateMismatch(Exception):
    """Two part-phase edges arrived in one step while strict mode was on."""


class NotSolvable(Exception):
    pass


class Op(enum.Enum):
    TOGGLE_KNOB = "ToggleKnob"
    TOGGLE_HANDLE = "ToggleHandle"
    OPEN_DOOR = "OpenDoor"

    def __str__(self):
        return self.value

    @property
    def joint(self) -> str:
        return {"ToggleKnob": "knob", "ToggleHandle": "handle", "OpenDoor": "door"}[self.value]


# tie-break order for the solver
OPS = (Op.TOGGLE_KNOB, Op.TOGGLE_HANDLE, Op.OPEN_DOOR)


@dataclass(frozen=True, order=True)
class RuleId:
    number: int

    def __post_init__(self):
        if not isinstance(self.number, int) or not 1 <= self.number <= N_RULES:
            raise ValueError(f"rule id must be an integer in 1..{N_RULES}, got {self.number!r}")

    @classmethod
    def parse(cls, value) -> RuleId:
        if isinstance(value, RuleId):
            return value
        if isinstance(value, int):
            return cls(value)
        text = str(value).strip().lower()
        if text.startswith("rule_"):
            text = text[5:]
        if not text.isdigit():
            raise ValueError(f"cannot parse rule id from {value!r}")
        return cls(int(text))

    def __str__(self):
        return f"rule_{self.number:03d}"


ALL_RULES = tuple(RuleId(i) for i in range(1, N_RULES + 1))


@dataclass(frozen=True)
class LockVector:
    knob_locked: bool = False
    handle_locked: bool = False
    door_locked: bool = True

    def as_tuple(self) -> tuple[bool, bool, bool]:
        return (self.knob_locked, self.handle_locked, self.door_locked)

    def locked(self, joint: str) -> bool:
        return {"knob": self.knob_locked, "handle": self.handle_locked, "door": self.door_locked}[joint]


@dataclass(frozen=True)
class RuleState:
    last_phase: PartPhase
    buffer: tuple[str, ...] = ()
    counters: tuple[tuple[str, int], ...] = ()
    visited: frozenset = frozenset()
    unlocked: bool = False

    def counter(self, name: str) -> int:
        return dict(self.counters)[name]

    @property
    def buffer_text(self) -> str:
        return "".join(self.buffer)


class _Mem:
    """Mutable scratch copy of a RuleState's memory used inside one step."""

    def __init__(self, state: RuleState):
        self.buffer = list(state.buffer)
        self.counters = dict(state.counters)
        self.visited = set(state.visited)

    def push(self, digit: str, limit: int):
        self.buffer.append(digit)
        del self.buffer[:-limit]


@dataclass(frozen=True)
class _Rule:
    description: str
    on_edge: Callable[[_Mem, str, bool, PartPhase], None] | None
    predicate: Callable[[_Mem, PartPhase], bool]
    buffer_len: int = 0
    counters: dict = field(default_factory=dict)
    joint_locks: Callable[[PartPhase], tuple[bool, bool]] = lambda p: (False, False)
    tracks_visited: bool = False


def _free(p):
    return (False, False)


# -- transition functions -------------------------------------------------
# on_edge(mem, joint, opened, phase): `phase` already reflects this edge.

def _pw_knob0_handle1(mem, joint, opened, phase):
    mem.push("0" if joint == "knob" else "1", 3)


def _pw_010(mem, joint, opened, phase):
    if joint == "knob":
        mem.push("0" if phase.handle_open else "1", 3)


def _count_toggles(mem, joint, opened, phase):
    key = "knob_toggles" if joint == "knob" else "handle_toggles"
    mem.counters[key] += 1


def _count_handle(mem, joint, opened, phase):
    if joint == "handle":
        mem.counters["handle_toggles"] += 1


def _count_knob(mem, joint, opened, phase):
    if joint == "knob":
        mem.counters["knob_toggles"] += 1


def _pw_1001(mem, joint, opened, phase):
    mem.push("1" if joint == "knob" else "0", 4)


def _pw_0110(mem, joint, opened, phase):
    if joint == "handle":
        mem.push("0" if phase.knob_open else "1", 4)


def _pw_1010(mem, joint, opened, phase):
    if joint == "knob":
        mem.push("0" if opened else "1", 4)


def _visit(mem, joint, opened, phase):
    mem.visited.add((phase.knob_open, phase.handle_open))


def _open_close_counts(mem, joint, opened, phase):
    if joint == "knob" and opened:
        mem.counters["knob_opens"] += 1
    elif joint == "handle" and not opened:
        mem.counters["handle_closes"] += 1
    # reset before the unlock test
    if mem.counters["knob_opens"] >= 3 or mem.counters["handle_closes"] >= 3:
        mem.counters["knob_opens"] = mem.counters["handle_closes"] = 0


def _pw_1110(mem, joint, opened, phase):
    if joint == "knob" and not opened:
        mem.push("1", 4)
    elif joint == "handle" and opened:
        mem.push("0", 4)


def _counter_digits(mem, joint, opened, phase):
    if joint == "knob":
        mem.counters["counter"] += 1
    else:
        mem.push(str(mem.counters["counter"]), 3)
        mem.counters["counter"] = 1


def _knob_while_handle_open(mem, joint, opened, phase):
    if joint == "knob" and phase.handle_open:
        mem.push("1" if opened else "0", 2)


def _buffer_is(text):
    return lambda mem, p: "".join(mem.buffer) == text


_RULES: dict[int, _Rule] = {
    1: _Rule(
        "The safe door remains locked unless both the knob and handle are open.",
        None,
        lambda m, p: p.knob_open and p.handle_open,
    ),
    2: _Rule(
        "The safe door remains locked unless the knob is open.",
        None,
        lambda m, p: p.knob_open,
    ),
    3: _Rule(
        "The safe door remains locked unless the handle is open.",
        None,
        lambda m, p: p.handle_open,
    ),
    4: _Rule(
        "The safe door remains locked unless both the knob and handle are open. "
        "Additionally, the knob cannot be opened unless the handle is open.",
        None,
        lambda m, p: p.knob_open and p.handle_open,
        joint_locks=lambda p: (not p.handle_open, False),
    ),
    5: _Rule(
        "The safe door remains locked unless the password '001' is entered. Changing the knob's "
        "state from open to closed (or vice versa) inputs a '0', while changing the handle's state "
        "inputs a '1'.",
        _pw_knob0_handle1,
        _buffer_is("001"),
        buffer_len=3,
    ),
    6: _Rule(
        "The safe door remains locked unless the password '010' is entered. When handle is open, "
        "changing the knob's state from open to closed (or vice versa) inputs a '0'; otherwise it "
        "inputs a '1'.",
        _pw_010,
        _buffer_is("010"),
        buffer_len=3,
    ),
    7: _Rule(
        "The safe door unlocks when the knob and handle are in opposite states (one open, one "
        "closed). Both must have been toggled at least once.",
        _count_toggles,
        lambda m, p: (p.knob_open != p.handle_open
                      and m.counters["knob_toggles"] >= 1 and m.counters["handle_toggles"] >= 1),
        counters={"knob_toggles": 0, "handle_toggles": 0},
    ),
    8: _Rule(
        "The safe door unlocks only if the knob is open and the handle has been toggled an even "
        "number of times greater than one.",
        _count_handle,
        lambda m, p: (p.knob_open and m.counters["handle_toggles"] >= 2
                      and m.counters["handle_toggles"] % 2 == 0),
        counters={"handle_toggles": 0},
    ),
    9: _Rule(
        "The safe door unlocks after receiving binary input '1001'. Knob state change = '1', "
        "handle state change = '0'. Input buffer holds last 4 digits.",
        _pw_1001,
        _buffer_is("1001"),
        buffer_len=4,
    ),
    10: _Rule(
        "The safe door unlocks when the password '0110' is entered. Handle state change while knob "
        "is open inputs '0', handle change while knob closed inputs '1'.",
        _pw_0110,
        _buffer_is("0110"),
        buffer_len=4,
    ),
    11: _Rule(
        "The safe door unlocks after the password '1010' is entered. Knob state open→closed = "
        "'1', closed→open = '0'. Handle changes ignored.",
        _pw_1010,
        _buffer_is("1010"),
        buffer_len=4,
    ),
    12: _Rule(
        "The safe door unlocks after knob and handle have been in all possible state combinations "
        "(open/open, open/closed, closed/open, closed/closed).",
        _visit,
        lambda m, p: len(m.visited) == 4,
        tracks_visited=True,
    ),
    13: _Rule(
        "The safe door unlocks when the handle is open and the knob has changed state a non-zero "
        "number of times that is divisible by 3.",
        _count_knob,
        lambda m, p: (p.handle_open and m.counters["knob_toggles"] > 0
                      and m.counters["knob_toggles"] % 3 == 0),
        counters={"knob_toggles": 0},
    ),
    14: _Rule(
        "The safe door remains locked unless the knob is closed and the handle is open. "
        "Additionally, the handle cannot be opened unless the knob is open.",
        None,
        lambda m, p: (not p.knob_open) and p.handle_open,
        joint_locks=lambda p: (False, not p.knob_open),
    ),
    15: _Rule(
        "The safe door unlocks when knob open count equals handle close count (minimum 2 each). "
        "Counts reset if either reaches 3.",
        _open_close_counts,
        lambda m, p: (m.counters["knob_opens"] == m.counters["handle_closes"]
                      and m.counters["knob_opens"] >= 2),
        counters={"knob_opens": 0, "handle_closes": 0},
    ),
    16: _Rule(
        "The safe door unlocks after the password '1110' is entered. Closing the knob inputs '1', "
        "opening the handle inputs '0'. Input buffer holds last 4 digits.",
        _pw_1110,
        _buffer_is("1110"),
        buffer_len=4,
    ),
    17: _Rule(
        "The safe door unlocks when the product of the knob and handle toggle counts equals 4. "
        "A toggle is defined as any state change.",
        _count_toggles,
        lambda m, p: m.counters["knob_toggles"] * m.counters["handle_toggles"] == 4,
        counters={"knob_toggles": 0, "handle_toggles": 0},
    ),
    18: _Rule(
        "The safe door unlocks when the password '123' is entered. A knob state change increments "
        "a counter, a handle state change appends the counter value to the buffer and resets the "
        "counter. The counter starts at 1. The buffer holds the last 3 digits.",
        _counter_digits,
        _buffer_is("123"),
        buffer_len=3,
        counters={"counter": 1},
    ),
    19: _Rule(
        "The safe door unlocks after entering the password '01' via knob interactions (0 = knob "
        "closes, 1 = knob opens). Knob events are recorded only when the handle is open. The door "
        "unlocks only when the handle is closed after the correct password has been entered.",
        _knob_while_handle_open,
        lambda m, p: "".join(m.buffer) == "01" and not p.handle_open,
        buffer_len=2,
    ),
    20: _Rule(
        "The safe door unlocks after entering the password '11' via knob interactions (0 = knob "
        "closes, 1 = knob opens). Knob events are recorded only when the handle is open. The door "
        "unlocks only when the handle is closed after the correct password has been entered.",
        _knob_while_handle_open,
        lambda m, p: "".join(m.buffer) == "11" and not p.handle_open,
        buffer_len=2,
    ),
}


def _rule(rule) -> _Rule:
    return _RULES[RuleId.parse(rule).number]


def rule_description(rule) -> str:
    return _rule(rule).description


def buffer_limit(rule) -> int:
    return _rule(rule).buffer_len


def _freeze(mem: _Mem, phase: PartPhase, unlocked: bool) -> RuleState:
    return RuleState(
        last_phase=phase,
        buffer=tuple(mem.buffer),
        counters=tuple(sorted(mem.counters.items())),
        visited=frozenset(mem.visited),
        unlocked=unlocked,
    )


def init_rule(rule, initial_phase: PartPhase = PartPhase()) -> RuleState:
    spec = _rule(rule)
    visited = {(initial_phase.knob_open, initial_phase.handle_open)} if spec.tracks_visited else set()
    return RuleState(
        last_phase=initial_phase,
        counters=tuple(sorted(spec.counters.items())),
        visited=frozenset(visited),
        unlocked=initial_phase.door_open,
    )


def lock_vector(rule, state: RuleState) -> LockVector:
    spec = _rule(rule)
    phase = state.last_phase
    can_open = state.unlocked or spec.predicate(_Mem(state), phase)
    knob_locked, handle_locked = spec.joint_locks(phase)
    return LockVector(knob_locked, handle_locked, not can_open)


def step_rule(rule, state: RuleState, new_phase: PartPhase, strict: bool = False) -> tuple[RuleState, LockVector]:
    """Advance the automaton to ``new_phase``.

    Knob and handle edges are processed knob first.  With ``strict`` a step
    carrying both edges raises RuleStateMismatch instead.
    """
    spec = _rule(rule)
    old = state.last_phase
    edges = [j for j, a, b in (("knob", old.knob_open, new_phase.knob_open),
                               ("handle", old.handle_open, new_phase.handle_open)) if a != b]
    if strict and len(edges) > 1:
        raise RuleStateMismatch(f"{rule}: simultaneous knob and handle edges ({old} -> {new_phase})")
    mem = _Mem(state)
    cur = old
    for joint in edges:
        cur = cur.toggled(joint)
        if spec.on_edge is not None:
            spec.on_edge(mem, joint, getattr(cur, f"{joint}_open"), cur)
    new_state = _freeze(mem, new_phase, state.unlocked or new_phase.door_open)
    return new_state, lock_vector(rule, new_state)


def apply_op(rule, phase: PartPhase, state: RuleState, op: Op) -> tuple[PartPhase, RuleState] | None:
    """Abstract transition used by the solver; None when the op is blocked by a lock."""
    if lock_vector(rule, state).locked(op.joint):
        return None
    if op is Op.OPEN_DOOR:
        new_phase = PartPhase(phase.knob_open, phase.handle_open, True)
    else:
        new_phase = phase.toggled(op.joint)
    new_state, _ = step_rule(rule, state, new_phase)
    return new_phase, new_state


def solve_rule(rule, initial_phase: PartPhase = PartPhase(), max_depth: int = 16) -> list[Op]:
    """Shortest op sequence that ends with the door opened (BFS, ties by OPS order)."""
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    start = init_rule(rule, initial_phase)
    queue = deque([(initial_phase, start, ())])
    seen = {(initial_phase, start)}
    while queue:
        phase, state, path = queue.popleft()
        if not lock_vector(rule, state).door_locked:
            return list(path) + [Op.OPEN_DOOR]
        if len(path) + 1 >= max_depth:
            continue
        for op in OPS[:2]:
            nxt = apply_op(rule, phase, state, op)
            if nxt is None or nxt in seen:
                continue
            seen.add(nxt)
            queue.append((*nxt, path + (op,)))
    raise NotSolvable(f"{RuleId.parse(rule)}: no solution within {max_depth} ops")


@dataclass
class VerifyReport:
    rule: str
    depth: int
    sequences_enumerated: int = 0
    minimal_length: int | None = None
    minimal_sequences: list[tuple[Op, ...]] = field(default_factory=list)
    rejected_door_attempts: int = 0
    rejected_toggle_attempts: int = 0
    # door reached its open phase other than through an unlocked OpenDoor
    door_violations: int = 0

    def to_dict(self) -> dict:
        return {
            "rule": self.rule,
            "depth": self.depth,
            "sequences_enumerated": self.sequences_enumerated,
            "minimal_length": self.minimal_length,
            "minimal_sequences": [[str(o) for o in s] for s in self.minimal_sequences],
            "rejected_door_attempts": self.rejected_door_attempts,
            "rejected_toggle_attempts": self.rejected_toggle_attempts,
            "door_violations": self.door_violations,
        }


def verify_rule_exhaustive(rule, initial_phase: PartPhase = PartPhase(), depth: int = 8,
                           model: SafeModel | None = None) -> VerifyReport:
    """Enumerate every op sequence up to ``depth`` through the joint-level safe model.

    Unlike the solver this drives joints with apply_joint_delta, so locked
    moves are rejected by the safe itself rather than pruned.
    """
    if depth > 12:
        raise ValueError("depth must be <= 12")
    rid = RuleId.parse(rule)
    model = model or get_asset("safe_00")
    values = []
    for j, is_open in zip(model.joints, initial_phase.as_tuple()):
        values.append(j.range_hi if is_open else j.range_lo)
    rstate = init_rule(rid, initial_phase)
    safe = SafeState(tuple(values), lock_vector(rid, rstate).as_tuple())
    report = VerifyReport(rule=str(rid), depth=depth)
    successes: list[tuple[Op, ...]] = []

    def move(safe, rstate, op):
        spec = model.joint(op.joint)
        is_open = getattr(part_phase(safe, model), f"{op.joint}_open")
        delta = -spec.span if is_open and op is not Op.OPEN_DOOR else spec.span
        try:
            safe = apply_joint_delta(safe, op.joint, delta, model)
        except JointLocked:
            return None
        rstate, locks = step_rule(rid, rstate, part_phase(safe, model))
        return safe.with_locks(locks.as_tuple()), rstate

    def walk(safe, rstate, path):
        report.sequences_enumerated += 1
        if len(path) == depth:
            return
        for op in OPS:
            nxt = move(safe, rstate, op)
            seq = path + (op,)
            if nxt is None:
                if op is Op.OPEN_DOOR:
                    report.rejected_door_attempts += 1
                else:
                    report.rejected_toggle_attempts += 1
                walk(safe, rstate, seq)
                continue
            n_safe, n_rstate = nxt
            door_open = part_phase(n_safe, model).door_open
            if op is Op.OPEN_DOOR:
                successes.append(seq)
                report.sequences_enumerated += 1
                if not door_open:
                    report.door_violations += 1
                continue
            if door_open:
                report.door_violations += 1
            walk(n_safe, n_rstate, seq)

    walk(safe, rstate, ())
    if successes:
        report.minimal_length = min(map(len, successes))
        report.minimal_sequences = sorted(
            (s for s in successes if len(s) == report.minimal_length),
            key=lambda s: [OPS.index(o) for o in s],
        )
    return report


def replay_ops(rule, ops: Iterable[Op], initial_phase: PartPhase = PartPhase()) -> tuple[PartPhase, RuleState]:
    """Apply ops through the abstract automaton; raises JointLocked on a blocked op."""
    phase, state = initial_phase, init_rule(rule, initial_phase)
    for op in ops:
        nxt = apply_op(rule, phase, state, op)
        if nxt is None:
            raise JointLocked(op.joint)
        phase, state = nxt
    return phase, state


def catalog() -> list[dict]:
    out = []
    for rid in ALL_RULES:
        spec = _rule(rid)
        counters = list(spec.counters)
        if spec.tracks_visited:
            counters.append("visited")
        out.append({
            "rule_id": str(rid),
            "description": spec.description,
            "buffer_len": spec.buffer_len,
            "counters_used": counters,
            "min_solution_len": len(solve_rule(rid)),
        })
    return out
