"""JSON-lines demonstration datasets.

Layout: one header line ``{"format": "lockmem.demos", ...}`` followed by one
demonstration per line.  Floats are written with ``repr`` precision so a
write/read round trip is exact.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .artifacts import TOOL_VERSION, dump_json
from .demos import Q_DIM, Demonstration, SubOp
from .rules import Op, RuleId
from .safe import Pose, get_asset

FORMAT = "lockmem.demos"
FORMAT_VERSION = 1


class SchemaViolation(ValueError):
    def __init__(self, line: int, field: str, message: str):
        super().__init__(f"line {line}: field {field!r}: {message}")
        self.line = line
        self.field = field


def demo_to_record(demo: Demonstration) -> dict:
    frames = [
        {
            "t": t,
            "q": demo.q[t].tolist(),
            "safe": demo.safe[t].tolist(),
            "phase": demo.phase[t].tolist(),
            "locks": demo.locks[t].tolist(),
            "subop": int(demo.subop[t]),
        }
        for t in range(len(demo))
    ]
    return {
        "rule_id": demo.rule_id,
        "asset_id": demo.asset_id,
        "pose": {"x": demo.pose.x, "y": demo.pose.y, "yaw": demo.pose.yaw},
        "frames": frames,
        "op_boundaries": list(demo.op_boundaries),
        "oracle_ops": [op.value for op in demo.oracle_ops],
        "success": demo.success,
        "subops": [s.to_dict() for s in demo.subops],
        "noise_sigma": demo.noise_sigma,
    }


def _expect(cond, line, field, msg):
    if not cond:
        raise SchemaViolation(line, field, msg)


def _reals(value, n, line, field):
    _expect(isinstance(value, list) and len(value) == n, line, field, f"expected list of {n} numbers")
    for v in value:
        _expect(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v),
                line, field, f"non-numeric or non-finite entry {v!r}")
    return value


def _bools(value, n, line, field):
    _expect(isinstance(value, list) and len(value) == n and all(isinstance(v, bool) for v in value),
            line, field, f"expected list of {n} booleans")
    return value


def record_to_demo(rec: dict, line: int = 0) -> Demonstration:
    _expect(isinstance(rec, dict), line, "<record>", "expected an object")
    for key in ("rule_id", "asset_id", "pose", "frames", "op_boundaries", "oracle_ops", "success"):
        _expect(key in rec, line, key, "missing")
    try:
        rule = str(RuleId.parse(rec["rule_id"]))
    except ValueError as exc:
        raise SchemaViolation(line, "rule_id", str(exc)) from None
    try:
        get_asset(rec["asset_id"])
    except KeyError as exc:
        raise SchemaViolation(line, "asset_id", str(exc)) from None
    pose = rec["pose"]
    _expect(isinstance(pose, dict) and set(pose) == {"x", "y", "yaw"}, line, "pose", "expected {x, y, yaw}")
    _reals([pose["x"], pose["y"], pose["yaw"]], 3, line, "pose")
    frames = rec["frames"]
    _expect(isinstance(frames, list) and frames, line, "frames", "expected a non-empty list")
    q, safe, phase, locks, subop = [], [], [], [], []
    for i, fr in enumerate(frames):
        _expect(isinstance(fr, dict), line, f"frames[{i}]", "expected an object")
        _expect(fr.get("t") == i, line, f"frames[{i}].t", f"expected {i}, got {fr.get('t')!r}")
        q.append(_reals(fr.get("q"), Q_DIM, line, f"frames[{i}].q"))
        safe.append(_reals(fr.get("safe"), 3, line, f"frames[{i}].safe"))
        phase.append(_bools(fr.get("phase"), 3, line, f"frames[{i}].phase"))
        locks.append(_bools(fr.get("locks"), 3, line, f"frames[{i}].locks"))
        _expect(isinstance(fr.get("subop"), int) and not isinstance(fr.get("subop"), bool),
                line, f"frames[{i}].subop", "expected an integer")
        subop.append(fr["subop"])
    try:
        ops = [Op(o) for o in rec["oracle_ops"]]
    except (ValueError, TypeError):
        raise SchemaViolation(line, "oracle_ops", f"unknown op in {rec['oracle_ops']!r}") from None
    bounds = rec["op_boundaries"]
    _expect(isinstance(bounds, list) and all(isinstance(b, int) for b in bounds), line, "op_boundaries",
            "expected a list of integers")
    _expect(isinstance(rec["success"], bool), line, "success", "expected a boolean")
    try:
        subops = [SubOp.from_dict(s) for s in rec.get("subops", [])]
    except (KeyError, ValueError, TypeError) as exc:
        raise SchemaViolation(line, "subops", str(exc)) from None
    return Demonstration(
        rule_id=rule,
        asset_id=rec["asset_id"],
        pose=Pose(float(pose["x"]), float(pose["y"]), float(pose["yaw"])),
        q=np.asarray(q, dtype=float),
        safe=np.asarray(safe, dtype=float),
        phase=np.asarray(phase, dtype=bool),
        locks=np.asarray(locks, dtype=bool),
        subop=np.asarray(subop, dtype=int),
        subops=subops,
        op_boundaries=list(bounds),
        oracle_ops=ops,
        success=rec["success"],
        noise_sigma=float(rec.get("noise_sigma", 0.0)),
    )


def write_dataset(demos, path, config_hash: str = "") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"format": FORMAT, "version": FORMAT_VERSION, "tool_version": TOOL_VERSION,
              "config_hash": config_hash, "count": len(demos)}
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, separators=(",", ":")) + "\n")
        for d in demos:
            f.write(json.dumps(demo_to_record(d), separators=(",", ":")) + "\n")


def read_dataset(path) -> list[Demonstration]:
    demos = []
    with open(path, encoding="utf-8") as f:
        for lineno, text in enumerate(f, start=1):
            if not text.strip():
                continue
            try:
                rec = json.loads(text)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(lineno, "<json>", str(exc)) from None
            if lineno == 1:
                _expect(isinstance(rec, dict) and rec.get("format") == FORMAT, 1, "format",
                        f"expected header with format {FORMAT!r}")
                _expect(rec.get("version") == FORMAT_VERSION, 1, "version",
                        f"unsupported version {rec.get('version')!r}")
                continue
            demos.append(record_to_demo(rec, lineno))
    return demos


def save_dataset(out_dir, demos, manifest: dict, config_hash: str = "") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_dataset(demos, out_dir / "demos.jsonl", config_hash)
    dump_json(out_dir / "manifest.json", {**manifest, "tool_version": TOOL_VERSION, "config_hash": config_hash})
    return out_dir / "demos.jsonl"


def resolve_dataset_path(path) -> Path:
    """Accept either a dataset directory or the JSONL file itself."""
    path = Path(path)
    return path / "demos.jsonl" if path.is_dir() else path
