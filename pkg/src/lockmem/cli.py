"""``lockmem`` command line: dataset generation through evaluation, plus a rule REPL."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import rules as R
from .artifacts import TOOL_VERSION, config_hash, dump_json, file_digest
from .dataset import SchemaViolation, read_dataset, resolve_dataset_path, save_dataset
from .demos import DEFAULT_NOISE, generate_dataset
from .policy import (
    BcPolicy,
    Diverged as PolicyDiverged,
    MemoryVariant,
    NotFound,
    OraclePolicy,
    PolicyConfig,
    ZeroPolicy,
    ablate,
    bc_train,
    evaluate,
    non_markov_witness,
)
from .safe import PartPhase, asset_ids
from .vq import DegenerateCodebook, Diverged as VqDiverged, ShapeMismatch, VqConfig, VqModel, cluster_codebook, \
    frame_codes, code_to_token, train_vqvae

DATA_ENV = "LOCKMEM_DATA_DIR"

log = logging.getLogger("lockmem")


class CliError(Exception):
    pass


def data_dir() -> Path:
    return Path(os.environ.get(DATA_ENV, "lockmem-data"))


def _csv(text: str | None) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()] if text else []


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in _csv(text)]
    except ValueError:
        raise CliError(f"expected comma-separated integers, got {text!r}") from None


def _rules(text: str | None) -> list[str]:
    if not text or text == "all":
        return [str(r) for r in R.ALL_RULES]
    try:
        return [str(R.RuleId.parse(r)) for r in _csv(text)]
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _assets(text: str | None) -> list[str] | None:
    names = _csv(text)
    if not names:
        return None
    known = set(asset_ids())
    for n in names:
        if n not in known:
            raise CliError(f"unknown asset {n!r}")
    return names


def _config_file(args) -> dict:
    if not getattr(args, "config", None):
        return {}
    path = Path(args.config)
    if not path.exists():
        raise CliError(f"{path}: config file not found")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise CliError(f"{path}: config must be a JSON object")
    return cfg


def _resolve(defaults: dict, args, keys) -> dict:
    """defaults < config file < explicit flags."""
    cfg = dict(defaults)
    from_file = _config_file(args)
    unknown = set(from_file) - set(defaults)
    if unknown:
        raise CliError(f"{args.config}: unknown config field {sorted(unknown)[0]!r}")
    cfg.update(from_file)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _input_digest(path: Path) -> str:
    if not path.exists():
        raise CliError(f"{path}: file not found")
    return file_digest(path)


def _stamp(cfg: dict, inputs: dict | None = None) -> dict:
    return {"tool_version": TOOL_VERSION, "config": cfg, "config_hash": config_hash(cfg), "inputs": inputs or {}}


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(text)


def _load_demos(path) -> tuple[list, Path]:
    p = resolve_dataset_path(path)
    if not p.exists():
        raise CliError(f"{p}: dataset not found")
    return read_dataset(p), p


def _load_vq(path) -> tuple[VqModel, Path]:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{p}: VQ artifact not found")
    return VqModel.load(p), p


# -- commands ---------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = _resolve({"rules": "all", "n": 5, "seed": 0, "assets": None, "noise": DEFAULT_NOISE}, args,
                   ["rules", "n", "seed", "assets", "noise"])
    rules = _rules(cfg["rules"])
    assets = _assets(cfg["assets"])
    if cfg["n"] < 0:
        raise CliError("n must be >= 0")
    out = Path(args.out or data_dir() / "demos")
    demos, manifest = generate_dataset(rules, cfg["n"], cfg["seed"], assets, cfg["noise"], jobs=args.jobs)
    save_dataset(out, demos, manifest, config_hash(cfg))
    summary = {"out": str(out), "total": len(demos), "config_hash": config_hash(cfg),
               "mean_length": float(np.mean([len(d) for d in demos])) if demos else 0.0}
    _emit(args, summary, f"wrote {len(demos)} demonstrations to {out}/demos.jsonl "
                         f"(mean length {summary['mean_length']:.1f} frames, config {summary['config_hash']})")
    return 0


def cmd_solve(args) -> int:
    rule = _rules(args.rule)[0]
    ops = R.solve_rule(rule)
    report = R.verify_rule_exhaustive(rule, depth=args.depth or len(ops))
    minimal = tuple(ops) in report.minimal_sequences and report.minimal_length == len(ops)
    payload = {"rule": rule, "ops": [o.value for o in ops], "length": len(ops),
               "description": R.rule_description(rule), "verified_minimal": minimal,
               "verification": report.to_dict()}
    text = "\n".join([
        f"{rule}: {R.rule_description(rule)}",
        f"minimal sequence ({len(ops)} ops): " + " -> ".join(o.value for o in ops),
        f"exhaustive check to depth {report.depth}: solver output minimal={minimal}, "
        f"minimal sequences found={len(report.minimal_sequences)}, door violations={report.door_violations}",
    ])
    _emit(args, payload, text)
    return 0 if minimal and report.door_violations == 0 else 1


def cmd_train_vq(args) -> int:
    defaults = {**VqConfig().to_dict(), "seed": 0}
    cfg = _resolve(defaults, args, ["seed", "epochs", "codebook_size", "latent_dim"])
    demos, path = _load_demos(args.data or data_dir() / "demos")
    vq_cfg = VqConfig.from_dict({k: v for k, v in cfg.items() if k != "seed"})
    model = train_vqvae(demos, vq_cfg, seed=cfg["seed"])
    out = Path(args.out or data_dir() / "vq.json")
    model.save(out, {"run": _stamp(cfg, {"dataset": _input_digest(path)})})
    held = model.metrics["heldout"]
    payload = {"out": str(out), "active_codes": model.metrics["active_codes"], "heldout": held,
               "final": model.log[-1] if model.log else {}}
    _emit(args, payload, f"wrote {out}: {model.metrics['active_codes']}/{vq_cfg.codebook_size} codes active, "
                         f"held-out recon ratio mean {held['ratio_mean']:.4f} max {held['ratio_max']:.4f}")
    return 0


def cmd_cluster(args) -> int:
    cfg = _resolve({"clusters": 4, "seed": 0}, args, ["clusters", "seed"])
    model, path = _load_vq(args.vq or data_dir() / "vq.json")
    cm = cluster_codebook(model.codebook, cfg["clusters"], cfg["seed"], model.usage)
    clustered = model.with_clusters(cm)
    out = Path(args.out or data_dir() / f"vq-j{cfg['clusters']}.json")
    clustered.save(out, {"run": _stamp(cfg, {"vq": _input_digest(path)})})
    sizes = np.bincount(cm.assignment, minlength=cm.n_clusters).tolist()
    payload = {"out": str(out), "clusters": cm.n_clusters, "codes_per_cluster": sizes,
               "objective_history": cm.objective_history}
    _emit(args, payload, f"wrote {out}: {cm.n_clusters} clusters, codes per cluster {sizes}, "
                         f"objective {cm.objective_history[0]:.4g} -> {cm.objective_history[-1]:.4g}")
    return 0


def token_grid(tokens: list[np.ndarray], labels: list[str], pad_id: int, width: int = 80) -> str:
    """One row per trajectory, one character per token (``.`` for PAD), right-aligned."""
    alphabet = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz"
    n = min(width, max((len(t) for t in tokens), default=0))
    rows = []
    for lab, t in zip(labels, tokens):
        t = t[-n:] if n else t[:0]
        chars = "".join("." if v == pad_id else (alphabet[v] if v < len(alphabet) else "#") for v in t)
        rows.append(f"{lab:<24} {chars:>{n}}")
    return "\n".join(rows)


def cmd_tokenize(args) -> int:
    cfg = _resolve({"raw": False}, args, [])
    cfg["raw"] = bool(args.raw)
    demos, dpath = _load_demos(args.data or data_dir() / "demos")
    model, vpath = _load_vq(args.vq or data_dir() / "vq-j4.json")
    stride = model.config.stride
    records, grid_tokens, labels = [], [], []
    for i, d in enumerate(demos):
        codes = frame_codes(d.q, model)
        seq = codes if cfg["raw"] else code_to_token(codes, model)
        ends = np.arange(model.config.window - 1, len(d), stride)
        toks = seq[ends]
        records.append({"index": i, "rule_id": d.rule_id, "asset_id": d.asset_id, "frames": len(d),
                        "tokens": [int(v) for v in toks]})
        grid_tokens.append(toks)
        labels.append(f"{i:>4} {d.rule_id} {d.asset_id}")
    pad = len(model.codebook) if cfg["raw"] else model.pad_id
    payload = {**_stamp(cfg, {"dataset": _input_digest(dpath), "vq": _input_digest(vpath)}),
               "stride": stride, "window": model.config.window, "pad_id": pad, "sequences": records}
    out = Path(args.out or data_dir() / "tokens.json")
    dump_json(out, payload)
    grid = token_grid(grid_tokens, labels, pad)
    out.with_suffix(".txt").write_text(grid + "\n", encoding="utf-8")
    _emit(args, {"out": str(out), "sequences": len(records)}, grid)
    return 0


def cmd_train_policy(args) -> int:
    defaults = {**PolicyConfig().to_dict(), "seed": 0}
    cfg = _resolve(defaults, args, ["seed", "variant", "epochs", "memory_len"])
    try:
        pcfg = PolicyConfig.from_dict({k: v for k, v in cfg.items() if k != "seed"})
    except ValueError as exc:
        raise CliError(f"config field variant: {exc}") from None
    cfg["variant"] = pcfg.variant.value
    demos, dpath = _load_demos(args.data or data_dir() / "demos")
    inputs = {"dataset": _input_digest(dpath)}
    vq = None
    if pcfg.variant is MemoryVariant.VQ_MEMORY:
        vq, vpath = _load_vq(args.vq or data_dir() / "vq-j4.json")
        inputs["vq"] = _input_digest(vpath)
    policy = bc_train(demos, pcfg, seed=cfg["seed"], vq=vq)
    out = Path(args.out or data_dir() / f"policy-{pcfg.variant.value}.json")
    policy.save(out, {"run": _stamp(cfg, inputs)})
    last = policy.log[-1] if policy.log else {}
    _emit(args, {"out": str(out), "final": last},
          f"wrote {out}: train loss {last.get('train_loss', float('nan')):.5f}, "
          f"val loss {last.get('val_loss', float('nan')):.5f}")
    return 0


def _policy_for(args):
    if args.policy in ("oracle", "zero"):
        return (OraclePolicy() if args.policy == "oracle" else ZeroPolicy()), {}
    path = Path(args.policy)
    if not path.exists():
        raise CliError(f"{path}: policy artifact not found")
    return BcPolicy.load(path), {"policy": file_digest(path)}


def cmd_eval(args) -> int:
    cfg = _resolve({"rules": "rule_020", "episodes": 20, "seed": 0, "assets": None, "noise": DEFAULT_NOISE,
                    "t_max": 1500}, args, ["rules", "episodes", "seed", "assets", "noise", "t_max"])
    policy, inputs = _policy_for(args)
    report = evaluate(policy, _rules(cfg["rules"]), cfg["episodes"], cfg["seed"], _assets(cfg["assets"]),
                      cfg["t_max"], cfg["noise"], jobs=args.jobs)
    payload = {**_stamp(cfg, inputs), **report.to_dict()}
    if args.out:
        dump_json(args.out, payload)
    _emit(args, payload, report.to_text())
    return 0


def cmd_ablate(args) -> int:
    defaults = {"rule": "rule_020", "clusters": "256,32,4,2", "lengths": "20,40,60", "episodes": 20, "seed": 0,
                "assets": None, "epochs": PolicyConfig().epochs, "full_grid": False,
                "hidden": list(PolicyConfig().hidden), "sample_stride": PolicyConfig().sample_stride}
    cfg = _resolve(defaults, args, ["rule", "clusters", "lengths", "episodes", "seed", "assets", "epochs"])
    cfg["full_grid"] = bool(args.full_grid or cfg["full_grid"])
    clusters, lengths = _ints(cfg["clusters"]), _ints(cfg["lengths"])
    for j in clusters:
        if j not in (2, 4, 32, 256):
            raise CliError(f"cluster count {j} outside the ablation grid {{2, 4, 32, 256}}")
    for n in lengths:
        if n not in (20, 40, 60):
            raise CliError(f"memory length {n} outside the ablation grid {{20, 40, 60}}")
    demos, dpath = _load_demos(args.data or data_dir() / "demos")
    vq, vpath = _load_vq(args.vq or data_dir() / "vq.json")
    pcfg = PolicyConfig(epochs=cfg["epochs"], hidden=tuple(cfg["hidden"]), sample_stride=cfg["sample_stride"])
    report = ablate(demos, vq, cfg["rule"], clusters, lengths, pcfg,
                    cfg["episodes"], cfg["seed"], _assets(cfg["assets"]), cfg["full_grid"], jobs=args.jobs)
    payload = {**_stamp(cfg, {"dataset": _input_digest(dpath), "vq": _input_digest(vpath)}), **report.to_dict()}
    text = report.to_text()
    if args.out:
        out = Path(args.out)
        dump_json(out, payload)
        out.with_suffix(".txt").write_text(text + "\n", encoding="utf-8")
    ok = report.cluster_ordering_ok()
    if ok is False:
        text += "\nwarning: 4 clusters is not the best of {256, 4, 2} in this run"
    _emit(args, payload, text)
    return 0


def cmd_witness(args) -> int:
    demos, _ = _load_demos(args.data or data_dir() / "demos")
    w = non_markov_witness(demos, args.rule, args.delta)
    d = w.to_dict()
    _emit(args, d, f"demo {w.demo_a} frame {w.frame_a} (next {w.next_a.value}) vs demo {w.demo_b} frame "
                   f"{w.frame_b} (next {w.next_b.value}): distance {w.distance:.4f}\n"
                   f"  task-phase A: {d['state_a']}\n  task-phase B: {d['state_b']}")
    return 0


def cmd_catalog(args) -> int:
    cat = R.catalog()
    lines = [f"{c['rule_id']}  min {c['min_solution_len']}  buffer {c['buffer_len']}  {c['description']}"
             for c in cat]
    _emit(args, {"rules": cat}, "\n".join(lines))
    return 0


_REPL_OPS = {"toggle-knob": R.Op.TOGGLE_KNOB, "k": R.Op.TOGGLE_KNOB, "toggle-handle": R.Op.TOGGLE_HANDLE,
             "h": R.Op.TOGGLE_HANDLE, "open-door": R.Op.OPEN_DOOR, "d": R.Op.OPEN_DOOR}


def _repl_status(rule, phase, state) -> str:
    lv = R.lock_vector(rule, state)
    counters = ", ".join(f"{n}={v}" for n, v in state.counters) or "-"
    locks = " ".join(f"{j}:{'locked' if lv.locked(j) else 'free'}" for j in ("knob", "handle", "door"))
    return f"phase {phase}  buffer [{state.buffer_text or '-'}]  counters {counters}  {locks}"


def cmd_repl(args, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    rule = _rules(args.rule)[0]
    phase = PartPhase()
    state = R.init_rule(rule, phase)
    print(f"{rule}: {R.rule_description(rule)}", file=stdout)
    print("commands: toggle-knob (k), toggle-handle (h), open-door (d), reset, quit", file=stdout)
    print(_repl_status(rule, phase, state), file=stdout)
    for line in stdin:
        cmd = line.strip().lower()
        if not cmd:
            continue
        if cmd in ("quit", "exit", "q"):
            break
        if cmd == "reset":
            phase = PartPhase()
            state = R.init_rule(rule, phase)
        elif cmd in _REPL_OPS:
            op = _REPL_OPS[cmd]
            if phase.door_open:
                print("door already open", file=stdout)
                continue
            nxt = R.apply_op(rule, phase, state, op)
            if nxt is None:
                print(f"{op.value}: {op.joint} is locked", file=stdout)
                continue
            phase, state = nxt
            if phase.door_open:
                print("door opened", file=stdout)
        else:
            print(f"unknown command {cmd!r}", file=stdout)
            continue
        print(_repl_status(rule, phase, state), file=stdout)
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", help="JSON file of config overrides (flags win)")
    common.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--out")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lockmem", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen", parents=[common], help="generate demonstrations")
    s.add_argument("--rules")
    s.add_argument("-n", "--n", type=int)
    s.add_argument("--assets")
    s.add_argument("--noise", type=float)
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", parents=[common], help="minimal op sequence + exhaustive check")
    s.add_argument("rule")
    s.add_argument("--depth", type=int)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("train-vq", parents=[common], help="train the VQ-VAE tokenizer")
    s.add_argument("--data")
    s.add_argument("--epochs", type=int)
    s.add_argument("--codebook-size", dest="codebook_size", type=int)
    s.add_argument("--latent-dim", dest="latent_dim", type=int)
    s.set_defaults(func=cmd_train_vq)

    s = sub.add_parser("cluster", parents=[common], help="K-means over codebook vectors")
    s.add_argument("--vq")
    s.add_argument("-J", "--clusters", type=int)
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("tokenize", parents=[common], help="token sequences and a token grid")
    s.add_argument("--data")
    s.add_argument("--vq")
    s.add_argument("--raw", action="store_true", help="raw codebook indices instead of cluster ids")
    s.set_defaults(func=cmd_tokenize)

    s = sub.add_parser("train-policy", parents=[common], help="behavior cloning")
    s.add_argument("--data")
    s.add_argument("--vq")
    s.add_argument("--variant", choices=[v.value for v in MemoryVariant])
    s.add_argument("--epochs", type=int)
    s.add_argument("--memory-len", dest="memory_len", type=int)
    s.set_defaults(func=cmd_train_policy)

    s = sub.add_parser("eval", parents=[common], help="closed-loop SR/PS")
    s.add_argument("--policy", required=True, help="policy artifact, or 'oracle' / 'zero'")
    s.add_argument("--rules")
    s.add_argument("--episodes", type=int)
    s.add_argument("--assets")
    s.add_argument("--noise", type=float)
    s.add_argument("--t-max", dest="t_max", type=int)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", parents=[common], help="cluster-count / memory-length ablation")
    s.add_argument("--data")
    s.add_argument("--vq")
    s.add_argument("--rule")
    s.add_argument("--clusters")
    s.add_argument("--lengths")
    s.add_argument("--episodes", type=int)
    s.add_argument("--assets")
    s.add_argument("--epochs", type=int)
    s.add_argument("--full-grid", dest="full_grid", action="store_true")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("witness", parents=[common], help="search for a non-Markovian frame pair")
    s.add_argument("--data")
    s.add_argument("--rule", default="rule_020")
    s.add_argument("--delta", type=float, default=2 * DEFAULT_NOISE)
    s.set_defaults(func=cmd_witness)

    s = sub.add_parser("repl", parents=[common], help="step a rule by hand")
    s.add_argument("rule")
    s.set_defaults(func=cmd_repl)

    s = sub.add_parser("catalog", parents=[common], help="list the shipped rules")
    s.set_defaults(func=cmd_catalog)
    return p


_EXPECTED = (CliError, SchemaViolation, ShapeMismatch, DegenerateCodebook, VqDiverged, PolicyDiverged, NotFound,
             R.NotSolvable, ValueError, KeyError, FileNotFoundError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except _EXPECTED as exc:
        msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        print(f"lockmem {args.command}: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
