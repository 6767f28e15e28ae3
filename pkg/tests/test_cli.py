from __future__ import annotations

import io
import json
from types import SimpleNamespace

import pytest

from lockmem import cli


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def data(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.DATA_ENV, str(tmp_path / "data"))
    return tmp_path / "data"


def test_solve_rule_020(capsys):
    code, out, _ = run(capsys, "solve", "rule_020", "--json")
    doc = json.loads(out)
    assert code == 0 and doc["length"] == 8 and doc["verified_minimal"]
    code, out, _ = run(capsys, "solve", "1")
    assert code == 0 and "ToggleKnob -> ToggleHandle -> OpenDoor" in out


def test_unknown_rule_exits_2(capsys):
    code, _, err = run(capsys, "solve", "rule_099")
    assert code == 2 and "error" in err


def test_catalog(capsys):
    code, out, _ = run(capsys, "catalog", "--json")
    assert code == 0 and len(json.loads(out)["rules"]) == 20


def test_gen_zero_and_bad_inputs(capsys, data):
    code, out, _ = run(capsys, "gen", "--rules", "rule_001", "-n", 0, "--json")
    assert code == 0 and json.loads(out)["total"] == 0
    assert (data / "demos" / "demos.jsonl").exists()
    assert run(capsys, "gen", "--assets", "safe_77")[0] == 2
    assert run(capsys, "gen", "-n", -1)[0] == 2


def test_config_file_errors(capsys, tmp_path, data):
    bad = tmp_path / "c.json"
    bad.write_text('{"bogus": 1}')
    code, _, err = run(capsys, "gen", "--config", bad)
    assert code == 2 and "bogus" in err
    code, _, err = run(capsys, "gen", "--config", tmp_path / "missing.json")
    assert code == 2 and "not found" in err


def test_missing_inputs(capsys, data):
    assert run(capsys, "train-vq")[0] == 2
    assert run(capsys, "eval", "--policy", data / "nope.json")[0] == 2


def test_eval_oracle(capsys):
    code, out, _ = run(capsys, "eval", "--policy", "oracle", "--rules", "rule_001,rule_020", "--episodes", 2, "--json")
    doc = json.loads(out)
    assert code == 0 and doc["macro_sr"] == 1.0


def test_repl_session():
    args = SimpleNamespace(rule="rule_002")
    out = io.StringIO()
    cli.cmd_repl(args, io.StringIO("d\nk\nbogus\nd\nquit\n"), out)
    text = out.getvalue()
    assert "door is locked" in text
    assert "door opened" in text
    assert "unknown command 'bogus'" in text


def test_tiny_pipeline(capsys, tmp_path, data):
    vq_cfg = tmp_path / "vq.json"
    vq_cfg.write_text(json.dumps({"codebook_size": 16, "latent_dim": 8, "hidden": [32], "epochs": 1}))
    pol_cfg = tmp_path / "pol.json"
    pol_cfg.write_text(json.dumps({"hidden": [16], "epochs": 1, "sample_stride": 8}))
    assert run(capsys, "gen", "--rules", "rule_020", "-n", 3, "--assets", "safe_00")[0] == 0
    assert run(capsys, "train-vq", "--config", vq_cfg)[0] == 0
    assert run(capsys, "cluster", "-J", 4)[0] == 0
    code, out, _ = run(capsys, "tokenize")
    assert code == 0 and "rule_020" in out
    assert (data / "tokens.txt").exists()
    assert run(capsys, "train-policy", "--config", pol_cfg)[0] == 0
    assert (data / "policy-VQMemory.json").exists()
    code, out, _ = run(capsys, "eval", "--policy", data / "policy-VQMemory.json", "--episodes", 1,
                       "--t-max", 100, "--json")
    assert code == 0 and json.loads(out)["rows"][0]["episodes"] == 1
    code, out, _ = run(capsys, "witness", "--json")
    assert code == 0 and json.loads(out)["distance"] < 0.04
    assert run(capsys, "cluster", "-J", 17)[0] == 2
    assert run(capsys, "ablate", "--clusters", "5")[0] == 2
