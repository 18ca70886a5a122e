import json
import subprocess
import sys

from frostbft.chain import Genesis
from frostbft.cli import main
from frostbft.scenario import ScenarioConfig


def test_run_then_check(tmp_path, capsys):
    scenario = tmp_path / "s.json"
    scenario.write_text(json.dumps(ScenarioConfig(name="cli", rounds=5, seed=2).to_json()))
    trace, report = tmp_path / "t.jsonl", tmp_path / "r.json"
    assert main(["run", str(scenario), "--trace-out", str(trace), "--report-out", str(report)]) == 0
    data = json.loads(report.read_text())
    assert data["passed"] and data["blocks_committed"] == 5
    assert main(["check", str(trace), "--requirement", "r2"]) == 0
    assert main(["check", str(trace), "--requirement", "r5"]) == 1  # plain mode concatenates signatures
    assert "r5 FAIL" in capsys.readouterr().out


def test_run_bundled_with_seed_override(tmp_path):
    report = tmp_path / "r.json"
    assert main(["run", "fbft3-small", "--seed", "5", "--report-out", str(report)]) == 0
    assert json.loads(report.read_text())["seed"] == 5


def test_failing_enabled_check_exits_nonzero(tmp_path):
    cfg = ScenarioConfig(name="stuck", rounds=12, crashes=[{"replica": 0, "at": 100}], view_change_enabled=False)
    path = tmp_path / "stuck.json"
    path.write_text(json.dumps(cfg.to_json()))
    assert main(["run", str(path)]) == 1


def test_keygen_emits_loadable_genesis(tmp_path):
    out = tmp_path / "genesis.json"
    assert main(["keygen", "--n", "4", "--k", "3", "--ciphersuite", "tiny", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    genesis = Genesis.from_json(data)
    assert genesis.challenge.mode == "aggregate-key"
    assert data["threshold"] == 3 and len(data["verification_shares"]) == 4


def test_errors_are_reported(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"mode": "nope"}))
    assert main(["run", str(bad)]) == 2
    assert "error" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "frostbft", "keygen", "--n", "3", "--k", "2"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["ciphersuite"] == "tiny"
