import json

import pytest

from frostbft.byzantine import BEHAVIORS, byzantine_behavior
from frostbft.checks import evaluate
from frostbft.fbft import FeasibilityError
from frostbft.scenario import ScenarioConfig, bundled_scenarios, load_scenario, run_scenario, simulate
from frostbft.simnet import trace_hash


def events(trace, name, **match):
    return [r for r in trace if r["event"] == name and all(r.get(k) == v for k, v in match.items())]


# --- configuration ------------------------------------------------------------


@pytest.mark.parametrize(
    "changes",
    [
        {"mode": "carrier-pigeon"},
        {"ciphersuite": "p999"},
        {"rounds": -1},
        {"tau": 0},
        {"byzantine": {"0": {"script": "mute"}, "1": {"script": "mute"}}},
        {"crashes": [{"replica": 9, "at": 0}]},
        {"byzantine": {"0": {"script": "teleport"}}},
        {"checks": {"r7": True}},
    ],
)
def test_invalid_configs_rejected(changes):
    with pytest.raises(ValueError):
        ScenarioConfig(**changes)


def test_fault_budget_can_be_lifted():
    cfg = ScenarioConfig(f_b=1, f_c=1, byzantine={str(i): {"script": "mute"} for i in (1, 2, 3)}, enforce_fault_budget=False)
    assert cfg.byzantine_ids == [1, 2, 3]


def test_fbft3_feasibility_guard():
    with pytest.raises(FeasibilityError):
        ScenarioConfig(f_b=4, f_c=0, mode="fbft3")


def test_unknown_scenario_keys():
    with pytest.raises(ValueError):
        ScenarioConfig.from_json({"name": "x", "bogus": 1})


def test_bundled_scenarios_load():
    names = set(bundled_scenarios())
    assert {"fig2", "n6q4", "fbft3-small", "fbft5-roast", "calmness-attack", "nonce-fork-attack"} <= names
    for name in names:
        cfg = load_scenario(name)
        assert cfg.description
        assert ScenarioConfig.from_json(json.loads(json.dumps(cfg.to_json()))) == cfg


def test_behavior_registry():
    assert set(BEHAVIORS) >= {"mute", "silent", "equivocate", "invalid-share", "premature-block", "nonce-tweak"}
    with pytest.raises(ValueError):
        byzantine_behavior("nope")


# --- end-to-end ---------------------------------------------------------------


def test_fault_free_hundred_rounds():
    report = run_scenario(ScenarioConfig(name="ff", rounds=100, seed=11, trace_messages=False))
    assert report.blocks_committed == 100
    assert report.view_changes == 0
    assert report.checks["r3"].passed and report.passed


def test_fig2_plain_and_fbft5_variant():
    cfg = load_scenario("fig2")
    report = run_scenario(cfg.with_overrides(rounds=10))
    assert all(report.checks[r].passed for r in ("r1", "r2", "r3", "r4"))
    assert not report.checks["r5"].passed and not report.checks["r5"].enabled
    f5 = run_scenario(cfg.with_overrides(rounds=10, mode="fbft5"))
    assert f5.checks["r5"].passed


def test_mute_signer_opens_extra_sessions():
    cfg = ScenarioConfig(f_b=1, f_c=1, mode="fbft5", rounds=20, seed=6, byzantine={"1": {"script": "mute"}})
    report = run_scenario(cfg)
    assert report.blocks_committed == 20
    assert max(report.sessions_per_block.values()) >= 2
    assert report.checks["sessions"].passed


def test_equivocating_primary_view_change_no_conflicts():
    trace = simulate(ScenarioConfig(rounds=6, seed=2, byzantine={"0": {"script": "equivocate"}}, tau_growth=0.5)).trace
    report = evaluate(trace)
    assert report.view_changes >= 1
    assert report.checks["r2"].passed and report.blocks_committed == 6


def test_premature_flood_rejected():
    trace = simulate(ScenarioConfig(rounds=10, seed=3, byzantine={"1": {"script": "premature-block"}})).trace
    correct = set(trace[0]["correct_participants"])
    rejects = [r for r in trace if r["event"] == "reject" and r["node"] in correct]
    assert any(r["reason"] in ("time-too-new", "bad-solution") for r in rejects)
    assert evaluate(trace).checks["r4"].passed
    adopted = {r["hash"] for r in trace if r["event"] == "adopt" and r["node"] in correct}
    forged = {r["hash"] for r in trace if r["event"] == "block" and b"premature".hex() in r["data"]}
    assert forged and not adopted & forged


def test_invalid_share_detected_fbft3():
    trace = simulate(ScenarioConfig(mode="fbft3", rounds=5, seed=4, byzantine={"1": {"script": "invalid-share"}})).trace
    assert events(trace, "invalid-commit", sender=1)
    assert evaluate(trace).passed


def test_invalid_share_marks_malicious_fbft5():
    cfg = ScenarioConfig(f_b=1, f_c=1, mode="fbft5", rounds=10, seed=6, byzantine={"2": {"script": "invalid-share"}})
    trace = simulate(cfg).trace
    flagged = {r["signer"] for r in events(trace, "malicious")}
    assert flagged == {2}
    assert evaluate(trace).passed


def test_primary_crash_mid_session_fbft5():
    base = ScenarioConfig(f_b=1, f_c=1, mode="fbft5", rounds=8, seed=7, tau_growth=0.5)
    dry = simulate(base).trace
    opened = events(dry, "session-open", height=4)[0]["t"]
    trace = simulate(base.with_overrides(crashes=[{"replica": 0, "at": opened + 1e-4}])).trace
    report = evaluate(trace)
    assert report.view_changes >= 1 and report.blocks_committed == 8
    assert report.passed
    committed = {r["digest"] for r in events(trace, "committed", height=4)}
    assert len(committed) == 1
    final = [r for r in events(trace, "adopt", height=4)]
    assert {r["hash"] for r in final} == committed
    assert any(r["replica"] != 0 for r in events(trace, "session-complete", height=4))


def test_repeated_primary_failures_chain_grows():
    cfg = ScenarioConfig(f_b=1, f_c=1, rounds=20, seed=8, crashes=[{"replica": 0, "at": 100}, {"replica": 1, "at": 100}], tau_growth=0.5)
    report = run_scenario(cfg)
    assert report.blocks_committed == 20
    assert report.checks["r2"].passed and report.checks["r3"].passed


def test_crash_and_recover():
    cfg = ScenarioConfig(rounds=12, seed=9, crashes=[{"replica": 2, "at": 100, "recover": 400}])
    sim = simulate(cfg)
    assert all(p.chain.height == 12 for p in sim.participants)


def test_partition_heals():
    cfg = ScenarioConfig(rounds=10, seed=10, partitions=[{"start": 100, "end": 250, "nodes": ["B3", "B2"], "mode": "drop"}], tau_growth=0.5)
    trace = simulate(cfg).trace
    assert events(trace, "drop")
    report = evaluate(trace)
    assert report.blocks_committed == 10 and report.passed


def test_lossy_start_then_bounded():
    report = run_scenario(load_scenario("lossy-start").with_overrides(rounds=12))
    assert report.checks["delivery"].passed and report.checks["r2"].passed


def test_same_seed_same_trace():
    cfg = ScenarioConfig(mode="fbft5", f_b=1, f_c=1, rounds=5, seed=12, byzantine={"3": {"script": "mute"}})
    assert trace_hash(simulate(cfg).trace) == trace_hash(simulate(cfg).trace)
    assert trace_hash(simulate(cfg).trace) != trace_hash(simulate(cfg, seed=13).trace)


@pytest.mark.parametrize("mode", ["plain", "fbft3", "fbft5"])
def test_curve_suite_end_to_end(mode):
    report = run_scenario(ScenarioConfig(name=f"curve-{mode}", mode=mode, ciphersuite="curve", rounds=3, seed=1))
    assert report.blocks_committed == 3 and report.passed
