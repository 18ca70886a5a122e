import copy

import pytest

from frostbft.checks import (
    check_calmness,
    check_chain_growth,
    check_common_prefix,
    check_confidentiality,
    check_correctness,
    check_delivery,
    check_sessions,
    evaluate,
    run_check,
    solution_format,
)
from frostbft.group import TINY
from frostbft.scenario import ScenarioConfig, simulate
from frostbft.simnet import read_trace, trace_hash, write_trace


@pytest.fixture(scope="module")
def honest_trace():
    return simulate(ScenarioConfig(name="honest", rounds=12, seed=3)).trace


def _adopts(trace, node):
    return [i for i, r in enumerate(trace) if r["event"] == "adopt" and r["node"] == node]


def test_honest_trace_passes_everything(honest_trace):
    for check in (check_correctness, check_common_prefix, check_chain_growth, check_calmness, check_sessions, check_delivery):
        assert check(honest_trace).passed, check.__name__


def test_forked_fixture_fails_at_first_divergent_height(honest_trace):
    trace = copy.deepcopy(honest_trace)
    node = trace[0]["correct_participants"][1]
    idx = _adopts(trace, node)[4]  # height 5
    trace[idx]["hash"] = "ff" * 32
    result = check_common_prefix(trace)
    assert not result.passed
    assert result.violations[0] == idx
    assert trace[result.violations[0]]["height"] == 5


def test_height_gap_is_a_prefix_violation(honest_trace):
    trace = copy.deepcopy(honest_trace)
    node = trace[0]["correct_participants"][0]
    del trace[_adopts(trace, node)[2]]
    assert not check_common_prefix(trace).passed


def test_conflicting_local_commits_fail_safety(honest_trace):
    trace = copy.deepcopy(honest_trace)
    commits = [i for i, r in enumerate(trace) if r["event"] == "committed" and r["height"] == 3]
    trace[commits[1]]["digest"] = "00" * 32
    assert check_common_prefix(trace).violations == [commits[1]]


def test_future_block_fixture_fails_calmness(honest_trace):
    trace = copy.deepcopy(honest_trace)
    idx = _adopts(trace, trace[0]["correct_participants"][2])[6]
    rec = trace[idx]
    rec["local"] = rec["timestamp"] - trace[0]["max_future"] - 5
    assert check_calmness(trace).violations == [idx]


def test_unvalidated_adoption_fails_correctness(honest_trace):
    trace = copy.deepcopy(honest_trace)
    node = trace[0]["correct_participants"][0]
    # point one adoption at a block that does not extend that node's chain
    idx = _adopts(trace, node)[3]
    other = next(r["hash"] for r in trace if r["event"] == "block" and r["height"] == 6)
    trace[idx]["hash"] = other
    assert not check_correctness(trace).passed


def test_growth_fails_without_view_change():
    config = ScenarioConfig(name="stuck", rounds=20, crashes=[{"replica": 0, "at": 290}], view_change_enabled=False, seed=1)
    trace = simulate(config).trace
    result = check_chain_growth(trace)
    assert not result.passed
    assert check_common_prefix(trace).passed


def test_growth_parameters_override(honest_trace):
    assert check_chain_growth(honest_trace, tau_growth=1.0, r=5).passed
    assert not check_chain_growth(honest_trace, tau_growth=1.5, r=5).passed


def test_confidentiality_plain_vs_threshold(honest_trace):
    assert not check_confidentiality(honest_trace).passed
    fbft5 = simulate(ScenarioConfig(name="f5", mode="fbft5", rounds=4, seed=2)).trace
    assert check_confidentiality(fbft5).passed


def test_solution_format_structure():
    assert solution_format(None, TINY) == "empty"
    assert solution_format(bytes(2) + bytes(2), TINY).startswith("opaque")
    sig = TINY.encode(TINY.g) + TINY.encode_scalar(5)
    assert solution_format(sig, TINY) == "R2|z2"


def test_report_recomputable_from_saved_trace(tmp_path, honest_trace):
    report = evaluate(honest_trace, trace_hash(honest_trace))
    path = tmp_path / "trace.jsonl"
    write_trace(honest_trace, path)
    again = read_trace(path)
    assert evaluate(again, trace_hash(again)).to_json() == report.to_json()


def test_zero_rounds_trivially_passes():
    trace = simulate(ScenarioConfig(name="empty", rounds=0)).trace
    report = evaluate(trace)
    assert report.passed and report.blocks_committed == 0


def test_unknown_check_name(honest_trace):
    with pytest.raises(ValueError):
        run_check(honest_trace, "r9")
