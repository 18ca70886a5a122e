"""Requirement checks R1-R5 and auxiliary trace properties.

Every check reads only trace records, so a saved trace can be re-evaluated
offline and produces the same verdicts as the live run.  The first record
of a scenario trace (``event == "scenario"``) carries the static context:
genesis, fault sets, protocol mode and thresholds.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .chain import Block, Chain, Genesis, validate_block
from .group import decode_signature, signature_size

REQUIREMENTS = ("r1", "r2", "r3", "r4", "r5")
PROPERTIES = ("sessions", "delivery")
MAX_VIOLATIONS = 20


@dataclass
class CheckResult:
    name: str
    passed: bool
    enabled: bool = True
    violations: List[int] = field(default_factory=list)
    detail: str = ""

    def to_json(self) -> dict:
        return asdict(self)


def _result(name: str, violations: List[int], detail: str = "", enabled: bool = True) -> CheckResult:
    return CheckResult(name, not violations, enabled, violations[:MAX_VIOLATIONS], detail)


def header(trace: Sequence[dict]) -> dict:
    for rec in trace:
        if rec.get("event") == "scenario":
            return rec
    raise ValueError("trace has no scenario header record")


def _blocks(trace: Sequence[dict]) -> Dict[str, Block]:
    return {rec["hash"]: Block.deserialize(bytes.fromhex(rec["data"])) for rec in trace if rec.get("event") == "block"}


def _adoptions(trace: Sequence[dict], nodes: Iterable[str]) -> Iterable[Tuple[int, dict]]:
    nodes = set(nodes)
    for i, rec in enumerate(trace):
        if rec.get("event") == "adopt" and rec["node"] in nodes:
            yield i, rec


def check_correctness(trace: Sequence[dict]) -> CheckResult:
    """R1: every block a correct participant adopted validates against its chain at that point."""
    h = header(trace)
    genesis = Genesis.from_json(h["genesis"])
    blocks = _blocks(trace)
    chains = {node: Chain(genesis) for node in h["correct_participants"]}
    cache: Dict[Tuple[str, bytes], bool] = {}
    violations = []
    for i, rec in _adoptions(trace, chains):
        chain = chains[rec["node"]]
        block = blocks.get(rec["hash"])
        if block is None:
            violations.append(i)
            continue
        key = (rec["hash"], chain.tip_hash)
        if key not in cache:
            cache[key] = bool(validate_block(block, chain))
        if not cache[key]:
            violations.append(i)
            continue
        chain.append(block)
    return _result("r1", violations, f"{len(blocks)} distinct blocks seen")


def check_common_prefix(trace: Sequence[dict]) -> CheckResult:
    """R2 for every k >= 0: correct participants never disagree on any height.

    Also asserts PBFT safety: correct replicas never locally commit two
    different digests at one height.
    """
    h = header(trace)
    nodes = set(h["correct_participants"])
    heights: Dict[str, int] = defaultdict(int)
    canonical: Dict[int, str] = {}
    violations = []
    for i, rec in _adoptions(trace, nodes):
        node, height = rec["node"], rec["height"]
        if height != heights[node] + 1:
            violations.append(i)
            continue
        heights[node] = height
        if canonical.setdefault(height, rec["hash"]) != rec["hash"]:
            violations.append(i)
    replicas = set(h["correct_replicas"])
    committed: Dict[int, str] = {}
    for i, rec in enumerate(trace):
        if rec.get("event") == "committed" and rec["replica"] in replicas:
            if committed.setdefault(rec["height"], rec["digest"]) != rec["digest"]:
                violations.append(i)
    forks = len({i for i in violations})
    return _result("r2", sorted(violations), f"{len(canonical)} heights agreed, {forks} divergences")


def chain_heights_at(trace: Sequence[dict], nodes: Iterable[str]) -> Dict[str, List[Tuple[float, int]]]:
    series: Dict[str, List[Tuple[float, int]]] = {n: [] for n in nodes}
    for _, rec in _adoptions(trace, series):
        series[rec["node"]].append((rec["t"], rec["height"]))
    return series


def _height_at(series: List[Tuple[float, int]], t: float) -> int:
    height = 0
    for when, hgt in series:
        if when > t:
            break
        height = hgt
    return height


def check_chain_growth(trace: Sequence[dict], tau_growth: Optional[float] = None, r: Optional[int] = None) -> CheckResult:
    """R3: over every window of r rounds each correct participant gains >= ceil(tau_growth * r) blocks."""
    h = header(trace)
    tau_growth = h["tau_growth"] if tau_growth is None else tau_growth
    r = h["growth_window"] if r is None else r
    rounds, tau, t0 = h["rounds"], h["tau"], h["t0"]
    r = min(r, rounds)
    if r <= 0:
        return _result("r3", [], "no complete window")
    need = math.ceil(tau_growth * r - 1e-9)
    nodes = [n for n in h["correct_participants"] if n not in set(h.get("crashed_participants", []))]
    series = chain_heights_at(trace, nodes)
    violations = []
    worst = None
    for k in range(0, rounds - r + 1):
        start, end = t0 + k * tau, t0 + (k + r) * tau
        for node in nodes:
            gained = _height_at(series[node], end) - _height_at(series[node], start)
            worst = gained if worst is None else min(worst, gained)
            if gained < need:
                violations.append(k)
                break
    return _result("r3", violations, f"window={r} rounds, need {need} blocks, worst window gained {worst}")


def check_calmness(trace: Sequence[dict]) -> CheckResult:
    """R4: nothing adopted (or signed) by a correct node is dated beyond its clock + the allowed lead."""
    h = header(trace)
    nodes = set(h["correct_participants"])
    replicas = set(h["correct_replicas"])
    violations = []
    for i, rec in enumerate(trace):
        ev = rec.get("event")
        if ev == "adopt" and rec["node"] in nodes:
            if rec["timestamp"] > rec["local"] + h["max_future"] + 1e-9:
                violations.append(i)
        elif ev == "commit-sent" and rec["replica"] in replicas:
            if rec["timestamp"] > rec["local"] + h["future_delta"] + 1e-9:
                violations.append(i)
    return _result("r4", violations)


def solution_format(solution: Optional[bytes], suite) -> str:
    """Structural description of a block solution, independent of its values."""
    if not solution:
        return "empty"
    if len(solution) == signature_size(suite):
        try:
            decode_signature(suite, solution)
            return f"R{suite.element_size}|z{suite.scalar_size}"
        except ValueError:
            pass
    return f"opaque{len(solution)}"


def solution_formats(trace: Sequence[dict]) -> Set[str]:
    h = header(trace)
    suite = Genesis.from_json(h["genesis"]).suite
    adopted = {rec["hash"] for _, rec in _adoptions(trace, h["correct_participants"])}
    return {solution_format(b.solution, suite) for hsh, b in _blocks(trace).items() if hsh in adopted}


def check_confidentiality(trace: Sequence[dict]) -> CheckResult:
    """R5, structurally: each adopted solution is exactly one fixed-width (R, z).

    Only meaningful in rounds without Byzantine miners; with a Byzantine
    set present the check is vacuous.
    """
    h = header(trace)
    if h["byzantine"]:
        return _result("r5", [], "not applicable: byzantine miners present")
    suite = Genesis.from_json(h["genesis"]).suite
    blocks = _blocks(trace)
    expected = f"R{suite.element_size}|z{suite.scalar_size}"
    violations, seen = [], set()
    for i, rec in _adoptions(trace, h["correct_participants"]):
        if rec["hash"] in seen:
            continue
        seen.add(rec["hash"])
        if solution_format(blocks[rec["hash"]].solution, suite) != expected:
            violations.append(i)
    return _result("r5", violations, f"{len(seen)} blocks, expected format {expected}")


def check_sessions(trace: Sequence[dict]) -> CheckResult:
    """Signing sessions opened per (view, height) by a correct primary stay within N - k + 1."""
    h = header(trace)
    bound = h["n"] - h["k"] + 1
    replicas = set(h["correct_replicas"])
    counts: Dict[Tuple[int, int, int], int] = defaultdict(int)
    violations = []
    for i, rec in enumerate(trace):
        if rec.get("event") == "session-open" and rec["replica"] in replicas:
            key = (rec["replica"], rec["view"], rec["height"])
            counts[key] += 1
            if counts[key] > bound:
                violations.append(i)
    peak = max(counts.values(), default=0)
    return _result("sessions", violations, f"bound {bound}, max sessions for one block {peak}")


def check_delivery(trace: Sequence[dict]) -> CheckResult:
    """After GST, messages between correct nodes arrive within the delay bound and are never dropped."""
    h = header(trace)
    gst, bound = h["gst"], h["delta"]
    windows = [(p["start"], p["end"]) for p in h.get("partitions", [])]
    correct = set(h["correct_addresses"])
    violations = []
    for i, rec in enumerate(trace):
        ev = rec.get("event")
        if ev not in ("msg", "drop") or rec["src"] not in correct or rec["dst"] not in correct:
            continue
        sent = rec.get("sent", rec["t"])
        if sent < gst or any(a <= sent < b for a, b in windows):
            continue
        if ev == "drop" or rec["t"] - sent > bound + 1e-9:
            violations.append(i)
    return _result("delivery", violations, f"delta={bound}")


CHECKS = {
    "r1": check_correctness,
    "r2": check_common_prefix,
    "r3": check_chain_growth,
    "r4": check_calmness,
    "r5": check_confidentiality,
    "sessions": check_sessions,
    "delivery": check_delivery,
}


def run_check(trace: Sequence[dict], name: str) -> CheckResult:
    try:
        fn = CHECKS[name]
    except KeyError:
        raise ValueError(f"unknown check {name!r}") from None
    return fn(trace)


@dataclass
class MetricsReport:
    scenario: str
    seed: int
    mode: str
    rounds: int
    blocks_committed: int
    rounds_elapsed: float
    growth_ratio: float
    view_changes: int
    sessions_per_block: Dict[int, int]
    share_counts: List[int]
    checks: Dict[str, CheckResult]
    trace_hash: str = ""
    events: int = 0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values() if c.enabled)

    def to_json(self) -> dict:
        out = asdict(self)
        out["sessions_per_block"] = {str(k): v for k, v in self.sessions_per_block.items()}
        out["passed"] = self.passed
        return out


def evaluate(trace: Sequence[dict], trace_hash: str = "") -> MetricsReport:
    """Recompute the full report from a trace."""
    h = header(trace)
    enabled = h["checks"]
    checks = {}
    for name in REQUIREMENTS + PROPERTIES:
        result = CHECKS[name](trace)
        result.enabled = bool(enabled.get(name, False))
        checks[name] = result
    nodes = h["correct_participants"]
    finals = {n: 0 for n in nodes}
    for _, rec in _adoptions(trace, nodes):
        finals[rec["node"]] = max(finals[rec["node"]], rec["height"])
    blocks = min(finals.values(), default=0)
    replicas = set(h["correct_replicas"])
    views = {rec["view"] for rec in trace if rec.get("event") == "new-view" and rec["replica"] in replicas}
    sessions: Dict[int, int] = defaultdict(int)
    shares: Set[int] = set()
    for rec in trace:
        ev = rec.get("event")
        if ev == "session-open" and rec["replica"] in replicas:
            sessions[rec["height"]] += 1
        elif ev == "commit-sent" and rec.get("shares") is not None:
            shares.add(rec["shares"])
    end = trace[-1]["t"] if trace else 0.0
    rounds = h["rounds"]
    return MetricsReport(
        scenario=h["name"],
        seed=h["seed"],
        mode=h["mode"],
        rounds=rounds,
        blocks_committed=blocks,
        rounds_elapsed=round((end - h["t0"]) / h["tau"], 3),
        growth_ratio=round(blocks / rounds, 3) if rounds else 1.0,
        view_changes=len(views),
        sessions_per_block=dict(sorted(sessions.items())),
        share_counts=sorted(shares),
        checks=checks,
        trace_hash=trace_hash,
        events=len(trace),
    )
