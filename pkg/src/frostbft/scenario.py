"""Scenario files, network assembly and the end-to-end runner."""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional

from .byzantine import Behavior, byzantine_behavior
from .chain import AGGREGATE_KEY, MULTISIG, Block, BlockChallenge, Genesis, Transaction
from .checks import MetricsReport, evaluate
from .fbft import Fbft3Signing, Fbft5Signing, check_fbft3_feasible
from .frost import dkg_run, new_extended_nonce
from .gossip import BlockMsg, GetBlocks, Participant, TxMsg, gossip_block
from .group import get_ciphersuite, keygen
from .pbft import PlainSigning, Replica, ReplicaConfig, quorum_sizes
from .simnet import DelayModel, Network, Node, Partition, Simulator, trace_hash

MODES = ("plain", "fbft3", "fbft5")
SCENARIO_DIR = Path(__file__).parent / "scenarios"


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    description: str = ""
    f_b: int = 1
    f_c: int = 0
    participants: Optional[int] = None
    mode: str = "plain"
    ciphersuite: str = "tiny"
    rounds: int = 10
    seed: int = 0
    tau: float = 60.0
    t0: float = 0.0
    lead_delta: Optional[float] = None
    future_delta: Optional[float] = None
    view_change_timeout: Optional[float] = None
    view_change_enabled: bool = True
    clock_skew: float = 1.0
    delay: Dict = field(default_factory=dict)
    partitions: List[Dict] = field(default_factory=list)
    byzantine: Dict[str, Dict] = field(default_factory=dict)
    crashes: List[Dict] = field(default_factory=list)
    enforce_fault_budget: bool = True
    tx_per_round: int = 2
    stall_timeout: Optional[float] = None
    max_sessions: Optional[int] = None
    checks: Dict[str, bool] = field(
        default_factory=lambda: {"r1": True, "r2": True, "r3": True, "r4": True, "r5": False, "sessions": True, "delivery": True}
    )
    tau_growth: float = 0.9
    growth_window: int = 10
    slack_rounds: float = 8.0
    trace_messages: bool = True
    max_events: int = 5_000_000

    def __post_init__(self):
        self.validate()

    @property
    def n(self) -> int:
        return quorum_sizes(self.f_b, self.f_c)[0]

    @property
    def q(self) -> int:
        return quorum_sizes(self.f_b, self.f_c)[1]

    @property
    def k(self) -> int:
        """Signing threshold of the active mode."""
        return self.f_b + 1 if self.mode == "fbft5" else self.q

    @property
    def byzantine_ids(self) -> List[int]:
        return sorted(int(i) for i in self.byzantine)

    @property
    def crashed_ids(self) -> List[int]:
        return sorted({int(c["replica"]) for c in self.crashes})

    def validate(self) -> None:
        n, _ = quorum_sizes(self.f_b, self.f_c)
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        get_ciphersuite(self.ciphersuite)
        if self.rounds < 0:
            raise ValueError("rounds must be nonnegative")
        if not (float(self.tau).is_integer() and float(self.t0).is_integer()) or self.tau <= 0:
            raise ValueError("tau and t0 must be whole seconds, tau positive")
        if self.mode == "fbft3":
            check_fbft3_feasible(n, self.q)
        for i in self.byzantine_ids + self.crashed_ids:
            if not 0 <= i < n:
                raise ValueError(f"replica {i} outside 0..{n - 1}")
        for spec in self.byzantine.values():
            byzantine_behavior(spec["script"], **spec.get("params", {}))
        if self.enforce_fault_budget:
            if len(self.byzantine_ids) > self.f_b:
                raise ValueError(f"{len(self.byzantine_ids)} byzantine miners exceed F_B={self.f_b}")
            if len(self.crashed_ids) > self.f_c + self.f_b - len(self.byzantine_ids):
                raise ValueError("crash schedule exceeds the fault budget")
        unknown = set(self.checks) - {"r1", "r2", "r3", "r4", "r5", "sessions", "delivery"}
        if unknown:
            raise ValueError(f"unknown checks {sorted(unknown)}")

    @classmethod
    def from_json(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown scenario keys {sorted(extra)}")
        data = dict(data)
        if "byzantine" in data:
            data["byzantine"] = {str(k): v for k, v in data["byzantine"].items()}
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def to_json(self) -> dict:
        return asdict(self)

    def with_overrides(self, **changes) -> "ScenarioConfig":
        data = self.to_json()
        data.update(changes)
        return ScenarioConfig.from_json(data)


def bundled_scenarios() -> Dict[str, Path]:
    return {p.stem: p for p in sorted(SCENARIO_DIR.glob("*.json"))}


def load_scenario(name_or_path) -> ScenarioConfig:
    path = Path(name_or_path)
    if not path.exists():
        bundled = bundled_scenarios()
        if str(name_or_path) not in bundled:
            raise ValueError(f"no scenario file or bundled scenario named {name_or_path!r}")
        path = bundled[str(name_or_path)]
    return ScenarioConfig.load(path)


# --- miners ---------------------------------------------------------------


class MinerNode(Node):
    """Consensus endpoint of a miner; the co-located participant is its bridge to gossip."""

    def __init__(self, index: int, sim: Simulator, net: Network, participant: Participant, behavior: Optional[Behavior] = None):
        self.index = index
        self.address = f"M{index}"
        self.sim = sim
        self.net = net
        self.participant = participant
        self.behavior = behavior
        self.crashed = False
        self.replica: Optional[Replica] = None

    # host interface used by the replica
    @property
    def chain(self):
        return self.participant.chain

    @property
    def mempool(self):
        return self.participant.mempool

    def now_local(self) -> float:
        return self.participant.local_time()

    def send(self, dst: int, msg) -> None:
        out = [msg] if self.behavior is None else self.behavior.outgoing(self, dst, msg)
        for m in out:
            self.net.send(self.address, f"M{dst}", m)

    def send_raw(self, dst: int, msg) -> None:
        self.net.send(self.address, f"M{dst}", msg)

    def set_timer(self, delay: float, callback, *args):
        return self.sim.schedule(delay, self._fire, callback, args)

    def _fire(self, callback, args) -> None:
        if not self.crashed:
            callback(*args)

    def submit_block(self, block: Block) -> None:
        if self.behavior is not None:
            block = self.behavior.on_finalize(self, block)
        if block is not None:
            gossip_block(self.participant, block)

    def record(self, event: str, **fields) -> None:
        self.sim.record(event, **fields)

    def inject(self, block: Block) -> None:
        """Push a block to the participant's peers without validating it."""
        for peer in self.participant.peers:
            self.net.send(self.participant.address, peer, BlockMsg(block))

    def deliver(self, src: str, msg) -> None:
        if self.replica is not None and src.startswith("M"):
            self.replica.deliver(msg)

    def crash(self) -> None:
        self.crashed = self.participant.crashed = True
        self.sim.record("crash", replica=self.index)

    def recover(self) -> None:
        self.crashed = self.participant.crashed = False
        self.sim.record("recover", replica=self.index)
        for peer in self.participant.peers:
            self.net.send(self.participant.address, peer, GetBlocks(self.participant.chain.height + 1))
        self.replica.resume()


@dataclass
class Simulation:
    config: ScenarioConfig
    sim: Simulator
    net: Network
    genesis: Genesis
    miners: List[MinerNode]
    participants: List[Participant]
    correct_participants: List[Participant]

    @property
    def trace(self):
        return self.sim.trace


def make_genesis(config: ScenarioConfig, rng: random.Random):
    """Keys and block challenge for the configured mode.

    Returns (genesis, auth_keys, signing_material) where auth_keys maps
    replica id to (secret, public) and signing_material depends on the mode.
    """
    suite = get_ciphersuite(config.ciphersuite)
    n = config.n
    auth = {i: keygen(suite, rng) for i in range(n)}
    material = None
    if config.mode == "plain":
        challenge = BlockChallenge(MULTISIG, suite, signer_keys={i + 1: auth[i][1] for i in range(n)}, required=config.q)
    else:
        keys = dkg_run(n, config.k, suite, rng, context=config.name.encode())
        challenge = BlockChallenge(AGGREGATE_KEY, suite, aggregate_key=keys[1].group_public_key)
        material = keys
    tau, t0 = int(config.tau), int(config.t0)
    future = config.tau / 2 if config.future_delta is None else config.future_delta
    genesis = Genesis(challenge, t0=t0, tau=tau, max_future=future)
    return genesis, auth, material


def build(config: ScenarioConfig, seed: Optional[int] = None) -> Simulation:
    seed = config.seed if seed is None else seed
    sim = Simulator(seed)
    delays = DelayModel.from_json(config.delay)
    partitions = [Partition(p["start"], p["end"], tuple(p.get("nodes", ())), p.get("mode", "drop")) for p in config.partitions]
    net = Network(sim, delays, partitions, trace_messages=config.trace_messages)
    genesis, auth, material = make_genesis(config, sim.rng("keys"))
    suite = genesis.suite
    n = config.n
    skew_rng = sim.rng("skew")
    byz = set(config.byzantine_ids)
    crashed = set(config.crashed_ids)

    def skew() -> float:
        return skew_rng.uniform(-config.clock_skew, config.clock_skew) if config.clock_skew else 0.0

    bridges = [Participant(f"B{i}", genesis, sim, net, skew(), correct=i not in byz) for i in range(n)]
    extra = n if config.participants is None else config.participants
    plain = [Participant(f"P{j}", genesis, sim, net, skew()) for j in range(extra)]
    participants = bridges + plain
    for p in participants:
        net.add(p)
    # topology: bridges fully meshed; each plain node links to F+1 bridges and its ring neighbours
    topo = sim.rng("topology")
    edges = {(a.address, b.address) for a in bridges for b in bridges if a is not b}
    fan = min(n, config.f_b + config.f_c + 1)
    for j, p in enumerate(plain):
        for b in topo.sample(bridges, fan):
            edges |= {(p.address, b.address), (b.address, p.address)}
        if len(plain) > 1:
            q = plain[(j + 1) % len(plain)]
            if q is not p:
                edges |= {(p.address, q.address), (q.address, p.address)}
    for a, b in sorted(edges):
        net.nodes[a].peers.append(b)

    mode_rng = sim.rng("modes")
    ext = {}
    if config.mode == "fbft3":
        ext = {i: new_extended_nonce(suite, mode_rng) for i in range(1, n + 1)}
    ext_public = {i: e.public(suite) for i, e in ext.items()}
    stall = config.stall_timeout if config.stall_timeout is not None else 4 * delays.bound
    miners = []
    for i in range(n):
        spec = config.byzantine.get(str(i))
        behavior = byzantine_behavior(spec["script"], **spec.get("params", {})) if spec else None
        miner = MinerNode(i, sim, net, bridges[i], behavior)
        rcfg = ReplicaConfig(
            config.f_b,
            config.f_c,
            i,
            t0=config.t0,
            tau=config.tau,
            lead_delta=config.lead_delta,
            future_delta=config.future_delta,
            view_change_timeout=config.view_change_timeout,
            view_change_enabled=config.view_change_enabled,
            max_height=config.rounds,
        )
        if config.mode == "plain":
            mode = PlainSigning()
        elif config.mode == "fbft3":
            mode = Fbft3Signing(material[i + 1], ext[i + 1], ext_public)
        else:
            mode = Fbft5Signing(material[i + 1], sim.rng(f"fbft5-{i}"), stall, config.max_sessions)
        public_keys = {j: auth[j][1] for j in range(n)}
        miner.replica = Replica(rcfg, suite, auth[i][0], public_keys, miner, mode)
        bridges[i].listeners.append(miner.replica.on_new_block)
        net.add(miner)
        miners.append(miner)

    correct = [p for p in participants if not (p.address.startswith("B") and int(p.address[1:]) in byz | crashed)]
    correct_replicas = [i for i in range(n) if i not in byz | crashed]
    sim.record(
        "scenario",
        name=config.name,
        seed=seed,
        mode=config.mode,
        ciphersuite=config.ciphersuite,
        n=n,
        q=config.q,
        k=config.k,
        f_b=config.f_b,
        f_c=config.f_c,
        rounds=config.rounds,
        tau=config.tau,
        t0=config.t0,
        max_future=genesis.max_future,
        future_delta=miners[0].replica.config.future if miners else genesis.max_future,
        gst=delays.gst,
        delta=delays.bound,
        partitions=config.partitions,
        byzantine=sorted(byz),
        crashed=sorted(crashed),
        crashed_participants=[f"B{i}" for i in sorted(crashed)],
        correct_participants=[p.address for p in correct],
        correct_replicas=correct_replicas,
        correct_addresses=[p.address for p in correct] + [f"M{i}" for i in correct_replicas],
        tau_growth=config.tau_growth,
        growth_window=config.growth_window,
        checks={k: bool(v) for k, v in config.checks.items()},
        genesis=genesis.to_json(),
    )
    for c in config.crashes:
        miner = miners[int(c["replica"])]
        sim.schedule_at(float(c.get("at", 0.0)), miner.crash)
        if c.get("recover") is not None:
            sim.schedule_at(float(c["recover"]), miner.recover)
    tx_rng = sim.rng("transactions")
    honest_plain = plain or [b for b in bridges if b.correct]
    for r in range(config.rounds):
        for t in range(config.tx_per_round):
            when = config.t0 + r * config.tau + tx_rng.uniform(0, config.tau)
            origin = tx_rng.choice(honest_plain)
            tx = Transaction(b"tx:%d:%d:" % (r, t) + tx_rng.getrandbits(64).to_bytes(8, "big"))
            sim.schedule_at(when, origin.receive_tx, tx)
    for miner in miners:
        if miner.behavior is not None:
            miner.behavior.setup(miner)
        miner.replica.start()
    return Simulation(config, sim, net, genesis, miners, participants, correct)


def simulate(config: ScenarioConfig, seed: Optional[int] = None) -> Simulation:
    simulation = build(config, seed)
    target = config.rounds
    done = {"count": 0}
    watchers = [p for p in simulation.correct_participants if p.address not in {f"B{i}" for i in config.crashed_ids}]

    def on_adopt(block: Block) -> None:
        if block.height == target:
            done["count"] += 1

    for p in watchers:
        p.listeners.append(on_adopt)
    end = config.t0 + (config.rounds + config.slack_rounds) * config.tau
    if target > 0:
        simulation.sim.run_until(lambda: done["count"] >= len(watchers), until=end, max_events=config.max_events)
    simulation.sim.record("end", heights={p.address: p.chain.height for p in simulation.participants})
    return simulation


def run_scenario(config: ScenarioConfig, seed: Optional[int] = None) -> MetricsReport:
    simulation = simulate(config, seed)
    trace = simulation.trace
    return evaluate(trace, trace_hash(trace))
