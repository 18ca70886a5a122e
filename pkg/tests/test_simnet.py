import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from frostbft.chain import AGGREGATE_KEY, BlockChallenge, Genesis, Mempool, attach_solution, build_template
from frostbft.frost import aggregate, dkg_run, make_commitment_list, preprocess, sign_share
from frostbft.gossip import Participant, gossip_block
from frostbft.group import TINY, encode_signature
from frostbft.simnet import (
    DelayModel,
    EventBudgetExceeded,
    Network,
    Node,
    Partition,
    Simulator,
    read_trace,
    trace_hash,
    write_trace,
)


class Sink(Node):
    def __init__(self, address):
        self.address = address
        self.got = []

    def deliver(self, src, msg):
        self.got.append((src, msg))


def test_events_ordered_by_time_then_insertion():
    sim = Simulator(1)
    out = []
    sim.schedule(2.0, out.append, "c")
    sim.schedule(1.0, out.append, "a")
    sim.schedule(1.0, out.append, "b")
    handle = sim.schedule(1.5, out.append, "x")
    handle.cancel()
    sim.run_until()
    assert out == ["a", "b", "c"]
    assert sim.now == 2.0


def test_empty_queue_returns_immediately():
    sim = Simulator(0)
    assert sim.run_until() == []
    assert sim.now == 0.0


def test_run_until_time_and_budget():
    sim = Simulator(0)

    def tick():
        sim.schedule(1.0, tick)

    sim.schedule(0.0, tick)
    sim.run_until(until=10.5)
    assert sim.now == 10.5
    with pytest.raises(EventBudgetExceeded):
        sim.run_until(max_events=5)


def test_rng_streams_independent_and_reproducible():
    a, b = Simulator(3), Simulator(3)
    assert a.rng("net").random() == b.rng("net").random()
    assert a.rng("net").random() != a.rng("keys").random()
    assert Simulator(4).rng("net").random() != a.rng("net").random()


def _net(delays, partitions=()):
    sim = Simulator(9)
    net = Network(sim, delays, partitions)
    a, b = Sink("a"), Sink("b")
    net.add(a)
    net.add(b)
    return sim, net, a, b


def test_fault_free_delay_within_base_plus_jitter():
    sim, net, a, b = _net(DelayModel())
    for _ in range(50):
        (t,) = net.send("a", "b", "m")
        assert 0.05 <= t <= 0.07
    sim.run_until()
    assert len(b.got) == 50


def test_partition_drops_then_heals():
    sim, net, a, b = _net(DelayModel(), [Partition(0.0, 5.0, ("b",), "drop")])
    assert net.send("a", "b", "lost") == []
    sim.schedule_at(6.0, lambda: net.send("a", "b", "kept"))
    sim.run_until()
    assert [m for _, m in b.got] == ["kept"]
    assert [r["event"] for r in sim.trace] == ["drop", "msg"]


def test_duplicate_partition_delivers_twice():
    sim, net, a, b = _net(DelayModel(), [Partition(0.0, 5.0, (), "duplicate")])
    assert len(net.send("a", "b", "m")) == 2
    sim.run_until()
    assert len(b.got) == 2


def test_pre_gst_losses_and_post_gst_bound():
    delays = DelayModel(gst=100.0, drop_prob=0.5, pre_gst_extra=3.0)
    sim, net, a, b = _net(delays)
    early = [net.send("a", "b", i) for i in range(200)]
    assert any(not t for t in early)
    sim.run_until(until=150.0)
    late = net.send("a", "b", "late")
    assert len(late) == 1 and late[0] - sim.now <= delays.bound


def test_crashed_destination_gets_nothing():
    sim, net, a, b = _net(DelayModel())
    net.send("a", "b", "m")
    b.crashed = True
    sim.run_until()
    assert b.got == []


def test_delay_model_json():
    model = DelayModel.from_json({"base": 0.1, "link_base": {"a->b": 0.3}})
    assert model.link_base == {("a", "b"): 0.3}
    assert model.bound == pytest.approx(0.32)


@given(st.lists(st.dictionaries(st.sampled_from(["t", "event", "x"]), st.integers()), max_size=10))
def test_trace_roundtrip(tmp_path_factory, records):
    path = tmp_path_factory.mktemp("trace") / "t.jsonl"
    write_trace(records, path)
    again = read_trace(path)
    assert again == records
    assert trace_hash(again) == trace_hash(records)


# --- gossip ----------------------------------------------------------------


def _signed_block(keys, chain, rng):
    template = build_template(Mempool(), chain, chain.height + 1)
    nonces = {i: preprocess(1, keys[i], rng)[0] for i in (1, 2)}
    L = make_commitment_list((i, n.D, n.E) for i, n in nonces.items())
    shares = [sign_share(keys[i], nonces[i], template.hash, L) for i in (1, 2)]
    return attach_solution(template, encode_signature(TINY, aggregate(TINY, shares, L, template.hash, keys[1].public())))


def _participants(count=5):
    keys = dkg_run(3, 2, TINY, random.Random(0))
    genesis = Genesis(BlockChallenge(AGGREGATE_KEY, TINY, aggregate_key=keys[1].group_public_key), t0=0, tau=60)
    sim = Simulator(2)
    sim.now = 60.0
    net = Network(sim, DelayModel())
    nodes = [Participant(f"P{i}", genesis, sim, net) for i in range(count)]
    for node in nodes:
        net.add(node)
        node.peers = [p.address for p in nodes if p is not node]
    return keys, sim, nodes


def test_all_participants_adopt_within_bound():
    keys, sim, nodes = _participants()
    block = _signed_block(keys, nodes[0].chain, random.Random(1))
    schedule = gossip_block(nodes[0], block)
    assert len(schedule) == 4 and all(t - 60.0 <= DelayModel().bound for _, t in schedule)
    sim.run_until()
    assert all(n.chain.tip_hash == block.hash for n in nodes)
    adopts = [r for r in sim.trace if r["event"] == "adopt"]
    assert len(adopts) == 5


def test_duplicate_delivery_is_idempotent():
    keys, sim, nodes = _participants(2)
    block = _signed_block(keys, nodes[0].chain, random.Random(1))
    assert nodes[1].receive_block(block)
    assert not nodes[1].receive_block(block)
    assert nodes[1].chain.height == 1


def test_invalid_block_never_relayed():
    keys, sim, nodes = _participants()
    block = build_template(Mempool(), nodes[0].chain, 1)
    forged = attach_solution(block, b"\x00" * 4)
    assert gossip_block(nodes[0], forged) == []
    sim.run_until()
    assert all(n.chain.height == 0 for n in nodes)
    assert not any(r["event"] == "msg" for r in sim.trace)
