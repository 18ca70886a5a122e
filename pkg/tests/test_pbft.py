import dataclasses

import pytest
from hypothesis import given
from hypothesis import strategies as st

from frostbft.chain import MULTISIG, BlockChallenge, Chain, Genesis, Mempool, build_template, validate_block
from frostbft.group import TINY
from frostbft.pbft import (
    Commit,
    Prepare,
    PrePrepare,
    Replica,
    ReplicaConfig,
    quorum_sizes,
    self_generate_request,
    verify_message,
)
from frostbft.simnet import TimerHandle

TAU = 60


class Host:
    def __init__(self, genesis):
        self.chain = Chain(genesis)
        self.mempool = Mempool()
        self.now = 0.0
        self.sent = []
        self.timers = []
        self.records = []
        self.blocks = []

    def now_local(self):
        return self.now

    def send(self, dst, msg):
        self.sent.append((dst, msg))

    def set_timer(self, delay, callback, *args):
        handle = TimerHandle()
        self.timers.append((delay, callback, args, handle))
        return handle

    def submit_block(self, block):
        self.blocks.append(block)

    def record(self, event, **fields):
        self.records.append({"event": event, **fields})

    def events(self, name):
        return [r for r in self.records if r["event"] == name]


class Cluster:
    def __init__(self, f_b=1, f_c=0, **config):
        n, q = quorum_sizes(f_b, f_c)
        self.n, self.q = n, q
        secrets = {i: 200 + 7 * i for i in range(n)}
        keys = {i: TINY.gexp(s) for i, s in secrets.items()}
        challenge = BlockChallenge(MULTISIG, TINY, signer_keys={i + 1: k for i, k in keys.items()}, required=q)
        self.genesis = Genesis(challenge, t0=0, tau=TAU, max_future=TAU / 2)
        self.hosts = [Host(self.genesis) for _ in range(n)]
        self.replicas = [
            Replica(ReplicaConfig(f_b, f_c, i, tau=TAU, **config), TINY, secrets[i], keys, self.hosts[i]) for i in range(n)
        ]
        self.down = set()
        self.drop = lambda src, dst, msg: False

    def set_time(self, t):
        for h in self.hosts:
            h.now = t

    def pump(self, limit=100_000):
        moved = True
        while moved and limit:
            moved = False
            for src, host in enumerate(self.hosts):
                out, host.sent = host.sent, []
                for dst, msg in out:
                    moved = True
                    limit -= 1
                    if src in self.down or dst in self.down or self.drop(src, dst, msg):
                        continue
                    self.replicas[dst].deliver(msg)

    def fire(self, replica_id, name):
        host = self.hosts[replica_id]
        due = [t for t in host.timers if t[1].__name__ == name and not t[3].cancelled]
        host.timers = [t for t in host.timers if t not in due]
        for _, cb, args, handle in due:
            handle.cancel()
            cb(*args)

    def request(self, height):
        self.set_time(height * TAU - TAU / 4)
        for i in range(self.n):
            if i not in self.down:
                self.replicas[i].schedule_request()
                self.fire(i, "_request_due")
        self.pump()

    def adopt_all(self, block):
        for i, (host, replica) in enumerate(zip(self.hosts, self.replicas)):
            if i in self.down or block.hash in host.chain:
                continue
            assert validate_block(block, host.chain)
            host.chain.append(block)
            replica.on_new_block(block)
        self.pump()


@pytest.mark.parametrize("fb,fc,expected", [(1, 1, (6, 4)), (0, 0, (1, 1)), (1, 0, (4, 3))])
def test_quorum_examples(fb, fc, expected):
    assert quorum_sizes(fb, fc) == expected


@given(st.integers(0, 20), st.integers(0, 20))
def test_quorum_identities(fb, fc):
    n, q = quorum_sizes(fb, fc)
    assert n - q == fb + fc
    assert 2 * q - n >= fb + 1  # two quorums share a correct replica


def test_self_generated_requests():
    cfg = ReplicaConfig(1, 0, 0, tau=TAU)
    assert self_generate_request(cfg, 10.0, 0) is None
    req = self_generate_request(cfg, 60.0, 0)
    assert (req.height, req.timestamp) == (1, 60)
    assert self_generate_request(cfg, 60.0, 1) is None  # block 1 already received: next is 2
    assert self_generate_request(cfg, 105.0, 1).height == 2


def test_honest_preprepare_yields_prepare():
    c = Cluster()
    c.request(1)
    for i in (1, 2, 3):
        assert c.hosts[i].events("pre-prepare")
    assert all(len(r.committed_digests) == 1 for r in c.replicas)
    assert len({r.committed_digests[1] for r in c.replicas}) == 1


def test_future_and_conflicting_preprepares_ignored():
    c = Cluster()
    primary, backup = c.replicas[0], c.replicas[1]
    c.set_time(0.0)
    far = build_template(Mempool(), c.hosts[0].chain, 1)
    # local clock 2 tau behind the nominal timestamp
    c.hosts[1].now = far.header.timestamp - 2 * TAU
    backup.deliver(primary.sign(PrePrepare(0, 1, far.header.timestamp, far, 0)))
    assert c.hosts[1].events("ignore-preprepare")[-1]["reason"] == "future-timestamp"
    c.hosts[1].now = 50.0
    backup.deliver(primary.sign(PrePrepare(0, 1, far.header.timestamp, far, 0)))
    other = build_template(Mempool(), c.hosts[0].chain, 1, tag=b"other")
    backup.deliver(primary.sign(PrePrepare(0, 1, other.header.timestamp, other, 0)))
    assert c.hosts[1].events("ignore-preprepare")[-1]["reason"] == "conflict"
    assert backup.slots[(0, 1)].digest == far.hash


def test_prepare_counting_rules():
    c = Cluster()
    c.set_time(50.0)
    c.replicas[0].propose(1)
    backup = c.replicas[1]
    (pp,) = [m for d, m in c.hosts[0].sent if d == 1]
    c.hosts[0].sent = []
    backup.deliver(pp)
    slot = backup.slots[(0, 1)]
    assert not slot.prepared  # own prepare only
    p2 = c.replicas[2].sign(Prepare(0, 1, pp.digest, 2))
    backup.deliver(p2)
    backup.deliver(p2)
    assert slot.prepared and len(slot.matching_prepares()) == 2

    c2 = Cluster()
    c2.set_time(50.0)
    c2.replicas[0].propose(1)
    b = c2.replicas[1]
    b.deliver([m for d, m in c2.hosts[0].sent if d == 1][0])
    b.deliver(c2.replicas[2].sign(Prepare(0, 1, b"\x00" * 32, 2)))
    assert not b.slots[(0, 1)].prepared


def test_crashed_backup_quorum_commits_and_blocks_valid():
    c = Cluster()
    c.down = {3}
    c.request(1)
    blocks = [h.blocks[0] for h in c.hosts[:3]]
    assert len({b.hash for b in blocks}) == 1
    for b in blocks:
        assert validate_block(b, Chain(c.genesis))


def test_different_commit_subsets_same_hash():
    c = Cluster()
    c.drop = lambda s, d, m: isinstance(m, Commit) and ((d == 0 and s == 3) or (d == 1 and s == 2))
    c.request(1)
    b0, b1 = c.hosts[0].blocks[0], c.hosts[1].blocks[0]
    assert b0.hash == b1.hash and b0.solution != b1.solution
    assert validate_block(b0, Chain(c.genesis)) and validate_block(b1, Chain(c.genesis))


def test_garbage_commit_not_counted():
    c = Cluster()
    c.drop = lambda s, d, m: isinstance(m, Commit) and d == 1
    c.request(1)
    r1 = c.replicas[1]
    slot = r1.slots[(0, 1)]
    bad = c.replicas[2].sign(Commit(0, 1, slot.digest, 2, b"\x01" * 4))
    r1.deliver(bad)
    assert c.hosts[1].events("invalid-commit")
    assert 2 not in slot.commits
    tampered = dataclasses.replace(bad, sender=3)
    assert not verify_message(TINY, r1.public_keys, tampered)


def test_checkpoint_abandons_round_and_ignores_stale():
    c = Cluster()
    c.drop = lambda s, d, m: d == 3  # replica 3 lags
    c.request(1)
    block = c.hosts[0].blocks[0]
    lagging = c.replicas[3]
    assert not lagging.committed_digests
    c.hosts[3].chain.append(block)
    lagging.on_new_block(block)
    assert not any(h == 1 for _, h in lagging.slots)
    assert lagging.waiting == set()
    assert c.hosts[3].events("checkpoint")[-1]["height"] == 1
    # a stale message for the adopted height is dropped silently
    lagging.deliver(c.replicas[0].sign(Prepare(0, 1, block.hash, 0)))
    assert not any(h == 1 for _, h in lagging.slots)


def test_mute_primary_view_change_next_primary_completes():
    c = Cluster()
    c.down = {0}
    c.request(1)
    assert not any(h.blocks for h in c.hosts)
    for i in (1, 2, 3):
        c.fire(i, "_on_timer")
    c.pump()
    for i in (1, 2, 3):
        assert c.replicas[i].view == 1
        assert len(c.hosts[i].events("new-view")) == 1
    assert {h.blocks[0].hash for h in c.hosts[1:]} and all(h.blocks for h in c.hosts[1:])


def test_join_rule_single_timeout_pulls_in_others():
    c = Cluster()
    c.down = {0}
    c.request(1)
    c.fire(1, "_on_timer")
    c.fire(2, "_on_timer")
    c.pump()
    # replica 3 joined through f+1 view-change messages before its own timer fired
    assert c.replicas[3].view == 1


def test_prepared_block_reproposed_in_next_view():
    c = Cluster()
    c.drop = lambda s, d, m: isinstance(m, Commit)
    c.request(1)
    digest = c.replicas[1].slots[(0, 1)].digest
    assert all(r.slots[(0, 1)].prepared for r in c.replicas)
    c.drop = lambda s, d, m: s == 0 or d == 0
    c.down = {0}
    for i in (1, 2, 3):
        c.fire(i, "_on_timer")
    c.pump()
    nv = c.hosts[1].events("new-view")[-1]
    assert nv["reproposed"] == [1]
    assert all(c.replicas[i].committed_digests[1] == digest for i in (1, 2, 3))


def test_timeouts_double_and_reset():
    c = Cluster()
    r = c.replicas[1]
    assert r.timeout() == 2 * TAU
    r.failures = 2
    assert r.timeout() == 8 * TAU
    c.down = {0}
    c.request(1)
    for i in (1, 2, 3):
        c.fire(i, "_on_timer")
    c.pump()
    assert all(c.replicas[i].failures >= 1 for i in (1, 2, 3))
    c.adopt_all(c.hosts[1].blocks[0])
    assert all(c.replicas[i].failures == 0 for i in (1, 2, 3))


def test_symmetric_timeouts_single_coherent_view():
    c = Cluster(f_b=1, f_c=1)
    c.down = {0}
    c.request(1)
    for i in range(1, c.n):
        c.fire(i, "_on_timer")
    c.pump()
    views = {c.replicas[i].view for i in range(1, c.n)}
    assert views == {1}
    for i in range(1, c.n):
        assert [r["view"] for r in c.hosts[i].events("new-view")] == [1]
    assert len({c.hosts[i].blocks[0].hash for i in range(1, c.n) if c.hosts[i].blocks}) == 1
