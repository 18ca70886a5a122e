"""PBFT replica specialized for block production.

Replicas generate their own append requests on a fixed schedule, the
primary proposes a full block template in PRE-PREPARE, COMMIT messages carry
signature material, and every adopted block acts as a stable checkpoint.

Replica ids are 0-based (primary of view v is v mod N); threshold-signing
participant ids are ``replica_id + 1``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List, NamedTuple, Optional, Set, Tuple

from .chain import Block, StaleTemplateError, attach_solution, build_template, encode_multisig_solution, validate_block
from .group import Ciphersuite, encode_signature, schnorr_sign, schnorr_verify


def quorum_sizes(f_b: int, f_c: int) -> Tuple[int, int]:
    """(N, Q) = (3F_B + 2F_C + 1, 2F_B + F_C + 1)."""
    if f_b < 0 or f_c < 0:
        raise ValueError("fault bounds must be nonnegative")
    n = 3 * f_b + 2 * f_c + 1
    q = 2 * f_b + f_c + 1
    assert q == math.ceil((n + f_b + 1) / 2)
    assert n - q == f_b + f_c
    return n, q


@dataclass(frozen=True)
class ReplicaConfig:
    f_b: int
    f_c: int
    replica_id: int
    t0: float = 0.0
    tau: float = 60.0
    lead_delta: Optional[float] = None
    future_delta: Optional[float] = None
    view_change_timeout: Optional[float] = None
    view_change_enabled: bool = True
    max_height: Optional[int] = None
    stash_limit: int = 20_000

    def __post_init__(self):
        n, _ = quorum_sizes(self.f_b, self.f_c)
        if not 0 <= self.replica_id < n:
            raise ValueError(f"replica id {self.replica_id} outside 0..{n - 1}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    @property
    def n(self) -> int:
        return quorum_sizes(self.f_b, self.f_c)[0]

    @property
    def q(self) -> int:
        return quorum_sizes(self.f_b, self.f_c)[1]

    @property
    def lead(self) -> float:
        return self.tau / 4 if self.lead_delta is None else self.lead_delta

    @property
    def future(self) -> float:
        return self.tau / 2 if self.future_delta is None else self.future_delta

    @property
    def base_timeout(self) -> float:
        return 2 * self.tau if self.view_change_timeout is None else self.view_change_timeout

    def nominal_time(self, height: int) -> float:
        return self.t0 + height * self.tau

    def primary(self, view: int) -> int:
        return view % self.n


class Request(NamedTuple):
    timestamp: float
    height: int


def request_for(config: ReplicaConfig, height: int) -> Request:
    return Request(config.nominal_time(height), height)


CLOCK_EPSILON = 1e-6


def self_generate_request(config: ReplicaConfig, clock: float, tip_height: int) -> Optional[Request]:
    """Request for the next block once the local clock reaches its slot (minus the lead)."""
    n = tip_height + 1
    if config.max_height is not None and n > config.max_height:
        return None
    if clock >= config.nominal_time(n) - config.lead - CLOCK_EPSILON:
        return request_for(config, n)
    return None


# --- messages -------------------------------------------------------------


def _canon(value: Any) -> Any:
    if isinstance(value, Block):
        return {"block": value.serialize().hex()}
    if isinstance(value, (bytes, bytearray)):
        return {"b": bytes(value).hex()}
    if dataclasses.is_dataclass(value):
        return {"type": type(value).__name__, **{f.name: _canon(getattr(value, f.name)) for f in dataclasses.fields(value)}}
    if isinstance(value, (tuple, list)):
        return [_canon(v) for v in value]
    return value


class Signed:
    """Mixin for frozen message dataclasses whose last field is ``auth``."""

    @cached_property
    def signing_bytes(self) -> bytes:
        body = {"type": type(self).__name__}
        for f in dataclasses.fields(self):
            if f.name != "auth":
                body[f.name] = _canon(getattr(self, f.name))
        return json.dumps(body, sort_keys=True, separators=(",", ":")).encode()


@dataclass(frozen=True)
class PrePrepare(Signed):
    view: int
    height: int
    timestamp: float
    block: Block
    sender: int
    auth: bytes = field(default=b"", compare=False, repr=False)

    @property
    def digest(self) -> bytes:
        return self.block.hash


@dataclass(frozen=True)
class Prepare(Signed):
    view: int
    height: int
    digest: bytes
    sender: int
    payload: Any = None
    auth: bytes = field(default=b"", compare=False, repr=False)


@dataclass(frozen=True)
class Commit(Signed):
    view: int
    height: int
    digest: bytes
    sender: int
    payload: Any = None
    auth: bytes = field(default=b"", compare=False, repr=False)


@dataclass(frozen=True)
class PreparedCert:
    preprepare: PrePrepare
    prepares: Tuple[Prepare, ...]


@dataclass(frozen=True)
class ViewChange(Signed):
    new_view: int
    checkpoint: int
    prepared: Tuple[PreparedCert, ...]
    sender: int
    auth: bytes = field(default=b"", compare=False, repr=False)


@dataclass(frozen=True)
class NewView(Signed):
    view: int
    view_changes: Tuple[ViewChange, ...]
    preprepares: Tuple[PrePrepare, ...]
    sender: int
    auth: bytes = field(default=b"", compare=False, repr=False)


@dataclass(frozen=True)
class SignRequest(Signed):
    view: int
    height: int
    digest: bytes
    session: int
    commitments: Tuple[Tuple[int, bytes, bytes], ...]
    sender: int
    auth: bytes = field(default=b"", compare=False, repr=False)


@dataclass(frozen=True)
class SignShareMsg(Signed):
    view: int
    height: int
    session: int
    z: int
    next_commitment: Optional[Tuple[bytes, bytes]]
    sender: int
    auth: bytes = field(default=b"", compare=False, repr=False)


def sign_message(suite: Ciphersuite, secret: int, public: Any, msg):
    sig = schnorr_sign(suite, secret, msg.signing_bytes, public)
    return dataclasses.replace(msg, auth=encode_signature(suite, sig))


def verify_message(suite: Ciphersuite, public_keys: Dict[int, Any], msg) -> bool:
    key = public_keys.get(msg.sender)
    return key is not None and schnorr_verify(suite, key, msg.signing_bytes, msg.auth)


# --- replica --------------------------------------------------------------


@dataclass
class Slot:
    view: int
    height: int
    preprepare: Optional[PrePrepare] = None
    prepares: Dict[int, Prepare] = field(default_factory=dict)
    commits: Dict[int, Commit] = field(default_factory=dict)
    prepared: bool = False
    committed: bool = False
    commit_sent: bool = False
    finalized: bool = False

    @property
    def digest(self) -> Optional[bytes]:
        return self.preprepare.digest if self.preprepare else None

    def matching_prepares(self) -> List[Prepare]:
        d = self.digest
        return [p for p in self.prepares.values() if p.digest == d]

    def matching_commits(self) -> List[Commit]:
        d = self.digest
        return [c for c in self.commits.values() if c.digest == d]


class SigningMode:
    """Hooks that decide what PREPARE and COMMIT carry and how a solution is built.

    One instance per replica; ``attach`` is called by the replica.
    """

    name = "none"
    replica: "Replica"

    def attach(self, replica: "Replica") -> None:
        self.replica = replica

    def prepare_payload(self, slot: Slot) -> Any:
        return None

    def prepare_payload_ok(self, msg: Prepare) -> bool:
        return msg.payload is None

    def on_prepare(self, slot: Slot, msg: Prepare) -> None:
        pass

    def on_preprepare_logged(self, slot: Slot) -> None:
        pass

    def commit_payload(self, slot: Slot) -> Any:
        return None

    def commit_payload_ok(self, msg: Commit) -> bool:
        return msg.payload is None

    def on_committed(self, slot: Slot) -> None:
        pass

    def on_late_commit(self, slot: Slot, msg: Commit) -> None:
        pass

    def on_message(self, msg) -> bool:
        return False

    def on_view_installed(self) -> None:
        pass

    def on_checkpoint(self, height: int) -> None:
        pass


class PlainSigning(SigningMode):
    """Each commit carries an individual Schnorr signature over the block hash.

    The solution concatenates Q of them (multisig challenge).
    """

    name = "plain"

    def commit_payload(self, slot: Slot) -> bytes:
        r = self.replica
        return encode_signature(r.suite, schnorr_sign(r.suite, r.secret, slot.digest, r.public_keys[r.id]))

    def commit_payload_ok(self, msg: Commit) -> bool:
        r = self.replica
        return isinstance(msg.payload, bytes) and schnorr_verify(r.suite, r.public_keys[msg.sender], msg.digest, msg.payload)

    def on_committed(self, slot: Slot) -> None:
        r = self.replica
        commits = sorted(slot.matching_commits(), key=lambda c: c.sender)[: r.config.q]
        solution = encode_multisig_solution(r.suite, [(c.sender + 1, c.payload) for c in commits])
        r.finalize(slot, attach_solution(slot.preprepare.block, solution))


class Replica:
    """Event-driven PBFT state machine.

    ``host`` supplies the environment: ``now_local()``, ``send(dst, msg)``,
    ``set_timer(delay, callback, *args)``, ``submit_block(block)``,
    ``record(event, **fields)``, plus ``chain`` and ``mempool`` of the
    co-located participant node.
    """

    def __init__(self, config: ReplicaConfig, suite: Ciphersuite, secret: int, public_keys: Dict[int, Any], host, mode: Optional[SigningMode] = None):
        self.config = config
        self.id = config.replica_id
        self.suite = suite
        self.secret = secret
        self.public_keys = public_keys
        self.host = host
        self.mode = mode or PlainSigning()
        self.mode.attach(self)

        self.view = 0
        self.in_view_change = False
        self.pending_view: Optional[int] = None
        self.slots: Dict[Tuple[int, int], Slot] = {}
        self.view_changes: Dict[int, Dict[int, ViewChange]] = {}
        self.new_view_sent: Set[int] = set()
        self.last_new_view: Optional[NewView] = None
        self._nv_resent: Set[Tuple[int, int]] = set()
        self.waiting: Set[int] = set()
        self.committed_digests: Dict[int, bytes] = {}
        self.failures = 0
        self._timer = None
        self._request_timer = None
        self._request_height: Optional[int] = None
        self._stash: List[Any] = []
        self.template_tag = b""

    # -- helpers

    @property
    def chain(self):
        return self.host.chain

    @property
    def low_watermark(self) -> int:
        return self.chain.height

    @property
    def high_watermark(self) -> int:
        return self.chain.height + 1

    def primary(self, view: Optional[int] = None) -> int:
        return self.config.primary(self.view if view is None else view)

    @property
    def is_primary(self) -> bool:
        return self.primary() == self.id

    def slot(self, view: int, height: int) -> Slot:
        key = (view, height)
        if key not in self.slots:
            self.slots[key] = Slot(view, height)
        return self.slots[key]

    def sign(self, msg):
        return sign_message(self.suite, self.secret, self.public_keys[self.id], msg)

    def broadcast(self, msg) -> None:
        for dst in range(self.config.n):
            if dst != self.id:
                self.host.send(dst, msg)

    def record(self, event: str, **fields) -> None:
        self.host.record(event, replica=self.id, **fields)

    def timeout(self) -> float:
        return self.config.base_timeout * 2**self.failures

    # -- lifecycle

    def start(self) -> None:
        self.schedule_request()

    def resume(self) -> None:
        """Re-arm timers after a crash; timers that fired while down were lost."""
        self._timer = None
        self._request_timer = None
        self._request_height = None
        if self.waiting or self.in_view_change:
            self._start_timer()
        self.schedule_request()

    def schedule_request(self) -> None:
        n = self.chain.height + 1
        if self.config.max_height is not None and n > self.config.max_height:
            return
        if self._request_height == n:
            return
        if self._request_timer is not None:
            self._request_timer.cancel()
        self._request_height = n
        delay = self.config.nominal_time(n) - self.config.lead - self.host.now_local()
        self._request_timer = self.host.set_timer(max(delay, 0.0), self._request_due, n)

    def _request_due(self, n: int) -> None:
        self._request_timer = None
        if n != self.chain.height + 1:
            return
        req = self_generate_request(self.config, self.host.now_local(), self.chain.height)
        if req is None:
            self._request_height = None
            self.schedule_request()
            return
        self.waiting.add(n)
        self.record("request", height=n, timestamp=req.timestamp, view=self.view)
        self._start_timer()
        if self.is_primary and not self.in_view_change:
            self.propose(n)

    def _start_timer(self) -> None:
        if self._timer is None and self.config.view_change_enabled:
            self._timer = self.host.set_timer(self.timeout(), self._on_timer)

    def _stop_timer(self) -> None:
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None

    def _on_timer(self) -> None:
        self._timer = None
        base = self.pending_view if self.in_view_change else self.view
        self.start_view_change(base + 1)

    # -- normal operation

    def propose(self, n: int) -> None:
        key = (self.view, n)
        if key in self.slots and self.slots[key].preprepare is not None:
            return
        try:
            block = build_template(self.host.mempool, self.chain, n, tag=self.template_tag)
        except StaleTemplateError:
            return
        pp = self.sign(PrePrepare(self.view, n, block.header.timestamp, block, self.id))
        self._log_preprepare(pp)
        self.broadcast(pp)

    def _log_preprepare(self, pp: PrePrepare) -> Slot:
        slot = self.slot(pp.view, pp.height)
        slot.preprepare = pp
        self.record("pre-prepare", view=pp.view, height=pp.height, digest=pp.digest.hex(), primary=pp.sender)
        self.mode.on_preprepare_logged(slot)
        return slot

    def deliver(self, msg) -> None:
        if not hasattr(msg, "auth"):
            return
        if not verify_message(self.suite, self.public_keys, msg):
            self.record("bad-auth", kind=type(msg).__name__, sender=getattr(msg, "sender", None))
            return
        self._dispatch(msg)

    def _dispatch(self, msg) -> None:
        if isinstance(msg, PrePrepare):
            self.on_preprepare(msg)
        elif isinstance(msg, Prepare):
            self.on_prepare(msg)
        elif isinstance(msg, Commit):
            self.on_commit(msg)
        elif isinstance(msg, ViewChange):
            self.on_view_change(msg)
        elif isinstance(msg, NewView):
            self.on_new_view(msg)
        else:
            self.mode.on_message(msg)

    def _defer(self, msg) -> bool:
        """Stash messages for later views or heights; True if the caller should stop."""
        view, height = msg.view, msg.height
        if height <= self.low_watermark:
            return True
        if view > self.view or (view == self.view and self.in_view_change) or height > self.high_watermark:
            if len(self._stash) < self.config.stash_limit:
                self._stash.append(msg)
            return True
        return view < self.view

    def _replay_stash(self) -> None:
        stash, self._stash = self._stash, []
        for msg in stash:
            self._dispatch(msg)

    def on_preprepare(self, msg: PrePrepare) -> None:
        if self._defer(msg):
            return
        if msg.sender != self.primary(msg.view) or msg.sender == self.id:
            return
        slot = self.slot(msg.view, msg.height)
        if slot.preprepare is not None:
            if slot.preprepare.digest != msg.digest:
                self.record("ignore-preprepare", view=msg.view, height=msg.height, digest=msg.digest.hex(), reason="conflict")
            return
        reason = self._check_preprepare(msg)
        if reason:
            self.record("ignore-preprepare", view=msg.view, height=msg.height, digest=msg.digest.hex(), reason=reason)
            return
        self._log_preprepare(msg)
        payload = self.mode.prepare_payload(slot)
        prep = self.sign(Prepare(msg.view, msg.height, msg.digest, self.id, payload))
        slot.prepares[self.id] = prep
        self.broadcast(prep)
        self._check_prepared(slot)

    def _check_preprepare(self, msg: PrePrepare) -> Optional[str]:
        block = msg.block
        if msg.timestamp != self.config.nominal_time(msg.height) or block.header.timestamp != msg.timestamp:
            return "bad-request"
        if block.height != msg.height:
            return "bad-height"
        if msg.timestamp > self.host.now_local() + self.config.future:
            return "future-timestamp"
        verdict = validate_block(block, self.chain, template=True)
        return verdict.reason

    def on_prepare(self, msg: Prepare) -> None:
        if self._defer(msg):
            return
        if msg.sender == self.primary(msg.view) or not self.mode.prepare_payload_ok(msg):
            return
        slot = self.slot(msg.view, msg.height)
        if msg.sender in slot.prepares:
            return
        slot.prepares[msg.sender] = msg
        if slot.preprepare is not None and msg.digest == slot.digest:
            self.mode.on_prepare(slot, msg)
        self._check_prepared(slot)

    def _check_prepared(self, slot: Slot) -> None:
        if slot.prepared or slot.preprepare is None:
            return
        if len(slot.matching_prepares()) < self.config.q - 1:
            return
        slot.prepared = True
        self.record("prepared", view=slot.view, height=slot.height, digest=slot.digest.hex())
        self._send_commit(slot)

    def _send_commit(self, slot: Slot) -> None:
        if slot.commit_sent:
            return
        slot.commit_sent = True
        payload = self.mode.commit_payload(slot)
        commit = self.sign(Commit(slot.view, slot.height, slot.digest, self.id, payload))
        slot.commits[self.id] = commit
        self.record(
            "commit-sent",
            view=slot.view,
            height=slot.height,
            digest=slot.digest.hex(),
            timestamp=slot.preprepare.timestamp,
            local=round(self.host.now_local(), 6),
            shares=len(payload) if isinstance(payload, tuple) else None,
        )
        self.broadcast(commit)
        self._check_committed(slot)

    def on_commit(self, msg: Commit) -> None:
        if self._defer(msg):
            return
        slot = self.slot(msg.view, msg.height)
        if msg.sender in slot.commits:
            return
        if not self.mode.commit_payload_ok(msg):
            self.record("invalid-commit", view=msg.view, height=msg.height, sender=msg.sender)
            return
        slot.commits[msg.sender] = msg
        if slot.committed:
            if msg.digest == slot.digest:
                self.mode.on_late_commit(slot, msg)
            return
        self._check_committed(slot)

    def _check_committed(self, slot: Slot) -> None:
        if slot.committed or not slot.prepared:
            return
        if len(slot.matching_commits()) < self.config.q:
            return
        slot.committed = True
        self.committed_digests[slot.height] = slot.digest
        self.record("committed", view=slot.view, height=slot.height, digest=slot.digest.hex())
        self.mode.on_committed(slot)

    def finalize(self, slot: Slot, block: Block) -> None:
        """Hand a signed block to the co-located participant for gossip."""
        if slot.finalized:
            return
        slot.finalized = True
        self.record("solution", view=slot.view, height=slot.height, digest=block.hash.hex(), size=len(block.solution))
        if block.header.prev_hash == self.chain.tip_hash:
            self.host.submit_block(block)

    # -- checkpoints

    def on_new_block(self, block: Block) -> None:
        n = block.height
        for key in [k for k in self.slots if k[1] <= n]:
            del self.slots[key]
        self._stash = [m for m in self._stash if getattr(m, "height", n + 1) > n]
        self.waiting = {h for h in self.waiting if h > n}
        self.failures = 0
        if not self.in_view_change:
            self._stop_timer()
            if self.waiting:
                self._start_timer()
        self.mode.on_checkpoint(n)
        self.record("checkpoint", height=n, digest=block.hash.hex(), view=self.view)
        self.schedule_request()
        self._replay_stash()

    # -- view change

    def _prepared_certs(self) -> Tuple[PreparedCert, ...]:
        best: Dict[int, Slot] = {}
        for (view, height), slot in self.slots.items():
            if slot.prepared and height > self.low_watermark:
                if height not in best or view > best[height].view:
                    best[height] = slot
        return tuple(
            PreparedCert(s.preprepare, tuple(sorted((p for p in s.matching_prepares() if p.sender != s.preprepare.sender), key=lambda p: p.sender)))
            for _, s in sorted(best.items())
        )

    def start_view_change(self, new_view: int) -> None:
        if new_view <= self.view or (self.in_view_change and new_view <= self.pending_view):
            return
        self.in_view_change = True
        self.pending_view = new_view
        self.failures += 1
        self._stop_timer()
        vc = self.sign(ViewChange(new_view, self.chain.height, self._prepared_certs(), self.id))
        self.record("view-change", view=self.view, new_view=new_view)
        self.view_changes.setdefault(new_view, {})[self.id] = vc
        self.broadcast(vc)
        self._start_timer()
        self._maybe_new_view(new_view)

    def _cert_valid(self, cert: PreparedCert, before_view: int) -> bool:
        pp = cert.preprepare
        if pp.view >= before_view or pp.sender != self.primary(pp.view):
            return False
        if not verify_message(self.suite, self.public_keys, pp):
            return False
        senders = set()
        for p in cert.prepares:
            if (p.view, p.height, p.digest) != (pp.view, pp.height, pp.digest) or p.sender == pp.sender:
                return False
            if not verify_message(self.suite, self.public_keys, p):
                return False
            senders.add(p.sender)
        return len(senders) >= self.config.q - 1

    def _vc_valid(self, vc: ViewChange) -> bool:
        heights = [c.preprepare.height for c in vc.prepared]
        return len(heights) == len(set(heights)) and all(self._cert_valid(c, vc.new_view) for c in vc.prepared)

    def on_view_change(self, msg: ViewChange) -> None:
        nv = self.last_new_view
        if nv is not None and nv.view == self.view and not self.in_view_change and msg.new_view <= self.view + 1:
            # a lagging replica missed our NEW-VIEW; send it again once
            if (self.view, msg.sender) not in self._nv_resent:
                self._nv_resent.add((self.view, msg.sender))
                self.host.send(msg.sender, nv)
        if msg.new_view <= self.view or not self._vc_valid(msg):
            return
        bucket = self.view_changes.setdefault(msg.new_view, {})
        if msg.sender in bucket:
            return
        bucket[msg.sender] = msg
        # join rule: f+1 replicas ask for views above ours
        current = self.pending_view if self.in_view_change else self.view
        higher = {}
        for v, vcs in self.view_changes.items():
            if v > current:
                for s in vcs:
                    if s != self.id:
                        higher.setdefault(s, v)
                        higher[s] = min(higher[s], v)
        if len(higher) >= self.config.f_b + 1:
            self.start_view_change(min(higher.values()))
        self._maybe_new_view(msg.new_view)

    @staticmethod
    def reproposals(view_changes) -> List[PrePrepare]:
        """Highest-view prepared pre-prepare per height across a view-change quorum."""
        best: Dict[int, PrePrepare] = {}
        for vc in view_changes:
            for cert in vc.prepared:
                pp = cert.preprepare
                if pp.height not in best or pp.view > best[pp.height].view:
                    best[pp.height] = pp
        return [best[h] for h in sorted(best)]

    def _maybe_new_view(self, v: int) -> None:
        if self.primary(v) != self.id or v in self.new_view_sent or v <= self.view:
            return
        vcs = self.view_changes.get(v, {})
        if len(vcs) < self.config.q or self.id not in vcs:
            return
        self.new_view_sent.add(v)
        chosen = tuple(sorted(vcs.values(), key=lambda m: m.sender)[: self.config.q])
        pps = tuple(
            self.sign(PrePrepare(v, old.height, old.timestamp, old.block, self.id))
            for old in self.reproposals(chosen)
        )
        nv = self.sign(NewView(v, chosen, pps, self.id))
        self.last_new_view = nv
        self.broadcast(nv)
        self._install_view(v, pps)

    def on_new_view(self, msg: NewView) -> None:
        v = msg.view
        if v <= self.view or msg.sender != self.primary(v):
            return
        senders = {vc.sender for vc in msg.view_changes}
        if len(senders) < self.config.q or len(senders) != len(msg.view_changes):
            return
        for vc in msg.view_changes:
            if vc.new_view != v or not verify_message(self.suite, self.public_keys, vc) or not self._vc_valid(vc):
                return
        expected = [(p.height, p.digest) for p in self.reproposals(msg.view_changes)]
        got = [(p.height, p.digest) for p in msg.preprepares]
        if expected != got or any(p.view != v or p.sender != msg.sender for p in msg.preprepares):
            return
        if not all(verify_message(self.suite, self.public_keys, p) for p in msg.preprepares):
            return
        self._install_view(v, msg.preprepares)

    def _install_view(self, v: int, preprepares) -> None:
        self.view = v
        self.in_view_change = False
        self.pending_view = None
        self._stop_timer()
        self.view_changes = {k: m for k, m in self.view_changes.items() if k > v}
        self.record("new-view", view=v, primary=self.primary(v), reproposed=[p.height for p in preprepares])
        self.mode.on_view_installed()
        if self.waiting:
            self._start_timer()
        covered = set()
        for pp in preprepares:
            covered.add(pp.height)
            if not self.is_primary:
                self._stash.append(pp)
            elif pp.height > self.chain.height:
                self._log_preprepare(pp)
        if self.is_primary:
            for n in sorted(self.waiting):
                if n not in covered:
                    self.propose(n)
        self._replay_stash()
