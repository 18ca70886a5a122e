"""Threshold-signed PBFT: 3-FBFT and FBFT5.

3-FBFT keeps three PBFT phases.  Every participant publishes an extended
commitment at setup, so per-(height, view, combination) nonce commitments
are derivable by anyone; a COMMIT carries one signature share for every
k-combination that contains the sender, and any replica holding Q commits
can aggregate.

FBFT5 piggybacks fresh nonce commitments on PREPARE and, once the commit
quorum is reached, the primary coordinates ROAST-style signing sessions.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Set, Tuple

from .chain import attach_solution
from .frost import (
    CommitmentList,
    ExtendedCommitment,
    ExtendedNonce,
    InvalidShareError,
    KeyMaterial,
    NonceCommitmentPair,
    NonceReuseError,
    PublicKeyPackage,
    SignatureShare,
    aggregate,
    derive_commitment,
    derive_nonce,
    make_commitment_list,
    preprocess,
    sign_share,
    signing_context,
    verify_share,
)
from .group import Ciphersuite, SchnorrSignature, encode_signature
from .pbft import Commit, Prepare, SignRequest, SignShareMsg, SigningMode, Slot

MAX_COMBINATIONS = 512


class FeasibilityError(ValueError):
    pass


def enumerate_combinations(n: int, k: int) -> List[Tuple[int, ...]]:
    """All k-subsets of {1..n} in lexicographic order; index j is position + 1."""
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got n={n}, k={k}")
    return list(itertools.combinations(range(1, n + 1), k))


def combination_index(subset: Sequence[int], n: int) -> int:
    """Inverse of ``enumerate_combinations``: lexicographic rank of ``subset`` plus one."""
    subset = sorted(subset)
    k = len(subset)
    if len(set(subset)) != k or not subset or subset[0] < 1 or subset[-1] > n:
        raise ValueError("subset must hold distinct ids in 1..n")
    rank, prev = 0, 0
    for pos, x in enumerate(subset):
        for y in range(prev + 1, x):
            rank += math.comb(n - y, k - pos - 1)
        prev = x
    return rank + 1


def check_fbft3_feasible(n: int, k: int) -> int:
    gamma = math.comb(n, k)
    if gamma > MAX_COMBINATIONS:
        raise FeasibilityError(f"C({n},{k}) = {gamma} combinations exceeds {MAX_COMBINATIONS}")
    return gamma


# --- 3-FBFT ---------------------------------------------------------------


class HDCommitments:
    """Observer-side derivation of per-combination commitment lists, memoized."""

    def __init__(self, suite: Ciphersuite, ext_public: Dict[int, ExtendedCommitment], n: int, k: int):
        missing = set(range(1, n + 1)) - set(ext_public)
        if missing:
            raise ValueError(f"missing extended commitments for {sorted(missing)}")
        self.suite = suite
        self.ext_public = ext_public
        self.n = n
        self.k = k
        self.combos = enumerate_combinations(n, k)
        self._lists: Dict[Tuple[int, int, int], CommitmentList] = {}
        self._contexts: Dict[Tuple[int, int, int, bytes], object] = {}

    def commitment_list(self, height: int, view: int, j: int) -> CommitmentList:
        key = (height, view, j)
        if key not in self._lists:
            entries = []
            for i in self.combos[j - 1]:
                D, E = derive_commitment(self.suite, self.ext_public[i], height, j, view)
                entries.append((i, D, E))
            self._lists[key] = make_commitment_list(entries)
        return self._lists[key]

    def context(self, height: int, view: int, j: int, message: bytes, Y):
        key = (height, view, j, message)
        if key not in self._contexts:
            self._contexts[key] = signing_context(self.suite, self.commitment_list(height, view, j), message, Y)
        return self._contexts[key]

    def prune(self, height: int) -> None:
        self._lists = {k: v for k, v in self._lists.items() if k[0] > height}
        self._contexts = {k: v for k, v in self._contexts.items() if k[0] > height}

    def member_of(self, i: int) -> List[int]:
        return [j for j, combo in enumerate(self.combos, 1) if i in combo]


def fbft3_share_vector(
    key: KeyMaterial,
    ext_nonce: ExtendedNonce,
    hd: HDCommitments,
    height: int,
    view: int,
    message: bytes,
    used: Optional[Set[Tuple[int, int, int]]] = None,
) -> Dict[int, SignatureShare]:
    """One share per combination containing ``key.index``, each under its derived nonce."""
    suite = key.suite
    shares = {}
    for j in hd.member_of(key.index):
        if used is not None:
            if (height, view, j) in used:
                raise NonceReuseError(f"derived nonce ({height}, {view}, {j}) already used")
            used.add((height, view, j))
        nonce = derive_nonce(suite, ext_nonce, height, j, view)
        shares[j] = sign_share(key, nonce, message, hd.commitment_list(height, view, j))
    return shares


def fbft3_verify_vector(
    hd: HDCommitments, public: PublicKeyPackage, signer: int, vector: Dict[int, int], height: int, view: int, message: bytes
) -> bool:
    if sorted(vector) != hd.member_of(signer):
        return False
    for j, z in vector.items():
        ctx = hd.context(height, view, j, message, public.group_public_key)
        L = hd.commitment_list(height, view, j)
        if not verify_share(hd.suite, SignatureShare(signer, z), L, message, public, ctx):
            return False
    return True


class Fbft3Result(NamedTuple):
    signature: SchnorrSignature
    combination: int
    excluded: Tuple[int, ...]


def fbft3_aggregate(
    hd: HDCommitments,
    public: PublicKeyPackage,
    vectors: Dict[int, Dict[int, int]],
    height: int,
    view: int,
    message: bytes,
) -> Fbft3Result:
    """Aggregate under j*, the smallest combination covered by the senders.

    A sender whose share fails verification is dropped and the next
    candidate combination is tried.
    """
    excluded: Set[int] = set()
    while True:
        senders = sorted(set(vectors) - excluded)
        candidate = next((j for j, combo in enumerate(hd.combos, 1) if set(combo) <= set(senders)), None)
        if candidate is None:
            raise ValueError(f"no combination of {hd.k} valid signers among {senders}")
        combo = hd.combos[candidate - 1]
        shares = [SignatureShare(i, vectors[i].get(candidate, -1)) for i in combo]
        try:
            sig = aggregate(hd.suite, shares, hd.commitment_list(height, view, candidate), message, public)
        except InvalidShareError as exc:
            excluded.add(exc.signer)
            continue
        return Fbft3Result(sig, candidate, tuple(sorted(excluded)))


class Fbft3Signing(SigningMode):
    name = "fbft3"

    def __init__(self, key: KeyMaterial, ext_nonce: ExtendedNonce, ext_public: Dict[int, ExtendedCommitment]):
        check_fbft3_feasible(key.group_size, key.threshold)
        self.key = key
        self.ext_nonce = ext_nonce
        self.hd = HDCommitments(key.suite, ext_public, key.group_size, key.threshold)
        self.used: Set[Tuple[int, int, int]] = set()

    def commit_payload(self, slot: Slot):
        shares = fbft3_share_vector(self.key, self.ext_nonce, self.hd, slot.height, slot.view, slot.digest, self.used)
        return tuple((j, s.z) for j, s in sorted(shares.items()))

    def commit_payload_ok(self, msg: Commit) -> bool:
        if not isinstance(msg.payload, tuple):
            return False
        try:
            vector = {int(j): int(z) for j, z in msg.payload}
        except (TypeError, ValueError):
            return False
        if len(vector) != len(msg.payload):
            return False
        return fbft3_verify_vector(self.hd, self.key.public(), msg.sender + 1, vector, msg.height, msg.view, msg.digest)

    def _try_aggregate(self, slot: Slot) -> None:
        if slot.finalized:
            return
        vectors = {c.sender + 1: dict(c.payload) for c in slot.matching_commits()}
        try:
            result = fbft3_aggregate(self.hd, self.key.public(), vectors, slot.height, slot.view, slot.digest)
        except ValueError:
            return
        r = self.replica
        for signer in result.excluded:
            r.record("invalid-share", view=slot.view, height=slot.height, signer=signer - 1)
        r.record("aggregate", view=slot.view, height=slot.height, combination=result.combination)
        r.finalize(slot, attach_solution(slot.preprepare.block, encode_signature(self.key.suite, result.signature)))

    def on_committed(self, slot: Slot) -> None:
        self._try_aggregate(slot)

    def on_late_commit(self, slot: Slot, msg: Commit) -> None:
        self._try_aggregate(slot)

    def on_checkpoint(self, height: int) -> None:
        self.hd.prune(height)


# --- FBFT5 ----------------------------------------------------------------


@dataclass
class RoastSession:
    sid: int
    signers: Tuple[int, ...]
    commitments: CommitmentList
    opened_at: float
    shares: Dict[int, SignatureShare] = field(default_factory=dict)
    status: str = "open"


class Action(NamedTuple):
    kind: str  # "malicious" | "finalize"
    signer: Optional[int] = None
    session: Optional[int] = None
    signature: Optional[SchnorrSignature] = None


class RoastCoordinator:
    """ROAST bookkeeping for one (view, height) at the primary.

    The primary (``self_id``) joins every session with a fresh nonce; the
    other k-1 members are drawn at random from the responsive set.  A new
    session opens only when none is open or the newest has been pending for
    ``stall_timeout``.  Signers never sit in two open sessions at once, so each
    abandoned session pins down a distinct unresponsive or malicious signer.
    """

    def __init__(
        self,
        suite: Ciphersuite,
        public: PublicKeyPackage,
        k: int,
        self_id: int,
        message: bytes,
        rng: random.Random,
        stall_timeout: float,
        max_sessions: Optional[int] = None,
    ):
        self.suite = suite
        self.public = public
        self.k = k
        self.self_id = self_id
        self.message = message
        self.rng = rng
        self.stall_timeout = stall_timeout
        n = len(public.verification_shares)
        self.max_sessions = n - k + 1 if max_sessions is None else max_sessions
        self.responsive: Dict[int, Tuple[object, object]] = {}
        self.malicious: Set[int] = set()
        self.sessions: Dict[int, RoastSession] = {}
        self.counter = 0
        self.signature: Optional[SchnorrSignature] = None

    @property
    def busy(self) -> Set[int]:
        return {i for s in self.sessions.values() if s.status == "open" for i in s.signers if i != self.self_id}

    def add_commitment(self, signer: int, D, E) -> None:
        if signer == self.self_id or signer in self.malicious or signer in self.busy:
            return
        if signer not in self.public.verification_shares:
            return
        self.responsive[signer] = (D, E)

    def ready(self, now: float) -> bool:
        if self.signature is not None or self.counter >= self.max_sessions:
            return False
        if len(self.responsive) < self.k - 1:
            return False
        open_sessions = [s for s in self.sessions.values() if s.status == "open"]
        return not open_sessions or now - max(s.opened_at for s in open_sessions) >= self.stall_timeout

    def wakeup_delay(self, now: float) -> float:
        """Time until the newest open session counts as stalled (or a full period)."""
        open_sessions = [s for s in self.sessions.values() if s.status == "open"]
        if open_sessions:
            remaining = max(s.opened_at for s in open_sessions) + self.stall_timeout - now
            if remaining > 0:
                return remaining
        return self.stall_timeout

    def open_session(self, now: float, own: NonceCommitmentPair) -> RoastSession:
        if not self.ready(now):
            raise ValueError("coordinator not ready to open a session")
        others = self.rng.sample(sorted(self.responsive), self.k - 1)
        entries = [(self.self_id, own.D, own.E)]
        for i in others:
            entries.append((i, *self.responsive.pop(i)))
        self.counter += 1
        session = RoastSession(self.counter, tuple(sorted([self.self_id, *others])), make_commitment_list(entries), now)
        self.sessions[session.sid] = session
        return session

    def on_share(self, sid: int, share: SignatureShare, next_commitment=None) -> List[Action]:
        session = self.sessions.get(sid)
        if session is None or share.signer not in session.signers or share.signer in session.shares:
            return []
        if share.signer in self.malicious:
            return []
        if not verify_share(self.suite, share, session.commitments, self.message, self.public):
            self.malicious.add(share.signer)
            self.responsive.pop(share.signer, None)
            session.status = "abandoned"
            return [Action("malicious", signer=share.signer, session=sid)]
        session.shares[share.signer] = share
        if next_commitment is not None and share.signer != self.self_id and self.signature is None:
            self.responsive[share.signer] = next_commitment
        if len(session.shares) < len(session.signers) or self.signature is not None:
            return []
        session.status = "complete"
        self.signature = aggregate(self.suite, list(session.shares.values()), session.commitments, self.message, self.public)
        return [Action("finalize", session=sid, signature=self.signature)]


def _encode_pair(suite: Ciphersuite, D, E) -> Tuple[bytes, bytes]:
    return suite.encode(D), suite.encode(E)


def _decode_pair(suite: Ciphersuite, payload):
    if not isinstance(payload, tuple) or len(payload) != 2:
        raise ValueError("commitment must be a pair")
    return suite.decode(payload[0]), suite.decode(payload[1])


class Fbft5Signing(SigningMode):
    name = "fbft5"

    def __init__(self, key: KeyMaterial, rng: random.Random, stall_timeout: float, max_sessions: Optional[int] = None):
        self.key = key
        self.suite = key.suite
        self.rng = rng
        self.stall_timeout = stall_timeout
        self.max_sessions = max_sessions
        self.nonces: Dict[Tuple[bytes, bytes], Tuple[int, NonceCommitmentPair]] = {}
        self.coordinators: Dict[Tuple[int, int], RoastCoordinator] = {}
        self.pending: Dict[Tuple[int, int], List[SignRequest]] = {}
        self._armed: Set[Tuple[int, int]] = set()

    def _fresh(self, height: int) -> Tuple[bytes, bytes]:
        pair = preprocess(1, self.key, self.rng)[0]
        enc = _encode_pair(self.suite, pair.D, pair.E)
        self.nonces[enc] = (height, pair)
        return enc

    # prepare phase: fresh commitment rides along

    def prepare_payload(self, slot: Slot):
        return self._fresh(slot.height)

    def prepare_payload_ok(self, msg: Prepare) -> bool:
        if msg.payload is None:
            return True
        try:
            _decode_pair(self.suite, msg.payload)
        except (ValueError, TypeError):
            return False
        return True

    def _coordinator(self, slot: Slot) -> RoastCoordinator:
        key = (slot.view, slot.height)
        if key not in self.coordinators:
            r = self.replica
            coord = RoastCoordinator(
                self.suite,
                self.key.public(),
                self.key.threshold,
                self.key.index,
                slot.digest,
                random.Random(f"{r.config.replica_id}:{slot.view}:{slot.height}:{self.rng.random()}"),
                self.stall_timeout,
                self.max_sessions,
            )
            self.coordinators[key] = coord
            for p in slot.matching_prepares():
                if p.payload is not None:
                    coord.add_commitment(p.sender + 1, *_decode_pair(self.suite, p.payload))
        return self.coordinators[key]

    def on_preprepare_logged(self, slot: Slot) -> None:
        if self.replica.primary(slot.view) == self.replica.id:
            self._coordinator(slot)

    def on_prepare(self, slot: Slot, msg: Prepare) -> None:
        if self.replica.primary(slot.view) == self.replica.id and msg.payload is not None:
            self._coordinator(slot).add_commitment(msg.sender + 1, *_decode_pair(self.suite, msg.payload))

    # signing phase

    def on_committed(self, slot: Slot) -> None:
        r = self.replica
        if r.primary(slot.view) == r.id:
            self._poll(slot.view, slot.height)
        for req in self.pending.pop((slot.view, slot.height), []):
            self._on_sign_request(req)

    def _poll(self, view: int, height: int) -> None:
        r = self.replica
        slot = r.slots.get((view, height))
        coord = self.coordinators.get((view, height))
        if slot is None or coord is None or slot.finalized or not slot.committed or view != r.view:
            return
        now = r.host.now_local()
        while coord.ready(now):
            own = preprocess(1, self.key, self.rng)[0]
            session = coord.open_session(now, own)
            r.record("session-open", view=view, height=height, session=session.sid, signers=[i - 1 for i in session.signers])
            entries = tuple((e.index, self.suite.encode(e.D), self.suite.encode(e.E)) for e in session.commitments)
            r.broadcast(r.sign(SignRequest(view, height, slot.digest, session.sid, entries, r.id)))
            share = sign_share(self.key, own, slot.digest, session.commitments)
            self._apply(slot, coord, coord.on_share(session.sid, share))
        if coord.signature is None and coord.counter < coord.max_sessions and (view, height) not in self._armed:
            self._armed.add((view, height))
            r.host.set_timer(coord.wakeup_delay(now), self._repoll, view, height)

    def _repoll(self, view: int, height: int) -> None:
        self._armed.discard((view, height))
        self._poll(view, height)

    def _apply(self, slot: Slot, coord: RoastCoordinator, actions: List[Action]) -> None:
        r = self.replica
        for action in actions:
            if action.kind == "malicious":
                r.record("malicious", view=slot.view, height=slot.height, signer=action.signer - 1, session=action.session)
            elif action.kind == "finalize":
                r.record("session-complete", view=slot.view, height=slot.height, session=action.session, sessions=coord.counter)
                r.finalize(slot, attach_solution(slot.preprepare.block, encode_signature(self.suite, action.signature)))

    def on_message(self, msg) -> bool:
        if isinstance(msg, SignRequest):
            self._on_sign_request(msg)
            return True
        if isinstance(msg, SignShareMsg):
            self._on_sign_share(msg)
            return True
        return False

    def _on_sign_request(self, msg: SignRequest) -> None:
        r = self.replica
        if msg.sender != r.primary(msg.view) or msg.view < r.view or msg.height <= r.chain.height:
            return
        slot = r.slots.get((msg.view, msg.height))
        if msg.view > r.view or slot is None or not slot.committed or slot.digest != msg.digest:
            self.pending.setdefault((msg.view, msg.height), []).append(msg)
            return
        mine = [e for e in msg.commitments if e[0] == self.key.index]
        if not mine:
            return  # not selected; nothing to do
        _, D, E = mine[0]
        entry = self.nonces.get((D, E))
        if entry is None or entry[1].used:
            r.record("refuse-sign", view=msg.view, height=msg.height, session=msg.session)
            return
        try:
            L = make_commitment_list((i, self.suite.decode(d), self.suite.decode(e)) for i, d, e in msg.commitments)
            share = sign_share(self.key, entry[1], msg.digest, L)
        except (ValueError, NonceReuseError):
            r.record("refuse-sign", view=msg.view, height=msg.height, session=msg.session)
            return
        del self.nonces[(D, E)]
        reply = SignShareMsg(msg.view, msg.height, msg.session, share.z, self._fresh(msg.height), r.id)
        r.host.send(msg.sender, r.sign(reply))

    def _on_sign_share(self, msg: SignShareMsg) -> None:
        r = self.replica
        coord = self.coordinators.get((msg.view, msg.height))
        slot = r.slots.get((msg.view, msg.height))
        if coord is None or slot is None or r.primary(msg.view) != r.id:
            return
        nxt = None
        if msg.next_commitment is not None:
            try:
                nxt = _decode_pair(self.suite, msg.next_commitment)
            except (ValueError, TypeError):
                nxt = None
        self._apply(slot, coord, coord.on_share(msg.session, SignatureShare(msg.sender + 1, msg.z), nxt))
        self._poll(msg.view, msg.height)

    def on_view_installed(self) -> None:
        v = self.replica.view
        self.coordinators = {k: c for k, c in self.coordinators.items() if k[0] >= v}
        self.pending = {k: p for k, p in self.pending.items() if k[0] >= v}

    def on_checkpoint(self, height: int) -> None:
        self.coordinators = {k: c for k, c in self.coordinators.items() if k[1] > height}
        self.pending = {k: p for k, p in self.pending.items() if k[1] > height}
        self.nonces = {k: v for k, v in self.nonces.items() if v[0] > height}
