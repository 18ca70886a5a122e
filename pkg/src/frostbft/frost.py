"""FROST threshold Schnorr signatures.

Covers dealerless key generation (parallel Feldman VSS with a proof of
knowledge of each dealer's constant term), nonce preprocessing,
hierarchical deterministic nonce derivation, signature shares, share
verification and aggregation.

Participant identifiers are the integers 1..n.  Scalars are ints mod q.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

from .group import (
    Ciphersuite,
    GroupElement,
    SchnorrSignature,
    hash_to_scalar_h1,
    hash_to_scalar_h2,
)


class FrostError(Exception):
    pass


class NonceReuseError(FrostError):
    """A nonce pair was presented for signing a second time."""


class InvalidShareError(FrostError):
    def __init__(self, signer: int):
        super().__init__(f"invalid signature share from participant {signer}")
        self.signer = signer


class DealerMisbehaviorError(FrostError):
    def __init__(self, dealer: int, accuser: Optional[int] = None, reason: str = "share"):
        who = f" (reported by {accuser})" if accuser is not None else ""
        super().__init__(f"dealer {dealer} misbehaved: bad {reason}{who}")
        self.dealer = dealer
        self.accuser = accuser
        self.reason = reason


class PublicKeyPackage(NamedTuple):
    verification_shares: Dict[int, GroupElement]
    group_public_key: GroupElement


@dataclass
class KeyMaterial:
    suite: Ciphersuite
    index: int
    secret_share: int
    verification_shares: Dict[int, GroupElement]
    group_public_key: GroupElement
    threshold: int
    group_size: int

    def public(self) -> PublicKeyPackage:
        return PublicKeyPackage(self.verification_shares, self.group_public_key)


@dataclass
class NonceCommitmentPair:
    d: int
    e: int
    D: GroupElement
    E: GroupElement
    used: bool = False

    def commitment(self) -> Tuple[GroupElement, GroupElement]:
        return self.D, self.E


class CommitmentEntry(NamedTuple):
    index: int
    D: GroupElement
    E: GroupElement


CommitmentList = Tuple[CommitmentEntry, ...]


class SignatureShare(NamedTuple):
    signer: int
    z: int


class ExtendedCommitment(NamedTuple):
    """Public half of an HD nonce: anyone holding it derives (D, E) per index."""

    base_D: GroupElement
    base_E: GroupElement
    chain_code: bytes


@dataclass
class ExtendedNonce:
    base_d: int
    base_e: int
    chain_code: bytes

    def public(self, suite: Ciphersuite) -> ExtendedCommitment:
        return ExtendedCommitment(suite.gexp(self.base_d), suite.gexp(self.base_e), self.chain_code)


def make_commitment_list(entries: Iterable[Tuple[int, GroupElement, GroupElement]]) -> CommitmentList:
    L = tuple(CommitmentEntry(*e) for e in sorted(entries, key=lambda e: e[0]))
    ids = [e.index for e in L]
    if len(set(ids)) != len(ids) or any(i < 1 for i in ids):
        raise ValueError("commitment list ids must be distinct and positive")
    return L


def encode_commitment_list(suite: Ciphersuite, L: CommitmentList) -> bytes:
    return b"".join(e.index.to_bytes(4, "big") + suite.encode(e.D) + suite.encode(e.E) for e in L)


# --- key generation -------------------------------------------------------


def eval_polynomial(coefficients: Sequence[int], x: int, q: int) -> int:
    acc = 0
    for a in reversed(coefficients):
        acc = (acc * x + a) % q
    return acc


@dataclass
class Dealer:
    """One participant's role as a VSS dealer during key generation."""

    index: int
    coefficients: List[int]
    commitments: List[GroupElement]
    pok: Tuple[GroupElement, int]

    def share_for(self, recipient: int, q: int) -> int:
        return eval_polynomial(self.coefficients, recipient, q)


def _pok_challenge(suite: Ciphersuite, dealer: int, context: bytes, A: GroupElement, R: GroupElement) -> int:
    data = dealer.to_bytes(4, "big") + context + suite.encode(A) + suite.encode(R)
    return suite.hash_to_scalar("dkg-pok", data)


def verify_pok(suite: Ciphersuite, dealer: int, context: bytes, commitments, pok) -> bool:
    R, mu = pok
    c = _pok_challenge(suite, dealer, context, commitments[0], R)
    return suite.gexp(mu) == suite.mul(R, suite.exp(commitments[0], c))


def verify_dealer_share(suite: Ciphersuite, commitments: Sequence[GroupElement], recipient: int, share: int) -> bool:
    """Feldman check: g^share == prod_j C_j^(recipient^j)."""
    expected = suite.identity()
    power = 1
    for C in commitments:
        expected = suite.mul(expected, suite.exp(C, power))
        power = power * recipient % suite.q
    return suite.gexp(share) == expected


def dkg_deal(n: int, k: int, suite: Ciphersuite, rng: random.Random, context: bytes = b"") -> List[Dealer]:
    """Round 1: every participant samples a degree k-1 polynomial and broadcasts commitments."""
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got n={n} k={k}")
    dealers = []
    for i in range(1, n + 1):
        coeffs = [suite.random_scalar(rng) for _ in range(k)]
        commitments = [suite.gexp(a) for a in coeffs]
        r = suite.random_scalar(rng)
        R = suite.gexp(r)
        c = _pok_challenge(suite, i, context, commitments[0], R)
        dealers.append(Dealer(i, coeffs, commitments, (R, (r + coeffs[0] * c) % suite.q)))
    return dealers


def dkg_finalize(
    dealers: Sequence[Dealer],
    k: int,
    suite: Ciphersuite,
    context: bytes = b"",
    tamper: Optional[Dict[Tuple[int, int], int]] = None,
) -> Dict[int, KeyMaterial]:
    """Round 2: private share delivery, Feldman checks, and key derivation.

    ``tamper`` maps (dealer, recipient) to an additive offset applied to the
    share in transit, for fault-injection tests.
    """
    n = len(dealers)
    q = suite.q
    for dealer in dealers:
        if len(dealer.commitments) != k or not verify_pok(suite, dealer.index, context, dealer.commitments, dealer.pok):
            raise DealerMisbehaviorError(dealer.index, reason="proof of knowledge")
    secret = {l: 0 for l in range(1, n + 1)}
    for dealer in dealers:
        for l in range(1, n + 1):
            share = dealer.share_for(l, q)
            if tamper:
                share = (share + tamper.get((dealer.index, l), 0)) % q
            if not verify_dealer_share(suite, dealer.commitments, l, share):
                raise DealerMisbehaviorError(dealer.index, accuser=l)
            secret[l] = (secret[l] + share) % q
    Y = suite.product(d.commitments[0] for d in dealers)
    verification = {}
    for l in range(1, n + 1):
        acc = suite.identity()
        for dealer in dealers:
            power = 1
            for C in dealer.commitments:
                acc = suite.mul(acc, suite.exp(C, power))
                power = power * l % q
        verification[l] = acc
    return {
        l: KeyMaterial(suite, l, secret[l], dict(verification), Y, k, n)
        for l in range(1, n + 1)
    }


def dkg_run(
    n: int,
    k: int,
    suite: Ciphersuite,
    rng: random.Random,
    context: bytes = b"",
    tamper: Optional[Dict[Tuple[int, int], int]] = None,
) -> Dict[int, KeyMaterial]:
    return dkg_finalize(dkg_deal(n, k, suite, rng, context), k, suite, context, tamper)


# --- nonces ---------------------------------------------------------------


def preprocess(pi: int, key: KeyMaterial, rng: random.Random) -> List[NonceCommitmentPair]:
    if pi < 1:
        raise ValueError("pi must be >= 1")
    suite = key.suite
    pairs = []
    for _ in range(pi):
        d, e = suite.random_scalar(rng), suite.random_scalar(rng)
        pairs.append(NonceCommitmentPair(d, e, suite.gexp(d), suite.gexp(e)))
    return pairs


def new_extended_nonce(suite: Ciphersuite, rng: random.Random) -> ExtendedNonce:
    chain_code = rng.getrandbits(256).to_bytes(32, "big")
    return ExtendedNonce(suite.random_scalar(rng), suite.random_scalar(rng), chain_code)


def hd_tweaks(suite: Ciphersuite, chain_code: bytes, height: int, combination_index: int, view: int = 0) -> Tuple[int, int]:
    if height < 0 or combination_index < 0 or view < 0:
        raise ValueError("derivation indices must be nonnegative")
    path = height.to_bytes(8, "big") + view.to_bytes(4, "big") + combination_index.to_bytes(4, "big")
    return (
        suite.hash_to_scalar("hd", chain_code + b"D" + path),
        suite.hash_to_scalar("hd", chain_code + b"E" + path),
    )


def derive_commitment(suite: Ciphersuite, ext: ExtendedCommitment, height: int, combination_index: int, view: int = 0):
    """Observer side: (D, E) = (base_D * g^tD, base_E * g^tE)."""
    tD, tE = hd_tweaks(suite, ext.chain_code, height, combination_index, view)
    return suite.mul(ext.base_D, suite.gexp(tD)), suite.mul(ext.base_E, suite.gexp(tE))


def derive_nonce(suite: Ciphersuite, ext: ExtendedNonce, height: int, combination_index: int, view: int = 0) -> NonceCommitmentPair:
    """Owner side: d = base_d + tD, e = base_e + tE, so that g^d matches the observer's D."""
    tD, tE = hd_tweaks(suite, ext.chain_code, height, combination_index, view)
    d = (ext.base_d + tD) % suite.q
    e = (ext.base_e + tE) % suite.q
    return NonceCommitmentPair(d, e, suite.gexp(d), suite.gexp(e))


# --- signing --------------------------------------------------------------


def lagrange_coefficient(i: int, signer_set: Iterable[int], q: int) -> int:
    """lambda_i = prod_{j != i} m_j / (m_j - m_i) mod q."""
    signers = list(signer_set)
    if i not in signers:
        raise ValueError(f"participant {i} not in signer set")
    if len(set(signers)) != len(signers) or any(m % q == 0 for m in signers):
        raise ValueError("signer ids must be distinct and nonzero")
    num, den = 1, 1
    for m in signers:
        if m == i:
            continue
        num = num * m % q
        den = den * (m - i) % q
    return num * pow(den, -1, q) % q


class SigningContext(NamedTuple):
    R: GroupElement
    c: int
    binding: Dict[int, int]
    lambdas: Dict[int, int]
    commitments: Dict[int, Tuple[GroupElement, GroupElement]]


def signing_context(suite: Ciphersuite, L: CommitmentList, message: bytes, Y: GroupElement) -> SigningContext:
    encoded = encode_commitment_list(suite, L)
    ids = [e.index for e in L]
    binding = {e.index: hash_to_scalar_h1(suite, e.index, message, encoded) for e in L}
    R = suite.product(suite.mul(e.D, suite.exp(e.E, binding[e.index])) for e in L)
    c = hash_to_scalar_h2(suite, R, Y, message)
    lambdas = {i: lagrange_coefficient(i, ids, suite.q) for i in ids}
    return SigningContext(R, c, binding, lambdas, {e.index: (e.D, e.E) for e in L})


def sign_share(key: KeyMaterial, nonce: NonceCommitmentPair, message: bytes, L: CommitmentList) -> SignatureShare:
    """z_i = d_i + e_i * rho_i + lambda_i * s_i * c; consumes the nonce pair."""
    if nonce.used:
        raise NonceReuseError(f"nonce pair already used by participant {key.index}")
    if len(L) < key.threshold:
        raise ValueError(f"commitment list has {len(L)} entries, threshold is {key.threshold}")
    suite = key.suite
    ctx = signing_context(suite, L, message, key.group_public_key)
    if key.index not in ctx.commitments:
        raise ValueError(f"participant {key.index} not in commitment list")
    if ctx.commitments[key.index] != (nonce.D, nonce.E):
        raise ValueError("nonce pair does not match the signer's commitment in L")
    i = key.index
    z = (nonce.d + nonce.e * ctx.binding[i] + ctx.lambdas[i] * key.secret_share * ctx.c) % suite.q
    nonce.used = True
    nonce.d = nonce.e = 0
    return SignatureShare(i, z)


def _share_ok(suite: Ciphersuite, share: SignatureShare, ctx: SigningContext, Y_i: GroupElement) -> bool:
    D, E = ctx.commitments[share.signer]
    R_i = suite.mul(D, suite.exp(E, ctx.binding[share.signer]))
    rhs = suite.mul(R_i, suite.exp(Y_i, ctx.c * ctx.lambdas[share.signer]))
    return suite.gexp(share.z) == rhs


def verify_share(
    suite: Ciphersuite,
    share: SignatureShare,
    L: CommitmentList,
    message: bytes,
    public: PublicKeyPackage,
    ctx: Optional[SigningContext] = None,
) -> bool:
    """g^z_i == R_i * Y_i^(c * lambda_i) with R_i = D_i * E_i^rho_i."""
    if ctx is None:
        if share.signer not in {e.index for e in L}:
            return False
        ctx = signing_context(suite, L, message, public.group_public_key)
    if share.signer not in ctx.commitments or share.signer not in public.verification_shares:
        return False
    if not 0 <= share.z < suite.q:
        return False
    return _share_ok(suite, share, ctx, public.verification_shares[share.signer])


def aggregate(
    suite: Ciphersuite,
    shares: Sequence[SignatureShare],
    L: CommitmentList,
    message: bytes,
    public: PublicKeyPackage,
) -> SchnorrSignature:
    """sigma = (R, sum z_i); refuses if any share fails verification."""
    if sorted(s.signer for s in shares) != [e.index for e in L]:
        raise ValueError("shares must cover exactly the commitment list")
    ctx = signing_context(suite, L, message, public.group_public_key)
    for share in shares:
        if not verify_share(suite, share, L, message, public, ctx):
            raise InvalidShareError(share.signer)
    return SchnorrSignature(ctx.R, sum(s.z for s in shares) % suite.q)
