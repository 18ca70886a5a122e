"""Prime-order group arithmetic, hash-to-scalar functions and plain Schnorr.

Two ciphersuites are registered:

* ``tiny``  -- the order-1009 subgroup of Z_10091^*.  Small enough for
  brute-force oracles in tests, and fast enough for long simulations.
  It offers no security whatsoever.
* ``curve`` -- secp256k1 with BIP340-style tagged SHA-256 hashes.

The group is written multiplicatively throughout (``mul``, ``exp``,
``gexp``) so that code reads like g^z == R * Y^c regardless of suite.
"""

from __future__ import annotations

import hashlib
import random
from typing import Any, NamedTuple, Optional, Tuple

GroupElement = Any
Point = Optional[Tuple[int, int]]


def tagged_hash(tag: str, data: bytes) -> bytes:
    tag_digest = hashlib.sha256(tag.encode()).digest()
    return hashlib.sha256(tag_digest + tag_digest + data).digest()


def lp(data: bytes) -> bytes:
    """Length-prefix a byte string (4-byte big-endian length)."""
    return len(data).to_bytes(4, "big") + data


class Ciphersuite:
    """A prime-order group together with its hash functions.

    Subclasses provide ``q`` (prime order), ``g`` (generator), ``id`` and
    the group operations.  Scalars are plain ints reduced modulo ``q``.
    """

    id: str
    q: int
    g: GroupElement
    element_size: int
    scalar_size: int

    def identity(self) -> GroupElement:
        raise NotImplementedError

    def mul(self, a: GroupElement, b: GroupElement) -> GroupElement:
        raise NotImplementedError

    def exp(self, a: GroupElement, k: int) -> GroupElement:
        raise NotImplementedError

    def gexp(self, k: int) -> GroupElement:
        return self.exp(self.g, k)

    def inverse(self, a: GroupElement) -> GroupElement:
        return self.exp(a, self.q - 1)

    def encode(self, a: GroupElement) -> bytes:
        raise NotImplementedError

    def decode(self, data: bytes) -> GroupElement:
        raise NotImplementedError

    def is_element(self, a: GroupElement) -> bool:
        try:
            return self.decode(self.encode(a)) == a
        except (ValueError, TypeError):
            return False

    def product(self, elements) -> GroupElement:
        acc = self.identity()
        for e in elements:
            acc = self.mul(acc, e)
        return acc

    def encode_scalar(self, k: int) -> bytes:
        return (k % self.q).to_bytes(self.scalar_size, "big")

    def decode_scalar(self, data: bytes) -> int:
        if len(data) != self.scalar_size:
            raise ValueError("bad scalar length")
        k = int.from_bytes(data, "big")
        if k >= self.q:
            raise ValueError("scalar out of range")
        return k

    def random_scalar(self, rng: random.Random) -> int:
        """Uniform nonzero scalar drawn from a seeded RNG."""
        return rng.randrange(1, self.q)

    def hash_to_scalar(self, domain: str, data: bytes) -> int:
        """Map bytes to a scalar in [1, q) under a domain tag."""
        digest = tagged_hash(f"{self.id}/{domain}", data)
        return int.from_bytes(digest, "big") % (self.q - 1) + 1

    def __repr__(self) -> str:
        return f"<Ciphersuite {self.id}>"


class SchnorrGroup(Ciphersuite):
    """Order-q subgroup of Z_p^* with p = r*q + 1."""

    def __init__(self, ident: str, p: int, q: int, g: int):
        if (p - 1) % q or g <= 1 or pow(g, q, p) != 1:
            raise ValueError("g does not generate an order-q subgroup")
        self.id = ident
        self.p = p
        self.q = q
        self.g = g
        self.element_size = (p.bit_length() + 7) // 8
        self.scalar_size = (q.bit_length() + 7) // 8

    def identity(self) -> int:
        return 1

    def mul(self, a: int, b: int) -> int:
        return a * b % self.p

    def exp(self, a: int, k: int) -> int:
        return pow(a, k % self.q, self.p)

    def inverse(self, a: int) -> int:
        return pow(a, -1, self.p)

    def encode(self, a: int) -> bytes:
        return a.to_bytes(self.element_size, "big")

    def decode(self, data: bytes) -> int:
        if len(data) != self.element_size:
            raise ValueError("bad element length")
        a = int.from_bytes(data, "big")
        if not 1 <= a < self.p or pow(a, self.q, self.p) != 1:
            raise ValueError("not a subgroup element")
        return a

    def elements(self):
        """All subgroup elements, in exponent order g^0 .. g^(q-1)."""
        acc = 1
        for _ in range(self.q):
            yield acc
            acc = acc * self.g % self.p


# secp256k1 field and curve constants
_P = 2**256 - 2**32 - 977
_N = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141
_G = (
    0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798,
    0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8,
)
_JINF = (0, 1, 0)


def _jdouble(p):
    X, Y, Z = p
    if Z == 0 or Y == 0:
        return _JINF
    YY = Y * Y % _P
    S = 4 * X * YY % _P
    M = 3 * X * X % _P
    X3 = (M * M - 2 * S) % _P
    Y3 = (M * (S - X3) - 8 * YY * YY) % _P
    return (X3, Y3, 2 * Y * Z % _P)


def _jadd_affine(p, a):
    X1, Y1, Z1 = p
    if a is None:
        return p
    x2, y2 = a
    if Z1 == 0:
        return (x2, y2, 1)
    Z1Z1 = Z1 * Z1 % _P
    H = (x2 * Z1Z1 - X1) % _P
    r = (y2 * Z1 * Z1Z1 - Y1) % _P
    if H == 0:
        return _jdouble(p) if r == 0 else _JINF
    HH = H * H % _P
    HHH = H * HH % _P
    V = X1 * HH % _P
    X3 = (r * r - HHH - 2 * V) % _P
    Y3 = (r * (V - X3) - Y1 * HHH) % _P
    return (X3, Y3, Z1 * H % _P)


def _to_affine(p) -> Point:
    X, Y, Z = p
    if Z == 0:
        return None
    zi = pow(Z, -1, _P)
    zi2 = zi * zi % _P
    return (X * zi2 % _P, Y * zi2 * zi % _P)


class Secp256k1(Ciphersuite):
    """secp256k1; elements are affine (x, y) tuples, None is the identity."""

    id = "curve"
    q = _N
    g = _G
    element_size = 33
    scalar_size = 32

    def __init__(self):
        self._table = None

    def identity(self) -> Point:
        return None

    def mul(self, a: Point, b: Point) -> Point:
        if a is None:
            return b
        return _to_affine(_jadd_affine((a[0], a[1], 1), b))

    def exp(self, a: Point, k: int) -> Point:
        k %= _N
        if a is None or k == 0:
            return None
        # 4-bit fixed window
        window = [None, a]
        acc = (a[0], a[1], 1)
        for _ in range(14):
            acc = _jadd_affine(acc, a)
            window.append(_to_affine(acc))
        r = _JINF
        for shift in range((k.bit_length() + 3) // 4 * 4 - 4, -1, -4):
            r = _jdouble(_jdouble(_jdouble(_jdouble(r))))
            nib = (k >> shift) & 15
            if nib:
                r = _jadd_affine(r, window[nib])
        return _to_affine(r)

    def gexp(self, k: int) -> Point:
        k %= _N
        if self._table is None:
            self._table = self._build_table()
        r = _JINF
        i = 0
        while k:
            nib = k & 15
            if nib:
                r = _jadd_affine(r, self._table[i][nib])
            k >>= 4
            i += 1
        return _to_affine(r)

    def _build_table(self):
        table = []
        base = _G
        for _ in range(64):
            row = [None, base]
            acc = (base[0], base[1], 1)
            for _ in range(14):
                acc = _jadd_affine(acc, base)
                row.append(_to_affine(acc))
            table.append(row)
            base = _to_affine(_jadd_affine(acc, base))
        return table

    def inverse(self, a: Point) -> Point:
        return None if a is None else (a[0], (-a[1]) % _P)

    def encode(self, a: Point) -> bytes:
        if a is None:
            return bytes(33)
        return bytes([2 + (a[1] & 1)]) + a[0].to_bytes(32, "big")

    def decode(self, data: bytes) -> Point:
        if len(data) != 33:
            raise ValueError("bad point length")
        if data == bytes(33):
            return None
        if data[0] not in (2, 3):
            raise ValueError("bad point prefix")
        x = int.from_bytes(data[1:], "big")
        if x >= _P:
            raise ValueError("x out of range")
        y2 = (pow(x, 3, _P) + 7) % _P
        y = pow(y2, (_P + 1) // 4, _P)
        if y * y % _P != y2:
            raise ValueError("point not on curve")
        if (y & 1) != data[0] - 2:
            y = _P - y
        return (x, y)


TINY = SchnorrGroup("tiny", p=10091, q=1009, g=1024)
SECP256K1 = Secp256k1()

CIPHERSUITES = {TINY.id: TINY, SECP256K1.id: SECP256K1}


def get_ciphersuite(name: str) -> Ciphersuite:
    try:
        return CIPHERSUITES[name]
    except KeyError:
        raise ValueError(f"unknown ciphersuite {name!r}") from None


def hash_to_scalar_h1(suite: Ciphersuite, signer_index: int, message: bytes, commitment_list: bytes) -> int:
    """Binding value rho_l = H1(l, m, L); L given in its canonical encoding."""
    data = signer_index.to_bytes(4, "big") + lp(message) + commitment_list
    return suite.hash_to_scalar("H1", data)


def hash_to_scalar_h2(suite: Ciphersuite, R: GroupElement, Y: GroupElement, message: bytes) -> int:
    """Challenge c = H2(R, Y, m)."""
    return suite.hash_to_scalar("H2", suite.encode(R) + suite.encode(Y) + message)


class SchnorrSignature(NamedTuple):
    R: GroupElement
    z: int


def encode_signature(suite: Ciphersuite, sig: SchnorrSignature) -> bytes:
    return suite.encode(sig.R) + suite.encode_scalar(sig.z)


def signature_size(suite: Ciphersuite) -> int:
    return suite.element_size + suite.scalar_size


def decode_signature(suite: Ciphersuite, data: bytes) -> SchnorrSignature:
    if len(data) != signature_size(suite):
        raise ValueError("bad signature length")
    R = suite.decode(data[: suite.element_size])
    return SchnorrSignature(R, suite.decode_scalar(data[suite.element_size :]))


def schnorr_verify(suite: Ciphersuite, public_key: GroupElement, message: bytes, sig) -> bool:
    """True iff g^z == R * Y^c.  ``sig`` may be a SchnorrSignature or its encoding."""
    try:
        if isinstance(sig, (bytes, bytearray)):
            sig = decode_signature(suite, bytes(sig))
        R, z = sig
        if not (suite.is_element(R) and suite.is_element(public_key)) or not 0 <= z < suite.q:
            return False
        c = hash_to_scalar_h2(suite, R, public_key, message)
    except (ValueError, TypeError):
        return False
    return suite.gexp(z) == suite.mul(R, suite.exp(public_key, c))


def schnorr_sign(suite: Ciphersuite, secret: int, message: bytes, public_key: GroupElement = None) -> SchnorrSignature:
    """Single-signer Schnorr signature with a deterministic nonce."""
    if public_key is None:
        public_key = suite.gexp(secret)
    k = suite.hash_to_scalar("nonce", suite.encode_scalar(secret) + message)
    R = suite.gexp(k)
    c = hash_to_scalar_h2(suite, R, public_key, message)
    return SchnorrSignature(R, (k + c * secret) % suite.q)


def keygen(suite: Ciphersuite, rng: random.Random) -> Tuple[int, GroupElement]:
    x = suite.random_scalar(rng)
    return x, suite.gexp(x)
