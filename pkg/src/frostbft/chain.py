"""Simplified Bitcoin-like blocks and a fork-free chain.

Differences from Bitcoin that matter here:

* the block solution lives in the coinbase but is replaced by an empty
  placeholder when computing the txid, so neither the Merkle root nor the
  block hash depend on it;
* the solution signs the block hash, which covers nBits and nNonce;
* grinding is trivial (target = max >> nBits, default nBits = 1);
* block timestamps are fixed to T0 + height * tau;
* any subsidy is accepted and coinbase maturity is zero;
* a block at an already-filled height is always rejected (no reorgs).

Serialization is length-prefixed and big-endian, not Bitcoin wire format.
"""

from __future__ import annotations

import hashlib
import json
from functools import cached_property
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

from .group import Ciphersuite, get_ciphersuite, lp, schnorr_verify, signature_size

ZERO_HASH = bytes(32)
MAX_TARGET = 2**256 - 1
COINBASE_MATURITY = 0

AGGREGATE_KEY = "aggregate-key"
MULTISIG = "concatenated-multisig"


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class Transaction:
    payload: bytes
    is_coinbase: bool = False
    subsidy: int = 0
    solution: Optional[bytes] = None

    def serialize(self, placeholder: bool = False) -> bytes:
        out = (b"\x01" if self.is_coinbase else b"\x00") + lp(self.payload)
        if self.is_coinbase:
            out += self.subsidy.to_bytes(8, "big")
            out += lp(b"" if placeholder else (self.solution or b""))
        return out

    @property
    def txid(self) -> bytes:
        return sha256(self.serialize(placeholder=True))

    @classmethod
    def deserialize(cls, data: bytes) -> Tuple["Transaction", int]:
        kind = data[0]
        n = int.from_bytes(data[1:5], "big")
        payload = data[5 : 5 + n]
        pos = 5 + n
        if kind == 0:
            return cls(payload), pos
        subsidy = int.from_bytes(data[pos : pos + 8], "big")
        m = int.from_bytes(data[pos + 8 : pos + 12], "big")
        solution = data[pos + 12 : pos + 12 + m]
        return cls(payload, True, subsidy, solution or None), pos + 12 + m


def make_coinbase(height: int, subsidy: int = 50, tag: bytes = b"") -> Transaction:
    return Transaction(b"height:%d" % height + tag, is_coinbase=True, subsidy=subsidy)


@dataclass(frozen=True)
class BlockHeader:
    prev_hash: bytes
    merkle_root: bytes
    timestamp: int
    nbits: int
    nnonce: int

    def serialize(self) -> bytes:
        return (
            self.prev_hash
            + self.merkle_root
            + self.timestamp.to_bytes(8, "big")
            + self.nbits.to_bytes(4, "big")
            + self.nnonce.to_bytes(8, "big")
        )

    @classmethod
    def deserialize(cls, data: bytes) -> "BlockHeader":
        return cls(
            data[:32],
            data[32:64],
            int.from_bytes(data[64:72], "big"),
            int.from_bytes(data[72:76], "big"),
            int.from_bytes(data[76:84], "big"),
        )


HEADER_SIZE = 84


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: Tuple[Transaction, ...]
    height: int

    @cached_property
    def hash(self) -> bytes:
        return sha256(self.header.serialize())

    @property
    def coinbase(self) -> Transaction:
        return self.transactions[0]

    @property
    def solution(self) -> Optional[bytes]:
        return self.transactions[0].solution if self.transactions else None

    def serialize(self) -> bytes:
        body = b"".join(lp(tx.serialize()) for tx in self.transactions)
        return self.height.to_bytes(8, "big") + self.header.serialize() + len(self.transactions).to_bytes(4, "big") + body

    @classmethod
    def deserialize(cls, data: bytes) -> "Block":
        height = int.from_bytes(data[:8], "big")
        header = BlockHeader.deserialize(data[8 : 8 + HEADER_SIZE])
        pos = 8 + HEADER_SIZE
        count = int.from_bytes(data[pos : pos + 4], "big")
        pos += 4
        txs = []
        for _ in range(count):
            n = int.from_bytes(data[pos : pos + 4], "big")
            tx, _ = Transaction.deserialize(data[pos + 4 : pos + 4 + n])
            txs.append(tx)
            pos += 4 + n
        if pos != len(data):
            raise ValueError("trailing bytes in block")
        return cls(header, tuple(txs), height)


def merkle_root_excluding_solution(transactions: Sequence[Transaction]) -> bytes:
    """Bitcoin-style binary Merkle root over placeholder txids."""
    if not transactions:
        raise ValueError("cannot compute the Merkle root of an empty block")
    level = [tx.txid for tx in transactions]
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [sha256(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


def target_from_nbits(nbits: int) -> int:
    return MAX_TARGET >> nbits


def meets_target(block: Block) -> bool:
    return int.from_bytes(block.hash, "big") < target_from_nbits(block.header.nbits)


def grind(block: Block, start: int = 0) -> Block:
    """Smallest nNonce >= start whose block hash is below the target."""
    nonce = start
    while True:
        candidate = replace(block, header=replace(block.header, nnonce=nonce))
        if meets_target(candidate):
            return candidate
        nonce += 1


def attach_solution(block: Block, solution: bytes) -> Block:
    if not solution:
        raise ValueError("empty block solution")
    if not meets_target(block):
        raise ValueError("block has not been ground")
    coinbase = replace(block.coinbase, solution=bytes(solution))
    signed = replace(block, transactions=(coinbase,) + block.transactions[1:])
    assert signed.hash == block.hash
    assert merkle_root_excluding_solution(signed.transactions) == block.header.merkle_root
    return signed


def strip_solution(block: Block) -> Block:
    coinbase = replace(block.coinbase, solution=None)
    return replace(block, transactions=(coinbase,) + block.transactions[1:])


# --- block challenge ------------------------------------------------------


@dataclass(frozen=True)
class BlockChallenge:
    mode: str
    suite: Ciphersuite
    aggregate_key: object = None
    signer_keys: Dict[int, object] = field(default_factory=dict)
    required: int = 0

    def is_satisfied(self, block_hash: bytes, solution: Optional[bytes]) -> bool:
        if not solution:
            return False
        if self.mode == AGGREGATE_KEY:
            return schnorr_verify(self.suite, self.aggregate_key, block_hash, solution)
        if self.mode == MULTISIG:
            try:
                entries = decode_multisig_solution(self.suite, solution)
            except ValueError:
                return False
            signers = [i for i, _ in entries]
            if len(set(signers)) != len(signers) or len(signers) < self.required:
                return False
            return all(
                i in self.signer_keys and schnorr_verify(self.suite, self.signer_keys[i], block_hash, sig)
                for i, sig in entries
            )
        raise ValueError(f"unknown challenge mode {self.mode!r}")

    def to_json(self) -> dict:
        enc = lambda e: self.suite.encode(e).hex()
        if self.mode == AGGREGATE_KEY:
            return {"mode": self.mode, "aggregate_key": enc(self.aggregate_key)}
        return {
            "mode": self.mode,
            "signer_keys": {str(i): enc(k) for i, k in sorted(self.signer_keys.items())},
            "required": self.required,
        }

    @classmethod
    def from_json(cls, data: dict, suite: Ciphersuite) -> "BlockChallenge":
        dec = lambda h: suite.decode(bytes.fromhex(h))
        if data["mode"] == AGGREGATE_KEY:
            return cls(AGGREGATE_KEY, suite, aggregate_key=dec(data["aggregate_key"]))
        if data["mode"] == MULTISIG:
            keys = {int(i): dec(k) for i, k in data["signer_keys"].items()}
            return cls(MULTISIG, suite, signer_keys=keys, required=int(data["required"]))
        raise ValueError(f"unknown challenge mode {data['mode']!r}")


MULTISIG_INDEX_SIZE = 2


def encode_multisig_solution(suite: Ciphersuite, entries: Iterable[Tuple[int, bytes]]) -> bytes:
    return b"".join(i.to_bytes(MULTISIG_INDEX_SIZE, "big") + sig for i, sig in sorted(entries))


def decode_multisig_solution(suite: Ciphersuite, data: bytes) -> List[Tuple[int, bytes]]:
    width = MULTISIG_INDEX_SIZE + signature_size(suite)
    if not data or len(data) % width:
        raise ValueError("bad multisig solution length")
    return [
        (int.from_bytes(data[p : p + MULTISIG_INDEX_SIZE], "big"), data[p + MULTISIG_INDEX_SIZE : p + width])
        for p in range(0, len(data), width)
    ]


# --- genesis and chain ----------------------------------------------------


@dataclass(frozen=True)
class Genesis:
    challenge: BlockChallenge
    t0: int = 0
    tau: int = 60
    nbits: int = 1
    max_future: float = 30.0
    block_budget: int = 1_000_000

    @property
    def suite(self) -> Ciphersuite:
        return self.challenge.suite

    def nominal_time(self, height: int) -> int:
        return self.t0 + height * self.tau

    def block(self) -> Block:
        coinbase = Transaction(b"genesis", is_coinbase=True, subsidy=0)
        header = BlockHeader(ZERO_HASH, merkle_root_excluding_solution([coinbase]), self.t0, self.nbits, 0)
        return Block(header, (coinbase,), 0)

    def to_json(self) -> dict:
        return {
            "ciphersuite": self.suite.id,
            "challenge": self.challenge.to_json(),
            "t0": self.t0,
            "tau": self.tau,
            "nbits": self.nbits,
            "max_future": self.max_future,
            "block_budget": self.block_budget,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Genesis":
        suite = get_ciphersuite(data["ciphersuite"])
        return cls(
            BlockChallenge.from_json(data["challenge"], suite),
            t0=data.get("t0", 0),
            tau=data.get("tau", 60),
            nbits=data.get("nbits", 1),
            max_future=data.get("max_future", 30.0),
            block_budget=data.get("block_budget", 1_000_000),
        )

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "Genesis":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


class Chain:
    """Append-only sequence of blocks rooted at a fixed genesis."""

    def __init__(self, genesis: Genesis):
        self.genesis = genesis
        self.blocks: List[Block] = [genesis.block()]
        self._index = {self.blocks[0].hash: 0}

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def tip_hash(self) -> bytes:
        return self.blocks[-1].hash

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    def __contains__(self, block_hash: bytes) -> bool:
        return block_hash in self._index

    def __len__(self) -> int:
        return len(self.blocks)

    def append(self, block: Block) -> None:
        if block.header.prev_hash != self.tip_hash or block.height != self.height + 1:
            raise ValueError("block does not extend the tip")
        self._index[block.hash] = block.height
        self.blocks.append(block)

    def hashes(self) -> List[bytes]:
        return [b.hash for b in self.blocks]


class Verdict(NamedTuple):
    reason: Optional[str] = None

    @property
    def accepted(self) -> bool:
        return self.reason is None

    def __bool__(self) -> bool:
        return self.reason is None


ACCEPT = Verdict()


def check_structure(block: Block, genesis: Genesis) -> Verdict:
    """Context-free rules: coinbase layout, Merkle root, timestamp, grind target."""
    txs = block.transactions
    if not txs or not txs[0].is_coinbase or any(tx.is_coinbase for tx in txs[1:]):
        return Verdict("bad-coinbase")
    if any(tx.solution is not None for tx in txs[1:]):
        return Verdict("bad-coinbase")
    if len({tx.txid for tx in txs}) != len(txs):
        return Verdict("bad-txns-duplicate")
    if sum(len(tx.payload) for tx in txs[1:]) > genesis.block_budget:
        return Verdict("bad-blk-length")
    if merkle_root_excluding_solution(txs) != block.header.merkle_root:
        return Verdict("bad-merkle")
    if block.header.timestamp != genesis.nominal_time(block.height):
        return Verdict("bad-timestamp")
    if block.header.nbits != genesis.nbits or not meets_target(block):
        return Verdict("bad-pow")
    return ACCEPT


def validate_block(
    block: Block,
    chain: Chain,
    challenge: Optional[BlockChallenge] = None,
    now: Optional[float] = None,
    template: bool = False,
) -> Verdict:
    """Check a block (or, with ``template=True``, an unsigned template) against a chain.

    ``now`` is the validator's local clock; when given, blocks whose nominal
    timestamp lies more than ``genesis.max_future`` ahead are rejected.
    """
    genesis = chain.genesis
    challenge = challenge or genesis.challenge
    if block.hash in chain:
        return Verdict("duplicate")
    if block.height <= chain.height:
        return Verdict("height-taken")
    if block.height != chain.height + 1:
        return Verdict("orphan")
    if block.header.prev_hash != chain.tip_hash:
        return Verdict("bad-prevblk")
    verdict = check_structure(block, genesis)
    if not verdict:
        return verdict
    if now is not None and block.header.timestamp > now + genesis.max_future:
        return Verdict("time-too-new")
    if template:
        return ACCEPT if block.solution is None else Verdict("template-has-solution")
    if not challenge.is_satisfied(block.hash, block.solution):
        return Verdict("bad-solution")
    return ACCEPT


def is_mature(coinbase_height: int, spend_height: int) -> bool:
    return spend_height - coinbase_height >= COINBASE_MATURITY


class StaleTemplateError(ValueError):
    pass


@dataclass
class Mempool:
    """FIFO transaction pool."""

    transactions: List[Transaction] = field(default_factory=list)

    def add(self, tx: Transaction) -> bool:
        if any(t.txid == tx.txid for t in self.transactions):
            return False
        self.transactions.append(tx)
        return True

    def remove_confirmed(self, block: Block) -> None:
        confirmed = {tx.txid for tx in block.transactions}
        self.transactions = [t for t in self.transactions if t.txid not in confirmed]

    def __len__(self) -> int:
        return len(self.transactions)


def build_template(
    mempool: Mempool,
    chain: Chain,
    height: int,
    subsidy: int = 50,
    tag: bytes = b"",
    grind_block: bool = True,
) -> Block:
    """Assemble (and by default grind) an unsigned block for ``height``.

    Transactions are taken in arrival order until the payload budget is hit.
    """
    if height != chain.height + 1:
        raise StaleTemplateError(f"template for height {height} on chain of height {chain.height}")
    genesis = chain.genesis
    selected, used = [], 0
    for tx in mempool.transactions:
        if used + len(tx.payload) > genesis.block_budget:
            break
        selected.append(tx)
        used += len(tx.payload)
    txs = (make_coinbase(height, subsidy, tag),) + tuple(selected)
    header = BlockHeader(
        chain.tip_hash,
        merkle_root_excluding_solution(txs),
        genesis.nominal_time(height),
        genesis.nbits,
        0,
    )
    block = Block(header, txs, height)
    return grind(block) if grind_block else block


def write_chain_dump(chain: Chain, path) -> None:
    with open(path, "w") as fh:
        for block in chain.blocks:
            fh.write(block.serialize().hex() + "\n")


def read_chain_dump(path) -> List[Block]:
    with open(path) as fh:
        return [Block.deserialize(bytes.fromhex(line.strip())) for line in fh if line.strip()]
