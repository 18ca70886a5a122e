"""Participant network: block and transaction gossip with local validation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Set, Tuple

from .chain import Block, Chain, Genesis, Mempool, Transaction, validate_block
from .simnet import Network, Node, Simulator


@dataclass(frozen=True)
class BlockMsg:
    block: Block


@dataclass(frozen=True)
class TxMsg:
    tx: Transaction


@dataclass(frozen=True)
class GetBlocks:
    from_height: int


class Participant(Node):
    """A full node: validates blocks against its own chain and local clock.

    Only blocks that validate are adopted and relayed.  A block that arrives
    ahead of the local tip triggers a catch-up request to its sender.
    """

    def __init__(self, address: str, genesis: Genesis, sim: Simulator, net: Network, skew: float = 0.0, correct: bool = True):
        self.address = address
        self.genesis = genesis
        self.chain = Chain(genesis)
        self.mempool = Mempool()
        self.sim = sim
        self.net = net
        self.skew = skew
        self.correct = correct
        self.peers: List[str] = []
        self.crashed = False
        self.listeners: List[Callable[[Block], None]] = []
        self.block_filter: Optional[Callable[[Block], Optional[Block]]] = None
        self._rejected: Set[bytes] = set()
        self._catching_up: Dict[str, float] = {}
        self.last_relay: List[Tuple[str, float]] = []

    def local_time(self) -> float:
        return self.sim.now + self.skew

    def deliver(self, src: str, msg) -> None:
        if isinstance(msg, BlockMsg):
            self.receive_block(msg.block, src)
        elif isinstance(msg, TxMsg):
            self.receive_tx(msg.tx, src)
        elif isinstance(msg, GetBlocks):
            for block in self.chain.blocks[max(msg.from_height, 1):]:
                self.net.send(self.address, src, BlockMsg(block))

    def receive_tx(self, tx: Transaction, src: Optional[str] = None) -> None:
        if self.mempool.add(tx):
            for peer in self.peers:
                if peer != src:
                    self.net.send(self.address, peer, TxMsg(tx))

    def receive_block(self, block: Block, src: Optional[str] = None) -> bool:
        """Validate and, if valid, adopt and relay.  Returns True on adoption."""
        h = block.hash
        if h in self.chain or h in self._rejected:
            return False
        verdict = validate_block(block, self.chain, now=self.local_time())
        if verdict.reason == "orphan":
            if src is not None and self._catching_up.get(src, -1.0) < self.sim.now:
                self._catching_up[src] = self.sim.now + 1.0
                self.net.send(self.address, src, GetBlocks(self.chain.height + 1))
            return False
        if not verdict:
            if verdict.reason != "time-too-new":
                self._rejected.add(h)
            self._record_block(block)
            self.sim.record("reject", node=self.address, height=block.height, hash=h.hex(), reason=verdict.reason, src=src)
            return False
        self.chain.append(block)
        self.mempool.remove_confirmed(block)
        self._record_block(block)
        self.sim.record(
            "adopt",
            node=self.address,
            height=block.height,
            hash=h.hex(),
            timestamp=block.header.timestamp,
            local=round(self.local_time(), 6),
            src=src,
        )
        self.last_relay = self.relay(block, exclude=src)
        for listener in self.listeners:
            listener(block)
        return True

    def relay(self, block: Block, exclude: Optional[str] = None) -> List[Tuple[str, float]]:
        out = block if self.block_filter is None else self.block_filter(block)
        if out is None:
            return []
        schedule = []
        for peer in self.peers:
            if peer != exclude:
                for t in self.net.send(self.address, peer, BlockMsg(out)):
                    schedule.append((peer, t))
        return schedule

    def _record_block(self, block: Block) -> None:
        seen = self.sim.blocks_seen
        if block.hash not in seen:
            seen.add(block.hash)
            self.sim.record("block", hash=block.hash.hex(), height=block.height, data=block.serialize().hex())


def gossip_block(origin: Participant, block: Block) -> List[Tuple[str, float]]:
    """Validate ``block`` at ``origin`` and push it to its peers.

    Returns the first-hop delivery schedule as (peer, time) pairs; empty when
    the origin rejects the block, since invalid blocks are never relayed.
    """
    if block.hash in origin.chain:
        return origin.relay(block)
    if not origin.receive_block(block):
        return []
    return origin.last_relay
