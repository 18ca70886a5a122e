"""Scripted Byzantine miners.

A behavior sits between a replica and the network: every outgoing message
passes through ``outgoing`` and may be dropped, altered (and re-signed with
the miner's own key) or multiplied.  ``on_finalize`` intercepts the signed
block a replica hands to its participant node, and ``setup`` may schedule
periodic actions.  Behaviors cannot forge other miners' authenticators.
"""

from __future__ import annotations

import dataclasses
import hashlib
from typing import Dict, List, Optional, Type

from .chain import (
    Block,
    BlockHeader,
    build_template,
    encode_multisig_solution,
    grind,
    make_coinbase,
    merkle_root_excluding_solution,
    StaleTemplateError,
    strip_solution,
)
from .group import decode_signature, encode_signature, schnorr_sign, SchnorrSignature
from .pbft import Commit, Prepare, PrePrepare, SignShareMsg


class Behavior:
    name = "honest"

    def __init__(self, **params):
        self.params = params

    def setup(self, node) -> None:
        pass

    def outgoing(self, node, dst: int, msg) -> List:
        return [msg]

    def on_finalize(self, node, block: Block) -> Optional[Block]:
        return block


class Mute(Behavior):
    """Takes part in ordering but never contributes signature material."""

    name = "mute"

    def outgoing(self, node, dst, msg):
        if isinstance(msg, SignShareMsg):
            return []
        if isinstance(msg, Commit) and node.replica.mode.name != "fbft5":
            return []
        return [msg]


class Silent(Behavior):
    """Sends nothing at all; with ``as_primary_only`` only while it leads the view."""

    name = "silent"

    def outgoing(self, node, dst, msg):
        if self.params.get("as_primary_only") and not node.replica.is_primary:
            return [msg]
        return []


class Equivocate(Behavior):
    """As primary, proposes a different valid template to every backup."""

    name = "equivocate"

    def __init__(self, **params):
        super().__init__(**params)
        self._variants: Dict[tuple, PrePrepare] = {}

    def outgoing(self, node, dst, msg):
        r = node.replica
        if isinstance(msg, PrePrepare):
            key = (msg.view, msg.height, dst)
            if key not in self._variants:
                try:
                    block = build_template(node.mempool, node.chain, msg.height, tag=b"equivocate-%d" % dst)
                except StaleTemplateError:
                    return [msg]
                self._variants[key] = r.sign(dataclasses.replace(msg, block=block, auth=b""))
            return [self._variants[key]]
        if isinstance(msg, Prepare) and dst % 2:
            fake = hashlib.sha256(b"equivocate" + msg.digest).digest()
            return [r.sign(dataclasses.replace(msg, digest=fake, auth=b""))]
        return [msg]


class InvalidShare(Behavior):
    """Corrupts every signature contribution by adding one to z."""

    name = "invalid-share"

    def outgoing(self, node, dst, msg):
        r = node.replica
        suite = r.suite
        if isinstance(msg, Commit) and msg.payload is not None:
            if isinstance(msg.payload, bytes):
                sig = decode_signature(suite, msg.payload)
                bad = encode_signature(suite, SchnorrSignature(sig.R, (sig.z + 1) % suite.q))
            else:
                bad = tuple((j, (z + 1) % suite.q) for j, z in msg.payload)
            return [r.sign(dataclasses.replace(msg, payload=bad, auth=b""))]
        if isinstance(msg, SignShareMsg):
            return [r.sign(dataclasses.replace(msg, z=(msg.z + 1) % suite.q, auth=b""))]
        return [msg]


class PrematureBlock(Behavior):
    """Calmness attack: pushes blocks and proposals for future heights.

    Every ``period`` seconds (default tau/4) the miner sends its participant
    peers blocks for the next ``depth`` heights carrying whatever solution it
    can produce alone, and, when primary, pre-prepares those heights early.
    """

    name = "premature-block"

    def setup(self, node) -> None:
        tau = node.replica.config.tau
        self.period = float(self.params.get("period", tau / 4))
        self.depth = int(self.params.get("depth", 3))
        node.set_timer(self.period, self._tick, node)

    def _forge(self, node, height: int, prev: bytes, timestamp: int) -> Block:
        r = node.replica
        genesis = node.chain.genesis
        coinbase = make_coinbase(height, tag=b"premature")
        header = BlockHeader(prev, merkle_root_excluding_solution([coinbase]), timestamp, genesis.nbits, 0)
        block = grind(Block(header, (coinbase,), height))
        sig = schnorr_sign(r.suite, r.secret, block.hash, r.public_keys[r.id])
        if genesis.challenge.mode == "aggregate-key":
            solution = encode_signature(r.suite, sig)
        else:
            solution = encode_multisig_solution(r.suite, [(r.id + 1, encode_signature(r.suite, sig))])
        return dataclasses.replace(block, transactions=(dataclasses.replace(coinbase, solution=solution),))

    def _tick(self, node) -> None:
        r = node.replica
        chain = node.chain
        genesis = chain.genesis
        prev = chain.tip_hash
        for step in range(1, self.depth + 1):
            h = chain.height + step
            for ts in (genesis.nominal_time(h), genesis.nominal_time(h + self.depth)):
                block = self._forge(node, h, prev, ts)
                node.inject(block)
            prev = block.hash
        if r.is_primary and not r.in_view_change:
            for step in range(1, self.depth + 1):
                h = chain.height + step
                try:
                    block = build_template(node.mempool, chain, h) if step == 1 else self._forge(node, h, prev, genesis.nominal_time(h))
                except StaleTemplateError:
                    continue
                pp = r.sign(PrePrepare(r.view, h, block.header.timestamp, block if step == 1 else strip_solution(block), r.id))
                for dst in range(r.config.n):
                    if dst != r.id:
                        node.send_raw(dst, pp)
        node.set_timer(self.period, self._tick, node)


class NonceTweak(Behavior):
    """Fork attempt: re-grinds nNonce on signed blocks and pushes the result.

    The tweaked block keeps the original solution, which no longer matches
    the new header hash.  The honest block from this miner is withheld.
    """

    name = "nonce-tweak"

    def setup(self, node) -> None:
        node.participant.listeners.append(lambda block: self._tweak(node, block))

    def _tweak(self, node, block: Block) -> None:
        tweaked = grind(block, start=block.header.nnonce + 1)
        node.record("byz-inject", node=node.participant.address, height=block.height, hash=tweaked.hash.hex(), original=block.hash.hex())
        node.inject(tweaked)

    def on_finalize(self, node, block: Block) -> Optional[Block]:
        self._tweak(node, block)
        return None


BEHAVIORS: Dict[str, Type[Behavior]] = {
    cls.name: cls for cls in (Behavior, Mute, Silent, Equivocate, InvalidShare, PrematureBlock, NonceTweak)
}


def byzantine_behavior(script: str, **params) -> Behavior:
    try:
        return BEHAVIORS[script](**params)
    except KeyError:
        raise ValueError(f"unknown byzantine script {script!r}") from None
