"""Deterministic discrete-event network.

Time is simulated seconds.  Events are ordered by (time, sequence number)
so that a given seed always replays the same trace.  The network model
follows weak synchrony: before the global stabilization time (GST) links
may drop, duplicate or delay messages; afterwards every message between
live nodes arrives within ``DelayModel.bound``.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple


class EventBudgetExceeded(RuntimeError):
    pass


class TimerHandle:
    __slots__ = ("cancelled",)

    def __init__(self):
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class Simulator:
    def __init__(self, seed: int = 0):
        self.seed = seed
        self.now = 0.0
        self._queue: List[Tuple[float, int, TimerHandle, Callable, tuple]] = []
        self._seq = 0
        self.trace: List[dict] = []
        self.events_processed = 0
        self.blocks_seen: set = set()

    def rng(self, purpose: str) -> random.Random:
        """Independent deterministic RNG stream per purpose."""
        return random.Random(f"{self.seed}:{purpose}")

    def schedule_at(self, when: float, callback: Callable, *args) -> TimerHandle:
        handle = TimerHandle()
        heapq.heappush(self._queue, (max(when, self.now), self._seq, handle, callback, args))
        self._seq += 1
        return handle

    def schedule(self, delay: float, callback: Callable, *args) -> TimerHandle:
        return self.schedule_at(self.now + delay, callback, *args)

    def record(self, event: str, **fields) -> None:
        rec = {"t": round(self.now, 6), "event": event}
        rec.update(fields)
        self.trace.append(rec)

    def pending(self) -> int:
        return sum(1 for item in self._queue if not item[2].cancelled)

    def run_until(
        self,
        condition: Optional[Callable[[], bool]] = None,
        until: Optional[float] = None,
        max_events: int = 5_000_000,
    ) -> List[dict]:
        """Process events until ``condition()`` holds, time passes ``until``, or the queue drains."""
        budget = max_events
        while self._queue:
            if condition is not None and condition():
                break
            when, _, handle, callback, args = self._queue[0]
            if until is not None and when > until:
                self.now = until
                break
            heapq.heappop(self._queue)
            if handle.cancelled:
                continue
            self.now = when
            budget -= 1
            if budget < 0:
                raise EventBudgetExceeded(f"more than {max_events} events before t={when:.3f}")
            self.events_processed += 1
            callback(*args)
        else:
            if until is not None and self.now < until and not (condition is not None and condition()):
                self.now = until
        return self.trace


def trace_hash(trace: Sequence[dict]) -> str:
    h = hashlib.sha256()
    for rec in trace:
        h.update(json.dumps(rec, sort_keys=True, separators=(",", ":")).encode())
        h.update(b"\n")
    return h.hexdigest()


def write_trace(trace: Sequence[dict], path) -> None:
    with open(path, "w") as fh:
        for rec in trace:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def read_trace(path) -> List[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


@dataclass
class DelayModel:
    base: float = 0.05
    jitter: float = 0.02
    gst: float = 0.0
    drop_prob: float = 0.0
    dup_prob: float = 0.0
    pre_gst_extra: float = 0.0
    link_base: Dict[Tuple[str, str], float] = field(default_factory=dict)

    @property
    def bound(self) -> float:
        """Delay bound after stabilization (Delta)."""
        return max([self.base, *self.link_base.values()]) + self.jitter

    @classmethod
    def from_json(cls, data: dict) -> "DelayModel":
        data = dict(data)
        links = {tuple(k.split("->")): v for k, v in data.pop("link_base", {}).items()}
        return cls(link_base=links, **data)


@dataclass
class Partition:
    start: float
    end: float
    nodes: Tuple[str, ...] = ()
    mode: str = "drop"  # drop | duplicate | reorder

    def affects(self, t: float, src: str, dst: str) -> bool:
        if not self.start <= t < self.end:
            return False
        return not self.nodes or src in self.nodes or dst in self.nodes


class Node:
    """Anything addressable on the network."""

    address: str = ""
    crashed: bool = False

    def deliver(self, src: str, msg: Any) -> None:
        raise NotImplementedError


class Network:
    """Point-to-point links with delays, losses and partitions."""

    def __init__(self, sim: Simulator, delays: DelayModel, partitions: Sequence[Partition] = (), trace_messages: bool = True):
        self.sim = sim
        self.delays = delays
        self.partitions = list(partitions)
        self.nodes: Dict[str, Node] = {}
        self.rng = sim.rng("network")
        self.trace_messages = trace_messages

    def add(self, node: Node) -> None:
        self.nodes[node.address] = node

    def _delay(self, src: str, dst: str) -> float:
        base = self.delays.link_base.get((src, dst), self.delays.base)
        return base + self.rng.uniform(0.0, self.delays.jitter)

    def send(self, src: str, dst: str, msg: Any) -> List[float]:
        """Schedule delivery; returns the delivery times (empty if dropped)."""
        if dst not in self.nodes:
            raise KeyError(f"unknown destination {dst}")
        sender = self.nodes.get(src)
        if sender is not None and sender.crashed:
            return []
        now = self.sim.now
        delay = self._delay(src, dst)
        copies = 1
        lossy = now < self.delays.gst
        for part in self.partitions:
            if part.affects(now, src, dst):
                lossy = True
                if part.mode == "drop":
                    copies = 0
                elif part.mode == "duplicate":
                    copies = 2
                elif part.mode == "reorder":
                    delay += self.rng.uniform(0.0, part.end - now)
        if lossy and copies:
            if self.rng.random() < self.delays.drop_prob:
                copies = 0
            elif self.rng.random() < self.delays.dup_prob:
                copies = 2
            delay += self.rng.uniform(0.0, self.delays.pre_gst_extra)
        kind = type(msg).__name__
        if copies == 0:
            if self.trace_messages:
                self.sim.record("drop", src=src, dst=dst, kind=kind)
            return []
        times = []
        for c in range(copies):
            d = delay + c * self.rng.uniform(0.0, self.delays.jitter)
            self.sim.schedule(d, self._arrive, src, dst, msg, now)
            times.append(now + d)
        return times

    def _arrive(self, src: str, dst: str, msg: Any, sent: float) -> None:
        node = self.nodes[dst]
        if node.crashed:
            return
        if self.trace_messages:
            self.sim.record("msg", src=src, dst=dst, kind=type(msg).__name__, sent=round(sent, 6))
        node.deliver(src, msg)
