"""Deterministic discrete-event network.

Events pop in ``(delivery_time, seq)`` order where ``seq`` is a monotone
counter, so two runs with the same seed and inputs produce the same event
sequence.  Links are FIFO: a message never overtakes an earlier one on the
same (src, dst) link.  Messages a node sends to itself are delivered locally
at the current time and never counted as network traffic.
"""

from __future__ import annotations

import heapq
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Set, Tuple

from ..messages import payment_ids

TRACE_FULL = "full"
TRACE_SETTLES = "settles"


@dataclass
class LatencyModel:
    """One-way latency in simulated ms.

    Normal mode draws uniformly from ``mean * [1 - jitter, 1 + jitter]``; the
    default 10 ms one way gives the 20 ms round trip used as the baseline.
    Adversarial mode draws from ``[0, adversarial_max_ms]`` so any cross-link
    reordering is possible while per-link FIFO still holds.
    """

    mean_ms: float = 10.0
    jitter: float = 0.5
    adversarial: bool = False
    adversarial_max_ms: float = 200.0

    def draw(self, rng: random.Random) -> float:
        if self.adversarial:
            return rng.random() * self.adversarial_max_ms
        return self.mean_ms * (1.0 - self.jitter + 2.0 * self.jitter * rng.random())


@dataclass
class FaultPlan:
    crashes: Dict[int, float] = field(default_factory=dict)
    delays: Dict[int, Tuple[float, float]] = field(default_factory=dict)  # replica -> (from_ms, +ms)
    byzantine_replicas: Dict[int, Tuple[str, ...]] = field(default_factory=dict)
    byzantine_clients: Dict[int, str] = field(default_factory=dict)
    beyond_f: bool = False

    def check(self, topology) -> None:
        if self.beyond_f:
            return
        for i, members in enumerate(topology.shards):
            bad = {r for r in self.byzantine_replicas if r in members}
            bad |= {r for r in self.crashes if r in members}
            if len(bad) > topology.f[i]:
                raise ValueError(f"fault plan exceeds f={topology.f[i]} in shard {i}: {sorted(bad)}")

    def crashed(self, node, t: float) -> bool:
        ct = self.crashes.get(node)
        return ct is not None and t >= ct

    def extra_delay(self, node, t: float) -> float:
        d = self.delays.get(node)
        if d is None or t < d[0]:
            return 0.0
        return d[1]

    @classmethod
    def from_dict(cls, d: dict) -> "FaultPlan":
        def keyed(m):
            return {int(k): v for k, v in (m or {}).items()}

        byz = {int(k): tuple(v) if isinstance(v, (list, tuple)) else (v,)
               for k, v in (d.get("byzantine_replicas") or {}).items()}
        delays = {int(k): (float(v[0]), float(v[1])) for k, v in (d.get("delays") or {}).items()}
        return cls(crashes={k: float(v) for k, v in keyed(d.get("crashes")).items()},
                   delays=delays, byzantine_replicas=byz,
                   byzantine_clients={k: str(v) for k, v in keyed(d.get("byzantine_clients")).items()},
                   beyond_f=bool(d.get("beyond_f", False)))

    def to_dict(self) -> dict:
        return {
            "crashes": {str(k): v for k, v in sorted(self.crashes.items())},
            "delays": {str(k): list(v) for k, v in sorted(self.delays.items())},
            "byzantine_replicas": {str(k): list(v) for k, v in sorted(self.byzantine_replicas.items())},
            "byzantine_clients": {str(k): v for k, v in sorted(self.byzantine_clients.items())},
            "beyond_f": self.beyond_f,
        }


class Network:
    def __init__(self, seed: int, latency: Optional[LatencyModel] = None,
                 faults: Optional[FaultPlan] = None, trace_level: str = TRACE_FULL) -> None:
        self.rng = random.Random(f"net:{seed}")
        self.latency = latency or LatencyModel()
        self.faults = faults or FaultPlan()
        self.trace_level = trace_level
        self.now = 0.0
        self._heap: List[tuple] = []
        self._seq = 0
        self._mid = 0
        self.nodes: Dict[Any, Any] = {}
        self._link_last: Dict[Tuple[Any, Any], float] = {}
        self.counters: Counter = Counter()
        self.dropped: Counter = Counter()
        self.records: List[dict] = []
        self.current: Optional[int] = None
        self.replicas: Set[int] = set()

    def add_node(self, addr, node) -> None:
        self.nodes[addr] = node
        if isinstance(addr, int):
            self.replicas.add(addr)

    def _push(self, t: float, entry: tuple) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq) + entry)

    def send(self, src, dst, msg, auth: Optional[bytes] = None) -> None:
        if src == dst:
            self._push(self.now, (0, dst, src, msg, ("L", self.current), auth))
            return
        self._mid += 1
        mid = self._mid
        lat = self.latency.draw(self.rng)
        faults = self.faults
        if faults.delays:
            lat += max(faults.extra_delay(src, self.now), faults.extra_delay(dst, self.now))
        t = self.now + lat
        link = (src, dst)
        last = self._link_last.get(link)
        if last is not None and last > t:
            t = last
        self._link_last[link] = t
        kind = msg.kind
        self.counters[kind] += 1
        if self.trace_level == TRACE_FULL:
            self.records.append({
                "t": round(self.now, 6), "ev": "send", "kind": kind, "src": src, "dst": dst,
                "mid": mid, "cause": self.current, "view": getattr(msg, "view", None),
                "pids": payment_ids(msg),
            })
        self._push(t, (0, dst, src, msg, mid, auth))

    def at(self, t: float, owner, fn: Callable, *args) -> None:
        self._push(max(t, self.now), (1, owner, fn, args, None, None))

    def record(self, rec: dict) -> None:
        self.records.append(rec)

    def run(self, horizon: float, until: Optional[Callable[[], bool]] = None) -> bool:
        """Process events up to ``horizon``; returns True if the queue drained."""
        heap = self._heap
        faults = self.faults
        full = self.trace_level == TRACE_FULL
        nodes = self.nodes
        has_crashes = bool(faults.crashes)
        while heap:
            if heap[0][0] > horizon:
                self.now = horizon
                return False
            t, _, typ, a, b, c, mid, auth = heapq.heappop(heap)
            self.now = t
            if typ == 1:
                if has_crashes and faults.crashed(a, t):
                    continue
                self.current = None
                b(*c)
                continue
            dst, src, msg = a, b, c
            if has_crashes and (faults.crashed(dst, t) or faults.crashed(src, t)):
                self.dropped[msg.kind] += 1
                continue
            node = nodes.get(dst)
            if node is None:
                self.dropped[msg.kind] += 1
                continue
            if mid.__class__ is tuple:
                self.current = mid[1]
            else:
                if full:
                    self.records.append({"t": round(t, 6), "ev": "deliver", "kind": msg.kind,
                                         "src": src, "dst": dst, "mid": mid})
                self.current = mid
            node.receive(src, msg, auth)
            self.current = None
            if until is not None and until():
                return not heap
        return True

    def pending(self) -> int:
        return len(self._heap)
