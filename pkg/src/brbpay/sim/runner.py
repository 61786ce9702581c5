"""Run one simulation and collect its trace."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from ..crypto import EcdsaBackend, KeyRegistry, SimBackend
from ..engine import ECHO, SIG, VARIANTS
from ..model import ConfigError, PaymentId, SystemConfig, byzantine_quorum
from ..shard import ShardTopology
from .byzantine import ByzantineReplica
from .client import ClientNode, client_addr
from .network import TRACE_FULL, FaultPlan, LatencyModel, Network
from .oracle import ASCENDING, DESCENDING, compare_to_oracle, oracle_apply
from .replica import Replica


@dataclass
class RunConfig:
    system: SystemConfig
    variant: str = SIG
    max_batch: int = 256
    batch_delay_ms: float = 5.0
    latency: LatencyModel = field(default_factory=LatencyModel)
    trace_level: str = TRACE_FULL
    hold_unfunded: bool = True
    authenticate: bool = True
    check_invariants: bool = True
    crypto: str = "sim"
    joins: Tuple[Tuple[float, int], ...] = ()  # (time ms, new replica id), shard 0
    commit_targets: int = 1

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown broadcast variant {self.variant!r}")
        if self.variant == ECHO and len(self.system.shards) > 1:
            raise ConfigError("the echo variant settles by direct deposit and runs on one shard only")
        if self.crypto not in ("sim", "ecdsa"):
            raise ConfigError(f"unknown crypto backend {self.crypto!r}")
        taken = set(self.system.replicas)
        for _, j in self.joins:
            if j in taken:
                raise ConfigError(f"joining replica {j} already exists")
            taken.add(j)


@dataclass
class Trace:
    meta: dict
    records: List[dict]
    final_states: Dict[int, dict]
    counters: Dict[str, int]
    dropped: Dict[str, int]
    settles: List[tuple]  # (t, replica, spender, seq)
    submits: Dict[str, float]
    quorum_settle: Dict[str, float]
    rep_settle: Dict[str, float]
    violations: List[str]
    stalled: List[str]
    drained: bool
    end_time: float
    joins: Dict[int, dict] = field(default_factory=dict)
    evidence: Dict[int, int] = field(default_factory=dict)
    certificates: Dict[str, float] = field(default_factory=dict)
    shard_of_spender: Dict[int, int] = field(default_factory=dict)
    world: object = field(default=None, repr=False, compare=False)

    def network_messages(self) -> int:
        return sum(self.counters.values())

    def export_lines(self) -> List[str]:
        dump = lambda obj: json.dumps(obj, sort_keys=True, separators=(",", ":"))
        lines = [dump({"ev": "meta", **self.meta})]
        lines.extend(dump(r) for r in self.records)
        for t, r, s, n in self.settles:
            lines.append(dump({"t": round(t, 6), "ev": "settle", "replica": r, "paymentId": f"{s}:{n}"}))
        for r in sorted(self.final_states):
            lines.append(dump({"ev": "final", "replica": r, "state": self.final_states[r]}))
        lines.append(dump({"ev": "counters", "sent": self.counters, "dropped": self.dropped}))
        lines.append(dump({"ev": "summary", "violations": self.violations, "stalled": self.stalled,
                           "drained": self.drained, "end": round(self.end_time, 6), "joins": self.joins}))
        return lines

    def to_jsonl(self) -> str:
        return "\n".join(self.export_lines()) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode()).hexdigest()


class World:
    """Everything one run needs; replicas and clients call back into it."""

    def __init__(self, config: RunConfig, faults: FaultPlan, seed: int) -> None:
        config.validate()
        self.config = config
        self.seed = seed
        self.variant = config.variant
        self.max_batch = config.max_batch
        self.batch_delay_ms = config.batch_delay_ms
        self.authenticate = config.authenticate
        self.check_invariants = config.check_invariants
        self.hold_unfunded = config.hold_unfunded
        self.system = config.system
        self.topology = ShardTopology.from_config(config.system)
        self.initial_balances = dict(config.system.initial_balances)
        faults.check(self.topology)
        self.faults = faults
        self.net = Network(seed, config.latency, faults, config.trace_level)
        backend = EcdsaBackend() if config.crypto == "ecdsa" else SimBackend()
        joiners = [j for _, j in config.joins]
        self.registry = KeyRegistry.build(config.system.replicas + joiners, config.system.clients,
                                          seed=seed, backend=backend)
        self.byzantine_ids = set(faults.byzantine_replicas)
        self.collusion: Dict[tuple, tuple] = {}  # shared by Byzantine replicas
        self.replicas: Dict[int, Replica] = {}
        for shard, members in enumerate(config.system.shards):
            for r in members:
                self.replicas[r] = self._make_replica(r, shard, members)
        for t, j in config.joins:
            node = self._make_replica(j, 0, config.system.shards[0], joining=True)
            self.replicas[j] = node
            self.net.at(t, j, node.start_join)
        for r, node in self.replicas.items():
            self.net.add_node(r, node)
        self.clients: Dict[int, ClientNode] = {}
        for c in config.system.clients:
            node = ClientNode(c, self, faults.byzantine_clients.get(c))
            self.clients[c] = node
            self.net.add_node(client_addr(c), node)
        # observation state
        self.submits: Dict[PaymentId, float] = {}
        self.conflicts: Dict[PaymentId, set] = {}
        self.settled_by: Dict[PaymentId, Dict[int, bytes]] = {}
        self.settled_tuple: Dict[PaymentId, tuple] = {}
        self.settles: List[tuple] = []
        self.quorum_settle: Dict[PaymentId, float] = {}
        self.rep_settle: Dict[PaymentId, float] = {}
        self.certificates: Dict[tuple, float] = {}
        self.violations: List[str] = []
        self.views: Dict[int, List[tuple]] = {}

    def _make_replica(self, r: int, shard: int, members, joining: bool = False) -> Replica:
        scripts = self.faults.byzantine_replicas.get(r)
        if scripts:
            return ByzantineReplica(r, self, shard, members, scripts=scripts,
                                    commit_targets=self.config.commit_targets, joining=joining)
        return Replica(r, self, shard, members, joining=joining)

    def correct(self, r: int) -> bool:
        return r not in self.byzantine_ids and r not in self.faults.crashes

    # callbacks ------------------------------------------------------------------------

    def on_submit(self, p, t: float) -> None:
        self.submits.setdefault(p.id, t)

    def on_conflict(self, p, twin) -> None:
        self.conflicts.setdefault(p.id, set()).update({p.tuple(), twin.tuple()})

    def twin_beneficiary(self, spender: int, beneficiary: int) -> int:
        shard = self.topology.shard_of(spender)
        pool = [c for c in self.system.clients
                if c not in (spender, beneficiary) and self.topology.shard_of_client[c] == shard]
        if not pool:
            pool = [c for c in self.system.clients if c not in (spender, beneficiary)] or [spender]
        return pool[(spender + beneficiary) % len(pool)]

    def on_settle(self, replica: Replica, settled, t: float) -> None:
        if replica.byzantine:
            return
        rid = replica.id
        rep_of = self.topology.representative_of
        for p in settled:
            pid = p.id
            self.settles.append((t, rid, p.spender, p.seq))
            by = self.settled_by.get(pid)
            if by is None:
                by = self.settled_by[pid] = {}
                self.settled_tuple[pid] = p.tuple()
            elif p.tuple() != self.settled_tuple[pid] or any(d != p.digest for d in by.values()):
                self.violations.append(f"double-settle: {pid.spender}:{pid.seq} settled with different payloads")
            by[rid] = p.digest
            if rid == rep_of.get(p.spender):
                self.rep_settle.setdefault(pid, t)
            if pid not in self.quorum_settle and len(by) >= self._settle_quorum(replica):
                self.quorum_settle[pid] = t
            if self.variant == SIG:
                for cert in p.deps:
                    cpid = cert.pid
                    if self.settled_tuple.get(cpid) != tuple(cert.payment) and cpid in self.settled_tuple:
                        self.violations.append(f"certificate for {cpid} does not match the settled payment")
        if self.check_invariants and replica.engine.violations:
            for v in replica.engine.violations:
                self.violations.append(f"replica {rid}: {v}")
            replica.engine.violations.clear()

    def _settle_quorum(self, replica: Replica) -> int:
        v = replica.view
        return byzantine_quorum(len(v.members), v.f)

    def on_certificate(self, replica: Replica, cert) -> None:
        self.certificates.setdefault(tuple(cert.payment), self.net.now)

    def on_view_installed(self, replica: Replica, view) -> None:
        self.views.setdefault(view.vid, []).append((self.net.now, replica.id))

    # post-run checks ---------------------------------------------------------------------

    def correct_replicas(self) -> List[Replica]:
        return [self.replicas[r] for r in sorted(self.replicas) if self.correct(r) and self.replicas[r].installed]

    def global_conservation(self) -> List[str]:
        """Signature variant, on quiescence.

        For every client take the correct home-shard replica that settled most
        of its log.  Then the sum of those balances, plus certificates formed
        but not yet consumed, plus settled payments whose certificate never
        formed, equals the initial total.
        """
        if self.variant != SIG:
            return []
        out = []
        ref: Dict[int, Replica] = {}
        for r in self.correct_replicas():
            for c in r.engine.clients():
                cur = ref.get(c)
                if cur is None or r.engine.next_seq[c] > cur.engine.next_seq[c]:
                    ref[c] = r
        total_initial = sum(self.initial_balances.values())
        bal = sum(ref[c].engine.bal[c] for c in ref)
        settled = {}
        for c, r in ref.items():
            for p in r.engine.xlogs[c].entries:
                settled[p.id] = p.tuple()
        materialized = {}
        for c, r in ref.items():
            for p in r.engine.xlogs[c].entries:
                for cert in p.deps:
                    if cert.pid in r.engine.used_deps[c]:
                        materialized[cert.pid] = tuple(cert.payment)
        # certificates consumed by a settle that later aborted still count as materialized
        for c, r in ref.items():
            for pid in r.engine.used_deps[c]:
                if pid not in materialized:
                    materialized[pid] = self.settled_tuple.get(pid)
        formed = {PaymentId(t[0], t[1]): t for t in self.certificates}
        for pid, t in materialized.items():
            if pid not in formed:
                out.append(f"conservation: materialized {pid} without a formed certificate")
            if pid not in settled:
                out.append(f"conservation: materialized {pid} that never settled")
        for pid in formed:
            if pid not in settled:
                out.append(f"conservation: certificate for unsettled {pid}")
        unconsumed = sum(t[3] for pid, t in formed.items() if pid not in materialized)
        in_flight = sum(t[3] for pid, t in settled.items() if pid not in formed)
        if bal + unconsumed + in_flight != total_initial:
            out.append(f"conservation: {bal} + {unconsumed} + {in_flight} != {total_initial}")
        return out

    def state_disagreements(self) -> List[str]:
        """Correct installed replicas of one shard hold identical per-client state."""
        out = []
        first: Dict[int, Tuple[int, dict]] = {}
        for r in self.correct_replicas():
            st = r.engine.state()
            ref = first.setdefault(r.shard, (r.id, st))
            if st != ref[1]:
                diff = sorted(c for c in st if st[c] != ref[1].get(c))
                out.append(f"replica {r.id} differs from replica {ref[0]} on clients {diff}")
        return out

    def log_conflicts(self) -> List[str]:
        """Correct replicas' logs for a client are prefixes of one another."""
        out = []
        longest: Dict[int, Tuple[int, list]] = {}
        for r in self.correct_replicas():
            for c, log in r.engine.xlogs.items():
                cur = longest.get(c)
                if cur is None or len(log.entries) > len(cur[1]):
                    longest[c] = (r.id, log.entries)
        for r in self.correct_replicas():
            for c, log in r.engine.xlogs.items():
                ref_id, ref = longest[c]
                if ref[:len(log.entries)] != log.entries:
                    out.append(f"replica {r.id} log of {c} is not a prefix of replica {ref_id}'s")
        return out

    def oracle_mismatches(self, workload) -> List[str]:
        payments = workload.payments()
        conflicts = {pid: v for pid, v in self.conflicts.items()}
        a = oracle_apply(payments, self.initial_balances, ASCENDING, conflicts)
        b = oracle_apply(payments, self.initial_balances, DESCENDING, conflicts)
        out = []
        if (a.balances, a.next_seq, a.xlogs) != (b.balances, b.next_seq, b.xlogs):
            out.append("oracle: retry orders disagree")
        for r in self.correct_replicas():
            extra = None
            if self.variant == SIG:
                extra = {}
                for other in self.correct_replicas():
                    for c in other.desk.clients:
                        if other.engine.knows(c) and c in r.engine.bal:
                            extra[c] = other.desk.pending_credit(c)
            state = r.engine.state()
            for m in compare_to_oracle(r.id, state, a, extra):
                out.append(f"oracle: replica {m.replica} client {m.client} {m.field} "
                           f"expected {m.expected} got {m.actual}")
        return out


def run(config: RunConfig, fault_plan: Optional[FaultPlan], workload, seed: int,
        horizon_ms: float = 60_000.0) -> Trace:
    world = build(config, fault_plan, workload, seed)
    drained = world.net.run(horizon_ms)
    return collect(world, drained)


def build(config: RunConfig, fault_plan: Optional[FaultPlan], workload, seed: int) -> World:
    """A ready-to-run world with the workload scheduled; callers may add events."""
    world = World(config, fault_plan or FaultPlan(), seed)
    config.system.check_clients(workload.clients())
    for c, entries in workload.by_client().items():
        world.clients[c].schedule(entries)
    return world


def collect(world: World, drained: bool) -> Trace:
    net = world.net
    violations = list(world.violations)
    for r in world.correct_replicas():
        for v in r.engine.violations:
            violations.append(f"replica {r.id}: {v}")
    if drained:
        violations.extend(world.global_conservation())
    stalled = sorted(f"{pid.spender}:{pid.seq}" for pid in world.submits if pid not in world.quorum_settle)
    fmt = lambda pid: f"{pid.spender}:{pid.seq}"
    final = {}
    for r in sorted(world.replicas):
        node = world.replicas[r]
        if not world.correct(r) or not node.installed:
            continue
        final[r] = {"view": node.view.vid, "clients": {str(c): v for c, v in node.engine.state().items()},
                    "queue_depth": node.engine.queue_depth(), "settled": node.engine.settled_count}
    joins = {}
    for r in sorted(world.replicas):
        rc = world.replicas[r].reconfig
        if rc.join_started is not None:
            joins[r] = {"started": rc.join_started, "done": rc.join_done}
    cfg = world.config
    meta = {"seed": world.seed, "variant": cfg.variant, "shards": [list(s) for s in cfg.system.shards],
            "f": list(cfg.system.f), "faults": world.faults.to_dict(), "max_batch": cfg.max_batch,
            "batch_delay_ms": cfg.batch_delay_ms}
    return Trace(
        meta=meta,
        records=net.records,
        final_states=final,
        counters=dict(sorted(net.counters.items())),
        dropped=dict(sorted(net.dropped.items())),
        settles=world.settles,
        submits={fmt(p): t for p, t in world.submits.items()},
        quorum_settle={fmt(p): t for p, t in world.quorum_settle.items()},
        rep_settle={fmt(p): t for p, t in world.rep_settle.items()},
        violations=violations,
        stalled=stalled,
        drained=drained,
        end_time=net.now,
        joins=joins,
        evidence={r: len(world.replicas[r].evidence) for r in sorted(world.replicas)},
        certificates={f"{t[0]}:{t[1]}": v for t, v in world.certificates.items()},
        shard_of_spender=dict(world.topology.shard_of_client),
        world=world,
    )
