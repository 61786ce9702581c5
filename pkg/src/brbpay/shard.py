"""Shard topology, routing and cross-shard certificate checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

from .crypto import KeyRegistry, replica_party
from .model import (
    ClientId,
    ConfigError,
    CreditMessage,
    DependencyCertificate,
    Payment,
    ReplicaId,
    SystemConfig,
    certificate_threshold,
)


class UnknownClient(KeyError):
    pass


class MalformedTrace(ValueError):
    pass


@dataclass(frozen=True)
class ShardTopology:
    shards: Tuple[FrozenSet[ReplicaId], ...]
    f: Tuple[int, ...]
    shard_of_replica: Dict[ReplicaId, int]
    shard_of_client: Dict[ClientId, int]
    representative_of: Dict[ClientId, ReplicaId]

    @classmethod
    def from_config(cls, config: SystemConfig) -> "ShardTopology":
        shard_of_replica = {r: i for i, shard in enumerate(config.shards) for r in shard}
        shard_of_client = {c: shard_of_replica[r] for c, r in config.representative_of.items()}
        return cls(tuple(frozenset(s) for s in config.shards), tuple(config.f),
                   shard_of_replica, shard_of_client, dict(config.representative_of))

    def with_members(self, shard: int, members: Iterable[ReplicaId], f: int) -> "ShardTopology":
        """Copy with one shard's membership replaced (view installation)."""
        shards = list(self.shards)
        shards[shard] = frozenset(members)
        fs = list(self.f)
        fs[shard] = f
        sor = dict(self.shard_of_replica)
        for r in members:
            sor[r] = shard
        return ShardTopology(tuple(shards), tuple(fs), sor, self.shard_of_client, self.representative_of)

    def shard_of(self, client: ClientId) -> int:
        try:
            return self.shard_of_client[client]
        except KeyError:
            raise UnknownClient(client) from None

    def members(self, shard: int) -> FrozenSet[ReplicaId]:
        return self.shards[shard]

    def threshold_for_spender(self, spender: ClientId) -> int:
        return certificate_threshold(self.f[self.shard_of(spender)])

    def is_cross_shard(self, p: Payment) -> bool:
        return self.shard_of(p.spender) != self.shard_of(p.beneficiary)


def route_broadcast(payment: Payment, topology: ShardTopology) -> FrozenSet[ReplicaId]:
    """Replica set that runs the broadcast for ``payment``: the spender's shard."""
    return topology.members(topology.shard_of(payment.spender))


def credit_valid(proof: CreditMessage, topology: ShardTopology, registry: KeyRegistry,
                 cache: Optional[dict] = None) -> bool:
    """Signature checks out and the signer belongs to every spender's shard."""
    # the whole proof is the key: a reused signature over other tuples must miss
    key = proof
    if cache is not None and key in cache:
        return cache[key]
    ok = bool(proof.tuples)
    if ok:
        for t in proof.tuples:
            shard = topology.shard_of_client.get(t[0])
            if shard is None or proof.signer not in topology.shards[shard]:
                ok = False
                break
    if ok:
        ok = registry.verify(replica_party(proof.signer), proof.body(), proof.sig)
    if cache is not None:
        cache[key] = ok
    return ok


def verify_cross_shard_certificate(cert: DependencyCertificate, topology: ShardTopology,
                                   registry: KeyRegistry, cache: Optional[dict] = None) -> bool:
    """At least f+1 distinct signers of the spender's shard vouch for ``cert.payment``."""
    try:
        shard = topology.shard_of(cert.payment[0])
    except UnknownClient:
        return False
    members = topology.shards[shard]
    signers = set()
    for proof in cert.proofs:
        if proof.signer in signers or proof.signer not in members:
            return False
        if tuple(cert.payment) not in proof.tuples:
            return False
        if not credit_valid(proof, topology, registry, cache):
            return False
        signers.add(proof.signer)
    return len(signers) >= certificate_threshold(topology.f[shard])


def count_cross_shard_steps(records: Iterable[dict], topology: ShardTopology) -> Dict[str, dict]:
    """Cross-shard rounds and messages on each payment's critical path.

    ``records`` are trace send records carrying ``mid``, ``cause`` (the message
    whose handling triggered the send), ``kind`` and ``pids``.  For every
    cross-shard message that carries a payment, the causal chain is walked back
    to the PREPARE that broadcast that payment, counting cross-shard hops.  A
    payment's step count is the maximum over its messages; intra-shard payments
    report 0.
    """
    sends = {}
    for rec in records:
        if rec.get("ev") != "send":
            continue
        if "mid" not in rec or "src" not in rec or "dst" not in rec or "kind" not in rec:
            raise MalformedTrace(f"send record without mid/src/dst/kind: {rec}")
        sends[rec["mid"]] = rec

    def crosses(rec) -> bool:
        a = topology.shard_of_replica.get(rec["src"]) if isinstance(rec["src"], int) else None
        b = topology.shard_of_replica.get(rec["dst"]) if isinstance(rec["dst"], int) else None
        return a is not None and b is not None and a != b

    def hops_back_to_broadcast(mid: int, pid: str) -> int:
        hops = 0
        cur = mid
        while cur is not None:
            rec = sends.get(cur)
            if rec is None:
                break
            if crosses(rec):
                hops += 1
            if rec["kind"] == "PREPARE" and pid in (rec.get("pids") or ()):
                break
            cur = rec.get("cause")
        return hops

    out: Dict[str, dict] = {}
    for mid, rec in sends.items():
        pids = rec.get("pids") or ()
        if not pids:
            continue
        cross = crosses(rec)
        for pid in pids:
            entry = out.setdefault(pid, {"steps": 0, "messages": 0})
            if cross:
                entry["messages"] += 1
                entry["steps"] = max(entry["steps"], hops_back_to_broadcast(mid, pid))
    for entry in out.values():
        entry["cross_shard"] = entry["messages"] > 0
    return out
