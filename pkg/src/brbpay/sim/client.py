"""Client node: submits its workload entries to its representative."""

from __future__ import annotations

from typing import Dict, List, Optional

from ..crypto import client_party
from ..messages import BalanceQuery, CreditQuery, Submit
from ..model import DependencyCertificate, Payment, encode_payment
from ..shard import credit_valid


def client_addr(c: int) -> str:
    return f"c{c}"


class ClientNode:
    """Holds mySN, signs and submits payments.

    A double-spending client submits, for each of its entries, a second
    payment with the same sequence number and a different beneficiary: first
    to its representative and then to another replica of its shard.
    """

    def __init__(self, cid: int, world, behavior: Optional[str] = None) -> None:
        self.id = cid
        self.addr = client_addr(cid)
        self.world = world
        self.net = world.net
        self.registry = world.registry
        self.rep = world.topology.representative_of[cid]
        self.behavior = behavior
        self.my_sn = 0
        self.submitted: List[Payment] = []
        self.replies: Dict[int, object] = {}
        self.rebuilt: Dict[tuple, DependencyCertificate] = {}
        self._proofs: Dict[tuple, dict] = {}

    def schedule(self, entries) -> None:
        for e in entries:
            self.net.at(e.t, self.addr, self.pay, e.beneficiary, e.amount)

    def _sign_send(self, dst, p: Payment) -> None:
        sig = self.registry.sign(client_party(self.id), encode_payment(p))
        self.net.send(self.addr, dst, Submit(p, sig))

    def pay(self, beneficiary: int, amount: int) -> Payment:
        p = Payment(self.id, self.my_sn, beneficiary, amount)
        self.my_sn += 1
        self.submitted.append(p)
        self.world.on_submit(p, self.net.now)
        self._sign_send(self.rep, p)
        if self.behavior == "double-spend":
            twin = Payment(self.id, p.seq, self.world.twin_beneficiary(self.id, beneficiary), amount)
            self.world.on_conflict(p, twin)
            self._sign_send(self.rep, twin)
            others = sorted(self.world.topology.members(self.world.topology.shard_of(self.id)) - {self.rep})
            if others:
                self._sign_send(others[self.id % len(others)], twin)
        return p

    def query_balance(self, seq: Optional[int] = None) -> None:
        self.net.send(self.addr, self.rep, BalanceQuery(self.id, seq))

    def rebuild_certificate(self, payment_tuple, replicas) -> None:
        """Ask source-shard replicas for their credit proofs directly."""
        self._proofs.setdefault(tuple(payment_tuple), {})
        for r in replicas:
            self.net.send(self.addr, r, CreditQuery(tuple(payment_tuple)))

    def receive(self, src, msg, auth) -> None:
        kind = msg.kind
        if kind == "BALANCE_REPLY":
            self.replies[msg.client] = msg
        elif kind == "CREDIT_REPLY" and msg.proof is not None:
            self._on_proof(src, msg.proof)

    def _on_proof(self, src, proof) -> None:
        if proof.signer != src or not credit_valid(proof, self.world.topology, self.registry):
            return
        for t in proof.tuples:
            bucket = self._proofs.get(t)
            if bucket is None or t in self.rebuilt:
                continue
            bucket[proof.signer] = proof
            if len(bucket) >= self.world.topology.threshold_for_spender(t[0]):
                self.rebuilt[t] = DependencyCertificate(t, tuple(bucket[r] for r in sorted(bucket)))
