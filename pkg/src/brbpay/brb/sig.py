"""Signature-based reliable broadcast with linear message count.

PREPARE goes to every member, each member unicasts one signed ACK back to the
broadcaster, and a quorum of ACKs becomes the certificate carried by COMMIT.
There is no totality: a faulty broadcaster may hand COMMIT to a single replica.
"""

from __future__ import annotations

from typing import Dict, Optional, Tuple

from ..crypto import replica_party
from ..messages import MEMBERSHIP, Ack, Commit, CommitCertificate, Prepare, Slot, slot_bytes


def prepare_bytes(slot: Slot, d: bytes) -> bytes:
    return b"PREP" + slot_bytes(slot) + d


def ack_bytes(slot: Slot, d: bytes) -> bytes:
    return b"ACK" + slot_bytes(slot) + d


class SigInstance:
    __slots__ = ("acked", "ack", "mine", "acks", "committed", "payload", "complete", "delivered")

    def __init__(self) -> None:
        self.acked: Optional[bytes] = None  # digest this replica signed
        self.ack: Optional[Ack] = None
        self.mine = None  # payload, when we are the broadcaster
        self.acks: Dict[int, object] = {}
        self.committed = False
        self.payload = None
        self.complete = False
        self.delivered = False


def verify_certificate(registry, cert: CommitCertificate, payload, members, quorum: int) -> bool:
    if cert.digest != payload.digest:
        return False
    signers = set()
    allowed = set(members)
    msg = ack_bytes(cert.slot, cert.digest)
    for sig in cert.acks:
        kind, r = sig.signer
        if kind != "r" or r not in allowed or r in signers:
            return False
        if not registry.verify(sig.signer, msg, sig):
            return False
        signers.add(r)
    return len(signers) >= quorum


class SigBrb:
    def __init__(self, host, fifo: bool = True, group=None) -> None:
        self.host = host
        self.fifo = fifo
        self._group = group
        self.instances: Dict[Slot, SigInstance] = {}
        self.next_k: Dict[Tuple[int, int], int] = {}
        self.counter: Dict[int, int] = {}

    def group(self, slot: Optional[Slot] = None):
        if self._group is not None:
            return self._group(slot)
        return self.host.view

    def _inst(self, slot: Slot) -> SigInstance:
        inst = self.instances.get(slot)
        if inst is None:
            inst = self.instances[slot] = SigInstance()
        return inst

    def next_slot(self) -> Slot:
        view = self.host.view.vid
        k = self.counter.get(view, 0)
        self.counter[view] = k + 1
        return (view, self.host.id, k)

    def broadcast(self, payload, slot: Optional[Slot] = None) -> Slot:
        if slot is None:
            slot = self.next_slot()
        inst = self._inst(slot)
        inst.mine = payload
        sig = self.host.registry.sign(replica_party(self.host.id), prepare_bytes(slot, payload.digest))
        msg = Prepare(slot[0], slot, payload, sig)
        group = self.group(slot)
        for r in group.members:
            self.host.send(r, msg)
        return slot

    def on_prepare(self, src: int, m: Prepare) -> None:
        slot = m.slot
        if slot[1] != MEMBERSHIP and slot[1] != src:
            self.host.misbehavior("prepare-wrong-source", src, slot)
            return
        if m.sig is None or not self.host.registry.verify(
                replica_party(src), prepare_bytes(slot, m.payload.digest), m.sig):
            self.host.misbehavior("bad-prepare-signature", src, slot)
            return
        inst = self._inst(slot)
        d = m.payload.digest
        if inst.acked is not None:
            if inst.acked == d:
                self.host.send(src, inst.ack)
            else:
                self.host.misbehavior("conflicting-prepare", src, slot)
            return
        if not self.host.validate(m.payload, src):
            self.host.misbehavior("rejected-prepare", src, slot)
            return
        inst.acked = d
        inst.payload = m.payload
        sig = self.host.registry.sign(replica_party(self.host.id), ack_bytes(slot, d))
        inst.ack = Ack(m.view, slot, d, sig)
        self.host.send(src, inst.ack)

    def on_ack(self, src: int, m: Ack) -> None:
        inst = self.instances.get(m.slot)
        if inst is None or inst.mine is None or inst.committed:
            return
        if m.digest != inst.mine.digest or src in inst.acks:
            return
        group = self.group(m.slot)
        if src not in group.members or m.sig.signer != replica_party(src):
            return
        if not self.host.registry.verify(m.sig.signer, ack_bytes(m.slot, m.digest), m.sig):
            self.host.misbehavior("bad-ack-signature", src, m.slot)
            return
        inst.acks[src] = m.sig
        if len(inst.acks) >= group.quorum:
            inst.committed = True
            acks = tuple(inst.acks[r] for r in sorted(inst.acks))
            cert = CommitCertificate(m.slot, m.digest, acks)
            self.send_commit(Commit(m.slot[0], m.slot, inst.mine, cert), group)

    def send_commit(self, commit: Commit, group) -> None:
        for r in group.members:
            self.host.send(r, commit)
        if self.host.id not in group.members:
            self.on_commit(self.host.id, commit)

    def on_commit(self, src: int, m: Commit) -> None:
        inst = self._inst(m.slot)
        if inst.complete:
            return
        group = self.group(m.slot)
        if m.cert.slot != m.slot or not verify_certificate(
                self.host.registry, m.cert, m.payload, group.members, group.quorum):
            self.host.misbehavior("bad-commit-certificate", src, m.slot)
            return
        inst.complete = True
        inst.payload = m.payload
        if self.fifo:
            self._drain(m.slot[0], m.slot[1])
        else:
            inst.delivered = True
            self.host.brb_deliver(m.slot, m.payload)

    def _drain(self, view: int, source: int) -> None:
        key = (view, source)
        k = self.next_k.get(key, 0)
        while True:
            inst = self.instances.get((view, source, k))
            if inst is None or not inst.complete:
                break
            inst.delivered = True
            k += 1
            self.next_k[key] = k
            self.host.brb_deliver((view, source, k - 1), inst.payload)

    def delivered(self, slot: Slot) -> bool:
        inst = self.instances.get(slot)
        return bool(inst and inst.delivered)

    handlers = {
        "PREPARE": on_prepare,
        "ACK": on_ack,
        "COMMIT": on_commit,
    }
