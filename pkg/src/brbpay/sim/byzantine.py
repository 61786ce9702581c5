"""Scripted Byzantine replicas.

Scripts (any combination):

``equivocate``     broadcast conflicting batches under one slot to two halves
                   of the group, and echo/ack/ready every digest it sees.
``withhold``       echo variant: Prepare reaches only part of the correct
                   replicas; signature variant: Commit reaches only
                   ``commit_targets`` correct replicas.
``forge-credit``   send fabricated and mis-signed Credit messages and attach
                   a fake dependency certificate to its own clients' payments.
``drop-credits``   discard incoming Credit messages (as a representative).
``silent``         ignore everything, never broadcast.
``forge-snapshot`` add a fabricated entry to every log it ships to a joiner.
"""

from __future__ import annotations

from typing import Dict, List

from ..crypto import Signature, replica_party
from ..engine import ECHO, Batch
from ..messages import Ack, Commit, CommitCertificate, Credit, Echo, Prepare, Ready
from ..model import CreditMessage, DependencyCertificate, Payment, encode_credit_body
from ..brb.sig import ack_bytes, prepare_bytes
from .replica import Replica

SCRIPTS = ("equivocate", "withhold", "forge-credit", "drop-credits", "silent", "forge-snapshot")


class ByzantineReplica(Replica):
    byzantine = True

    def __init__(self, rid, world, shard, members, scripts=(), commit_targets: int = 1, **kw) -> None:
        super().__init__(rid, world, shard, members, **kw)
        unknown = set(scripts) - set(SCRIPTS)
        if unknown:
            raise ValueError(f"unknown Byzantine scripts: {sorted(unknown)}")
        self.scripts = frozenset(scripts)
        self.commit_targets = commit_targets
        self.seen: Dict[tuple, set] = {}
        self.my_acks: Dict[tuple, Dict[bytes, dict]] = {}
        self.my_payloads: Dict[tuple, Dict[bytes, object]] = {}
        self.committed_slots: set = set()
        self.forged = 0

    def correct_peers(self) -> List[int]:
        byz = self.world.byzantine_ids
        return [r for r in self.view.members if r != self.id and r not in byz]

    # dispatch ------------------------------------------------------------------

    def receive(self, src, msg, auth) -> None:
        if "silent" in self.scripts:
            return
        super().receive(src, msg, auth)

    def on_brb(self, src, m) -> None:
        if "equivocate" in self.scripts and m.slot[1] != -1 and m.view == self.view.vid:
            if m.kind == "PREPARE" and m.slot[1] != self.id:
                self._promiscuous(src, m)
                return
            if m.kind == "ACK" and m.slot in self.my_acks:
                self._collect_ack(src, m)
                return
        if "withhold" in self.scripts and self.variant != ECHO and m.kind == "ACK" and m.slot in self.my_acks:
            self._collect_ack(src, m)
            return
        super().on_brb(src, m)

    def _promiscuous(self, src, m) -> None:
        d = m.payload.digest
        seen = self.seen.setdefault(m.slot, set())
        if d in seen:
            return
        seen.add(d)
        if self.variant == ECHO:
            self._targeted(Echo(m.view, m.slot, d))
            self._targeted(Ready(m.view, m.slot, d))
        else:
            sig = self.registry.sign(replica_party(self.id), ack_bytes(m.slot, d))
            self.send(src, Ack(m.view, m.slot, d, sig))

    # broadcasting ----------------------------------------------------------------

    def flush(self) -> None:
        if "silent" in self.scripts:
            self.flush_pending = False
            return
        super().flush()

    def broadcast_batch(self, batch: Batch) -> None:
        if "forge-credit" in self.scripts:
            batch = self._with_fake_deps(batch)
            self._forge_credits(batch)
        if "equivocate" in self.scripts:
            self._equivocate(batch)
        elif "withhold" in self.scripts:
            self._withhold(batch)
        else:
            super().broadcast_batch(batch)

    def _next_slot(self):
        brb = self.brb
        view = self.view.vid
        k = brb.counter.get(view, 0)
        brb.counter[view] = k + 1
        return (view, self.id, k)

    def _prepare(self, slot, payload) -> Prepare:
        if self.variant == ECHO:
            return Prepare(slot[0], slot, payload)
        sig = self.registry.sign(replica_party(self.id), prepare_bytes(slot, payload.digest))
        return Prepare(slot[0], slot, payload, sig)

    def _twin(self, batch: Batch) -> Batch:
        twins = {p.id: p for reason, p in self.desk.rejected if reason == "conflicting-submission"}
        pay = []
        changed = False
        for p in batch.payments:
            t = twins.get(p.id)
            if t is not None and t != p:
                pay.append(t)
                changed = True
            else:
                pay.append(p)
        if not changed:
            p = pay[0]
            pay[0] = Payment(p.spender, p.seq, p.beneficiary, p.amount + 1, p.deps)
        return self._regroup(pay)

    def _equivocate(self, batch: Batch) -> None:
        slot = self._next_slot()
        other = self._twin(batch)
        # split the correct replicas evenly; accomplices get both versions
        peers = self.correct_peers()
        self.rng.shuffle(peers)
        half = (len(peers) + 1) // 2
        sides = ((batch, peers[:half]), (other, peers[half:]))
        accomplices = [r for r in self.view.members if r not in peers]
        for payload, side in sides:
            self.world.collusion[(slot, payload.digest)] = tuple(side)
            for r in tuple(side) + tuple(accomplices):
                self.send(r, self._prepare(slot, payload))
        for payload, _ in sides:
            self._track(slot, payload)
            if self.variant == ECHO:
                self._targeted(Echo(slot[0], slot, payload.digest))
                self._targeted(Ready(slot[0], slot, payload.digest))
            else:
                self._self_ack(slot, payload)

    def _targeted(self, m) -> None:
        """Send only to the correct replicas that saw this version (and accomplices)."""
        side = self.world.collusion.get((m.slot, m.digest))
        if side is None:
            self.multicast(m)
            return
        byz = self.world.byzantine_ids
        for r in self.view.members:
            if r in side or r in byz:
                self.send(r, m)

    def _withhold(self, batch: Batch) -> None:
        slot = self._next_slot()
        peers = self.correct_peers()
        f = self.view.f
        if self.variant == ECHO:
            self.rng.shuffle(peers)
            k = self.rng.randint(f + 1, max(f + 1, len(peers)))
            for r in peers[:k]:
                self.send(r, self._prepare(slot, batch))
            self.multicast(Echo(slot[0], slot, batch.digest))
            ready = Ready(slot[0], slot, batch.digest)
            for r in self.view.members:
                if self.rng.random() < 0.5:
                    self.send(r, ready)
            return
        for r in peers:
            self.send(r, self._prepare(slot, batch))
        self._track(slot, batch)
        self._self_ack(slot, batch)

    def _track(self, slot, payload) -> None:
        self.my_acks.setdefault(slot, {}).setdefault(payload.digest, {})
        self.my_payloads.setdefault(slot, {})[payload.digest] = payload

    def _self_ack(self, slot, payload) -> None:
        sig = self.registry.sign(replica_party(self.id), ack_bytes(slot, payload.digest))
        self.my_acks[slot][payload.digest][self.id] = sig
        self._maybe_commit(slot, payload.digest)

    def _collect_ack(self, src, m) -> None:
        acks = self.my_acks[m.slot].get(m.digest)
        if acks is None or src not in self.view.members:
            return
        if not self.registry.verify(replica_party(src), ack_bytes(m.slot, m.digest), m.sig):
            return
        acks[src] = m.sig
        self._maybe_commit(m.slot, m.digest)

    def _maybe_commit(self, slot, d) -> None:
        acks = self.my_acks[slot][d]
        key = (slot, d)
        if key in self.committed_slots or len(acks) < self.view.quorum:
            return
        self.committed_slots.add(key)
        cert = CommitCertificate(slot, d, tuple(acks[r] for r in sorted(acks)))
        commit = Commit(slot[0], slot, self.my_payloads[slot][d], cert)
        side = self.world.collusion.get((slot, d))
        if "withhold" in self.scripts:
            peers = self.correct_peers()
            self.rng.shuffle(peers)
            targets = peers[: self.commit_targets]
        elif side is not None:
            targets = list(side)
        else:
            targets = list(self.view.members)
        for r in targets:
            self.send(r, commit)

    # credits -----------------------------------------------------------------------

    def on_credit(self, src, m) -> None:
        if "drop-credits" in self.scripts:
            return
        super().on_credit(src, m)

    def _fake_cert(self, beneficiary: int) -> DependencyCertificate:
        t = (beneficiary, 10 ** 6 + self.forged, beneficiary, 10 ** 6)
        self.forged += 1
        proofs = []
        for r in sorted(self.view.members)[: self.view.f + 1]:
            proofs.append(CreditMessage(r, (t,), Signature(replica_party(r), b"\x00" * 32)))
        return DependencyCertificate(t, tuple(proofs))

    def _with_fake_deps(self, batch: Batch) -> Batch:
        if self.variant == ECHO:
            return batch
        return self._regroup([p.with_deps(p.deps + (self._fake_cert(p.spender),)) for p in batch.payments])

    def _regroup(self, payments) -> Batch:
        rep_of = self.topology.representative_of
        groups: Dict[int, list] = {}
        for p in payments:
            groups.setdefault(rep_of[p.beneficiary], []).append(p)
        return Batch(self.id, tuple((d, tuple(groups[d])) for d in sorted(groups)))

    def _forge_credits(self, batch: Batch) -> None:
        """Self-signed credits for payments that never happened, plus mis-signed ones."""
        for p in batch.payments:
            dest = self.topology.representative_of[p.beneficiary]
            t = (p.spender, 10 ** 6 + self.forged, p.beneficiary, 10 ** 5)
            self.forged += 1
            body = encode_credit_body((t,))
            own = CreditMessage(self.id, (t,), self.registry.sign(replica_party(self.id), body))
            self.send(dest, Credit(own))
            for r in self.correct_peers()[: self.view.f + 1]:
                fake = CreditMessage(r, (t,), Signature(replica_party(r), bytes(32)))
                self.send(dest, Credit(fake))

    # reconfiguration ---------------------------------------------------------------

    def snapshot_state(self):
        xlogs, pending = super().snapshot_state()
        if "forge-snapshot" in self.scripts:
            forged = {}
            for c, log in xlogs.items():
                forged[c] = tuple(log) + (Payment(c, len(log), c, 1),)
            xlogs = forged
        return xlogs, pending
