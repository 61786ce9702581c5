"""Replica node: broadcast layer, payment engine and representative desk."""

from __future__ import annotations

import random
from typing import Dict, List, Optional, Tuple

from ..brb import EchoBrb, SigBrb
from ..crypto import client_party, replica_party
from ..engine import ECHO, SIG, Batch, PaymentEngine, Representative, make_batches
from ..messages import (
    MEMBERSHIP,
    BalanceReply,
    Credit,
    CreditReply,
)
from ..model import CreditMessage, Payment, encode_credit_body, encode_payment
from ..reconfig import InstallRecord, Reconfig, View
from ..shard import credit_valid, verify_cross_shard_certificate


class Replica:
    """One correct replica.  Byzantine scripts subclass and override hooks."""

    byzantine = False

    def __init__(self, rid: int, world, shard: int, members, joining: bool = False) -> None:
        self.id = rid
        self.world = world
        self.net = world.net
        self.registry = world.registry
        self.topology = world.topology
        self.variant = world.variant
        self.shard = shard
        self.rng = random.Random(f"replica:{world.seed}:{rid}")
        f = world.topology.f[shard]
        self.view = View(0, tuple(sorted(members)), f)
        self.mac_links = self.variant == ECHO and world.authenticate
        clients = sorted(c for c, s in world.topology.shard_of_client.items() if s == shard)
        init = {c: world.initial_balances.get(c, 0) for c in clients}
        self.engine = PaymentEngine(self.variant, init, cert_ok=self._cert_ok,
                                    check_invariants=world.check_invariants)
        mine = [c for c in clients if world.topology.representative_of[c] == rid]
        self.desk = Representative(rid, self.variant, mine, init, hold_unfunded=world.hold_unfunded)
        if self.variant == ECHO:
            self.brb = EchoBrb(self)
        else:
            self.brb = SigBrb(self)
        self.install_brb = SigBrb(self, fifo=False, group=self._install_group)
        self.reconfig = Reconfig(self, joining=joining)
        self.installed = not joining
        self.paused = False
        self.buffer: List[Tuple[int, object, Optional[bytes]]] = []
        self.locks: Dict[Tuple[int, int], bytes] = {}
        self.credit_log: Dict[Tuple[int, int, int, int], CreditMessage] = {}
        self.cert_cache: dict = {}
        self.flush_pending = False
        self.replaying = False
        self.evidence: List[tuple] = []
        self.auth_failures = 0
        self.stale_dropped = 0
        self.released_upto: Dict[int, int] = {c: 0 for c in mine}
        # bound per instance so Byzantine subclasses can override handlers
        self._dispatch = {k: getattr(self, name) for k, name in self.dispatch.items()}

    # transport ----------------------------------------------------------------

    def send(self, dst, msg) -> None:
        auth = None
        if self.mac_links and dst != self.id and isinstance(dst, int) and hasattr(msg, "header"):
            auth = self.registry.mac(self.id, dst, msg.header())
        self.net.send(self.id, dst, msg, auth)

    def multicast(self, msg) -> None:
        for r in self.view.members:
            self.send(r, msg)

    def receive(self, src, msg, auth) -> None:
        kind = msg.kind
        if (self.mac_links and src != self.id and isinstance(src, int)
                and hasattr(msg, "header")):
            if auth is None or not self.registry.verify_mac(src, self.id, msg.header(), auth):
                self.auth_failures += 1
                return
        handler = self._dispatch.get(kind)
        if handler is not None:
            handler(src, msg)

    # broadcast host interface ---------------------------------------------------

    def misbehavior(self, kind: str, src, slot) -> None:
        self.evidence.append((self.net.now, kind, src, slot))

    def validate(self, payload, src) -> bool:
        if isinstance(payload, InstallRecord):
            return self.reconfig.validate_install(payload, src)
        if not isinstance(payload, Batch) or payload.broadcaster != src:
            return False
        rep_of = self.topology.representative_of
        for p in payload.payments:
            if rep_of.get(p.spender) != src or not self.engine.knows(p.spender):
                return False
            held = self.locks.get((p.spender, p.seq))
            if held is not None and held != p.digest:
                return False
            if p.deps and self.variant == SIG:
                for cert in p.deps:
                    if cert.beneficiary != p.spender or not self._cert_ok(cert):
                        return False
        for p in payload.payments:
            self.locks[(p.spender, p.seq)] = p.digest
        return True

    def _cert_ok(self, cert) -> bool:
        return verify_cross_shard_certificate(cert, self.topology, self.registry, self.cert_cache)

    def brb_deliver(self, slot, payload) -> None:
        if slot[1] == MEMBERSHIP:
            self.reconfig.on_install(slot, payload)
            return
        settled = self.engine.deliver(payload.payments)
        if settled:
            self._after_settle(settled)

    def _after_settle(self, settled: List[Payment]) -> None:
        now = self.net.now
        self.world.on_settle(self, settled, now)
        if self.variant != SIG or self.replaying:
            return
        groups: Dict[int, List[tuple]] = {}
        rep_of = self.topology.representative_of
        for p in settled:
            groups.setdefault(rep_of[p.beneficiary], []).append(p.tuple())
        for dest in sorted(groups):
            self.emit_credit(dest, tuple(groups[dest]))

    def emit_credit(self, dest: int, tuples) -> None:
        sig = self.registry.sign(replica_party(self.id), encode_credit_body(tuples))
        proof = CreditMessage(self.id, tuples, sig)
        for t in tuples:
            self.credit_log[t] = proof
        self.send(dest, Credit(proof))

    # view gate --------------------------------------------------------------------

    def _install_group(self, slot):
        return self.reconfig.install_group(slot)

    def on_brb(self, src, m) -> None:
        if m.slot[1] == MEMBERSHIP:
            self.install_brb.handlers[m.kind](self.install_brb, src, m)
            return
        v = m.view
        if v < self.view.vid or (self.paused and v == self.view.vid):
            self.stale_dropped += 1
            return
        if v > self.view.vid or self.paused or not self.installed:
            self.buffer.append((src, m))
            return
        if src not in self.view.members:
            self.stale_dropped += 1
            return
        self.brb.handlers[m.kind](self.brb, src, m)

    def pause(self, new_view: View) -> None:
        self.paused = True

    def resume(self, new_view: View, floor: Dict[int, int]) -> None:
        self.view = new_view
        self.paused = False
        self.installed = True
        self.topology = self.topology.with_members(self.shard, new_view.members, new_view.f)
        self.world.on_view_installed(self, new_view)
        buffered, self.buffer = self.buffer, []
        for src, m in buffered:
            self.on_brb(src, m)
        self.rebroadcast_from(floor)

    def rebroadcast_from(self, floor: Dict[int, int]) -> None:
        """Re-broadcast released payments the slowest announcer may lack."""
        again = []
        for c in sorted(self.released_upto):
            start = floor.get(c, 0)
            acc = self.desk.accepted[c]
            for s in range(start, self.released_upto[c]):
                again.append(acc[s])
        if again:
            queued = {p.id for p in self.desk.outbox}
            self.desk.outbox = [p for p in again if p.id not in queued] + self.desk.outbox
            self.desk.outbox.sort(key=lambda p: (p.spender, p.seq))
        self._schedule_flush()

    def snapshot_state(self):
        xlogs = {c: tuple(log.entries) for c, log in self.engine.xlogs.items()}
        pending = {c: tuple(q[s] for s in sorted(q)) for c, q in self.engine.pending.items() if q}
        return xlogs, pending

    def adopt_state(self, logs: Dict[int, List[Payment]], pending: List[Payment]) -> None:
        """Rebuild engine state by replaying adopted logs (joiner only)."""
        self.replaying = True
        flat = [p for c in sorted(logs) for p in logs[c]]
        for p in flat + list(pending):
            self.locks.setdefault((p.spender, p.seq), p.digest)
        self.engine.deliver(flat)
        self.engine.deliver(pending)
        self.replaying = False

    # clients ----------------------------------------------------------------------

    def on_submit(self, src, m) -> None:
        p = m.payment
        if not self.registry.verify(client_party(p.spender), encode_payment(p), m.sig):
            self.desk.rejected.append(("bad-client-signature", p))
            return
        if self.desk.submit(p):
            self._note_released()

    def _note_released(self) -> None:
        if not self.desk.outbox:
            return
        for p in self.desk.outbox:
            if p.seq + 1 > self.released_upto.get(p.spender, 0):
                self.released_upto[p.spender] = p.seq + 1
        self._schedule_flush()

    def _schedule_flush(self) -> None:
        if self.flush_pending or not self.desk.outbox:
            return
        self.flush_pending = True
        self.net.at(self.net.now + self.world.batch_delay_ms, self.id, self.flush)

    def flush(self) -> None:
        self.flush_pending = False
        if self.paused or not self.installed:
            return
        out = self.desk.take_outbox()
        if not out:
            return
        for batch in make_batches(self.id, out, self.topology.representative_of, self.world.max_batch):
            self.broadcast_batch(batch)

    def broadcast_batch(self, batch: Batch) -> None:
        self.brb.broadcast(batch)

    def on_balance_query(self, src, m) -> None:
        c = m.client
        if not self.engine.knows(c):
            return
        settled = None if m.payment_seq is None else m.payment_seq < self.engine.next_seq[c]
        self.send(src, BalanceReply(c, self.engine.bal[c], self.engine.next_seq[c], settled,
                                    self.desk.pending_credit(c)))

    # credits ----------------------------------------------------------------------

    def on_credit(self, src, m) -> None:
        proof = m.proof
        if proof.signer != src or not credit_valid(proof, self.topology, self.registry, self.cert_cache):
            self.misbehavior("bad-credit", src, None)
            return
        formed = self.desk.on_credit(proof, self.topology.threshold_for_spender)
        for cert in formed:
            self.world.on_certificate(self, cert)
        if formed:
            self._note_released()

    def on_credit_query(self, src, m) -> None:
        proof = self.credit_log.get(tuple(m.payment))
        self.send(src, CreditReply(proof))

    def on_reconfig(self, src, m) -> None:
        self.reconfig.handlers[m.kind](self.reconfig, src, m)

    def start_join(self) -> None:
        self.reconfig.start_join()

    dispatch = {
        "PREPARE": "on_brb",
        "ECHO": "on_brb",
        "READY": "on_brb",
        "PAYLOAD_REQ": "on_brb",
        "PAYLOAD_RESP": "on_brb",
        "ACK": "on_brb",
        "COMMIT": "on_brb",
        "SUBMIT": "on_submit",
        "CREDIT": "on_credit",
        "CREDIT_QUERY": "on_credit_query",
        "BALANCE_QUERY": "on_balance_query",
        "JOIN_REQ": "on_reconfig",
        "JOIN_REPLY": "on_reconfig",
        "JOIN_RELEASE": "on_reconfig",
        "STATE_REQ": "on_reconfig",
        "STATE_SNAPSHOT": "on_reconfig",
        "RESUME_ACK": "on_reconfig",
    }
