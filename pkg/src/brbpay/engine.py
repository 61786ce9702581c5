"""Per-replica payment state machine.

Two variants share this module:

``"echo"``  payments are approved only when the spender's previous payment is
            settled *and* its balance covers the amount; settling deposits the
            amount to the beneficiary directly.
``"sig"``   approval checks only sequence contiguity.  Settling first credits
            the spender with every not-yet-used dependency certificate attached
            to the payment, then withdraws.  The beneficiary is paid through
            Credit messages collected by its representative.
"""

from __future__ import annotations

import hashlib
import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Dict, Iterable, List, Optional, Sequence, Tuple

from .model import (
    ClientId,
    CreditMessage,
    DependencyCertificate,
    Payment,
    PaymentId,
    ReplicaId,
    XLog,
    append_to_xlog,
)

ECHO = "echo"
SIG = "sig"
VARIANTS = (ECHO, SIG)
DEFAULT_MAX_BATCH = 256

APPROVED = "approved"
SEQ_GAP = "seq-gap"
INSUFFICIENT = "insufficient-funds"


@dataclass(frozen=True, eq=False)
class Batch:
    """Broadcast payload: payments grouped by the beneficiary's representative."""

    broadcaster: ReplicaId
    sub_batches: Tuple[Tuple[ReplicaId, Tuple[Payment, ...]], ...]
    digest: bytes = field(init=False, repr=False)
    payments: Tuple[Payment, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        flat = tuple(p for _, group in self.sub_batches for p in group)
        h = hashlib.sha256(b"BATCH" + struct.pack("<q", self.broadcaster))
        for dest, group in self.sub_batches:
            h.update(struct.pack("<qI", dest, len(group)))
            for p in group:
                h.update(p.digest)
        object.__setattr__(self, "payments", flat)
        object.__setattr__(self, "digest", h.digest())

    def __len__(self) -> int:
        return len(self.payments)


def make_batches(broadcaster: ReplicaId, pending: Sequence[Payment],
                 representative_of: Dict[ClientId, ReplicaId],
                 max_batch: int = DEFAULT_MAX_BATCH) -> List[Batch]:
    if max_batch < 1:
        raise ValueError("max_batch must be positive")
    batches = []
    for start in range(0, len(pending), max_batch):
        chunk = pending[start:start + max_batch]
        groups: Dict[ReplicaId, List[Payment]] = {}
        for p in chunk:
            groups.setdefault(representative_of[p.beneficiary], []).append(p)
        batches.append(Batch(broadcaster, tuple((d, tuple(groups[d])) for d in sorted(groups))))
    return batches


class InvariantViolation(AssertionError):
    pass


class PaymentEngine:
    """Balances, sequence registers and logs for the clients of one shard."""

    def __init__(self, variant: str, initial_balances: Dict[ClientId, int],
                 cert_ok: Optional[Callable[[DependencyCertificate], bool]] = None,
                 check_invariants: bool = True) -> None:
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.variant = variant
        self.initial = dict(initial_balances)
        self.bal: Dict[ClientId, int] = dict(initial_balances)
        self.next_seq: Dict[ClientId, int] = {c: 0 for c in initial_balances}
        self.xlogs: Dict[ClientId, XLog] = {c: XLog(c) for c in initial_balances}
        self.used_deps: Dict[ClientId, set] = {c: set() for c in initial_balances}
        self.pending: Dict[ClientId, Dict[int, Payment]] = {c: {} for c in initial_balances}
        self.blocked: set = set()
        self.cert_ok = cert_ok or (lambda cert: True)
        self.check_invariants = check_invariants
        self.total_initial = sum(initial_balances.values())
        self.materialized_total = 0
        self.spent_total = 0
        self.violations: List[str] = []
        self.settled_count = 0

    def clients(self) -> List[ClientId]:
        return sorted(self.bal)

    def knows(self, c: ClientId) -> bool:
        return c in self.bal

    # delivery ---------------------------------------------------------------

    def deliver(self, payments: Iterable[Payment]) -> List[Payment]:
        """Queue delivered payments and settle everything that became possible."""
        touched = set()
        for p in payments:
            s = p.spender
            if s not in self.bal:
                continue
            if p.seq < self.next_seq[s]:
                if self.xlogs[s].entries[p.seq] != p:
                    self._violation(f"conflicting payload for settled {p.id}")
                continue
            queued = self.pending[s].get(p.seq)
            if queued is None:
                self.pending[s][p.seq] = p
            elif queued != p:
                self._violation(f"conflicting payloads delivered for {p.id}")
                continue
            touched.add(s)
        settled: List[Payment] = []
        if touched:
            self._progress(touched, settled)
        return settled

    def _progress(self, touched: set, settled: List[Payment]) -> None:
        if self.variant == SIG:
            for c in sorted(touched):
                self._drain_client(c, settled)
            return
        # blocked heads are re-examined in ascending client order after any settle
        work = touched | self.blocked
        while True:
            before = len(settled)
            for c in sorted(work):
                self._drain_client(c, settled)
            if len(settled) == before or not self.blocked:
                break
            work = set(self.blocked)

    def _drain_client(self, c: ClientId, settled: List[Payment]) -> None:
        queue = self.pending[c]
        while True:
            p = queue.get(self.next_seq[c])
            if p is None:
                self.blocked.discard(c)
                return
            status = self.approve(p)
            if status == INSUFFICIENT:
                self.blocked.add(c)
                return
            if not self.settle(p):
                self.blocked.add(c)
                return
            self.blocked.discard(c)
            settled.append(p)

    def approve(self, p: Payment) -> str:
        if self.next_seq[p.spender] != p.seq:
            return SEQ_GAP
        if self.variant == ECHO and self.bal[p.spender] < p.amount:
            return INSUFFICIENT
        return APPROVED

    def settle(self, p: Payment) -> bool:
        s, b, x = p.spender, p.beneficiary, p.amount
        if self.variant == SIG:
            used = self.used_deps[s]
            gained = 0
            for cert in p.deps:
                pid = cert.pid
                if pid in used or cert.beneficiary != s or not self.cert_ok(cert):
                    continue
                used.add(pid)
                gained += cert.amount
            self.bal[s] += gained
            self.materialized_total += gained
            if self.bal[s] < x:
                if self.check_invariants:
                    self._check(s)
                return False
            self.bal[s] -= x
        else:
            self.bal[s] -= x
            if b in self.bal:
                self.bal[b] += x
            else:
                self._violation(f"deposit to unknown client {b}")
        del self.pending[s][p.seq]
        self.next_seq[s] += 1
        append_to_xlog(self.xlogs[s], p)
        self.spent_total += x
        self.settled_count += 1
        if self.check_invariants:
            self._check(s)
        return True

    def _check(self, s: ClientId) -> None:
        total = sum(self.bal.values())
        if self.variant == ECHO:
            expected = self.total_initial
        else:
            expected = self.total_initial + self.materialized_total - self.spent_total
        if total != expected:
            self._violation(f"conservation: balance sum {total} != {expected}")
        if self.bal[s] < 0:
            self._violation(f"negative balance for {s}")

    def _violation(self, text: str) -> None:
        self.violations.append(text)

    # inspection ---------------------------------------------------------------

    def queue_depth(self) -> int:
        return sum(len(q) for q in self.pending.values())

    def head_blocked(self, c: ClientId) -> Optional[str]:
        p = self.pending[c].get(self.next_seq[c])
        if p is None:
            return SEQ_GAP if self.pending[c] else None
        status = self.approve(p)
        if status == APPROVED and self.variant == SIG:
            return INSUFFICIENT  # a sig-variant head only sits in the queue after a failed settle
        return status

    def state(self) -> Dict[ClientId, dict]:
        return {
            c: {
                "balance": self.bal[c],
                "next_seq": self.next_seq[c],
                "xlog": [list(p.tuple()) for p in self.xlogs[c].entries],
            }
            for c in sorted(self.bal)
        }


class Representative:
    """Submission desk of a representative replica.

    Accepts client payments in sequence order, attaches accumulated
    dependency certificates (sig variant) and turns Credit messages into
    certificates once f+1 distinct approvers vouch for the same payment.
    """

    def __init__(self, replica_id: ReplicaId, variant: str, clients: Iterable[ClientId],
                 initial_balances: Dict[ClientId, int], hold_unfunded: bool = True) -> None:
        self.id = replica_id
        self.variant = variant
        self.clients = set(clients)
        self.hold_unfunded = hold_unfunded and variant == SIG
        self.expect: Dict[ClientId, int] = {c: 0 for c in self.clients}
        self.accepted: Dict[ClientId, Dict[int, Payment]] = {c: {} for c in self.clients}
        self.early: Dict[ClientId, Dict[int, Payment]] = {c: {} for c in self.clients}
        self.held: Dict[ClientId, Deque[Payment]] = {c: deque() for c in self.clients}
        self.projected: Dict[ClientId, int] = {c: initial_balances.get(c, 0) for c in self.clients}
        self.deps: Dict[ClientId, List[DependencyCertificate]] = {c: [] for c in self.clients}
        self.partial: Dict[Tuple[int, int, int, int], Dict[ReplicaId, CreditMessage]] = {}
        self.completed: set = set()
        self.outbox: List[Payment] = []
        self.rejected: List[Tuple[str, Payment]] = []

    def submit(self, p: Payment) -> bool:
        c = p.spender
        if c not in self.clients:
            self.rejected.append(("not-representative", p))
            return False
        known = self.accepted[c].get(p.seq) or self.early[c].get(p.seq)
        if known is not None:
            if known != p:
                self.rejected.append(("conflicting-submission", p))
            return False
        if p.seq < self.expect[c]:
            self.rejected.append(("stale-submission", p))
            return False
        self.early[c][p.seq] = p
        while self.expect[c] in self.early[c]:
            q = self.early[c].pop(self.expect[c])
            self.accepted[c][q.seq] = q
            self.expect[c] += 1
            self.held[c].append(q)
        self.release(c)
        return True

    def release(self, c: ClientId) -> None:
        held = self.held[c]
        while held:
            p = held[0]
            deps = self.deps[c]
            incoming = sum(d.amount for d in deps)
            if self.hold_unfunded and self.projected[c] + incoming < p.amount:
                return
            held.popleft()
            if self.variant == SIG:
                p = p.with_deps(deps)
                self.deps[c] = []
                self.accepted[c][p.seq] = p
            self.projected[c] += incoming - p.amount
            self.outbox.append(p)

    def take_outbox(self) -> List[Payment]:
        out, self.outbox = self.outbox, []
        return out

    def on_credit(self, proof: CreditMessage, threshold: Callable[[int], int]) -> List[DependencyCertificate]:
        """Add one verified proof; returns certificates completed by it."""
        formed = []
        for t in proof.tuples:
            b = t[2]
            if b not in self.clients or (t[0], t[1]) in self.completed:
                continue
            bucket = self.partial.setdefault(t, {})
            if proof.signer in bucket:
                continue
            bucket[proof.signer] = proof
            if len(bucket) >= threshold(t[0]):
                cert = DependencyCertificate(t, tuple(bucket[r] for r in sorted(bucket)))
                self.deps[b].append(cert)
                self.completed.add((t[0], t[1]))
                del self.partial[t]
                formed.append(cert)
        for b in sorted({c.beneficiary for c in formed}):
            self.release(b)
        return formed

    def pending_credit(self, c: ClientId) -> int:
        return sum(d.amount for d in self.deps.get(c, ()))

    def unsent(self) -> int:
        return sum(len(h) for h in self.held.values())
