"""Wire messages.

Every replica-to-replica message carries the sender's current view id.  A BRB
instance is addressed by a slot ``(view, source, k)``: ``source`` is the
broadcasting replica (or ``MEMBERSHIP`` for view installation records) and
``k`` its per-view broadcast counter.
"""

from __future__ import annotations

import struct
from typing import Any, NamedTuple, Optional, Tuple

from .model import CreditMessage, Payment

MEMBERSHIP = -1
Slot = Tuple[int, int, int]

_SLOT = struct.Struct("<qqq")


def slot_bytes(slot: Slot) -> bytes:
    return _SLOT.pack(*slot)


class Prepare(NamedTuple):
    view: int
    slot: Slot
    payload: Any
    sig: Any = None  # broadcaster signature (signature BRB only)
    kind = "PREPARE"

    def header(self) -> bytes:
        return b"P" + slot_bytes(self.slot) + self.payload.digest


class Echo(NamedTuple):
    view: int
    slot: Slot
    digest: bytes
    kind = "ECHO"

    def header(self) -> bytes:
        return b"E" + slot_bytes(self.slot) + self.digest


class Ready(NamedTuple):
    view: int
    slot: Slot
    digest: bytes
    kind = "READY"

    def header(self) -> bytes:
        return b"R" + slot_bytes(self.slot) + self.digest


class PayloadRequest(NamedTuple):
    view: int
    slot: Slot
    digest: bytes
    kind = "PAYLOAD_REQ"

    def header(self) -> bytes:
        return b"Q" + slot_bytes(self.slot) + self.digest


class PayloadResponse(NamedTuple):
    view: int
    slot: Slot
    payload: Any
    kind = "PAYLOAD_RESP"

    def header(self) -> bytes:
        return b"S" + slot_bytes(self.slot) + self.payload.digest


class Ack(NamedTuple):
    view: int
    slot: Slot
    digest: bytes
    sig: Any
    kind = "ACK"


class CommitCertificate(NamedTuple):
    slot: Slot
    digest: bytes
    acks: Tuple[Any, ...]  # Signatures, one per distinct signer


class Commit(NamedTuple):
    view: int
    slot: Slot
    payload: Any
    cert: CommitCertificate
    kind = "COMMIT"


class Credit(NamedTuple):
    proof: CreditMessage
    kind = "CREDIT"


class Submit(NamedTuple):
    payment: Payment
    sig: Any
    kind = "SUBMIT"


class BalanceQuery(NamedTuple):
    client: int
    payment_seq: Optional[int] = None
    kind = "BALANCE_QUERY"


class BalanceReply(NamedTuple):
    client: int
    balance: int
    next_seq: int
    settled: Optional[bool]
    pending_credit: int = 0
    kind = "BALANCE_REPLY"


class CreditQuery(NamedTuple):
    payment: Tuple[int, int, int, int]
    kind = "CREDIT_QUERY"


class CreditReply(NamedTuple):
    proof: Optional[CreditMessage]
    kind = "CREDIT_REPLY"


class JoinReq(NamedTuple):
    view: int
    joiner: int
    kind = "JOIN_REQ"


class JoinReply(NamedTuple):
    view: int
    status: str  # "granted" | "busy" | "amend" | "reject"
    members: Tuple[int, ...] = ()
    holder: Optional[int] = None
    kind = "JOIN_REPLY"


class JoinRelease(NamedTuple):
    view: int
    joiner: int
    kind = "JOIN_RELEASE"


class StateSnapshot(NamedTuple):
    view: int
    xlogs: Any  # dict client -> tuple[Payment]
    pending: Any  # dict client -> tuple[Payment]
    kind = "STATE_SNAPSHOT"


class StateRequest(NamedTuple):
    view: int
    kind = "STATE_REQ"


class ResumeAck(NamedTuple):
    view: int
    next_seq: Any  # tuple of (client, next_seq)
    kind = "RESUME_ACK"


BRB_KINDS = ("PREPARE", "ECHO", "READY", "PAYLOAD_REQ", "PAYLOAD_RESP", "ACK", "COMMIT")
RECONFIG_KINDS = ("JOIN_REQ", "JOIN_REPLY", "JOIN_RELEASE", "STATE_REQ", "STATE_SNAPSHOT", "RESUME_ACK")


def payment_ids(msg) -> Optional[list]:
    """Payment ids carried by a message, for trace records."""
    kind = msg.kind
    if kind in ("PREPARE", "COMMIT", "PAYLOAD_RESP"):
        payments = getattr(msg.payload, "payments", None)
        if payments is not None:
            return [f"{p.spender}:{p.seq}" for p in payments]
        return None
    if kind == "CREDIT":
        return [f"{t[0]}:{t[1]}" for t in msg.proof.tuples]
    if kind == "SUBMIT":
        return [f"{msg.payment.spender}:{msg.payment.seq}"]
    return None
