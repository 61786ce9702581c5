"""Domain types shared by every protocol layer.

Clients and replicas are plain integers.  A client's outgoing payments form
its exclusive log (``XLog``); replicas keep one log, one balance and one
next-sequence register per client.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

ClientId = int
ReplicaId = int

PAYMENT_WIRE_SIZE = 100
_HEADER = struct.Struct("<IQIQ")  # spender, seq, beneficiary, amount
_U32 = struct.Struct("<I")
_U64_MAX = 2**64 - 1


class ConfigError(ValueError):
    pass


class LogError(ValueError):
    pass


class GapError(LogError):
    pass


class OwnershipError(LogError):
    pass


class PaymentId(NamedTuple):
    spender: ClientId
    seq: int

    def __str__(self) -> str:
        return f"{self.spender}:{self.seq}"


def quorum_size(n: int, f: int) -> int:
    """Byzantine quorum for a group of exactly 3f+1 replicas."""
    if f < 0 or n != 3 * f + 1:
        raise ConfigError(f"quorum_size expects n == 3f+1, got n={n} f={f}")
    return 2 * f + 1


def byzantine_quorum(n: int, f: int) -> int:
    """Smallest quorum such that any two intersect in f+1 replicas (n >= 3f+1)."""
    if f < 0 or n < 3 * f + 1:
        raise ConfigError(f"group of {n} cannot tolerate f={f}")
    return (n + f + 2) // 2


def certificate_threshold(f: int) -> int:
    if f < 0:
        raise ConfigError("f must be non-negative")
    return f + 1


def max_faults(n: int) -> int:
    return (n - 1) // 3


def encode_tuple(spender: int, seq: int, beneficiary: int, amount: int) -> bytes:
    return _HEADER.pack(spender, seq, beneficiary, amount)


@dataclass(frozen=True)
class CreditMessage:
    """A replica's signed statement that it settled every tuple in ``tuples``.

    One message covers a whole sub-batch, so ``tuples`` usually holds several
    payments bound for the same representative.
    """

    signer: ReplicaId
    tuples: Tuple[Tuple[int, int, int, int], ...]
    sig: object  # crypto.Signature

    def body(self) -> bytes:
        return encode_credit_body(self.tuples)


def encode_credit_body(tuples: Sequence[Tuple[int, int, int, int]]) -> bytes:
    return b"CREDIT" + _U32.pack(len(tuples)) + b"".join(_HEADER.pack(*t) for t in tuples)


@dataclass(frozen=True)
class DependencyCertificate:
    payment: Tuple[int, int, int, int]  # spender, seq, beneficiary, amount
    proofs: Tuple[CreditMessage, ...]

    @property
    def pid(self) -> PaymentId:
        return PaymentId(self.payment[0], self.payment[1])

    @property
    def beneficiary(self) -> ClientId:
        return self.payment[2]

    @property
    def amount(self) -> int:
        return self.payment[3]

    def signers(self) -> List[ReplicaId]:
        return [p.signer for p in self.proofs]


@dataclass(frozen=True, eq=False)
class Payment:
    spender: ClientId
    seq: int
    beneficiary: ClientId
    amount: int
    deps: Tuple[DependencyCertificate, ...] = ()
    digest: bytes = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not 0 <= self.amount <= _U64_MAX:
            raise ValueError(f"amount out of range: {self.amount}")
        if self.seq < 0:
            raise ValueError("sequence numbers start at 0")
        object.__setattr__(self, "digest", hashlib.sha256(encode_payment(self)).digest())

    @property
    def id(self) -> PaymentId:
        return PaymentId(self.spender, self.seq)

    def tuple(self) -> Tuple[int, int, int, int]:
        return (self.spender, self.seq, self.beneficiary, self.amount)

    def with_deps(self, deps: Iterable[DependencyCertificate]) -> "Payment":
        return Payment(self.spender, self.seq, self.beneficiary, self.amount, tuple(deps))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Payment):
            return NotImplemented
        return self.digest == other.digest

    def __hash__(self) -> int:
        return hash(self.digest)

    def to_json(self) -> dict:
        d = {"spender": self.spender, "seq": self.seq,
             "beneficiary": self.beneficiary, "amount": self.amount}
        if self.deps:
            d["deps"] = [list(c.payment) for c in self.deps]
        return d


def encode_payment(p: Payment) -> bytes:
    """Canonical little-endian encoding, fields in declaration order."""
    parts = [_HEADER.pack(p.spender, p.seq, p.beneficiary, p.amount), _U32.pack(len(p.deps))]
    for cert in p.deps:
        parts.append(_HEADER.pack(*cert.payment))
        parts.append(_U32.pack(len(cert.proofs)))
        for proof in cert.proofs:
            body = proof.body()
            parts.append(_U32.pack(proof.signer))
            parts.append(_U32.pack(len(body)) + body)
            parts.append(_U32.pack(len(proof.sig.value)) + proof.sig.value)
    return b"".join(parts)


def wire_image(p: Payment, authenticator: bytes = b"") -> bytes:
    """Payment bytes plus authenticator, padded to the nominal 100-byte size."""
    body = encode_payment(p) + _U32.pack(len(authenticator)) + authenticator
    if len(body) < PAYMENT_WIRE_SIZE:
        body += b"\x00" * (PAYMENT_WIRE_SIZE - len(body))
    return body


@dataclass
class XLog:
    owner: ClientId
    entries: List[Payment] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, p: Payment) -> "XLog":
        return append_to_xlog(self, p)


def append_to_xlog(log: XLog, p: Payment) -> XLog:
    if p.spender != log.owner:
        raise OwnershipError(f"payment by {p.spender} cannot enter log of {log.owner}")
    if p.seq != len(log.entries):
        raise GapError(f"log of {log.owner} has {len(log.entries)} entries, got seq {p.seq}")
    log.entries.append(p)
    return log


@dataclass
class AccountState:
    balance: int = 0
    next_seq: int = 0
    used_deps: set = field(default_factory=set)


@dataclass
class SystemConfig:
    """Static membership and client placement.

    ``f`` may be a single bound applied to every shard or one bound per shard.
    """

    shards: List[List[ReplicaId]]
    f: object
    representative_of: Dict[ClientId, ReplicaId]
    initial_balances: Dict[ClientId, int]

    def __post_init__(self) -> None:
        if isinstance(self.f, int):
            self.f = [self.f] * len(self.shards)
        self.f = list(self.f)
        self.validate()

    @property
    def replicas(self) -> List[ReplicaId]:
        return [r for shard in self.shards for r in shard]

    @property
    def clients(self) -> List[ClientId]:
        return sorted(self.representative_of)

    def shard_index_of_replica(self, r: ReplicaId) -> int:
        for i, shard in enumerate(self.shards):
            if r in shard:
                return i
        raise ConfigError(f"unknown replica {r}")

    def validate(self) -> None:
        if len(self.f) != len(self.shards):
            raise ConfigError("one fault bound per shard required")
        seen = set()
        for shard, f in zip(self.shards, self.f):
            if len(shard) != 3 * f + 1:
                raise ConfigError(f"shard {shard} has {len(shard)} members, expected 3f+1 = {3 * f + 1}")
            if seen.intersection(shard):
                raise ConfigError("shards must be disjoint")
            seen.update(shard)
        for c, r in self.representative_of.items():
            if r not in seen:
                raise ConfigError(f"client {c} represented by unknown replica {r}")
        for c, b in self.initial_balances.items():
            if c not in self.representative_of:
                raise ConfigError(f"balance for unknown client {c}")
            if b < 0:
                raise ConfigError("initial balances must be non-negative")

    def check_clients(self, clients: Iterable[ClientId]) -> None:
        missing = sorted(set(clients) - set(self.representative_of))
        if missing:
            raise ConfigError(f"clients without representative: {missing}")

    @classmethod
    def uniform(cls, n_shards: int, f: int, n_clients: int, balance: int = 1000,
                reps_per_shard: Optional[int] = None) -> "SystemConfig":
        """Shards of 3f+1 replicas; clients assigned round-robin to representatives."""
        m = 3 * f + 1
        shards = [list(range(s * m, (s + 1) * m)) for s in range(n_shards)]
        k = reps_per_shard or m
        reps = [shard[i] for i in range(min(k, m)) for shard in shards]
        rep_of = {c: reps[c % len(reps)] for c in range(n_clients)}
        return cls(shards, f, rep_of, {c: balance for c in range(n_clients)})
