"""Workload generators.

A workload is a list of timed submissions.  Sequence numbers are not stored:
each client numbers its payments in submission-time order, so the n-th entry
of a client (by time, ties broken by list position) becomes seq n.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from ..model import ConfigError, SystemConfig

UNIFORM = "uniform"
SMALLBANK = "smallbank"

# smallbank operation kinds
SEND_PAYMENT = "send-payment"  # checking -> another owner's checking
AMALGAMATE = "amalgamate"  # savings -> same owner's checking
TRANSACT_SAVINGS = "transact-savings"  # checking -> same owner's savings

DEFAULT_SMALLBANK_MIX = {SEND_PAYMENT: 0.5, AMALGAMATE: 0.25, TRANSACT_SAVINGS: 0.25}
CROSS_SHARD_FRACTION = 0.125


@dataclass(frozen=True)
class WorkloadEntry:
    t: float
    spender: int
    beneficiary: int
    amount: int
    kind: str = UNIFORM


@dataclass
class Workload:
    entries: List[WorkloadEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.entries = sorted(self.entries, key=lambda e: e.t)

    def __len__(self) -> int:
        return len(self.entries)

    def clients(self) -> List[int]:
        return sorted({e.spender for e in self.entries} | {e.beneficiary for e in self.entries})

    def by_client(self) -> Dict[int, List[WorkloadEntry]]:
        out: Dict[int, List[WorkloadEntry]] = {}
        for e in self.entries:
            out.setdefault(e.spender, []).append(e)
        return out

    def payments(self) -> List[Tuple[int, int, int, int]]:
        """``(spender, seq, beneficiary, amount)`` in submission order."""
        seq: Dict[int, int] = {}
        out = []
        for e in self.entries:
            n = seq.get(e.spender, 0)
            seq[e.spender] = n + 1
            out.append((e.spender, n, e.beneficiary, e.amount))
        return out

    def cross_shard_fraction(self, shard_of_client: Dict[int, int]) -> float:
        if not self.entries:
            return 0.0
        cross = sum(1 for e in self.entries if shard_of_client[e.spender] != shard_of_client[e.beneficiary])
        return cross / len(self.entries)

    def to_rows(self) -> List[dict]:
        return [{"t": e.t, "spender": e.spender, "beneficiary": e.beneficiary,
                 "amount": e.amount, "kind": e.kind} for e in self.entries]


def _poisson_times(rng: random.Random, n: int, rate_pps: float, start_ms: float) -> List[float]:
    t = start_ms
    out = []
    for _ in range(n):
        t += rng.expovariate(rate_pps) * 1000.0
        out.append(round(t, 6))
    return out


def gen_uniform(n_clients: int, n_payments: int, seed: int, rate: float = 100.0,
                max_amount: int = 100, min_amount: int = 1, start_ms: float = 0.0,
                clients: Optional[Sequence[int]] = None) -> Workload:
    """Random spender, random beneficiary other than the spender, Poisson arrivals."""
    ids = list(clients) if clients is not None else list(range(n_clients))
    if len(ids) < 2:
        raise ConfigError("uniform workload needs at least two clients")
    if not 1 <= min_amount <= max_amount:
        raise ValueError("amount range must satisfy 1 <= min <= max")
    rng = random.Random(f"uniform:{seed}")
    times = _poisson_times(rng, n_payments, rate, start_ms)
    entries = []
    for t in times:
        s = rng.choice(ids)
        b = rng.choice(ids[:-1])
        if b == s:
            b = ids[-1]
        entries.append(WorkloadEntry(t, s, b, rng.randint(min_amount, max_amount)))
    return Workload(entries)


def gen_fixed_rate(clients: Sequence[int], rate_per_client: float, start_ms: float, end_ms: float,
                   seed: int, max_amount: int = 10, beneficiaries: Optional[Sequence[int]] = None,
                   phase_spread_ms: Optional[float] = None) -> Workload:
    """Evenly spaced submissions, one stream per client, each starting at a random phase."""
    rng = random.Random(f"fixed:{seed}")
    gap = 1000.0 / rate_per_client
    spread = gap if phase_spread_ms is None else phase_spread_ms
    pool = list(beneficiaries) if beneficiaries is not None else list(clients)
    entries = []
    for c in clients:
        t = start_ms + rng.random() * spread
        while t < end_ms:
            b = rng.choice(pool)
            if b == c:
                b = pool[(pool.index(b) + 1) % len(pool)]
            entries.append(WorkloadEntry(round(t, 6), c, b, rng.randint(1, max_amount)))
            t += gap
    return Workload(entries)


def smallbank_config(n_shards: int, f: int, n_owners: int, balance: int = 1000) -> SystemConfig:
    """Two accounts per owner (checking ``2o``, savings ``2o+1``) sharing a representative."""
    m = 3 * f + 1
    shards = [list(range(s * m, (s + 1) * m)) for s in range(n_shards)]
    reps = [shard[i] for i in range(m) for shard in shards]
    rep_of = {}
    for o in range(n_owners):
        r = reps[o % len(reps)]
        rep_of[2 * o] = r
        rep_of[2 * o + 1] = r
    return SystemConfig(shards, f, rep_of, {c: balance for c in rep_of})


def gen_smallbank(n_clients: int, n_payments: int, n_shards: int, seed: int,
                  shard_of_owner: Optional[Dict[int, int]] = None, rate: float = 200.0,
                  max_amount: int = 20, start_ms: float = 0.0,
                  mix: Optional[Dict[str, float]] = None,
                  cross_fraction: float = CROSS_SHARD_FRACTION) -> Workload:
    """Smallbank-style mix over ``n_clients`` owners.

    Exactly ``round(cross_fraction * n_payments)`` payments are send-payments
    between owners of different shards (none when ``n_shards == 1``); the
    rest follow ``mix`` restricted to the owner's own shard.  Owners are
    placed round-robin over shards unless ``shard_of_owner`` is given, which
    matches :func:`smallbank_config`.
    """
    mix = dict(mix or DEFAULT_SMALLBANK_MIX)
    if abs(sum(mix.values()) - 1.0) > 1e-9:
        raise ValueError("smallbank mix must sum to 1")
    if shard_of_owner is None:
        shard_of_owner = {o: o % n_shards for o in range(n_clients)}
    rng = random.Random(f"smallbank:{seed}")
    by_shard: Dict[int, List[int]] = {}
    for o in range(n_clients):
        by_shard.setdefault(shard_of_owner[o], []).append(o)
    n_cross = round(cross_fraction * n_payments) if n_shards >= 2 and len(by_shard) >= 2 else 0
    cross_slots = set(rng.sample(range(n_payments), n_cross))
    kinds = sorted(mix)
    weights = [mix[k] for k in kinds]
    times = _poisson_times(rng, n_payments, rate, start_ms)
    entries = []
    for i, t in enumerate(times):
        o = rng.randrange(n_clients)
        home = shard_of_owner[o]
        amount = rng.randint(1, max_amount)
        if i in cross_slots:
            far = [s for s in sorted(by_shard) if s != home]
            other = rng.choice(by_shard[rng.choice(far)])
            entries.append(WorkloadEntry(t, 2 * o, 2 * other, amount, SEND_PAYMENT))
            continue
        kind = rng.choices(kinds, weights)[0]
        peers = [p for p in by_shard[home] if p != o]
        if kind == SEND_PAYMENT and not peers:
            kind = AMALGAMATE
        if kind == SEND_PAYMENT:
            entries.append(WorkloadEntry(t, 2 * o, 2 * rng.choice(peers), amount, kind))
        elif kind == AMALGAMATE:
            entries.append(WorkloadEntry(t, 2 * o + 1, 2 * o, amount, kind))
        else:
            entries.append(WorkloadEntry(t, 2 * o, 2 * o + 1, amount, kind))
    return Workload(entries)


def shard_of_owner_from_config(config: SystemConfig) -> Dict[int, int]:
    owners = sorted({c // 2 for c in config.representative_of})
    return {o: config.shard_index_of_replica(config.representative_of[2 * o]) for o in owners}
