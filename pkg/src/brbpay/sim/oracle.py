"""Sequential ground truth for a workload."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from ..model import PaymentId

ASCENDING = "ascending"
DESCENDING = "descending"


@dataclass
class OracleLedger:
    balances: Dict[int, int]
    next_seq: Dict[int, int]
    xlogs: Dict[int, List[Tuple[int, int, int, int]]]
    conflicting: Dict[PaymentId, Set[Tuple[int, int, int, int]]] = field(default_factory=dict)
    # clients whose outcome is not determined by the workload alone
    undetermined: Set[int] = field(default_factory=set)


def oracle_apply(payments: Sequence[Tuple[int, int, int, int]], initial_balances: Dict[int, int],
                 order: str = ASCENDING,
                 conflicts: Optional[Dict[PaymentId, Iterable[Tuple[int, int, int, int]]]] = None
                 ) -> OracleLedger:
    """Fixpoint of funded settles.

    ``payments`` are ``(spender, seq, beneficiary, amount)`` in submission
    order.  Each pass walks clients in ``order`` and settles queue heads while
    funded; passes repeat until nothing settles.  Conflicting pairs (and every
    later payment of their spender, and every client whose funds depend on
    them) are marked undetermined.
    """
    queues: Dict[int, List[tuple]] = {}
    for t in payments:
        q = queues.setdefault(t[0], [])
        if t[1] != len(q):
            raise ValueError(f"payments of {t[0]} are not seq-contiguous at {t[1]}")
        q.append(t)
    bal = dict(initial_balances)
    for c in queues:
        bal.setdefault(c, 0)
    for q in queues.values():
        for t in q:
            bal.setdefault(t[2], 0)
    nxt = {c: 0 for c in bal}
    logs: Dict[int, list] = {c: [] for c in bal}
    conflicting = {pid: set(v) for pid, v in (conflicts or {}).items()}
    frozen = {pid[0]: pid[1] for pid in sorted(conflicting, reverse=True)}
    undetermined: Set[int] = set()
    clients = sorted(queues, reverse=(order == DESCENDING))
    while True:
        progress = False
        for c in clients:
            q = queues[c]
            while nxt[c] < len(q):
                t = q[nxt[c]]
                if c in frozen and t[1] >= frozen[c]:
                    undetermined.add(c)
                    break
                if bal[c] < t[3]:
                    break
                bal[c] -= t[3]
                bal[t[2]] += t[3]
                logs[c].append(t)
                nxt[c] += 1
                progress = True
        if not progress:
            break
    if conflicting:
        # anyone reachable from an undetermined spender may or may not be paid
        undetermined |= set(frozen)
        edges: Dict[int, Set[int]] = {}
        for q in queues.values():
            for t in q:
                edges.setdefault(t[0], set()).add(t[2])
        for variants in conflicting.values():
            for t in variants:
                edges.setdefault(t[0], set()).add(t[2])
        todo = list(undetermined)
        while todo:
            c = todo.pop()
            for b in edges.get(c, ()):
                if b not in undetermined:
                    undetermined.add(b)
                    todo.append(b)
    return OracleLedger(bal, nxt, logs, conflicting, undetermined)


@dataclass
class Mismatch:
    replica: int
    client: int
    field: str
    expected: object
    actual: object


def compare_to_oracle(replica_id: int, state: Dict[int, dict], oracle: OracleLedger,
                      extra_balance: Optional[Dict[int, int]] = None) -> List[Mismatch]:
    """Exact comparison of one replica's per-client state with the oracle.

    ``extra_balance`` adds funds the replica holds outside ``bal`` (formed but
    not yet attached certificates in the signature variant).
    """
    out = []
    for c, st in state.items():
        if c in oracle.undetermined:
            continue
        bal = st["balance"] + (extra_balance or {}).get(c, 0)
        if bal != oracle.balances.get(c, 0):
            out.append(Mismatch(replica_id, c, "balance", oracle.balances.get(c, 0), bal))
        if st["next_seq"] != oracle.next_seq.get(c, 0):
            out.append(Mismatch(replica_id, c, "next_seq", oracle.next_seq.get(c, 0), st["next_seq"]))
        want = [list(t) for t in oracle.xlogs.get(c, [])]
        if st["xlog"] != want:
            out.append(Mismatch(replica_id, c, "xlog", want, st["xlog"]))
    return out
