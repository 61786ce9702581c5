"""Metrics over a finished trace, and their CSV (and optional PNG) form.

Latencies are in simulated ms.  Percentiles use the nearest-rank rule: the
p-th percentile of n sorted samples is the sample at rank ceil(p/100 * n).
A payment counts as settled once 2f+1 correct replicas of its shard settled
it; "rep" latency is submit to settle at the spender's representative.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence


class MalformedTrace(ValueError):
    pass


def nearest_rank(samples: Sequence[float], p: float) -> float:
    if not samples:
        return 0.0
    if not 0 < p <= 100:
        raise ValueError("percentile must be in (0, 100]")
    xs = sorted(samples)
    return xs[max(0, math.ceil(p / 100.0 * len(xs)) - 1)]


@dataclass
class LatencyStats:
    count: int = 0
    min: float = 0.0
    avg: float = 0.0
    p95: float = 0.0
    p99: float = 0.0
    max: float = 0.0

    @classmethod
    def of(cls, samples: Sequence[float]) -> "LatencyStats":
        if not samples:
            return cls()
        return cls(len(samples), min(samples), sum(samples) / len(samples),
                   nearest_rank(samples, 95), nearest_rank(samples, 99), max(samples))


@dataclass
class MetricsReport:
    settles_per_sim_second: float = 0.0
    shard_settles_per_sim_second: Dict[int, float] = field(default_factory=dict)
    quorum_latency: LatencyStats = field(default_factory=LatencyStats)
    rep_latency: LatencyStats = field(default_factory=LatencyStats)
    messages: Dict[str, int] = field(default_factory=dict)
    stalled: int = 0
    replica_settles: Dict[int, int] = field(default_factory=dict)
    timeline: List[dict] = field(default_factory=list)  # one row per sim-second bucket
    violations: int = 0
    duration_ms: float = 0.0

    @property
    def total_messages(self) -> int:
        return sum(self.messages.values())

    def summary_row(self) -> dict:
        row = {"settles_per_sim_second": round(self.settles_per_sim_second, 6),
               "stalled": self.stalled, "messages": self.total_messages,
               "violations": self.violations, "duration_ms": round(self.duration_ms, 6)}
        for name, st in (("quorum", self.quorum_latency), ("rep", self.rep_latency)):
            row[f"{name}_count"] = st.count
            for k in ("avg", "p95", "p99"):
                row[f"{name}_{k}_ms"] = round(getattr(st, k), 6)
        for s in sorted(self.shard_settles_per_sim_second):
            row[f"shard{s}_settles_per_sim_second"] = round(self.shard_settles_per_sim_second[s], 6)
        return row


def _spender(pid: str) -> int:
    try:
        return int(pid.split(":", 1)[0])
    except (ValueError, AttributeError):
        raise MalformedTrace(f"bad payment id {pid!r}") from None


def report(trace, bucket_ms: float = 1000.0) -> MetricsReport:
    """Deterministic metrics for ``trace``; an empty trace gives a zero-filled report."""
    if trace is None:
        return MetricsReport()
    submits = trace.submits
    for pid in trace.quorum_settle:
        if pid not in submits:
            raise MalformedTrace(f"payment {pid} settled but was never submitted")
    shard_of = trace.shard_of_spender
    q_lat = [trace.quorum_settle[p] - submits[p] for p in sorted(trace.quorum_settle)]
    r_lat = [trace.rep_settle[p] - submits[p] for p in sorted(trace.rep_settle) if p in submits]
    if any(x < 0 for x in q_lat + r_lat):
        raise MalformedTrace("settle precedes submission")
    per_replica: Dict[int, int] = {}
    for _, r, _, _ in trace.settles:
        per_replica[r] = per_replica.get(r, 0) + 1
    rep = MetricsReport(quorum_latency=LatencyStats.of(q_lat), rep_latency=LatencyStats.of(r_lat),
                        messages=dict(sorted(trace.counters.items())), stalled=len(trace.stalled),
                        replica_settles=dict(sorted(per_replica.items())),
                        violations=len(trace.violations))
    if not trace.quorum_settle:
        return rep
    start = min(submits.values())
    end = max(trace.quorum_settle.values())
    span_s = max(end - start, 1e-9) / 1000.0
    rep.duration_ms = end - start
    rep.settles_per_sim_second = len(trace.quorum_settle) / span_s
    per_shard: Dict[int, int] = {}
    for pid in trace.quorum_settle:
        s = shard_of.get(_spender(pid), 0)
        per_shard[s] = per_shard.get(s, 0) + 1
    rep.shard_settles_per_sim_second = {s: n / span_s for s, n in sorted(per_shard.items())}
    rep.timeline = timeline(trace, bucket_ms)
    return rep


def timeline(trace, bucket_ms: float = 1000.0) -> List[dict]:
    """Quorum settles per bucket, total and per shard, from t=0 to the last settle."""
    if not trace.quorum_settle:
        return []
    shards = sorted(set(trace.shard_of_spender.values()) or {0})
    last = max(trace.quorum_settle.values())
    n = int(last // bucket_ms) + 1
    counts = [[0] * len(shards) for _ in range(n)]
    idx = {s: i for i, s in enumerate(shards)}
    for pid, t in trace.quorum_settle.items():
        s = trace.shard_of_spender.get(_spender(pid), shards[0])
        counts[int(t // bucket_ms)][idx[s]] += 1
    scale = 1000.0 / bucket_ms
    rows = []
    for b in range(n):
        row = {"t_start_ms": b * bucket_ms, "settles_per_sim_second": sum(counts[b]) * scale}
        for s in shards:
            row[f"shard{s}"] = counts[b][idx[s]] * scale
        rows.append(row)
    return rows


def settle_rate(trace, start_ms: float, end_ms: float) -> float:
    """Quorum settles per sim-second inside ``[start_ms, end_ms)``."""
    n = sum(1 for t in trace.quorum_settle.values() if start_ms <= t < end_ms)
    return n * 1000.0 / (end_ms - start_ms)


def max_settle_gap(trace, start_ms: float, end_ms: float) -> float:
    """Longest interval inside the window with no quorum settle anywhere."""
    ts = sorted(t for t in trace.quorum_settle.values() if start_ms <= t < end_ms)
    edges = [start_ms] + ts + [end_ms]
    return max(b - a for a, b in zip(edges, edges[1:]))


def _write(path: str, rows: List[dict], header: Optional[List[str]] = None) -> None:
    cols = header or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


SUMMARY_CSV = "summary.csv"
TIMELINE_CSV = "timeline.csv"
MESSAGES_CSV = "messages.csv"
REPLICAS_CSV = "replicas.csv"


def write_csvs(rep: MetricsReport, out_dir: str, prefix: str = "") -> List[str]:
    """summary (one row), timeline (per sim-second), messages (per kind), replicas (settles)."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    p = os.path.join(out_dir, prefix + SUMMARY_CSV)
    _write(p, [rep.summary_row()])
    paths.append(p)
    p = os.path.join(out_dir, prefix + TIMELINE_CSV)
    _write(p, rep.timeline, None if rep.timeline else ["t_start_ms", "settles_per_sim_second"])
    paths.append(p)
    p = os.path.join(out_dir, prefix + MESSAGES_CSV)
    _write(p, [{"kind": k, "count": v} for k, v in rep.messages.items()], ["kind", "count"])
    paths.append(p)
    p = os.path.join(out_dir, prefix + REPLICAS_CSV)
    _write(p, [{"replica": r, "settles": n} for r, n in rep.replica_settles.items()], ["replica", "settles"])
    paths.append(p)
    return paths


def plot_timeline(rep: MetricsReport, path: str, title: str = "") -> str:
    """Render the timeline as a PNG; needs matplotlib."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 3.5))
    xs = [r["t_start_ms"] / 1000.0 for r in rep.timeline]
    ax.step(xs, [r["settles_per_sim_second"] for r in rep.timeline], where="post", label="total")
    shard_cols = [k for k in (rep.timeline[0] if rep.timeline else {}) if k.startswith("shard")]
    if len(shard_cols) > 1:
        for k in shard_cols:
            ax.step(xs, [r[k] for r in rep.timeline], where="post", label=k, alpha=0.6)
    ax.set_xlabel("simulated time (s)")
    ax.set_ylabel("settles / sim-second")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path
