"""Named scenarios.

Each scenario builds a world, runs it and returns the trace plus a small
``findings`` dict with the quantities the scenario is about.  ``ok`` is True
when the run shows the expected behavior and no safety check tripped.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

from ..engine import ECHO, SIG
from ..model import PaymentId, SystemConfig
from ..shard import ShardTopology, count_cross_shard_steps
from ..sim import TRACE_SETTLES, FaultPlan, LatencyModel, RunConfig, build, collect
from .metrics import max_settle_gap, settle_rate
from .workload import (
    Workload,
    WorkloadEntry,
    gen_fixed_rate,
    gen_smallbank,
    gen_uniform,
    shard_of_owner_from_config,
    smallbank_config,
)

FAULT_AT_MS = 30_000.0
ROBUST_DELAY_MS = 100.0
PRE_WINDOW = (21_000.0, 30_000.0)
POST_WINDOW = (31_000.0, 40_000.0)
STALL_LIMIT_MS = 1_000.0
# aggregate rate after losing one of ten representatives, minus 2 points
ROBUST_MIN_RATIO = 9 / 10 - 0.02


@dataclass
class ScenarioResult:
    name: str
    trace: object
    workload: Workload
    findings: Dict[str, object] = field(default_factory=dict)
    ok: bool = True


def _finish(name, world, drained, workload, findings, ok) -> ScenarioResult:
    trace = collect(world, drained)
    findings.setdefault("violations", len(trace.violations))
    return ScenarioResult(name, trace, workload, findings, ok and not trace.violations)


def robust(mode: str = "crash", seed: int = 1, f: int = 16, clients: int = 10, rate: float = 20.0,
           batch_delay_ms: float = 250.0, start_ms: float = 20_000.0, horizon_ms: float = 41_000.0
           ) -> ScenarioResult:
    """One representative crashes (or slows by 100 ms) at t=30s under fixed offered load."""
    system = SystemConfig.uniform(1, f, clients, balance=10 ** 6, reps_per_shard=clients)
    wl = gen_fixed_rate(list(range(clients)), rate, start_ms, POST_WINDOW[1], seed=seed,
                        phase_spread_ms=batch_delay_ms)
    victim = system.representative_of[0]
    if mode == "crash":
        plan = FaultPlan(crashes={victim: FAULT_AT_MS})
    elif mode == "delay":
        plan = FaultPlan(delays={victim: (FAULT_AT_MS, ROBUST_DELAY_MS)})
    else:
        raise ValueError(f"unknown robustness mode {mode!r}")
    cfg = RunConfig(system, variant=ECHO, trace_level=TRACE_SETTLES, batch_delay_ms=batch_delay_ms)
    world = build(cfg, plan, wl, seed)
    drained = world.net.run(horizon_ms)
    trace = collect(world, drained)
    pre = settle_rate(trace, *PRE_WINDOW)
    post = settle_rate(trace, *POST_WINDOW)
    ratio = post / pre if pre else 0.0
    gap = max_settle_gap(trace, PRE_WINDOW[0], POST_WINDOW[1])
    findings = {"mode": mode, "victim": victim, "pre_rate": round(pre, 3), "post_rate": round(post, 3),
                "ratio": round(ratio, 4), "max_gap_ms": round(gap, 3), "violations": len(trace.violations)}
    ok = ratio >= ROBUST_MIN_RATIO and gap <= STALL_LIMIT_MS and not trace.violations
    return ScenarioResult(f"robust-{'crash' if mode == 'crash' else 'async'}", trace, wl, findings, ok)


def robust_crash(**kw) -> ScenarioResult:
    """One of ten representatives crashes at t=30s under fixed offered load."""
    return robust("crash", **kw)


def robust_async(**kw) -> ScenarioResult:
    """One of ten representatives slows by 100 ms at t=30s under fixed offered load."""
    return robust("delay", **kw)


ALICE, BOB, CAROL = 0, 1, 2


def _partial_run(seed: int, commit_targets: int, rebuild_at: Optional[float]):
    # Alice's representative (replica 0) withholds commits; Bob has no funds of his own
    system = SystemConfig([[0, 1, 2, 3]], 1, {ALICE: 0, BOB: 1, CAROL: 2}, {ALICE: 100, BOB: 0, CAROL: 0})
    wl = Workload([WorkloadEntry(10.0, ALICE, BOB, 50), WorkloadEntry(20.0, BOB, CAROL, 50)])
    plan = FaultPlan(byzantine_replicas={0: ("withhold",)})
    cfg = RunConfig(system, variant=SIG, latency=LatencyModel(adversarial=True), commit_targets=commit_targets)
    world = build(cfg, plan, wl, seed)
    if rebuild_at is not None:
        client = world.clients[BOB]
        world.net.at(rebuild_at, client.addr, client.rebuild_certificate, (ALICE, 0, BOB, 50), [1, 2, 3])
    drained = world.net.run(10_000.0)
    return world, drained, wl


def partial_payment(seed: int = 1) -> ScenarioResult:
    """Withheld commits break totality; f+1 credits still let the beneficiary spend.

    Run A: the Byzantine broadcaster commits to one correct replica only, so
    exactly one correct replica delivers Alice's payment and Bob's follow-up
    payment stays held.  Run B: the commit reaches f+1 correct replicas, the
    third still never delivers it, yet Bob's representative forms a
    dependency certificate and Bob's payment settles everywhere, including at
    the replica that never saw Alice's payment.  Bob's client also rebuilds
    the certificate directly from the replicas' credit proofs.
    """
    alice = PaymentId(ALICE, 0)
    bob = PaymentId(BOB, 0)
    wa, da, wl = _partial_run(seed, 1, None)
    delivered_a = sorted(wa.settled_by.get(alice, {}))
    wb, db, _ = _partial_run(seed, 2, 1_000.0)
    delivered_b = sorted(wb.settled_by.get(alice, {}))
    bob_b = sorted(wb.settled_by.get(bob, {}))
    blind = sorted(set(bob_b) - set(delivered_b))
    rebuilt = (ALICE, 0, BOB, 50) in wb.clients[BOB].rebuilt
    findings = {
        "a_alice_delivered_at": delivered_a,
        "a_bob_settled": bob in wa.settled_by,
        "b_alice_delivered_at": delivered_b,
        "b_certificate_formed": (ALICE, 0, BOB, 50) in wb.certificates,
        "b_bob_settled_at": bob_b,
        "b_settled_without_alice": blind,
        "b_client_rebuilt_certificate": rebuilt,
    }
    ok = (len(delivered_a) == 1 and bob not in wa.settled_by and len(delivered_b) == 2
          and len(bob_b) == 3 and len(blind) == 1 and rebuilt)
    first = collect(wa, da).violations
    findings["a_violations"] = len(first)
    return _finish("partial-payment", wb, db, wl, findings, ok and not first)


def equivocation(seed: int = 1, variant: str = SIG, f: int = 1, clients: int = 10, payments: int = 40
                 ) -> ScenarioResult:
    """f equivocating replicas, 10% double-spending clients, adversarial scheduling."""
    n = 3 * f + 1
    system = SystemConfig.uniform(1, f, clients, balance=100)
    byz = {r: ("equivocate",) for r in range(f)}
    cheats = {c: "double-spend" for c in range(max(1, clients // 10))}
    plan = FaultPlan(byzantine_replicas=byz, byzantine_clients=cheats)
    cfg = RunConfig(system, variant=variant, latency=LatencyModel(adversarial=True))
    wl = gen_uniform(clients, payments, seed=seed, rate=100, max_amount=60)
    world = build(cfg, plan, wl, seed)
    drained = world.net.run(60_000.0)
    conflicts = world.conflicts
    settled_conflicts = sum(1 for pid in conflicts if pid in world.settled_by)
    evidence = sum(len(world.replicas[r].evidence) for r in range(f, n))
    findings = {"variant": variant, "conflicting_pairs": len(conflicts),
                "pairs_with_a_settle": settled_conflicts, "evidence_records": evidence}
    return _finish("equivocation", world, drained, wl, findings, drained)


def sharded_smallbank(seed: int = 1, shards: int = 4, f: int = 1, owners: int = 16, payments: int = 800
                      ) -> ScenarioResult:
    """Smallbank mix over several shards; cross-shard payments take one round."""
    system = smallbank_config(shards, f, owners, balance=1000)
    wl = gen_smallbank(owners, payments, shards, seed=seed, shard_of_owner=shard_of_owner_from_config(system))
    cfg = RunConfig(system, variant=SIG)
    world = build(cfg, None, wl, seed)
    drained = world.net.run(60_000.0)
    topo = ShardTopology.from_config(system)
    steps = count_cross_shard_steps(world.net.records, topo)
    cross = {p: e for p, e in steps.items() if e["cross_shard"]}
    m = 3 * f + 1
    step_values = sorted({e["steps"] for e in cross.values()})
    max_msgs = max((e["messages"] for e in cross.values()), default=0)
    fraction = wl.cross_shard_fraction(topo.shard_of_client)
    mismatches = world.oracle_mismatches(wl)
    findings = {"shards": shards, "cross_shard_payments": len(cross), "cross_fraction": round(fraction, 4),
                "steps": step_values, "max_cross_messages": max_msgs, "oracle_mismatches": len(mismatches)}
    ok = (drained and step_values in ([1], []) and max_msgs <= m
          and abs(fraction - 0.125) <= 0.01 and not mismatches)
    return _finish("sharded-smallbank", world, drained, wl, findings, ok)


def join(seed: int = 1, variant: str = SIG, payments: int = 1000, join_at_ms: float = 2_000.0,
         fault_plan: Optional[FaultPlan] = None, adversarial: bool = False) -> ScenarioResult:
    """A fifth replica joins a four-replica shard during a running workload."""
    system = SystemConfig.uniform(1, 1, 10, balance=1000)
    joiner = 4
    cfg = RunConfig(system, variant=variant, joins=((join_at_ms, joiner),),
                    latency=LatencyModel(adversarial=adversarial))
    wl = gen_uniform(10, payments, seed=seed, rate=250, max_amount=60)
    world = build(cfg, fault_plan, wl, seed)
    drained = world.net.run(120_000.0)
    node = world.replicas[joiner]
    mismatches = world.oracle_mismatches(wl) if not (fault_plan and (fault_plan.crashes or fault_plan.byzantine_replicas)) else []
    disagreements = world.state_disagreements()
    findings = {"join_started": node.reconfig.join_started, "join_done": node.reconfig.join_done,
                "joiner_view": node.view.vid, "oracle_mismatches": len(mismatches),
                "disagreements": len(disagreements), "stalled": len([p for p in world.submits if p not in world.quorum_settle])}
    ok = node.reconfig.join_done is not None and not mismatches and not disagreements
    return _finish("join", world, drained, wl, findings, ok)


SCENARIOS: Dict[str, Callable[..., ScenarioResult]] = {
    "robust-crash": robust_crash,
    "robust-async": robust_async,
    "partial-payment": partial_payment,
    "equivocation": equivocation,
    "sharded-smallbank": sharded_smallbank,
    "join": join,
}


def run_scenario(name: str, seed: int = 1, **params) -> ScenarioResult:
    """Run a named scenario; ``params`` the scenario does not take are ignored."""
    try:
        fn = SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
    target = robust if fn in (robust_crash, robust_async) else fn
    accepted = inspect.signature(target).parameters
    kw = {k: v for k, v in params.items() if k in accepted and v is not None}
    return fn(seed=seed, **kw)
