import pytest

from brbpay.model import ConfigError, Payment, SystemConfig
from brbpay.reconfig import InstallRecord, ReconfigError, View, adopt_logs, vouched_pending
from brbpay.sim import FaultPlan, LatencyModel, RunConfig, build, collect
from brbpay.bench.workload import gen_uniform


def test_view_quorum_and_extension():
    v = View(0, (0, 1, 2, 3), 1)
    assert v.quorum == 3
    w = v.extended(4)
    assert (w.vid, w.members, w.f, w.quorum) == (1, (0, 1, 2, 3, 4), 1, 4)
    with pytest.raises(ConfigError):
        View(0, (0, 1, 2), 1)
    with pytest.raises(ConfigError):
        View(0, (0, 0, 1, 2), 0)


def test_install_record_digest():
    a = InstallRecord(1, (0, 1, 2, 3, 4), 4, 4)
    assert a.digest == InstallRecord(1, (0, 1, 2, 3, 4), 4, 4).digest
    assert a.digest != InstallRecord(1, (0, 1, 2, 3, 5), 5, 5).digest


def log(*amounts, owner=0):
    return [Payment(owner, i, 1, a) for i, a in enumerate(amounts)]


def test_adopt_longest_prefix_vouched_by_f_plus_1():
    snaps = [{0: log(1, 2, 3)}, {0: log(1, 2)}, {0: log(1)}]
    assert adopt_logs(snaps, 1)[0] == log(1, 2)


def test_adopt_ignores_forged_suffix():
    forged = {0: log(1, 2) + [Payment(0, 2, 0, 1)]}
    snaps = [forged, {0: log(1, 2)}, {0: log(1, 2)}]
    assert adopt_logs(snaps, 1)[0] == log(1, 2)


def test_adopt_needs_agreement_on_each_entry():
    snaps = [{0: log(1, 5)}, {0: log(1, 6)}, {0: log(1)}]
    assert adopt_logs(snaps, 1)[0] == log(1)
    assert adopt_logs([{0: log(1)}], 1)[0] == []


def test_vouched_pending():
    p, q = Payment(0, 3, 1, 1), Payment(2, 0, 1, 1)
    snaps = [{0: [p]}, {0: [p], 2: [q]}, {}]
    assert vouched_pending(snaps, 1) == [p]


def join_world(seed=1, variant="sig", joins=((500.0, 4),), plan=None, payments=200):
    cfg = RunConfig(SystemConfig.uniform(1, 1, 10, balance=1000), variant=variant, joins=joins,
                    latency=LatencyModel(adversarial=seed % 2 == 1))
    wl = gen_uniform(10, payments, seed=seed, rate=250, max_amount=60)
    world = build(cfg, plan, wl, seed)
    drained = world.net.run(60_000.0)
    return world, wl, collect(world, drained)


@pytest.mark.parametrize("variant", ["echo", "sig"])
@pytest.mark.parametrize("seed", [1, 2])
def test_join_mid_workload(variant, seed):
    world, wl, trace = join_world(seed, variant)
    j = world.replicas[4]
    assert j.reconfig.join_done is not None
    assert trace.violations == []
    assert world.oracle_mismatches(wl) == []
    assert world.state_disagreements() == []
    assert all(world.replicas[r].view.vid == 1 for r in range(5))


def test_concurrent_joins_serialize():
    world, wl, trace = join_world(3, "sig", joins=((500.0, 4), (500.0, 5)))
    for r in (4, 5):
        assert world.replicas[r].reconfig.join_done is not None
    assert world.replicas[0].view.vid == 2
    assert world.replicas[0].view.members == (0, 1, 2, 3, 4, 5)
    assert trace.violations == [] and world.state_disagreements() == []


def test_join_with_forged_snapshot():
    plan = FaultPlan(byzantine_replicas={2: ("forge-snapshot",)})
    world, wl, trace = join_world(2, "echo", plan=plan)
    j = world.replicas[4]
    assert j.reconfig.join_done is not None
    ref = world.replicas[0].engine.xlogs
    for c, entries in j.reconfig.adopted.items():
        assert [p.tuple() for p in entries] == [p.tuple() for p in ref[c].entries[:len(entries)]]
    assert world.state_disagreements() == []


def test_join_with_crashed_member():
    world, wl, trace = join_world(2, "sig", plan=FaultPlan(crashes={3: 0.0}))
    assert world.replicas[4].reconfig.join_done is not None
    assert trace.violations == [] and world.state_disagreements() == []


def test_transfer_and_resume_guard_quorums():
    world, _, _ = join_world(1, "sig", payments=5)
    rc = world.replicas[0].reconfig
    rc.snapshots = {}
    with pytest.raises(ReconfigError):
        rc.transfer_state(world.replicas[0].view)
    rc.installing = world.replicas[0].view.extended(9)
    with pytest.raises(ReconfigError):
        rc.resume({})
