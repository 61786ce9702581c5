import pytest

from brbpay.messages import Echo
from brbpay.sim import FaultPlan, LatencyModel, Network
from brbpay.shard import ShardTopology
from brbpay.model import SystemConfig


class Sink:
    def __init__(self, net):
        self.net = net
        self.got = []

    def receive(self, src, msg, auth):
        self.got.append((self.net.now, src, msg.slot[2]))


def make(seed=1, **kw):
    net = Network(seed, **kw)
    sinks = {r: Sink(net) for r in range(3)}
    for r, s in sinks.items():
        net.add_node(r, s)
    return net, sinks


def msg(k):
    return Echo(0, (0, 0, k), b"")


def test_per_link_fifo_under_adversarial_latency():
    net, sinks = make(latency=LatencyModel(adversarial=True))
    for k in range(200):
        net.send(0, 1, msg(k))
    assert net.run(10_000)
    assert [k for _, _, k in sinks[1].got] == list(range(200))


def test_cross_link_reordering_happens():
    net, sinks = make(seed=3, latency=LatencyModel(adversarial=True))
    for k in range(50):
        net.send(0, 1, msg(k))
        net.send(2, 1, msg(1000 + k))
    net.run(10_000)
    srcs = [s for _, s, _ in sinks[1].got]
    assert srcs != sorted(srcs) and srcs != sorted(srcs, reverse=True)


def test_same_seed_same_schedule():
    def go():
        net, sinks = make(seed=7, latency=LatencyModel(adversarial=True))
        for k in range(30):
            net.send(k % 3, (k + 1) % 3, msg(k))
        net.run(10_000)
        return [s.got for s in sinks.values()]

    assert go() == go()


def test_crash_drops_after_time():
    plan = FaultPlan(crashes={1: 50.0})
    net, sinks = make(faults=plan)
    net.send(0, 1, msg(0))
    net.at(60.0, 0, lambda: net.send(0, 1, msg(1)))
    net.run(1_000)
    assert [k for _, _, k in sinks[1].got] == [0]
    assert net.dropped["ECHO"] == 1


def test_delay_adds_latency_on_both_directions():
    plan = FaultPlan(delays={1: (0.0, 100.0)})
    net, sinks = make(faults=plan, latency=LatencyModel(mean_ms=10, jitter=0))
    net.send(0, 1, msg(0))
    net.send(1, 2, msg(1))
    net.send(0, 2, msg(2))
    net.run(1_000)
    assert sinks[1].got[0][0] == pytest.approx(110.0)
    assert sinks[2].got == [(10.0, 0, 2), (110.0, 1, 1)]


def test_uniform_shift_of_all_latencies():
    base = LatencyModel(mean_ms=10, jitter=0)
    shifted = LatencyModel(mean_ms=30, jitter=0)
    for model, want in ((base, 10.0), (shifted, 30.0)):
        net, sinks = make(latency=model)
        net.send(0, 2, msg(0))
        net.run(1_000)
        assert sinks[2].got[0][0] == want


def test_self_messages_are_free():
    net, sinks = make()
    net.send(1, 1, msg(0))
    net.run(10)
    assert sum(net.counters.values()) == 0
    assert sinks[1].got == [(0.0, 1, 0)]


def test_horizon_stops_early():
    net, _ = make(latency=LatencyModel(mean_ms=10, jitter=0))
    net.send(0, 1, msg(0))
    assert not net.run(5)
    assert net.now == 5


def test_fault_plan_bound_per_shard():
    topo = ShardTopology.from_config(SystemConfig.uniform(1, 1, 2))
    with pytest.raises(ValueError):
        FaultPlan(crashes={0: 1.0}, byzantine_replicas={1: ("silent",)}).check(topo)
    FaultPlan(crashes={0: 1.0}, byzantine_replicas={1: ("silent",)}, beyond_f=True).check(topo)


def test_fault_plan_dict_roundtrip():
    plan = FaultPlan(crashes={1: 5.0}, delays={2: (1.0, 100.0)}, byzantine_replicas={3: ("withhold",)},
                     byzantine_clients={4: "double-spend"})
    assert FaultPlan.from_dict(plan.to_dict()) == plan
