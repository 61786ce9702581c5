import csv
import os

import pytest
from hypothesis import given, strategies as st

from brbpay.bench.metrics import (
    MalformedTrace,
    MetricsReport,
    max_settle_gap,
    nearest_rank,
    plot_timeline,
    report,
    settle_rate,
    write_csvs,
)
from brbpay.bench.workload import gen_uniform
from brbpay.model import SystemConfig
from brbpay.sim import RunConfig, run
from brbpay.sim.runner import Trace


def empty_trace():
    return Trace(meta={}, records=[], final_states={}, counters={}, dropped={}, settles=[], submits={},
                 quorum_settle={}, rep_settle={}, violations=[], stalled=[], drained=True, end_time=0.0)


def test_nearest_rank_examples():
    xs = [15, 20, 35, 40, 50]
    assert nearest_rank(xs, 5) == 15
    assert nearest_rank(xs, 30) == 20
    assert nearest_rank(xs, 40) == 20
    assert nearest_rank(xs, 50) == 35
    assert nearest_rank(xs, 100) == 50
    assert nearest_rank([], 95) == 0.0
    with pytest.raises(ValueError):
        nearest_rank(xs, 0)


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=200))
def test_nearest_rank_is_a_sample_and_monotone(xs):
    p95, p99 = nearest_rank(xs, 95), nearest_rank(xs, 99)
    assert p95 in xs and p99 in xs
    assert min(xs) <= p95 <= p99 <= max(xs)


def test_empty_trace_zero_report(tmp_path):
    rep = report(empty_trace())
    assert rep.settles_per_sim_second == 0
    assert rep.quorum_latency.count == 0 and rep.quorum_latency.p99 == 0
    assert rep.timeline == [] and rep.total_messages == 0
    paths = write_csvs(rep, str(tmp_path))
    assert all(os.path.exists(p) for p in paths)
    assert report(None) == MetricsReport()


@pytest.fixture(scope="module")
def small_run():
    wl = gen_uniform(8, 120, seed=4, rate=60)
    return run(RunConfig(SystemConfig.uniform(1, 1, 8)), None, wl, seed=4)


def test_latency_order_statistics(small_run):
    rep = report(small_run)
    for st_ in (rep.quorum_latency, rep.rep_latency):
        assert st_.count > 0
        assert st_.p99 >= st_.p95 >= st_.min
        assert st_.avg >= st_.min and st_.max >= st_.p99
    # the representative's own settle never comes after the quorum's
    assert rep.rep_latency.avg <= rep.quorum_latency.avg


def test_report_counts(small_run):
    rep = report(small_run)
    assert rep.messages == small_run.counters
    assert sum(rep.replica_settles.values()) == len(small_run.settles)
    assert rep.stalled == len(small_run.stalled)
    total = sum(r["settles_per_sim_second"] for r in rep.timeline)
    assert total == len(small_run.quorum_settle)
    assert rep.shard_settles_per_sim_second[0] == pytest.approx(rep.settles_per_sim_second)


def test_report_is_deterministic(small_run, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    write_csvs(report(small_run), str(a))
    write_csvs(report(small_run), str(b))
    for name in os.listdir(a):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    with open(a / "summary.csv") as fh:
        row = next(csv.DictReader(fh))
    assert int(row["quorum_count"]) == len(small_run.quorum_settle)


def test_windows(small_run):
    end = max(small_run.quorum_settle.values()) + 1
    assert settle_rate(small_run, 0, end) == pytest.approx(len(small_run.quorum_settle) * 1000 / end)
    assert 0 < max_settle_gap(small_run, 0, end) <= end


def test_malformed_trace():
    t = empty_trace()
    t.quorum_settle["1:0"] = 5.0
    with pytest.raises(MalformedTrace):
        report(t)
    t.submits["1:0"] = 9.0
    with pytest.raises(MalformedTrace):
        report(t)


def test_plot_png(small_run, tmp_path):
    path = plot_timeline(report(small_run), str(tmp_path / "t.png"))
    with open(path, "rb") as fh:
        assert fh.read(8) == b"\x89PNG\r\n\x1a\n"
