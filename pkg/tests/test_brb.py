"""Broadcast layer in isolation, on a randomly scheduled FIFO bus."""

from hypothesis import given, settings, strategies as st

from brbpay.brb import EchoBrb, SigBrb
from brbpay.engine import Batch
from brbpay.messages import Prepare
from brbpay.model import Payment

from bus import Bus


def batch(src, amount=1):
    return Batch(src, ((src, (Payment(100 + src, 0, 200, amount),)),))


@given(seed=st.integers(0, 10_000), n=st.sampled_from([4, 7]))
@settings(max_examples=40, deadline=None)
def test_echo_delivers_everywhere_in_any_order(seed, n):
    bus = Bus(n, EchoBrb, seed=seed)
    p = batch(0)
    bus.brbs[0].broadcast(p)
    bus.drain()
    for h in bus.hosts.values():
        assert [d for _, d in h.delivered] == [p]


def test_echo_message_count():
    for n in (4, 7, 10):
        bus = Bus(n, EchoBrb)
        bus.brbs[0].broadcast(batch(0))
        bus.drain()
        assert bus.sent == (n - 1) + 2 * n * (n - 1)


@given(seed=st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_echo_fifo_per_source(seed):
    bus = Bus(4, EchoBrb, seed=seed)
    payloads = [batch(1, amount=a) for a in (1, 2, 3)]
    for p in payloads:
        bus.brbs[1].broadcast(p)
    bus.drain()
    for h in bus.hosts.values():
        assert [d for _, d in h.delivered] == payloads
        assert [s[2] for s, _ in h.delivered] == [0, 1, 2]


@given(seed=st.integers(0, 10_000), skip=st.integers(0, 3))
@settings(max_examples=60, deadline=None)
def test_echo_totality_with_partial_prepare(seed, skip):
    """Prepare misses one replica; it still delivers by pulling the payload."""
    bus = Bus(4, EchoBrb, seed=seed)
    p = batch(0)
    slot = (0, 0, 0)
    bus.brbs[0].counter[0] = 1
    for r in range(4):
        if r != skip:
            bus.post(0, r, Prepare(0, slot, p))
    bus.drain()
    for h in bus.hosts.values():
        assert [d for _, d in h.delivered] == [p]
    if skip != 0:
        assert bus.brbs[skip].instances[slot].requested


def test_echo_too_few_prepares_delivers_nowhere():
    bus = Bus(4, EchoBrb)
    for r in (1, 2):
        bus.post(0, r, Prepare(0, (0, 0, 0), batch(0)))
    bus.drain()
    assert not any(h.delivered for h in bus.hosts.values())


def test_echo_conflicting_prepare_is_evidence():
    bus = Bus(4, EchoBrb)
    slot = (0, 0, 0)
    bus.brbs[1].on_prepare(0, Prepare(0, slot, batch(0, 1)))
    bus.brbs[1].on_prepare(0, Prepare(0, slot, batch(0, 2)))
    assert ("conflicting-prepare", 0, slot) in bus.hosts[1].evidence


def test_echo_prepare_from_wrong_source():
    bus = Bus(4, EchoBrb)
    bus.brbs[1].on_prepare(2, Prepare(0, (0, 0, 0), batch(0)))
    assert bus.hosts[1].evidence[0][0] == "prepare-wrong-source"


@given(seed=st.integers(0, 10_000), n=st.sampled_from([4, 7]))
@settings(max_examples=40, deadline=None)
def test_sig_delivers_everywhere(seed, n):
    bus = Bus(n, SigBrb, seed=seed)
    p = batch(0)
    bus.brbs[0].broadcast(p)
    bus.drain()
    for h in bus.hosts.values():
        assert [d for _, d in h.delivered] == [p]


def test_sig_message_count():
    for n in (4, 7, 10):
        bus = Bus(n, SigBrb)
        bus.brbs[0].broadcast(batch(0))
        bus.drain()
        assert bus.sent == 3 * (n - 1)


def test_sig_commit_to_one_delivers_at_one():
    """No totality: whoever misses the Commit never delivers."""
    bus = Bus(4, SigBrb)
    brb0 = bus.brbs[0]
    sent = []
    brb0.send_commit = lambda commit, group: sent.append(commit)
    brb0.broadcast(batch(0))
    bus.drain()
    assert len(sent) == 1
    bus.post(0, 2, sent[0])
    bus.drain()
    got = {r for r, h in bus.hosts.items() if h.delivered}
    assert got == {2}


def test_sig_rejects_forged_certificate():
    bus = Bus(4, SigBrb)
    sent = []
    bus.brbs[0].send_commit = lambda commit, group: sent.append(commit)
    bus.brbs[0].broadcast(batch(0))
    bus.drain()
    good = sent[0]
    short = good._replace(cert=good.cert._replace(acks=good.cert.acks[:2]))
    other = good._replace(payload=batch(0, 9))
    bus.brbs[1].on_commit(0, short)
    bus.brbs[1].on_commit(0, other)
    assert not bus.hosts[1].delivered
    assert [e[0] for e in bus.hosts[1].evidence] == ["bad-commit-certificate"] * 2
    bus.brbs[1].on_commit(0, good)
    assert len(bus.hosts[1].delivered) == 1


def test_sig_rejects_unsigned_prepare():
    bus = Bus(4, SigBrb)
    bus.brbs[1].on_prepare(0, Prepare(0, (0, 0, 0), batch(0)))
    assert bus.hosts[1].evidence[0][0] == "bad-prepare-signature"


def test_sig_validation_refusal_blocks_quorum():
    bus = Bus(4, SigBrb)
    for r in (1, 2):
        bus.hosts[r].reject = True
    bus.brbs[0].broadcast(batch(0))
    bus.drain()
    assert not any(h.delivered for h in bus.hosts.values())
