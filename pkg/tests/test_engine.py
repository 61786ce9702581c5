import random

import pytest
from hypothesis import given, settings, strategies as st

from brbpay.crypto import Signature, replica_party
from brbpay.engine import (
    APPROVED,
    ECHO,
    INSUFFICIENT,
    SEQ_GAP,
    SIG,
    PaymentEngine,
    Representative,
    make_batches,
)
from brbpay.model import CreditMessage, DependencyCertificate, Payment
from brbpay.sim.oracle import oracle_apply


def cert(spender, seq, beneficiary, amount, signers=(0, 1)):
    t = (spender, seq, beneficiary, amount)
    proofs = tuple(CreditMessage(r, (t,), Signature(replica_party(r), b"s")) for r in signers)
    return DependencyCertificate(t, proofs)


def test_echo_funded_payment_settles_and_deposits():
    e = PaymentEngine(ECHO, {0: 10, 1: 0})
    out = e.deliver([Payment(0, 0, 1, 7)])
    assert [p.tuple() for p in out] == [(0, 0, 1, 7)]
    assert e.bal == {0: 3, 1: 7}
    assert e.next_seq[0] == 1
    assert not e.violations


def test_echo_unfunded_blocks_until_funded():
    # A pays B 10 with nothing; B pays A 10 with 10: both settle at the fixpoint
    e = PaymentEngine(ECHO, {0: 0, 1: 10})
    assert e.deliver([Payment(0, 0, 1, 10)]) == []
    assert e.head_blocked(0) == INSUFFICIENT
    out = e.deliver([Payment(1, 0, 0, 10)])
    assert [p.id for p in out] == [(1, 0), (0, 0)]
    assert e.bal == {0: 0, 1: 10}


def test_out_of_order_delivery_waits_for_gap():
    e = PaymentEngine(ECHO, {0: 10, 1: 0})
    assert e.deliver([Payment(0, 1, 1, 1)]) == []
    assert e.head_blocked(0) == SEQ_GAP
    out = e.deliver([Payment(0, 0, 1, 1)])
    assert [p.seq for p in out] == [0, 1]


def test_approve_statuses():
    e = PaymentEngine(ECHO, {0: 5, 1: 0})
    assert e.approve(Payment(0, 0, 1, 5)) == APPROVED
    assert e.approve(Payment(0, 0, 1, 6)) == INSUFFICIENT
    assert e.approve(Payment(0, 1, 1, 1)) == SEQ_GAP


def test_conflicting_payload_is_a_violation():
    e = PaymentEngine(ECHO, {0: 10, 1: 0, 2: 0})
    e.deliver([Payment(0, 0, 1, 1)])
    e.deliver([Payment(0, 0, 2, 1)])
    assert any("conflicting" in v for v in e.violations)
    assert e.bal[2] == 0


def test_redelivery_is_idempotent():
    e = PaymentEngine(ECHO, {0: 10, 1: 0})
    p = Payment(0, 0, 1, 4)
    e.deliver([p])
    assert e.deliver([p]) == []
    assert e.bal == {0: 6, 1: 4}


def test_sig_settle_withdraws_only():
    e = PaymentEngine(SIG, {0: 10, 1: 0})
    e.deliver([Payment(0, 0, 1, 4)])
    assert e.bal == {0: 6, 1: 0}
    assert e.spent_total == 4
    assert not e.violations


def test_sig_dependency_certificate_funds_spender():
    e = PaymentEngine(SIG, {0: 0, 1: 0})
    c = cert(5, 0, 0, 30)
    out = e.deliver([Payment(0, 0, 1, 20, (c,))])
    assert len(out) == 1
    assert e.bal[0] == 10
    assert e.used_deps[0] == {c.pid}
    # a certificate is counted once even if attached again
    e.deliver([Payment(0, 1, 1, 20, (c,))])
    assert e.next_seq[0] == 1
    assert e.bal[0] == 10
    assert not e.violations


def test_sig_rejects_certificate_for_someone_else():
    e = PaymentEngine(SIG, {0: 0, 1: 0})
    e.deliver([Payment(0, 0, 1, 5, (cert(5, 0, 1, 30),))])
    assert e.next_seq[0] == 0


def test_sig_cert_check_hook():
    e = PaymentEngine(SIG, {0: 0, 1: 0}, cert_ok=lambda c: False)
    e.deliver([Payment(0, 0, 1, 5, (cert(5, 0, 0, 30),))])
    assert e.next_seq[0] == 0 and e.bal[0] == 0


def test_make_batches_groups_by_destination_representative():
    rep_of = {0: 0, 1: 1, 2: 1, 3: 2}
    pay = [Payment(0, i, b, 1) for i, b in enumerate([1, 3, 2, 1])]
    (b,) = make_batches(0, pay, rep_of)
    assert [d for d, _ in b.sub_batches] == [1, 2]
    assert [p.beneficiary for p in b.sub_batches[0][1]] == [1, 2, 1]
    assert len(make_batches(0, pay, rep_of, max_batch=3)) == 2
    with pytest.raises(ValueError):
        make_batches(0, pay, rep_of, max_batch=0)


def test_batch_digest_covers_grouping():
    rep_of = {1: 1, 2: 2}
    a = make_batches(0, [Payment(0, 0, 1, 1)], rep_of)[0]
    b = make_batches(0, [Payment(0, 0, 2, 1)], rep_of)[0]
    assert a.digest != b.digest


def test_representative_orders_and_rejects_conflicts():
    d = Representative(0, ECHO, [0], {0: 10})
    assert d.submit(Payment(0, 1, 1, 1))
    assert d.outbox == []
    assert d.submit(Payment(0, 0, 1, 1))
    assert [p.seq for p in d.take_outbox()] == [0, 1]
    assert not d.submit(Payment(0, 0, 2, 1))
    assert d.rejected[-1][0] == "conflicting-submission"
    assert not d.submit(Payment(9, 0, 1, 1))
    assert d.rejected[-1][0] == "not-representative"


def test_representative_holds_until_certificate():
    d = Representative(1, SIG, [1], {1: 0})
    d.submit(Payment(1, 0, 2, 50))
    assert d.outbox == [] and d.unsent() == 1
    t = (0, 0, 1, 50)
    threshold = lambda spender: 2
    p0 = CreditMessage(0, (t,), Signature(replica_party(0), b"a"))
    assert d.on_credit(p0, threshold) == []
    assert d.on_credit(p0, threshold) == []  # same signer twice does not count
    p1 = CreditMessage(2, (t,), Signature(replica_party(2), b"b"))
    formed = d.on_credit(p1, threshold)
    assert [c.payment for c in formed] == [t]
    (out,) = d.take_outbox()
    assert [c.payment for c in out.deps] == [t]
    # a late third credit does not form a second certificate
    p2 = CreditMessage(3, (t,), Signature(replica_party(3), b"c"))
    assert d.on_credit(p2, threshold) == []


def _random_workload(rng, n_clients, n_payments, max_amount):
    seq = {}
    out = []
    for _ in range(n_payments):
        s = rng.randrange(n_clients)
        b = rng.randrange(n_clients - 1)
        b = b if b < s else b + 1
        out.append((s, seq.get(s, 0), b, rng.randint(1, max_amount)))
        seq[s] = seq.get(s, 0) + 1
    return out


@given(seed=st.integers(0, 100_000), n_clients=st.integers(2, 6), n=st.integers(1, 40))
@settings(max_examples=150, deadline=None)
def test_echo_engine_matches_oracle_under_any_interleaving(seed, n_clients, n):
    rng = random.Random(seed)
    payments = _random_workload(rng, n_clients, n, 30)
    init = {c: rng.randint(0, 40) for c in range(n_clients)}
    # per-spender order is preserved by broadcast FIFO; spenders interleave freely
    queues = {}
    for t in payments:
        queues.setdefault(t[0], []).append(Payment(*t))
    e = PaymentEngine(ECHO, init)
    while queues:
        c = rng.choice(sorted(queues))
        e.deliver([queues[c].pop(0)])
        if not queues[c]:
            del queues[c]
    want = oracle_apply(payments, init)
    assert e.bal == want.balances
    assert e.next_seq == want.next_seq
    assert {c: [p.tuple() for p in log.entries] for c, log in e.xlogs.items()} == want.xlogs
    assert not e.violations
