import pytest

from brbpay.bench.scenarios import SCENARIOS, robust, run_scenario


def test_partial_payment():
    res = run_scenario("partial-payment", seed=4)
    f = res.findings
    assert len(f["a_alice_delivered_at"]) == 1 and not f["a_bob_settled"]
    assert f["b_certificate_formed"] and len(f["b_settled_without_alice"]) == 1
    assert f["b_client_rebuilt_certificate"]
    assert res.ok


@pytest.mark.parametrize("variant", ["echo", "sig"])
def test_equivocation(variant):
    res = run_scenario("equivocation", seed=2, variant=variant)
    assert res.ok and res.findings["conflicting_pairs"] > 0


def test_sharded_smallbank_two_shards():
    res = run_scenario("sharded-smallbank", seed=1, shards=2, payments=400)
    assert res.ok
    assert res.findings["steps"] == [1]
    assert res.findings["max_cross_messages"] <= 4


def test_join():
    res = run_scenario("join", seed=5, payments=300)
    assert res.ok and res.findings["joiner_view"] == 1


def test_robust_small_scale():
    """Shape check at N=7 with two representatives; full scale is in the acceptance suite."""
    res = robust("crash", seed=1, f=2, clients=2, rate=10, batch_delay_ms=100)
    # one of two representatives gone: roughly half the rate survives
    assert 0.4 <= res.findings["ratio"] <= 0.6
    assert res.findings["violations"] == 0


def test_unknown_scenario():
    with pytest.raises(ValueError):
        run_scenario("nope")
    assert len(SCENARIOS) == 6
