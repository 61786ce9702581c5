import pytest
from hypothesis import given, strategies as st

from brbpay.model import (
    PAYMENT_WIRE_SIZE,
    ConfigError,
    GapError,
    OwnershipError,
    Payment,
    PaymentId,
    SystemConfig,
    XLog,
    append_to_xlog,
    byzantine_quorum,
    certificate_threshold,
    encode_payment,
    max_faults,
    quorum_size,
    wire_image,
)


@pytest.mark.parametrize("f,q", [(0, 1), (1, 3), (2, 5), (16, 33)])
def test_quorum_is_2f_plus_1(f, q):
    assert quorum_size(3 * f + 1, f) == q
    assert byzantine_quorum(3 * f + 1, f) == q


def test_quorum_rejects_wrong_group_size():
    with pytest.raises(ConfigError):
        quorum_size(5, 1)
    with pytest.raises(ConfigError):
        byzantine_quorum(3, 1)


def test_byzantine_quorum_for_grown_view():
    # 5 members, f=1: two quorums of 4 intersect in 3 >= f+1+... correct replicas
    assert byzantine_quorum(5, 1) == 4
    assert byzantine_quorum(6, 1) == 4


@given(st.integers(1, 60))
def test_byzantine_quorums_intersect_in_a_correct_replica(n):
    f = max_faults(n)
    q = byzantine_quorum(n, f)
    assert q <= n - f  # available with f silent
    assert 2 * q - n >= f + 1


def test_certificate_threshold():
    assert certificate_threshold(1) == 2
    assert certificate_threshold(16) == 17
    with pytest.raises(ConfigError):
        certificate_threshold(-1)


def test_xlog_append_contiguous():
    log = XLog(3)
    append_to_xlog(log, Payment(3, 0, 4, 5))
    log.append(Payment(3, 1, 4, 5))
    assert len(log) == 2


def test_xlog_gap_and_owner():
    log = XLog(3)
    with pytest.raises(GapError):
        append_to_xlog(log, Payment(3, 1, 4, 5))
    with pytest.raises(OwnershipError):
        append_to_xlog(log, Payment(2, 0, 4, 5))


def test_payment_identity_and_digest():
    a = Payment(1, 0, 2, 10)
    b = Payment(1, 0, 2, 10)
    c = Payment(1, 0, 3, 10)
    assert a == b and hash(a) == hash(b)
    assert a != c
    assert a.id == PaymentId(1, 0) == c.id
    assert str(a.id) == "1:0"


def test_payment_rejects_bad_fields():
    with pytest.raises(ValueError):
        Payment(1, 0, 2, -1)
    with pytest.raises(ValueError):
        Payment(1, -1, 2, 1)


def test_wire_image_is_padded_to_nominal_size():
    p = Payment(1, 0, 2, 10)
    assert len(wire_image(p)) == PAYMENT_WIRE_SIZE
    assert wire_image(p).startswith(encode_payment(p))


def test_system_config_validation():
    with pytest.raises(ConfigError):
        SystemConfig([[0, 1, 2]], 1, {0: 0}, {0: 1})
    with pytest.raises(ConfigError):
        SystemConfig([[0, 1, 2, 3]], 1, {0: 9}, {0: 1})
    with pytest.raises(ConfigError):
        SystemConfig([[0, 1, 2, 3]], 1, {0: 0}, {0: -1})
    with pytest.raises(ConfigError):
        SystemConfig([[0, 1, 2, 3], [3, 4, 5, 6]], 1, {0: 0}, {0: 1})
    cfg = SystemConfig.uniform(2, 1, 6)
    assert cfg.shards == [[0, 1, 2, 3], [4, 5, 6, 7]]
    assert cfg.f == [1, 1]
    assert cfg.shard_index_of_replica(5) == 1
