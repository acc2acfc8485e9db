"""Token bucket math and trace determinism."""

import pytest

from peervoip.shaper import ShapedLink, TokenBucket


class FakeClock:
    def __init__(self):
        self.now = 0.0

    def __call__(self):
        return self.now

    def sleep(self, seconds):
        self.now += seconds


def test_bucket_starts_full_then_rate_limits():
    clock = FakeClock()
    bucket = TokenBucket(rate_bps=8000, capacity=1000, clock=clock)  # 1000 B/s
    assert bucket.consume(1000) == 0.0  # the initial burst is free
    wait = bucket.consume(500)
    assert wait == pytest.approx(0.5)


def test_sustained_throughput_matches_rate_within_two_percent():
    clock = FakeClock()
    rate_bps = 2_000_000
    link = ShapedLink(rate_bps=rate_bps, capacity=64 * 1024, per_packet_overhead=0,
                      clock=clock, sleep=clock.sleep)
    total_bytes = 2_500_000
    sent = 0
    while sent < total_bytes:
        n = min(64 * 1024, total_bytes - sent)
        link.throttle(n)
        sent += n
    elapsed = clock.now
    ideal = (total_bytes - 64 * 1024) * 8.0 / rate_bps  # initial burst is free
    assert elapsed == pytest.approx(ideal, rel=0.02)


def test_precharge_accounts_for_queued_waits():
    clock = FakeClock()
    bucket = TokenBucket(rate_bps=8000, capacity=100, clock=clock)
    bucket.consume(100)
    w1 = bucket.consume(100)  # owes 100 bytes: 0.1 s
    w2 = bucket.consume(100)  # queued behind the first: 0.2 s
    assert w1 == pytest.approx(0.1)
    assert w2 == pytest.approx(0.2)


def test_oversized_request_allowed_with_long_wait():
    clock = FakeClock()
    bucket = TokenBucket(rate_bps=8000, capacity=100, clock=clock)
    bucket.consume(100)
    wait = bucket.consume(10_000)
    assert wait == pytest.approx(10.0)


def test_framing_overhead_charged_per_packet():
    link = ShapedLink(rate_bps=None, mtu=1000, per_packet_overhead=50)
    assert link.wire_bytes(1) == 51
    assert link.wire_bytes(1000) == 1050
    assert link.wire_bytes(1001) == 1101
    assert link.wire_bytes(0) == 0
    bare = ShapedLink(rate_bps=None, per_packet_overhead=0)
    assert bare.wire_bytes(5000) == 5000


def test_rate_must_be_positive():
    with pytest.raises(ValueError):
        TokenBucket(rate_bps=0)


def test_drop_decisions_are_seed_deterministic():
    def trace_for(seed):
        link = ShapedLink(rate_bps=None, drop_probability=0.3, seed=seed)
        for i in range(200):
            link.admit_datagram(100 + i)
        return link.trace

    assert trace_for(7) == trace_for(7)
    assert trace_for(7) != trace_for(8)


def test_zero_drop_probability_never_drops():
    link = ShapedLink(rate_bps=None, drop_probability=0.0, seed=1)
    assert all(link.admit_datagram(100) for _ in range(100))


def test_trace_records_sends_and_datagrams():
    clock = FakeClock()
    link = ShapedLink(rate_bps=8000, capacity=1000, clock=clock, sleep=clock.sleep,
                      drop_probability=1.0, seed=0)
    link.throttle(500)
    link.admit_datagram(200)
    assert link.trace[0][0] == "send"
    assert link.trace[1] == ("datagram", 1, 200, True)


def test_delay_datagram_immediate_when_no_latency():
    link = ShapedLink(rate_bps=None, latency_ms=0.0)
    fired = []
    link.delay_datagram(lambda: fired.append(1))
    assert fired == [1]


def test_delay_datagram_defers_with_latency():
    import threading

    link = ShapedLink(rate_bps=None, latency_ms=20.0)
    done = threading.Event()
    link.delay_datagram(done.set)
    assert not done.is_set()  # not synchronous
    assert done.wait(1.0)
