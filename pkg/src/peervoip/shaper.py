"""Token-bucket link shaping for the benchmark harness.

The shaper sits at the socket-wrapper layer so every traffic class
(signaling, media, file chunks) shares one bandwidth budget, the way a
real access link would.  All decisions (wait time, drop, added latency)
are recorded in an event trace so a fixed seed plus a fixed scenario is
bit-reproducible.
"""

from __future__ import annotations

import random
import threading
import time
from dataclasses import dataclass, field


class TokenBucket:
    """Classic token bucket: ``consume(n)`` returns the seconds to wait.

    Tokens refill at ``rate_bps / 8`` bytes per second up to ``capacity``
    bytes.  Requests larger than the capacity are allowed; they just wait
    for the full refill.  Deterministic given the clock readings.
    """

    def __init__(self, rate_bps: float, capacity: int = 64 * 1024, clock=time.monotonic):
        if rate_bps <= 0:
            raise ValueError("rate must be positive")
        self.rate_bps = rate_bps
        self.capacity = capacity
        self._clock = clock
        self._tokens = float(capacity)
        self._last = clock()
        self._lock = threading.Lock()

    def consume(self, nbytes: int) -> float:
        with self._lock:
            now = self._clock()
            self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate_bps / 8.0)
            self._last = now
            if self._tokens >= nbytes:
                self._tokens -= nbytes
                return 0.0
            deficit = nbytes - self._tokens
            wait = deficit * 8.0 / self.rate_bps
            self._tokens = 0.0
            self._last = now + wait  # pre-charge: tokens are spoken for until then
            return wait


@dataclass
class ShapedLink:
    """Per-link shaping policy: rate limit, fixed added latency, seeded drops."""

    rate_bps: float | None = 2_000_000
    capacity: int = 64 * 1024
    latency_ms: float = 0.0
    drop_probability: float = 0.0
    seed: int = 0
    # per-packet framing cost a real link pays: TCP/IP headers plus
    # Ethernet preamble, header, FCS and interframe gap
    mtu: int = 1448
    per_packet_overhead: int = 90
    clock: object = time.monotonic
    sleep: object = time.sleep
    trace: list = field(default_factory=list)

    def __post_init__(self):
        self._bucket = TokenBucket(self.rate_bps, self.capacity, self.clock) if self.rate_bps else None
        self._rng = random.Random(self.seed)
        self._pkt = 0

    def wire_bytes(self, nbytes: int) -> int:
        """Payload plus the framing bytes it costs on the wire."""
        if nbytes <= 0 or self.per_packet_overhead <= 0:
            return nbytes
        packets = (nbytes + self.mtu - 1) // self.mtu
        return nbytes + packets * self.per_packet_overhead

    def throttle(self, nbytes: int) -> float:
        """Block until the bucket admits nbytes; returns the wait applied."""
        wait = self._bucket.consume(self.wire_bytes(nbytes)) if self._bucket else 0.0
        self.trace.append(("send", self._pkt, nbytes, round(wait, 6)))
        self._pkt += 1
        if wait > 0:
            self.sleep(wait)
        return wait

    def admit_datagram(self, nbytes: int) -> bool:
        """Drop decision for an unreliable datagram (seeded, deterministic)."""
        dropped = self.drop_probability > 0 and self._rng.random() < self.drop_probability
        self.trace.append(("datagram", self._pkt, nbytes, dropped))
        self._pkt += 1
        return not dropped

    def delay_datagram(self, deliver) -> None:
        """Run ``deliver`` after the configured one-way latency."""
        if self.latency_ms <= 0:
            deliver()
        else:
            timer = threading.Timer(self.latency_ms / 1000.0, deliver)
            timer.daemon = True
            timer.start()
