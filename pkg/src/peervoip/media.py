"""Voice pipeline: framing, encryption glue, jitter buffer, QoS counters.

The codec is fixed at PCM16 mono, 16 kHz, 20 ms frames (320 samples,
640 bytes).  A compressing codec can be slotted in later behind the
payload-type field.

The sealed media payload is an 8-byte capture timestamp (sender wall
clock, ms, already corrected onto the server clock) followed by the raw
PCM frame, so the receiver can measure mouth-to-ear delay without a
side channel.  The 16-byte frame header rides as AEAD associated data,
which makes header tampering detectable too.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

from . import crypto, wire
from .errors import AuthenticationFailure, Malformed, NoActiveCall

SAMPLE_RATE = 16000
CHANNELS = 1
SAMPLE_WIDTH = 2
FRAME_MS = 20
SAMPLES_PER_FRAME = SAMPLE_RATE * FRAME_MS // 1000  # 320
FRAME_BYTES = SAMPLES_PER_FRAME * SAMPLE_WIDTH  # 640
PAYLOAD_TYPE_PCM16 = 0

SILENCE_FRAME = b"\x00" * FRAME_BYTES


def sine_source(freq: float = 440.0, amplitude: float = 0.5):
    """Endless generator of PCM16 frames carrying a sine tone."""
    phase = 0.0
    step = 2 * math.pi * freq / SAMPLE_RATE
    peak = int(32767 * amplitude)
    while True:
        samples = [int(peak * math.sin(phase + step * i)) for i in range(SAMPLES_PER_FRAME)]
        phase += step * SAMPLES_PER_FRAME
        yield struct.pack("<%dh" % SAMPLES_PER_FRAME, *samples)


def chirp_source(f0: float = 200.0, f1: float = 3000.0, sweep_s: float = 2.0):
    """Frequency sweep, handy for spotting dropped or reordered audio."""
    t = 0.0
    dt = 1.0 / SAMPLE_RATE
    while True:
        samples = []
        for _ in range(SAMPLES_PER_FRAME):
            frac = (t % sweep_s) / sweep_s
            freq = f0 + (f1 - f0) * frac
            samples.append(int(16000 * math.sin(2 * math.pi * freq * t)))
            t += dt
        yield struct.pack("<%dh" % SAMPLES_PER_FRAME, *samples)


def silence_source():
    while True:
        yield SILENCE_FRAME


class SequenceUnwrapper:
    """Extends 16-bit wrapping sequence numbers to a monotonic 64-bit space."""

    def __init__(self):
        self._last_ext: int | None = None

    def unwrap(self, seq: int) -> int:
        if self._last_ext is None:
            self._last_ext = seq
            return seq
        delta = (seq - self._last_ext) & 0xFFFF
        if delta >= 0x8000:
            delta -= 0x10000
        ext = self._last_ext + delta
        if ext > self._last_ext:
            self._last_ext = ext
        return ext


@dataclass
class JitterStats:
    late_count: int = 0
    lost_count: int = 0
    duplicate_count: int = 0


class JitterBuffer:
    """Fixed-depth reorder buffer.

    One frame out per tick: the expected sequence if buffered, otherwise a
    silence frame counted as lost.  Playout starts once ``depth`` frames
    have accumulated; before that, ticks emit priming silence that is not
    counted as loss.  Memory is bounded at ``depth + 1`` frames; on
    overflow the highest-sequence frame is evicted and surfaces as loss
    when its slot is played.
    """

    def __init__(self, depth: int = 2):
        self.depth = depth
        self.stats = JitterStats()
        self._frames: dict[int, bytes] = {}
        self._expected: int | None = None
        self._primed = False

    def push(self, ext_seq: int, pcm: bytes) -> None:
        if self._expected is not None and ext_seq < self._expected:
            if self._primed:
                self.stats.late_count += 1
                return
            self._expected = ext_seq  # still priming: playout starts earlier
        if ext_seq in self._frames:
            self.stats.duplicate_count += 1
            return
        self._frames[ext_seq] = pcm
        if self._expected is None:
            self._expected = ext_seq
        while len(self._frames) > self.depth + 1:
            del self._frames[max(self._frames)]

    def tick(self) -> bytes:
        if not self._primed:
            if self._expected is None or len(self._frames) < self.depth:
                return SILENCE_FRAME
            self._primed = True
        assert self._expected is not None
        pcm = self._frames.pop(self._expected, None)
        self._expected += 1
        if pcm is None:
            self.stats.lost_count += 1
            return SILENCE_FRAME
        return pcm

    def buffered(self) -> int:
        return len(self._frames)


@dataclass
class CallStats:
    frames_sent: int = 0
    frames_received: int = 0
    lost_count: int = 0
    late_count: int = 0
    duplicate_count: int = 0
    delay_ms: float | None = None  # smoothed mouth-to-ear estimate
    jitter_ms: float = 0.0
    delay_samples: list = field(default_factory=list)
    _last_transit: float | None = None

    @property
    def loss_ratio(self) -> float:
        expected = self.frames_received + self.lost_count
        if expected == 0:
            return 0.0
        return self.lost_count / expected

    def record_delay(self, one_way_ms: float) -> None:
        self.delay_samples.append(one_way_ms)
        if self.delay_ms is None:
            self.delay_ms = one_way_ms
        else:
            self.delay_ms += 0.1 * (one_way_ms - self.delay_ms)

    def record_transit(self, arrival_ms: float, media_timestamp: int) -> None:
        # RFC 3550 style interarrival jitter, in ms
        transit = arrival_ms - media_timestamp * 1000.0 / SAMPLE_RATE
        if self._last_transit is not None:
            d = abs(transit - self._last_transit)
            self.jitter_ms += (d - self.jitter_ms) / 16.0
        self._last_transit = transit

    def median_delay(self) -> float | None:
        if not self.delay_samples:
            return None
        s = sorted(self.delay_samples)
        return s[len(s) // 2]

    def snapshot(self) -> dict:
        return {
            "frames_sent": self.frames_sent,
            "frames_received": self.frames_received,
            "lost": self.lost_count,
            "late": self.late_count,
            "duplicates": self.duplicate_count,
            "loss_ratio": self.loss_ratio,
            "delay_ms": self.delay_ms,
            "median_delay_ms": self.median_delay(),
            "jitter_ms": self.jitter_ms,
        }


class Packetizer:
    """Sender half of the media pipeline: PCM frame in, sealed datagram out."""

    def __init__(
        self,
        keys: crypto.SessionKeys,
        source_id: int,
        initial_seq: int = 0,
        initial_ts: int = 0,
    ):
        if keys is None:
            raise NoActiveCall("no session keys established")
        self._keys = keys
        self.source_id = source_id & 0xFFFFFFFF
        self.initial_seq = initial_seq
        self._next_seq = initial_seq  # unwrapped
        self._ts = initial_ts
        self._guard = crypto.NonceGuard()

    def packetize(self, pcm: bytes, capture_wall_ms: int) -> bytes:
        if len(pcm) != FRAME_BYTES:
            raise Malformed(f"PCM frame must be {FRAME_BYTES} bytes, got {len(pcm)}")
        ext_seq = self._next_seq
        seq = ext_seq & 0xFFFF
        epoch = (ext_seq >> 16) & 0xFFFF
        ts = self._ts & 0xFFFFFFFF
        self._guard.check(epoch, seq)
        header = wire.media_header(PAYLOAD_TYPE_PCM16, seq, ts, self.source_id)
        nonce = crypto.frame_nonce(self.source_id, epoch, seq, ts)
        plaintext = struct.pack(">Q", capture_wall_ms & 0xFFFFFFFFFFFFFFFF) + pcm
        ciphertext = crypto.seal(self._keys.send_key, nonce, plaintext, aad=header)
        self._next_seq += 1
        self._ts += SAMPLES_PER_FRAME
        return header + ciphertext


class Depacketizer:
    """Receiver half: datagram in, (extended seq, capture time, PCM) out."""

    def __init__(self, keys: crypto.SessionKeys):
        self._keys = keys
        self._unwrap = SequenceUnwrapper()

    def depacketize(self, datagram: bytes) -> tuple[int, int, int, bytes]:
        frame = wire.decode_media_frame(datagram)
        ext_seq = self._unwrap.unwrap(frame.sequence)
        epoch = (ext_seq >> 16) & 0xFFFF
        header = datagram[: wire.MEDIA_HEADER_LEN]
        nonce = crypto.frame_nonce(frame.source_id, epoch, frame.sequence, frame.timestamp)
        plaintext = crypto.open_sealed(self._keys.receive_key, nonce, frame.ciphertext, aad=header)
        if len(plaintext) != 8 + FRAME_BYTES:
            raise AuthenticationFailure("unexpected media payload size")
        (capture_ms,) = struct.unpack_from(">Q", plaintext, 0)
        return ext_seq, frame.timestamp, capture_ms, plaintext[8:]
