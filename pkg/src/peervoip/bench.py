"""Benchmark harness: measured numbers next to published reference numbers.

Every reported row carries the reference value it is judged against and
an acceptance range; a row without both is marked failed so the harness
cannot silently report an unanchored number.

Scenarios spin up a real signaling server plus two node daemons inside
one process, with link shaping applied at the daemon socket layer where
a rate-limited access link would sit.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field

from . import crypto, media
from .daemon import DaemonConfig, NodeDaemon
from .server import ServerConfig, SignalServer
from .shaper import ShapedLink


class PaperReference:
    """Published comparison points the rows are anchored to."""

    SKYPE_VOICE_DELAY_MS = 22.0
    REFERENCE_VOICE_DELAY_MS = 31.0
    VOICE_DELAY_RANGE_MS = (20.0, 80.0)
    PIPELINE_BUDGET_MS = 5.0

    FILE_SIZE_BYTES = 2_500_000  # the 2.5 MB comparison file
    LINK_RATE_BPS = 2_000_000
    SKYPE_UPLOAD_S = 16.0
    SKYPE_DOWNLOAD_S = 11.0
    REFERENCE_UPLOAD_S = 19.0
    REFERENCE_DOWNLOAD_S = 13.0
    UPLOAD_RANGE_S = (10.0, 25.0)
    DOWNLOAD_RANGE_S = (10.0, 20.0)
    MAX_TESTED_FILE_BYTES = 20 * 1024 * 1024

    STRESS_FILE_BYTES = 25 * 1024 * 1024
    STRESS_FILE_COUNT = 3
    STRESS_OFFSET_S = 5.0
    STRESS_MEMORY_CAP_BYTES = 2 * 1024 * 1024

    CHAT_OVERHEAD_CAP_MS = 5.0
    CHAT_ROUND_TRIPS = 1000


@dataclass
class BenchRow:
    name: str
    measured: float
    unit: str
    reference: float | None = None
    low: float | None = None
    high: float | None = None

    @property
    def passed(self) -> bool:
        # a row with no anchor or no acceptance range never passes
        if self.reference is None or self.low is None or self.high is None:
            return False
        return self.low <= self.measured <= self.high

    def as_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


@dataclass
class BenchReport:
    seed: int
    rows: list[BenchRow] = field(default_factory=list)

    def add(self, row: BenchRow) -> None:
        self.rows.append(row)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_json(self) -> str:
        return json.dumps(
            {"seed": self.seed, "passed": self.passed,
             "rows": [r.as_dict() for r in self.rows]},
            indent=2,
        )

    def print_table(self, out=sys.stdout) -> None:
        width = max((len(r.name) for r in self.rows), default=10)
        print(f"{'scenario':<{width}}  {'measured':>12}  {'reference':>10}  "
              f"{'range':>18}  result", file=out)
        for r in self.rows:
            ref = f"{r.reference:g}" if r.reference is not None else "-"
            rng = (f"[{r.low:g}, {r.high:g}]"
                   if r.low is not None and r.high is not None else "-")
            verdict = "pass" if r.passed else "FAIL"
            print(f"{r.name:<{width}}  {r.measured:>10.2f} {r.unit:<2} "
                  f"{ref:>9}  {rng:>18}  {verdict}", file=out)


# ----------------------------------------------------------------------
# fixture plumbing
# ----------------------------------------------------------------------


class _Pair:
    """A server and two logged-in daemons, torn down as one unit."""

    def __init__(self, monitored: bool = False,
                 shaper_a: ShapedLink | None = None,
                 shaper_b: ShapedLink | None = None,
                 max_file_size: int | None = None):
        self.tmp = tempfile.TemporaryDirectory(prefix="peervoip-bench-")
        cfg = ServerConfig(port=0, monitored=monitored,
                           journal_dir=f"{self.tmp.name}/journal" if monitored else None)
        if max_file_size:
            cfg.max_file_size = max_file_size
        self.server = SignalServer(cfg)
        self.server.start()
        self.a = self._daemon(shaper_a, max_file_size)
        self.b = self._daemon(shaper_b, max_file_size)
        self.a.signup("alice", "correct horse battery")
        self.b.signup("bob", "correct horse battery")
        self.a.login("alice", "correct horse battery")
        self.b.login("bob", "correct horse battery")

    def _daemon(self, shaper, max_file_size) -> NodeDaemon:
        cfg = DaemonConfig(server_host=self.server.config.host,
                           server_port=self.server.config.port,
                           control_port=0, reconnect=False, shaper=shaper)
        if max_file_size:
            cfg.max_file_size = max_file_size
        d = NodeDaemon(cfg)
        d.start()
        return d

    def close(self) -> None:
        self.a.stop()
        self.b.stop()
        self.server.stop()
        self.tmp.cleanup()


def _wait_event(sub, kind: str, timeout: float = 30.0, predicate=None) -> dict:
    deadline = time.monotonic() + timeout
    while True:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise TimeoutError(f"no {kind} event within {timeout}s")
        event = sub.queue.get(timeout=remaining)
        if event["event"] == kind and (predicate is None or predicate(event["payload"])):
            return event["payload"]


# ----------------------------------------------------------------------
# scenarios
# ----------------------------------------------------------------------


def scenario_voice(seed: int, duration_s: float = 8.0) -> list[BenchRow]:
    """Two-party call on loopback; mouth-to-ear delay at the receiver."""
    pair = _Pair()
    try:
        pair.a.audio_source_factory = media.sine_source
        pair.b.audio_source_factory = media.sine_source
        sub_b = pair.b.subscribe()
        sub_a = pair.a.subscribe()

        import threading

        def auto_accept():
            payload = _wait_event(sub_b, "call-incoming")
            pair.b.accept_call(payload["call_id"])

        threading.Thread(target=auto_accept, daemon=True).start()
        call_id = pair.a.start_call("bob", wait_active=True, timeout=15.0)
        time.sleep(duration_s)
        stats_b = pair.b.get_stats(call_id)
        pair.a.end_call(call_id)
        _wait_event(sub_a, "call-state", predicate=lambda p: p.get("state") == "ENDED")
        median = stats_b["median_delay_ms"] or 0.0
    finally:
        pair.close()

    rows = [BenchRow(
        name="voice mouth-to-ear median",
        measured=median,
        unit="ms",
        reference=PaperReference.REFERENCE_VOICE_DELAY_MS,
        low=PaperReference.VOICE_DELAY_RANGE_MS[0],
        high=PaperReference.VOICE_DELAY_RANGE_MS[1],
    )]
    rows.append(_pipeline_row())
    return rows


def _pipeline_row(frames: int = 1000) -> BenchRow:
    """Pure seal/open cost per frame, no network in the loop."""
    ke_i = crypto.KeyExchange("bench:pipeline", initiator=True)
    ke_r = crypto.KeyExchange("bench:pipeline", initiator=False)
    ke_i.on_response(ke_r.on_opening(ke_i.opening()))
    pack = media.Packetizer(ke_i.keys, source_id=7)
    depack = media.Depacketizer(ke_r.keys)
    pcm = media.SILENCE_FRAME
    start = time.perf_counter()
    for i in range(frames):
        datagram = pack.packetize(pcm, i)
        depack.depacketize(datagram)
    per_frame_ms = (time.perf_counter() - start) * 1000.0 / frames
    return BenchRow(
        name="media pipeline cost per frame",
        measured=per_frame_ms,
        unit="ms",
        reference=PaperReference.PIPELINE_BUDGET_MS,
        low=0.0,
        high=PaperReference.PIPELINE_BUDGET_MS,
    )


def _timed_transfer(shaped_side: str, size: int) -> float:
    """Send `size` bytes from alice to bob with one shaped access link.

    Returns elapsed seconds from acceptance to completion on the side
    whose link is shaped, which is where a user would be watching the
    progress bar.
    """
    shaper = ShapedLink(rate_bps=PaperReference.LINK_RATE_BPS)
    pair = _Pair(shaper_a=shaper if shaped_side == "sender" else None,
                 shaper_b=shaper if shaped_side == "receiver" else None)
    try:
        sub_b = pair.b.subscribe()
        data = bytes(range(256)) * (size // 256) + bytes(size % 256)
        transfer_id = pair.a.offer_file("bob", data, "bench.bin")
        offer = _wait_event(sub_b, "file-offer")
        assert offer["transfer_id"] == transfer_id
        pair.b.accept_file(transfer_id)
        if shaped_side == "sender":
            result = pair.a.wait_transfer(transfer_id, timeout=120.0)
        else:
            result = pair.b.wait_transfer(transfer_id, timeout=120.0)
        return result["elapsed_s"]
    finally:
        pair.close()


def scenario_file(seed: int) -> list[BenchRow]:
    upload_s = _timed_transfer("sender", PaperReference.FILE_SIZE_BYTES)
    download_s = _timed_transfer("receiver", PaperReference.FILE_SIZE_BYTES)
    return [
        BenchRow(
            name="2.5 MB upload on 2 Mbps link",
            measured=upload_s,
            unit="s",
            reference=PaperReference.REFERENCE_UPLOAD_S,
            low=PaperReference.UPLOAD_RANGE_S[0],
            high=PaperReference.UPLOAD_RANGE_S[1],
        ),
        BenchRow(
            name="2.5 MB download on 2 Mbps link",
            measured=download_s,
            unit="s",
            reference=PaperReference.REFERENCE_DOWNLOAD_S,
            low=PaperReference.DOWNLOAD_RANGE_S[0],
            high=PaperReference.DOWNLOAD_RANGE_S[1],
        ),
    ]


def scenario_stress(seed: int) -> list[BenchRow]:
    """Three 25 MB transfers started 5 s apart; the relay must survive all
    three with bounded buffering."""
    size = PaperReference.STRESS_FILE_BYTES
    pair = _Pair(max_file_size=size * 2)
    try:
        sub_b = pair.b.subscribe()
        data = bytes(1024) * (size // 1024)
        transfer_ids = []
        for i in range(PaperReference.STRESS_FILE_COUNT):
            if i:
                time.sleep(PaperReference.STRESS_OFFSET_S)
            tid = pair.a.offer_file("bob", data, f"stress-{i}.bin")
            transfer_ids.append(tid)
            _wait_event(sub_b, "file-offer",
                        predicate=lambda p, t=tid: p["transfer_id"] == t)
            pair.b.accept_file(tid)
        completed = 0
        for tid in transfer_ids:
            result = pair.b.wait_transfer(tid, timeout=300.0)
            if result["ok"]:
                completed += 1
        high_water = max(pair.server.relay_high_water(tid) for tid in transfer_ids)
    finally:
        pair.close()
    return [
        BenchRow(
            name="concurrent 25 MB transfers completed",
            measured=float(completed),
            unit="",
            reference=float(PaperReference.STRESS_FILE_COUNT),
            low=float(PaperReference.STRESS_FILE_COUNT),
            high=float(PaperReference.STRESS_FILE_COUNT),
        ),
        BenchRow(
            name="relay buffering high water",
            measured=float(high_water),
            unit="B",
            reference=float(PaperReference.STRESS_MEMORY_CAP_BYTES),
            low=0.0,
            high=float(PaperReference.STRESS_MEMORY_CAP_BYTES),
        ),
    ]


def _chat_medians(monitored: bool, rounds: int) -> float:
    pair = _Pair(monitored=monitored)
    try:
        samples = []
        for i in range(rounds):
            start = time.perf_counter()
            pair.a.send_chat("bob", f"ping {i}")
            samples.append((time.perf_counter() - start) * 1000.0)
        return statistics.median(samples)
    finally:
        pair.close()


def scenario_chat(seed: int, rounds: int | None = None) -> list[BenchRow]:
    """Per-message journaling overhead: monitored minus direct median."""
    rounds = rounds or PaperReference.CHAT_ROUND_TRIPS
    direct_ms = _chat_medians(monitored=False, rounds=rounds)
    monitored_ms = _chat_medians(monitored=True, rounds=rounds)
    return [BenchRow(
        name="monitored chat overhead (median)",
        measured=monitored_ms - direct_ms,
        unit="ms",
        reference=PaperReference.CHAT_OVERHEAD_CAP_MS,
        low=-PaperReference.CHAT_OVERHEAD_CAP_MS,
        high=PaperReference.CHAT_OVERHEAD_CAP_MS,
    )]


SCENARIOS = {
    "voice": scenario_voice,
    "file": scenario_file,
    "stress": scenario_stress,
    "chat": scenario_chat,
}


def run(scenario: str, seed: int = 0) -> BenchReport:
    report = BenchReport(seed=seed)
    names = list(SCENARIOS) if scenario == "all" else [scenario]
    for name in names:
        for row in SCENARIOS[name](seed):
            report.add(row)
    return report


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="peervoip-bench")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run benchmark scenarios")
    p.add_argument("--scenario", choices=[*SCENARIOS, "all"], default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None, help="write the JSON report here")
    args = parser.parse_args(argv)

    report = run(args.scenario, seed=args.seed)
    report.print_table()
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
