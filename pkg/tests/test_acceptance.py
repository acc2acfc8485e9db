"""Acceptance gate: every headline criterion, one pass/fail line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
Each test measures against the stated tolerance; none of them are mocked.
"""

import random
import string
import struct
import time

import pytest

from peervoip import bench, crypto, media, wire
from peervoip.errors import AuthenticationFailure, FrameTooLarge, Malformed
from peervoip.routing import ProxyGraph, enumerate_routes, shortest_route


def report(name, passed, detail):
    print(f"\n[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    assert passed, f"{name}: {detail}"


# 1 ── voice quality --------------------------------------------------------


def test_acceptance_voice_delay_and_pipeline_budget():
    rows = bench.scenario_voice(seed=0, duration_s=8.0)
    delay, pipeline = rows
    report(
        "voice mouth-to-ear median in [20, 80] ms",
        delay.passed,
        f"measured {delay.measured:.1f} ms (reference {delay.reference} ms)",
    )
    report(
        "media pipeline cost <= 5 ms per frame",
        pipeline.passed,
        f"measured {pipeline.measured:.3f} ms per frame",
    )


# 2 ── file transfer timing -------------------------------------------------


def test_acceptance_file_transfer_times_on_2mbps_link():
    rows = bench.scenario_file(seed=0)
    upload, download = rows
    report(
        "2.5 MB upload on 2 Mbps link in [10, 25] s",
        upload.passed,
        f"measured {upload.measured:.1f} s (reference {upload.reference} s)",
    )
    report(
        "2.5 MB download on 2 Mbps link in [10, 20] s",
        download.passed,
        f"measured {download.measured:.1f} s (reference {download.reference} s)",
    )


# 3 ── large-transfer stress -------------------------------------------------


def test_acceptance_stress_three_25mb_transfers():
    rows = bench.scenario_stress(seed=0)
    completed, memory = rows
    report(
        "3 x 25 MB transfers at 5 s offsets all complete",
        completed.passed,
        f"{completed.measured:.0f} of 3 completed",
    )
    report(
        "relay buffering stays under 2 MiB per transfer",
        memory.passed,
        f"high water {memory.measured / 1024:.0f} KiB",
    )


# 4 ── monitored chat overhead -----------------------------------------------


def test_acceptance_monitored_chat_overhead():
    rows = bench.scenario_chat(seed=0, rounds=1000)
    (overhead,) = rows
    report(
        "monitored chat median overhead <= 5 ms over 1000 round trips",
        overhead.passed,
        f"measured {overhead.measured:+.2f} ms",
    )


# 5 ── cryptographic soundness -------------------------------------------------


def _agree(label="acc"):
    i = crypto.KeyExchange(label, initiator=True)
    r = crypto.KeyExchange(label, initiator=False)
    r.on_confirm(i.on_response(r.on_opening(i.opening())))
    return i.keys, r.keys


def test_acceptance_crypto_round_trips():
    send, recv = _agree()
    pack = media.Packetizer(send, source_id=1)
    depack = media.Depacketizer(recv)
    rng = random.Random(1)
    n = 10_000
    ok = 0
    for i in range(n):
        pcm = struct.pack("<320h", *[rng.randrange(-32768, 32768)
                                     for _ in range(media.SAMPLES_PER_FRAME)]) \
            if i % 100 == 0 else media.SILENCE_FRAME
        out = depack.depacketize(pack.packetize(pcm, i))[3]
        ok += out == pcm
    report("10,000 seal/open round trips bit-exact", ok == n, f"{ok}/{n} exact")


def test_acceptance_crypto_mutation_rejection():
    send, recv = _agree()
    pack = media.Packetizer(send, source_id=2)
    rng = random.Random(2)
    rejected = 0
    total = 0
    for i in range(100):
        datagram = bytearray(pack.packetize(media.SILENCE_FRAME, i))
        pos = rng.randrange(len(datagram))
        bit = 1 << rng.randrange(8)
        datagram[pos] ^= bit
        total += 1
        try:
            media.Depacketizer(recv).depacketize(bytes(datagram))
        except (AuthenticationFailure, Malformed, FrameTooLarge):
            rejected += 1
    report(
        "100% of single-byte mutations rejected over 100 frames",
        rejected == total,
        f"{rejected}/{total} rejected",
    )


def test_acceptance_nonce_uniqueness_over_a_million_frames():
    seen = set()
    source_id = 77
    for ext_seq in range(1_000_000):
        nonce = crypto.frame_nonce(
            source_id, (ext_seq >> 16) & 0xFFFF, ext_seq & 0xFFFF,
            (ext_seq * media.SAMPLES_PER_FRAME) & 0xFFFFFFFF,
        )
        seen.add(nonce)
    report(
        "1,000,000 consecutive frame nonces unique",
        len(seen) == 1_000_000,
        f"{len(seen):,} distinct nonces",
    )


def test_acceptance_key_agreement_no_collisions_across_calls():
    keys = set()
    for i in range(100):
        send, recv = _agree(label=f"call:{i}:a:b")
        keys.update((send.send_key, send.receive_key))
    report(
        "100 calls produce 200 distinct directional keys",
        len(keys) == 200,
        f"{len(keys)} distinct keys",
    )


# 6 ── routing against the oracle -----------------------------------------------


def test_acceptance_routing_oracle_thousand_graphs():
    rng = random.Random(9)
    start = time.monotonic()
    agreements = 0
    total = 1000
    for _ in range(total):
        g = ProxyGraph()
        n = rng.randint(2, 6)
        nodes = [f"P{i}" for i in range(n)]
        for node in nodes:
            g.add_proxy(node)
        for i in range(n):
            for j in range(i + 1, n):
                if rng.random() < 0.55:
                    g.set_rtt(nodes[i], nodes[j], rng.choice([1, 2, 3, 5, 8, 8, 13]))
        g.attach("src", rng.choice(nodes))
        g.attach("dst", rng.choice(nodes))
        try:
            expected = enumerate_routes(g, "src", "dst")
        except Exception:
            expected = None
        try:
            actual = shortest_route(g, "src", "dst")
        except Exception:
            actual = None
        agreements += expected == actual
    elapsed = time.monotonic() - start
    report(
        "route computation matches oracle on 1000 graphs within 30 s",
        agreements == total and elapsed <= 30.0,
        f"{agreements}/{total} agree in {elapsed:.1f} s",
    )


# 7 ── security and auth properties ----------------------------------------------


def test_acceptance_security_suite(tmp_path):
    from peervoip.auth import Directory
    from peervoip.errors import BadCredentials, Unauthorized

    checks = []

    store = tmp_path / "store.json"
    d = Directory(str(store), pbkdf2_iterations=10)
    password = "very secret passphrase"
    d.signup("alice", password)
    checks.append(("password absent from store", password.encode() not in store.read_bytes()))

    try:
        d.login("alice", "wrong" * 3)
        checks.append(("wrong password rejected", False))
    except BadCredentials as known:
        try:
            d.login("ghost", "wrong" * 3)
            checks.append(("unknown user rejected", False))
        except BadCredentials as unknown:
            checks.append(("failure messages identical", str(known) == str(unknown)))

    t1 = d.login("alice", password)
    t2 = d.login("alice", password)
    revoked = False
    try:
        d.resolve(t1)
    except Unauthorized:
        revoked = True
    checks.append(("second login revokes the first token", revoked and d.resolve(t2) == "alice"))

    # a tampered key-exchange transcript aborts before any key is used
    i = crypto.KeyExchange("sec", initiator=True)
    r = crypto.KeyExchange("sec", initiator=False)
    response = bytearray(r.on_opening(i.opening()))
    response[-1] ^= 1
    aborted = False
    try:
        i.on_response(bytes(response))
    except Exception:
        aborted = i.keys is None
    checks.append(("tampered exchange aborts with no keys", aborted))

    send, recv = _agree()
    sealed = crypto.seal_random_nonce(send.send_key, b"private")
    leaked = b"private" in sealed
    opened_with_wrong_key = True
    try:
        other, _ = _agree("different")
        crypto.open_random_nonce(other.receive_key, sealed)
    except AuthenticationFailure:
        opened_with_wrong_key = False
    checks.append(("chat sealing hides plaintext, binds key",
                   not leaked and not opened_with_wrong_key))

    failed = [name for name, ok in checks if not ok]
    report(
        "security and auth property suite",
        not failed,
        f"{len(checks) - len(failed)}/{len(checks)} properties hold"
        + (f", failed: {failed}" if failed else ""),
    )


# 8 ── decoder fuzzing ------------------------------------------------------------


def test_acceptance_fuzz_decoders_100k_inputs():
    rng = random.Random(1234)
    alphabet = (string.printable + "\x00\xff").encode("latin-1")
    bad = 0
    total = 100_000
    for i in range(total):
        n = rng.randrange(0, 120)
        data = bytes(rng.choice(alphabet) for _ in range(n))
        if i % 3 == 0:
            # structured prefix to get past the length check sometimes
            data = struct.pack(">I", max(0, len(data) - 4)) + data[4:]
        for decoder in (wire.decode_envelope, wire.decode_media_frame):
            try:
                decoder(data)
            except (Malformed, FrameTooLarge):
                pass
            except Exception:
                bad += 1
    report(
        "100,000 fuzz inputs raise only Malformed",
        bad == 0,
        f"{bad} unexpected exceptions",
    )
