#!/usr/bin/env python3
"""Spin up a server and two daemons in one process and exercise the whole
feature surface: signup, presence, chat, a short call, and a file transfer.

Usage: python scripts/run_two_party_demo.py [--monitored] [--seconds N]
"""

import argparse
import hashlib
import tempfile
import threading
import time

from peervoip import media
from peervoip.daemon import DaemonConfig, NodeDaemon
from peervoip.server import ServerConfig, SignalServer


def wait_event(sub, kind, timeout=15.0, predicate=None):
    deadline = time.monotonic() + timeout
    while True:
        event = sub.queue.get(timeout=max(0.01, deadline - time.monotonic()))
        if event["event"] == kind and (predicate is None or predicate(event["payload"])):
            return event["payload"]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--monitored", action="store_true")
    parser.add_argument("--seconds", type=float, default=3.0, help="call length")
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        server = SignalServer(ServerConfig(
            port=0, monitored=args.monitored,
            journal_dir=f"{tmp}/journal" if args.monitored else None))
        server.start()
        print(f"server on {server.config.host}:{server.config.port} "
              f"(monitored={args.monitored})")

        def node():
            d = NodeDaemon(DaemonConfig(server_port=server.config.port,
                                        control_port=0, reconnect=False))
            d.start()
            return d

        alice, bob = node(), node()
        alice.signup("alice", "demo password one")
        bob.signup("bob", "demo password two")
        alice.login("alice", "demo password one")
        bob.login("bob", "demo password two")
        print("roster:", [(u["username"], u["state"]) for u in alice.roster()])

        sub_bob = bob.subscribe()
        alice.send_chat("bob", "hello from alice")
        print("bob received:", wait_event(sub_bob, "message-received")["body"])
        if args.monitored:
            print("journal entries:", len(server.journal.query()))

        alice.audio_source_factory = media.sine_source
        bob.audio_source_factory = lambda: media.chirp_source()

        def accept():
            payload = wait_event(sub_bob, "call-incoming")
            bob.accept_call(payload["call_id"])

        threading.Thread(target=accept, daemon=True).start()
        call_id = alice.start_call("bob", wait_active=True)
        print(f"call {call_id} active for {args.seconds}s ...")
        time.sleep(args.seconds)
        stats = bob.get_stats(call_id)
        print(f"  received={stats['frames_received']} lost={stats['lost']} "
              f"median_delay={stats['median_delay_ms']}ms "
              f"jitter={stats['jitter_ms']:.2f}ms")
        alice.end_call(call_id)

        payload = b"demo payload " * 40_000  # ~0.5 MB
        transfer_id = alice.offer_file("bob", payload, "demo.bin")
        offer = wait_event(sub_bob, "file-offer")
        bob.accept_file(offer["transfer_id"])
        result = bob.wait_transfer(transfer_id)
        ok = hashlib.sha256(result["data"]).hexdigest() == hashlib.sha256(payload).hexdigest()
        print(f"file transfer: {result['size']} bytes in {result['elapsed_s']:.2f}s, "
              f"digest match={ok}")

        alice.stop()
        bob.stop()
        server.stop()
        print("done")


if __name__ == "__main__":
    main()
