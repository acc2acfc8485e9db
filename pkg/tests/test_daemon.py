"""End-to-end daemon behavior: calls, chat, transfers, control API."""

import json
import socket
import struct
import threading
import time
import urllib.request

import pytest

from conftest import PASSWORD, Pair, auto_accept_call, wait_event
from peervoip import media
from peervoip.daemon import DaemonConfig
from peervoip.errors import BlockedExtension, NotLoggedIn, PeerVoipError
from peervoip.server import canonical_json


def test_control_port_rejects_non_loopback_binding():
    with pytest.raises(ValueError):
        DaemonConfig(control_host="0.0.0.0")


def test_operations_require_login(tmp_path):
    pair = Pair(tmp_path)
    stranger = pair.daemon()
    try:
        with pytest.raises(NotLoggedIn):
            stranger.roster()
        with pytest.raises(NotLoggedIn):
            stranger.send_chat("bob", "hi")
        with pytest.raises(NotLoggedIn):
            stranger.start_call("bob")
    finally:
        stranger.stop()
        pair.close()


# --- chat ------------------------------------------------------------------


def test_direct_chat_round_trip(pair):
    sub_b = pair.b.subscribe()
    receipt = pair.a.send_chat("bob", "direct and private")
    assert receipt["receipt"] is True
    got = wait_event(sub_b, "message-received")
    assert got["from"] == "alice"
    assert got["body"] == "direct and private"
    assert got["message_id"]


def test_direct_chat_both_directions_after_one_exchange(pair):
    sub_a = pair.a.subscribe()
    sub_b = pair.b.subscribe()
    pair.a.send_chat("bob", "ping")
    wait_event(sub_b, "message-received")
    pair.b.send_chat("alice", "pong")
    got = wait_event(sub_a, "message-received")
    assert got["body"] == "pong"


def test_monitored_chat_round_trip(monitored_pair):
    sub_b = monitored_pair.b.subscribe()
    monitored_pair.a.send_chat("bob", "observed")
    got = wait_event(sub_b, "message-received")
    assert got["body"] == "observed"
    assert monitored_pair.server.journal.query()[-1].body == b"observed"


def test_chat_body_size_cap(pair):
    from peervoip.errors import BodyTooLarge

    with pytest.raises(BodyTooLarge):
        pair.a.send_chat("bob", "x" * (8 * 1024 + 1))


def test_simultaneous_chat_openings_converge(pair):
    """Both sides initiate the pair exchange at once; messages still flow."""
    sub_a = pair.a.subscribe()
    sub_b = pair.b.subscribe()
    errors = []

    def send(daemon, to, body):
        try:
            daemon.send_chat(to, body)
        except PeerVoipError as exc:
            errors.append(exc)

    t1 = threading.Thread(target=send, args=(pair.a, "bob", "from alice"))
    t2 = threading.Thread(target=send, args=(pair.b, "alice", "from bob"))
    t1.start()
    t2.start()
    t1.join(15)
    t2.join(15)
    assert not errors
    assert wait_event(sub_b, "message-received")["body"] == "from alice"
    assert wait_event(sub_a, "message-received")["body"] == "from bob"


# --- calls -------------------------------------------------------------------


def run_call(pair, seconds=2.0, relay=False):
    pair.a.audio_source_factory = media.sine_source
    pair.b.audio_source_factory = media.sine_source
    received = []
    pair.b.audio_sink = received.append
    sub_a = pair.a.subscribe()
    sub_b = pair.b.subscribe()
    auto_accept_call(pair.b, sub_b)
    call_id = pair.a.start_call("bob", wait_active=True, timeout=15.0)
    time.sleep(seconds)
    stats = pair.b.get_stats(call_id)
    pair.a.end_call(call_id)
    wait_event(sub_a, "call-state", predicate=lambda p: p.get("state") == "ENDED")
    wait_event(sub_b, "call-state", predicate=lambda p: p.get("state") == "ENDED")
    return call_id, stats, received


def test_call_end_to_end_media_flows(pair):
    call_id, stats, received = run_call(pair, seconds=2.0)
    assert stats["frames_received"] > 50
    assert stats["loss_ratio"] < 0.05
    # decrypted audio actually reaches the sink and is not all silence
    voiced = [f for f in received if f != media.SILENCE_FRAME]
    assert len(voiced) > 30
    assert stats["median_delay_ms"] is not None
    assert pair.a.current_call() is None
    assert pair.b.current_call() is None


def test_call_media_is_encrypted_on_the_wire(tmp_path):
    pair = Pair(tmp_path)
    try:
        pair.a.audio_source_factory = media.sine_source
        pcm_frames = []
        datagrams = []
        source = media.sine_source()
        for _ in range(50):
            pcm_frames.append(next(source))

        def tap(datagram):
            datagrams.append(datagram)
            return datagram

        pair.a.media_send_filter = tap
        sub_b = pair.b.subscribe()
        auto_accept_call(pair.b, sub_b)
        call_id = pair.a.start_call("bob", wait_active=True, timeout=15.0)
        time.sleep(1.0)
        pair.a.end_call(call_id)
        assert len(datagrams) > 10
        for datagram in datagrams:
            for pcm in pcm_frames[:5]:
                assert pcm not in datagram
    finally:
        pair.close()


def test_call_reject(pair):
    sub_a = pair.a.subscribe()
    sub_b = pair.b.subscribe()

    def auto_reject():
        payload = wait_event(sub_b, "call-incoming", timeout=15.0)
        pair.b.reject_call(payload["call_id"])

    threading.Thread(target=auto_reject, daemon=True).start()
    pair.a.start_call("bob")
    rejected = wait_event(sub_a, "call-state",
                          predicate=lambda p: p.get("state") == "REJECTED")
    assert rejected["call_id"]
    assert pair.a.current_call() is None
    # both sides are free again
    sub_b2 = pair.b.subscribe()
    auto_accept_call(pair.b, sub_b2)
    call_id = pair.a.start_call("bob", wait_active=True, timeout=15.0)
    pair.a.end_call(call_id)


def test_relay_media_mode(tmp_path):
    pair = Pair(tmp_path, relay_media=True)
    pair.a.config.relay_media = True
    pair.b.config.relay_media = True
    try:
        _, stats, received = run_call(pair, seconds=2.0)
        assert stats["frames_received"] > 50
        assert any(f != media.SILENCE_FRAME for f in received)
    finally:
        pair.close()


def test_call_survives_datagram_loss(tmp_path):
    from peervoip.shaper import ShapedLink

    pair = Pair(tmp_path)
    try:
        # drop 10% of alice's outgoing media, deterministically
        pair.a.config.shaper = ShapedLink(rate_bps=None, drop_probability=0.10, seed=3)
        _, stats, received = run_call(pair, seconds=3.0)
        assert stats["frames_received"] > 80
        assert 0.0 < stats["loss_ratio"] < 0.25
        assert any(f != media.SILENCE_FRAME for f in received)
    finally:
        pair.close()


def test_call_stats_events_emitted(pair):
    sub_a = pair.a.subscribe()
    sub_b = pair.b.subscribe()
    auto_accept_call(pair.b, sub_b)
    call_id = pair.a.start_call("bob", wait_active=True, timeout=15.0)
    payload = wait_event(sub_a, "call-stats", timeout=5.0)
    assert payload["call_id"] == call_id
    assert "loss_ratio" in payload
    pair.a.end_call(call_id)


# --- file transfer ------------------------------------------------------------


def test_file_transfer_end_to_end(pair, tmp_path):
    data = bytes(range(256)) * 700  # ~175 KiB, multiple chunks
    save = tmp_path / "received.bin"
    sub_b = pair.b.subscribe()
    transfer_id = pair.a.offer_file("bob", data, "document.bin")
    offer = wait_event(sub_b, "file-offer")
    assert offer["filename"] == "document.bin"
    assert offer["size"] == len(data)
    pair.b.accept_file(transfer_id, str(save))
    result = pair.b.wait_transfer(transfer_id, timeout=30.0)
    assert result["ok"] and result["data"] == data
    assert save.read_bytes() == data
    sender_result = pair.a.wait_transfer(transfer_id, timeout=30.0)
    assert sender_result["ok"]
    assert sender_result["digest"] == __import__("hashlib").sha256(data).hexdigest()


def test_zero_byte_file_transfer(pair):
    sub_b = pair.b.subscribe()
    transfer_id = pair.a.offer_file("bob", b"", "empty.txt")
    wait_event(sub_b, "file-offer")
    pair.b.accept_file(transfer_id)
    result = pair.b.wait_transfer(transfer_id, timeout=10.0)
    assert result["ok"] and result["data"] == b""


def test_sender_blocks_exe_locally(pair):
    with pytest.raises(BlockedExtension):
        pair.a.offer_file("bob", b"MZ", "tool.exe")


def test_receiver_blocks_exe_independently(pair):
    """A sender with blocking disabled still cannot deliver a .exe."""
    pair.a.config.blocklist = frozenset()
    sub_a = pair.a.subscribe()
    # the compliant server refuses it before the receiver even sees it
    with pytest.raises(BlockedExtension):
        pair.a.offer_file("bob", b"MZ", "tool.exe")
    # and with a permissive server, the receiving daemon refuses
    pair.server.config.blocklist = frozenset()
    transfer_id = pair.a.offer_file("bob", b"MZ", "tool.exe")
    result = pair.a._outgoing[transfer_id].done
    with pytest.raises(BlockedExtension):
        result.wait(10.0)
    del sub_a


def test_offer_path_components_stripped(pair):
    sub_b = pair.b.subscribe()
    transfer_id = pair.a.offer_file("bob", b"data", "../../etc/cron.d/evil")
    offer = wait_event(sub_b, "file-offer")
    assert offer["filename"] == "evil"
    pair.b.accept_file(transfer_id)
    assert pair.b.wait_transfer(transfer_id, timeout=10.0)["ok"]


def test_file_progress_events(pair):
    data = b"p" * (64 * 1024 * 3 + 10)
    sub_b = pair.b.subscribe()
    transfer_id = pair.a.offer_file("bob", data, "progress.bin")
    wait_event(sub_b, "file-offer")
    pair.b.accept_file(transfer_id)
    pair.b.wait_transfer(transfer_id, timeout=30.0)
    seen = []
    deadline = time.monotonic() + 5
    while time.monotonic() < deadline:
        try:
            event = sub_b.queue.get(timeout=0.2)
        except Exception:
            break
        if event["event"] == "file-progress":
            seen.append(event["payload"])
            if event["payload"].get("done"):
                break
    received = [p["received"] for p in seen if "received" in p]
    assert received == sorted(received)
    assert received[-1] == len(data)
    assert seen[-1].get("done") and seen[-1].get("ok")


def test_transfer_fails_cleanly_when_receiver_vanishes(tmp_path):
    pair = Pair(tmp_path)
    try:
        data = b"v" * (32 * 1024 * 1024)  # large enough to interrupt mid-flight
        sub_b = pair.b.subscribe()
        transfer_id = pair.a.offer_file("bob", data, "doomed.bin")
        wait_event(sub_b, "file-offer")
        pair.b.accept_file(transfer_id)
        time.sleep(0.01)
        pair.b.stop()
        with pytest.raises(PeerVoipError):
            pair.a.wait_transfer(transfer_id, timeout=30.0)
    finally:
        pair.a.stop()
        pair.server.stop()


# --- clock and reconnect -----------------------------------------------------


def test_clock_offset_tracks_skewed_server_clock(tmp_path):
    skew_s = 7.5
    from peervoip.server import ServerConfig, SignalServer

    server = SignalServer(ServerConfig(port=0), clock=lambda: time.time() + skew_s)
    server.start()
    from peervoip.daemon import NodeDaemon

    d = NodeDaemon(DaemonConfig(server_port=server.config.port,
                                control_port=0, reconnect=False))
    d.start()
    try:
        d.signup("alice", PASSWORD)
        d.login("alice", PASSWORD)
        offset_error = abs(d.now_server_ms() - (time.time() + skew_s) * 1000)
        assert offset_error < 100  # within 100 ms after one ping
    finally:
        d.stop()
        server.stop()


def test_reconnect_and_relogin_after_server_drop(tmp_path):
    pair = Pair(tmp_path)
    try:
        pair.a.config.reconnect = True
        pair.a.config.reconnect_base_s = 0.2
        # sever alice's connection server-side
        conn = pair.server._conns["alice"]
        conn.sock.shutdown(socket.SHUT_RDWR)
        deadline = time.monotonic() + 10
        while time.monotonic() < deadline:
            try:
                users = pair.a.roster()
                if any(u["username"] == "alice" and u["state"] == "ONLINE" for u in users):
                    break
            except PeerVoipError:
                pass
            time.sleep(0.1)
        else:
            pytest.fail("daemon did not reconnect and re-login")
    finally:
        pair.close()


# --- control API ---------------------------------------------------------------


def control_call(port, method, params=None, sock=None):
    own = sock is None
    if own:
        sock = socket.create_connection(("127.0.0.1", port), timeout=10)
    sock.sendall(canonical_json({"id": 1, "method": method, "params": params or {}}) + b"\n")
    buf = b""
    while not buf.endswith(b"\n"):
        buf += sock.recv(65536)
    if own:
        sock.close()
    return json.loads(buf)


def test_control_api_json_lines(pair):
    port = pair.a.config.control_port
    reply = control_call(port, "roster")
    assert any(u["username"] == "bob" for u in reply["result"]["users"])
    reply = control_call(port, "send_chat", {"to": "bob", "body": "via control"})
    assert reply["result"]["receipt"] is True
    reply = control_call(port, "no_such_method")
    assert reply["error"]["code"] == "Error"


def test_control_api_error_codes_surface(pair):
    reply = control_call(pair.a.config.control_port, "send_chat",
                         {"to": "nobody", "body": "hi"})
    assert reply["error"]["code"] == "RecipientOffline"


def test_control_subscribe_snapshot_first(pair):
    sock = socket.create_connection(("127.0.0.1", pair.a.config.control_port), timeout=10)
    rfile = sock.makefile("rb")
    sock.sendall(canonical_json({"id": 1, "method": "subscribe"}) + b"\n")
    ack = json.loads(rfile.readline())
    assert ack["result"]["subscribed"] is True
    first = json.loads(rfile.readline())
    assert first["event"] == "snapshot"
    assert first["seq"] == 1
    assert first["payload"]["username"] == "alice"
    # events arrive in order with no gaps
    pair.b.send_chat("alice", "one")
    pair.b.send_chat("alice", "two")
    seqs, bodies = [first["seq"]], []
    deadline = time.monotonic() + 10
    while len(bodies) < 2 and time.monotonic() < deadline:
        event = json.loads(rfile.readline())
        seqs.append(event["seq"])
        if event["event"] == "message-received":
            bodies.append(event["payload"]["body"])
    assert bodies == ["one", "two"]
    assert seqs == list(range(1, len(seqs) + 1))
    sock.close()


def test_http_rpc_and_events(pair):
    port = pair.a.config.control_port
    body = canonical_json({"method": "roster", "params": {}})
    req = urllib.request.Request(
        f"http://127.0.0.1:{port}/api/rpc", data=body,
        headers={"Content-Type": "application/json"}, method="POST")
    with urllib.request.urlopen(req, timeout=10) as resp:
        reply = json.loads(resp.read())
    assert any(u["username"] == "bob" for u in reply["result"]["users"])

    # SSE stream: snapshot arrives as the first data frame
    sse = urllib.request.urlopen(f"http://127.0.0.1:{port}/api/events", timeout=10)
    line = sse.readline()
    while not line.startswith(b"data: "):
        line = sse.readline()
    event = json.loads(line[len(b"data: "):])
    assert event["event"] == "snapshot"
    sse.close()


def test_http_static_assets(pair, tmp_path):
    static = tmp_path / "static"
    static.mkdir()
    (static / "index.html").write_text("<h1>console</h1>")
    pair.a.config.static_dir = str(static)
    port = pair.a.config.control_port
    with urllib.request.urlopen(f"http://127.0.0.1:{port}/", timeout=10) as resp:
        assert b"console" in resp.read()
        assert resp.headers["Content-Type"] == "text/html"
    # path traversal is refused
    req = urllib.request.Request(f"http://127.0.0.1:{port}/../secret.txt")
    try:
        resp = urllib.request.urlopen(req, timeout=10)
        assert resp.status == 404
    except urllib.error.HTTPError as exc:
        assert exc.code == 404


def test_roster_via_two_daemons(pair):
    users = {u["username"]: u["state"] for u in pair.a.roster()}
    assert users["alice"] == "ONLINE"
    assert users["bob"] == "ONLINE"
