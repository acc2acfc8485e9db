"""Per-user node daemon: owns the signaling connection, runs calls, chat
and file transfers, and exposes a loopback control API.

The control port speaks two dialects on the same socket: line-delimited
JSON for scripts, and plain HTTP (static assets, POST /api/rpc, an SSE
event stream at /api/events) for the browser console.  The first bytes
of a connection decide which.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import secrets
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from queue import Empty, Queue

from . import crypto, files, media, wire
from .errors import (
    BlockedExtension,
    BodyTooLarge,
    CallSetupFailed,
    ExchangeTimeout,
    NotLoggedIn,
    PeerDisconnected,
    PeerVoipError,
    TransferFailed,
    UnknownCall,
    error_for_code,
)
from .server import canonical_json
from .shaper import ShapedLink

log = logging.getLogger("peervoip.daemon")

MAX_CHAT_BODY = 8 * 1024
RECONNECT_MAX_S = 30.0


@dataclass
class DaemonConfig:
    server_host: str = "127.0.0.1"
    server_port: int = 5060
    control_host: str = "127.0.0.1"
    control_port: int = 7777
    heartbeat_interval: float = 5.0
    jitter_depth: int = 2
    max_file_size: int = files.DEFAULT_MAX_FILE
    blocklist: frozenset = files.DEFAULT_BLOCKLIST
    monitored: bool = False
    relay_media: bool = False
    media_port_min: int = 40000
    media_port_max: int = 40100
    download_dir: str | None = None
    static_dir: str | None = None
    reconnect: bool = True
    reconnect_base_s: float = 1.0
    rpc_timeout_s: float = 10.0
    shaper: ShapedLink | None = None  # bench hook: shapes this node's link

    def __post_init__(self):
        if not self.control_host.startswith("127."):
            raise ValueError("control API must bind loopback only")


class _Pending:
    def __init__(self):
        self.event = threading.Event()
        self.result = None
        self.error: PeerVoipError | None = None

    def resolve(self, result) -> None:
        self.result = result
        self.event.set()

    def fail(self, error: PeerVoipError) -> None:
        self.error = error
        self.event.set()

    def wait(self, timeout: float):
        if not self.event.wait(timeout):
            raise ExchangeTimeout("no reply from server")
        if self.error is not None:
            raise self.error
        return self.result


class _Subscriber:
    def __init__(self):
        self.queue: Queue = Queue()
        self.seq = 0
        self.lock = threading.Lock()

    def publish(self, kind: str, payload) -> None:
        with self.lock:
            self.seq += 1
            self.queue.put({"event": kind, "seq": self.seq, "payload": payload})


class _CallContext:
    def __init__(self, call_id: int, peer: str, role: str):
        self.call_id = call_id
        self.peer = peer
        self.role = role  # "caller" | "callee"
        self.state = "INVITED"
        self.udp: socket.socket | None = None
        self.peer_addr: tuple | None = None
        self.route: list = []
        self.ke: crypto.KeyExchange | None = None
        self.keys: crypto.SessionKeys | None = None
        self.packetizer: media.Packetizer | None = None
        self.depacketizer: media.Depacketizer | None = None
        self.jitter: media.JitterBuffer | None = None
        self.stats = media.CallStats()
        self.stop_event = threading.Event()
        self.threads: list[threading.Thread] = []
        self.keys_ready = threading.Event()
        self.active = threading.Event()


class _OutgoingTransfer:
    def __init__(self, manifest: files.FileManifest, data: bytes, recipient: str):
        self.manifest = manifest
        self.data = data
        self.recipient = recipient
        self.accepted = threading.Event()
        self.credits = threading.Semaphore(0)
        self.done = _Pending()
        self.started_at: float | None = None


class _IncomingTransfer:
    def __init__(self, manifest: files.FileManifest, sender: str, save_path: str | None):
        self.manifest = manifest
        self.sender = sender
        self.save_path = save_path
        self.reassembler = files.Reassembler(manifest)
        self.done = _Pending()
        self.started_at: float | None = None
        self.received_bytes = 0


class NodeDaemon:
    def __init__(self, config: DaemonConfig | None = None):
        self.config = config or DaemonConfig()
        self.username: str | None = None
        self._password: str | None = None
        self.token_hex: str | None = None
        self._sock: socket.socket | None = None
        self._sock_lock = threading.Lock()
        self._send_lock = threading.Lock()
        self._env_id = 0
        self._pending: dict[int, _Pending] = {}
        self._pending_lock = threading.Lock()
        self._subscribers: list[_Subscriber] = []
        self._running = False
        self._connected = threading.Event()
        self._clock_offset_ms = 0.0
        self._offset_primed = False
        self.link_keys: crypto.SessionKeys | None = None
        self._link_ke: crypto.KeyExchange | None = None
        self._link_ready = threading.Event()
        self._chat_keys: dict[str, crypto.SessionKeys] = {}
        self._chat_ke: dict[str, crypto.KeyExchange] = {}
        self._chat_ke_ready: dict[str, threading.Event] = {}
        self._chat_lock = threading.Lock()
        self._call: _CallContext | None = None
        self._last_call: _CallContext | None = None
        self._call_lock = threading.Lock()
        self._outgoing: dict[int, _OutgoingTransfer] = {}
        self._incoming: dict[int, _IncomingTransfer] = {}
        self._pending_offers: dict[int, dict] = {}
        self._roster_cache: list = []
        self._control_listener: socket.socket | None = None
        self._heartbeat_thread: threading.Thread | None = None
        # test hooks
        self.audio_source_factory = media.silence_source
        self.audio_sink = lambda pcm: None
        self.media_send_filter = None  # callable(datagram) -> datagram|None

    # ------------------------------------------------------------------
    # lifecycle
    # ------------------------------------------------------------------

    def start(self) -> None:
        self._running = True
        self._start_control()
        self._connect()

    def stop(self) -> None:
        self._running = False
        call = self._call
        if call is not None and self._connected.is_set():
            try:
                self.end_call(call.call_id)
            except PeerVoipError:
                pass
        if self._control_listener:
            try:
                self._control_listener.close()
            except OSError:
                pass
        self._close_socket()

    def _close_socket(self) -> None:
        with self._sock_lock:
            sock, self._sock = self._sock, None
        if sock is not None:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                sock.close()
            except OSError:
                pass
        self._connected.clear()

    def _connect(self) -> None:
        sock = socket.create_connection(
            (self.config.server_host, self.config.server_port), timeout=10
        )
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        with self._sock_lock:
            self._sock = sock
        self._env_id = 0
        self._connected.set()
        threading.Thread(target=self._read_loop, args=(sock,), daemon=True).start()
        if self._heartbeat_thread is None:
            self._heartbeat_thread = threading.Thread(target=self._heartbeat_loop, daemon=True)
            self._heartbeat_thread.start()

    def _reconnect_loop(self) -> None:
        delay = self.config.reconnect_base_s
        while self._running:
            time.sleep(delay)
            try:
                self._connect()
            except OSError:
                delay = min(delay * 2, RECONNECT_MAX_S)
                continue
            try:
                if self.username and self._password:
                    self._login_current()
                    self.roster()
                self._publish("presence-changed", {"username": self.username, "state": "ONLINE"})
            except PeerVoipError:
                pass
            return

    def _on_disconnect(self) -> None:
        self._connected.clear()
        self._link_ready.clear()
        self.link_keys = None
        self._link_ke = None
        with self._pending_lock:
            pending, self._pending = self._pending, {}
        for p in pending.values():
            p.fail(PeerDisconnected("server connection lost"))
        call = self._call
        if call is not None:
            self._finish_call(call, reason="server-disconnected")
        self._publish("presence-changed", {"username": self.username, "state": "OFFLINE"})
        self._publish("error", {"code": "Disconnected"})
        if self._running and self.config.reconnect:
            threading.Thread(target=self._reconnect_loop, daemon=True).start()

    # ------------------------------------------------------------------
    # wire plumbing
    # ------------------------------------------------------------------

    def _next_envelope_id(self) -> int:
        with self._send_lock:
            self._env_id += 1
            return self._env_id

    def _send_envelope(self, kind: wire.Kind, recipient: str, body: bytes) -> int:
        env_id = self._next_envelope_id()
        env = wire.SignalEnvelope(
            kind=kind,
            sender=self.username or "",
            recipient=recipient,
            envelope_id=env_id,
            sent_at_ms=self.now_server_ms(),
            body=body,
        )
        data = wire.encode_envelope(env)
        with self._sock_lock:
            sock = self._sock
        if sock is None:
            raise PeerDisconnected("not connected")
        if self.config.shaper is not None:
            self.config.shaper.throttle(len(data))
        with self._send_lock:
            sock.sendall(data)
        return env_id

    def _send_with_pending(self, kind: wire.Kind, recipient: str,
                           raw: bytes) -> tuple[int, _Pending]:
        pending = _Pending()
        env_id = self._next_envelope_id()
        with self._pending_lock:
            self._pending[env_id] = pending
        env = wire.SignalEnvelope(
            kind=kind,
            sender=self.username or "",
            recipient=recipient,
            envelope_id=env_id,
            sent_at_ms=self.now_server_ms(),
            body=raw,
        )
        data = wire.encode_envelope(env)
        with self._sock_lock:
            sock = self._sock
        if sock is None:
            with self._pending_lock:
                self._pending.pop(env_id, None)
            raise PeerDisconnected("not connected")
        if self.config.shaper is not None:
            self.config.shaper.throttle(len(data))
        with self._send_lock:
            sock.sendall(data)
        return env_id, pending

    def _rpc(self, kind: wire.Kind, recipient: str, body: dict | bytes,
             timeout: float | None = None) -> dict:
        raw = body if isinstance(body, bytes) else canonical_json(body)
        env_id, pending = self._send_with_pending(kind, recipient, raw)
        try:
            return pending.wait(timeout or self.config.rpc_timeout_s)
        finally:
            with self._pending_lock:
                self._pending.pop(env_id, None)

    def _recv_exact(self, sock: socket.socket, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = sock.recv(n - len(buf))
            if not chunk:
                raise ConnectionError("server closed connection")
            if self.config.shaper is not None:
                self.config.shaper.throttle(len(chunk))
            buf.extend(chunk)
        return bytes(buf)

    def _read_loop(self, sock: socket.socket) -> None:
        try:
            while self._running:
                frame = wire.read_frame(lambda n: self._recv_exact(sock, n))
                env = wire.decode_envelope(frame)
                try:
                    self._handle(env)
                except PeerVoipError as exc:
                    log.warning("error handling %s: %s", env.kind.name, exc)
        except (ConnectionError, OSError):
            pass
        finally:
            with self._sock_lock:
                current = self._sock
            if current is sock and self._running:
                self._close_socket()
                self._on_disconnect()

    def _resolve_pending(self, body: dict) -> bool:
        re_id = body.get("re")
        if re_id is None:
            return False
        with self._pending_lock:
            pending = self._pending.get(re_id)
        if pending is None:
            return False
        if body.get("code"):
            pending.fail(error_for_code(body["code"], str(body)))
        else:
            pending.resolve(body)
        return True

    def _handle(self, env: wire.SignalEnvelope) -> None:
        kind = env.kind
        if kind == wire.Kind.KEY_EXCHANGE:
            self._on_key_exchange(env)
            return
        if kind == wire.Kind.FILE_CHUNK:
            self._on_file_chunk(env)
            return
        if kind == wire.Kind.CHAT and env.sender != "":
            self._on_chat_message(env)
            return
        try:
            body = json.loads(env.body) if env.body else {}
        except ValueError:
            log.warning("undecodable %s body from server", kind.name)
            return
        if kind == wire.Kind.CALL_INVITE and body.get("state") == "INVITED" and "re" in body:
            # assign the call id before resolving so the KEYS notification
            # racing in on the read thread is never dropped
            ctx = self._call
            if ctx is not None and ctx.call_id == 0:
                ctx.call_id = body["call_id"]
        if kind in (wire.Kind.ERROR, wire.Kind.LOGIN, wire.Kind.SIGNUP, wire.Kind.ROSTER,
                    wire.Kind.CHAT, wire.Kind.PONG, wire.Kind.FILE_OFFER,
                    wire.Kind.CALL_INVITE) and self._resolve_pending(body):
            if kind == wire.Kind.PONG:
                self._on_pong(body)
            return
        if kind == wire.Kind.PONG:
            self._on_pong(body)
        elif kind == wire.Kind.PRESENCE:
            self._publish("presence-changed", body)
        elif kind == wire.Kind.ERROR:
            self._on_error(body)
        elif kind == wire.Kind.CALL_INVITE:
            self._on_call_invite(body)
        elif kind == wire.Kind.CALL_ACCEPT:
            self._on_call_accept(body)
        elif kind == wire.Kind.CALL_REJECT:
            self._on_call_reject(body)
        elif kind == wire.Kind.CALL_END:
            self._on_call_end(body)
        elif kind == wire.Kind.FILE_OFFER:
            self._on_file_offer(env.sender, body)
        elif kind == wire.Kind.FILE_ACCEPT:
            self._on_file_accept(env.sender, body)

    def _on_error(self, body: dict) -> None:
        code = body.get("code", "Error")
        transfer_id = body.get("transfer_id")
        if transfer_id is not None:
            out = self._outgoing.get(transfer_id)
            if out is not None:
                out.accepted.set()
                out.credits.release()
                out.done.fail(error_for_code(code))
            inc = self._incoming.get(transfer_id)
            if inc is not None:
                inc.done.fail(error_for_code(code))
        self._publish("error", body)

    # ------------------------------------------------------------------
    # clock offset (PING/PONG midpoint)
    # ------------------------------------------------------------------

    def now_server_ms(self) -> int:
        return int(time.time() * 1000 + self._clock_offset_ms)

    def _heartbeat_loop(self) -> None:
        while self._running:
            if self._connected.is_set():
                try:
                    self._ping()
                except (PeerVoipError, OSError):
                    pass
            time.sleep(self.config.heartbeat_interval)

    def _ping(self) -> None:
        self._send_envelope(
            wire.Kind.PING, "", canonical_json({"t": int(time.time() * 1000)})
        )

    def _on_pong(self, body: dict) -> None:
        t0 = body.get("t")
        server_ms = body.get("server_ms")
        if not t0 or not server_ms:
            return
        t1 = time.time() * 1000
        offset = server_ms - (t0 + t1) / 2.0
        if not self._offset_primed:
            self._clock_offset_ms = offset
            self._offset_primed = True
        else:
            self._clock_offset_ms += 0.3 * (offset - self._clock_offset_ms)

    # ------------------------------------------------------------------
    # auth / roster
    # ------------------------------------------------------------------

    def signup(self, username: str, password: str, picture: bytes | None = None) -> dict:
        body = {"username": username, "password": password}
        if picture is not None:
            body["picture"] = base64.b64encode(picture).decode()
        return self._rpc(wire.Kind.SIGNUP, "", body)

    def login(self, username: str, password: str) -> str:
        self.username = username
        self._password = password
        return self._login_current()

    def _login_current(self) -> str:
        reply = self._rpc(
            wire.Kind.LOGIN, "", {"username": self.username, "password": self._password}
        )
        self.token_hex = reply["token"]
        self._ping()  # prime the clock offset
        if self.config.monitored or reply.get("monitored"):
            self.config.monitored = True
            self._establish_link_keys()
        return self.token_hex

    def logout(self) -> None:
        self._require_login()
        self.username = None
        self._password = None
        self.token_hex = None
        self._close_socket()
        if self._running:
            self._connect()

    def _require_login(self) -> None:
        if self.username is None or self.token_hex is None:
            raise NotLoggedIn()

    def roster(self) -> list[dict]:
        self._require_login()
        reply = self._rpc(wire.Kind.ROSTER, "", {})
        self._roster_cache = reply["users"]
        return reply["users"]

    def set_picture(self, blob: bytes) -> dict:
        self._require_login()
        return self._rpc(wire.Kind.SIGNUP, "", {
            "username": self.username, "password": self._password,
            "set_picture": True, "picture": base64.b64encode(blob).decode(),
        })

    # ------------------------------------------------------------------
    # link keys (client <-> server, monitored chat)
    # ------------------------------------------------------------------

    def _establish_link_keys(self) -> None:
        self._link_ke = crypto.KeyExchange(
            f"link:{self.username}", initiator=True, purpose=crypto.PURPOSE_LINK
        )
        self._link_ready.clear()
        self._send_envelope(wire.Kind.KEY_EXCHANGE, "", self._link_ke.opening())
        if not self._link_ready.wait(self.config.rpc_timeout_s):
            raise ExchangeTimeout("link key exchange timed out")
        # envelopes are processed in order per connection, so a ping round
        # trip proves the server has installed the link keys
        self._rpc(wire.Kind.PING, "", {"t": int(time.time() * 1000)})

    # ------------------------------------------------------------------
    # key exchange dispatch
    # ------------------------------------------------------------------

    def _on_key_exchange(self, env: wire.SignalEnvelope) -> None:
        suite, _, _ = crypto.decode_key_exchange(env.body)
        purpose, _ = crypto.split_suite_field(suite)
        if purpose == crypto.PURPOSE_LINK:
            if self._link_ke is not None:
                confirm = self._link_ke.on_response(env.body)
                self._send_envelope(wire.Kind.KEY_EXCHANGE, "", confirm)
                self.link_keys = self._link_ke.keys
                self._link_ready.set()
            return
        if purpose == crypto.PURPOSE_CALL:
            self._on_call_key_exchange(env)
            return
        if purpose == crypto.PURPOSE_CHAT:
            self._on_chat_key_exchange(env)

    # ------------------------------------------------------------------
    # chat
    # ------------------------------------------------------------------

    def _chat_label(self, peer: str) -> str:
        a, b = sorted((self.username, peer))
        return f"chat:{a}:{b}"

    def _chat_keys_for(self, peer: str, timeout: float) -> crypto.SessionKeys:
        with self._chat_lock:
            keys = self._chat_keys.get(peer)
            if keys is not None:
                return keys
            ready = self._chat_ke_ready.get(peer)
            if ready is None:
                ready = threading.Event()
                self._chat_ke_ready[peer] = ready
                ke = crypto.KeyExchange(self._chat_label(peer), initiator=True,
                                        purpose=crypto.PURPOSE_CHAT)
                self._chat_ke[peer] = ke
                opening = ke.opening()
            else:
                opening = None
        env_id = pending = None
        if opening is not None:
            # register a pending so a server-side refusal (offline peer)
            # surfaces as its real error instead of a timeout
            env_id, pending = self._send_with_pending(
                wire.Kind.KEY_EXCHANGE, peer, opening)
        deadline = time.monotonic() + timeout
        try:
            while not ready.wait(0.05):
                if pending is not None and pending.event.is_set() and pending.error:
                    with self._chat_lock:
                        self._chat_ke.pop(peer, None)
                        self._chat_ke_ready.pop(peer, None)
                    raise pending.error
                if time.monotonic() > deadline:
                    raise ExchangeTimeout(f"chat key exchange with {peer} timed out")
        finally:
            if env_id is not None:
                with self._pending_lock:
                    self._pending.pop(env_id, None)
        return self._chat_keys[peer]

    def _on_chat_key_exchange(self, env: wire.SignalEnvelope) -> None:
        peer = env.sender
        _, pub, digest = crypto.decode_key_exchange(env.body)
        with self._chat_lock:
            ke = self._chat_ke.get(peer)
            ready = self._chat_ke_ready.setdefault(peer, threading.Event())
        if pub and digest == b"\x00" * 32:
            # peer's opening; if both sides opened at once the lower
            # username's exchange wins and the other side responds
            if ke is not None and ke.initiator and self.username < peer:
                return
            responder = crypto.KeyExchange(self._chat_label(peer), initiator=False,
                                           purpose=crypto.PURPOSE_CHAT)
            response = responder.on_opening(env.body)
            with self._chat_lock:
                self._chat_ke[peer] = responder
            self._send_envelope(wire.Kind.KEY_EXCHANGE, peer, response)
        elif pub:
            # response to our opening
            if ke is None or not ke.initiator:
                return
            confirm = ke.on_response(env.body)
            self._send_envelope(wire.Kind.KEY_EXCHANGE, peer, confirm)
            with self._chat_lock:
                self._chat_keys[peer] = ke.keys
            ready.set()
        else:
            # confirm for our response
            if ke is None or ke.initiator:
                return
            ke.on_confirm(env.body)
            with self._chat_lock:
                self._chat_keys[peer] = ke.keys
            ready.set()

    def send_chat(self, to: str, body: str) -> dict:
        self._require_login()
        raw = body.encode("utf-8")
        if len(raw) > MAX_CHAT_BODY:
            raise BodyTooLarge(f"chat body {len(raw)} > {MAX_CHAT_BODY}")
        message = canonical_json({"message_id": secrets.token_hex(8), "body": body})
        if self.config.monitored:
            if not self._link_ready.wait(self.config.rpc_timeout_s):
                raise ExchangeTimeout("no link keys")
            sealed = crypto.seal_random_nonce(self.link_keys.send_key, message)
        else:
            keys = self._chat_keys_for(to, self.config.rpc_timeout_s)
            sealed = crypto.seal_random_nonce(keys.send_key, message)
        return self._rpc(wire.Kind.CHAT, to, sealed)

    def _on_chat_message(self, env: wire.SignalEnvelope) -> None:
        if self.config.monitored:
            if self.link_keys is None:
                return
            plaintext = crypto.open_random_nonce(self.link_keys.receive_key, env.body)
        else:
            keys = self._chat_keys.get(env.sender)
            if keys is None:
                log.warning("chat from %s before key exchange, dropping", env.sender)
                return
            plaintext = crypto.open_random_nonce(keys.receive_key, env.body)
        msg = json.loads(plaintext)
        self._publish("message-received", {
            "from": env.sender,
            "body": msg["body"],
            "message_id": msg.get("message_id"),
            "sent_at_ms": env.sent_at_ms,
            "received_at_ms": self.now_server_ms(),
        })

    # ------------------------------------------------------------------
    # calls
    # ------------------------------------------------------------------

    def _bind_udp(self) -> socket.socket:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        for port in range(self.config.media_port_min, self.config.media_port_max + 1):
            try:
                sock.bind((self.config.control_host, port))
                return sock
            except OSError:
                continue
        sock.bind((self.config.control_host, 0))
        return sock

    def start_call(self, callee: str, wait_active: bool = False, timeout: float = 10.0) -> int:
        self._require_login()
        with self._call_lock:
            if self._call is not None:
                raise CallSetupFailed("already in a call")
            ctx = _CallContext(call_id=0, peer=callee, role="caller")
            self._call = ctx
        try:
            ctx.udp = self._bind_udp()
            reply = self._rpc(wire.Kind.CALL_INVITE, "", {
                "callee": callee, "udp": list(ctx.udp.getsockname()),
            })
        except PeerVoipError:
            with self._call_lock:
                self._call = None
            if ctx.udp:
                ctx.udp.close()
            raise
        ctx.call_id = reply["call_id"]
        self._publish("call-state", {"call_id": ctx.call_id, "state": "INVITED", "peer": callee})
        if wait_active and not ctx.active.wait(timeout):
            raise CallSetupFailed("call did not become active")
        return ctx.call_id

    def accept_call(self, call_id: int) -> None:
        self._require_login()
        ctx = self._call
        if ctx is None or ctx.call_id != call_id:
            raise UnknownCall(str(call_id))
        ctx.udp = self._bind_udp()
        self._send_envelope(wire.Kind.CALL_ACCEPT, "", canonical_json({
            "call_id": call_id, "udp": list(ctx.udp.getsockname()),
        }))

    def reject_call(self, call_id: int) -> None:
        self._require_login()
        ctx = self._call
        if ctx is None or ctx.call_id != call_id:
            raise UnknownCall(str(call_id))
        # clear local state before the reject leaves, otherwise a prompt
        # follow-up invite can race the teardown and look like busy
        with self._call_lock:
            self._call = None
        self._send_envelope(wire.Kind.CALL_REJECT, "", canonical_json({"call_id": call_id}))
        self._publish("call-state", {"call_id": call_id, "state": "REJECTED"})

    def end_call(self, call_id: int) -> None:
        self._require_login()
        ctx = self._call
        self._send_envelope(wire.Kind.CALL_END, "", canonical_json({"call_id": call_id}))
        if ctx is not None and ctx.call_id == call_id:
            # the ENDED notification from the server tears the call down
            if not ctx.stop_event.wait(5.0):
                self._finish_call(ctx, reason="end-timeout")

    def _on_call_invite(self, body: dict) -> None:
        if "caller" in body:
            with self._call_lock:
                if self._call is not None:
                    return  # busy; server should not have routed this
                ctx = _CallContext(call_id=body["call_id"], peer=body["caller"], role="callee")
                self._call = ctx
            self._send_envelope(wire.Kind.CALL_INVITE, "", canonical_json({
                "call_id": ctx.call_id, "ringing": True,
            }))
            self._publish("call-incoming", {"call_id": ctx.call_id, "caller": ctx.peer})
            self._publish("call-state", {"call_id": ctx.call_id, "state": "RINGING"})
        elif body.get("state") == "RINGING":
            ctx = self._call
            if ctx is not None and ctx.call_id == body.get("call_id"):
                ctx.state = "RINGING"
                self._publish("call-state", {"call_id": ctx.call_id, "state": "RINGING"})

    def _call_label(self, ctx: _CallContext) -> str:
        caller = self.username if ctx.role == "caller" else ctx.peer
        callee = ctx.peer if ctx.role == "caller" else self.username
        return f"call:{ctx.call_id}:{caller}:{callee}"

    def _on_call_accept(self, body: dict) -> None:
        ctx = self._call
        if ctx is None or ctx.call_id != body.get("call_id"):
            return
        state = body.get("state")
        if state == "KEYS" and ctx.role == "caller":
            ctx.peer_addr = tuple(body.get("peer_udp") or ()) or None
            ctx.ke = crypto.KeyExchange(self._call_label(ctx), initiator=True,
                                        purpose=crypto.PURPOSE_CALL)
            self._send_envelope(wire.Kind.KEY_EXCHANGE, ctx.peer, ctx.ke.opening())
        elif state == "ACTIVE":
            ctx.peer_addr = tuple(body["peer_udp"])
            ctx.route = body.get("route", [])
            ctx.state = "ACTIVE"
            if not ctx.keys_ready.wait(5.0):
                log.error("call %d active without keys", ctx.call_id)
                return
            self._start_media(ctx)
            ctx.active.set()
            self._publish("call-state", {"call_id": ctx.call_id, "state": "ACTIVE",
                                         "peer": ctx.peer, "route": ctx.route})

    def _on_call_key_exchange(self, env: wire.SignalEnvelope) -> None:
        ctx = self._call
        if ctx is None or env.sender != ctx.peer:
            return
        _, pub, digest = crypto.decode_key_exchange(env.body)
        try:
            if ctx.role == "callee" and pub and digest == b"\x00" * 32:
                ctx.ke = crypto.KeyExchange(self._call_label(ctx), initiator=False,
                                            purpose=crypto.PURPOSE_CALL)
                response = ctx.ke.on_opening(env.body)
                self._send_envelope(wire.Kind.KEY_EXCHANGE, ctx.peer, response)
            elif ctx.role == "caller" and ctx.ke is not None and pub:
                confirm = ctx.ke.on_response(env.body)
                self._send_envelope(wire.Kind.KEY_EXCHANGE, ctx.peer, confirm)
                ctx.keys = ctx.ke.keys
                ctx.keys_ready.set()
                self._send_envelope(wire.Kind.CALL_ACCEPT, "", canonical_json({
                    "call_id": ctx.call_id, "confirmed": True,
                }))
            elif ctx.role == "callee" and ctx.ke is not None and not pub:
                ctx.ke.on_confirm(env.body)
                ctx.keys = ctx.ke.keys
                ctx.keys_ready.set()
        except PeerVoipError as exc:
            log.error("call key exchange failed: %s", exc)
            self._publish("error", {"code": exc.code, "call_id": ctx.call_id})
            try:
                self.end_call(ctx.call_id)
            except PeerVoipError:
                pass

    def _on_call_reject(self, body: dict) -> None:
        ctx = self._call
        if ctx is None or ctx.call_id != body.get("call_id"):
            return
        with self._call_lock:
            self._call = None
        self._last_call = ctx
        self._publish("call-state", {"call_id": ctx.call_id, "state": "REJECTED"})

    def _on_call_end(self, body: dict) -> None:
        ctx = self._call
        if ctx is None or ctx.call_id != body.get("call_id"):
            return
        self._finish_call(ctx, reason=body.get("reason", "ended"))

    def _finish_call(self, ctx: _CallContext, reason: str) -> None:
        ctx.stop_event.set()
        ctx.state = "ENDED"
        if ctx.udp is not None:
            try:
                ctx.udp.close()
            except OSError:
                pass
        with self._call_lock:
            if self._call is ctx:
                self._call = None
        self._last_call = ctx
        self._publish("call-state", {"call_id": ctx.call_id, "state": "ENDED", "reason": reason})

    # ------------------------------------------------------------------
    # media pipeline
    # ------------------------------------------------------------------

    def _start_media(self, ctx: _CallContext) -> None:
        ctx.packetizer = media.Packetizer(ctx.keys, source_id=secrets.randbits(32))
        ctx.depacketizer = media.Depacketizer(ctx.keys)
        ctx.jitter = media.JitterBuffer(depth=self.config.jitter_depth)
        if self.config.relay_media:
            from .server import _MediaRelay

            role = 0 if ctx.role == "caller" else 1
            reg = _MediaRelay.registration(ctx.call_id, role)
            for _ in range(3):
                ctx.udp.sendto(reg, ctx.peer_addr)
        sender = threading.Thread(target=self._media_send_loop, args=(ctx,), daemon=True)
        receiver = threading.Thread(target=self._media_recv_loop, args=(ctx,), daemon=True)
        playout = threading.Thread(target=self._media_playout_loop, args=(ctx,), daemon=True)
        stats = threading.Thread(target=self._media_stats_loop, args=(ctx,), daemon=True)
        ctx.threads = [sender, receiver, playout, stats]
        for t in ctx.threads:
            t.start()

    def _media_send_loop(self, ctx: _CallContext) -> None:
        source = self.audio_source_factory()
        period = media.FRAME_MS / 1000.0
        next_tick = time.monotonic() + period
        while not ctx.stop_event.is_set():
            delay = next_tick - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            next_tick += period
            try:
                pcm = next(source)
            except StopIteration:
                return
            capture_ms = self.now_server_ms() - media.FRAME_MS
            datagram = ctx.packetizer.packetize(pcm, capture_ms)
            ctx.stats.frames_sent += 1
            if self.media_send_filter is not None:
                datagram = self.media_send_filter(datagram)
                if datagram is None:
                    continue
            shaper = self.config.shaper
            if shaper is not None:
                if not shaper.admit_datagram(len(datagram)):
                    continue

                def deliver(d=datagram):
                    try:
                        ctx.udp.sendto(d, ctx.peer_addr)
                    except OSError:
                        pass

                shaper.delay_datagram(deliver)
            else:
                try:
                    ctx.udp.sendto(datagram, ctx.peer_addr)
                except OSError:
                    return

    def _media_recv_loop(self, ctx: _CallContext) -> None:
        ctx.udp.settimeout(0.2)
        while not ctx.stop_event.is_set():
            try:
                datagram, _ = ctx.udp.recvfrom(wire.MAX_DATAGRAM + 1)
            except socket.timeout:
                continue
            except OSError:
                return
            try:
                ext_seq, media_ts, capture_ms, pcm = ctx.depacketizer.depacketize(datagram)
            except PeerVoipError:
                continue  # tampered or malformed frames are dropped, not fatal
            ctx.stats.frames_received += 1
            ctx.stats.record_transit(self.now_server_ms(), media_ts)
            ctx.jitter.push(ext_seq, struct.pack(">Q", capture_ms) + pcm)

    def _media_playout_loop(self, ctx: _CallContext) -> None:
        period = media.FRAME_MS / 1000.0
        next_tick = time.monotonic() + period
        while not ctx.stop_event.is_set():
            delay = next_tick - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            next_tick += period
            out = ctx.jitter.tick()
            if len(out) == 8 + media.FRAME_BYTES:
                (capture_ms,) = struct.unpack_from(">Q", out, 0)
                pcm = out[8:]
                ctx.stats.record_delay(self.now_server_ms() - capture_ms)
            else:
                pcm = out
            ctx.stats.lost_count = ctx.jitter.stats.lost_count
            ctx.stats.late_count = ctx.jitter.stats.late_count
            ctx.stats.duplicate_count = ctx.jitter.stats.duplicate_count
            self.audio_sink(pcm)

    def _media_stats_loop(self, ctx: _CallContext) -> None:
        while not ctx.stop_event.wait(1.0):
            self._publish("call-stats", {"call_id": ctx.call_id, **ctx.stats.snapshot()})

    def get_stats(self, call_id: int | None = None) -> dict:
        ctx = self._call or self._last_call
        if ctx is None or (call_id is not None and ctx.call_id != call_id):
            raise UnknownCall(str(call_id))
        return {"call_id": ctx.call_id, "state": ctx.state, **ctx.stats.snapshot()}

    def current_call(self) -> _CallContext | None:
        return self._call

    # ------------------------------------------------------------------
    # file transfer
    # ------------------------------------------------------------------

    def offer_file(self, recipient: str, data: bytes, filename: str) -> int:
        self._require_login()
        manifest = files.FileManifest.for_bytes(
            filename, data, blocklist=self.config.blocklist, max_size=self.config.max_file_size
        )
        transfer = _OutgoingTransfer(manifest, data, recipient)
        self._outgoing[manifest.transfer_id] = transfer
        self._rpc(wire.Kind.FILE_OFFER, recipient, {
            "transfer_id": manifest.transfer_id,
            "filename": manifest.filename,
            "size": manifest.size,
            "digest": manifest.content_digest.hex(),
            "chunk_size": manifest.chunk_size,
        })
        return manifest.transfer_id

    def _on_file_offer(self, sender: str, body: dict) -> None:
        manifest = files.FileManifest(
            filename=files.sanitize_filename(body["filename"]),
            size=body["size"],
            content_digest=bytes.fromhex(body["digest"]),
            transfer_id=body["transfer_id"],
            chunk_size=body.get("chunk_size", files.CHUNK_SIZE),
        )
        try:
            # accept-side enforcement: never take a blocked extension
            files.check_filename(manifest.filename, self.config.blocklist)
        except BlockedExtension:
            self._send_envelope(wire.Kind.FILE_ACCEPT, sender, canonical_json({
                "transfer_id": manifest.transfer_id, "done": True, "ok": False,
                "code": "BlockedExtension",
            }))
            return
        self._pending_offers[manifest.transfer_id] = {
            "manifest": manifest, "sender": sender,
        }
        self._publish("file-offer", {
            "transfer_id": manifest.transfer_id, "from": sender,
            "filename": manifest.filename, "size": manifest.size,
        })

    def accept_file(self, transfer_id: int, save_path: str | None = None) -> None:
        self._require_login()
        offer = self._pending_offers.pop(transfer_id, None)
        if offer is None:
            raise TransferFailed(f"no pending offer {transfer_id}")
        if save_path is None and self.config.download_dir:
            save_path = os.path.join(self.config.download_dir, offer["manifest"].filename)
        transfer = _IncomingTransfer(offer["manifest"], offer["sender"], save_path)
        transfer.started_at = time.monotonic()
        self._incoming[transfer_id] = transfer
        self._send_envelope(wire.Kind.FILE_ACCEPT, offer["sender"], canonical_json({
            "transfer_id": transfer_id, "accept": True, "credit": files.WINDOW_CHUNKS,
        }))

    def _on_file_accept(self, sender: str, body: dict) -> None:
        transfer_id = body.get("transfer_id")
        out = self._outgoing.get(transfer_id)
        if body.get("accept") and out is not None:
            for _ in range(body.get("credit", files.WINDOW_CHUNKS)):
                out.credits.release()
            out.accepted.set()
            out.started_at = time.monotonic()
            threading.Thread(target=self._file_send_loop, args=(out,), daemon=True).start()
        elif "ack" in body and out is not None:
            out.credits.release()
        elif body.get("done"):
            if out is not None:
                elapsed = time.monotonic() - out.started_at if out.started_at else 0.0
                if body.get("ok"):
                    out.done.resolve({
                        "transfer_id": transfer_id, "ok": True, "elapsed_s": elapsed,
                        "size": out.manifest.size, "digest": out.manifest.content_digest.hex(),
                    })
                else:
                    out.done.fail(error_for_code(body.get("code", "TransferFailed")))
                self._publish("file-progress", {"transfer_id": transfer_id,
                                                "done": True, "ok": body.get("ok", False)})

    def _file_send_loop(self, out: _OutgoingTransfer) -> None:
        for index, final, chunk in files.iter_chunks(out.data, out.manifest.chunk_size):
            if out.done.event.is_set():
                return
            if not out.credits.acquire(timeout=60.0):
                out.done.fail(TransferFailed("credit starvation"))
                return
            body = files.encode_chunk(out.manifest.transfer_id, index, final, chunk)
            try:
                self._send_envelope(wire.Kind.FILE_CHUNK, out.recipient, body)
            except (PeerVoipError, OSError) as exc:
                out.done.fail(TransferFailed(str(exc)))
                return

    def _on_file_chunk(self, env: wire.SignalEnvelope) -> None:
        transfer_id, index, final, payload = files.decode_chunk(env.body)
        transfer = self._incoming.get(transfer_id)
        if transfer is None:
            return
        transfer.reassembler.add(index, final, payload)
        transfer.received_bytes += len(payload)
        self._send_envelope(wire.Kind.FILE_ACCEPT, transfer.sender, canonical_json({
            "transfer_id": transfer_id, "ack": index,
        }))
        self._publish("file-progress", {
            "transfer_id": transfer_id, "received": transfer.received_bytes,
            "total": transfer.manifest.size,
        })
        if transfer.reassembler.complete:
            self._complete_incoming(transfer)

    def _complete_incoming(self, transfer: _IncomingTransfer) -> None:
        try:
            data = transfer.reassembler.assemble()
        except PeerVoipError as exc:
            self._send_envelope(wire.Kind.FILE_ACCEPT, transfer.sender, canonical_json({
                "transfer_id": transfer.manifest.transfer_id, "done": True, "ok": False,
                "code": exc.code,
            }))
            transfer.done.fail(exc)
            self._incoming.pop(transfer.manifest.transfer_id, None)
            return
        if transfer.save_path:
            with open(transfer.save_path, "wb") as fh:
                fh.write(data)
        transfer.data = data
        elapsed = time.monotonic() - transfer.started_at if transfer.started_at else 0.0
        self._send_envelope(wire.Kind.FILE_ACCEPT, transfer.sender, canonical_json({
            "transfer_id": transfer.manifest.transfer_id, "done": True, "ok": True,
        }))
        transfer.done.resolve({
            "transfer_id": transfer.manifest.transfer_id, "ok": True,
            "elapsed_s": elapsed, "size": len(data), "data": data,
        })
        self._publish("file-progress", {"transfer_id": transfer.manifest.transfer_id,
                                        "done": True, "ok": True})

    def wait_transfer(self, transfer_id: int, timeout: float = 120.0) -> dict:
        """Block until a transfer (either direction) completes."""
        transfer = self._outgoing.get(transfer_id) or self._incoming.get(transfer_id)
        if transfer is None:
            raise TransferFailed(f"unknown transfer {transfer_id}")
        return transfer.done.wait(timeout)

    # ------------------------------------------------------------------
    # events
    # ------------------------------------------------------------------

    def subscribe(self) -> _Subscriber:
        sub = _Subscriber()
        self._subscribers.append(sub)
        sub.publish("snapshot", self._snapshot())
        return sub

    def unsubscribe(self, sub: _Subscriber) -> None:
        if sub in self._subscribers:
            self._subscribers.remove(sub)

    def _snapshot(self) -> dict:
        call = self._call
        return {
            "username": self.username,
            "connected": self._connected.is_set(),
            "roster": self._roster_cache,
            "call": None if call is None else {
                "call_id": call.call_id, "peer": call.peer, "state": call.state,
            },
            "pending_offers": [
                {"transfer_id": tid, "from": o["sender"],
                 "filename": o["manifest"].filename, "size": o["manifest"].size}
                for tid, o in self._pending_offers.items()
            ],
        }

    def _publish(self, kind: str, payload) -> None:
        for sub in list(self._subscribers):
            sub.publish(kind, payload)

    # ------------------------------------------------------------------
    # control API
    # ------------------------------------------------------------------

    def _start_control(self) -> None:
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self.config.control_host, self.config.control_port))
        listener.listen(16)
        self.config.control_port = listener.getsockname()[1]
        self._control_listener = listener
        threading.Thread(target=self._control_accept_loop, daemon=True).start()

    def _control_accept_loop(self) -> None:
        while self._running:
            try:
                sock, addr = self._control_listener.accept()
            except OSError:
                return
            if not addr[0].startswith("127."):
                sock.close()
                continue
            threading.Thread(target=self._control_conn, args=(sock,), daemon=True).start()

    def _control_conn(self, sock: socket.socket) -> None:
        try:
            head = sock.recv(8, socket.MSG_PEEK)
            if not head:
                return
            if head.split(b" ")[0] in (b"GET", b"POST", b"HEAD", b"OPTIONS"):
                self._serve_http(sock)
            else:
                self._serve_json_lines(sock)
        except (OSError, ConnectionError):
            pass
        finally:
            try:
                sock.close()
            except OSError:
                pass

    _CONTROL_METHODS = {
        "signup", "login", "logout", "roster", "send_chat", "start_call",
        "accept_call", "reject_call", "end_call", "offer_file", "accept_file",
        "set_picture", "get_stats",
    }

    def control_request(self, method: str, params: dict) -> dict:
        if method not in self._CONTROL_METHODS:
            raise PeerVoipError(f"unknown method {method}")
        params = dict(params or {})
        if method == "signup":
            if params.get("picture"):
                params["picture"] = base64.b64decode(params["picture"])
            return {"ok": bool(self.signup(params["username"], params["password"],
                                           params.get("picture")))}
        if method == "login":
            return {"token": self.login(params["username"], params["password"])}
        if method == "logout":
            self.logout()
            return {"ok": True}
        if method == "roster":
            return {"users": self.roster()}
        if method == "send_chat":
            return self.send_chat(params["to"], params["body"])
        if method == "start_call":
            return {"call_id": self.start_call(params["callee"],
                                               wait_active=params.get("wait_active", False))}
        if method == "accept_call":
            self.accept_call(params["call_id"])
            return {"ok": True}
        if method == "reject_call":
            self.reject_call(params["call_id"])
            return {"ok": True}
        if method == "end_call":
            self.end_call(params["call_id"])
            return {"ok": True}
        if method == "offer_file":
            if "data" in params:
                data = base64.b64decode(params["data"])
                filename = params.get("filename", "file")
            else:
                path = params["path"]
                with open(path, "rb") as fh:
                    data = fh.read()
                filename = params.get("filename") or os.path.basename(path)
            return {"transfer_id": self.offer_file(params["to"], data, filename)}
        if method == "accept_file":
            self.accept_file(params["transfer_id"], params.get("save_path"))
            return {"ok": True}
        if method == "set_picture":
            self.set_picture(base64.b64decode(params["picture"]))
            return {"ok": True}
        if method == "get_stats":
            return self.get_stats(params.get("call_id"))
        raise PeerVoipError(f"unhandled method {method}")

    def _serve_json_lines(self, sock: socket.socket) -> None:
        rfile = sock.makefile("rb")
        sub: _Subscriber | None = None

        def send_obj(obj) -> None:
            sock.sendall(canonical_json(obj) + b"\n")

        try:
            for line in rfile:
                line = line.strip()
                if not line:
                    continue
                try:
                    request = json.loads(line)
                except ValueError:
                    send_obj({"error": {"code": "Malformed", "message": "bad JSON"}})
                    continue
                req_id = request.get("id")
                method = request.get("method")
                if method == "subscribe":
                    sub = self.subscribe()
                    send_obj({"id": req_id, "result": {"subscribed": True}})
                    threading.Thread(
                        target=self._pump_events, args=(sock, sub), daemon=True
                    ).start()
                    continue
                try:
                    result = self.control_request(method, request.get("params") or {})
                    send_obj({"id": req_id, "result": result})
                except PeerVoipError as exc:
                    send_obj({"id": req_id, "error": {"code": exc.code, "message": exc.message}})
        finally:
            if sub is not None:
                self.unsubscribe(sub)

    def _pump_events(self, sock: socket.socket, sub: _Subscriber) -> None:
        try:
            while True:
                try:
                    event = sub.queue.get(timeout=1.0)
                except Empty:
                    continue
                sock.sendall(canonical_json(event) + b"\n")
        except OSError:
            self.unsubscribe(sub)

    # --- minimal HTTP bridge (static assets + RPC + SSE) ---------------

    def _serve_http(self, sock: socket.socket) -> None:
        rfile = sock.makefile("rb")
        request_line = rfile.readline().decode("latin-1").strip()
        parts = request_line.split(" ")
        if len(parts) < 2:
            return
        method, path = parts[0], parts[1]
        headers = {}
        while True:
            line = rfile.readline().decode("latin-1").strip()
            if not line:
                break
            if ":" in line:
                k, v = line.split(":", 1)
                headers[k.strip().lower()] = v.strip()

        def respond(status: str, content_type: str, body: bytes, extra: str = "") -> None:
            head = (
                f"HTTP/1.1 {status}\r\nContent-Type: {content_type}\r\n"
                f"Content-Length: {len(body)}\r\nAccess-Control-Allow-Origin: *\r\n"
                f"Connection: close\r\n{extra}\r\n"
            )
            sock.sendall(head.encode("latin-1") + body)

        if method == "POST" and path == "/api/rpc":
            length = int(headers.get("content-length", "0"))
            payload = rfile.read(length) if length else b"{}"
            try:
                request = json.loads(payload)
                result = self.control_request(request.get("method"), request.get("params") or {})
                respond("200 OK", "application/json", canonical_json({"result": result}))
            except PeerVoipError as exc:
                respond("200 OK", "application/json",
                        canonical_json({"error": {"code": exc.code, "message": exc.message}}))
            except (ValueError, KeyError) as exc:
                respond("400 Bad Request", "application/json",
                        canonical_json({"error": {"code": "Malformed", "message": str(exc)}}))
            return
        if method == "GET" and path == "/api/events":
            sock.sendall(
                b"HTTP/1.1 200 OK\r\nContent-Type: text/event-stream\r\n"
                b"Cache-Control: no-cache\r\nAccess-Control-Allow-Origin: *\r\n"
                b"Connection: keep-alive\r\n\r\n"
            )
            sub = self.subscribe()
            try:
                while True:
                    try:
                        event = sub.queue.get(timeout=15.0)
                    except Empty:
                        sock.sendall(b": keepalive\n\n")
                        continue
                    sock.sendall(b"data: " + canonical_json(event) + b"\n\n")
            except OSError:
                pass
            finally:
                self.unsubscribe(sub)
            return
        if method in ("GET", "HEAD"):
            self._serve_static(path, respond, head_only=method == "HEAD")
            return
        respond("405 Method Not Allowed", "text/plain", b"method not allowed")

    _CONTENT_TYPES = {
        ".html": "text/html", ".js": "text/javascript", ".mjs": "text/javascript",
        ".css": "text/css", ".json": "application/json", ".png": "image/png",
        ".svg": "image/svg+xml", ".ico": "image/x-icon",
    }

    def _serve_static(self, path: str, respond, head_only: bool = False) -> None:
        static = self.config.static_dir
        if not static:
            respond("404 Not Found", "text/plain", b"no static assets configured")
            return
        rel = path.split("?")[0].lstrip("/") or "index.html"
        full = os.path.realpath(os.path.join(static, rel))
        if not full.startswith(os.path.realpath(static)) or not os.path.isfile(full):
            respond("404 Not Found", "text/plain", b"not found")
            return
        ext = os.path.splitext(full)[1].lower()
        with open(full, "rb") as fh:
            body = fh.read()
        respond("200 OK", self._CONTENT_TYPES.get(ext, "application/octet-stream"),
                b"" if head_only else body)
