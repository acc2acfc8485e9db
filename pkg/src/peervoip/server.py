"""Signaling server: presence, envelope routing, call sessions, chat
journaling, and the streaming file relay.

One thread per client connection reads frames; a writer thread per
connection drains an outbound queue, which both preserves per-connection
FIFO order and gives the file relay an exact measure of how many payload
bytes are parked in server memory at any instant.
"""

from __future__ import annotations

import json
import logging
import socket
import struct
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from queue import Queue
from urllib.parse import parse_qs, urlparse

from . import crypto, files, wire
from .auth import Directory
from .errors import (
    BadCredentials,
    CalleeBusy,
    CalleeOffline,
    PeerVoipError,
    RecipientOffline,
    Unauthorized,
    UnknownCall,
)
from .journal import MonitorJournal
from .routing import CallSession, CallState, ProxyGraph, shortest_route

log = logging.getLogger("peervoip.server")


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 5060
    admin_port: int | None = None  # loopback admin HTTP endpoint, None = off
    monitored: bool = False
    relay_media: bool = False
    heartbeat_interval: float = 5.0
    store_path: str | None = None
    journal_dir: str | None = None
    blocklist: frozenset = files.DEFAULT_BLOCKLIST
    max_file_size: int = files.DEFAULT_MAX_FILE
    admins: frozenset = frozenset()
    proxy_id: str = "P0"
    media_port_min: int = 40000
    media_port_max: int = 40100


@dataclass
class RelayTransfer:
    transfer_id: int
    sender: str
    recipient: str
    size: int
    buffered_bytes: int = 0
    high_water: int = 0
    done: bool = False


class _Conn:
    def __init__(self, server: "SignalServer", sock: socket.socket, addr):
        self.server = server
        self.sock = sock
        self.addr = addr
        self.username: str | None = None
        self.token: bytes | None = None
        self.link_ke: crypto.KeyExchange | None = None
        self.link_keys: crypto.SessionKeys | None = None
        self._out: Queue = Queue()
        self._env_id = 0
        self._env_lock = threading.Lock()
        self.alive = True
        self._writer = threading.Thread(target=self._write_loop, daemon=True)
        self._writer.start()

    def next_envelope_id(self) -> int:
        with self._env_lock:
            self._env_id += 1
            return self._env_id

    def send_envelope(self, env: wire.SignalEnvelope, on_sent=None) -> None:
        self._out.put((wire.encode_envelope(env), on_sent))

    def send(self, kind: wire.Kind, recipient: str, body: bytes, sender: str = "",
             on_sent=None) -> None:
        env = wire.SignalEnvelope(
            kind=kind,
            sender=sender,
            recipient=recipient,
            envelope_id=self.next_envelope_id(),
            sent_at_ms=int(self.server.clock() * 1000),
            body=body,
        )
        self.send_envelope(env, on_sent)

    def _write_loop(self) -> None:
        while True:
            item = self._out.get()
            if item is None:
                break
            data, on_sent = item
            try:
                self.sock.sendall(data)
            except OSError:
                self.alive = False
            finally:
                if on_sent:
                    on_sent()

    def recv_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = self.sock.recv(n - len(buf))
            if not chunk:
                raise ConnectionError("connection closed")
            buf.extend(chunk)
        return bytes(buf)

    def close(self) -> None:
        self.alive = False
        self._out.put(None)
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass


class SignalServer:
    def __init__(self, config: ServerConfig | None = None, clock=time.time):
        self.config = config or ServerConfig()
        self.clock = clock
        self.directory = Directory(
            store_path=self.config.store_path,
            clock=clock,
            heartbeat_interval=self.config.heartbeat_interval,
        )
        self.journal = MonitorJournal(self.config.journal_dir, clock=clock)
        self.proxy_graph = ProxyGraph()
        self.proxy_graph.add_proxy(self.config.proxy_id)
        self.multi_proxy = False
        self.sessions: dict[int, CallSession] = {}
        self.transfers: dict[int, RelayTransfer] = {}
        self._conns: dict[str, _Conn] = {}
        self._lock = threading.RLock()
        self._listener: socket.socket | None = None
        self._admin_http: ThreadingHTTPServer | None = None
        self._relays: dict[int, "_MediaRelay"] = {}
        self._running = False
        # test hooks
        self.crash_after_journal = False
        self.wiretap: list[bytes] | None = None

    # --- lifecycle -----------------------------------------------------

    def start(self) -> None:
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((self.config.host, self.config.port))
        self._listener.listen(64)
        self.config.port = self._listener.getsockname()[1]
        self._running = True
        threading.Thread(target=self._accept_loop, daemon=True).start()
        if self.config.admin_port is not None:
            self._start_admin()
        log.info("signaling server listening on %s:%d", self.config.host, self.config.port)

    def stop(self) -> None:
        self._running = False
        if self._listener:
            try:
                self._listener.close()
            except OSError:
                pass
        with self._lock:
            conns = list(self._conns.values())
        for conn in conns:
            conn.close()
        for relay in list(self._relays.values()):
            relay.stop()
        if self._admin_http:
            self._admin_http.shutdown()
            self._admin_http.server_close()

    @property
    def address(self) -> tuple[str, int]:
        return (self.config.host, self.config.port)

    def _accept_loop(self) -> None:
        while self._running:
            try:
                sock, addr = self._listener.accept()
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn = _Conn(self, sock, addr)
            threading.Thread(target=self._conn_loop, args=(conn,), daemon=True).start()

    def _conn_loop(self, conn: _Conn) -> None:
        try:
            while conn.alive:
                frame = wire.read_frame(conn.recv_exact)
                if self.wiretap is not None:
                    self.wiretap.append(frame)
                env = wire.decode_envelope(frame)
                self._dispatch(conn, env)
        except (ConnectionError, OSError):
            pass
        except PeerVoipError as exc:
            log.warning("protocol violation from %s: %s, closing", conn.addr, exc)
        finally:
            self._drop_conn(conn)

    def _drop_conn(self, conn: _Conn) -> None:
        conn.close()
        username = conn.username
        if username is None:
            return
        with self._lock:
            if self._conns.get(username) is conn:
                del self._conns[username]
        if conn.token is not None:
            try:
                self.directory.logout(conn.token)
            except Unauthorized:
                pass
        self._teardown_user(username)
        self._broadcast_presence(username, "OFFLINE")

    def _teardown_user(self, username: str) -> None:
        with self._lock:
            sessions = [s for s in self.sessions.values() if s.involves(username) and not s.terminal]
            transfers = [t for t in self.transfers.values()
                         if not t.done and username in (t.sender, t.recipient)]
        for session in sessions:
            self._end_session(session, reason="peer-disconnected")
        for transfer in transfers:
            transfer.done = True
            other = transfer.sender if transfer.recipient == username else transfer.recipient
            peer = self._conn_for(other)
            if peer:
                peer.send(wire.Kind.ERROR, other,
                          canonical_json({"code": "PeerDisconnected",
                                          "transfer_id": transfer.transfer_id}))

    # --- helpers ---------------------------------------------------------

    def _conn_for(self, username: str) -> _Conn | None:
        with self._lock:
            conn = self._conns.get(username)
        return conn if conn is not None and conn.alive else None

    def _error(self, conn: _Conn, code: str, re_id: int, **extra) -> None:
        body = {"code": code, "re": re_id}
        body.update(extra)
        conn.send(wire.Kind.ERROR, conn.username or "", canonical_json(body))

    def _broadcast_presence(self, username: str, state: str) -> None:
        body = canonical_json({"username": username, "state": state})
        with self._lock:
            conns = [c for u, c in self._conns.items() if u != username]
        for conn in conns:
            conn.send(wire.Kind.PRESENCE, conn.username or "", body)

    def _require_login(self, conn: _Conn, env: wire.SignalEnvelope) -> bool:
        if conn.username is None or env.sender != conn.username:
            self._error(conn, "Unauthorized", env.envelope_id)
            return False
        return True

    # --- dispatch --------------------------------------------------------

    def _dispatch(self, conn: _Conn, env: wire.SignalEnvelope) -> None:
        kind = env.kind
        try:
            if kind == wire.Kind.SIGNUP:
                self._on_signup(conn, env)
            elif kind == wire.Kind.LOGIN:
                self._on_login(conn, env)
            elif kind == wire.Kind.PING:
                self._on_ping(conn, env)
            elif kind == wire.Kind.ROSTER:
                self._on_roster(conn, env)
            elif kind == wire.Kind.CHAT:
                self._on_chat(conn, env)
            elif kind == wire.Kind.KEY_EXCHANGE:
                self._on_key_exchange(conn, env)
            elif kind == wire.Kind.CALL_INVITE:
                self._on_call_invite(conn, env)
            elif kind == wire.Kind.CALL_ACCEPT:
                self._on_call_accept(conn, env)
            elif kind == wire.Kind.CALL_REJECT:
                self._on_call_reject(conn, env)
            elif kind == wire.Kind.CALL_END:
                self._on_call_end(conn, env)
            elif kind == wire.Kind.FILE_OFFER:
                self._on_file_offer(conn, env)
            elif kind == wire.Kind.FILE_ACCEPT:
                self._on_file_accept(conn, env)
            elif kind == wire.Kind.FILE_CHUNK:
                self._on_file_chunk(conn, env)
            elif kind == wire.Kind.PRESENCE:
                pass  # server-originated only
            else:
                self._error(conn, "Malformed", env.envelope_id)
        except PeerVoipError as exc:
            self._error(conn, exc.code, env.envelope_id)

    # --- auth / presence -------------------------------------------------

    def _on_signup(self, conn: _Conn, env: wire.SignalEnvelope) -> None:
        body = json.loads(env.body)
        picture = None
        if body.get("picture"):
            import base64

            picture = base64.b64decode(body["picture"])
        if body.get("set_picture"):
            if conn.token is None:
                raise Unauthorized()
            self.directory.set_profile_picture(conn.token, picture or b"")
        else:
            self.directory.signup(body["username"], body["password"], picture)
        conn.send(wire.Kind.SIGNUP, body["username"], canonical_json({"ok": True, "re": env.envelope_id}))

    def _on_login(self, conn: _Conn, env: wire.SignalEnvelope) -> None:
        body = json.loads(env.body)
        username = body.get("username", "")
        token = self.directory.login(username, body.get("password", ""))
        with self._lock:
            old = self._conns.get(username)
            self._conns[username] = conn
        if old is not None and old is not conn:
            old.username = None  # prevent _drop_conn from evicting the new session
            old.close()
        conn.username = username
        conn.token = token
        conn.send(
            wire.Kind.LOGIN,
            username,
            canonical_json({"ok": True, "token": token.hex(), "re": env.envelope_id,
                            "monitored": self.config.monitored,
                            "heartbeat_interval": self.config.heartbeat_interval}),
        )
        self._broadcast_presence(username, "ONLINE")

    def _on_ping(self, conn: _Conn, env: wire.SignalEnvelope) -> None:
        if conn.token is not None:
            try:
                self.directory.heartbeat(conn.token)
            except Unauthorized:
                pass
        t_client = 0
        if env.body:
            try:
                t_client = json.loads(env.body).get("t", 0)
            except (ValueError, AttributeError):
                t_client = 0
        conn.send(
            wire.Kind.PONG,
            conn.username or "",
            canonical_json({"t": t_client, "server_ms": int(self.clock() * 1000),
                            "re": env.envelope_id}),
        )

    def _on_roster(self, conn: _Conn, env: wire.SignalEnvelope) -> None:
        if not self._require_login(conn, env):
            return
        records = self.directory.roster(conn.token)
        users = [
            {"username": r.username, "state": r.state.value, "last_heartbeat_ms": r.last_heartbeat_ms}
            for r in records
        ]
        conn.send(wire.Kind.ROSTER, conn.username, canonical_json({"users": users, "re": env.envelope_id}))

    # --- chat --------------------------------------------------------------

    def _on_chat(self, conn: _Conn, env: wire.SignalEnvelope) -> None:
        if not self._require_login(conn, env):
            return
        recipient = env.recipient
        peer = self._conn_for(recipient)
        if peer is None or not self.directory.is_online(recipient):
            raise RecipientOffline(recipient)
        if self.config.monitored:
            if conn.link_keys is None or peer.link_keys is None:
                raise Unauthorized("monitored mode requires a link key exchange")
            plaintext = crypto.open_random_nonce(conn.link_keys.receive_key, env.body)
            msg = json.loads(plaintext)
            entry = self.journal.append(env.sender, recipient, msg["body"].encode("utf-8"))
            if self.crash_after_journal:
                # test hook: simulated crash between journal write and delivery
                raise ConnectionError("injected crash after journal append")
            out_body = crypto.seal_random_nonce(peer.link_keys.send_key, plaintext)
            fwd = wire.SignalEnvelope(
                kind=wire.Kind.CHAT,
                sender=env.sender,
                recipient=recipient,
                envelope_id=peer.next_envelope_id(),
                sent_at_ms=env.sent_at_ms,
                body=out_body,
            )
            peer.send_envelope(fwd)
            receipt = {"receipt": True, "re": env.envelope_id, "journal_seq": entry.seq}
        else:
            fwd = wire.SignalEnvelope(
                kind=wire.Kind.CHAT,
                sender=env.sender,
                recipient=recipient,
                envelope_id=peer.next_envelope_id(),
                sent_at_ms=env.sent_at_ms,
                body=env.body,
            )
            peer.send_envelope(fwd)
            receipt = {"receipt": True, "re": env.envelope_id}
        conn.send(wire.Kind.CHAT, conn.username, canonical_json(receipt))

    # --- key exchange ---------------------------------------------------

    def _on_key_exchange(self, conn: _Conn, env: wire.SignalEnvelope) -> None:
        if env.recipient == "":
            # client <-> server link keys (used by monitored chat)
            if conn.username is None:
                raise Unauthorized()
            purpose, _ = crypto.split_suite_field(crypto.decode_key_exchange(env.body)[0])
            if purpose != crypto.PURPOSE_LINK:
                raise Unauthorized("server only answers link exchanges")
            if conn.link_ke is None:
                conn.link_ke = crypto.KeyExchange(
                    f"link:{conn.username}", initiator=False, purpose=crypto.PURPOSE_LINK
                )
                response = conn.link_ke.on_opening(env.body)
                conn.send(wire.Kind.KEY_EXCHANGE, conn.username, response)
            else:
                conn.link_ke.on_confirm(env.body)
                conn.link_keys = conn.link_ke.keys
            return
        if not self._require_login(conn, env):
            return
        peer = self._conn_for(env.recipient)
        if peer is None:
            raise RecipientOffline(env.recipient)
        fwd = wire.SignalEnvelope(
            kind=wire.Kind.KEY_EXCHANGE,
            sender=env.sender,
            recipient=env.recipient,
            envelope_id=peer.next_envelope_id(),
            sent_at_ms=env.sent_at_ms,
            body=env.body,
        )
        peer.send_envelope(fwd)

    # --- calls ------------------------------------------------------------

    def _busy(self, username: str) -> bool:
        with self._lock:
            return any(s.involves(username) and not s.terminal for s in self.sessions.values())

    def _session_for(self, call_id: int) -> CallSession:
        with self._lock:
            session = self.sessions.get(call_id)
        if session is None:
            raise UnknownCall(str(call_id))
        return session

    def _notify_call(self, session: CallSession, kind: wire.Kind, username: str, body: dict) -> None:
        conn = self._conn_for(username)
        if conn is not None:
            conn.send(kind, username, canonical_json(body))

    def _route_for(self, session: CallSession) -> list[str]:
        if self.multi_proxy:
            return shortest_route(self.proxy_graph, session.caller, session.callee)
        return [self.config.proxy_id]

    def _on_call_invite(self, conn: _Conn, env: wire.SignalEnvelope) -> None:
        if not self._require_login(conn, env):
            return
        body = json.loads(env.body)
        if "call_id" in body and body.get("ringing"):
            session = self._session_for(body["call_id"])
            if session.state is CallState.INVITED:
                session.transition(CallState.RINGING, self.clock)
                self._notify_call(session, wire.Kind.CALL_INVITE, session.caller,
                                  {"call_id": session.call_id, "state": "RINGING"})
            return
        callee = body["callee"]
        if not self.directory.is_online(callee) or self._conn_for(callee) is None:
            raise CalleeOffline(callee)
        if self._busy(callee):
            raise CalleeBusy(callee)
        if self._busy(conn.username):
            raise CalleeBusy(conn.username)
        with self._lock:
            # re-check under the lock so two racing setups cannot both win
            if self._busy(callee) or self._busy(conn.username):
                raise CalleeBusy(callee)
            session = CallSession(caller=conn.username, callee=callee)
            session.media_endpoints[conn.username] = tuple(body.get("udp") or ())
            self.sessions[session.call_id] = session
        self._notify_call(session, wire.Kind.CALL_INVITE, callee,
                          {"call_id": session.call_id, "caller": session.caller,
                           "udp": body.get("udp")})
        conn.send(wire.Kind.CALL_INVITE, conn.username,
                  canonical_json({"call_id": session.call_id, "state": "INVITED",
                                  "re": env.envelope_id}))

    def _on_call_accept(self, conn: _Conn, env: wire.SignalEnvelope) -> None:
        if not self._require_login(conn, env):
            return
        body = json.loads(env.body)
        session = self._session_for(body["call_id"])
        if not session.involves(conn.username):
            raise Unauthorized()
        if body.get("confirmed"):
            # caller reports the key exchange transcript matched
            if conn.username != session.caller or session.state is not CallState.RINGING:
                raise UnknownCall(str(session.call_id))
            session.route = self._route_for(session)
            session.transition(CallState.ACTIVE, self.clock)
            endpoints = self._activate_media(session)
            for user in (session.caller, session.callee):
                self._notify_call(session, wire.Kind.CALL_ACCEPT, user,
                                  {"call_id": session.call_id, "state": "ACTIVE",
                                   "peer_udp": endpoints[user], "route": session.route})
            return
        # callee accepts and reports its media endpoint
        if conn.username != session.callee:
            raise Unauthorized()
        if session.state is CallState.INVITED:
            session.transition(CallState.RINGING, self.clock)
        if session.state is not CallState.RINGING:
            raise UnknownCall(str(session.call_id))
        session.media_endpoints[conn.username] = tuple(body.get("udp") or ())
        self._notify_call(session, wire.Kind.CALL_ACCEPT, session.caller,
                          {"call_id": session.call_id, "state": "KEYS",
                           "peer_udp": session.media_endpoints.get(session.callee)})

    def _activate_media(self, session: CallSession) -> dict[str, tuple]:
        """Pick what each party should send media to: peer directly, or a relay."""
        if self.config.relay_media:
            relay = _MediaRelay(self, session)
            self._relays[session.call_id] = relay
            addr = relay.address
            return {session.caller: addr, session.callee: addr}
        return {
            session.caller: session.media_endpoints.get(session.callee),
            session.callee: session.media_endpoints.get(session.caller),
        }

    def _on_call_reject(self, conn: _Conn, env: wire.SignalEnvelope) -> None:
        if not self._require_login(conn, env):
            return
        body = json.loads(env.body)
        session = self._session_for(body["call_id"])
        if conn.username != session.callee:
            raise Unauthorized()
        if session.state is CallState.INVITED:
            session.transition(CallState.RINGING, self.clock)
        session.transition(CallState.REJECTED, self.clock)
        self._notify_call(session, wire.Kind.CALL_REJECT, session.caller,
                          {"call_id": session.call_id, "state": "REJECTED"})

    def _on_call_end(self, conn: _Conn, env: wire.SignalEnvelope) -> None:
        if not self._require_login(conn, env):
            return
        body = json.loads(env.body)
        with self._lock:
            session = self.sessions.get(body.get("call_id"))
        if session is None or session.terminal or not session.involves(conn.username):
            raise UnknownCall(str(body.get("call_id")))
        self._end_session(session)

    def _end_session(self, session: CallSession, reason: str = "ended") -> None:
        if session.terminal:
            return
        session.transition(CallState.ENDED, self.clock)
        relay = self._relays.pop(session.call_id, None)
        if relay:
            relay.stop()
        body = {"call_id": session.call_id, "state": "ENDED", "reason": reason}
        for user in (session.caller, session.callee):
            self._notify_call(session, wire.Kind.CALL_END, user, body)

    # --- file relay ---------------------------------------------------------

    def _on_file_offer(self, conn: _Conn, env: wire.SignalEnvelope) -> None:
        if not self._require_login(conn, env):
            return
        body = json.loads(env.body)
        # compliant-server enforcement: a hostile sender cannot push a
        # blocked extension or an oversized file through this relay
        files.check_filename(body["filename"], self.config.blocklist)
        if body["size"] > self.config.max_file_size:
            from .errors import FileTooLarge

            raise FileTooLarge(str(body["size"]))
        recipient = env.recipient
        peer = self._conn_for(recipient)
        if peer is None or not self.directory.is_online(recipient):
            raise RecipientOffline(recipient)
        with self._lock:
            self.transfers[body["transfer_id"]] = RelayTransfer(
                transfer_id=body["transfer_id"],
                sender=conn.username,
                recipient=recipient,
                size=body["size"],
            )
        peer.send(wire.Kind.FILE_OFFER, recipient, env.body, sender=env.sender)
        conn.send(wire.Kind.FILE_OFFER, conn.username,
                  canonical_json({"ok": True, "re": env.envelope_id,
                                  "transfer_id": body["transfer_id"]}))

    def _forward(self, env: wire.SignalEnvelope, on_sent=None) -> _Conn:
        peer = self._conn_for(env.recipient)
        if peer is None:
            raise RecipientOffline(env.recipient)
        fwd = wire.SignalEnvelope(
            kind=env.kind,
            sender=env.sender,
            recipient=env.recipient,
            envelope_id=peer.next_envelope_id(),
            sent_at_ms=env.sent_at_ms,
            body=env.body,
        )
        peer.send_envelope(fwd, on_sent)
        return peer

    def _on_file_accept(self, conn: _Conn, env: wire.SignalEnvelope) -> None:
        if not self._require_login(conn, env):
            return
        body = json.loads(env.body)
        transfer = self.transfers.get(body.get("transfer_id"))
        if transfer is not None and body.get("done"):
            transfer.done = True
        self._forward(env)

    def _on_file_chunk(self, conn: _Conn, env: wire.SignalEnvelope) -> None:
        if not self._require_login(conn, env):
            return
        transfer_id, _, _, payload = files.decode_chunk(env.body)
        transfer = self.transfers.get(transfer_id)
        nbytes = len(payload)
        if transfer is not None:
            with self._lock:
                transfer.buffered_bytes += nbytes
                transfer.high_water = max(transfer.high_water, transfer.buffered_bytes)

            def released(t=transfer, n=nbytes):
                with self._lock:
                    t.buffered_bytes -= n

        else:
            released = None
        try:
            self._forward(env, on_sent=released)
        except RecipientOffline:
            if released:
                released()
            raise

    # --- admin endpoint -------------------------------------------------

    def relay_high_water(self, transfer_id: int) -> int:
        transfer = self.transfers.get(transfer_id)
        return transfer.high_water if transfer else 0

    def query_journal(self, token_hex: str, **filters):
        """Admin-only journal read; raises Unauthorized for anyone else."""
        try:
            username = self.directory.resolve(bytes.fromhex(token_hex))
        except (ValueError, Unauthorized):
            raise Unauthorized() from None
        if username not in self.config.admins:
            raise Unauthorized(f"{username} is not an admin")
        return self.journal.query(**filters)

    def _start_admin(self) -> None:
        server = self

        class AdminHandler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _reply(self, code: int, payload: dict) -> None:
                data = canonical_json(payload)
                self.send_response(code)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.send_header("Access-Control-Allow-Origin", "*")
                self.end_headers()
                self.wfile.write(data)

            def do_GET(self):
                url = urlparse(self.path)
                if url.path != "/journal":
                    self._reply(404, {"error": "not found"})
                    return
                auth = self.headers.get("Authorization", "")
                token = auth.removeprefix("Bearer ").strip()
                qs = parse_qs(url.query)

                def first(key):
                    return qs[key][0] if key in qs else None

                try:
                    entries = server.query_journal(
                        token,
                        user=first("user"),
                        substring=first("substring"),
                        since_ms=int(first("since_ms")) if first("since_ms") else None,
                        until_ms=int(first("until_ms")) if first("until_ms") else None,
                    )
                except Unauthorized:
                    self._reply(403, {"error": "Unauthorized"})
                    return
                self._reply(200, {"entries": [
                    {"seq": e.seq, "received_at_ms": e.received_at_ms,
                     "from": e.sender, "to": e.recipient,
                     "body": e.body.decode("utf-8", "replace")}
                    for e in entries
                ]})

        self._admin_http = ThreadingHTTPServer(("127.0.0.1", self.config.admin_port), AdminHandler)
        self.config.admin_port = self._admin_http.server_address[1]
        threading.Thread(target=self._admin_http.serve_forever, daemon=True).start()


class _MediaRelay:
    """UDP forwarder for one call: both parties send here, frames cross over.

    Parties register with a tiny datagram (magic + call id + role) before
    media starts; everything else received is forwarded verbatim to the
    other registered address.
    """

    MAGIC = b"PVRG"

    def __init__(self, server: SignalServer, session: CallSession):
        self.session = session
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind((server.config.host, 0))
        self.address = self.sock.getsockname()
        self._peers: dict[int, tuple] = {}  # role (0 caller, 1 callee) -> addr
        self._running = True
        threading.Thread(target=self._loop, daemon=True).start()

    @classmethod
    def registration(cls, call_id: int, role: int) -> bytes:
        return cls.MAGIC + struct.pack(">QB", call_id, role)

    def _loop(self) -> None:
        while self._running:
            try:
                data, addr = self.sock.recvfrom(wire.MAX_DATAGRAM + 1)
            except OSError:
                return
            if data.startswith(self.MAGIC) and len(data) == len(self.MAGIC) + 9:
                call_id, role = struct.unpack_from(">QB", data, len(self.MAGIC))
                if call_id == self.session.call_id:
                    self._peers[role] = addr
                continue
            other = None
            if addr == self._peers.get(0):
                other = self._peers.get(1)
            elif addr == self._peers.get(1):
                other = self._peers.get(0)
            if other is not None:
                try:
                    self.sock.sendto(data, other)
                except OSError:
                    pass

    def stop(self) -> None:
        self._running = False
        try:
            self.sock.close()
        except OSError:
            pass
