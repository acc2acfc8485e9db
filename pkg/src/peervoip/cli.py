"""Command-line entry points for the signaling server and the node daemon.

Configuration precedence, highest first: CLI flags, environment
variables (PEERVOIP_SERVER, PEERVOIP_CONFIG), a JSON config file, then
built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import socket
import sys
import time

from .daemon import DaemonConfig, NodeDaemon
from .server import ServerConfig, SignalServer, canonical_json


def _setup_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def _load_config_file(path: str | None) -> dict:
    path = path or os.environ.get("PEERVOIP_CONFIG")
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _parse_server_addr(value: str) -> tuple[str, int]:
    host, _, port = value.rpartition(":")
    return host or "127.0.0.1", int(port)


def server_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="peervoip-server",
                                     description="Run the signaling server.")
    parser.add_argument("--host", default=None)
    parser.add_argument("--port", type=int, default=None)
    parser.add_argument("--admin-port", type=int, default=None)
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--monitored", action="store_true", default=None,
                        help="journal chat plaintext server-side")
    parser.add_argument("--relay-media", action="store_true", default=None)
    parser.add_argument("--store", default=None, help="account store path")
    parser.add_argument("--journal-dir", default=None)
    parser.add_argument("--admins", default=None, help="comma separated admin usernames")
    parser.add_argument("--log-level", default="info")
    args = parser.parse_args(argv)
    _setup_logging(args.log_level)

    file_cfg = _load_config_file(args.config)
    cfg = ServerConfig()
    for key in ("host", "port", "admin_port", "monitored", "relay_media",
                "store_path", "journal_dir", "heartbeat_interval", "proxy_id"):
        if key in file_cfg:
            setattr(cfg, key, file_cfg[key])
    if "admins" in file_cfg:
        cfg.admins = frozenset(file_cfg["admins"])
    if args.host is not None:
        cfg.host = args.host
    if args.port is not None:
        cfg.port = args.port
    if args.admin_port is not None:
        cfg.admin_port = args.admin_port
    if args.monitored is not None:
        cfg.monitored = args.monitored
    if args.relay_media is not None:
        cfg.relay_media = args.relay_media
    if args.store is not None:
        cfg.store_path = args.store
    if args.journal_dir is not None:
        cfg.journal_dir = args.journal_dir
    if args.admins is not None:
        cfg.admins = frozenset(a for a in args.admins.split(",") if a)

    server = SignalServer(cfg)
    server.start()
    print(f"signaling server on {cfg.host}:{cfg.port}"
          + (f", admin on 127.0.0.1:{cfg.admin_port}" if cfg.admin_port else ""))
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        server.stop()
    return 0


def _daemon_config(args) -> DaemonConfig:
    file_cfg = _load_config_file(args.config)
    cfg = DaemonConfig()
    for key in ("server_host", "server_port", "control_port", "monitored",
                "relay_media", "jitter_depth", "download_dir", "static_dir",
                "heartbeat_interval", "media_port_min", "media_port_max"):
        if key in file_cfg:
            setattr(cfg, key, file_cfg[key])
    env_server = os.environ.get("PEERVOIP_SERVER")
    if env_server:
        cfg.server_host, cfg.server_port = _parse_server_addr(env_server)
    if args.server is not None:
        cfg.server_host, cfg.server_port = _parse_server_addr(args.server)
    if getattr(args, "control_port", None) is not None:
        cfg.control_port = args.control_port
    if getattr(args, "monitored", None):
        cfg.monitored = True
    if getattr(args, "relay_media", None):
        cfg.relay_media = True
    if getattr(args, "static_dir", None) is not None:
        cfg.static_dir = args.static_dir
    if getattr(args, "download_dir", None) is not None:
        cfg.download_dir = args.download_dir
    return cfg


def _control_call(port: int, method: str, params: dict) -> dict:
    """One-shot request against a running daemon's control port."""
    with socket.create_connection(("127.0.0.1", port), timeout=30) as sock:
        sock.sendall(canonical_json({"id": 1, "method": method, "params": params}) + b"\n")
        buf = b""
        while not buf.endswith(b"\n"):
            chunk = sock.recv(65536)
            if not chunk:
                break
            buf += chunk
    reply = json.loads(buf)
    if reply.get("error"):
        raise SystemExit(f"error: {reply['error']['code']}: {reply['error'].get('message', '')}")
    return reply.get("result", {})


def node_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="peervoip-node",
                                     description="Run or drive a node daemon.")
    parser.add_argument("--server", default=None, help="host:port of the signaling server")
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--control-port", type=int, default=None)
    parser.add_argument("--monitored", action="store_true", default=None)
    parser.add_argument("--relay-media", action="store_true", default=None)
    parser.add_argument("--static-dir", default=None, help="web console assets")
    parser.add_argument("--download-dir", default=None)
    parser.add_argument("--log-level", default="info")
    sub = parser.add_subparsers(dest="command")
    sub.add_parser("run", help="run the daemon in the foreground (default)")

    p = sub.add_parser("signup", help="create an account via a running daemon")
    p.add_argument("username")
    p.add_argument("password")

    p = sub.add_parser("login")
    p.add_argument("username")
    p.add_argument("password")

    p = sub.add_parser("roster")

    p = sub.add_parser("chat")
    p.add_argument("to")
    p.add_argument("body")

    p = sub.add_parser("call")
    p.add_argument("callee")

    p = sub.add_parser("send-file")
    p.add_argument("to")
    p.add_argument("path")

    args = parser.parse_args(argv)
    _setup_logging(args.log_level)
    cfg = _daemon_config(args)

    command = args.command or "run"
    if command == "run":
        daemon = NodeDaemon(cfg)
        daemon.start()
        print(f"node daemon: control on 127.0.0.1:{daemon.config.control_port}, "
              f"server {cfg.server_host}:{cfg.server_port}")
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            daemon.stop()
        return 0

    port = cfg.control_port
    if command == "signup":
        _control_call(port, "signup", {"username": args.username, "password": args.password})
        print("ok")
    elif command == "login":
        _control_call(port, "login", {"username": args.username, "password": args.password})
        print("ok")
    elif command == "roster":
        result = _control_call(port, "roster", {})
        for user in result["users"]:
            print(f"{user['username']}\t{user['state']}")
    elif command == "chat":
        _control_call(port, "send_chat", {"to": args.to, "body": args.body})
        print("sent")
    elif command == "call":
        result = _control_call(port, "start_call", {"callee": args.callee, "wait_active": True})
        print(f"call {result['call_id']} active")
    elif command == "send-file":
        result = _control_call(port, "offer_file", {"to": args.to, "path": args.path})
        print(f"transfer {result['transfer_id']} offered")
    return 0


if __name__ == "__main__":
    sys.exit(node_main())
