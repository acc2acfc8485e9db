"""Peer-to-peer encrypted VoIP suite: signaling server, node daemon,
media pipeline, chat, file transfer, and a benchmark harness."""

from .auth import Directory, PresenceState
from .crypto import KeyExchange, SessionKeys
from .daemon import DaemonConfig, NodeDaemon
from .errors import PeerVoipError
from .media import CallStats, JitterBuffer, Packetizer, Depacketizer
from .routing import CallSession, CallState, ProxyGraph, shortest_route
from .server import ServerConfig, SignalServer
from .shaper import ShapedLink, TokenBucket
from .wire import Kind, MediaFrame, SignalEnvelope

__version__ = "0.1.0"

__all__ = [
    "CallSession",
    "CallState",
    "CallStats",
    "DaemonConfig",
    "Depacketizer",
    "Directory",
    "JitterBuffer",
    "KeyExchange",
    "Kind",
    "MediaFrame",
    "NodeDaemon",
    "Packetizer",
    "PeerVoipError",
    "PresenceState",
    "ProxyGraph",
    "ServerConfig",
    "SessionKeys",
    "ShapedLink",
    "SignalEnvelope",
    "SignalServer",
    "TokenBucket",
    "shortest_route",
]
