"""Call-session state machine and proxy-route computation."""

from __future__ import annotations

import heapq
import secrets
import time
from dataclasses import dataclass, field
from enum import Enum

from .errors import IllegalTransition, Unreachable


class CallState(str, Enum):
    INVITED = "INVITED"
    RINGING = "RINGING"
    ACTIVE = "ACTIVE"
    ENDED = "ENDED"
    REJECTED = "REJECTED"


# ENDED is reachable from anywhere non-terminal (disconnect teardown).
_LEGAL = {
    CallState.INVITED: {CallState.RINGING, CallState.ENDED},
    CallState.RINGING: {CallState.ACTIVE, CallState.REJECTED, CallState.ENDED},
    CallState.ACTIVE: {CallState.ENDED},
    CallState.ENDED: set(),
    CallState.REJECTED: set(),
}


@dataclass
class CallSession:
    caller: str
    callee: str
    call_id: int = field(default_factory=lambda: secrets.randbits(64))
    state: CallState = CallState.INVITED
    route: list[str] = field(default_factory=list)
    media_endpoints: dict = field(default_factory=dict)  # username -> (host, port)
    started_at_ms: int | None = None
    ended_at_ms: int | None = None
    history: list[CallState] = field(default_factory=lambda: [CallState.INVITED])

    def transition(self, new_state: CallState, clock=time.time) -> None:
        if new_state not in _LEGAL[self.state]:
            raise IllegalTransition(f"{self.state.value} -> {new_state.value}")
        self.state = new_state
        self.history.append(new_state)
        now_ms = int(clock() * 1000)
        if new_state is CallState.ACTIVE:
            self.started_at_ms = now_ms
        elif new_state in (CallState.ENDED, CallState.REJECTED):
            self.ended_at_ms = now_ms

    @property
    def terminal(self) -> bool:
        return self.state in (CallState.ENDED, CallState.REJECTED)

    def involves(self, username: str) -> bool:
        return username in (self.caller, self.callee)

    def peer_of(self, username: str) -> str:
        return self.callee if username == self.caller else self.caller


class ProxyGraph:
    """Undirected proxy overlay with RTT edge weights and client attachments."""

    def __init__(self):
        self.proxies: set[str] = set()
        self._edges: dict[tuple[str, str], float] = {}
        self.attachments: dict[str, str] = {}  # user -> proxy

    def add_proxy(self, proxy_id: str) -> None:
        self.proxies.add(proxy_id)

    def set_rtt(self, a: str, b: str, rtt_ms: float) -> None:
        if rtt_ms <= 0 or rtt_ms != rtt_ms or rtt_ms == float("inf"):
            raise ValueError(f"RTT must be positive and finite, got {rtt_ms}")
        self.proxies.update((a, b))
        key = (a, b) if a <= b else (b, a)
        self._edges[key] = rtt_ms

    def rtt(self, a: str, b: str) -> float | None:
        return self._edges.get((a, b) if a <= b else (b, a))

    def smooth_rtt(self, a: str, b: str, sample_ms: float, alpha: float = 0.2) -> float:
        """Exponentially smoothed RTT update from a PING/PONG sample."""
        prev = self.rtt(a, b)
        updated = sample_ms if prev is None else prev + alpha * (sample_ms - prev)
        self.set_rtt(a, b, updated)
        return updated

    def attach(self, user: str, proxy_id: str) -> None:
        self.proxies.add(proxy_id)
        self.attachments[user] = proxy_id

    def neighbors(self, proxy_id: str):
        for (a, b), w in self._edges.items():
            if a == proxy_id:
                yield b, w
            elif b == proxy_id:
                yield a, w


def shortest_route(graph: ProxyGraph, src_user: str, dst_user: str) -> list[str]:
    """Minimum-total-RTT proxy path between the two users' attachment proxies.

    Ties broken deterministically by the lexicographically smallest
    proxy-id sequence.
    """
    try:
        src = graph.attachments[src_user]
        dst = graph.attachments[dst_user]
    except KeyError as exc:
        raise Unreachable(f"user not attached: {exc}") from None
    if src == dst:
        return [src]

    # best[(node)] = (cost, path); paths compared lexicographically on ties
    best: dict[str, tuple[float, tuple[str, ...]]] = {src: (0.0, (src,))}
    heap: list[tuple[float, tuple[str, ...]]] = [(0.0, (src,))]
    done: set[str] = set()
    while heap:
        cost, path = heapq.heappop(heap)
        node = path[-1]
        if node in done:
            continue
        done.add(node)
        if node == dst:
            return list(path)
        for neighbor, weight in graph.neighbors(node):
            if neighbor in done:
                continue
            candidate = (cost + weight, path + (neighbor,))
            if neighbor not in best or candidate < best[neighbor]:
                best[neighbor] = candidate
                heapq.heappush(heap, candidate)
    raise Unreachable(f"no proxy path from {src} to {dst}")


def enumerate_routes(graph: ProxyGraph, src_user: str, dst_user: str) -> list[str]:
    """Brute-force oracle: enumerate every simple path, pick min (cost, path).

    Only viable on tiny graphs; exists so tests can cross-check
    :func:`shortest_route` against an independent computation.
    """
    src = graph.attachments[src_user]
    dst = graph.attachments[dst_user]
    if src == dst:
        return [src]
    candidates: list[tuple[float, tuple[str, ...]]] = []

    def walk(node: str, cost: float, path: tuple[str, ...]) -> None:
        if node == dst:
            candidates.append((cost, path))
            return
        for neighbor, weight in graph.neighbors(node):
            if neighbor not in path:
                walk(neighbor, cost + weight, path + (neighbor,))

    walk(src, 0.0, (src,))
    if not candidates:
        raise Unreachable(f"no proxy path from {src} to {dst}")
    return list(min(candidates)[1])
