import threading
import time

import pytest

from peervoip.daemon import DaemonConfig, NodeDaemon
from peervoip.server import ServerConfig, SignalServer

PASSWORD = "correct horse battery"


class Pair:
    """A live server plus two logged-in daemons for end-to-end tests."""

    def __init__(self, tmp_path, monitored=False, relay_media=False, **server_kw):
        cfg = ServerConfig(port=0, monitored=monitored, relay_media=relay_media,
                           **server_kw)
        if monitored and cfg.journal_dir is None:
            cfg.journal_dir = str(tmp_path / "journal")
        self.server = SignalServer(cfg)
        self.server.start()
        self.a = self.daemon()
        self.b = self.daemon()
        self.a.signup("alice", PASSWORD)
        self.b.signup("bob", PASSWORD)
        self.a.login("alice", PASSWORD)
        self.b.login("bob", PASSWORD)

    def daemon(self, **kw) -> NodeDaemon:
        cfg = DaemonConfig(server_host=self.server.config.host,
                           server_port=self.server.config.port,
                           control_port=0, reconnect=False, **kw)
        d = NodeDaemon(cfg)
        d.start()
        return d

    def close(self):
        self.a.stop()
        self.b.stop()
        self.server.stop()


@pytest.fixture
def pair(tmp_path):
    p = Pair(tmp_path)
    yield p
    p.close()


@pytest.fixture
def monitored_pair(tmp_path):
    p = Pair(tmp_path, monitored=True)
    yield p
    p.close()


def wait_event(sub, kind, timeout=10.0, predicate=None):
    deadline = time.monotonic() + timeout
    while True:
        remaining = deadline - time.monotonic()
        assert remaining > 0, f"no {kind} event within {timeout}s"
        event = sub.queue.get(timeout=remaining)
        if event["event"] == kind and (predicate is None or predicate(event["payload"])):
            return event["payload"]


def auto_accept_call(daemon, sub):
    """Background thread that answers the next incoming call."""

    def run():
        payload = wait_event(sub, "call-incoming", timeout=15.0)
        daemon.accept_call(payload["call_id"])

    t = threading.Thread(target=run, daemon=True)
    t.start()
    return t
