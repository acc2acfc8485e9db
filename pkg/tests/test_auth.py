"""Account store, credential hygiene, sessions, and presence timing."""

import json

import pytest

from peervoip.auth import Directory, PresenceState
from peervoip.errors import (
    BadCredentials,
    PictureTooLarge,
    Unauthorized,
    UnsupportedFormat,
    UsernameTaken,
    WeakPassword,
)

PNG = b"\x89PNG\r\n\x1a\n" + b"\x00" * 16
FAST_KDF = {"pbkdf2_iterations": 10}


class VirtualClock:
    def __init__(self, start=1_000_000.0):
        self.now = start

    def __call__(self):
        return self.now

    def advance(self, seconds):
        self.now += seconds


def test_signup_and_login_round_trip(tmp_path):
    d = Directory(str(tmp_path / "store.json"), **FAST_KDF)
    d.signup("alice", "password123")
    token = d.login("alice", "password123")
    assert d.resolve(token) == "alice"


def test_duplicate_username_rejected(tmp_path):
    d = Directory(str(tmp_path / "store.json"), **FAST_KDF)
    d.signup("alice", "password123")
    with pytest.raises(UsernameTaken):
        d.signup("alice", "different9")


def test_weak_password_rejected():
    d = Directory(**FAST_KDF)
    with pytest.raises(WeakPassword):
        d.signup("alice", "short")


def test_wrong_password_and_unknown_user_same_error():
    d = Directory(**FAST_KDF)
    d.signup("alice", "password123")
    with pytest.raises(BadCredentials) as known:
        d.login("alice", "wrongpassword")
    with pytest.raises(BadCredentials) as unknown:
        d.login("nobody", "wrongpassword")
    assert type(known.value) is type(unknown.value)
    assert str(known.value) == str(unknown.value)


def test_store_never_contains_password(tmp_path):
    path = tmp_path / "store.json"
    d = Directory(str(path), **FAST_KDF)
    password = "hunter2hunter2"
    d.signup("alice", password)
    raw = path.read_bytes()
    assert password.encode() not in raw
    assert password.encode("utf-16-le") not in raw
    # and not merely encoded: the digest is salted, so two signups of the
    # same password must store different digests
    d.signup("bob", password)
    store = json.loads(path.read_text())
    accounts = store["accounts"]
    assert accounts["alice"]["digest"] != accounts["bob"]["digest"]
    assert accounts["alice"]["salt"] != accounts["bob"]["salt"]


def test_accounts_survive_restart(tmp_path):
    path = str(tmp_path / "store.json")
    Directory(path, **FAST_KDF).signup("alice", "password123", PNG)
    reopened = Directory(path, **FAST_KDF)
    token = reopened.login("alice", "password123")
    assert reopened.resolve(token) == "alice"
    assert reopened.get_profile_picture("alice") == PNG


def test_presence_offline_after_restart(tmp_path):
    path = str(tmp_path / "store.json")
    first = Directory(path, **FAST_KDF)
    first.signup("alice", "password123")
    first.login("alice", "password123")
    assert first.is_online("alice")
    assert not Directory(path, **FAST_KDF).is_online("alice")


def test_second_login_invalidates_first_token():
    d = Directory(**FAST_KDF)
    d.signup("alice", "password123")
    t1 = d.login("alice", "password123")
    t2 = d.login("alice", "password123")
    assert d.resolve(t2) == "alice"
    with pytest.raises(Unauthorized):
        d.resolve(t1)


def test_logout_revokes_token():
    d = Directory(**FAST_KDF)
    d.signup("alice", "password123")
    token = d.login("alice", "password123")
    d.logout(token)
    with pytest.raises(Unauthorized):
        d.resolve(token)
    with pytest.raises(Unauthorized):
        d.logout(token)


def test_presence_timeout_boundary():
    clock = VirtualClock()
    d = Directory(clock=clock, heartbeat_interval=5.0, **FAST_KDF)
    d.signup("alice", "password123")
    token = d.login("alice", "password123")
    clock.advance(15.0)  # exactly 3 intervals: still online
    assert d.presence_of("alice").state is PresenceState.ONLINE
    clock.advance(0.0011)  # just past the cutoff
    assert d.presence_of("alice").state is PresenceState.OFFLINE
    d.heartbeat(token)
    assert d.presence_of("alice").state is PresenceState.ONLINE


def test_roster_lists_silent_user_as_offline():
    clock = VirtualClock()
    d = Directory(clock=clock, heartbeat_interval=5.0, **FAST_KDF)
    d.signup("alice", "password123")
    d.signup("bob", "password123")
    token_a = d.login("alice", "password123")
    d.login("bob", "password123")
    d.heartbeat(token_a)
    clock.advance(15.0011)
    d.heartbeat(token_a)
    roster = {r.username: r.state for r in d.roster(token_a)}
    assert roster["alice"] is PresenceState.ONLINE
    assert roster["bob"] is PresenceState.OFFLINE


def test_picture_validation():
    d = Directory(**FAST_KDF)
    d.signup("alice", "password123")
    token = d.login("alice", "password123")
    with pytest.raises(UnsupportedFormat):
        d.set_profile_picture(token, b"GIF89a not allowed")
    with pytest.raises(PictureTooLarge):
        d.set_profile_picture(token, b"\xff\xd8\xff" + b"\x00" * (1024 * 1024))
    jpeg = b"\xff\xd8\xff\xe0" + b"\x00" * 8
    d.set_profile_picture(token, jpeg)
    assert d.get_profile_picture("alice") == jpeg


def test_salts_are_unique_across_many_accounts(tmp_path):
    path = tmp_path / "store.json"
    d = Directory(str(path), **FAST_KDF)
    for i in range(50):
        d.signup(f"user{i}", "password123")
    store = json.loads(path.read_text())
    salts = [a["salt"] for a in store["accounts"].values()]
    assert len(set(salts)) == len(salts)
