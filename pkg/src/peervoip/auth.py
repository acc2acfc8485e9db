"""Account store, credential checks, and presence tracking.

Credentials are stored as a salted PBKDF2-SHA256 digest; no reversible
form of the password ever touches the store file.  The store itself is a
single JSON file rewritten atomically on every mutation, so accounts
survive a process restart.  Presence is in-memory only: after a restart
everyone is OFFLINE until they log in again, which is the correct answer.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
import os
import secrets
import threading
import time
from dataclasses import dataclass
from enum import Enum

from .errors import (
    BadCredentials,
    PictureTooLarge,
    Unauthorized,
    UnsupportedFormat,
    UsernameTaken,
    WeakPassword,
)

SALT_LEN = 16
DIGEST_LEN = 32
TOKEN_LEN = 32
MAX_USERNAME = 64
MIN_PASSWORD = 8
MAX_PICTURE = 1024 * 1024
DEFAULT_HEARTBEAT_S = 5.0
PRESENCE_MULTIPLIER = 3  # ONLINE iff heard from within 3 heartbeat intervals

_PICTURE_MAGIC = (
    b"\x89PNG\r\n\x1a\n",  # PNG
    b"\xff\xd8\xff",  # JPEG
)


class PresenceState(str, Enum):
    ONLINE = "ONLINE"
    OFFLINE = "OFFLINE"


@dataclass
class UserAccount:
    username: str
    salt: bytes
    credential_digest: bytes
    picture: bytes | None
    created_at_ms: int


@dataclass
class PresenceRecord:
    username: str
    state: PresenceState
    last_heartbeat_ms: int | None


def _digest_password(password: str, salt: bytes, iterations: int) -> bytes:
    return hashlib.pbkdf2_hmac("sha256", password.encode("utf-8"), salt, iterations, DIGEST_LEN)


def valid_picture(blob: bytes) -> bool:
    return any(blob.startswith(m) for m in _PICTURE_MAGIC)


class Directory:
    """The user directory: accounts, sessions, presence.

    Linearizable per username: a single lock serializes all mutations.
    ``clock`` returns seconds and is injectable for virtual-time tests.
    """

    def __init__(
        self,
        store_path: str | None = None,
        clock=time.time,
        heartbeat_interval: float = DEFAULT_HEARTBEAT_S,
        pbkdf2_iterations: int = 50_000,
    ):
        self._store_path = store_path
        self._clock = clock
        self.heartbeat_interval = heartbeat_interval
        self._iterations = pbkdf2_iterations
        self._lock = threading.RLock()
        self._accounts: dict[str, UserAccount] = {}
        self._tokens: dict[bytes, str] = {}
        self._sessions: dict[str, bytes] = {}  # username -> active token
        self._heartbeats: dict[str, float] = {}  # username -> clock seconds
        if store_path and os.path.exists(store_path):
            self._load()

    # --- persistence -------------------------------------------------

    def _load(self) -> None:
        with open(self._store_path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        for name, rec in raw.get("accounts", {}).items():
            self._accounts[name] = UserAccount(
                username=name,
                salt=bytes.fromhex(rec["salt"]),
                credential_digest=bytes.fromhex(rec["digest"]),
                picture=base64.b64decode(rec["picture"]) if rec.get("picture") else None,
                created_at_ms=rec["created_at_ms"],
            )
        self._iterations = raw.get("iterations", self._iterations)

    def _save(self) -> None:
        if not self._store_path:
            return
        payload = {
            "iterations": self._iterations,
            "accounts": {
                a.username: {
                    "salt": a.salt.hex(),
                    "digest": a.credential_digest.hex(),
                    "picture": base64.b64encode(a.picture).decode() if a.picture else None,
                    "created_at_ms": a.created_at_ms,
                }
                for a in self._accounts.values()
            },
        }
        tmp = self._store_path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
        os.replace(tmp, self._store_path)

    # --- accounts ----------------------------------------------------

    def signup(self, username: str, password: str, picture: bytes | None = None) -> UserAccount:
        if not username or len(username) > MAX_USERNAME:
            raise BadCredentials("bad username")
        if len(password) < MIN_PASSWORD:
            raise WeakPassword(f"password must be at least {MIN_PASSWORD} characters")
        if picture is not None:
            self._check_picture(picture)
        with self._lock:
            if username in self._accounts:
                raise UsernameTaken(username)
            salt = secrets.token_bytes(SALT_LEN)
            account = UserAccount(
                username=username,
                salt=salt,
                credential_digest=_digest_password(password, salt, self._iterations),
                picture=picture,
                created_at_ms=int(self._clock() * 1000),
            )
            self._accounts[username] = account
            self._save()
            return account

    def verify(self, username: str, password: str) -> bool:
        with self._lock:
            account = self._accounts.get(username)
        if account is None:
            # burn the same work as a real check; no username oracle
            _digest_password(password, b"\x00" * SALT_LEN, self._iterations)
            return False
        candidate = _digest_password(password, account.salt, self._iterations)
        return hmac.compare_digest(candidate, account.credential_digest)

    def login(self, username: str, password: str) -> bytes:
        if not self.verify(username, password):
            raise BadCredentials()
        with self._lock:
            old = self._sessions.pop(username, None)
            if old is not None:
                self._tokens.pop(old, None)
            token = secrets.token_bytes(TOKEN_LEN)
            self._tokens[token] = username
            self._sessions[username] = token
            self._heartbeats[username] = self._clock()
            return token

    def logout(self, token: bytes) -> None:
        with self._lock:
            username = self._tokens.pop(token, None)
            if username is None:
                raise Unauthorized()
            self._sessions.pop(username, None)
            self._heartbeats.pop(username, None)

    def resolve(self, token: bytes) -> str:
        with self._lock:
            username = self._tokens.get(token)
        if username is None:
            raise Unauthorized()
        return username

    # --- profile pictures --------------------------------------------

    def _check_picture(self, blob: bytes) -> None:
        if len(blob) > MAX_PICTURE:
            raise PictureTooLarge(f"{len(blob)} bytes > {MAX_PICTURE}")
        if not valid_picture(blob):
            raise UnsupportedFormat("picture must be PNG or JPEG")

    def set_profile_picture(self, token: bytes, blob: bytes) -> None:
        username = self.resolve(token)
        self._check_picture(blob)
        with self._lock:
            self._accounts[username].picture = blob
            self._save()

    def get_profile_picture(self, username: str) -> bytes | None:
        with self._lock:
            account = self._accounts.get(username)
            return account.picture if account else None

    # --- presence ----------------------------------------------------

    def heartbeat(self, token: bytes) -> None:
        username = self.resolve(token)
        with self._lock:
            self._heartbeats[username] = self._clock()

    def presence_of(self, username: str) -> PresenceRecord:
        with self._lock:
            last = self._heartbeats.get(username)
        now = self._clock()
        timeout = PRESENCE_MULTIPLIER * self.heartbeat_interval
        online = last is not None and (now - last) <= timeout
        return PresenceRecord(
            username=username,
            state=PresenceState.ONLINE if online else PresenceState.OFFLINE,
            last_heartbeat_ms=int(last * 1000) if last is not None else None,
        )

    def is_online(self, username: str) -> bool:
        return self.presence_of(username).state is PresenceState.ONLINE

    def roster(self, token: bytes) -> list[PresenceRecord]:
        """Presence for every user with a live session plus the requester.

        Exactly the users heard from within 3 heartbeat intervals are
        ONLINE; anyone else listed is OFFLINE.
        """
        me = self.resolve(token)
        with self._lock:
            names = set(self._heartbeats) | set(self._sessions)
        return [self.presence_of(n) for n in sorted(names | {me})]
