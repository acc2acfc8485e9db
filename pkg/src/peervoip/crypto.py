"""Per-session key agreement and authenticated encryption.

Key agreement is an ephemeral X25519 exchange carried in KEY_EXCHANGE
envelopes.  Both sides hash the full transcript (context label + both
public values); the responder and the initiator each echo the digest so
any in-flight tampering aborts the exchange before a key is used.

The KEY_EXCHANGE body layout is::

    suite-id (u16 BE)  |  public-value length (u16 BE)  |  public value
    |  transcript digest (32 bytes, all-zero in the opening message)

The high byte of the suite id names the purpose of the exchange (call
media, chat pair, or client-server link); the low byte the cipher suite.
"""

from __future__ import annotations

import hashlib
import hmac
import os
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from .errors import AuthenticationFailure, ExchangeTampered, Malformed, NonceReuse

SUITE_CHACHA20_POLY1305 = 1
TAG_LEN = 16
NONCE_LEN = 12

PURPOSE_CALL = 0
PURPOSE_CHAT = 1
PURPOSE_LINK = 2

_PURPOSE_NAMES = {PURPOSE_CALL: "call", PURPOSE_CHAT: "chat", PURPOSE_LINK: "link"}


def suite_field(purpose: int, suite: int = SUITE_CHACHA20_POLY1305) -> int:
    return ((purpose & 0xFF) << 8) | (suite & 0xFF)


def split_suite_field(value: int) -> tuple[int, int]:
    return (value >> 8) & 0xFF, value & 0xFF


@dataclass
class SessionKeys:
    """Directional keys for one established session. Never serialized."""

    send_key: bytes
    receive_key: bytes
    suite: int = SUITE_CHACHA20_POLY1305
    established_at_ms: int = 0

    def __repr__(self) -> str:  # keep key bytes out of logs
        return f"SessionKeys(suite={self.suite}, established_at_ms={self.established_at_ms})"


def frame_nonce(source_id: int, epoch: int, sequence: int, timestamp: int) -> bytes:
    """12-byte media nonce: source-id | sequence-epoch | sequence | timestamp low bits.

    The epoch increments on each 16-bit sequence wrap, so the nonce stays
    unique for 2^32 frames per call.
    """
    return struct.pack(
        ">IHHI",
        source_id & 0xFFFFFFFF,
        epoch & 0xFFFF,
        sequence & 0xFFFF,
        timestamp & 0xFFFFFFFF,
    )


def seal(key: bytes, nonce: bytes, plaintext: bytes, aad: bytes = b"") -> bytes:
    if len(nonce) != NONCE_LEN:
        raise ValueError(f"nonce must be {NONCE_LEN} bytes")
    return ChaCha20Poly1305(key).encrypt(nonce, plaintext, aad)


def open_sealed(key: bytes, nonce: bytes, ciphertext: bytes, aad: bytes = b"") -> bytes:
    if len(nonce) != NONCE_LEN:
        raise ValueError(f"nonce must be {NONCE_LEN} bytes")
    try:
        return ChaCha20Poly1305(key).decrypt(nonce, ciphertext, aad)
    except InvalidTag:
        raise AuthenticationFailure("ciphertext rejected") from None


def seal_random_nonce(key: bytes, plaintext: bytes, aad: bytes = b"") -> bytes:
    """Seal with a fresh random nonce, prefixed to the ciphertext.

    Used for chat bodies, where there is no per-frame counter to derive
    a nonce from.
    """
    nonce = os.urandom(NONCE_LEN)
    return nonce + seal(key, nonce, plaintext, aad)


def open_random_nonce(key: bytes, blob: bytes, aad: bytes = b"") -> bytes:
    if len(blob) < NONCE_LEN + TAG_LEN:
        raise AuthenticationFailure("sealed blob too short")
    return open_sealed(key, blob[:NONCE_LEN], blob[NONCE_LEN:], aad)


class NonceGuard:
    """Counter discipline for sender-side media nonces.

    Tracks the last (epoch, sequence) sealed; reuse is a programming
    error and aborts the call.
    """

    def __init__(self):
        self._last: tuple[int, int] | None = None

    def check(self, epoch: int, sequence: int) -> None:
        cur = (epoch, sequence)
        if self._last is not None and cur <= self._last:
            raise NonceReuse(f"nonce counter went backwards: {cur} after {self._last}")
        self._last = cur


def _hkdf(secret: bytes, salt: bytes, info: bytes, length: int = 32) -> bytes:
    prk = hmac.new(salt, secret, hashlib.sha256).digest()
    out = b""
    block = b""
    counter = 1
    while len(out) < length:
        block = hmac.new(prk, block + info + bytes([counter]), hashlib.sha256).digest()
        out += block
        counter += 1
    return out[:length]


def encode_key_exchange(suite: int, public_value: bytes, digest: bytes) -> bytes:
    if len(digest) != 32:
        raise ValueError("transcript digest must be 32 bytes")
    return struct.pack(">HH", suite, len(public_value)) + public_value + digest


def decode_key_exchange(body: bytes) -> tuple[int, bytes, bytes]:
    if len(body) < 4:
        raise Malformed("key exchange body too short")
    suite, pub_len = struct.unpack_from(">HH", body, 0)
    if len(body) != 4 + pub_len + 32:
        raise Malformed("key exchange body length mismatch")
    return suite, body[4 : 4 + pub_len], body[4 + pub_len :]


class KeyExchange:
    """One side of an ephemeral DH exchange over the signaling channel.

    ``label`` must be identical on both sides (it pins the purpose, the
    parties, and any call id into the transcript).  The initiator calls
    :meth:`opening` then :meth:`on_response`; the responder calls
    :meth:`on_opening` then :meth:`on_confirm`.
    """

    def __init__(self, label: str, initiator: bool, purpose: int = PURPOSE_CALL):
        self.label = label
        self.initiator = initiator
        self.purpose = purpose
        self.suite = suite_field(purpose)
        self._private = X25519PrivateKey.generate()
        self._public = self._private.public_key().public_bytes_raw()
        self.keys: SessionKeys | None = None
        self.transcript: bytes | None = None

    def _digest(self, pub_i: bytes, pub_r: bytes) -> bytes:
        h = hashlib.sha256()
        h.update(struct.pack(">H", self.suite))
        h.update(self.label.encode("utf-8"))
        h.update(pub_i)
        h.update(pub_r)
        return h.digest()

    def _derive(self, peer_public: bytes, pub_i: bytes, pub_r: bytes) -> None:
        shared = self._private.exchange(X25519PublicKey.from_public_bytes(peer_public))
        self.transcript = self._digest(pub_i, pub_r)
        info = b"peervoip " + _PURPOSE_NAMES[self.purpose].encode()
        k_i2r = _hkdf(shared, self.transcript, info + b" i2r")
        k_r2i = _hkdf(shared, self.transcript, info + b" r2i")
        if self.initiator:
            self.keys = SessionKeys(send_key=k_i2r, receive_key=k_r2i, suite=self.suite)
        else:
            self.keys = SessionKeys(send_key=k_r2i, receive_key=k_i2r, suite=self.suite)

    # initiator side
    def opening(self) -> bytes:
        return encode_key_exchange(self.suite, self._public, b"\x00" * 32)

    def on_response(self, body: bytes) -> bytes:
        """Process the responder's message; returns the confirm message."""
        suite, peer_pub, their_digest = decode_key_exchange(body)
        if suite != self.suite:
            raise ExchangeTampered("suite mismatch in response")
        self._derive(peer_pub, self._public, peer_pub)
        if not hmac.compare_digest(their_digest, self.transcript):
            self.keys = None
            raise ExchangeTampered("transcript digest mismatch")
        return encode_key_exchange(self.suite, b"", self.transcript)

    # responder side
    def on_opening(self, body: bytes) -> bytes:
        """Process the initiator's opening; returns the response message."""
        suite, peer_pub, _ = decode_key_exchange(body)
        if suite != self.suite:
            raise ExchangeTampered("suite mismatch in opening")
        self._derive(peer_pub, peer_pub, self._public)
        return encode_key_exchange(self.suite, self._public, self.transcript)

    def on_confirm(self, body: bytes) -> None:
        suite, _, their_digest = decode_key_exchange(body)
        if suite != self.suite or self.transcript is None:
            raise ExchangeTampered("confirm before response")
        if not hmac.compare_digest(their_digest, self.transcript):
            self.keys = None
            raise ExchangeTampered("transcript digest mismatch in confirm")
