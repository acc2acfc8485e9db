"""Binary codecs for everything that crosses a socket.

Two formats live here:

* signaling envelopes, length-prefixed frames carried over a reliable
  stream::

      [0:4]  length of the rest of the frame (u32 BE)
      [4]    kind (u8)
      [5:13] envelope-id (u64 BE, monotonic per sender connection)
      [13:21] sent-at, UTC ms since epoch (u64 BE)
      then   from, to as (u16 BE length, UTF-8 bytes) each
      then   body (remaining bytes)

* media frames, fixed 16-byte header + ciphertext, carried in UDP
  datagrams::

      [0]     version (high nibble) | payload-type (low nibble)
      [1]     reserved, must be 0
      [2:4]   sequence (u16 BE, wraps)
      [4:8]   timestamp in sample-clock units (u32 BE)
      [8:12]  source-id (u32 BE, random per call)
      [12]    authentication tag length
      [13]    flags
      [14:16] reserved, must be 0

Both decoders reject malformed input with :class:`Malformed`; they never
raise anything else, no matter what bytes they are fed.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from .errors import BodyTooLarge, FrameTooLarge, Malformed

MAX_BODY = 256 * 1024
MAX_USER_ID = 64
MAX_DATAGRAM = 1400
MEDIA_HEADER_LEN = 16
MEDIA_VERSION = 1


class Kind(enum.IntEnum):
    LOGIN = 1
    SIGNUP = 2
    PRESENCE = 3
    ROSTER = 4
    CHAT = 5
    CALL_INVITE = 6
    CALL_ACCEPT = 7
    CALL_REJECT = 8
    CALL_END = 9
    KEY_EXCHANGE = 10
    FILE_OFFER = 11
    FILE_ACCEPT = 12
    FILE_CHUNK = 13
    ERROR = 14
    PING = 15
    PONG = 16


_KIND_VALUES = frozenset(int(k) for k in Kind)


@dataclass(frozen=True)
class SignalEnvelope:
    kind: Kind
    sender: str
    recipient: str  # empty string means server-directed
    envelope_id: int
    sent_at_ms: int
    body: bytes = b""


@dataclass(frozen=True)
class MediaFrame:
    payload_type: int
    sequence: int
    timestamp: int
    source_id: int
    ciphertext: bytes
    version: int = MEDIA_VERSION
    tag_length: int = 16
    flags: int = 0


def _encode_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > MAX_USER_ID:
        raise Malformed(f"user id too long: {len(raw)}")
    return struct.pack(">H", len(raw)) + raw


def encode_envelope(env: SignalEnvelope) -> bytes:
    if len(env.body) > MAX_BODY:
        raise BodyTooLarge(f"body is {len(env.body)} bytes, cap {MAX_BODY}")
    payload = (
        struct.pack(">BQQ", int(env.kind), env.envelope_id, env.sent_at_ms)
        + _encode_str(env.sender)
        + _encode_str(env.recipient)
        + env.body
    )
    return struct.pack(">I", len(payload)) + payload


def decode_envelope(data: bytes) -> SignalEnvelope:
    if len(data) < 4:
        raise Malformed("frame shorter than length prefix")
    (length,) = struct.unpack_from(">I", data, 0)
    if length != len(data) - 4:
        raise Malformed(f"declared length {length}, actual {len(data) - 4}")
    if length < 17 + 2 + 2:
        raise Malformed("frame too short for fixed header")
    kind_code, envelope_id, sent_at = struct.unpack_from(">BQQ", data, 4)
    if kind_code not in _KIND_VALUES:
        raise Malformed(f"unknown kind {kind_code}")
    pos = 21
    parts = []
    for _ in range(2):
        if pos + 2 > len(data):
            raise Malformed("truncated user id length")
        (n,) = struct.unpack_from(">H", data, pos)
        pos += 2
        if n > MAX_USER_ID or pos + n > len(data):
            raise Malformed("bad user id length")
        try:
            parts.append(data[pos : pos + n].decode("utf-8"))
        except UnicodeDecodeError:
            raise Malformed("user id not UTF-8") from None
        pos += n
    body = bytes(data[pos:])
    if len(body) > MAX_BODY:
        raise Malformed("body over cap")
    return SignalEnvelope(
        kind=Kind(kind_code),
        sender=parts[0],
        recipient=parts[1],
        envelope_id=envelope_id,
        sent_at_ms=sent_at,
        body=body,
    )


def encode_media_frame(frame: MediaFrame) -> bytes:
    if not frame.ciphertext:
        raise Malformed("empty ciphertext")
    total = MEDIA_HEADER_LEN + len(frame.ciphertext)
    if total > MAX_DATAGRAM:
        raise FrameTooLarge(f"{total} > {MAX_DATAGRAM}")
    header = struct.pack(
        ">BBHIIBBH",
        ((frame.version & 0xF) << 4) | (frame.payload_type & 0xF),
        0,
        frame.sequence & 0xFFFF,
        frame.timestamp & 0xFFFFFFFF,
        frame.source_id & 0xFFFFFFFF,
        frame.tag_length,
        frame.flags,
        0,
    )
    return header + frame.ciphertext


def decode_media_frame(data: bytes) -> MediaFrame:
    if len(data) > MAX_DATAGRAM:
        raise FrameTooLarge(f"{len(data)} > {MAX_DATAGRAM}")
    if len(data) <= MEDIA_HEADER_LEN:
        raise Malformed("datagram shorter than media header")
    vpt, reserved1, seq, ts, ssrc, tag_len, flags, reserved2 = struct.unpack_from(
        ">BBHIIBBH", data, 0
    )
    version = vpt >> 4
    if version != MEDIA_VERSION or reserved1 != 0 or reserved2 != 0:
        raise Malformed("bad version or reserved bits")
    ciphertext = bytes(data[MEDIA_HEADER_LEN:])
    if tag_len > len(ciphertext):
        raise Malformed("tag length exceeds ciphertext")
    return MediaFrame(
        payload_type=vpt & 0xF,
        sequence=seq,
        timestamp=ts,
        source_id=ssrc,
        ciphertext=ciphertext,
        version=version,
        tag_length=tag_len,
        flags=flags,
    )


def media_header(
    payload_type: int,
    sequence: int,
    timestamp: int,
    source_id: int,
    tag_length: int = 16,
    flags: int = 0,
) -> bytes:
    """The 16 header bytes of a media frame (used as AEAD associated data)."""
    return struct.pack(
        ">BBHIIBBH",
        (MEDIA_VERSION << 4) | (payload_type & 0xF),
        0,
        sequence & 0xFFFF,
        timestamp & 0xFFFFFFFF,
        source_id & 0xFFFFFFFF,
        tag_length,
        flags,
        0,
    )


def read_frame(recv_exact) -> bytes:
    """Read one full envelope frame using a ``recv_exact(n) -> bytes`` callable.

    Returns the complete frame (length prefix included) ready for
    :func:`decode_envelope`.
    """
    head = recv_exact(4)
    (length,) = struct.unpack(">I", head)
    if length > 4 + 17 + 2 * (2 + MAX_USER_ID) + MAX_BODY:
        raise Malformed(f"oversized frame: {length}")
    return head + recv_exact(length)
