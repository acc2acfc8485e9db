"""File-transfer manifests, chunking, and the relay flow-control window.

Transfers move as FILE_CHUNK envelopes (64 KiB chunks) with end-to-end
credits: a sender may have at most WINDOW_CHUNKS chunks unacknowledged,
so the relay never holds more than ~1 MiB per transfer and a slow
receiver throttles its sender rather than ballooning server memory.
"""

from __future__ import annotations

import hashlib
import ntpath
import posixpath
import secrets
import struct
from dataclasses import dataclass, field

from .errors import BlockedExtension, FileTooLarge, Malformed

CHUNK_SIZE = 64 * 1024
WINDOW_CHUNKS = 16
DEFAULT_MAX_FILE = 100 * 1024 * 1024
DEFAULT_BLOCKLIST = frozenset({".exe"})

FLAG_FINAL = 0x01


def sanitize_filename(name: str) -> str:
    """Strip any path components (both separator conventions)."""
    name = posixpath.basename(ntpath.basename(name.replace("\x00", "")))
    return name or "file"


def check_filename(name: str, blocklist=DEFAULT_BLOCKLIST) -> str:
    clean = sanitize_filename(name)
    lower = clean.lower()
    for ext in blocklist:
        if lower.endswith(ext.lower()):
            raise BlockedExtension(clean)
    return clean


def file_digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class FileManifest:
    filename: str
    size: int
    content_digest: bytes  # sha256 of the whole file
    transfer_id: int = field(default_factory=lambda: secrets.randbits(64))
    chunk_size: int = CHUNK_SIZE

    @classmethod
    def for_bytes(cls, filename: str, data: bytes, blocklist=DEFAULT_BLOCKLIST,
                  max_size: int = DEFAULT_MAX_FILE) -> "FileManifest":
        clean = check_filename(filename, blocklist)
        if len(data) > max_size:
            raise FileTooLarge(f"{len(data)} bytes > {max_size}")
        return cls(filename=clean, size=len(data), content_digest=file_digest(data))

    def validate(self, blocklist=DEFAULT_BLOCKLIST, max_size: int = DEFAULT_MAX_FILE) -> None:
        check_filename(self.filename, blocklist)
        if self.filename != sanitize_filename(self.filename):
            raise Malformed("filename contains path components")
        if self.size > max_size:
            raise FileTooLarge(f"{self.size} bytes > {max_size}")

    @property
    def chunk_count(self) -> int:
        if self.size == 0:
            return 1  # a single empty, final chunk
        return (self.size + self.chunk_size - 1) // self.chunk_size


def iter_chunks(data: bytes, chunk_size: int = CHUNK_SIZE):
    """Yield (index, final, chunk) triples; a 0-byte file yields one empty final chunk."""
    if not data:
        yield 0, True, b""
        return
    count = (len(data) + chunk_size - 1) // chunk_size
    for i in range(count):
        yield i, i == count - 1, data[i * chunk_size : (i + 1) * chunk_size]


def encode_chunk(transfer_id: int, index: int, final: bool, payload: bytes) -> bytes:
    """FILE_CHUNK envelope body: transfer-id | chunk-index | flags | bytes."""
    flags = FLAG_FINAL if final else 0
    return struct.pack(">QIB", transfer_id & 0xFFFFFFFFFFFFFFFF, index, flags) + payload


def decode_chunk(body: bytes) -> tuple[int, int, bool, bytes]:
    if len(body) < 13:
        raise Malformed("chunk body too short")
    transfer_id, index, flags = struct.unpack_from(">QIB", body, 0)
    return transfer_id, index, bool(flags & FLAG_FINAL), bytes(body[13:])


class Reassembler:
    """Receiver side: collects chunks, verifies the whole-file digest."""

    def __init__(self, manifest: FileManifest):
        self.manifest = manifest
        self._chunks: dict[int, bytes] = {}
        self._final_index: int | None = None

    def add(self, index: int, final: bool, payload: bytes) -> None:
        self._chunks[index] = payload
        if final:
            self._final_index = index

    @property
    def complete(self) -> bool:
        if self._final_index is None:
            return False
        return all(i in self._chunks for i in range(self._final_index + 1))

    def assemble(self) -> bytes:
        """Return the file bytes; raises DigestMismatch if corrupted."""
        from .errors import DigestMismatch

        assert self.complete
        data = b"".join(self._chunks[i] for i in range(self._final_index + 1))
        if file_digest(data) != self.manifest.content_digest:
            raise DigestMismatch(self.manifest.filename)
        if len(data) != self.manifest.size:
            raise DigestMismatch(f"size mismatch for {self.manifest.filename}")
        return data
