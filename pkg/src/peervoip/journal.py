"""Append-only compliance journal for monitored chat.

One text line per entry, tab separated::

    journal-seq  ISO-8601-UTC-server-time  from  to  base64(body)

Files roll daily (``journal-YYYY-MM-DD.log``).  Appends go through a
single lock; nothing ever mutates or deletes an entry.
"""

from __future__ import annotations

import base64
import os
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone


@dataclass(frozen=True)
class JournalEntry:
    seq: int
    received_at_ms: int
    sender: str
    recipient: str
    body: bytes

    def to_line(self) -> str:
        iso = (
            datetime.fromtimestamp(self.received_at_ms / 1000.0, tz=timezone.utc)
            .isoformat(timespec="milliseconds")
            .replace("+00:00", "Z")
        )
        b64 = base64.b64encode(self.body).decode("ascii")
        return f"{self.seq}\t{iso}\t{self.sender}\t{self.recipient}\t{b64}"

    @classmethod
    def from_line(cls, line: str) -> "JournalEntry":
        seq, iso, sender, recipient, b64 = line.rstrip("\n").split("\t")
        ts = datetime.fromisoformat(iso.replace("Z", "+00:00"))
        return cls(
            seq=int(seq),
            received_at_ms=int(ts.timestamp() * 1000),
            sender=sender,
            recipient=recipient,
            body=base64.b64decode(b64),
        )


class MonitorJournal:
    def __init__(self, directory: str | None = None, clock=time.time):
        self._dir = directory
        self._clock = clock
        self._lock = threading.Lock()
        self._entries: list[JournalEntry] = []
        self._next_seq = 1
        if directory:
            os.makedirs(directory, exist_ok=True)
            self._load()

    def _load(self) -> None:
        for name in sorted(os.listdir(self._dir)):
            if not (name.startswith("journal-") and name.endswith(".log")):
                continue
            with open(os.path.join(self._dir, name), "r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        self._entries.append(JournalEntry.from_line(line))
        self._entries.sort(key=lambda e: e.seq)
        if self._entries:
            self._next_seq = self._entries[-1].seq + 1

    def _file_for(self, received_at_ms: int) -> str:
        day = datetime.fromtimestamp(received_at_ms / 1000.0, tz=timezone.utc).strftime("%Y-%m-%d")
        return os.path.join(self._dir, f"journal-{day}.log")

    def append(self, sender: str, recipient: str, body: bytes) -> JournalEntry:
        with self._lock:
            entry = JournalEntry(
                seq=self._next_seq,
                received_at_ms=int(self._clock() * 1000),
                sender=sender,
                recipient=recipient,
                body=body,
            )
            self._next_seq += 1
            self._entries.append(entry)
            if self._dir:
                with open(self._file_for(entry.received_at_ms), "a", encoding="utf-8") as fh:
                    fh.write(entry.to_line() + "\n")
            return entry

    def __len__(self) -> int:
        return len(self._entries)

    def query(
        self,
        user: str | None = None,
        since_ms: int | None = None,
        until_ms: int | None = None,
        substring: str | None = None,
    ) -> list[JournalEntry]:
        """Filtered read in journal-seq order; never mutates anything."""
        with self._lock:
            entries = list(self._entries)
        out = []
        for e in entries:
            if user is not None and user not in (e.sender, e.recipient):
                continue
            if since_ms is not None and e.received_at_ms < since_ms:
                continue
            if until_ms is not None and e.received_at_ms > until_ms:
                continue
            if substring is not None:
                try:
                    text = e.body.decode("utf-8")
                except UnicodeDecodeError:
                    continue
                if substring not in text:
                    continue
            out.append(e)
        return out
