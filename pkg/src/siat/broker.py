"""Embedded log-based message broker.

A single-node, in-process stand-in for a distributed broker cluster: named
append-only topic logs, offset-tracked consumer groups with manual commit
(at-least-once), and the per-service three-queue lifecycle
(``RIVA_<id>``, ``RIVA_IR_<id>``, ``RIVA_A_<id>``).

Topics may optionally be journaled to disk as ``<topic>.log`` files of
length-prefixed frames (u32 big-endian payload length, then the payload);
journals are replayed at startup.  Journal frames carry the payload only,
so message keys and publish timestamps are not durable across restarts.
"""

from __future__ import annotations

import re
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import DuplicateTopic, InvalidName, OffsetOutOfRange, UnknownTopic

_NAME_RE = re.compile(r"^[A-Za-z0-9_.-]+$")


def _now_micros() -> int:
    return time.time_ns() // 1000


@dataclass(frozen=True)
class Message:
    offset: int
    key: Optional[str]
    payload: bytes
    published_ts_micros: int


@dataclass
class TopicStats:
    name: str
    length: int
    next_offset: int
    committed: dict[str, int] = field(default_factory=dict)


class _Group:
    __slots__ = ("committed_offset", "read_cursor")

    def __init__(self):
        self.committed_offset = -1
        self.read_cursor = 0


class _Topic:
    def __init__(self, name: str, journal_path: Optional[Path]):
        self.name = name
        self.messages: list[Message] = []
        self.groups: dict[str, _Group] = {}
        self.journal_path = journal_path
        self._journal = None
        if journal_path is not None:
            self._replay(journal_path)
            self._journal = open(journal_path, "ab")

    @property
    def next_offset(self) -> int:
        return len(self.messages)

    def _replay(self, path: Path):
        if not path.exists():
            return
        with open(path, "rb") as fh:
            while True:
                header = fh.read(4)
                if len(header) < 4:
                    break
                (length,) = struct.unpack(">I", header)
                payload = fh.read(length)
                if len(payload) < length:
                    break  # torn tail frame from an interrupted append
                self.messages.append(
                    Message(len(self.messages), None, payload, 0)
                )

    def append(self, key: Optional[str], payload: bytes) -> int:
        offset = len(self.messages)
        self.messages.append(Message(offset, key, payload, _now_micros()))
        if self._journal is not None:
            self._journal.write(struct.pack(">I", len(payload)) + payload)
            self._journal.flush()
        return offset

    def close(self):
        if self._journal is not None:
            self._journal.close()
            self._journal = None


class TopicHandle:
    """Thin shareable reference to one topic on a broker."""

    def __init__(self, broker: "Broker", name: str):
        self._broker = broker
        self.name = name

    def publish(self, payload: bytes, key: Optional[str] = None) -> int:
        return self._broker.publish(self.name, key, payload)

    def stats(self) -> TopicStats:
        return self._broker.topic_stats(self.name)


class Broker:
    """Thread-safe topic registry plus consumer-group cursors.

    Appends to a topic are linearizable (single lock); each group's cursor
    is advanced atomically per poll.
    """

    def __init__(self, data_dir: str | Path | None = None):
        self._lock = threading.RLock()
        self._topics: dict[str, _Topic] = {}
        self._data_dir: Optional[Path] = None
        if data_dir is not None:
            self._data_dir = Path(data_dir)
            self._data_dir.mkdir(parents=True, exist_ok=True)
            for path in sorted(self._data_dir.glob("*.log")):
                name = path.name[: -len(".log")]
                if _NAME_RE.match(name):
                    self._topics[name] = _Topic(name, path)

    # -- lifecycle -----------------------------------------------------------

    def create_topic(self, name: str) -> TopicHandle:
        if not name or not _NAME_RE.match(name):
            raise InvalidName(f"topic name {name!r}")
        with self._lock:
            if name in self._topics:
                raise DuplicateTopic(name)
            journal = self._data_dir / f"{name}.log" if self._data_dir else None
            self._topics[name] = _Topic(name, journal)
        return TopicHandle(self, name)

    def provision_service_topics(self, service_id: str) -> list[str]:
        """Create the three conventional queues for a new real-time service."""
        if not service_id:
            raise InvalidName("empty service id")
        names = service_topic_names(service_id)
        with self._lock:
            clash = next((n for n in names if n in self._topics), None)
            if clash is not None:
                raise DuplicateTopic(clash)
            created = []
            try:
                for n in names:
                    self.create_topic(n)
                    created.append(n)
            except Exception:
                for n in created:  # roll back partial creations
                    self._drop(n)
                raise
        return names

    def delete_service_topics(self, service_id: str) -> int:
        with self._lock:
            return sum(self._drop(n) for n in service_topic_names(service_id))

    def _drop(self, name: str) -> int:
        topic = self._topics.pop(name, None)
        if topic is None:
            return 0
        topic.close()
        if topic.journal_path is not None and topic.journal_path.exists():
            topic.journal_path.unlink()
        return 1

    def has_topic(self, name: str) -> bool:
        with self._lock:
            return name in self._topics

    def list_topics(self) -> list[str]:
        with self._lock:
            return sorted(self._topics)

    # -- data path -----------------------------------------------------------

    def _get(self, name: str) -> _Topic:
        topic = self._topics.get(name)
        if topic is None:
            raise UnknownTopic(name)
        return topic

    def publish(self, topic: str, key: Optional[str], payload: bytes) -> int:
        with self._lock:
            return self._get(topic).append(key, bytes(payload))

    def poll(self, group_id: str, topic: str, max_n: int) -> list[Message]:
        """Return up to ``max_n`` messages from the group's cursor onward.

        The cursor advances past what was returned without committing, so
        uncommitted messages are redelivered after ``reset_to_committed``.
        """
        if max_n < 1:
            raise ValueError("max_n must be positive")
        with self._lock:
            t = self._get(topic)
            group = t.groups.setdefault(group_id, _Group())
            out = t.messages[group.read_cursor : group.read_cursor + max_n]
            group.read_cursor += len(out)
            return out

    def commit(self, group_id: str, topic: str, offset: int) -> int:
        with self._lock:
            t = self._get(topic)
            if not (-1 <= offset < t.next_offset):
                raise OffsetOutOfRange(
                    f"offset {offset} outside [-1, {t.next_offset})"
                )
            group = t.groups.setdefault(group_id, _Group())
            group.committed_offset = max(group.committed_offset, offset)
            # committing implies consumption up to the offset
            group.read_cursor = max(group.read_cursor, group.committed_offset + 1)
            return group.committed_offset

    def reset_to_committed(self, group_id: str, topic: str) -> int:
        """Rewind the group's cursor to just past its committed offset."""
        with self._lock:
            t = self._get(topic)
            group = t.groups.setdefault(group_id, _Group())
            group.read_cursor = group.committed_offset + 1
            return group.read_cursor

    def topic_stats(self, name: str) -> TopicStats:
        with self._lock:
            t = self._get(name)
            return TopicStats(
                name=name,
                length=len(t.messages),
                next_offset=t.next_offset,
                committed={
                    g: s.committed_offset
                    for g, s in t.groups.items()
                    if s.committed_offset >= 0
                },
            )

    def close(self):
        with self._lock:
            for topic in self._topics.values():
                topic.close()


def service_topic_names(service_id: str) -> list[str]:
    return [f"RIVA_{service_id}", f"RIVA_IR_{service_id}", f"RIVA_A_{service_id}"]
