"""Composition root: one data directory, all layers wired together.

This is also the embedding API: the HTTP gateway and the CLI's ``--local``
mode both drive a SiatSystem.  The data directory (``SIAT_DATA_DIR``,
default ``./siat-data``) holds the broker journals, catalog journals, user
spaces, and the knowledge triple journal.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Optional

from .acquisition import open_source, run_vsas
from .broker import Broker
from .catalog import Catalog
from .errors import AccessDenied, DataDirError
from .framewire import Compression
from .knowledge import KnowledgeBase
from .runtime import ChainSummary, RunSummary, chain_services, run_biva, run_service
from .userspace import Userspace

DEFAULT_DATA_DIR = "./siat-data"


def resolve_data_dir(value: Optional[str] = None) -> Path:
    return Path(value or os.environ.get("SIAT_DATA_DIR") or DEFAULT_DATA_DIR)


class SiatSystem:
    def __init__(self, data_dir: str | Path | None = None):
        path = resolve_data_dir(None if data_dir is None else str(data_dir))
        try:
            path.mkdir(parents=True, exist_ok=True)
            probe = path / ".writable"
            probe.write_bytes(b"")
            probe.unlink()
        except OSError as e:
            raise DataDirError(f"{path}: {e}") from e
        self.data_dir = path
        self.broker = Broker(path / "broker")
        self.userspace = Userspace(path)
        self.catalog = Catalog(path, broker=self.broker, userspace=self.userspace)
        self.knowledge = KnowledgeBase(path)

    def close(self):
        self.catalog.close()
        self.knowledge.close()
        self.broker.close()

    # -- orchestration helpers used by the gateway and CLI ---------------------

    def ingest(self, actor: str, service_id: str, source_id: str,
               batch_size: int = 8, frames: Optional[int] = None,
               compression: str | Compression = Compression.NONE) -> int:
        """Open a cataloged source and publish its frames to the service queue."""
        source = self.catalog.get_source(source_id)
        if not self.catalog.source_readable(actor, source):
            raise AccessDenied(f"source {source_id} is not readable by {actor!r}")
        self.catalog.get_service(service_id)
        if isinstance(compression, str):
            compression = Compression[compression]
        handle = open_source(source.spec)
        return run_vsas(handle, service_id, batch_size, compression, self.broker,
                        max_frames=frames)

    def run(self, service_id: str, max_batches: Optional[int] = None,
            after_publish=None) -> RunSummary:
        return run_service(service_id, self.broker, self.catalog, self.userspace,
                           max_batches=max_batches, knowledge=self.knowledge,
                           after_publish=after_publish)

    def run_batch(self, service_id: str, objects: list) -> RunSummary:
        return run_biva(service_id, objects, self.catalog, self.userspace,
                        knowledge=self.knowledge)

    def chain(self, upstream_id: str, downstream_id: str,
              max_records: Optional[int] = None) -> ChainSummary:
        return chain_services(upstream_id, downstream_id, self.broker, self.catalog,
                              self.userspace, max_records=max_records,
                              knowledge=self.knowledge)

    def query(self, text: str) -> list[dict]:
        return self.knowledge.query(text)
