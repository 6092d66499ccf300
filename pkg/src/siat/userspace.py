"""Per-user persistent object store with the three canonical spaces.

Each registered user gets RAW_VIDEO, MODEL, and PROJECT directories under
``<data_dir>/userspace/<user_id>/``; only the owner (or an admin) may read
or write them.  Writes are atomic (temp file + rename), so concurrent
readers see either the old or the new content, never a mix.
"""

from __future__ import annotations

import enum
import os
import shutil
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from .errors import AccessDenied, AlreadyExists, BadPath, NotFound


class Space(enum.Enum):
    RAW_VIDEO = "RAW_VIDEO"
    MODEL = "MODEL"
    PROJECT = "PROJECT"


SPACES = (Space.RAW_VIDEO, Space.MODEL, Space.PROJECT)


@dataclass(frozen=True)
class ObjectRef:
    user_id: str
    space: Space
    path: str
    size: int
    created_ts: int


@dataclass(frozen=True)
class UserSpace:
    user_id: str
    root: Path
    spaces: tuple[Space, ...] = SPACES


def _check_path(path: str) -> str:
    if not path or path.startswith("/") or "\\" in path:
        raise BadPath(f"bad object path {path!r}")
    parts = path.split("/")
    if any(p in ("", ".", "..") for p in parts):
        raise BadPath(f"bad object path {path!r}")
    return path


class Userspace:
    """Filesystem-backed store; access mediated by owner identity and an
    injectable admin check (wired up by the catalog)."""

    def __init__(self, data_dir: str | Path,
                 admin_check: Optional[Callable[[str], bool]] = None):
        self.root = Path(data_dir) / "userspace"
        self.root.mkdir(parents=True, exist_ok=True)
        self.admin_check = admin_check

    def _authorize(self, actor: str, owner: str):
        if actor == owner:
            return
        if self.admin_check is not None and self.admin_check(actor):
            return
        raise AccessDenied(f"user {actor!r} may not touch {owner!r}'s space")

    def _space_dir(self, user_id: str, space: Space) -> Path:
        return self.root / user_id / space.value

    # -- lifecycle ---------------------------------------------------------

    def create_user_space(self, user_id: str) -> UserSpace:
        """Create the three canonical spaces; all or nothing."""
        user_root = self.root / user_id
        if user_root.exists():
            raise AlreadyExists(f"user space for {user_id!r}")
        try:
            for space in SPACES:
                (user_root / space.value).mkdir(parents=True)
        except Exception:
            shutil.rmtree(user_root, ignore_errors=True)
            raise
        return UserSpace(user_id=user_id, root=user_root)

    def has_user_space(self, user_id: str) -> bool:
        return (self.root / user_id).is_dir()

    def list_spaces(self, user_id: str) -> list[Space]:
        user_root = self.root / user_id
        if not user_root.is_dir():
            raise NotFound(f"no user space for {user_id!r}")
        return [s for s in SPACES if (user_root / s.value).is_dir()]

    # -- objects -------------------------------------------------------------

    def put_object(self, actor: str, owner: str, space: Space, path: str,
                   data: bytes) -> ObjectRef:
        self._authorize(actor, owner)
        rel = _check_path(path)
        base = self._space_dir(owner, space)
        if not base.is_dir():
            raise NotFound(f"no {space.value} space for {owner!r}")
        target = base / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, target)
        except Exception:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return ObjectRef(user_id=owner, space=space, path=rel, size=len(data),
                         created_ts=time.time_ns() // 1000)

    def get_object(self, actor: str, owner: str, space: Space, path: str) -> bytes:
        self._authorize(actor, owner)
        target = self._space_dir(owner, space) / _check_path(path)
        if not target.is_file():
            raise NotFound(f"{space.value}/{path}")
        return target.read_bytes()

    def list_objects(self, actor: str, owner: str, space: Space,
                     prefix: str = "") -> list[ObjectRef]:
        self._authorize(actor, owner)
        base = self._space_dir(owner, space)
        if not base.is_dir():
            raise NotFound(f"no {space.value} space for {owner!r}")
        refs = []
        for path in sorted(base.rglob("*")):
            if not path.is_file() or path.name.startswith(".tmp-"):
                continue
            rel = path.relative_to(base).as_posix()
            if not rel.startswith(prefix):
                continue
            stat = path.stat()
            refs.append(ObjectRef(user_id=owner, space=space, path=rel,
                                  size=stat.st_size,
                                  created_ts=stat.st_mtime_ns // 1000))
        refs.sort(key=lambda r: r.path)
        return refs
