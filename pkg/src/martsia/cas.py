"""Content-addressed object store with IPFS-like locator semantics.

Locators are ``"cas:" + sha256(content).hexdigest()``. Every read re-hashes the
stored bytes, so a tampered backend is reported instead of served.
"""
from __future__ import annotations

import hashlib
import os
import re
import tempfile
import threading
from pathlib import Path

from .errors import IntegrityFault, NotFound, StorageFull

PREFIX = "cas:"
_LOCATOR_RE = re.compile(r"cas:[0-9a-f]{64}")


def locator_for(content: bytes) -> str:
    return PREFIX + hashlib.sha256(content).hexdigest()


def check_locator(loc: str) -> str:
    if not isinstance(loc, str) or not _LOCATOR_RE.fullmatch(loc):
        raise ValueError(f"malformed locator: {loc!r}")
    return loc[len(PREFIX):]


class MemoryBackend:
    def __init__(self, capacity=None):
        self.objects = {}
        self.capacity = capacity
        self._lock = threading.Lock()

    def write(self, digest: str, content: bytes) -> None:
        with self._lock:
            if digest in self.objects:
                return
            used = sum(len(v) for v in self.objects.values())
            if self.capacity is not None and used + len(content) > self.capacity:
                raise StorageFull(f"capacity {self.capacity} bytes exceeded")
            self.objects[digest] = bytes(content)

    def read(self, digest: str) -> bytes:
        with self._lock:
            try:
                return self.objects[digest]
            except KeyError:
                raise NotFound(PREFIX + digest) from None

    def __len__(self):
        return len(self.objects)


class DirectoryBackend:
    """Objects under ``<root>/objects/<first 2 hex>/<remaining 62 hex>``."""

    def __init__(self, root):
        self.root = Path(root)
        (self.root / "objects").mkdir(parents=True, exist_ok=True)

    def path(self, digest: str) -> Path:
        return self.root / "objects" / digest[:2] / digest[2:]

    def write(self, digest: str, content: bytes) -> None:
        target = self.path(digest)
        if target.exists():
            return
        target.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=".tmp-")
            with os.fdopen(fd, "wb") as fh:
                fh.write(content)
            # rename is atomic, so concurrent writers of the same object converge on one file
            os.replace(tmp, target)
        except OSError as exc:
            if exc.errno == 28:  # ENOSPC
                raise StorageFull(str(exc)) from exc
            raise

    def read(self, digest: str) -> bytes:
        try:
            return self.path(digest).read_bytes()
        except FileNotFoundError:
            raise NotFound(PREFIX + digest) from None

    def __len__(self):
        return sum(1 for p in (self.root / "objects").glob("??/*") if not p.name.startswith(".tmp-"))


class ContentStore:
    def __init__(self, backend=None):
        self.backend = backend if backend is not None else MemoryBackend()

    @classmethod
    def at(cls, root) -> "ContentStore":
        return cls(DirectoryBackend(root))

    def put(self, content: bytes) -> str:
        content = bytes(content)
        loc = locator_for(content)
        self.backend.write(loc[len(PREFIX):], content)
        return loc

    def get(self, loc: str) -> bytes:
        digest = check_locator(loc)
        content = self.backend.read(digest)
        if hashlib.sha256(content).hexdigest() != digest:
            raise IntegrityFault(f"stored object does not hash to {loc}")
        return content

    def __contains__(self, loc: str) -> bool:
        try:
            self.backend.read(check_locator(loc))
            return True
        except (NotFound, ValueError):
            return False
