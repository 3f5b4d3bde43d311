"""Small shared helpers: seed splitting and atomic file output."""

from __future__ import annotations

import hashlib
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path


def derive_seed(seed: int, purpose: str) -> int:
    """Split one user seed into independent streams, one per purpose string.

    First 8 bytes of sha256(f"{seed}:{purpose}"), little-endian. Stable across
    platforms and runs, so every consumer documents its purpose string.
    """
    digest = hashlib.sha256(f"{seed}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@contextmanager
def atomic_write(path, mode: str = "wb"):
    """Write to a temp file in the target directory, then rename into place.

    A failed writer leaves no partial file at `path`.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
