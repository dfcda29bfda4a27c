"""
Shared helpers for the little-endian binary formats (magic + u32 version + payload)
"""
import os
import tempfile
from pathlib import Path
from typing import Tuple

import numpy as np

from src.exceptions import FormatError, MissingInputError

FORMAT_VERSION = 1


def read_payload(path: str | Path, what: str) -> bytes:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(path, what)
    return path.read_bytes()


def check_magic(data: bytes, magic: bytes, path: Path) -> int:
    """Validate magic + version, return the offset after them"""
    if len(data) < 8:
        raise FormatError(f"file too short for {magic.decode()} header", path, offset=len(data))
    if data[:4] != magic:
        raise FormatError(f"bad magic {data[:4]!r}, expected {magic!r}", path, offset=0)
    version = int(np.frombuffer(data, dtype="<u4", count=1, offset=4)[0])
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported {magic.decode()} version {version}", path, offset=4)
    return 8


def read_u32(data: bytes, offset: int, count: int, path: Path) -> Tuple[Tuple[int, ...], int]:
    end = offset + 4 * count
    if len(data) < end:
        raise FormatError("truncated header", path, offset=len(data))
    values = np.frombuffer(data, dtype="<u4", count=count, offset=offset)
    return tuple(int(v) for v in values), end


def read_array(data: bytes, offset: int, dtype: str, count: int, path: Path) -> Tuple[np.ndarray, int]:
    """Read `count` items, raising FormatError with the offset where data runs out"""
    itemsize = np.dtype(dtype).itemsize
    end = offset + itemsize * count
    if len(data) < end:
        raise FormatError(
            f"truncated payload: need {end} bytes, file has {len(data)}", path, offset=len(data)
        )
    return np.frombuffer(data, dtype=dtype, count=count, offset=offset).copy(), end


def expect_end(data: bytes, offset: int, path: Path) -> None:
    if len(data) != offset:
        raise FormatError(f"{len(data) - offset} trailing bytes after payload", path, offset=offset)


def header(magic: bytes, *fields: int) -> bytes:
    return magic + np.asarray([FORMAT_VERSION, *fields], dtype="<u4").tobytes()


def atomic_write(path: str | Path, payload: bytes) -> None:
    """Write to a sibling temp file then rename, so readers never see partial files"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
