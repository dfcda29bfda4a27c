"""
Label Data Access Object
LBLS: "LBLS", u32 version=1, u32 V, then V bytes of {0, 1} (skin = 1)
"""
from pathlib import Path

import numpy as np

from src.exceptions import ArgumentError, FormatError
from src.storage.binary_codec import atomic_write, check_magic, expect_end, header, read_array, read_payload, read_u32

MAGIC = b"LBLS"


class LabelDAO:
    """DAO for per-vertex binary labels"""

    @staticmethod
    def read(path: str | Path) -> np.ndarray:
        path = Path(path)
        data = read_payload(path, "label file")
        offset = check_magic(data, MAGIC, path)
        (V,), offset = read_u32(data, offset, 1, path)
        labels, end = read_array(data, offset, "u1", V, path)
        expect_end(data, end, path)
        bad = np.flatnonzero(labels > 1)
        if bad.size:
            raise FormatError(f"label value {labels[bad[0]]} not in {{0, 1}}", path, offset=offset + int(bad[0]))
        return labels

    @staticmethod
    def write(labels: np.ndarray, path: str | Path) -> None:
        labels = np.asarray(labels)
        if labels.ndim != 1 or np.any((labels != 0) & (labels != 1)):
            raise ArgumentError("labels must be a 1-D array of 0/1 values")
        atomic_write(path, header(MAGIC, labels.shape[0]) + labels.astype(np.uint8).tobytes())
