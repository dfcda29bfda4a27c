"""
Feature Map Data Access Object
FMAP: "FMAP", u32 version=1, u32 H, u32 W, u32 C, then H*W*C float32 (row-major, channel innermost)
"""
from pathlib import Path
import logging

import numpy as np

from src.exceptions import ArgumentError, FormatError
from src.models import FeatureMap
from src.storage.binary_codec import atomic_write, check_magic, expect_end, header, read_array, read_payload, read_u32

logger = logging.getLogger(__name__)

MAGIC = b"FMAP"


class FeatureMapDAO:
    """DAO for per-view feature maps and per-vertex feature tensors"""

    @staticmethod
    def read(path: str | Path) -> FeatureMap:
        """
        Read an FMAP file

        Raises:
            FormatError: bad magic/version, truncation, trailing bytes or non-finite values
        """
        path = Path(path)
        data = read_payload(path, "feature map")
        offset = check_magic(data, MAGIC, path)
        (height, width, channels), offset = read_u32(data, offset, 3, path)
        if min(height, width, channels) == 0:
            raise FormatError(f"empty feature map {height}x{width}x{channels}", path, offset=8)
        values, end = read_array(data, offset, "<f4", height * width * channels, path)
        expect_end(data, end, path)
        if not np.all(np.isfinite(values)):
            first = int(np.flatnonzero(~np.isfinite(values))[0])
            raise FormatError("non-finite feature value", path, offset=offset + 4 * first)
        return FeatureMap(data=values.reshape(height, width, channels))

    @staticmethod
    def write(fmap: FeatureMap, path: str | Path) -> None:
        if not np.all(np.isfinite(fmap.data)):
            raise ArgumentError("refusing to write non-finite feature values")
        payload = header(MAGIC, fmap.height, fmap.width, fmap.channels) + fmap.data.astype("<f4").tobytes()
        atomic_write(path, payload)
        logger.debug(f"Wrote FMAP {fmap.height}x{fmap.width}x{fmap.channels} to {path}")

    @staticmethod
    def read_vertex_features(path: str | Path) -> np.ndarray:
        """Per-vertex tensors are stored as FMAP with H = V, W = 1"""
        fmap = FeatureMapDAO.read(path)
        if fmap.width != 1:
            raise FormatError(f"vertex feature file must have W=1, got W={fmap.width}", path, offset=12)
        return fmap.data[:, 0, :]

    @staticmethod
    def write_vertex_features(features: np.ndarray, path: str | Path) -> None:
        features = np.asarray(features)
        if features.ndim == 1:
            features = features[:, None]
        if features.ndim != 2 or features.shape[0] == 0 or features.shape[1] == 0:
            raise ArgumentError(f"vertex features must be a non-empty V x C array, got {features.shape}")
        FeatureMapDAO.write(FeatureMap(data=features[:, None, :]), path)
