"""
Checkpoint Data Access Object
DNET: "DNET", u32 version=1, u32 B, u32 C, u32 D_in, u32 k, then f32 parameters in layout order
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple
import logging

import numpy as np

from src.exceptions import ArgumentError, FormatError
from src.network.diffusion_net import parameter_count
from src.storage.binary_codec import atomic_write, check_magic, expect_end, header, read_array, read_payload, read_u32

logger = logging.getLogger(__name__)

MAGIC = b"DNET"


@dataclass(frozen=True)
class CheckpointHeader:
    """Config echo stored ahead of the parameter vector"""
    blocks: int
    width: int
    in_channels: int
    eig_k: int

    @property
    def parameter_count(self) -> int:
        return parameter_count(self.in_channels, self.width, self.blocks)


class CheckpointDAO:
    """DAO for trained network parameters"""

    @staticmethod
    def read(path: str | Path) -> Tuple[CheckpointHeader, np.ndarray]:
        path = Path(path)
        data = read_payload(path, "checkpoint")
        offset = check_magic(data, MAGIC, path)
        (blocks, width, in_channels, eig_k), offset = read_u32(data, offset, 4, path)
        if min(blocks, width, in_channels, eig_k) == 0:
            raise FormatError(f"invalid network shape B={blocks} C={width} D_in={in_channels} k={eig_k}", path, offset=8)
        head = CheckpointHeader(blocks=blocks, width=width, in_channels=in_channels, eig_k=eig_k)
        params, end = read_array(data, offset, "<f4", head.parameter_count, path)
        expect_end(data, end, path)
        if not np.all(np.isfinite(params)):
            raise FormatError("non-finite parameter in checkpoint", path, offset=offset)
        return head, params

    @staticmethod
    def write(head: CheckpointHeader, params: np.ndarray, path: str | Path) -> None:
        params = np.asarray(params, dtype="<f4")
        if params.shape != (head.parameter_count,):
            raise ArgumentError(f"parameter vector has {params.size} entries, layout needs {head.parameter_count}")
        atomic_write(path, header(MAGIC, head.blocks, head.width, head.in_channels, head.eig_k) + params.tobytes())
        logger.info(f"Saved checkpoint ({head.parameter_count} parameters) to {path}")
