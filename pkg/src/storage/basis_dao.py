"""
Spectral Basis Data Access Object
SPEC: "SPEC", u32 version=1, u32 V, u32 k, f64 eigenvalues[k], f64 eigenvectors[V*k] row-major, f64 mass[V]
"""
from pathlib import Path
import logging

import numpy as np

from src.exceptions import FormatError
from src.models import SpectralBasis
from src.storage.binary_codec import atomic_write, check_magic, expect_end, header, read_array, read_payload, read_u32

logger = logging.getLogger(__name__)

MAGIC = b"SPEC"


class BasisDAO:
    """DAO for cached eigenbases"""

    @staticmethod
    def read(path: str | Path) -> SpectralBasis:
        path = Path(path)
        data = read_payload(path, "basis cache")
        offset = check_magic(data, MAGIC, path)
        (V, k), offset = read_u32(data, offset, 2, path)
        if V == 0 or k == 0:
            raise FormatError(f"empty basis (V={V}, k={k})", path, offset=8)
        eigenvalues, offset = read_array(data, offset, "<f8", k, path)
        eigenvectors, offset = read_array(data, offset, "<f8", V * k, path)
        mass, offset = read_array(data, offset, "<f8", V, path)
        expect_end(data, offset, path)
        return SpectralBasis(
            eigenvalues=eigenvalues,
            eigenvectors=eigenvectors.reshape(V, k),
            mass=mass,
        )

    @staticmethod
    def write(basis: SpectralBasis, path: str | Path) -> None:
        payload = b"".join([
            header(MAGIC, basis.num_vertices, basis.k),
            np.ascontiguousarray(basis.eigenvalues, dtype="<f8").tobytes(),
            np.ascontiguousarray(basis.eigenvectors, dtype="<f8").tobytes(),
            np.ascontiguousarray(basis.mass, dtype="<f8").tobytes(),
        ])
        atomic_write(path, payload)
        logger.debug(f"Wrote SPEC basis V={basis.num_vertices} k={basis.k} to {path}")
