"""
Array-backed domain containers

These hold numpy / scipy data and are treated as immutable once built
(arrays are flagged read-only where they are shared).
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class TriMesh:
    """Indexed triangle mesh, positions in millimeters"""
    positions: np.ndarray                 # (V, 3) float64
    faces: np.ndarray                     # (F, 3) int64
    colors: Optional[np.ndarray] = None   # (V, 3) float64 in [0, 1]

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen(np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)))
        object.__setattr__(self, "faces", _frozen(np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)))
        if self.colors is not None:
            object.__setattr__(self, "colors", _frozen(np.ascontiguousarray(self.colors, dtype=np.float64).reshape(-1, 3)))

    @property
    def num_vertices(self) -> int:
        return self.positions.shape[0]

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]


# Sparse operators are scipy CSR matrices; the Laplacian is symmetric PSD and the
# lumped mass is diagonal positive.
SparseOperator = sp.csr_matrix


@dataclass(frozen=True)
class SpectralBasis:
    """Truncated generalized eigendecomposition L phi = lambda M phi"""
    eigenvalues: np.ndarray   # (k,) ascending, >= 0
    eigenvectors: np.ndarray  # (V, k), M-orthonormal
    mass: np.ndarray          # (V,) lumped mass diagonal

    @property
    def k(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def num_vertices(self) -> int:
        return self.eigenvectors.shape[0]


@dataclass(frozen=True)
class GeomFeatures:
    """Per-vertex geometric descriptors"""
    hks: np.ndarray           # (V, T) raw heat kernel signature
    sigma30: np.ndarray       # (V,) surface variation in [0, 1/3]
    time_samples: np.ndarray  # (T,) ascending


@dataclass(frozen=True)
class FeatureMap:
    """Dense per-view feature image, H x W x C float32, channel innermost"""
    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) <= 0:
            raise ValueError(f"FeatureMap must be a non-empty H x W x C array, got shape {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class Image:
    """8-bit RGB image, row-major"""
    pixels: np.ndarray  # (H, W, 3) uint8

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class Projection:
    """Result of projecting points through one camera"""
    uv: np.ndarray          # (P, 2) pixel coordinates
    depth: np.ndarray       # (P,) camera-space z (mm)
    in_frustum: np.ndarray  # (P,) bool


@dataclass(frozen=True)
class FusedFeatures:
    """Visibility-weighted per-vertex statistics across views"""
    mean: np.ndarray            # (V, C)
    variance: np.ndarray        # (V, C)
    visibility_sum: np.ndarray  # (V,) sum of unnormalized weights
    coverage: np.ndarray        # (V,) number of views with positive weight


@dataclass(frozen=True)
class TangentFrames:
    """Per-vertex tangent bases and the complex one-ring gradient operator"""
    basis_x: np.ndarray   # (V, 3) e1
    basis_y: np.ndarray   # (V, 3) e2
    normals: np.ndarray   # (V, 3) n
    gradient: sp.csr_matrix  # (V, V) complex: f -> <grad f, e1> + i <grad f, e2>
    isolated: np.ndarray  # (V,) bool, vertices with zero gradient rows


@dataclass(frozen=True)
class SynthSample:
    """One procedurally generated labeled scan"""
    seed: int
    scan: TriMesh
    reference: TriMesh
    cameras: list
    images: list
    labels: np.ndarray                       # (V,) uint8, skin=1
    clutter_mask: np.ndarray = field(default=None)  # (V,) bool, vertices added as clutter
