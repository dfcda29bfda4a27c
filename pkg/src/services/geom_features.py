"""
Geometric Features - Heat Kernel Signature, surface variation and the kNN index they rely on
"""
import logging
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from src.config import settings
from src.exceptions import ArgumentError, DegenerateSpectrumError
from src.models import GeomFeatures, SpectralBasis, TriMesh

logger = logging.getLogger(__name__)

HKS_TIME_FACTOR = 4.0 * np.log(10.0)
NONZERO_EIGENVALUE_FRACTION = 1e-8


class KnnIndex:
    """k-nearest-neighbor queries over a fixed point set, ties broken by lower index"""

    def __init__(self, points: np.ndarray):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if points.shape[0] == 0:
            raise ArgumentError("kNN index needs at least one point")
        self.points = points
        self.tree = cKDTree(points)

    def __len__(self) -> int:
        return self.points.shape[0]

    def query(self, queries: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
        """
        Args:
            queries: (3,) point or (P, 3) points
            k: Neighbors per query, 1 <= k <= number of indexed points

        Returns:
            (indices, distances), each (k,) or (P, k), ascending by (distance, index)
        """
        n = len(self)
        if k < 1 or k > n:
            raise ArgumentError(f"k={k} outside [1, {n}]")
        queries = np.asarray(queries, dtype=np.float64)
        single = queries.ndim == 1
        queries = queries.reshape(-1, 3)

        # One extra neighbor reveals whether the k-th slot is tied with an outsider
        fetch = min(k + 1, n)
        dist, idx = self.tree.query(queries, k=fetch)
        dist = dist.reshape(len(queries), fetch)
        idx = idx.reshape(len(queries), fetch)

        order = np.lexsort((idx, dist), axis=-1)
        dist = np.take_along_axis(dist, order, axis=1)
        idx = np.take_along_axis(idx, order, axis=1)

        if fetch > k:
            boundary_tie = dist[:, k] == dist[:, k - 1]
            for row in np.flatnonzero(boundary_tie):
                idx[row, :k], dist[row, :k] = self._resolve_ties(queries[row], k, dist[row, k - 1])
        idx, dist = idx[:, :k], dist[:, :k]

        if single:
            return idx[0], dist[0]
        return idx, dist

    def _resolve_ties(self, point: np.ndarray, k: int, radius: float) -> Tuple[np.ndarray, np.ndarray]:
        candidates = np.asarray(self.tree.query_ball_point(point, radius * (1 + 1e-12) + 1e-300), dtype=np.int64)
        d = np.linalg.norm(self.points[candidates] - point, axis=1)
        order = np.lexsort((candidates, d))[:k]
        return candidates[order], d[order]


def compute_hks(basis: SpectralBasis, times: np.ndarray) -> np.ndarray:
    """hks[v, j] = sum_i exp(-lambda_i t_j) phi_i(v)^2"""
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    if times.size == 0 or np.any(times <= 0) or np.any(np.diff(times) < 0):
        raise ArgumentError("HKS times must be positive and ascending")
    decay = np.exp(-np.outer(basis.eigenvalues, times))  # (k, T)
    return (basis.eigenvectors ** 2) @ decay


def first_nonzero_eigenvalue(basis: SpectralBasis) -> float:
    """Smallest eigenvalue above 1e-8 * lambda_max (skips the zero mode of every component)"""
    lam = basis.eigenvalues
    top = lam[-1]
    if not top > 0:
        raise DegenerateSpectrumError("spectrum has no positive eigenvalue")
    nonzero = lam[lam > NONZERO_EIGENVALUE_FRACTION * top]
    return float(nonzero[0])


def default_hks_times(basis: SpectralBasis, count: Optional[int] = None) -> np.ndarray:
    """
    Log-spaced times on [4 ln 10 / lambda_{k-1}, 4 ln 10 / lambda_1]

    Raises:
        DegenerateSpectrumError: no usable nonzero eigenvalue
    """
    count = count if count is not None else settings.hks_count
    if count < 1:
        raise ArgumentError(f"need at least one HKS time, got {count}")
    lam_1 = first_nonzero_eigenvalue(basis)
    t_min = HKS_TIME_FACTOR / basis.eigenvalues[-1]
    t_max = HKS_TIME_FACTOR / lam_1
    if count == 1:
        return np.array([np.sqrt(t_min * t_max)])
    return np.geomspace(t_min, t_max, count)


def normalize_hks(hks: np.ndarray) -> np.ndarray:
    """Per-time log transform, then zero mean / unit variance over vertices"""
    logged = np.log(np.maximum(hks, np.finfo(np.float64).tiny))
    mean = logged.mean(axis=0, keepdims=True)
    std = logged.std(axis=0, keepdims=True)
    return (logged - mean) / np.where(std > 0, std, 1.0)


def surface_variation(points: TriMesh | np.ndarray, k: Optional[int] = None, index: Optional[KnnIndex] = None) -> np.ndarray:
    """
    sigma_k = lambda_min / (lambda_1 + lambda_2 + lambda_3) of the kNN covariance

    Args:
        points: Mesh or (V, 3) positions
        k: Neighborhood size including the vertex itself (default 30)
        index: Prebuilt KnnIndex over the same points

    Raises:
        ArgumentError: V <= k
    """
    k = k if k is not None else settings.sigma_neighbors
    positions = points.positions if isinstance(points, TriMesh) else np.asarray(points, dtype=np.float64)
    V = positions.shape[0]
    if V <= k:
        raise ArgumentError(f"surface variation needs more than k={k} points, got {V}")
    index = index or KnnIndex(positions)
    neighbors, _ = index.query(positions, k)

    patches = positions[neighbors]  # (V, k, 3)
    centered = patches - patches.mean(axis=1, keepdims=True)
    covariance = np.einsum("vki,vkj->vij", centered, centered) / k
    eigenvalues = np.clip(np.linalg.eigvalsh(covariance), 0.0, None)  # ascending
    total = eigenvalues.sum(axis=1)
    sigma = np.divide(eigenvalues[:, 0], total, out=np.zeros(V), where=total > 0)
    return np.clip(sigma, 0.0, 1.0 / 3.0)


def normalized_xyz(mesh: TriMesh) -> np.ndarray:
    """Positions centered on the mean and divided by the RMS radius"""
    centered = mesh.positions - mesh.positions.mean(axis=0, keepdims=True)
    rms = np.sqrt(np.mean(np.sum(centered ** 2, axis=1)))
    return centered / rms if rms > 0 else centered


def compute_geom_features(
    mesh: TriMesh,
    basis: SpectralBasis,
    times: Optional[np.ndarray] = None,
    k: Optional[int] = None,
) -> GeomFeatures:
    times = default_hks_times(basis) if times is None else np.asarray(times, dtype=np.float64)
    hks = compute_hks(basis, times)
    sigma = surface_variation(mesh, k)
    logger.debug(f"Geometric features: V={mesh.num_vertices}, T={len(times)}, mean sigma={sigma.mean():.4f}")
    return GeomFeatures(hks=hks, sigma30=sigma, time_samples=times)
