"""
Feature Lifting - visibility, bilinear sampling and multi-view fusion onto mesh vertices
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.config import settings
from src.exceptions import ArgumentError
from src.models import Camera, FeatureMap, FusedFeatures, TriMesh, VarianceCenter
from src.services.mesh_ops import vertex_normals
from src.services.projection import project, view_directions
from src.services.rasterizer import render_depth

logger = logging.getLogger(__name__)


class Weighting(str, Enum):
    VISIBILITY = "visibility"  # backface cosine x z-buffer test
    UNIFORM = "uniform"        # indicator of in-frustum and z-buffer visible


def resolve_threads(threads: Optional[int] = None) -> int:
    """0 / None -> settings.threads, which itself defaults to the logical core count"""
    threads = threads if threads else settings.threads
    return threads if threads > 0 else (os.cpu_count() or 1)


def sample_bilinear(fmap: FeatureMap, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """
    Bilinear interpolation of the four texels around (u, v)

    Coordinates must lie in [0, W-1] x [0, H-1]; at integer coordinates the
    result is exactly that texel.

    Returns:
        (C,) for scalar (u, v), else (P, C)
    """
    scalar = np.ndim(u) == 0
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    H, W = fmap.height, fmap.width
    if np.any((u < 0) | (u > W - 1) | (v < 0) | (v > H - 1)):
        raise ArgumentError("sample coordinates outside the feature map")

    data = fmap.data
    x0 = np.minimum(np.floor(u).astype(np.int64), max(W - 2, 0))
    y0 = np.minimum(np.floor(v).astype(np.int64), max(H - 2, 0))
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    ax = (u - x0)[:, None]
    ay = (v - y0)[:, None]

    top = data[y0, x0] * (1 - ax) + data[y0, x1] * ax
    bottom = data[y1, x0] * (1 - ax) + data[y1, x1] * ax
    out = top * (1 - ay) + bottom * ay
    return out[0] if scalar else out


def vertex_visibility(
    mesh: TriMesh,
    camera: Camera,
    depth_buffer: np.ndarray,
    normals: np.ndarray,
    epsilon: Optional[float] = None,
    weighting: Weighting = Weighting.VISIBILITY,
) -> np.ndarray:
    """
    Per-vertex view weight in [0, 1]

    visibility: max(0, -n . d) * [depth <= zbuffer(u, v) + epsilon], d the unit
    direction from the camera to the vertex. uniform: 1 for in-frustum vertices
    passing the depth test. Out-of-frustum vertices get 0. The depth buffer is
    read at the nearest texel.
    """
    epsilon = settings.depth_epsilon_mm if epsilon is None else epsilon
    proj = project(camera, mesh.positions)
    weights = np.zeros(mesh.num_vertices)
    inside = np.flatnonzero(proj.in_frustum)
    if inside.size == 0:
        return weights

    cols = np.floor(proj.uv[inside, 0] + 0.5).astype(np.int64)
    rows = np.floor(proj.uv[inside, 1] + 0.5).astype(np.int64)
    unoccluded = proj.depth[inside] <= depth_buffer[rows, cols] + epsilon

    if Weighting(weighting) is Weighting.UNIFORM:
        weights[inside] = unoccluded.astype(np.float64)
        return weights

    directions, _ = view_directions(camera, mesh.positions[inside])
    facing = np.maximum(0.0, -np.einsum("ij,ij->i", normals[inside], directions))
    weights[inside] = facing * unoccluded
    return weights


def fuse_views(
    features: np.ndarray,
    weights: np.ndarray,
    center: VarianceCenter = VarianceCenter.WEIGHTED,
) -> FusedFeatures:
    """
    Per-vertex weighted mean and variance across views

    Weights are normalized per vertex to sum to one. The variance is taken around
    the weighted mean (weighted) or around the plain mean of the views with
    positive weight (unweighted). Views are accumulated in index order.

    Args:
        features: (N, V, C) per-view vertex features
        weights: (N, V) non-negative weights

    Raises:
        ArgumentError: negative weight or shape mismatch
    """
    features = np.asarray(features, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if features.ndim != 3 or weights.shape != features.shape[:2]:
        raise ArgumentError(f"features {features.shape} and weights {weights.shape} disagree")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ArgumentError("view weights must be finite and non-negative")

    N, V, C = features.shape
    total = np.zeros(V)
    coverage = np.zeros(V)
    for n in range(N):
        total += weights[n]
        coverage += weights[n] > 0
    covered = total > 0
    normalized = np.divide(weights, total[None, :], out=np.zeros_like(weights), where=covered[None, :])

    mean = np.zeros((V, C))
    for n in range(N):
        mean += normalized[n][:, None] * features[n]

    if VarianceCenter(center) is VarianceCenter.UNWEIGHTED:
        plain = np.zeros((V, C))
        for n in range(N):
            plain += (weights[n] > 0)[:, None] * features[n]
        reference = np.divide(plain, coverage[:, None], out=np.zeros_like(plain), where=covered[:, None])
    else:
        reference = mean

    variance = np.zeros((V, C))
    for n in range(N):
        variance += normalized[n][:, None] * (features[n] - reference) ** 2

    mean[~covered] = 0.0
    variance[~covered] = 0.0
    return FusedFeatures(mean=mean, variance=variance, visibility_sum=total, coverage=coverage)


def lift_view(
    mesh: TriMesh,
    camera: Camera,
    fmap: FeatureMap,
    normals: np.ndarray,
    weighting: Weighting = Weighting.VISIBILITY,
    epsilon: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Render depth, weight vertices and sample the map for one view: (V, C) features, (V,) weights"""
    if (fmap.height, fmap.width) != (camera.height, camera.width):
        raise ArgumentError(
            f"feature map {fmap.width}x{fmap.height} does not match camera image {camera.width}x{camera.height}"
        )
    depth = render_depth(mesh, camera)
    weights = vertex_visibility(mesh, camera, depth, normals, epsilon=epsilon, weighting=weighting)
    sampled = np.zeros((mesh.num_vertices, fmap.channels))
    used = np.flatnonzero(weights > 0)
    if used.size:
        uv = project(camera, mesh.positions[used]).uv
        sampled[used] = sample_bilinear(fmap, uv[:, 0], uv[:, 1])
    return sampled, weights


def lift_features(
    mesh: TriMesh,
    cameras: Sequence[Camera],
    fmaps: Sequence[FeatureMap],
    weighting: Weighting = Weighting.VISIBILITY,
    center: VarianceCenter = VarianceCenter.WEIGHTED,
    threads: Optional[int] = None,
    epsilon: Optional[float] = None,
) -> FusedFeatures:
    """
    Lift per-view feature maps onto vertices and fuse them

    Views run as independent tasks; results are placed by view index so the
    fused output does not depend on completion order or thread count.
    """
    if len(cameras) == 0 or len(cameras) != len(fmaps):
        raise ArgumentError(f"need one feature map per camera, got {len(fmaps)} maps for {len(cameras)} cameras")
    channels = {f.channels for f in fmaps}
    if len(channels) != 1:
        raise ArgumentError(f"feature maps disagree on channel count: {sorted(channels)}")

    normals = vertex_normals(mesh)
    N = len(cameras)
    per_view: List[Optional[Tuple[np.ndarray, np.ndarray]]] = [None] * N

    with ThreadPoolExecutor(max_workers=min(resolve_threads(threads), N)) as executor:
        futures = {
            executor.submit(lift_view, mesh, cam, fmap, normals, weighting, epsilon): i
            for i, (cam, fmap) in enumerate(zip(cameras, fmaps))
        }
        for future in as_completed(futures):
            per_view[futures[future]] = future.result()

    features = np.stack([p[0] for p in per_view])
    weights = np.stack([p[1] for p in per_view])
    fused = fuse_views(features, weights, center=center)
    logger.debug(
        f"Lifted {N} views onto {mesh.num_vertices} vertices "
        f"({int((fused.coverage > 0).sum())} covered, weighting={Weighting(weighting).value})"
    )
    return fused
