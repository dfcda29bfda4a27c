"""
Pinhole Projection - world -> pixel mapping, its analytic inverse and camera construction
"""
from typing import Tuple

import numpy as np

from src.exceptions import ArgumentError
from src.models import Camera, Projection

NEAR_PLANE = 1e-6  # mm


def rotation(camera: Camera) -> np.ndarray:
    return np.asarray(camera.R, dtype=np.float64).reshape(3, 3)


def translation(camera: Camera) -> np.ndarray:
    return np.asarray(camera.t, dtype=np.float64)


def camera_center(camera: Camera) -> np.ndarray:
    """Camera position in world coordinates, -R^T t"""
    return -rotation(camera).T @ translation(camera)


def to_camera(camera: Camera, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return points @ rotation(camera).T + translation(camera)


def project(camera: Camera, points: np.ndarray) -> Projection:
    """
    Project world points (mm) to pixels

    q = R p + t; u = fx qx / qz + cx; v = fy qy / qz + cy; depth = qz.
    A point is in the frustum iff qz > 1e-6 and (u, v) lies in [0, W-1] x [0, H-1].

    Args:
        camera: Pinhole camera
        points: (3,) or (P, 3) world points

    Returns:
        Projection with (P, 2) uv, (P,) depth and (P,) in_frustum
    """
    q = to_camera(camera, points)
    depth = q[:, 2]
    in_front = depth > NEAR_PLANE
    safe = np.where(in_front, depth, 1.0)
    u = camera.fx * q[:, 0] / safe + camera.cx
    v = camera.fy * q[:, 1] / safe + camera.cy
    uv = np.stack([u, v], axis=1)
    uv[~in_front] = np.nan
    in_frustum = in_front & (u >= 0) & (u <= camera.width - 1) & (v >= 0) & (v <= camera.height - 1)
    return Projection(uv=uv, depth=depth, in_frustum=in_frustum)


def unproject(camera: Camera, u: np.ndarray, v: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Inverse of project at a known camera-space depth; returns (P, 3) world points"""
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    depth = np.atleast_1d(np.asarray(depth, dtype=np.float64))
    q = np.stack([
        (u - camera.cx) * depth / camera.fx,
        (v - camera.cy) * depth / camera.fy,
        depth,
    ], axis=1)
    return (q - translation(camera)) @ rotation(camera)


def look_at(
    eye: np.ndarray,
    target: np.ndarray,
    up: np.ndarray,
    fx: float,
    fy: float,
    width: int,
    height: int,
) -> Camera:
    """
    Camera at `eye` looking at `target`; image x to the right, y down, z forward

    Raises:
        ArgumentError: eye == target or up parallel to the viewing direction
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise ArgumentError("camera eye coincides with target")
    forward /= norm
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    norm = np.linalg.norm(right)
    if norm < 1e-9:
        raise ArgumentError("up vector is parallel to the viewing direction")
    right /= norm
    down = np.cross(forward, right)
    R = _orthonormalize(np.stack([right, down, forward]))
    t = -R @ eye
    return Camera(
        fx=fx,
        fy=fy,
        cx=(width - 1) / 2.0,
        cy=(height - 1) / 2.0,
        R=R.reshape(-1).tolist(),
        t=t.tolist(),
        width=width,
        height=height,
    )


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    """Snap to the nearest rotation (polar decomposition)"""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


def view_directions(camera: Camera, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Unit directions from the camera center toward each point, and the distances"""
    offsets = np.asarray(points, dtype=np.float64).reshape(-1, 3) - camera_center(camera)
    distances = np.linalg.norm(offsets, axis=1)
    directions = np.divide(offsets, distances[:, None], out=np.zeros_like(offsets), where=distances[:, None] > 0)
    return directions, distances
