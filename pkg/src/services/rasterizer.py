"""
Software Rasterizer - z-buffer with perspective-correct depth and a top-left fill rule

Pixel (col, row) samples the image plane at (u, v) = (col, row), the same
convention `project` uses, so a projected vertex at integer (u, v) lands on
that pixel's center.
"""
import logging
from typing import Optional, Tuple

import numpy as np

from src.models import Camera, Image, TriMesh
from src.services.projection import NEAR_PLANE, to_camera

logger = logging.getLogger(__name__)

MAX_PAIRS_PER_CHUNK = 2_000_000


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _owns_edge(ax, ay, bx, by):
    """Top-left rule: exactly one of the two triangles sharing an edge owns pixels on it"""
    dx = bx - ax
    dy = by - ay
    return ((dy == 0) & (dx > 0)) | (dy < 0)


def rasterize(mesh: TriMesh, camera: Camera) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rasterize every face

    Faces with any vertex at camera depth <= 1e-6 mm are skipped. Equal depths
    resolve to the lower face index.

    Returns:
        depth: (H, W) float64, +inf where empty
        face_index: (H, W) int64, -1 where empty
    """
    H, W = camera.height, camera.width
    depth = np.full(H * W, np.inf)
    face_index = np.full(H * W, -1, dtype=np.int64)
    if mesh.num_faces == 0:
        return depth.reshape(H, W), face_index.reshape(H, W)

    q = to_camera(camera, mesh.positions)
    z = q[:, 2]
    faces = mesh.faces
    visible = np.all(z[faces] > NEAR_PLANE, axis=1)
    face_ids = np.flatnonzero(visible)
    if face_ids.size == 0:
        return depth.reshape(H, W), face_index.reshape(H, W)

    safe_z = np.where(z > NEAR_PLANE, z, 1.0)
    sx = camera.fx * q[:, 0] / safe_z + camera.cx
    sy = camera.fy * q[:, 1] / safe_z + camera.cy

    tri = faces[face_ids]
    x = sx[tri]
    y = sy[tri]
    area = _edge(x[:, 0], y[:, 0], x[:, 1], y[:, 1], x[:, 2], y[:, 2])

    # Normalize winding so every face has positive area
    flip = area < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    x = sx[tri]
    y = sy[tri]
    area = np.abs(area)
    keep = area > 0
    face_ids, tri, x, y, area = face_ids[keep], tri[keep], x[keep], y[keep], area[keep]

    xmin = np.clip(np.ceil(x.min(axis=1)), 0, W - 1).astype(np.int64)
    xmax = np.clip(np.floor(x.max(axis=1)), 0, W - 1).astype(np.int64)
    ymin = np.clip(np.ceil(y.min(axis=1)), 0, H - 1).astype(np.int64)
    ymax = np.clip(np.floor(y.max(axis=1)), 0, H - 1).astype(np.int64)
    on_screen = (x.max(axis=1) >= 0) & (x.min(axis=1) <= W - 1) & (y.max(axis=1) >= 0) & (y.min(axis=1) <= H - 1)
    bw = np.where(on_screen, xmax - xmin + 1, 0).clip(min=0)
    bh = np.where(on_screen, ymax - ymin + 1, 0).clip(min=0)
    counts = bw * bh

    inv_z = 1.0 / z[tri]
    owns = np.stack([
        _owns_edge(x[:, 1], y[:, 1], x[:, 2], y[:, 2]),
        _owns_edge(x[:, 2], y[:, 2], x[:, 0], y[:, 0]),
        _owns_edge(x[:, 0], y[:, 0], x[:, 1], y[:, 1]),
    ], axis=1)

    start = 0
    n = len(face_ids)
    while start < n:
        # Chunk faces so the candidate (face, pixel) pair count stays bounded
        cumulative = np.cumsum(counts[start:])
        stop = start + max(1, int(np.searchsorted(cumulative, MAX_PAIRS_PER_CHUNK, side="right")))
        sel = np.arange(start, stop)
        start = stop
        total = int(counts[sel].sum())
        if total == 0:
            continue

        owner = np.repeat(sel, counts[sel])
        offsets = np.arange(total) - np.repeat(np.cumsum(counts[sel]) - counts[sel], counts[sel])
        px = (xmin[owner] + offsets % bw[owner]).astype(np.float64)
        py = (ymin[owner] + offsets // bw[owner]).astype(np.float64)

        xo, yo = x[owner], y[owner]
        w0 = _edge(xo[:, 1], yo[:, 1], xo[:, 2], yo[:, 2], px, py)
        w1 = _edge(xo[:, 2], yo[:, 2], xo[:, 0], yo[:, 0], px, py)
        w2 = _edge(xo[:, 0], yo[:, 0], xo[:, 1], yo[:, 1], px, py)
        ow = owns[owner]
        inside = (
            ((w0 > 0) | ((w0 == 0) & ow[:, 0]))
            & ((w1 > 0) | ((w1 == 0) & ow[:, 1]))
            & ((w2 > 0) | ((w2 == 0) & ow[:, 2]))
        )
        if not inside.any():
            continue

        owner, w0, w1, w2 = owner[inside], w0[inside], w1[inside], w2[inside]
        pix = (py[inside].astype(np.int64) * W + px[inside].astype(np.int64))
        a = area[owner]
        iz = inv_z[owner]
        # screen-space barycentrics interpolate 1/z linearly
        z_pix = 1.0 / ((w0 * iz[:, 0] + w1 * iz[:, 1] + w2 * iz[:, 2]) / a)

        # nearest candidate per pixel inside this chunk, ties to the lower face
        order = np.lexsort((face_ids[owner], z_pix, pix))
        pix, z_pix, owner = pix[order], z_pix[order], owner[order]
        first = np.concatenate([[True], pix[1:] != pix[:-1]])
        pix, z_pix, owner = pix[first], z_pix[first], owner[first]

        # chunks arrive in ascending face order, so equal depth keeps the earlier face
        closer = z_pix < depth[pix]
        depth[pix[closer]] = z_pix[closer]
        face_index[pix[closer]] = face_ids[owner[closer]]

    return depth.reshape(H, W), face_index.reshape(H, W)


def render_depth(mesh: TriMesh, camera: Camera) -> np.ndarray:
    """(H, W) depth buffer in mm, +inf where no face covers the pixel"""
    depth, _ = rasterize(mesh, camera)
    return depth


def render_colors(
    mesh: TriMesh,
    camera: Camera,
    face_colors: np.ndarray,
    background: Tuple[float, float, float] = (0.5, 0.5, 0.5),
    face_index: Optional[np.ndarray] = None,
) -> Image:
    """
    Flat-shaded color image

    Args:
        mesh: Mesh to draw
        camera: Camera
        face_colors: (F, 3) colors in [0, 1]
        background: Color of empty pixels
        face_index: Precomputed rasterization of the same mesh/camera

    Returns:
        8-bit RGB Image
    """
    if face_index is None:
        _, face_index = rasterize(mesh, camera)
    H, W = face_index.shape
    palette = np.vstack([np.clip(np.asarray(face_colors, dtype=np.float64).reshape(-1, 3), 0, 1), [background]])
    lookup = np.where(face_index >= 0, face_index, palette.shape[0] - 1)
    pixels = np.rint(palette[lookup] * 255.0).astype(np.uint8)
    return Image(pixels=pixels.reshape(H, W, 3))
