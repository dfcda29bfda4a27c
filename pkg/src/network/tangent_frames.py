"""
Tangent Frames - per-vertex (e1, e2, n) bases and the complex one-ring gradient operator
"""
import logging

import numpy as np
import scipy.sparse as sp

from src.models import TangentFrames, TriMesh
from src.services.mesh_ops import unique_edges, vertex_normals

logger = logging.getLogger(__name__)

AXIS_FALLBACK_NORM = 1e-3
SINGULAR_TOLERANCE = 1e-12


def _project_to_tangent(vecs: np.ndarray, normals: np.ndarray) -> np.ndarray:
    return vecs - np.einsum("ij,ij->i", vecs, normals)[:, None] * normals


def build_tangent_frames(mesh: TriMesh) -> TangentFrames:
    """
    Build tangent bases and the least-squares gradient operator G

    e1 is the tangent projection of the global x-axis, or of the y-axis when that
    projection is shorter than 1e-3. G maps a vertex function f to
    <grad f, e1> + i <grad f, e2>, fitted by least squares to the one-ring edge
    differences. Vertices without neighbors or with a rank-deficient one-ring get
    zero rows and are flagged in `isolated`.

    Args:
        mesh: Valid mesh

    Returns:
        TangentFrames
    """
    V = mesh.num_vertices
    p = mesh.positions

    normals = vertex_normals(mesh)
    missing = np.linalg.norm(normals, axis=1) == 0
    normals[missing] = (0.0, 0.0, 1.0)

    x_axis = np.tile([1.0, 0.0, 0.0], (V, 1))
    y_axis = np.tile([0.0, 1.0, 0.0], (V, 1))
    e1 = _project_to_tangent(x_axis, normals)
    fallback = np.linalg.norm(e1, axis=1) < AXIS_FALLBACK_NORM
    e1[fallback] = _project_to_tangent(y_axis[fallback], normals[fallback])
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(normals, e1)

    # Directed one-ring edges tail -> tip
    edges = unique_edges(mesh)
    tails = np.concatenate([edges[:, 0], edges[:, 1]])
    tips = np.concatenate([edges[:, 1], edges[:, 0]])
    vecs = p[tips] - p[tails]
    ex = np.einsum("ij,ij->i", vecs, e1[tails])
    ey = np.einsum("ij,ij->i", vecs, e2[tails])

    # Per-vertex normal equations N = sum [ex ey]^T [ex ey]
    normal_eq = np.zeros((V, 2, 2))
    np.add.at(normal_eq[:, 0, 0], tails, ex * ex)
    np.add.at(normal_eq[:, 0, 1], tails, ex * ey)
    np.add.at(normal_eq[:, 1, 1], tails, ey * ey)
    normal_eq[:, 1, 0] = normal_eq[:, 0, 1]

    det = normal_eq[:, 0, 0] * normal_eq[:, 1, 1] - normal_eq[:, 0, 1] ** 2
    scale = (normal_eq[:, 0, 0] + normal_eq[:, 1, 1]) ** 2
    isolated = ~(det > SINGULAR_TOLERANCE * scale)

    safe_det = np.where(isolated, 1.0, det)
    inv = np.empty_like(normal_eq)
    inv[:, 0, 0] = normal_eq[:, 1, 1] / safe_det
    inv[:, 1, 1] = normal_eq[:, 0, 0] / safe_det
    inv[:, 0, 1] = -normal_eq[:, 0, 1] / safe_det
    inv[:, 1, 0] = inv[:, 0, 1]

    # Coefficient of f[tip] in the fitted gradient at tail
    gx = inv[tails, 0, 0] * ex + inv[tails, 0, 1] * ey
    gy = inv[tails, 1, 0] * ex + inv[tails, 1, 1] * ey
    coeff = gx + 1j * gy
    coeff[isolated[tails]] = 0.0

    diagonal = np.zeros(V, dtype=np.complex128)
    np.add.at(diagonal, tails, -coeff)

    rows = np.concatenate([tails, np.arange(V)])
    cols = np.concatenate([tips, np.arange(V)])
    vals = np.concatenate([coeff, diagonal])
    gradient = sp.coo_matrix((vals, (rows, cols)), shape=(V, V)).tocsr()
    gradient.sum_duplicates()
    gradient.eliminate_zeros()
    gradient.sort_indices()

    if isolated.any():
        logger.debug(f"{int(isolated.sum())} vertices have a degenerate one-ring; zero gradient rows")

    return TangentFrames(
        basis_x=e1,
        basis_y=e2,
        normals=normals,
        gradient=gradient,
        isolated=isolated,
    )


def rotate_frames(frames: TangentFrames, angles: np.ndarray) -> TangentFrames:
    """Rotate each vertex's (e1, e2) by angles[v] about n; G picks up the phase e^{-i angle}"""
    c = np.cos(angles)[:, None]
    s = np.sin(angles)[:, None]
    e1 = c * frames.basis_x + s * frames.basis_y
    e2 = -s * frames.basis_x + c * frames.basis_y
    gradient = (sp.diags(np.exp(-1j * angles)) @ frames.gradient).tocsr()
    return TangentFrames(basis_x=e1, basis_y=e2, normals=frames.normals, gradient=gradient, isolated=frames.isolated)
