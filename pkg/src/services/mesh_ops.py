"""
Mesh Operators - validation, adjacency, cotangent Laplacian and lumped mass
"""
import hashlib
import logging
from typing import Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components as _csgraph_components

from src.exceptions import MeshValidationError
from src.models import TriMesh

logger = logging.getLogger(__name__)

AREA_TOLERANCE = 1e-12  # mm^2
COT_MIN = 1.0 / np.tan(np.deg2rad(179.0))
COT_MAX = 1.0 / np.tan(np.deg2rad(1.0))


def validate_mesh(mesh: TriMesh) -> TriMesh:
    """Check TriMesh invariants

    Args:
        mesh: Mesh to validate

    Returns:
        The same mesh (for chaining)

    Raises:
        MeshValidationError: listing offending faces
    """
    V = mesh.num_vertices
    faces = mesh.faces

    if not np.all(np.isfinite(mesh.positions)):
        bad = np.flatnonzero(~np.all(np.isfinite(mesh.positions), axis=1))
        raise MeshValidationError(f"non-finite coordinates at vertices {bad[:20].tolist()}")

    if mesh.colors is not None:
        if mesh.colors.shape[0] != V:
            raise MeshValidationError(f"color count {mesh.colors.shape[0]} != vertex count {V}")
        if np.any(mesh.colors < 0) or np.any(mesh.colors > 1) or not np.all(np.isfinite(mesh.colors)):
            raise MeshValidationError("vertex colors must lie in [0, 1]")

    if faces.shape[0] == 0:
        return mesh

    out_of_range = np.flatnonzero(np.any((faces < 0) | (faces >= V), axis=1))
    if out_of_range.size:
        raise MeshValidationError(f"face index out of range for {V} vertices", out_of_range.tolist())

    repeated = np.flatnonzero(
        (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])
    )
    if repeated.size:
        raise MeshValidationError("degenerate face (repeated vertex index)", repeated.tolist())

    tiny = np.flatnonzero(face_areas(mesh) <= AREA_TOLERANCE)
    if tiny.size:
        raise MeshValidationError(f"face area below {AREA_TOLERANCE} mm^2", tiny.tolist())

    return mesh


def face_cross(mesh: TriMesh) -> np.ndarray:
    """Unnormalized face normals (length = twice the face area)"""
    p = mesh.positions
    f = mesh.faces
    return np.cross(p[f[:, 1]] - p[f[:, 0]], p[f[:, 2]] - p[f[:, 0]])


def face_areas(mesh: TriMesh) -> np.ndarray:
    return 0.5 * np.linalg.norm(face_cross(mesh), axis=1)


def face_normals(mesh: TriMesh) -> np.ndarray:
    cross = face_cross(mesh)
    norms = np.linalg.norm(cross, axis=1, keepdims=True)
    return np.divide(cross, norms, out=np.zeros_like(cross), where=norms > 0)


def unique_edges(mesh: TriMesh) -> np.ndarray:
    """Undirected edges (E, 2) with i < j, sorted lexicographically"""
    f = mesh.faces
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=0)
    edges = np.sort(edges, axis=1)
    return np.unique(edges, axis=0)


def adjacency(mesh: TriMesh) -> sp.csr_matrix:
    """Symmetric 0/1 vertex adjacency from face edges"""
    V = mesh.num_vertices
    e = unique_edges(mesh)
    data = np.ones(2 * len(e))
    A = sp.coo_matrix((data, (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))), shape=(V, V))
    return A.tocsr()


def connected_components(mesh: TriMesh) -> Tuple[int, np.ndarray]:
    """Number of edge-connected components and per-vertex component label"""
    return _csgraph_components(adjacency(mesh), directed=False)


def isolated_vertices(mesh: TriMesh) -> np.ndarray:
    """Vertices referenced by no face"""
    degree = np.bincount(mesh.faces.ravel(), minlength=mesh.num_vertices)
    return degree == 0


def cotan_laplacian(mesh: TriMesh) -> sp.csr_matrix:
    """Cotangent Laplacian (positive semi-definite convention)

    Off-diagonal (i, j) = -1/2 * sum of cotangents of the angles opposite edge (i, j),
    accumulated per incident face (non-manifold edges allowed). Diagonal = minus the
    row sum of off-diagonals. Cotangents are clamped to [cot 179deg, cot 1deg].

    Args:
        mesh: Valid mesh

    Returns:
        Symmetric (V, V) CSR matrix
    """
    V = mesh.num_vertices
    p = mesh.positions
    f = mesh.faces

    rows, cols, vals = [], [], []
    for corner in range(3):
        i = f[:, (corner + 1) % 3]
        j = f[:, (corner + 2) % 3]
        k = f[:, corner]
        e1 = p[i] - p[k]
        e2 = p[j] - p[k]
        cross_norm = np.linalg.norm(np.cross(e1, e2), axis=1)
        cot = np.einsum("ij,ij->i", e1, e2) / cross_norm
        cot = np.clip(cot, COT_MIN, COT_MAX)
        w = -0.5 * cot
        rows.extend([i, j])
        cols.extend([j, i])
        vals.extend([w, w])

    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    vals = np.concatenate(vals) if vals else np.zeros(0)

    off = sp.coo_matrix((vals, (rows, cols)), shape=(V, V)).tocsr()
    off.sum_duplicates()
    diagonal = -np.asarray(off.sum(axis=1)).ravel()
    L = (off + sp.diags(diagonal)).tocsr()
    L.sum_duplicates()
    L.sort_indices()
    return L


def lumped_mass(mesh: TriMesh) -> sp.csr_matrix:
    """Barycentric lumped mass: one third of incident face areas per vertex"""
    V = mesh.num_vertices
    areas = face_areas(mesh)
    mass = np.zeros(V)
    for corner in range(3):
        np.add.at(mass, mesh.faces[:, corner], areas / 3.0)
    if np.any(mass <= 0):
        missing = int(np.sum(mass <= 0))
        raise MeshValidationError(f"{missing} vertices have zero mass (not referenced by any face)")
    return sp.diags(mass).tocsr()


def vertex_normals(mesh: TriMesh) -> np.ndarray:
    """Area-weighted vertex normals; isolated vertices get the zero vector"""
    V = mesh.num_vertices
    cross = face_cross(mesh)  # |cross| = 2 * area, so summing is area weighting
    acc = np.zeros((V, 3))
    for corner in range(3):
        np.add.at(acc, mesh.faces[:, corner], cross)
    norms = np.linalg.norm(acc, axis=1, keepdims=True)
    normals = np.divide(acc, norms, out=np.zeros_like(acc), where=norms > 0)
    flagged = int(isolated_vertices(mesh).sum())
    if flagged:
        logger.debug(f"{flagged} vertices have no incident area; zero normals assigned")
    return normals


def mesh_content_hash(mesh: TriMesh) -> str:
    """SHA256 over positions and faces (colors do not affect geometry caches)"""
    sha256 = hashlib.sha256()
    sha256.update(np.int64(mesh.num_vertices).tobytes())
    sha256.update(mesh.positions.astype("<f8").tobytes())
    sha256.update(mesh.faces.astype("<i8").tobytes())
    return sha256.hexdigest()


def transform_mesh(mesh: TriMesh, rotation: np.ndarray, translation=(0.0, 0.0, 0.0), scale: float = 1.0) -> TriMesh:
    """Apply x -> scale * R x + t"""
    positions = scale * mesh.positions @ np.asarray(rotation).T + np.asarray(translation)
    return TriMesh(positions=positions, faces=mesh.faces, colors=mesh.colors)


def permute_vertices(mesh: TriMesh, order: np.ndarray) -> TriMesh:
    """Reorder vertices so that new vertex i is old vertex order[i]"""
    order = np.asarray(order)
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    colors = mesh.colors[order] if mesh.colors is not None else None
    return TriMesh(positions=mesh.positions[order], faces=inverse[mesh.faces], colors=colors)


# ============================================================================
# Construction helpers
# ============================================================================

def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriMesh:
    """Geodesic sphere from a subdivided icosahedron"""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    mesh = TriMesh(positions=verts / np.linalg.norm(verts, axis=1, keepdims=True), faces=faces)
    for _ in range(subdivisions):
        mesh = subdivide_midpoint(mesh)
        mesh = TriMesh(positions=mesh.positions / np.linalg.norm(mesh.positions, axis=1, keepdims=True), faces=mesh.faces)
    return TriMesh(positions=mesh.positions * radius, faces=mesh.faces)


def subdivide_midpoint(mesh: TriMesh) -> TriMesh:
    """1-to-4 midpoint subdivision; new vertices lie exactly on the original faces

    Original vertices keep their indices; edge midpoints follow in sorted-edge order.
    """
    V = mesh.num_vertices
    f = mesh.faces
    edges = unique_edges(mesh)
    edge_index = {(int(a), int(b)): V + n for n, (a, b) in enumerate(edges)}

    def mid(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        return np.fromiter((edge_index[(int(x), int(y))] for x, y in zip(lo, hi)), dtype=np.int64, count=lo.size)

    m01 = mid(f[:, 0], f[:, 1])
    m12 = mid(f[:, 1], f[:, 2])
    m20 = mid(f[:, 2], f[:, 0])
    new_faces = np.concatenate([
        np.stack([f[:, 0], m01, m20], axis=1),
        np.stack([f[:, 1], m12, m01], axis=1),
        np.stack([f[:, 2], m20, m12], axis=1),
        np.stack([m01, m12, m20], axis=1),
    ])
    midpoints = 0.5 * (mesh.positions[edges[:, 0]] + mesh.positions[edges[:, 1]])
    positions = np.concatenate([mesh.positions, midpoints])
    colors = None
    if mesh.colors is not None:
        colors = np.concatenate([mesh.colors, 0.5 * (mesh.colors[edges[:, 0]] + mesh.colors[edges[:, 1]])])
    return TriMesh(positions=positions, faces=new_faces, colors=colors)


def grid_mesh(nx: int, ny: int, spacing: float = 1.0) -> TriMesh:
    """Flat (nx x ny)-vertex grid in the z=0 plane, triangulated with alternating diagonals"""
    xs, ys = np.meshgrid(np.arange(nx) * spacing, np.arange(ny) * spacing, indexing="xy")
    positions = np.stack([xs.ravel(), ys.ravel(), np.zeros(nx * ny)], axis=1)
    faces = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            b, c, d = a + 1, a + nx, a + nx + 1
            if (i + j) % 2 == 0:
                faces.extend([[a, b, d], [a, d, c]])
            else:
                faces.extend([[a, b, c], [b, d, c]])
    return TriMesh(positions=positions, faces=np.array(faces, dtype=np.int64))
