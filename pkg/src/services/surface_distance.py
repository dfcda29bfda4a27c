"""
Point-to-Surface Distance - exact point/triangle distance accelerated by an AABB hierarchy

Shared by the labeling rule (scan vertex -> reference surface) and the
d_surface evaluation metric.
"""
import logging
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from src.exceptions import ArgumentError
from src.models import TriMesh

logger = logging.getLogger(__name__)

LEAF_SIZE = 8
QUERY_CHUNK = 4096


def _dot(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", x, y)


def closest_point_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """
    Closest point to p[i] on triangle (a[i], b[i], c[i]), for every row i

    Voronoi-region classification of Ericson's "Real-Time Collision Detection":
    vertex regions, then edge regions, then the face interior.

    Args:
        p, a, b, c: (n, 3) arrays

    Returns:
        (n, 3) closest points
    """
    ab = b - a
    ac = c - a
    ap = p - a
    bp = p - b
    cp = p - c
    d1, d2 = _dot(ab, ap), _dot(ac, ap)
    d3, d4 = _dot(ab, bp), _dot(ac, bp)
    d5, d6 = _dot(ab, cp), _dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def assign(mask: np.ndarray, values) -> None:
        nonlocal done
        mask = mask & ~done
        if mask.any():
            out[mask] = values(mask)
            done |= mask

    assign((d1 <= 0) & (d2 <= 0), lambda m: a[m])
    assign((d3 >= 0) & (d4 <= d3), lambda m: b[m])
    assign(
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),
        lambda m: a[m] + (d1[m] / (d1[m] - d3[m]))[:, None] * ab[m],
    )
    assign((d6 >= 0) & (d5 <= d6), lambda m: c[m])
    assign(
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),
        lambda m: a[m] + (d2[m] / (d2[m] - d6[m]))[:, None] * ac[m],
    )

    def on_bc(m):
        d43 = d4[m] - d3[m]
        return b[m] + (d43 / (d43 + d5[m] - d6[m]))[:, None] * (c[m] - b[m])

    assign((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), on_bc)

    rest = ~done
    if rest.any():
        denom = va[rest] + vb[rest] + vc[rest]
        denom = np.where(denom != 0, denom, 1.0)
        v = (vb[rest] / denom)[:, None]
        w = (vc[rest] / denom)[:, None]
        out[rest] = a[rest] + ab[rest] * v + ac[rest] * w
    return out


class TriangleBVH:
    """
    Axis-aligned bounding box hierarchy over the faces of a mesh

    Nodes are stored as flat arrays; leaves hold up to LEAF_SIZE faces as a
    contiguous slice of `order`.
    """

    def __init__(self, mesh: TriMesh, leaf_size: int = LEAF_SIZE):
        if mesh.num_faces == 0:
            raise ArgumentError("surface distance needs a reference mesh with at least one face")
        self.mesh = mesh
        self.triangles = mesh.positions[mesh.faces]  # (F, 3, 3)
        self.leaf_size = leaf_size
        self._build()
        self._centroid_tree = cKDTree(self.triangles.mean(axis=1))
        logger.debug(f"Built BVH over {mesh.num_faces} faces ({len(self.box_min)} nodes)")

    def _build(self) -> None:
        tri_min = self.triangles.min(axis=1)
        tri_max = self.triangles.max(axis=1)
        centroids = self.triangles.mean(axis=1)
        order = np.arange(self.mesh.num_faces)

        box_min, box_max, left, right, start, count = [], [], [], [], [], []

        def new_node(lo: int, hi: int) -> int:
            ids = order[lo:hi]
            box_min.append(tri_min[ids].min(axis=0))
            box_max.append(tri_max[ids].max(axis=0))
            left.append(-1)
            right.append(-1)
            start.append(lo)
            count.append(hi - lo)
            return len(box_min) - 1

        stack = [new_node(0, len(order))]
        while stack:
            node = stack.pop()
            lo, n = start[node], count[node]
            if n <= self.leaf_size:
                continue
            ids = order[lo:lo + n]
            spread = centroids[ids].max(axis=0) - centroids[ids].min(axis=0)
            axis = int(np.argmax(spread))
            # stable sort keeps the split reproducible when centroids coincide
            order[lo:lo + n] = ids[np.argsort(centroids[ids, axis], kind="stable")]
            mid = lo + n // 2
            left[node] = new_node(lo, mid)
            right[node] = new_node(mid, lo + n)
            count[node] = 0
            stack.extend([left[node], right[node]])

        self.order = order
        self.box_min = np.asarray(box_min)
        self.box_max = np.asarray(box_max)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.start = np.asarray(start, dtype=np.int64)
        self.count = np.asarray(count, dtype=np.int64)

    def _face_distances(self, points: np.ndarray, faces: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        tri = self.triangles[faces]
        closest = closest_point_on_triangles(points, tri[:, 0], tri[:, 1], tri[:, 2])
        diff = points - closest
        return _dot(diff, diff), closest

    def query(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Nearest surface point for every query

        Args:
            points: (3,) or (P, 3) positions

        Returns:
            (distances (P,), face ids (P,), closest points (P, 3)); equal
            distances resolve to the lower face id
        """
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        P = len(points)
        distances = np.empty(P)
        face_ids = np.empty(P, dtype=np.int64)
        closest = np.empty((P, 3))
        for lo in range(0, P, QUERY_CHUNK):
            hi = min(lo + QUERY_CHUNK, P)
            d2, fid, cp = self._query_chunk(points[lo:hi])
            distances[lo:hi] = np.sqrt(d2)
            face_ids[lo:hi] = fid
            closest[lo:hi] = cp
        return distances, face_ids, closest

    def _query_chunk(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = len(points)
        # nearest centroid gives a tight starting bound
        _, seed_face = self._centroid_tree.query(points)
        seed_face = np.asarray(seed_face, dtype=np.int64).reshape(n)
        best_d2, best_cp = self._face_distances(points, seed_face)
        best_face = seed_face.copy()

        pair_q = np.arange(n)
        pair_node = np.zeros(n, dtype=np.int64)
        while pair_q.size:
            gap = np.maximum(self.box_min[pair_node] - points[pair_q], 0.0) + np.maximum(
                points[pair_q] - self.box_max[pair_node], 0.0
            )
            keep = _dot(gap, gap) <= best_d2[pair_q]
            pair_q, pair_node = pair_q[keep], pair_node[keep]

            leaf = self.left[pair_node] < 0
            if leaf.any():
                self._scan_leaves(points, pair_q[leaf], pair_node[leaf], best_d2, best_face, best_cp)

            inner_q, inner_node = pair_q[~leaf], pair_node[~leaf]
            pair_q = np.concatenate([inner_q, inner_q])
            pair_node = np.concatenate([self.left[inner_node], self.right[inner_node]])
        return best_d2, best_face, best_cp

    def _scan_leaves(self, points, leaf_q, leaf_node, best_d2, best_face, best_cp) -> None:
        sizes = self.count[leaf_node]
        q = np.repeat(leaf_q, sizes)
        offsets = np.arange(sizes.sum()) - np.repeat(np.cumsum(sizes) - sizes, sizes)
        faces = self.order[np.repeat(self.start[leaf_node], sizes) + offsets]
        d2, cp = self._face_distances(points[q], faces)

        # best candidate per query, ties to the lower face id
        pick = np.lexsort((faces, d2, q))
        q, d2, faces, cp = q[pick], d2[pick], faces[pick], cp[pick]
        first = np.concatenate([[True], q[1:] != q[:-1]])
        q, d2, faces, cp = q[first], d2[first], faces[first], cp[first]

        better = (d2 < best_d2[q]) | ((d2 == best_d2[q]) & (faces < best_face[q]))
        q = q[better]
        best_d2[q] = d2[better]
        best_face[q] = faces[better]
        best_cp[q] = cp[better]


def point_to_surface(points: np.ndarray, mesh: TriMesh, bvh: Optional[TriangleBVH] = None) -> np.ndarray:
    """
    Minimum Euclidean distance from each point to any face of `mesh`

    Args:
        points: (3,) point or (P, 3) points, mm
        mesh: Reference surface with at least one face
        bvh: Prebuilt hierarchy over the same mesh

    Returns:
        float for a single point, else (P,) distances in mm
    """
    single = np.ndim(points) == 1
    bvh = bvh or TriangleBVH(mesh)
    distances, _, _ = bvh.query(points)
    return float(distances[0]) if single else distances
