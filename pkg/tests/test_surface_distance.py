import numpy as np
import pytest

from src.exceptions import ArgumentError
from src.models import TriMesh
from src.services.surface_distance import TriangleBVH, closest_point_on_triangles, point_to_surface
from tests.conftest import perturbed_sphere


def segment_closest(p, a, b):
    ab = b - a
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
    return a + t[:, None] * ab


def reference_closest(p, a, b, c):
    """Plane projection when it lands inside the triangle, else the nearest of the three edges"""
    n = np.cross(b - a, c - a)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    q = p - np.einsum("ij,ij->i", p - a, n)[:, None] * n
    inside = np.ones(len(p), dtype=bool)
    for u, v in ((a, b), (b, c), (c, a)):
        inside &= np.einsum("ij,ij->i", np.cross(v - u, q - u), n) >= 0
    edges = np.stack([segment_closest(p, a, b), segment_closest(p, b, c), segment_closest(p, c, a)])
    nearest = edges[np.argmin(np.linalg.norm(edges - p[None], axis=2), axis=0), np.arange(len(p))]
    return np.where(inside[:, None], q, nearest)


def test_closest_point_matches_reference():
    rng = np.random.default_rng(0)
    a, b, c = (rng.normal(size=(5000, 3)) for _ in range(3))
    p = 2.0 * rng.normal(size=(5000, 3))
    ours = closest_point_on_triangles(p, a, b, c)
    expected = reference_closest(p, a, b, c)
    assert np.allclose(np.linalg.norm(ours - p, axis=1), np.linalg.norm(expected - p, axis=1), atol=1e-9)


def test_closest_point_regions():
    a = np.array([[0.0, 0, 0]])
    b = np.array([[1.0, 0, 0]])
    c = np.array([[0.0, 1, 0]])
    cases = {
        (-1.0, -1.0, 0.0): (0.0, 0.0, 0.0),
        (0.5, -2.0, 1.0): (0.5, 0.0, 0.0),
        (0.2, 0.3, 5.0): (0.2, 0.3, 0.0),
        (2.0, 2.0, 0.0): (0.5, 0.5, 0.0),
        (0.0, 3.0, -1.0): (0.0, 1.0, 0.0),
    }
    for point, closest in cases.items():
        assert np.allclose(closest_point_on_triangles(np.array([point]), a, b, c)[0], closest)


def test_bvh_matches_brute_force():
    mesh = perturbed_sphere(2, radius=40.0, noise=0.1, seed=2)
    points = np.random.default_rng(1).uniform(-60.0, 60.0, (10_000, 3))
    dist, faces, closest = TriangleBVH(mesh).query(points)

    tri = mesh.positions[mesh.faces]
    F = mesh.num_faces
    for start in range(0, len(points), 500):
        chunk = points[start:start + 500]
        p = np.repeat(chunk, F, axis=0)
        cp = closest_point_on_triangles(p, np.tile(tri[:, 0], (len(chunk), 1)), np.tile(tri[:, 1], (len(chunk), 1)), np.tile(tri[:, 2], (len(chunk), 1)))
        d = np.linalg.norm(cp - p, axis=1).reshape(len(chunk), F)
        assert np.allclose(dist[start:start + 500], d.min(axis=1), atol=1e-9)
    assert np.allclose(np.linalg.norm(closest - points, axis=1), dist, atol=1e-9)
    assert faces.min() >= 0 and faces.max() < F


def test_ties_resolve_to_lowest_face():
    mesh = perturbed_sphere(1, radius=10.0)
    for v in (0, 5, 17):
        dist, faces, _ = TriangleBVH(mesh).query(mesh.positions[v][None])
        incident = np.flatnonzero(np.any(mesh.faces == v, axis=1))
        assert dist[0] == 0.0
        assert faces[0] == incident.min()


def test_point_to_surface_shapes():
    mesh = perturbed_sphere(1, radius=10.0)
    assert isinstance(point_to_surface(np.zeros(3), mesh), float)
    distances = point_to_surface(np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 30.0]]), mesh)
    assert distances.shape == (2,)
    assert 7.5 < distances[0] < 10.5
    assert 19.5 < distances[1] < 22.5


def test_empty_surface_is_rejected():
    with pytest.raises(ArgumentError):
        TriangleBVH(TriMesh(positions=np.zeros((3, 3)), faces=np.zeros((0, 3), dtype=np.int64)))
