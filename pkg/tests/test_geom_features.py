import numpy as np
import pytest

from src.exceptions import ArgumentError, DegenerateSpectrumError
from src.models import SpectralBasis, TriMesh
from src.services.geom_features import (
    HKS_TIME_FACTOR,
    KnnIndex,
    compute_geom_features,
    compute_hks,
    default_hks_times,
    normalize_hks,
    normalized_xyz,
    surface_variation,
)
from src.services.mesh_ops import grid_mesh, transform_mesh
from src.services.spectral import compute_basis


def random_rotation(seed: int) -> np.ndarray:
    q, r = np.linalg.qr(np.random.default_rng(seed).normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def test_hks_matches_summation_oracle(bumpy_sphere):
    basis = compute_basis(bumpy_sphere, 15)
    times = default_hks_times(basis, 5)
    hks = compute_hks(basis, times)
    oracle = np.zeros_like(hks)
    for v in range(basis.num_vertices):
        for j, t in enumerate(times):
            oracle[v, j] = sum(np.exp(-basis.eigenvalues[i] * t) * basis.eigenvectors[v, i] ** 2 for i in range(basis.k))
    assert np.allclose(hks, oracle, rtol=1e-10, atol=0)


def test_hks_is_invariant_under_rigid_motion(bumpy_sphere):
    moved = transform_mesh(bumpy_sphere, random_rotation(2), translation=(3.0, -1.0, 7.0))
    basis_a = compute_basis(bumpy_sphere, 15)
    basis_b = compute_basis(moved, 15)
    times = default_hks_times(basis_a, 4)
    assert np.allclose(compute_hks(basis_a, times), compute_hks(basis_b, times), rtol=1e-6)


def test_default_times_span(bumpy_sphere):
    basis = compute_basis(bumpy_sphere, 12)
    times = default_hks_times(basis, 6)
    assert len(times) == 6
    assert times[0] == pytest.approx(HKS_TIME_FACTOR / basis.eigenvalues[-1])
    assert times[-1] == pytest.approx(HKS_TIME_FACTOR / basis.eigenvalues[1])
    assert np.allclose(np.diff(np.log(times)), np.log(times[1] / times[0]))


def test_degenerate_spectrum():
    basis = SpectralBasis(eigenvalues=np.zeros(4), eigenvectors=np.eye(6, 4), mass=np.ones(6))
    with pytest.raises(DegenerateSpectrumError):
        default_hks_times(basis, 3)


def test_hks_rejects_bad_times(bumpy_sphere):
    basis = compute_basis(bumpy_sphere, 8)
    with pytest.raises(ArgumentError):
        compute_hks(basis, [0.0, 1.0])


def test_normalize_hks_standardizes_columns(bumpy_sphere):
    basis = compute_basis(bumpy_sphere, 12)
    normalized = normalize_hks(compute_hks(basis, default_hks_times(basis, 3)))
    assert np.allclose(normalized.mean(axis=0), 0.0, atol=1e-10)
    assert np.allclose(normalized.std(axis=0), 1.0)


def test_surface_variation_vanishes_on_planes():
    plane = grid_mesh(10, 10)
    assert surface_variation(plane, 30).max() < 1e-10


def test_surface_variation_is_one_third_for_isotropic_neighborhood():
    axis = np.arange(7, dtype=np.float64)
    lattice = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    center = int(np.flatnonzero(np.all(lattice == 3.0, axis=1))[0])
    sigma = surface_variation(lattice, 27)
    assert sigma[center] == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_surface_variation_bounds_and_similarity_invariance():
    cloud = np.random.default_rng(0).normal(size=(500, 3))
    sigma = surface_variation(cloud, 30)
    assert np.all((sigma >= 0) & (sigma <= 1.0 / 3.0))
    moved = 2.5 * cloud @ random_rotation(4).T + np.array([10.0, -4.0, 2.0])
    assert np.allclose(surface_variation(moved, 30), sigma, atol=1e-10)


def test_surface_variation_needs_more_points_than_k():
    with pytest.raises(ArgumentError):
        surface_variation(np.zeros((10, 3)), 30)


def test_knn_ties_resolve_to_lower_index():
    points = np.array([[0.0, 0, 0], [-1, 0, 0], [1, 0, 0], [-2, 0, 0], [2, 0, 0]])
    index = KnnIndex(points)
    idx, dist = index.query(np.zeros(3), 2)
    assert idx.tolist() == [0, 1]
    assert dist.tolist() == [0.0, 1.0]
    idx, _ = index.query(np.array([[0.0, 0, 0]]), 4)
    assert idx[0].tolist() == [0, 1, 2, 3]


def test_normalized_xyz_has_unit_rms():
    mesh = TriMesh(positions=np.random.default_rng(1).normal(5.0, 3.0, (50, 3)), faces=np.zeros((0, 3)))
    xyz = normalized_xyz(mesh)
    assert np.allclose(xyz.mean(axis=0), 0.0, atol=1e-12)
    assert np.sqrt(np.mean(np.sum(xyz ** 2, axis=1))) == pytest.approx(1.0)


def test_compute_geom_features_bundle(bumpy_sphere):
    basis = compute_basis(bumpy_sphere, 10)
    features = compute_geom_features(bumpy_sphere, basis, default_hks_times(basis, 3), k=20)
    assert features.hks.shape == (bumpy_sphere.num_vertices, 3)
    assert features.sigma30.shape == (bumpy_sphere.num_vertices,)
