import numpy as np
import pytest
import scipy.linalg

from src.exceptions import MeshValidationError
from src.models import TriMesh
from src.services.mesh_ops import (
    connected_components,
    cotan_laplacian,
    face_areas,
    icosphere,
    isolated_vertices,
    lumped_mass,
    mesh_content_hash,
    permute_vertices,
    subdivide_midpoint,
    unique_edges,
    validate_mesh,
    vertex_normals,
)


def test_validate_rejects_out_of_range_index():
    mesh = TriMesh(positions=np.eye(3), faces=[[0, 1, 2], [0, 1, 5]])
    with pytest.raises(MeshValidationError) as err:
        validate_mesh(mesh)
    assert err.value.faces == [1]


def test_validate_rejects_repeated_index():
    mesh = TriMesh(positions=np.eye(3), faces=[[0, 0, 2]])
    with pytest.raises(MeshValidationError) as err:
        validate_mesh(mesh)
    assert err.value.faces == [0]


def test_validate_rejects_zero_area_face():
    positions = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]])
    mesh = TriMesh(positions=positions, faces=[[0, 1, 3], [0, 1, 2]])
    with pytest.raises(MeshValidationError) as err:
        validate_mesh(mesh)
    assert err.value.faces == [1]


def test_validate_rejects_non_finite_positions():
    positions = np.array([[0.0, 0, 0], [1, 0, 0], [np.nan, 1, 0]])
    with pytest.raises(MeshValidationError):
        validate_mesh(TriMesh(positions=positions, faces=[[0, 1, 2]]))


def test_laplacian_symmetric_psd_with_constant_null_space(random_meshes):
    for mesh in random_meshes:
        L = cotan_laplacian(mesh)
        assert abs(L - L.T).max() < 1e-12
        assert np.abs(L @ np.ones(mesh.num_vertices)).max() < 1e-10
        eigenvalues = scipy.linalg.eigvalsh(L.toarray())
        assert eigenvalues.min() > -1e-10 * max(1.0, eigenvalues.max())


def test_laplacian_annihilates_linear_functions_on_flat_interior(grid):
    L = cotan_laplacian(grid)
    x, y = grid.positions[:, 0], grid.positions[:, 1]
    f = 2.0 * x - 3.0 * y + 1.0
    interior = (x > x.min()) & (x < x.max()) & (y > y.min()) & (y < y.max())
    assert np.abs((L @ f)[interior]).max() < 1e-10


def test_lumped_mass_sums_to_area(bumpy_sphere):
    M = lumped_mass(bumpy_sphere)
    assert M.diagonal().sum() == pytest.approx(face_areas(bumpy_sphere).sum(), rel=1e-12)
    assert np.all(M.diagonal() > 0)


def test_lumped_mass_rejects_unreferenced_vertex(sphere):
    positions = np.vstack([sphere.positions, [[5.0, 5.0, 5.0]]])
    with pytest.raises(MeshValidationError):
        lumped_mass(TriMesh(positions=positions, faces=sphere.faces))


def test_icosphere_topology():
    mesh = icosphere(2)
    E = len(unique_edges(mesh))
    assert mesh.num_vertices - E + mesh.num_faces == 2
    assert np.allclose(np.linalg.norm(mesh.positions, axis=1), 1.0)


def test_subdivision_counts_and_keeps_original_vertices(sphere):
    finer = subdivide_midpoint(sphere)
    assert finer.num_vertices == sphere.num_vertices + len(unique_edges(sphere))
    assert finer.num_faces == 4 * sphere.num_faces
    assert np.array_equal(finer.positions[: sphere.num_vertices], sphere.positions)


def test_connected_components_of_two_spheres(sphere):
    shifted = sphere.positions + [5.0, 0.0, 0.0]
    both = TriMesh(
        positions=np.vstack([sphere.positions, shifted]),
        faces=np.vstack([sphere.faces, sphere.faces + sphere.num_vertices]),
    )
    count, labels = connected_components(both)
    assert count == 2
    assert len(set(labels[: sphere.num_vertices])) == 1


def test_laplacian_is_permutation_equivariant(bumpy_sphere):
    order = np.random.default_rng(1).permutation(bumpy_sphere.num_vertices)
    L = cotan_laplacian(bumpy_sphere).toarray()
    L_perm = cotan_laplacian(permute_vertices(bumpy_sphere, order)).toarray()
    assert np.allclose(L_perm, L[np.ix_(order, order)], atol=1e-12)


def test_vertex_normals_point_outward_on_sphere(sphere):
    normals = vertex_normals(sphere)
    assert np.all(np.einsum("ij,ij->i", normals, sphere.positions) > 0.95)


def test_isolated_vertex_gets_zero_normal():
    mesh = TriMesh(positions=[[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5]], faces=[[0, 1, 2]])
    assert isolated_vertices(mesh).tolist() == [False, False, False, True]
    normals = vertex_normals(mesh)
    assert np.allclose(normals[3], 0.0)
    assert np.allclose(np.abs(normals[:3, 2]), 1.0)


def test_content_hash_tracks_geometry_not_colors(sphere):
    colored = TriMesh(positions=sphere.positions, faces=sphere.faces, colors=np.full((sphere.num_vertices, 3), 0.2))
    moved = TriMesh(positions=sphere.positions * 1.001, faces=sphere.faces)
    assert mesh_content_hash(sphere) == mesh_content_hash(colored)
    assert mesh_content_hash(sphere) != mesh_content_hash(moved)
