"""
Services package initialization

Only the geometry-level services are re-exported here; dataset, trainer and
pipeline depend on src.network, which itself imports mesh_ops.
"""
from src.services.mesh_ops import validate_mesh, cotan_laplacian, lumped_mass
from src.services.spectral import eigensolve, compute_basis
from src.services.geom_features import compute_hks, surface_variation, compute_geom_features
from src.services.lifting import lift_features, fuse_views
from src.services.surface_distance import TriangleBVH, point_to_surface

__all__ = [
    "validate_mesh",
    "cotan_laplacian",
    "lumped_mass",
    "eigensolve",
    "compute_basis",
    "compute_hks",
    "surface_variation",
    "compute_geom_features",
    "lift_features",
    "fuse_views",
    "TriangleBVH",
    "point_to_surface",
]
