"""
Shared fixtures: small meshes, fast configurations and a tiny generated dataset
"""
import shutil
from pathlib import Path

import numpy as np
import pytest

from src.models import PipelineConfig, Split, SynthProfile, TrainConfig, TriMesh
from src.services.dataset import load_samples
from src.services.mesh_ops import grid_mesh, icosphere
from src.services.precompute import precompute_dataset
from src.services.synth_generator import generate_dataset, sample_dirs

FAST_CONFIG = PipelineConfig(eig_k=24, hks_t=4, network=TrainConfig(width=8, blocks=1, epochs=2, learning_rate=1e-2))


def perturbed_sphere(subdivisions: int = 2, radius: float = 1.0, noise: float = 0.05, seed: int = 0) -> TriMesh:
    """Icosphere with radial noise, so no eigenvalue is degenerate"""
    sphere = icosphere(subdivisions, radius)
    rng = np.random.default_rng(seed)
    scale = 1.0 + noise * rng.uniform(-1.0, 1.0, (sphere.num_vertices, 1))
    return TriMesh(positions=sphere.positions * scale, faces=sphere.faces)


@pytest.fixture
def sphere() -> TriMesh:
    return icosphere(2)


@pytest.fixture
def bumpy_sphere() -> TriMesh:
    return perturbed_sphere(2)


@pytest.fixture
def random_meshes():
    return [perturbed_sphere(1 + i % 2, radius=1.0 + i, noise=0.1, seed=i) for i in range(20)]


@pytest.fixture
def grid() -> TriMesh:
    return grid_mesh(6, 5, spacing=1.5)


@pytest.fixture
def fast_network() -> TrainConfig:
    return FAST_CONFIG.network.model_copy()


@pytest.fixture
def fast_config() -> PipelineConfig:
    return FAST_CONFIG.model_copy(deep=True)


@pytest.fixture(scope="session")
def tiny_dataset_master(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("tiny_dataset")
    generate_dataset(out, count=4, seed=0, test_fraction=0.25, profile=SynthProfile.named("tiny"), threads=2)
    return out


@pytest.fixture
def tiny_dataset(tiny_dataset_master, tmp_path) -> Path:
    """Private copy, so tests may write caches into it"""
    target = tmp_path / "dataset"
    shutil.copytree(tiny_dataset_master, target)
    return target


@pytest.fixture(scope="session")
def precomputed_samples(tiny_dataset_master, tmp_path_factory):
    """Train-split inputs under FAST_CONFIG, cached in a copy of the tiny dataset"""
    target = tmp_path_factory.mktemp("precomputed") / "dataset"
    shutil.copytree(tiny_dataset_master, target)
    precompute_dataset(target, FAST_CONFIG, threads=2)
    return load_samples(sample_dirs(target, Split.TRAIN), FAST_CONFIG, threads=2)
