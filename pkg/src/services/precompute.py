"""
Precompute - content-keyed per-sample caches

Every artifact lives in <sample>/cache and carries a key derived from the
content it depends on, so an existing file is always current and reruns
write nothing:

    basis_<mesh>_k<k>.basis                      spectral basis
    geom_<mesh>_k<k>_t<T>_n<n>.fmap              raw HKS (T columns) | sigma
    view_XX_<image>.fmap                         handcrafted per-view features
    fused_<weighting>_<center>_<inputs>.fmap     mean | variance | visibility sum | coverage
    labels_<scan+reference+tau>.bin              labels for a non-default threshold
"""
import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from src.config import settings
from src.exceptions import MissingInputError
from src.models import Camera, CameraSet, FeatureMap, FeatureSource, FusionMode, PipelineConfig, TriMesh
from src.parsers import load_cameras, load_mesh, read_image
from src.services import spectral
from src.services.feature_extractor import handcrafted_features
from src.services.geom_features import compute_hks, default_hks_times, surface_variation
from src.services.lifting import Weighting, lift_features, resolve_threads
from src.services.mesh_ops import cotan_laplacian, lumped_mass, mesh_content_hash
from src.services.synth_generator import label_by_distance, sample_dirs, view_file
from src.storage import BasisDAO, FeatureMapDAO, LabelDAO

logger = logging.getLogger(__name__)

KEY_LENGTH = 16
BASIS_SEED = 0


@dataclass(frozen=True)
class SampleArtifacts:
    """Where the cached inputs of one sample live"""
    sample_dir: Path
    basis: Path
    geom: Path
    labels: Path
    fused: Optional[Path] = None


@dataclass
class _Plan:
    artifacts: SampleArtifacts
    mesh: TriMesh
    cameras: List[Camera]
    view_paths: List[Path] = field(default_factory=list)
    images: list = field(default_factory=list)


def cache_dir(sample_dir: str | Path) -> Path:
    return Path(sample_dir) / settings.cache_dir_name


def _digest(*chunks: bytes | str) -> str:
    sha256 = hashlib.sha256()
    for chunk in chunks:
        sha256.update(chunk.encode("utf-8") if isinstance(chunk, str) else chunk)
        sha256.update(b"\x00")
    return sha256.hexdigest()[:KEY_LENGTH]


def fusion_weighting(fusion: FusionMode) -> Optional[Weighting]:
    """Visibility weights for the visibility-aware rows, in-view indicators for the plain ones"""
    fusion = FusionMode(fusion)
    if not fusion.uses_images:
        return None
    return Weighting.VISIBILITY if fusion.visibility_weighted else Weighting.UNIFORM


def external_fmap_path(sample_dir: str | Path, index: int) -> Path:
    return Path(sample_dir) / view_file(index, "fmap")


def _plan(sample_dir: Path, config: PipelineConfig) -> _Plan:
    """Load the sample inputs and derive every cache path from their content"""
    mesh = load_mesh(sample_dir / "scan.ply")
    cameras = load_cameras(sample_dir / "cameras.json")
    mesh_key = mesh_content_hash(mesh)[:KEY_LENGTH]
    cache = cache_dir(sample_dir)

    basis = cache / f"basis_{mesh_key}_k{config.eig_k}.basis"
    geom = cache / f"geom_{mesh_key}_k{config.eig_k}_t{config.hks_t}_n{settings.sigma_neighbors}.fmap"

    labels = sample_dir / "labels.bin"
    if config.label_threshold != settings.label_threshold_mm:
        reference_bytes = (sample_dir / "reference.ply").read_bytes() if (sample_dir / "reference.ply").exists() else b""
        labels = cache / f"labels_{_digest(mesh_key, reference_bytes, repr(config.label_threshold))}.bin"

    plan = _Plan(
        artifacts=SampleArtifacts(sample_dir=sample_dir, basis=basis, geom=geom, labels=labels),
        mesh=mesh,
        cameras=cameras,
    )
    weighting = fusion_weighting(config.fusion)
    if weighting is None:
        return plan

    view_keys = []
    for i in range(len(cameras)):
        if FeatureSource(config.feature_source) is FeatureSource.FMAP_FILES:
            path = external_fmap_path(sample_dir, i)
            if not path.exists():
                raise MissingInputError(path, f"feature map for view {i}")
            key = _digest(path.read_bytes())
        else:
            image = read_image(sample_dir / view_file(i))
            key = _digest(np.asarray(image.pixels.shape, dtype=np.int64).tobytes(), image.pixels.tobytes())
            path = cache / f"view_{i:02d}_{key}.fmap"
            plan.images.append(image)
        plan.view_paths.append(path)
        view_keys.append(key)

    inputs_key = _digest(
        mesh_key,
        CameraSet(cameras=cameras).model_dump_json(),
        config.feature_source.value,
        *view_keys,
        repr(settings.depth_epsilon_mm),
    )
    fused = cache / f"fused_{weighting.value}_{config.variance_center.value}_{inputs_key}.fmap"
    plan.artifacts = SampleArtifacts(sample_dir=sample_dir, basis=basis, geom=geom, labels=labels, fused=fused)
    return plan


def artifact_paths(sample_dir: str | Path, config: PipelineConfig) -> SampleArtifacts:
    """Cache locations for a sample under a configuration; nothing is computed or written"""
    return _plan(Path(sample_dir), config).artifacts


def _ensure_geometry(plan: _Plan, config: PipelineConfig, written: List[Path]) -> None:
    artifacts = plan.artifacts
    basis = None
    if not artifacts.basis.exists():
        logger.debug(f"{artifacts.sample_dir.name}: eigensolve k={config.eig_k} on {plan.mesh.num_vertices} vertices")
        basis = spectral.eigensolve(cotan_laplacian(plan.mesh), lumped_mass(plan.mesh), config.eig_k, seed=BASIS_SEED)
        BasisDAO.write(basis, artifacts.basis)
        written.append(artifacts.basis)

    if not artifacts.geom.exists():
        basis = basis or BasisDAO.read(artifacts.basis)
        hks = compute_hks(basis, default_hks_times(basis, config.hks_t))
        sigma = surface_variation(plan.mesh, settings.sigma_neighbors)
        FeatureMapDAO.write_vertex_features(np.column_stack([hks, sigma]), artifacts.geom)
        written.append(artifacts.geom)


def _ensure_fused(plan: _Plan, config: PipelineConfig, threads: Optional[int], written: List[Path]) -> None:
    fused_path = plan.artifacts.fused
    if fused_path is None or fused_path.exists():
        return

    fmaps: List[FeatureMap] = []
    for i, path in enumerate(plan.view_paths):
        if path.exists():
            fmaps.append(FeatureMapDAO.read(path))
            continue
        fmap = handcrafted_features(plan.images[i])
        FeatureMapDAO.write(fmap, path)
        written.append(path)
        fmaps.append(fmap)

    fused = lift_features(
        plan.mesh,
        plan.cameras,
        fmaps,
        weighting=fusion_weighting(config.fusion),
        center=config.variance_center,
        threads=threads,
    )
    stacked = np.column_stack([fused.mean, fused.variance, fused.visibility_sum, fused.coverage])
    FeatureMapDAO.write_vertex_features(stacked, fused_path)
    written.append(fused_path)


def _ensure_labels(plan: _Plan, config: PipelineConfig, written: List[Path]) -> None:
    path = plan.artifacts.labels
    if path.exists():
        return
    if path.parent == plan.artifacts.sample_dir:
        raise MissingInputError(path, "label file")
    reference = load_mesh(plan.artifacts.sample_dir / "reference.ply")
    labels, _ = label_by_distance(plan.mesh, reference, config.label_threshold)
    LabelDAO.write(labels, path)
    written.append(path)


def precompute(sample_dir: str | Path, config: PipelineConfig, threads: Optional[int] = None) -> SampleArtifacts:
    """
    Build every cache the configuration needs for one sample

    Idempotent: existing cache files are current by construction and are not
    rewritten. If any step fails, files written by this call are removed
    before the error propagates.

    Raises:
        MissingInputError: a sample input is absent (the message names it)
        FormatError / MeshValidationError: a sample input does not parse or validate
        ConvergenceError: eigensolver failure
    """
    sample_dir = Path(sample_dir)
    if not sample_dir.is_dir():
        raise MissingInputError(sample_dir, "sample directory")
    plan = _plan(sample_dir, config)
    cache_dir(sample_dir).mkdir(exist_ok=True)

    written: List[Path] = []
    try:
        _ensure_geometry(plan, config, written)
        _ensure_fused(plan, config, threads, written)
        _ensure_labels(plan, config, written)
    except Exception as e:
        for path in written:
            path.unlink(missing_ok=True)
        logger.error(f"{sample_dir.name}: precompute failed, removed {len(written)} new cache files: {e}")
        raise

    if written:
        logger.info(f"{sample_dir.name}: wrote {len(written)} cache files")
    else:
        logger.debug(f"{sample_dir.name}: caches up to date")
    return plan.artifacts


def precompute_samples(
    samples: Sequence[Path],
    config: PipelineConfig,
    threads: Optional[int] = None,
) -> List[SampleArtifacts]:
    """Precompute several samples in parallel; results keep the input order"""
    samples = list(samples)
    if not samples:
        return []
    workers = min(resolve_threads(threads), len(samples))
    # views run serially inside each sample while samples run concurrently
    view_threads = 1 if workers > 1 else threads
    results: List[Optional[SampleArtifacts]] = [None] * len(samples)
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(precompute, path, config, view_threads): i for i, path in enumerate(samples)}
        for future in as_completed(futures):
            results[futures[future]] = future.result()
    return results


def precompute_dataset(dataset_dir: str | Path, config: PipelineConfig, threads: Optional[int] = None) -> List[SampleArtifacts]:
    samples = sample_dirs(dataset_dir)
    logger.info(f"Precomputing {len(samples)} samples for {config.config_id}")
    return precompute_samples(samples, config, threads)
