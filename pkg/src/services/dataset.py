"""
Dataset Assembly - per-sample network inputs built from the precomputed caches

Input channel order (only the blocks a configuration selects are present):

    fused mean (C) | fused variance (C) | visibility sum / N | coverage / N |
    3 * sigma30 | standardized log HKS (T) | color (3) | normalized xyz (3)
"""
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch

from src.exceptions import FormatError, MissingInputError
from src.models import FusionMode, GeomFeature, PipelineConfig, SpectralBasis, TangentFrames, TriMesh
from src.network import DiffusionOperators, build_tangent_frames
from src.parsers import load_cameras, load_mesh
from src.services.geom_features import normalize_hks, normalized_xyz
from src.services.lifting import resolve_threads
from src.services.precompute import SampleArtifacts, artifact_paths
from src.storage import BasisDAO, FeatureMapDAO, LabelDAO

logger = logging.getLogger(__name__)

SIGMA_SCALE = 3.0  # maps sigma30 in [0, 1/3] onto [0, 1]
DEFAULT_COLOR = 0.5


@dataclass(frozen=True)
class SampleInputs:
    """Everything training and inference need for one mesh"""
    name: str
    mesh: TriMesh
    features: np.ndarray  # (V, D_in)
    labels: np.ndarray    # (V,) uint8
    basis: SpectralBasis
    frames: TangentFrames

    @property
    def in_channels(self) -> int:
        return self.features.shape[1]

    def operators(self, dtype: torch.dtype = torch.float32) -> DiffusionOperators:
        return DiffusionOperators.build(self.basis, self.frames, dtype)


def input_channels(config: PipelineConfig, view_channels: int) -> int:
    """D_in for a configuration, given C feature channels per view"""
    fusion = FusionMode(config.fusion)
    total = 0
    if fusion.uses_images:
        total += view_channels * (2 if fusion.with_variance else 1) + 2
    selected = set(config.geom_features)
    total += (GeomFeature.SIGMA30 in selected) + (config.hks_t if GeomFeature.HKS in selected else 0)
    total += 3 * (GeomFeature.COLOR in selected) + 3 * (GeomFeature.XYZ in selected)
    return total


def assemble_inputs(
    mesh: TriMesh,
    geom_table: np.ndarray,
    config: PipelineConfig,
    fused_table: Optional[np.ndarray] = None,
    num_views: int = 1,
) -> np.ndarray:
    """
    Concatenate the selected blocks in the fixed channel order

    Args:
        mesh: Scan mesh (colors and positions)
        geom_table: (V, T + 1) raw HKS columns followed by sigma30
        config: Pipeline configuration
        fused_table: (V, 2C + 2) mean | variance | visibility sum | coverage
        num_views: N, the divisor of the visibility and coverage columns
    """
    fusion = FusionMode(config.fusion)
    selected = set(config.geom_features)
    blocks: List[np.ndarray] = []

    if fusion.uses_images:
        if fused_table is None:
            raise FormatError("fused features required by the configuration are missing")
        C = (fused_table.shape[1] - 2) // 2
        blocks.append(fused_table[:, :C])
        if fusion.with_variance:
            blocks.append(fused_table[:, C:2 * C])
        blocks.append(fused_table[:, 2 * C:2 * C + 2] / num_views)

    if GeomFeature.SIGMA30 in selected:
        blocks.append(SIGMA_SCALE * geom_table[:, -1:])
    if GeomFeature.HKS in selected:
        blocks.append(normalize_hks(geom_table[:, :-1].astype(np.float64)))
    if GeomFeature.COLOR in selected:
        colors = mesh.colors if mesh.colors is not None else np.full((mesh.num_vertices, 3), DEFAULT_COLOR)
        blocks.append(colors)
    if GeomFeature.XYZ in selected:
        blocks.append(normalized_xyz(mesh))

    return np.concatenate([np.asarray(b, dtype=np.float64) for b in blocks], axis=1)


def _require(path: Optional[Path], what: str) -> Path:
    if path is None or not path.exists():
        raise MissingInputError(path, f"{what} (run `scan-seg precompute` first)")
    return path


def load_sample_inputs(sample_dir: str | Path, config: PipelineConfig, artifacts: Optional[SampleArtifacts] = None) -> SampleInputs:
    """
    Read the caches of one sample and assemble its network inputs

    Raises:
        MissingInputError: a cache is absent (the message suggests precompute)
        FormatError: caches disagree with the scan
    """
    sample_dir = Path(sample_dir)
    artifacts = artifacts or artifact_paths(sample_dir, config)
    mesh = load_mesh(sample_dir / "scan.ply")
    V = mesh.num_vertices

    basis = BasisDAO.read(_require(artifacts.basis, "spectral basis cache"))
    geom = FeatureMapDAO.read_vertex_features(_require(artifacts.geom, "geometric feature cache"))
    labels = LabelDAO.read(_require(artifacts.labels, "label file"))
    fused = None
    if artifacts.fused is not None:
        fused = FeatureMapDAO.read_vertex_features(_require(artifacts.fused, "fused feature cache"))

    for name, rows in (("basis", basis.num_vertices), ("geometric features", geom.shape[0]), ("labels", labels.shape[0])):
        if rows != V:
            raise FormatError(f"{name} cover {rows} vertices, scan has {V}", sample_dir)
    if fused is not None and fused.shape[0] != V:
        raise FormatError(f"fused features cover {fused.shape[0]} vertices, scan has {V}", artifacts.fused)

    num_views = len(load_cameras(sample_dir / "cameras.json"))
    features = assemble_inputs(mesh, geom, config, fused, num_views)
    return SampleInputs(
        name=sample_dir.name,
        mesh=mesh,
        features=features,
        labels=labels,
        basis=basis,
        frames=build_tangent_frames(mesh),
    )


def load_samples(
    samples: Sequence[Path],
    config: PipelineConfig,
    threads: Optional[int] = None,
) -> List[SampleInputs]:
    """Load several samples in parallel, keeping the input order"""
    samples = list(samples)
    if not samples:
        return []
    loaded: List[Optional[SampleInputs]] = [None] * len(samples)
    with ThreadPoolExecutor(max_workers=min(resolve_threads(threads), len(samples))) as executor:
        futures = {executor.submit(load_sample_inputs, path, config): i for i, path in enumerate(samples)}
        for future in as_completed(futures):
            loaded[futures[future]] = future.result()
    logger.debug(f"Loaded {len(loaded)} samples with D_in={loaded[0].in_channels}")
    return loaded
