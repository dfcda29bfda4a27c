"""
Segmentation Pipeline - training, inference, evaluation and the ablation grid
"""
import json
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from src.exceptions import ArgumentError, ConfigError, MissingInputError
from src.models import (
    EvalReport,
    FeatureSource,
    FusionMode,
    GeomFeature,
    PipelineConfig,
    SampleReport,
    Split,
    TrainConfig,
)
from src.network import DiffusionNet, load_flat_parameters, predict_labels
from src.parsers import load_mesh
from src.services.dataset import SampleInputs, load_sample_inputs, load_samples
from src.services.lifting import resolve_threads
from src.services.metrics import distance_stats, miou
from src.services.precompute import precompute_samples
from src.services.surface_distance import TriangleBVH
from src.services.synth_generator import sample_dirs
from src.services.trainer import TrainResult, predict_logits, train
from src.storage import CheckpointDAO, CheckpointHeader

logger = logging.getLogger(__name__)

Checkpoint = Tuple[CheckpointHeader, np.ndarray]

TSV_HEADER = "config_id\tsplit\tmIoU\td_mean_mm\td_std_mm\tseed"
VALIDATION_FRACTION = 0.2
MIN_TRAIN_FOR_VALIDATION = 5


# ============================================================================
# Configuration files
# ============================================================================

def _read_json(path: str | Path, what: str):
    path = Path(path)
    if not path.exists():
        raise MissingInputError(path, what)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno}: {e.msg}") from e


def _validate_config(document, origin: str) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(document)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise ConfigError(f"{origin}: {location}: {first['msg']}") from e


def load_pipeline_config(path: Optional[str | Path] = None) -> PipelineConfig:
    """Read a PipelineConfig JSON file; None yields the defaults"""
    if path is None:
        return PipelineConfig()
    return _validate_config(_read_json(path, "config file"), str(path))


def load_grid(path: str | Path) -> List[PipelineConfig]:
    """Ablation grid file: a JSON list of PipelineConfig documents"""
    document = _read_json(path, "grid file")
    if not isinstance(document, list) or not document:
        raise ConfigError(f"{path}: grid must be a non-empty JSON list of configurations")
    return [_validate_config(entry, f"{path}[{i}]") for i, entry in enumerate(document)]


def apply_overrides(config: PipelineConfig, **overrides) -> PipelineConfig:
    """
    Replace top-level or network fields; None values are ignored

    Network fields (seed, epochs, learning_rate, ...) are recognized by name.
    """
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if not overrides:
        return config
    network_keys = set(TrainConfig.model_fields)
    network = {k: overrides.pop(k) for k in list(overrides) if k in network_keys and k not in PipelineConfig.model_fields}
    document = config.model_dump()
    document.update(overrides)
    document["network"].update(network)
    return _validate_config(document, "command-line overrides")


def with_seed(config: PipelineConfig, seed: int) -> PipelineConfig:
    return config.model_copy(update={"network": config.network.model_copy(update={"seed": seed})})


# ============================================================================
# Training
# ============================================================================

def split_validation(samples: Sequence[SampleInputs]) -> Tuple[List[SampleInputs], List[SampleInputs]]:
    """Hold out the last 20% of training meshes when there are at least 5"""
    samples = list(samples)
    if len(samples) < MIN_TRAIN_FOR_VALIDATION:
        return samples, []
    n_val = max(1, int(round(VALIDATION_FRACTION * len(samples))))
    return samples[:-n_val], samples[-n_val:]


def fit(
    dataset_dir: str | Path,
    config: PipelineConfig,
    threads: Optional[int] = None,
    log_path: Optional[str | Path] = None,
) -> Tuple[TrainResult, CheckpointHeader]:
    """Precompute and load the train split, then train"""
    train_dirs = sample_dirs(dataset_dir, Split.TRAIN)
    if not train_dirs:
        raise ArgumentError(f"{dataset_dir}: train split is empty")
    precompute_samples(train_dirs, config, threads)
    train_set, val_set = split_validation(load_samples(train_dirs, config, threads))
    result = train(train_set, config.network, val_set, log_path=log_path)
    head = CheckpointHeader(
        blocks=config.network.blocks,
        width=config.network.width,
        in_channels=result.model.in_channels,
        eig_k=config.eig_k,
    )
    return result, head


def train_pipeline(
    dataset_dir: str | Path,
    config: PipelineConfig,
    out: str | Path,
    threads: Optional[int] = None,
    force: bool = False,
) -> TrainResult:
    """
    Train on the dataset's train split and write a DNET checkpoint

    The per-epoch log goes to <out>.log.jsonl.

    Raises:
        ArgumentError: checkpoint exists and force is not set
    """
    out = Path(out)
    if out.exists() and not force:
        raise ArgumentError(f"{out} already exists; pass --force to overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)
    result, head = fit(dataset_dir, config, threads, log_path=out.with_name(out.name + ".log.jsonl"))
    CheckpointDAO.write(head, result.parameters, out)
    return result


# ============================================================================
# Inference / evaluation
# ============================================================================

def load_checkpoint(path: str | Path) -> Checkpoint:
    return CheckpointDAO.read(path)


def model_from_checkpoint(checkpoint: Checkpoint) -> DiffusionNet:
    head, params = checkpoint
    model = DiffusionNet(head.in_channels, head.width, head.blocks)
    return load_flat_parameters(model, params)


def _check_compatible(head: CheckpointHeader, sample: SampleInputs, config: PipelineConfig) -> None:
    if head.in_channels != sample.in_channels:
        raise ConfigError(
            f"checkpoint expects D_in={head.in_channels} input channels but configuration "
            f"{config.config_id} produces {sample.in_channels}"
        )
    if head.eig_k != config.eig_k:
        raise ConfigError(f"checkpoint was trained with eigK={head.eig_k}, configuration uses eigK={config.eig_k}")


def infer(
    checkpoint: Checkpoint,
    sample_dir: str | Path,
    config: PipelineConfig,
    model: Optional[DiffusionNet] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-vertex labels and (V, 2) logits for one precomputed sample

    Raises:
        MissingInputError: caches absent
        ConfigError: checkpoint and configuration disagree on D_in or eigK
    """
    sample = load_sample_inputs(sample_dir, config)
    _check_compatible(checkpoint[0], sample, config)
    model = model or model_from_checkpoint(checkpoint)
    logits = predict_logits(model, sample)
    return predict_labels(logits), logits


def _evaluate_sample(
    checkpoint: Checkpoint,
    sample_dir: Path,
    config: PipelineConfig,
) -> Tuple[SampleReport, np.ndarray]:
    sample = load_sample_inputs(sample_dir, config)
    _check_compatible(checkpoint[0], sample, config)
    pred = predict_labels(predict_logits(model_from_checkpoint(checkpoint), sample))
    skin = sample.mesh.positions[pred == 1]
    distances = np.zeros(0)
    if len(skin):
        distances, _, _ = TriangleBVH(load_mesh(sample_dir / "reference.ply")).query(skin)
    d_mean, d_std = distance_stats(distances)
    report = SampleReport(
        sample=sample.name,
        miou=miou(pred, sample.labels),
        d_mean_mm=d_mean,
        d_std_mm=d_std,
        predicted_skin=int(pred.sum()),
        vertices=sample.mesh.num_vertices,
    )
    return report, distances


def evaluate(
    checkpoint: Checkpoint,
    samples: Sequence[Path],
    config: PipelineConfig,
    split: Split = Split.TEST,
    threads: Optional[int] = None,
) -> EvalReport:
    """
    Dataset mIoU (mean over samples) and d_surface pooled over every predicted-skin vertex

    Samples are evaluated in parallel; the report lists them in input order.
    """
    samples = list(samples)
    if not samples:
        raise ArgumentError(f"no samples to evaluate in the {Split(split).value} split")
    outcomes: List[Optional[Tuple[SampleReport, np.ndarray]]] = [None] * len(samples)
    with ThreadPoolExecutor(max_workers=min(resolve_threads(threads), len(samples))) as executor:
        futures = {executor.submit(_evaluate_sample, checkpoint, path, config): i for i, path in enumerate(samples)}
        for future in as_completed(futures):
            outcomes[futures[future]] = future.result()

    reports = [o[0] for o in outcomes]
    d_mean, d_std = distance_stats(np.concatenate([o[1] for o in outcomes]))
    result = EvalReport(
        config_id=config.config_id,
        split=split,
        seed=config.network.seed,
        miou=float(np.mean([r.miou for r in reports], dtype=np.float64)),
        d_mean_mm=d_mean,
        d_std_mm=d_std,
        samples=reports,
    )
    logger.info(f"{result.config_id} [{result.split.value}] mIoU={result.miou:.4f} d_surface={d_mean:.3f}+-{d_std:.3f} mm")
    return result


def evaluate_dataset(
    checkpoint: Checkpoint,
    dataset_dir: str | Path,
    config: PipelineConfig,
    split: Split = Split.TEST,
    threads: Optional[int] = None,
) -> EvalReport:
    """Precompute the split's caches if needed, then evaluate"""
    samples = sample_dirs(dataset_dir, split)
    precompute_samples(samples, config, threads)
    return evaluate(checkpoint, samples, config, split, threads)


def write_report_tsv(reports: Sequence[EvalReport], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join([TSV_HEADER] + [r.tsv_row() for r in reports]) + "\n")


# ============================================================================
# Ablation
# ============================================================================

def default_ablation_grid(
    network: Optional[TrainConfig] = None,
    feature_source: FeatureSource = FeatureSource.HANDCRAFTED,
) -> List[PipelineConfig]:
    """
    3D-only rows, projection rows and geometric-feature rows

    3D-only: xyz, hks, hks+color, hks+sigma30, hks+color+sigma30 (no images).
    Projection: mean, mean+var, visMean, visMean+var (image features only).
    Geometric: visMean+var plus hks, sigma30, sigma30+hks.
    """
    network = network or TrainConfig.test_profile()
    G = GeomFeature
    rows = [(FusionMode.NONE, geom) for geom in ([G.XYZ], [G.HKS], [G.HKS, G.COLOR], [G.HKS, G.SIGMA30], [G.HKS, G.COLOR, G.SIGMA30])]
    rows += [(fusion, []) for fusion in (FusionMode.MEAN, FusionMode.MEAN_VAR, FusionMode.VIS_MEAN, FusionMode.VIS_MEAN_VAR)]
    rows += [(FusionMode.VIS_MEAN_VAR, geom) for geom in ([G.HKS], [G.SIGMA30], [G.SIGMA30, G.HKS])]

    grid: Dict[str, PipelineConfig] = {}
    for fusion, geom in rows:
        config = PipelineConfig(feature_source=feature_source, fusion=fusion, geom_features=geom, network=network)
        grid.setdefault(config.config_id, config)
    return list(grid.values())


@dataclass
class AblationResult:
    reports: List[EvalReport] = field(default_factory=list)
    failures: Dict[str, str] = field(default_factory=dict)  # "<config_id>@<seed>" -> error


def run_ablation(
    dataset_dir: str | Path,
    grid: Sequence[PipelineConfig],
    seeds: Sequence[int] = (0,),
    threads: Optional[int] = None,
) -> AblationResult:
    """
    Train and evaluate every configuration for every seed, in grid order

    A failing configuration is logged and recorded; the remaining ones still run.
    """
    result = AblationResult()
    test_dirs = sample_dirs(dataset_dir, Split.TEST)
    for base in grid:
        for seed in seeds:
            tag = f"{base.config_id}@{seed}"
            logger.info(f"Ablation row {tag}")
            try:
                config = with_seed(base, seed)
                trained, head = fit(dataset_dir, config, threads)
                precompute_samples(test_dirs, config, threads)
                result.reports.append(evaluate((head, trained.parameters), test_dirs, config, Split.TEST, threads))
            except Exception as e:
                logger.error(f"Ablation row {tag} failed: {type(e).__name__}: {e}")
                result.failures[tag] = f"{type(e).__name__}: {e}"
    return result
