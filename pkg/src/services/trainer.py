"""
Trainer - Adam over shuffled mesh batches with a class-weighted cross-entropy
"""
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from src.config import settings
from src.exceptions import ArgumentError, TrainingDivergedError
from src.models import ClassWeighting, EpochLog, TrainConfig
from src.network import (
    DiffusionNet,
    DiffusionOperators,
    backward,
    build_model,
    cross_entropy,
    flatten_parameters,
    forward,
    load_flat_parameters,
    make_optimizer,
    adam_step,
    predict_labels,
)
from src.network.diffusion_net import NUM_CLASSES, parameter_norms
from src.services.dataset import SampleInputs
from src.services.metrics import miou

logger = logging.getLogger(__name__)


def class_weights(labels_list: Sequence[np.ndarray], mode: ClassWeighting = ClassWeighting.INVERSE_FREQUENCY) -> Tuple[float, float]:
    """
    Per-class loss weights

    inverse_frequency: n / (2 n_c) over all training vertices; a class with no
    vertices keeps weight 1. uniform: (1, 1).
    """
    if ClassWeighting(mode) is ClassWeighting.UNIFORM or not labels_list:
        return (1.0, 1.0)
    counts = np.bincount(np.concatenate([np.asarray(l, dtype=np.int64) for l in labels_list]), minlength=NUM_CLASSES)
    total = counts.sum()
    weights = [total / (NUM_CLASSES * c) if c > 0 else 1.0 for c in counts[:NUM_CLASSES]]
    return (float(weights[0]), float(weights[1]))


@dataclass
class _Prepared:
    sample: SampleInputs
    ops: DiffusionOperators
    x: torch.Tensor
    y: torch.Tensor


@dataclass
class TrainResult:
    """Outcome of a training run; `parameters` is the checkpoint vector"""
    model: DiffusionNet
    parameters: np.ndarray
    history: List[EpochLog] = field(default_factory=list)
    best_epoch: int = 0


def _prepare(samples: Sequence[SampleInputs], dtype: torch.dtype) -> List[_Prepared]:
    return [
        _Prepared(
            sample=s,
            ops=s.operators(dtype),
            x=torch.from_numpy(np.ascontiguousarray(s.features)).to(dtype),
            y=torch.from_numpy(np.asarray(s.labels, dtype=np.int64)),
        )
        for s in samples
    ]


def predict_logits(model: DiffusionNet, sample: SampleInputs, dtype: Optional[torch.dtype] = None) -> np.ndarray:
    """(V, 2) logits for one sample"""
    dtype = dtype or next(model.parameters()).dtype
    x = torch.from_numpy(np.ascontiguousarray(sample.features)).to(dtype)
    with torch.no_grad():
        logits = model(x, sample.operators(dtype))
    return logits.cpu().numpy()


def _mean_miou(model: DiffusionNet, prepared: Sequence[_Prepared]) -> float:
    scores = []
    with torch.no_grad():
        for p in prepared:
            scores.append(miou(predict_labels(model(p.x, p.ops)), p.sample.labels))
    return float(np.mean(scores))


def train(
    train_samples: Sequence[SampleInputs],
    config: TrainConfig,
    val_samples: Sequence[SampleInputs] = (),
    log_path: Optional[str | Path] = None,
    double: bool = False,
) -> TrainResult:
    """
    Train a DiffusionNet from scratch

    Each epoch visits the training meshes in a seeded random order; gradients
    are averaged over `batch_size` meshes per Adam step. With validation
    samples the parameters of the best validation mIoU are returned (first
    best on ties), otherwise the final ones.

    Raises:
        ArgumentError: no training samples or inconsistent input widths
        TrainingDivergedError: the loss became non-finite
    """
    if not train_samples:
        raise ArgumentError("training needs at least one sample")
    widths = {s.in_channels for s in list(train_samples) + list(val_samples)}
    if len(widths) != 1:
        raise ArgumentError(f"samples disagree on input width: {sorted(widths)}")

    torch.set_num_threads(settings.torch_threads)
    torch.manual_seed(config.seed)
    dtype = torch.float64 if double else torch.float32
    model = build_model(widths.pop(), config, double=double)
    optimizer = make_optimizer(model, config)
    params = list(model.parameters())

    train_set = _prepare(train_samples, dtype)
    val_set = _prepare(val_samples, dtype)
    weights = class_weights([s.labels for s in train_samples], config.class_weights)
    rng = np.random.default_rng(config.seed)
    log_file = open(log_path, "w") if log_path else None

    result = TrainResult(model=model, parameters=flatten_parameters(model))
    best_val = -np.inf
    logger.info(
        f"Training on {len(train_set)} meshes ({len(val_set)} val), D_in={model.in_channels}, "
        f"C={config.width}, B={config.blocks}, epochs={config.epochs}, class weights={weights}"
    )
    try:
        for epoch in range(1, config.epochs + 1):
            started = time.perf_counter()
            order = rng.permutation(len(train_set))
            losses, scores = [], []
            for lo in range(0, len(order), config.batch_size):
                batch = [train_set[i] for i in order[lo:lo + config.batch_size]]
                total = [torch.zeros_like(p) for p in params]
                for item in batch:
                    logits, cache = forward(model, item.ops, item.x)
                    loss, d_logits = cross_entropy(logits, item.y, weights)
                    if not torch.isfinite(loss):
                        raise TrainingDivergedError(
                            f"non-finite loss at epoch {epoch} on {item.sample.name}",
                            parameter_norms(model),
                            config.learning_rate,
                        )
                    for acc, g in zip(total, backward(cache, d_logits)):
                        acc += g
                    losses.append(float(loss))
                    scores.append(miou(predict_labels(logits), item.sample.labels))
                adam_step(params, [g / len(batch) for g in total], optimizer)

            entry = EpochLog(
                epoch=epoch,
                train_loss=float(np.mean(losses)),
                train_miou=float(np.mean(scores)),
                val_miou=_mean_miou(model, val_set) if val_set else None,
                seconds=time.perf_counter() - started,
            )
            result.history.append(entry)
            if log_file:
                log_file.write(entry.model_dump_json() + "\n")
                log_file.flush()

            if entry.val_miou is not None and entry.val_miou > best_val:
                best_val = entry.val_miou
                result.best_epoch = epoch
                result.parameters = flatten_parameters(model)
            logger.info(
                f"epoch {epoch}/{config.epochs} loss={entry.train_loss:.4f} "
                f"train mIoU={entry.train_miou:.4f}"
                + (f" val mIoU={entry.val_miou:.4f}" if entry.val_miou is not None else "")
            )
    finally:
        if log_file:
            log_file.close()

    if val_set:
        load_flat_parameters(model, result.parameters)
    else:
        result.best_epoch = config.epochs
        result.parameters = flatten_parameters(model)
    return result
