"""
Evaluation Metrics - mean IoU over the skin / non-skin classes and the d_surface proxy
"""
from typing import Optional, Tuple

import numpy as np

from src.exceptions import ArgumentError
from src.models import TriMesh
from src.network.diffusion_net import NUM_CLASSES
from src.services.surface_distance import TriangleBVH


def _as_labels(labels, name: str) -> np.ndarray:
    labels = np.asarray(labels).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= NUM_CLASSES):
        raise ArgumentError(f"{name} labels must be 0 (non-skin) or 1 (skin)")
    return labels.astype(np.int64)


def confusion_matrix(pred, gt) -> np.ndarray:
    """2x2 counts, rows = ground truth, columns = prediction"""
    pred = _as_labels(pred, "predicted")
    gt = _as_labels(gt, "ground-truth")
    if pred.shape != gt.shape:
        raise ArgumentError(f"label length mismatch: {pred.size} predicted vs {gt.size} ground truth")
    return np.bincount(gt * NUM_CLASSES + pred, minlength=NUM_CLASSES * NUM_CLASSES).reshape(NUM_CLASSES, NUM_CLASSES)


def class_iou(pred, gt) -> np.ndarray:
    """Per-class IoU; a class absent from both vectors scores 1"""
    cm = confusion_matrix(pred, gt).astype(np.float64)
    intersection = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - intersection
    return np.divide(intersection, union, out=np.ones(NUM_CLASSES), where=union > 0)


def miou(pred, gt) -> float:
    """
    Mean IoU over both classes

    Raises:
        ArgumentError: length mismatch or labels outside {0, 1}
    """
    return float(class_iou(pred, gt).mean())


def d_surface(points: np.ndarray, gt_surface: TriMesh, bvh: Optional[TriangleBVH] = None) -> Tuple[float, float]:
    """
    Mean and standard deviation (mm) of point-to-surface distances

    Raises:
        ArgumentError: empty point set or empty surface
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise ArgumentError("d_surface needs at least one point")
    bvh = bvh or TriangleBVH(gt_surface)
    distances, _, _ = bvh.query(points)
    return float(distances.mean()), float(distances.std())


def distance_stats(distances: np.ndarray) -> Tuple[float, float]:
    """Pooled mean / population std in float64; (0, 0) for an empty pool"""
    distances = np.asarray(distances, dtype=np.float64)
    if distances.size == 0:
        return 0.0, 0.0
    return float(distances.mean()), float(distances.std())
