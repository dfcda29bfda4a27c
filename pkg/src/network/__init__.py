"""
Network package initialization
"""
from src.network.tangent_frames import build_tangent_frames, rotate_frames
from src.network.diffusion_net import (
    DiffusionNet,
    DiffusionOperators,
    ForwardCache,
    build_model,
    parameter_layout,
    parameter_count,
    flatten_parameters,
    load_flat_parameters,
    forward,
    backward,
    cross_entropy,
    make_optimizer,
    adam_step,
    predict_labels,
)

__all__ = [
    "build_tangent_frames",
    "rotate_frames",
    "DiffusionNet",
    "DiffusionOperators",
    "ForwardCache",
    "build_model",
    "parameter_layout",
    "parameter_count",
    "flatten_parameters",
    "load_flat_parameters",
    "forward",
    "backward",
    "cross_entropy",
    "make_optimizer",
    "adam_step",
    "predict_labels",
]
