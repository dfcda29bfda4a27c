"""
DiffusionNet - learned spectral diffusion, tangent gradient features and per-vertex MLPs

Layer layout (state_dict order, which is also the flat checkpoint order):
    input_proj.weight (C, D_in), input_proj.bias (C)
    per block b:
        blocks.b.diffusion.log_time (C)
        blocks.b.gradient_features.A_re.weight (C, C)
        blocks.b.gradient_features.A_im.weight (C, C)
        blocks.b.mlp.0.weight (C, 2C), blocks.b.mlp.0.bias (C)
        blocks.b.mlp.2.weight (C, C),  blocks.b.mlp.2.bias (C)
    output_proj.weight (2, C), output_proj.bias (2)
"""
from dataclasses import dataclass
from typing import List, Sequence, Tuple
import logging
import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from src.exceptions import ArgumentError
from src.models import SpectralBasis, TangentFrames, TrainConfig

logger = logging.getLogger(__name__)

NUM_CLASSES = 2
LOG_TIME_RANGE = (math.log(1.0), math.log(1e3))  # initial diffusion times in mm^2


# ============================================================================
# Precomputed operators
# ============================================================================

def sparse_np_to_torch(A, dtype: torch.dtype) -> torch.Tensor:
    coo = A.tocoo()
    indices = torch.from_numpy(np.vstack((coo.row, coo.col)).astype(np.int64))
    values = torch.from_numpy(np.asarray(coo.data)).to(dtype)
    return torch.sparse_coo_tensor(indices, values, coo.shape).coalesce()


@dataclass(frozen=True)
class DiffusionOperators:
    """Torch views of the constant per-mesh operators"""
    evals: torch.Tensor   # (k,)
    evecs: torch.Tensor   # (V, k)
    mass: torch.Tensor    # (V,)
    grad_x: torch.Tensor  # (V, V) sparse, Re G
    grad_y: torch.Tensor  # (V, V) sparse, Im G

    @property
    def num_vertices(self) -> int:
        return self.evecs.shape[0]

    @property
    def k(self) -> int:
        return self.evals.shape[0]

    @classmethod
    def build(cls, basis: SpectralBasis, frames: TangentFrames, dtype: torch.dtype = torch.float32) -> "DiffusionOperators":
        if frames.gradient.shape[0] != basis.num_vertices:
            raise ArgumentError(
                f"basis has {basis.num_vertices} vertices but gradient operator has {frames.gradient.shape[0]}"
            )
        return cls(
            evals=torch.from_numpy(np.asarray(basis.eigenvalues)).to(dtype),
            evecs=torch.from_numpy(np.asarray(basis.eigenvectors)).to(dtype),
            mass=torch.from_numpy(np.asarray(basis.mass)).to(dtype),
            grad_x=sparse_np_to_torch(frames.gradient.real, dtype),
            grad_y=sparse_np_to_torch(frames.gradient.imag, dtype),
        )


def to_basis(feat: torch.Tensor, evecs: torch.Tensor, mass: torch.Tensor) -> torch.Tensor:
    """(V, C) -> (k, C) coefficients Phi^T M x"""
    return evecs.transpose(0, 1) @ (feat * mass.unsqueeze(-1))


def from_basis(coef: torch.Tensor, evecs: torch.Tensor) -> torch.Tensor:
    return evecs @ coef


# ============================================================================
# Layers
# ============================================================================

class LearnedTimeDiffusion(nn.Module):
    """Per-channel spectral diffusion with t = exp(log_time), so t > 0 always"""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.log_time = nn.Parameter(torch.zeros(channels))

    @property
    def diffusion_time(self) -> torch.Tensor:
        return torch.exp(self.log_time)

    def forward(self, feat: torch.Tensor, ops: DiffusionOperators) -> torch.Tensor:
        coef = to_basis(feat, ops.evecs, ops.mass)
        decay = torch.exp(-ops.evals.unsqueeze(-1) * self.diffusion_time.unsqueeze(0))
        return from_basis(decay * coef, ops.evecs)


class SpatialGradientFeatures(nn.Module):
    """
    w = tanh(Re(conj(z) * (A z))) with z = G u and A = A_re + i A_im mixing channels

    Invariant to a per-vertex phase on z, i.e. to the choice of tangent basis.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.A_re = nn.Linear(channels, channels, bias=False)
        self.A_im = nn.Linear(channels, channels, bias=False)

    def forward(self, grad_x: torch.Tensor, grad_y: torch.Tensor) -> torch.Tensor:
        b_re = self.A_re(grad_x) - self.A_im(grad_y)
        b_im = self.A_re(grad_y) + self.A_im(grad_x)
        return torch.tanh(grad_x * b_re + grad_y * b_im)


class DiffusionNetBlock(nn.Module):
    """diffuse -> gradient features -> MLP(concat(diffused, w)) -> residual"""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.diffusion = LearnedTimeDiffusion(channels)
        self.gradient_features = SpatialGradientFeatures(channels)
        self.mlp = nn.Sequential(
            nn.Linear(2 * channels, channels),
            nn.SiLU(),
            nn.Linear(channels, channels),
        )

    @property
    def log_time(self) -> nn.Parameter:
        return self.diffusion.log_time

    def forward(self, feat_in: torch.Tensor, ops: DiffusionOperators) -> torch.Tensor:
        feat_diffuse = self.diffusion(feat_in, ops)
        grad_x = torch.sparse.mm(ops.grad_x, feat_diffuse)
        grad_y = torch.sparse.mm(ops.grad_y, feat_diffuse)
        feat_grad = self.gradient_features(grad_x, grad_y)
        feat_out = self.mlp(torch.cat((feat_diffuse, feat_grad), dim=-1))
        return feat_in + feat_out


class DiffusionNet(nn.Module):
    """Input projection, B diffusion blocks, 2-class output projection"""

    def __init__(self, in_channels: int, width: int, n_block: int):
        super().__init__()
        if min(in_channels, width, n_block) <= 0:
            raise ArgumentError(f"invalid network shape D_in={in_channels}, C={width}, B={n_block}")
        self.in_channels = in_channels
        self.width = width
        self.n_block = n_block
        self.input_proj = nn.Linear(in_channels, width)
        self.blocks = nn.ModuleList([DiffusionNetBlock(width) for _ in range(n_block)])
        self.output_proj = nn.Linear(width, NUM_CLASSES)

    def reset_parameters(self, seed: int) -> None:
        """Deterministic initialization from a dedicated generator"""
        generator = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, param in self.named_parameters():
                if name.endswith("log_time"):
                    low, high = LOG_TIME_RANGE
                    param.copy_(torch.rand(param.shape, generator=generator, dtype=param.dtype) * (high - low) + low)
                elif name.endswith("bias"):
                    param.zero_()
                else:
                    fan_in = param.shape[1]
                    bound = 1.0 / math.sqrt(fan_in)
                    param.copy_((torch.rand(param.shape, generator=generator, dtype=param.dtype) * 2 - 1) * bound)

    def forward(self, x: torch.Tensor, ops: DiffusionOperators) -> torch.Tensor:
        if x.dim() != 2 or x.shape[1] != self.in_channels:
            raise ArgumentError(f"expected input of shape (V, {self.in_channels}), got {tuple(x.shape)}")
        if x.shape[0] != ops.num_vertices:
            raise ArgumentError(f"input has {x.shape[0]} vertices but operators have {ops.num_vertices}")
        h = self.input_proj(x)
        for block in self.blocks:
            h = block(h, ops)
        return self.output_proj(h)


def build_model(in_channels: int, config: TrainConfig, double: bool = False) -> DiffusionNet:
    model = DiffusionNet(in_channels, config.width, config.blocks)
    if double:
        model = model.double()
    model.reset_parameters(config.seed)
    return model


# ============================================================================
# Parameter layout / flat vectors
# ============================================================================

def parameter_layout(in_channels: int, width: int, n_block: int) -> List[Tuple[str, Tuple[int, ...]]]:
    """Ordered (name, shape) table of every trainable tensor"""
    C = width
    layout = [("input_proj.weight", (C, in_channels)), ("input_proj.bias", (C,))]
    for b in range(n_block):
        prefix = f"blocks.{b}"
        layout += [
            (f"{prefix}.diffusion.log_time", (C,)),
            (f"{prefix}.gradient_features.A_re.weight", (C, C)),
            (f"{prefix}.gradient_features.A_im.weight", (C, C)),
            (f"{prefix}.mlp.0.weight", (C, 2 * C)),
            (f"{prefix}.mlp.0.bias", (C,)),
            (f"{prefix}.mlp.2.weight", (C, C)),
            (f"{prefix}.mlp.2.bias", (C,)),
        ]
    layout += [("output_proj.weight", (NUM_CLASSES, C)), ("output_proj.bias", (NUM_CLASSES,))]
    return layout


def parameter_count(in_channels: int, width: int, n_block: int) -> int:
    C = width
    return in_channels * C + C + n_block * (5 * C * C + 3 * C) + 2 * C + 2


def flatten_parameters(model: DiffusionNet) -> np.ndarray:
    """Single float32 vector in layout order"""
    named = dict(model.named_parameters())
    layout = parameter_layout(model.in_channels, model.width, model.n_block)
    chunks = [named[name].detach().cpu().to(torch.float32).reshape(-1).numpy() for name, _ in layout]
    return np.concatenate(chunks).astype(np.float32)


def load_flat_parameters(model: DiffusionNet, vector: np.ndarray) -> DiffusionNet:
    layout = parameter_layout(model.in_channels, model.width, model.n_block)
    expected = parameter_count(model.in_channels, model.width, model.n_block)
    vector = np.asarray(vector)
    if vector.shape != (expected,):
        raise ArgumentError(f"parameter vector has {vector.size} entries, layout needs {expected}")
    named = dict(model.named_parameters())
    offset = 0
    with torch.no_grad():
        for name, shape in layout:
            size = int(np.prod(shape))
            param = named[name]
            param.copy_(torch.from_numpy(vector[offset:offset + size].reshape(shape)).to(param.dtype))
            offset += size
    return model


def parameter_norms(model: nn.Module) -> dict[str, float]:
    return {name: float(p.detach().norm()) for name, p in model.named_parameters()}


# ============================================================================
# Functional forward / backward / loss / optimizer
# ============================================================================

@dataclass
class ForwardCache:
    """Everything backward needs: the autograd graph rooted at logits"""
    model: DiffusionNet
    logits: torch.Tensor


def forward(model: DiffusionNet, ops: DiffusionOperators, x: torch.Tensor) -> Tuple[torch.Tensor, ForwardCache]:
    logits = model(x, ops)
    return logits, ForwardCache(model=model, logits=logits)


def backward(cache: ForwardCache, d_logits: torch.Tensor) -> List[torch.Tensor]:
    """Gradient of <d_logits, logits> w.r.t. every parameter, in named_parameters order"""
    params = list(cache.model.parameters())
    grads = torch.autograd.grad(
        cache.logits,
        params,
        grad_outputs=d_logits.to(cache.logits.dtype),
        retain_graph=True,
        allow_unused=True,
    )
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


def cross_entropy(
    logits: torch.Tensor,
    labels: torch.Tensor,
    class_weights: Sequence[float] = (1.0, 1.0),
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Weighted mean over vertices of -log softmax(logits)[label]

    Returns:
        (loss scalar, dLoss/dLogits), the gradient in closed form
        w[y_v] / V * (softmax - onehot)
    """
    if logits.dim() != 2 or logits.shape[1] != NUM_CLASSES or labels.shape != logits.shape[:1]:
        raise ArgumentError(f"logits {tuple(logits.shape)} and labels {tuple(labels.shape)} disagree")
    labels = labels.long()
    weights = torch.as_tensor(class_weights, dtype=logits.dtype)[labels]
    log_probs = F.log_softmax(logits, dim=-1)
    picked = log_probs.gather(1, labels.unsqueeze(1)).squeeze(1)
    V = logits.shape[0]
    loss = -(weights * picked).sum() / V
    onehot = F.one_hot(labels, NUM_CLASSES).to(logits.dtype)
    d_logits = (weights / V).unsqueeze(1) * (torch.exp(log_probs) - onehot)
    return loss, d_logits.detach()


def make_optimizer(model: nn.Module, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        model.parameters(),
        lr=config.learning_rate,
        betas=(config.adam_beta1, config.adam_beta2),
        eps=config.epsilon,
    )


def adam_step(params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor], optimizer: torch.optim.Adam) -> None:
    """One bias-corrected Adam update of `params` with the supplied gradients"""
    if len(params) != len(grads):
        raise ArgumentError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ArgumentError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)}")
        p.grad = g.detach().clone()
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)


def predict_labels(logits: torch.Tensor | np.ndarray) -> np.ndarray:
    """Argmax over 2 classes, ties resolve to non-skin (class 0)"""
    logits = logits.detach().cpu().numpy() if isinstance(logits, torch.Tensor) else np.asarray(logits)
    return (logits[:, 1] > logits[:, 0]).astype(np.uint8)
