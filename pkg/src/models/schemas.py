"""
Data Models for Head Scan Segmentation
"""
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import List, Optional, Dict
from enum import Enum
import math

from src.config import settings


class FeatureSource(str, Enum):
    """Where per-view feature maps come from"""
    FMAP_FILES = "fmapFiles"     # externally computed FMAP per view
    HANDCRAFTED = "handcrafted"  # built-in 12-channel extractor


class FusionMode(str, Enum):
    """Projection rows of the ablation"""
    NONE = "none"                        # geometry-only
    MEAN = "mean"                        # mu
    MEAN_VAR = "mean+var"                # mu, sigma^2
    VIS_MEAN = "visMean"                 # visibility-aware mu-bar
    VIS_MEAN_VAR = "visMean+var"         # visibility-aware mu-bar, sigma-bar^2

    @property
    def uses_images(self) -> bool:
        return self is not FusionMode.NONE

    @property
    def visibility_weighted(self) -> bool:
        return self in (FusionMode.VIS_MEAN, FusionMode.VIS_MEAN_VAR)

    @property
    def with_variance(self) -> bool:
        return self in (FusionMode.MEAN_VAR, FusionMode.VIS_MEAN_VAR)


class GeomFeature(str, Enum):
    """Per-vertex geometric input blocks"""
    HKS = "hks"
    SIGMA30 = "sigma30"
    COLOR = "color"
    XYZ = "xyz"


class VarianceCenter(str, Enum):
    """Mean used inside the fused variance"""
    WEIGHTED = "weighted"      # sum w (f - mu_bar)^2
    UNWEIGHTED = "unweighted"  # sum w (f - mu)^2 with mu the plain mean of covering views


class ClassWeighting(str, Enum):
    INVERSE_FREQUENCY = "inverse_frequency"
    UNIFORM = "uniform"


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"


class _CamelModel(BaseModel):
    """Base for config documents with normative camelCase keys"""
    model_config = ConfigDict(populate_by_name=True, extra="forbid", use_enum_values=False)


# ============================================================================
# Camera file
# ============================================================================

class Camera(BaseModel):
    """Pinhole camera: world->camera rotation R (row-major), translation t (mm)"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    fx: float = Field(..., gt=0, description="Focal length x (pixels)")
    fy: float = Field(..., gt=0, description="Focal length y (pixels)")
    cx: float = Field(..., ge=0, description="Principal point x (pixels)")
    cy: float = Field(..., ge=0, description="Principal point y (pixels)")
    R: List[float] = Field(..., min_length=9, max_length=9, description="Rotation, 9 numbers row-major")
    t: List[float] = Field(..., min_length=3, max_length=3, description="Translation (mm)")
    width: int = Field(..., gt=0)
    height: int = Field(..., gt=0)

    @model_validator(mode="after")
    def _check_geometry(self) -> "Camera":
        if not (self.cx < self.width and self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image")
        R = [self.R[0:3], self.R[3:6], self.R[6:9]]
        if not all(math.isfinite(x) for x in self.R + self.t):
            raise ValueError("non-finite camera extrinsics")
        for i in range(3):
            for j in range(3):
                dot = sum(R[k][i] * R[k][j] for k in range(3))
                if abs(dot - (1.0 if i == j else 0.0)) > 1e-8:
                    raise ValueError("R is not orthonormal (R^T R != I within 1e-8)")
        det = (
            R[0][0] * (R[1][1] * R[2][2] - R[1][2] * R[2][1])
            - R[0][1] * (R[1][0] * R[2][2] - R[1][2] * R[2][0])
            + R[0][2] * (R[1][0] * R[2][1] - R[1][1] * R[2][0])
        )
        if det <= 0:
            raise ValueError("R must be a proper rotation (det R = +1)")
        return self


class CameraSet(BaseModel):
    """Camera file document: {"cameras": [...]}"""
    model_config = ConfigDict(extra="forbid")

    cameras: List[Camera] = Field(..., min_length=1)


# ============================================================================
# Synthetic data
# ============================================================================

class SynthProfile(BaseModel):
    """Procedural scan generator profile"""
    model_config = ConfigDict(extra="forbid")

    name: str = "test"
    vertices: int = Field(default=3000, gt=100, description="Target scan vertex count")
    clutter_density: float = Field(default=1.0, ge=0)
    noise_amplitude: float = Field(default=0.3, ge=0, le=0.5, description="Vertex noise (mm)")
    image_size: int = Field(default=128, ge=16)
    num_views: int = Field(default=13, gt=0)

    @classmethod
    def named(cls, name: str) -> "SynthProfile":
        profiles = {
            "tiny": cls(name="tiny", vertices=900, image_size=64),
            "test": cls(name="test", vertices=3500, image_size=128),
            "large": cls(name="large", vertices=200_000, image_size=512),
        }
        if name not in profiles:
            raise ValueError(f"Unknown profile '{name}', expected one of {sorted(profiles)}")
        return profiles[name]


# ============================================================================
# Experiment configuration
# ============================================================================

class TrainConfig(_CamelModel):
    """DiffusionNet training hyperparameters"""
    learning_rate: float = Field(default=1e-3, gt=0, alias="learningRate")
    adam_beta1: float = Field(default=0.9, gt=0, lt=1, alias="adamBeta1")
    adam_beta2: float = Field(default=0.999, gt=0, lt=1, alias="adamBeta2")
    epsilon: float = Field(default=1e-8, gt=0)
    epochs: int = Field(default=60, gt=0)
    batch_size: int = Field(default=1, gt=0, alias="batchSize", description="Meshes per optimizer step")
    seed: int = Field(default=0, ge=0)
    width: int = Field(default=32, gt=0, description="Channel width C")
    blocks: int = Field(default=2, gt=0, description="Number of diffusion blocks B")
    class_weights: ClassWeighting = Field(default=ClassWeighting.INVERSE_FREQUENCY, alias="classWeights")

    @classmethod
    def full_profile(cls, **overrides) -> "TrainConfig":
        return cls(width=128, blocks=4, **overrides)

    @classmethod
    def test_profile(cls, **overrides) -> "TrainConfig":
        return cls(width=32, blocks=2, **overrides)


class PipelineConfig(_CamelModel):
    """One row of an ablation: feature assembly + network settings"""
    feature_source: FeatureSource = Field(default=FeatureSource.HANDCRAFTED, alias="featureSource")
    fusion: FusionMode = Field(default=FusionMode.VIS_MEAN_VAR)
    geom_features: List[GeomFeature] = Field(default_factory=lambda: [GeomFeature.SIGMA30], alias="geomFeatures")
    network: TrainConfig = Field(default_factory=TrainConfig.test_profile)
    eig_k: int = Field(default_factory=lambda: settings.eig_k, gt=1, alias="eigK")
    hks_t: int = Field(default=16, gt=0, alias="hksT")
    label_threshold: float = Field(default=1.5, gt=0, alias="labelThreshold")
    variance_center: VarianceCenter = Field(default=VarianceCenter.WEIGHTED, alias="varianceCenter")

    @field_validator("geom_features")
    @classmethod
    def _dedupe(cls, value: List[GeomFeature]) -> List[GeomFeature]:
        # canonical order keeps the channel layout independent of how the list was written
        order = list(GeomFeature)
        return sorted(set(value), key=order.index)

    @model_validator(mode="after")
    def _check_inputs(self) -> "PipelineConfig":
        if not self.fusion.uses_images and not self.geom_features:
            raise ValueError("configuration selects no input features (fusion 'none' and empty geomFeatures)")
        return self

    @property
    def config_id(self) -> str:
        """Stable human-readable identifier used in result tables"""
        parts = [self.fusion.value]
        if self.fusion.uses_images:
            parts.insert(0, self.feature_source.value)
        parts.extend(g.value for g in self.geom_features)
        if self.variance_center is VarianceCenter.UNWEIGHTED and self.fusion.with_variance:
            parts.append("uvar")
        return "+".join(parts)


# ============================================================================
# Training / evaluation records
# ============================================================================

class EpochLog(BaseModel):
    """One line of the training log"""
    epoch: int
    train_loss: float
    train_miou: float
    val_miou: Optional[float] = None
    seconds: float = 0.0


class SampleReport(BaseModel):
    """Per-sample evaluation breakdown"""
    sample: str
    miou: float
    d_mean_mm: float
    d_std_mm: float
    predicted_skin: int
    vertices: int


class EvalReport(BaseModel):
    """Dataset-level evaluation result"""
    config_id: str
    split: Split
    seed: int
    miou: float = Field(..., ge=0, le=1)
    d_mean_mm: float
    d_std_mm: float
    samples: List[SampleReport] = Field(default_factory=list)

    def tsv_row(self) -> str:
        return f"{self.config_id}\t{self.split.value}\t{self.miou:.6f}\t{self.d_mean_mm:.6f}\t{self.d_std_mm:.6f}\t{self.seed}"


class DatasetSplit(BaseModel):
    """split.json of a generated dataset"""
    train: List[str] = Field(default_factory=list)
    test: List[str] = Field(default_factory=list)
    profile: Optional[Dict[str, float | int | str]] = None
