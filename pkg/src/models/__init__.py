"""
Models package initialization
"""
from src.models.schemas import (
    FeatureSource,
    FusionMode,
    GeomFeature,
    VarianceCenter,
    ClassWeighting,
    Split,
    Camera,
    CameraSet,
    SynthProfile,
    TrainConfig,
    PipelineConfig,
    EpochLog,
    SampleReport,
    EvalReport,
    DatasetSplit,
)
from src.models.geometry import (
    TriMesh,
    SparseOperator,
    SpectralBasis,
    GeomFeatures,
    FeatureMap,
    Image,
    Projection,
    FusedFeatures,
    TangentFrames,
    SynthSample,
)

__all__ = [
    "FeatureSource",
    "FusionMode",
    "GeomFeature",
    "VarianceCenter",
    "ClassWeighting",
    "Split",
    "Camera",
    "CameraSet",
    "SynthProfile",
    "TrainConfig",
    "PipelineConfig",
    "EpochLog",
    "SampleReport",
    "EvalReport",
    "DatasetSplit",
    "TriMesh",
    "SparseOperator",
    "SpectralBasis",
    "GeomFeatures",
    "FeatureMap",
    "Image",
    "Projection",
    "FusedFeatures",
    "TangentFrames",
    "SynthSample",
]
