import pytest
from pydantic import ValidationError

from src.config import Settings, settings
from src.models import (
    EvalReport,
    FusionMode,
    GeomFeature,
    PipelineConfig,
    Split,
    SynthProfile,
    TrainConfig,
    VarianceCenter,
)


def test_train_config_aliases_and_profiles():
    config = TrainConfig.model_validate({"learningRate": 0.01, "batchSize": 2, "classWeights": "uniform"})
    assert (config.learning_rate, config.batch_size, config.class_weights.value) == (0.01, 2, "uniform")
    assert (TrainConfig.full_profile().width, TrainConfig.full_profile().blocks) == (128, 4)
    assert (TrainConfig.test_profile().width, TrainConfig.test_profile().blocks) == (32, 2)
    with pytest.raises(ValidationError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValidationError):
        TrainConfig.model_validate({"lr": 0.1})


def test_pipeline_config_ids():
    assert PipelineConfig().config_id == "handcrafted+visMean+var+sigma30"
    assert PipelineConfig(fusion=FusionMode.NONE, geom_features=[GeomFeature.XYZ]).config_id == "none+xyz"
    unweighted = PipelineConfig(variance_center=VarianceCenter.UNWEIGHTED)
    assert unweighted.config_id.endswith("+uvar")
    assert PipelineConfig(fusion=FusionMode.MEAN, variance_center=VarianceCenter.UNWEIGHTED).config_id == "handcrafted+mean+sigma30"


def test_pipeline_config_requires_inputs():
    with pytest.raises(ValidationError):
        PipelineConfig(fusion=FusionMode.NONE, geom_features=[])
    with pytest.raises(ValidationError):
        PipelineConfig(eig_k=1)


def test_fusion_mode_flags():
    assert not FusionMode.NONE.uses_images
    assert FusionMode.VIS_MEAN.visibility_weighted and not FusionMode.VIS_MEAN.with_variance
    assert FusionMode.MEAN_VAR.with_variance and not FusionMode.MEAN_VAR.visibility_weighted


def test_synth_profiles():
    assert SynthProfile.named("tiny").vertices == 900
    assert SynthProfile.named("large").vertices >= 100_000
    with pytest.raises(ValueError):
        SynthProfile.named("huge")


def test_report_row():
    report = EvalReport(config_id="none+xyz", split=Split.TEST, seed=2, miou=0.5, d_mean_mm=1.25, d_std_mm=0.5)
    assert report.tsv_row() == "none+xyz\ttest\t0.500000\t1.250000\t0.500000\t2"
    with pytest.raises(ValidationError):
        EvalReport(config_id="x", split=Split.TEST, seed=0, miou=1.5, d_mean_mm=0, d_std_mm=0)


def test_basis_size_default_comes_from_settings(monkeypatch):
    monkeypatch.setenv("SCANSEG_EIG_K", "64")
    assert Settings().eig_k == 64
    monkeypatch.setattr(settings, "eig_k", 64)
    assert PipelineConfig().eig_k == 64
    assert PipelineConfig.model_validate({"eigK": 32}).eig_k == 32
