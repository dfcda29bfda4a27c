import json
import shutil

import numpy as np
import pytest

from src.exceptions import ArgumentError, ConfigError, MissingInputError
from src.models import FusionMode, GeomFeature, PipelineConfig, Split
from src.services import pipeline
from src.services.pipeline import (
    TSV_HEADER,
    apply_overrides,
    default_ablation_grid,
    evaluate_dataset,
    infer,
    load_checkpoint,
    load_grid,
    load_pipeline_config,
    run_ablation,
    split_validation,
    train_pipeline,
    with_seed,
    write_report_tsv,
)
from src.services.precompute import precompute
from tests.conftest import FAST_CONFIG


def test_config_defaults_and_camel_case(tmp_path):
    assert load_pipeline_config() == PipelineConfig()
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"eigK": 24, "hksT": 4, "fusion": "mean", "geomFeatures": ["hks"], "network": {"learningRate": 0.01}}))
    config = load_pipeline_config(path)
    assert (config.eig_k, config.hks_t, config.fusion) == (24, 4, FusionMode.MEAN)
    assert config.network.learning_rate == 0.01
    assert config.config_id == "handcrafted+mean+hks"


def test_config_errors(tmp_path):
    path = tmp_path / "config.json"
    path.write_text('{\n  "eigK": 24,\n  "hksT": \n}\n')
    with pytest.raises(ConfigError) as err:
        load_pipeline_config(path)
    assert "line 4" in str(err.value)

    path.write_text(json.dumps({"eigK": 24, "colour": True}))
    with pytest.raises(ConfigError) as err:
        load_pipeline_config(path)
    assert "colour" in str(err.value)

    path.write_text(json.dumps({"fusion": "none", "geomFeatures": []}))
    with pytest.raises(ConfigError):
        load_pipeline_config(path)

    with pytest.raises(MissingInputError):
        load_pipeline_config(tmp_path / "absent.json")


def test_grid_file(tmp_path):
    path = tmp_path / "grid.json"
    path.write_text(json.dumps([{"fusion": "mean"}, {"fusion": "none", "geomFeatures": ["xyz"]}]))
    grid = load_grid(path)
    assert [c.config_id for c in grid] == ["handcrafted+mean+sigma30", "none+xyz"]

    path.write_text(json.dumps({"fusion": "mean"}))
    with pytest.raises(ConfigError):
        load_grid(path)
    path.write_text(json.dumps([{"fusion": "mean"}, {"eigK": 1}]))
    with pytest.raises(ConfigError) as err:
        load_grid(path)
    assert "[1]" in str(err.value)


def test_overrides():
    config = apply_overrides(FAST_CONFIG, seed=3, epochs=5, fusion=None, geom_features=[GeomFeature.HKS, GeomFeature.XYZ])
    assert config.network.seed == 3
    assert config.network.epochs == 5
    assert config.fusion == FAST_CONFIG.fusion
    assert config.geom_features == [GeomFeature.HKS, GeomFeature.XYZ]
    assert apply_overrides(FAST_CONFIG) is FAST_CONFIG
    with pytest.raises(ConfigError):
        apply_overrides(FAST_CONFIG, fusion=FusionMode.NONE, geom_features=[])
    assert with_seed(FAST_CONFIG, 9).network.seed == 9
    assert FAST_CONFIG.network.seed == 0


def test_default_grid_has_twelve_distinct_rows():
    grid = default_ablation_grid()
    ids = [c.config_id for c in grid]
    assert len(ids) == 12 == len(set(ids))
    assert sum(not c.fusion.uses_images for c in grid) == 5
    assert "handcrafted+visMean+var+hks+sigma30" in ids


def test_split_validation():
    assert split_validation(list(range(4))) == (list(range(4)), [])
    assert split_validation(list(range(10))) == (list(range(8)), [8, 9])
    assert split_validation(list(range(5))) == (list(range(4)), [4])


def test_train_evaluate_and_infer(tiny_dataset, tmp_path):
    out = tmp_path / "model.dnet"
    result = train_pipeline(tiny_dataset, FAST_CONFIG, out, threads=2)
    assert out.exists()
    log = out.with_name("model.dnet.log.jsonl")
    assert len(log.read_text().splitlines()) == FAST_CONFIG.network.epochs
    assert result.best_epoch == FAST_CONFIG.network.epochs

    checkpoint = load_checkpoint(out)
    head, params = checkpoint
    assert (head.blocks, head.width, head.eig_k) == (1, 8, 24)
    assert np.array_equal(params, result.parameters)

    report = evaluate_dataset(checkpoint, tiny_dataset, FAST_CONFIG, Split.TEST, threads=2)
    assert [s.sample for s in report.samples] == ["sample_3"]
    assert 0.0 <= report.miou <= 1.0
    assert report.miou == pytest.approx(report.samples[0].miou)
    assert report.d_mean_mm >= 0.0

    labels, logits = infer(checkpoint, tiny_dataset / "sample_3", FAST_CONFIG)
    assert labels.shape == (report.samples[0].vertices,)
    assert logits.shape == (labels.shape[0], 2)
    assert int(labels.sum()) == report.samples[0].predicted_skin

    tsv = tmp_path / "report.tsv"
    write_report_tsv([report], tsv)
    lines = tsv.read_text().splitlines()
    assert lines[0] == TSV_HEADER
    assert lines[1].split("\t")[:2] == [FAST_CONFIG.config_id, "test"]

    with pytest.raises(ArgumentError):
        train_pipeline(tiny_dataset, FAST_CONFIG, out)


def test_checkpoint_configuration_mismatch(tiny_dataset, tmp_path):
    out = tmp_path / "model.dnet"
    train_pipeline(tiny_dataset, FAST_CONFIG, out, threads=2)
    checkpoint = load_checkpoint(out)
    sample = tiny_dataset / "sample_3"

    other_k = FAST_CONFIG.model_copy(update={"eig_k": 16})
    precompute(sample, other_k)
    with pytest.raises(ConfigError) as err:
        infer(checkpoint, sample, other_k)
    assert "eigK" in str(err.value)

    geometry_only = FAST_CONFIG.model_copy(update={"fusion": FusionMode.NONE})
    precompute(sample, geometry_only)
    with pytest.raises(ConfigError) as err:
        infer(checkpoint, sample, geometry_only)
    assert "D_in" in str(err.value)


def test_checkpoint_independent_of_thread_count(tiny_dataset, tiny_dataset_master, tmp_path):
    other = tmp_path / "other"
    shutil.copytree(tiny_dataset_master, other)
    train_pipeline(tiny_dataset, FAST_CONFIG, tmp_path / "a.dnet", threads=1)
    train_pipeline(other, FAST_CONFIG, tmp_path / "b.dnet", threads=3)
    assert (tmp_path / "a.dnet").read_bytes() == (tmp_path / "b.dnet").read_bytes()


def test_ablation_continues_past_failures(tiny_dataset):
    broken = FAST_CONFIG.model_copy(update={"eig_k": 5000, "fusion": FusionMode.MEAN})
    result = run_ablation(tiny_dataset, [FAST_CONFIG, broken], seeds=[0], threads=2)
    assert [r.config_id for r in result.reports] == [FAST_CONFIG.config_id]
    assert list(result.failures) == [f"{broken.config_id}@0"]
    assert result.reports[0].seed == 0


def test_ablation_records_unexpected_errors(tiny_dataset, monkeypatch):
    real_fit = pipeline.fit

    def flaky_fit(dataset_dir, config, threads=None):
        if config.network.seed == 1:
            raise RuntimeError("solver blew up")
        return real_fit(dataset_dir, config, threads)

    monkeypatch.setattr(pipeline, "fit", flaky_fit)
    result = run_ablation(tiny_dataset, [FAST_CONFIG], seeds=[1, 0], threads=2)
    assert [r.seed for r in result.reports] == [0]
    assert result.failures == {f"{FAST_CONFIG.config_id}@1": "RuntimeError: solver blew up"}
