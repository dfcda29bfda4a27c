import numpy as np
import pytest

from src.exceptions import MissingInputError
from src.models import FeatureMap, FeatureSource, FusionMode, GeomFeature
from src.services import precompute as precompute_module
from src.services.precompute import artifact_paths, cache_dir, precompute
from src.services.synth_generator import label_by_distance, load_sample
from src.storage import BasisDAO, FeatureMapDAO, LabelDAO


def cache_state(sample_dir):
    return {p.name: p.stat().st_mtime_ns for p in cache_dir(sample_dir).iterdir()}


def test_precompute_writes_caches_once(tiny_dataset, fast_config):
    sample = tiny_dataset / "sample_0"
    artifacts = precompute(sample, fast_config, threads=1)
    assert artifacts.basis.exists() and artifacts.geom.exists() and artifacts.fused.exists()
    assert artifacts.labels == sample / "labels.bin"

    basis = BasisDAO.read(artifacts.basis)
    assert basis.k == 24
    geom = FeatureMapDAO.read_vertex_features(artifacts.geom)
    assert geom.shape == (basis.num_vertices, 4 + 1)
    fused = FeatureMapDAO.read_vertex_features(artifacts.fused)
    assert fused.shape == (basis.num_vertices, 2 * 12 + 2)
    assert np.all(fused[:, -1] <= 13)

    before = cache_state(sample)
    again = precompute(sample, fast_config, threads=1)
    assert again == artifacts
    assert cache_state(sample) == before


def test_geometry_only_configuration_skips_views(tiny_dataset, fast_config):
    sample = tiny_dataset / "sample_1"
    config = fast_config.model_copy(update={"fusion": FusionMode.NONE, "geom_features": [GeomFeature.HKS]})
    artifacts = precompute(sample, config)
    assert artifacts.fused is None
    assert sorted(p.name.split("_")[0] for p in cache_dir(sample).iterdir()) == ["basis", "geom"]


def test_fused_cache_key_tracks_fusion_settings(tiny_dataset, fast_config):
    sample = tiny_dataset / "sample_0"
    vis = artifact_paths(sample, fast_config)
    plain = artifact_paths(sample, fast_config.model_copy(update={"fusion": FusionMode.MEAN_VAR}))
    assert vis.basis == plain.basis
    assert vis.fused != plain.fused


def test_failure_removes_new_files(tiny_dataset, fast_config, monkeypatch):
    def broken(*args, **kwargs):
        raise RuntimeError("lifting failed")

    monkeypatch.setattr(precompute_module, "lift_features", broken)
    sample = tiny_dataset / "sample_2"
    with pytest.raises(RuntimeError):
        precompute(sample, fast_config, threads=1)
    assert not any(p.name.startswith(("basis", "geom", "fused")) for p in cache_dir(sample).iterdir())


def test_custom_threshold_caches_labels(tiny_dataset, fast_config):
    sample = tiny_dataset / "sample_0"
    config = fast_config.model_copy(update={"label_threshold": 4.0, "fusion": FusionMode.NONE})
    artifacts = precompute(sample, config)
    assert artifacts.labels.parent == cache_dir(sample)
    loaded = load_sample(sample)
    expected, _ = label_by_distance(loaded.scan, loaded.reference, 4.0)
    assert np.array_equal(LabelDAO.read(artifacts.labels), expected)
    assert LabelDAO.read(artifacts.labels).sum() >= loaded.labels.sum()


def test_external_feature_maps(tiny_dataset, fast_config):
    sample = tiny_dataset / "sample_0"
    config = fast_config.model_copy(update={"feature_source": FeatureSource.FMAP_FILES})
    with pytest.raises(MissingInputError) as err:
        precompute(sample, config)
    assert "view_00.fmap" in str(err.value)

    rng = np.random.default_rng(0)
    for i in range(13):
        FeatureMapDAO.write(FeatureMap(data=rng.uniform(size=(64, 64, 5))), sample / f"view_{i:02d}.fmap")
    artifacts = precompute(sample, config, threads=2)
    assert FeatureMapDAO.read_vertex_features(artifacts.fused).shape[1] == 2 * 5 + 2


def test_missing_sample_directory(tmp_path, fast_config):
    with pytest.raises(MissingInputError):
        precompute(tmp_path / "sample_9", fast_config)
    (tmp_path / "sample_9").mkdir()
    with pytest.raises(MissingInputError) as err:
        precompute(tmp_path / "sample_9", fast_config)
    assert "scan.ply" in str(err.value)
