import numpy as np
import pytest

from src.exceptions import ArgumentError, MissingInputError
from src.models import Split, SynthProfile
from src.services.mesh_ops import connected_components
from src.services.projection import camera_center, project
from src.services.synth_generator import (
    CAMERA_DISTANCE,
    FRAGMENT_COUNT,
    HAIR_RINGS,
    HAIR_SIDES,
    camera_rig,
    generate_dataset,
    generate_sample,
    label_by_distance,
    load_sample,
    load_split,
    sample_dirs,
    sample_seed,
    write_sample,
)

TINY = SynthProfile.named("tiny")


@pytest.fixture(scope="module")
def sample():
    return generate_sample(3, TINY)


def test_generation_is_deterministic(sample):
    again = generate_sample(3, TINY)
    assert np.array_equal(again.scan.positions, sample.scan.positions)
    assert np.array_equal(again.scan.faces, sample.scan.faces)
    assert np.array_equal(again.labels, sample.labels)
    assert all(np.array_equal(a.pixels, b.pixels) for a, b in zip(again.images, sample.images))
    other = generate_sample(4, TINY)
    assert not np.array_equal(other.scan.positions[:10], sample.scan.positions[:10])


def test_head_is_skin_and_clutter_is_not(sample):
    assert np.all(sample.labels[~sample.clutter_mask] == 1)
    assert sample.labels[sample.clutter_mask].mean() < 0.05
    non_skin = 1.0 - sample.labels.mean()
    assert 0.05 <= non_skin <= 0.6


def test_hair_is_rooted_on_the_head(sample):
    count, components = connected_components(sample.scan)
    assert count == 1 + 2 + FRAGMENT_COUNT + 1
    attached = components == components[0]
    hair = attached & sample.clutter_mask
    assert hair.any()
    assert hair.sum() % ((HAIR_RINGS - 1) * HAIR_SIDES) == 0
    _, distances = label_by_distance(sample.scan, sample.reference)
    assert distances[attached & ~sample.clutter_mask].min() < 1.5
    assert sample.labels[hair].mean() < 0.05


def test_labels_follow_distance_threshold(sample):
    labels, distances = label_by_distance(sample.scan, sample.reference, 1.5)
    assert np.array_equal(labels, sample.labels)
    assert np.array_equal(labels == 1, distances < 1.5)
    loose, _ = label_by_distance(sample.scan, sample.reference, 50.0)
    assert loose.sum() >= labels.sum()


def test_camera_rig_surrounds_head():
    cameras = camera_rig(13, 64)
    assert len(cameras) == 13
    centers = np.array([camera_center(c) for c in cameras])
    assert np.allclose(np.linalg.norm(centers, axis=1), CAMERA_DISTANCE)
    assert int((centers[:, 2] > 1.0).sum()) == 3
    for camera in cameras:
        proj = project(camera, np.zeros(3))
        assert np.allclose(proj.uv[0], [camera.cx, camera.cy], atol=1e-9)


def test_written_sample_reloads_with_reproducible_labels(sample, tmp_path):
    directory = write_sample(sample, tmp_path / "sample_3")
    assert sorted(p.name for p in directory.iterdir())[:4] == ["cameras.json", "labels.bin", "reference.ply", "scan.ply"]
    loaded = load_sample(directory)
    assert loaded.seed == 3
    assert np.array_equal(loaded.scan.positions, sample.scan.positions)
    assert np.array_equal(loaded.labels, sample.labels)
    assert len(loaded.images) == len(sample.cameras)
    assert np.array_equal(loaded.images[0].pixels, sample.images[0].pixels)
    recomputed, _ = label_by_distance(loaded.scan, loaded.reference)
    assert np.array_equal(recomputed, loaded.labels)


def test_sample_seed_parsing(tmp_path):
    assert sample_seed(tmp_path / "sample_12") == 12
    assert sample_seed(tmp_path / "scan_a") == -1


def test_dataset_split(tiny_dataset_master):
    split = load_split(tiny_dataset_master)
    assert split.train == ["sample_0", "sample_1", "sample_2"]
    assert split.test == ["sample_3"]
    assert [p.name for p in sample_dirs(tiny_dataset_master, Split.TEST)] == ["sample_3"]
    assert len(sample_dirs(tiny_dataset_master)) == 4
    for directory in sample_dirs(tiny_dataset_master):
        recomputed, _ = label_by_distance(load_sample(directory).scan, load_sample(directory).reference)
        assert np.array_equal(recomputed, load_sample(directory).labels)


def test_dataset_refuses_overwrite_without_force(tmp_path):
    generate_dataset(tmp_path, count=1, seed=7, test_fraction=0.0, profile=TINY, threads=1)
    marker = tmp_path / "sample_7" / "stale.txt"
    marker.write_text("x")
    with pytest.raises(ArgumentError):
        generate_dataset(tmp_path, count=1, seed=7, test_fraction=0.0, profile=TINY, threads=1)
    split = generate_dataset(tmp_path, count=1, seed=7, test_fraction=0.0, profile=TINY, threads=1, force=True)
    assert split.train == ["sample_7"] and split.test == []
    assert not marker.exists()


def test_dataset_argument_checks(tmp_path):
    with pytest.raises(ArgumentError):
        generate_dataset(tmp_path, count=0)
    with pytest.raises(ArgumentError):
        generate_dataset(tmp_path, count=2, test_fraction=1.0)


def test_missing_split_file(tmp_path):
    with pytest.raises(MissingInputError) as err:
        load_split(tmp_path)
    assert "split.json" in str(err.value)
