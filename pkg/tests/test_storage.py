import struct

import numpy as np
import pytest

from src.exceptions import ArgumentError, FormatError, MissingInputError
from src.models import FeatureMap
from src.network.diffusion_net import parameter_count
from src.storage import BasisDAO, CheckpointDAO, CheckpointHeader, FeatureMapDAO, LabelDAO
from src.services.spectral import compute_basis


def test_fmap_layout_and_round_trip(tmp_path):
    data = np.arange(2 * 3 * 4, dtype=np.float32).reshape(2, 3, 4)
    path = tmp_path / "view.fmap"
    FeatureMapDAO.write(FeatureMap(data=data), path)
    raw = path.read_bytes()
    assert raw[:4] == b"FMAP"
    assert struct.unpack("<4I", raw[4:20]) == (1, 2, 3, 4)
    assert np.array_equal(np.frombuffer(raw[20:], dtype="<f4"), data.ravel())
    assert np.array_equal(FeatureMapDAO.read(path).data, data)


def test_fmap_rejects_bad_magic_and_version(tmp_path):
    path = tmp_path / "bad.fmap"
    path.write_bytes(b"FMAQ" + struct.pack("<4I", 1, 1, 1, 1) + bytes(4))
    with pytest.raises(FormatError) as err:
        FeatureMapDAO.read(path)
    assert err.value.offset == 0
    path.write_bytes(b"FMAP" + struct.pack("<4I", 2, 1, 1, 1) + bytes(4))
    with pytest.raises(FormatError) as err:
        FeatureMapDAO.read(path)
    assert err.value.offset == 4


def test_fmap_truncation_and_trailing_bytes(tmp_path):
    path = tmp_path / "view.fmap"
    FeatureMapDAO.write(FeatureMap(data=np.ones((2, 2, 2))), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(FormatError) as err:
        FeatureMapDAO.read(path)
    assert err.value.offset == len(raw) - 3
    path.write_bytes(raw + b"\x00")
    with pytest.raises(FormatError):
        FeatureMapDAO.read(path)


def test_fmap_rejects_non_finite(tmp_path):
    with pytest.raises(ArgumentError):
        FeatureMapDAO.write(FeatureMap(data=np.full((1, 1, 1), np.nan)), tmp_path / "nan.fmap")
    path = tmp_path / "nan.fmap"
    path.write_bytes(b"FMAP" + struct.pack("<4I", 1, 1, 1, 2) + np.array([0.0, np.inf], dtype="<f4").tobytes())
    with pytest.raises(FormatError) as err:
        FeatureMapDAO.read(path)
    assert err.value.offset == 24


def test_vertex_features_are_single_column_maps(tmp_path):
    features = np.random.default_rng(0).normal(size=(7, 5)).astype(np.float32)
    path = tmp_path / "vertex.fmap"
    FeatureMapDAO.write_vertex_features(features, path)
    assert np.array_equal(FeatureMapDAO.read_vertex_features(path), features)
    FeatureMapDAO.write(FeatureMap(data=np.zeros((3, 2, 1))), path)
    with pytest.raises(FormatError):
        FeatureMapDAO.read_vertex_features(path)


def test_missing_file_is_reported(tmp_path):
    with pytest.raises(MissingInputError):
        FeatureMapDAO.read(tmp_path / "absent.fmap")
    with pytest.raises(MissingInputError):
        LabelDAO.read(tmp_path / "labels.bin")


def test_basis_round_trip_is_exact(tmp_path, bumpy_sphere):
    basis = compute_basis(bumpy_sphere, 8)
    path = tmp_path / "basis.bin"
    BasisDAO.write(basis, path)
    loaded = BasisDAO.read(path)
    assert np.array_equal(loaded.eigenvalues, basis.eigenvalues)
    assert np.array_equal(loaded.eigenvectors, basis.eigenvectors)
    assert np.array_equal(loaded.mass, basis.mass)
    assert path.read_bytes()[:4] == b"SPEC"


def test_labels(tmp_path):
    path = tmp_path / "labels.bin"
    labels = np.array([0, 1, 1, 0, 1], dtype=np.uint8)
    LabelDAO.write(labels, path)
    assert path.read_bytes() == b"LBLS" + struct.pack("<2I", 1, 5) + bytes([0, 1, 1, 0, 1])
    assert np.array_equal(LabelDAO.read(path), labels)
    with pytest.raises(ArgumentError):
        LabelDAO.write(np.array([0, 2]), path)

    path.write_bytes(b"LBLS" + struct.pack("<2I", 1, 3) + bytes([0, 1, 7]))
    with pytest.raises(FormatError) as err:
        LabelDAO.read(path)
    assert err.value.offset == 14


def test_checkpoint_round_trip(tmp_path):
    head = CheckpointHeader(blocks=2, width=4, in_channels=3, eig_k=16)
    params = np.random.default_rng(0).normal(size=parameter_count(3, 4, 2)).astype(np.float32)
    path = tmp_path / "model.dnet"
    CheckpointDAO.write(head, params, path)
    loaded_head, loaded = CheckpointDAO.read(path)
    assert loaded_head == head
    assert np.array_equal(loaded, params)
    assert path.read_bytes()[:24] == b"DNET" + struct.pack("<5I", 1, 2, 4, 3, 16)


def test_checkpoint_layout_mismatch(tmp_path):
    head = CheckpointHeader(blocks=1, width=2, in_channels=2, eig_k=4)
    with pytest.raises(ArgumentError):
        CheckpointDAO.write(head, np.zeros(head.parameter_count + 1), tmp_path / "model.dnet")
    path = tmp_path / "model.dnet"
    CheckpointDAO.write(head, np.zeros(head.parameter_count), path)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(FormatError):
        CheckpointDAO.read(path)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    LabelDAO.write(np.zeros(4, dtype=np.uint8), tmp_path / "labels.bin")
    assert [p.name for p in tmp_path.iterdir()] == ["labels.bin"]
