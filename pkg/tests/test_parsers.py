import json

import numpy as np
import pytest
from PIL import Image as PILImage

from src.exceptions import FormatError, MeshValidationError, MissingInputError
from src.models import Image, TriMesh
from src.parsers.camera_io import load_cameras, save_cameras
from src.parsers.image_io import read_image, write_image
from src.parsers.mesh_io import load_mesh, save_mesh
from src.services.mesh_ops import icosphere
from src.services.projection import look_at


def quantized_sphere(with_colors: bool = False) -> TriMesh:
    """Positions exactly representable in float32, colors on the 8-bit grid"""
    sphere = icosphere(1, 10.0)
    positions = sphere.positions.astype(np.float32).astype(np.float64)
    colors = None
    if with_colors:
        colors = np.random.default_rng(0).integers(0, 256, (sphere.num_vertices, 3)) / 255.0
    return TriMesh(positions=positions, faces=sphere.faces, colors=colors)


@pytest.mark.parametrize("binary", [True, False])
def test_ply_round_trip(tmp_path, binary):
    mesh = quantized_sphere(with_colors=True)
    path = tmp_path / "mesh.ply"
    save_mesh(mesh, path, binary=binary)
    loaded = load_mesh(path)
    assert np.array_equal(loaded.positions, mesh.positions)
    assert np.array_equal(loaded.faces, mesh.faces)
    assert np.allclose(loaded.colors, mesh.colors, atol=1e-12)


def test_obj_round_trip_keeps_full_precision(tmp_path):
    sphere = icosphere(1, 3.3)
    path = tmp_path / "mesh.obj"
    save_mesh(sphere, path)
    loaded = load_mesh(path)
    assert np.array_equal(loaded.positions, sphere.positions)
    assert np.array_equal(loaded.faces, sphere.faces)
    assert loaded.colors is None


def test_obj_quads_are_fan_triangulated(tmp_path):
    path = tmp_path / "quad.obj"
    path.write_text("# unit square\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n")
    mesh = load_mesh(path)
    assert mesh.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_obj_negative_indices(tmp_path):
    path = tmp_path / "tri.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n")
    assert load_mesh(path).faces.tolist() == [[0, 1, 2]]


def test_obj_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "bad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 one 0\nf 1 2 3\n")
    with pytest.raises(FormatError) as err:
        load_mesh(path)
    assert err.value.line == 3
    assert "line 3" in str(err.value)


def test_obj_out_of_range_face_fails_validation(tmp_path):
    path = tmp_path / "bad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\nf 1 2 9\n")
    with pytest.raises(MeshValidationError) as err:
        load_mesh(path)
    assert err.value.faces == [1]


def test_missing_mesh_file(tmp_path):
    with pytest.raises(MissingInputError) as err:
        load_mesh(tmp_path / "nope.ply")
    assert "nope.ply" in str(err.value)


def test_unknown_mesh_extension(tmp_path):
    path = tmp_path / "mesh.stl"
    path.write_text("solid")
    with pytest.raises(FormatError):
        load_mesh(path)


def test_truncated_binary_ply_reports_offset(tmp_path):
    path = tmp_path / "mesh.ply"
    save_mesh(quantized_sphere(), path, binary=True)
    data = path.read_bytes()
    path.write_bytes(data[:-7])
    with pytest.raises(FormatError) as err:
        load_mesh(path)
    assert err.value.offset is not None
    assert err.value.offset <= len(data) - 7


def test_ply_without_header_end(tmp_path):
    path = tmp_path / "mesh.ply"
    path.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 3\n")
    with pytest.raises(FormatError) as err:
        load_mesh(path)
    assert err.value.offset == 0


@pytest.mark.parametrize("suffix", [".ppm", ".png"])
def test_image_round_trip(tmp_path, suffix):
    pixels = np.random.default_rng(1).integers(0, 256, (9, 13, 3), dtype=np.uint8)
    path = tmp_path / f"view{suffix}"
    write_image(Image(pixels=pixels), path)
    assert np.array_equal(read_image(path).pixels, pixels)


def test_sixteen_bit_png_is_rejected(tmp_path):
    path = tmp_path / "deep.png"
    PILImage.fromarray(np.full((4, 4), 40000, dtype=np.uint16)).save(path)
    with pytest.raises(FormatError):
        read_image(path)


def test_sixteen_bit_ppm_is_rejected(tmp_path):
    path = tmp_path / "deep.ppm"
    path.write_bytes(b"P6\n2 2\n65535\n" + bytes(2 * 2 * 3 * 2))
    with pytest.raises(FormatError):
        read_image(path)


def test_truncated_ppm(tmp_path):
    path = tmp_path / "short.ppm"
    path.write_bytes(b"P6\n4 4\n255\n" + bytes(10))
    with pytest.raises(FormatError) as err:
        read_image(path)
    assert err.value.offset is not None


def test_unknown_image_container(tmp_path):
    path = tmp_path / "view.ppm"
    path.write_bytes(b"GIF89a")
    with pytest.raises(FormatError):
        read_image(path)


def test_camera_round_trip(tmp_path):
    up = np.array([0.0, 0.0, 1.0])
    cameras = [
        look_at(np.array([0.0, -300.0, 10.0]), np.zeros(3), up, 100.0, 100.0, 32, 24),
        look_at(np.array([250.0, 40.0, -30.0]), np.zeros(3), up, 90.0, 95.0, 32, 24),
    ]
    path = tmp_path / "cameras.json"
    save_cameras(cameras, path)
    loaded = load_cameras(path)
    assert len(loaded) == 2
    assert loaded[1].width == 32 and loaded[1].height == 24
    assert np.allclose(loaded[0].R, cameras[0].R)
    assert np.allclose(loaded[1].t, cameras[1].t)


def test_camera_file_with_bad_json_reports_line(tmp_path):
    path = tmp_path / "cameras.json"
    path.write_text('{\n  "cameras": [\n    {"fx": 1,,}\n  ]\n}\n')
    with pytest.raises(FormatError) as err:
        load_cameras(path)
    assert err.value.line == 3


def test_camera_file_with_wrong_keys(tmp_path):
    path = tmp_path / "cameras.json"
    path.write_text(json.dumps({"cameras": [{"focal": 1.0}]}))
    with pytest.raises(FormatError):
        load_cameras(path)


def test_missing_camera_file(tmp_path):
    with pytest.raises(MissingInputError):
        load_cameras(tmp_path / "cameras.json")
