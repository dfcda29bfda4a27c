import numpy as np

from src.models import Image
from src.services.feature_extractor import CHANNELS, handcrafted_features


def flat_image(color=(51, 102, 204), size=(16, 20)) -> Image:
    return Image(pixels=np.full(size + (3,), color, dtype=np.uint8))


def test_channel_layout_on_flat_image():
    fmap = handcrafted_features(flat_image())
    assert fmap.channels == CHANNELS
    assert (fmap.height, fmap.width) == (16, 20)
    rgb = np.array([51, 102, 204]) / 255.0
    for offset in (0, 3, 6):
        assert np.allclose(fmap.data[..., offset:offset + 3], rgb, atol=1e-6)
    assert np.allclose(fmap.data[..., 9], 0.0, atol=1e-6)
    assert np.allclose(fmap.data[..., 10], 0.0, atol=1e-6)
    assert np.all(fmap.data[..., 11] == 1.0)


def test_edges_respond_and_values_stay_bounded():
    pixels = np.zeros((24, 24, 3), dtype=np.uint8)
    pixels[:, 12:] = 255
    fmap = handcrafted_features(Image(pixels=pixels))
    assert fmap.data[5, 12, 9] > 0.1
    assert fmap.data[5, 2, 9] == 0.0
    assert fmap.data[5, 11, 10] > 0.0
    assert np.all((fmap.data[..., :10] >= 0.0) & (fmap.data[..., :10] <= 1.0))


def test_features_are_deterministic():
    pixels = np.random.default_rng(0).integers(0, 256, (12, 10, 3), dtype=np.uint8)
    a = handcrafted_features(Image(pixels=pixels))
    b = handcrafted_features(Image(pixels=pixels.copy()))
    assert a.data.dtype == np.float32
    assert np.array_equal(a.data, b.data)
