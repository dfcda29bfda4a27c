"""
Handcrafted Feature Extractor - 12-channel per-pixel features standing in for a frozen image backbone
"""
import numpy as np
from scipy import ndimage

from src.models import FeatureMap, Image

BLUR_SIGMAS = (2.0, 8.0)
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
SOBEL_MAX_RESPONSE = 4.0 * np.sqrt(2.0)  # |(gx, gy)| for values in [0, 1]
LOCAL_WINDOW = 5
VARIANCE_FLOOR = 1e-12
CHANNELS = 12


def handcrafted_features(image: Image) -> FeatureMap:
    """
    Channels:
        0-2   RGB in [0, 1]
        3-5   RGB Gaussian blur, sigma 2 px
        6-8   RGB Gaussian blur, sigma 8 px
        9     Sobel gradient magnitude of luma / 4 sqrt(2), clamped to [0, 1]
        10    luma standard deviation over a 5x5 window
        11    constant 1.0
    All filters clamp to the edge pixel at borders.
    """
    rgb = image.pixels.astype(np.float64) / 255.0
    H, W, _ = rgb.shape
    out = np.empty((H, W, CHANNELS), dtype=np.float64)
    out[..., 0:3] = rgb
    for i, sigma in enumerate(BLUR_SIGMAS):
        out[..., 3 + 3 * i:6 + 3 * i] = ndimage.gaussian_filter(rgb, sigma=(sigma, sigma, 0), mode="nearest")

    luma = rgb @ LUMA_WEIGHTS
    gx = ndimage.sobel(luma, axis=1, mode="nearest")
    gy = ndimage.sobel(luma, axis=0, mode="nearest")
    out[..., 9] = np.clip(np.hypot(gx, gy) / SOBEL_MAX_RESPONSE, 0.0, 1.0)

    mean = ndimage.uniform_filter(luma, size=LOCAL_WINDOW, mode="nearest")
    mean_sq = ndimage.uniform_filter(luma * luma, size=LOCAL_WINDOW, mode="nearest")
    variance = mean_sq - mean * mean
    variance[variance < VARIANCE_FLOOR] = 0.0
    out[..., 10] = np.sqrt(variance)
    out[..., 11] = 1.0

    np.clip(out[..., 0:9], 0.0, 1.0, out=out[..., 0:9])
    return FeatureMap(data=out.astype(np.float32))
