"""
Image Parser - 8-bit RGB PPM (P6) and PNG via Pillow
"""
from io import BytesIO
from pathlib import Path
import logging

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

from src.exceptions import FormatError, MissingInputError
from src.models import Image

logger = logging.getLogger(__name__)

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _ppm_maxval(data: bytes, path: Path) -> int:
    """Read the maxval field of a P6 header (magic, width, height, maxval)"""
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PPM header", path, offset=pos)
        tokens.append(data[start:pos])
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError("malformed PPM header", path, offset=0) from None
    expected = pos + 1 + width * height * 3 * (1 if maxval < 256 else 2)
    if maxval != 255:
        raise FormatError(f"unsupported PPM maxval {maxval} (only 8-bit, maxval 255)", path, offset=0)
    if len(data) < expected:
        raise FormatError(f"truncated PPM pixel data ({len(data)} of {expected} bytes)", path, offset=len(data))
    return maxval


def read_image(path: str | Path) -> Image:
    """Read an 8-bit RGB image

    Args:
        path: .ppm (P6, maxval 255) or .png (8-bit RGB/RGBA/palette/gray)

    Returns:
        Image with (H, W, 3) uint8 pixels

    Raises:
        MissingInputError: file does not exist
        FormatError: unsupported bit depth, unsupported container, or truncated file
    """
    path = Path(path)
    if not path.exists():
        raise MissingInputError(path, "image")
    data = path.read_bytes()

    if data.startswith(b"P6"):
        _ppm_maxval(data, path)
    elif data.startswith(PNG_SIGNATURE):
        if len(data) < 26:
            raise FormatError("truncated PNG header", path, offset=len(data))
        bit_depth = data[24]
        if bit_depth != 8:
            raise FormatError(f"unsupported PNG bit depth {bit_depth} (only 8-bit)", path, offset=24)
    else:
        raise FormatError("unsupported image container (expected P6 PPM or PNG)", path, offset=0)

    try:
        with PILImage.open(BytesIO(data)) as img:
            img.load()
            if img.mode not in ("RGB", "RGBA", "P", "L"):
                raise FormatError(f"unsupported image mode '{img.mode}'", path)
            pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError, SyntaxError) as e:
        raise FormatError(f"cannot decode image: {e}", path) from e

    return Image(pixels=np.ascontiguousarray(pixels))


def write_image(image: Image, path: str | Path) -> None:
    """Write PPM (P6) or PNG depending on the extension"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fmt = {".ppm": "PPM", ".png": "PNG"}.get(path.suffix.lower())
    if fmt is None:
        raise FormatError(f"unsupported image extension '{path.suffix}'", path)
    PILImage.fromarray(np.asarray(image.pixels, dtype=np.uint8), mode="RGB").save(path, format=fmt)
