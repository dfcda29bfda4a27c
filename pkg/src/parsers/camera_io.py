"""
Camera File Parser - {"cameras": [{fx, fy, cx, cy, R, t, width, height}, ...]}
"""
import json
from pathlib import Path
from typing import List

from pydantic import ValidationError

from src.exceptions import FormatError, MissingInputError
from src.models import Camera, CameraSet


def load_cameras(path: str | Path) -> List[Camera]:
    """Read and validate a camera file

    Raises:
        MissingInputError: file does not exist
        FormatError: invalid JSON or schema violation (key names are normative)
    """
    path = Path(path)
    if not path.exists():
        raise MissingInputError(path, "camera file")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"invalid JSON: {e.msg}", path, line=e.lineno) from e
    try:
        return list(CameraSet.model_validate(document).cameras)
    except ValidationError as e:
        raise FormatError(f"invalid camera file: {e}", path) from e


def save_cameras(cameras: List[Camera], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = CameraSet(cameras=cameras).model_dump(mode="json")
    path.write_text(json.dumps(document, indent=2), encoding="utf-8")
