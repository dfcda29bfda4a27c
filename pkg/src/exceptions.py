"""
Error hierarchy

Validation failures (bad inputs, formats, configs) map to CLI exit code 1,
runtime failures (solver/training breakdowns) to exit code 2.
"""
from pathlib import Path
from typing import Sequence


class ScanSegError(Exception):
    """Base class for all pipeline errors"""


class ValidationFailure(ScanSegError, ValueError):
    """Input did not satisfy a documented precondition"""


class ArgumentError(ValidationFailure):
    """Invalid argument passed to an operation"""


class ConfigError(ValidationFailure):
    """Configuration file or flag combination is invalid"""


class FormatError(ValidationFailure):
    """File could not be parsed

    Attributes:
        path: File being read (if known)
        offset: Byte offset of the failure (binary formats)
        line: 1-based line number of the failure (text formats)
    """

    def __init__(
        self,
        message: str,
        path: str | Path | None = None,
        offset: int | None = None,
        line: int | None = None,
    ):
        self.path = str(path) if path is not None else None
        self.offset = offset
        self.line = line
        location = []
        if self.path:
            location.append(self.path)
        if line is not None:
            location.append(f"line {line}")
        if offset is not None:
            location.append(f"byte offset {offset}")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")


class MeshValidationError(ValidationFailure):
    """Mesh violates TriMesh invariants

    Attributes:
        faces: Indices of offending faces (may be empty for vertex-level errors)
    """

    def __init__(self, message: str, faces: Sequence[int] = ()):
        self.faces = list(faces)
        shown = self.faces[:20]
        suffix = ""
        if shown:
            more = f" (+{len(self.faces) - len(shown)} more)" if len(self.faces) > len(shown) else ""
            suffix = f"; offending faces: {shown}{more}"
        super().__init__(f"{message}{suffix}")


class MissingInputError(ValidationFailure, FileNotFoundError):
    """A required input file is absent"""

    def __init__(self, path: str | Path, what: str = "input file"):
        self.path = str(path)
        super().__init__(f"Missing {what}: {self.path}")

    def __str__(self) -> str:
        return self.args[0]


class ScanSegRuntimeError(ScanSegError, RuntimeError):
    """Computation failed after valid inputs were accepted"""


class ConvergenceError(ScanSegRuntimeError):
    """Iterative solver did not converge

    Attributes:
        residuals: Residual norms at the time of failure
    """

    def __init__(self, message: str, residuals: Sequence[float] = ()):
        self.residuals = list(residuals)
        super().__init__(message)


class DegenerateSpectrumError(ScanSegRuntimeError):
    """Spectrum has no usable nonzero eigenvalue"""


class TrainingDivergedError(ScanSegRuntimeError):
    """Loss became non-finite during training

    Attributes:
        parameter_norms: L2 norm per parameter tensor
        learning_rate: Learning rate in effect
    """

    def __init__(self, message: str, parameter_norms: dict[str, float], learning_rate: float):
        self.parameter_norms = parameter_norms
        self.learning_rate = learning_rate
        worst = sorted(parameter_norms.items(), key=lambda kv: -kv[1])[:5]
        super().__init__(f"{message} (lr={learning_rate}, largest parameter norms: {worst})")
