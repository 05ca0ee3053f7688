"""Exception hierarchy shared by the generation, tracing and statistics layers."""

from __future__ import annotations


class FoliageError(Exception):
    """Base class for every error raised by this package."""


class ParameterRangeError(FoliageError, ValueError):
    """Raised when a numeric argument is outside its admissible range."""

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field


class MeshError(FoliageError):
    """Raised for structurally invalid triangle meshes."""


class NonWatertightMeshError(MeshError):
    def __init__(self, open_edges: int) -> None:
        super().__init__(f"mesh is not watertight ({open_edges} edges not shared by exactly 2 faces)")
        self.open_edges = open_edges


class DegenerateVolumeError(MeshError):
    """Raised when an enclosed volume is too small to rescale or sample."""


class RejectionBudgetError(FoliageError):
    """Raised when rejection sampling exceeds its consecutive-rejection budget."""


class AmbiguousCrossingError(FoliageError):
    """Raised when a containment ray grazes an edge or vertex; callers retry."""


class TraceError(FoliageError):
    """Raised when the ray engine cannot produce a valid result."""


class NonFiniteAmplitudeError(TraceError):
    """Raised when a path amplitude is NaN/inf, which signals degenerate geometry."""


class ChannelError(FoliageError):
    """Base class for channel statistics errors."""


class EmptyInputError(ChannelError, ValueError):
    """Raised when a statistic is requested on an empty input."""


class GridMismatchError(ChannelError):
    """Raised when delay grids cannot be resampled onto a common lattice."""


class ZeroPowerError(ChannelError):
    """Raised when a power-based statistic sees zero total power."""


class ConfigError(FoliageError):
    """Raised for malformed or out-of-range run configuration."""

    def __init__(self, message: str, *, line: int | None = None, field: str | None = None) -> None:
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field is not None:
            location.append(f"field '{field}'")
        prefix = f"[{', '.join(location)}] " if location else ""
        super().__init__(f"{prefix}{message}")
        self.line = line
        self.field = field
