"""Exception hierarchy shared across the package."""


class MyosynthError(Exception):
    """Base class for all package errors."""


class DomainError(MyosynthError):
    """Argument outside its mathematical domain (e.g. |t| > 1)."""


class ConfigError(MyosynthError):
    """Inconsistent or out-of-range configuration values."""


class SchemaError(ConfigError):
    """Config/manifest document violates the schema; carries a field path."""

    def __init__(self, field_path, message):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


class DegenerateError(MyosynthError):
    """Numerically degenerate geometry (zero-length tangent, zero-variance data)."""


class PlacementError(MyosynthError):
    """Feature placement constraints could not be satisfied."""


class ShapeMismatchError(MyosynthError):
    """Volumes with incompatible shapes were combined."""


# Alias used by the rasterizer when scene and grid disagree.
GridMismatchError = ShapeMismatchError
MismatchedShapeError = ShapeMismatchError


class EmptyGtError(MyosynthError):
    """Ground-truth volume contains no annotated instances."""


class UnsupportedTiffFeature(MyosynthError):
    """TIFF file uses a feature outside the supported baseline subset."""


class CorruptHeader(MyosynthError):
    """File header is malformed."""


class LengthMismatch(MyosynthError):
    """Raw payload length disagrees with the sidecar header."""


class BadSidecar(MyosynthError):
    """Sidecar JSON is missing or malformed."""
