"""Exception hierarchy shared by every semsplat module.

ValidationError and BundleError signal bad input (CLI exit code 1);
anything else escaping the CLI is treated as an internal error (exit 2).
"""

from __future__ import annotations


class SemsplatError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(SemsplatError):
    """Input violates a documented precondition."""


class ConfigError(ValidationError):
    pass


class CameraError(ValidationError):
    """Camera intrinsics/extrinsics are malformed."""


class DegenerateCameraError(CameraError):
    """Projective matrix is singular and cannot be inverted."""


class BehindCameraError(CameraError):
    """Point lies on or behind the image plane."""


class ShapeError(ValidationError):
    pass


class EmptyInputError(ValidationError):
    pass


class NonFiniteError(ValidationError):
    pass


class StaleRecordError(ValidationError):
    """A blend record does not belong to the pass it is used with."""


class PlacementError(ValidationError):
    """Procedural scene objects could not be placed without overlap."""


class BundleError(SemsplatError):
    """Scene bundle on disk is invalid. Each subclass has a stable code."""

    code = 1

    def __init__(self, message: str) -> None:
        super().__init__(f"[bundle error {self.code}] {message}")


class MissingFileError(BundleError):
    code = 10


class DimensionMismatchError(BundleError):
    code = 11


class QuaternionNormError(BundleError):
    code = 12


class LabelRangeError(BundleError):
    code = 13


class ManifestError(BundleError):
    code = 14
