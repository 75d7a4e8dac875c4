"""Exception types shared across the package."""


class LayervecError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(LayervecError):
    """A value violates a documented precondition or type invariant."""


class DecodeError(LayervecError):
    """A file exists but cannot be parsed (bad PNG, malformed JSON or SVG)."""


class ShapeMismatchError(ValidationError):
    """Two arrays that must share dimensions do not."""


class EmptyMaskError(ValidationError):
    """A mask with no foreground pixels where at least one is required."""


class DegenerateShapeError(ValidationError):
    """A polyline or path too small to form a closed shape."""


class InvalidSceneError(ValidationError):
    """A scene violates one of its structural invariants."""


class ManifestError(ValidationError):
    """A sequence, mask, or scene manifest is inconsistent or incomplete."""


class UnsupportedSvgError(DecodeError):
    """An SVG construct outside the dialect this package writes."""

    def __init__(self, feature: str):
        super().__init__(f"unsupported SVG feature: {feature}")
        self.feature = feature


class DivergenceError(LayervecError):
    """Optimization loss exceeded the divergence guard."""
