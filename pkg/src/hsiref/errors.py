"""Exception types shared across the toolkit."""


class HsirefError(Exception):
    """Base class for all toolkit errors."""


class FormatError(HsirefError):
    """Malformed binary file; carries the byte offset of the defect."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class SpectrumParseError(HsirefError):
    """Malformed CSV spectrum; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.line = line


class GeometryError(HsirefError):
    """Array shapes or mosaic layouts that do not match."""


class CalibrationError(HsirefError):
    """Reference data unusable for balancing (e.g. too many bad denominators)."""


class CoverageError(HsirefError):
    """Sweep video left too much of the frame without reference coverage."""

    def __init__(self, message: str, invalid_fraction: float | None = None):
        super().__init__(message)
        self.invalid_fraction = invalid_fraction


class DetectionError(HsirefError):
    """Content-area detection failed; a manual mask is required."""


class DegenerateInputError(HsirefError):
    """Input carries no usable structure (e.g. constant values for Otsu)."""


class SupportError(HsirefError):
    """A sampled spectrum does not cover the wavelength range it must."""
