"""Core domain types: mosaic frames and videos, hypercubes, sampled spectra.

All types validate their structural invariants at construction and are
treated as immutable afterwards, so they can be shared freely between
data-parallel workers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError


class CubeKind(enum.IntEnum):
    """Payload semantics of a hypercube; the integer value is the on-disk tag."""

    INTENSITY = 0
    REFLECTANCE = 1
    RELATIVE = 2


def _as_layout(band_layout) -> np.ndarray:
    layout = np.asarray(band_layout, dtype=np.int64)
    if layout.ndim != 2:
        raise GeometryError("band_layout must be a 2-D (pattern_rows, pattern_cols) array")
    n = layout.size
    if sorted(layout.ravel().tolist()) != list(range(n)):
        raise ValueError("band_layout must be a bijection onto 0..N-1")
    return layout


@dataclass
class MosaicFrame:
    """A single raw snapshot-mosaic frame.

    ``data`` holds raw counts as real numbers (dark/exposure arithmetic keeps
    them real); the band captured at pixel (x, y) is
    ``band_layout[x % pattern_rows, y % pattern_cols]``.
    """

    data: np.ndarray
    band_layout: np.ndarray
    exposure_ms: float
    bit_depth: int = 10

    def __post_init__(self):
        self.data = np.asarray(self.data)
        self.band_layout = _as_layout(self.band_layout)
        if self.data.ndim != 2:
            raise GeometryError(f"frame data must be 2-D, got shape {self.data.shape}")
        h, w = self.data.shape
        pr, pc = self.band_layout.shape
        if h == 0 or w == 0 or h % pr != 0 or w % pc != 0:
            raise GeometryError(
                f"frame shape {h}x{w} is not a positive multiple of the {pr}x{pc} pattern"
            )
        if not self.exposure_ms > 0:
            raise ValueError(f"exposure_ms must be positive, got {self.exposure_ms}")
        if self.bit_depth <= 0:
            raise ValueError(f"bit_depth must be positive, got {self.bit_depth}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def pattern_rows(self) -> int:
        return self.band_layout.shape[0]

    @property
    def pattern_cols(self) -> int:
        return self.band_layout.shape[1]

    @property
    def n_bands(self) -> int:
        return self.band_layout.size

    def band_map(self) -> np.ndarray:
        """Per-pixel band index, shape (height, width)."""
        reps = (self.height // self.pattern_rows, self.width // self.pattern_cols)
        return np.tile(self.band_layout, reps)

    def full_scale(self) -> float:
        return float(2 ** self.bit_depth - 1)

    def validate_counts(self):
        """Raw-count range check used at ingestion time."""
        lo = self.data.min()
        hi = self.data.max()
        if lo < 0 or hi > self.full_scale():
            raise ValueError(
                f"raw counts outside [0, {self.full_scale():g}]: min={lo:g} max={hi:g}"
            )

    def same_geometry(self, other: "MosaicFrame") -> bool:
        return (
            self.data.shape == other.data.shape
            and np.array_equal(self.band_layout, other.band_layout)
        )


@dataclass
class MosaicVideo:
    """An ordered stack of mosaic frames sharing geometry, layout and exposure.

    Frames are stored as one (frame_count, height, width) float32 block; use
    :meth:`frame` for a per-frame view.
    """

    data: np.ndarray
    band_layout: np.ndarray
    exposure_ms: float
    bit_depth: int = 10

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        self.band_layout = _as_layout(self.band_layout)
        if self.data.ndim != 3:
            raise GeometryError(f"video data must be 3-D, got shape {self.data.shape}")
        t, h, w = self.data.shape
        pr, pc = self.band_layout.shape
        if t < 1:
            raise GeometryError("video must contain at least one frame")
        if h == 0 or w == 0 or h % pr != 0 or w % pc != 0:
            raise GeometryError(
                f"frame shape {h}x{w} is not a positive multiple of the {pr}x{pc} pattern"
            )
        if not self.exposure_ms > 0:
            raise ValueError(f"exposure_ms must be positive, got {self.exposure_ms}")

    @property
    def frame_count(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def n_bands(self) -> int:
        return self.band_layout.size

    def frame(self, k: int) -> MosaicFrame:
        return MosaicFrame(
            data=self.data[k],
            band_layout=self.band_layout,
            exposure_ms=self.exposure_ms,
            bit_depth=self.bit_depth,
        )


@dataclass
class Hypercube:
    """Demosaiced (height, width, bands) data, the central processing object."""

    data: np.ndarray
    kind: CubeKind = CubeKind.INTENSITY
    band_centers: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        self.kind = CubeKind(self.kind)
        if self.data.ndim != 3:
            raise GeometryError(f"cube data must be 3-D, got shape {self.data.shape}")
        if min(self.data.shape) == 0:
            raise GeometryError("cube dimensions must be positive")
        n = self.data.shape[2]
        if self.band_centers is None:
            # placeholder indices when the true wavelengths are unknown
            self.band_centers = np.arange(n, dtype=np.float64)
        else:
            self.band_centers = np.asarray(self.band_centers, dtype=np.float64)
            if self.band_centers.shape != (n,):
                raise GeometryError(
                    f"band_centers must have length {n}, got {self.band_centers.shape}"
                )

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def n_bands(self) -> int:
        return self.data.shape[2]

    def validate_values(self, atol: float = 1e-6) -> int:
        """Kind-specific value checks.

        For reflectance cubes: values must be finite and non-negative; returns
        the number of values above 1 (permitted, but worth flagging).  For
        relative cubes: every nonzero pixel must have mean absolute value 1
        within ``atol``; returns the count of zero (masked) pixels.
        """
        if self.kind == CubeKind.REFLECTANCE:
            if not np.isfinite(self.data).all():
                raise ValueError("reflectance cube contains non-finite values")
            if self.data.min() < 0:
                raise ValueError("reflectance cube contains negative values")
            return int((self.data > 1.0).sum())
        if self.kind == CubeKind.RELATIVE:
            norms = np.abs(self.data).mean(axis=2)
            nonzero = norms > 0
            if nonzero.any() and np.abs(norms[nonzero] - 1.0).max() > atol:
                raise ValueError(
                    "relative cube violates the mean-abs-1 normalization invariant"
                )
            return int((~nonzero).sum())
        return 0


@dataclass
class SampledSpectrum:
    """A wavelength-sampled curve with strictly increasing wavelengths."""

    wavelengths_nm: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.wavelengths_nm = np.asarray(self.wavelengths_nm, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.wavelengths_nm.ndim != 1 or self.wavelengths_nm.shape != self.values.shape:
            raise ValueError("wavelengths and values must be 1-D arrays of equal length")
        if self.wavelengths_nm.size < 2:
            raise ValueError("a sampled spectrum needs at least 2 samples")
        if not (np.diff(self.wavelengths_nm) > 0).all():
            raise ValueError("wavelengths must be strictly increasing")
        if not np.isfinite(self.values).all() or not np.isfinite(self.wavelengths_nm).all():
            raise ValueError("spectrum samples must be finite")

    @property
    def support(self) -> tuple[float, float]:
        return float(self.wavelengths_nm[0]), float(self.wavelengths_nm[-1])

    def value_at(self, lam) -> np.ndarray:
        """Linear interpolation; clamps to the endpoints outside the support."""
        return np.interp(lam, self.wavelengths_nm, self.values)

    def covers(self, lo: float, hi: float) -> bool:
        return self.wavelengths_nm[0] <= lo and hi <= self.wavelengths_nm[-1]


@dataclass
class BandResponseSet:
    """Per-band spectral responses b_n(lambda), one sampled curve per band."""

    responses: list[SampledSpectrum] = field(default_factory=list)

    def __post_init__(self):
        if not self.responses:
            raise ValueError("band response set must not be empty")
        for n, resp in enumerate(self.responses):
            if resp.values.min() < 0:
                raise ValueError(f"band {n} response has negative samples")
            if np.trapezoid(resp.values, resp.wavelengths_nm) <= 0:
                raise ValueError(f"band {n} response has non-positive integral")

    @property
    def n_bands(self) -> int:
        return len(self.responses)

    def band_centers(self) -> np.ndarray:
        """Centroid wavelength of each response (the default cube band centers)."""
        centers = np.empty(self.n_bands)
        for n, resp in enumerate(self.responses):
            w = np.trapezoid(resp.values, resp.wavelengths_nm)
            centers[n] = np.trapezoid(
                resp.values * resp.wavelengths_nm, resp.wavelengths_nm
            ) / w
        return centers


@dataclass
class ReflectivityFactors:
    """Per-band reflectivity factors of the reference object."""

    rho: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=np.float64)
        if self.rho.ndim != 1 or self.rho.size == 0:
            raise ValueError("rho must be a non-empty 1-D array")
        if not ((self.rho > 0) & (self.rho <= 1)).all():
            raise ValueError("reflectivity factors must lie in (0, 1]")

    @property
    def n_bands(self) -> int:
        return self.rho.size


@dataclass
class ContentMask:
    """Circular content area produced by imaging through a scope.

    ``radius`` is the detected disk radius; the disk actually used for masking
    is shrunk by ``shrink_factor`` to discount edge effects.
    """

    center_i: float
    center_j: float
    radius: float
    shrink_factor: float = 0.9
    full_frame: bool = False

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not 0 < self.shrink_factor <= 1:
            raise ValueError("shrink_factor must lie in (0, 1]")

    @property
    def effective_radius(self) -> float:
        return self.radius * self.shrink_factor

    def to_mask(self, height: int, width: int) -> np.ndarray:
        """Boolean (height, width) array, True inside the shrunk disk."""
        if self.full_frame:
            return np.ones((height, width), dtype=bool)
        ii = np.arange(height, dtype=np.float64)[:, None] - self.center_i
        jj = np.arange(width, dtype=np.float64)[None, :] - self.center_j
        return ii * ii + jj * jj <= self.effective_radius ** 2
