"""Mosaic-domain processing: dark/exposure correction, raw white balancing,
bilinear demosaicing and spectral crosstalk correction.

All operations are pure; callers may partition images by row ranges and run
them data-parallel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CubeKind, Hypercube, MosaicFrame, ReflectivityFactors
from .errors import CalibrationError, GeometryError


@dataclass
class CrosstalkMatrix:
    """N x N linear map applied to every pixel spectrum (identity = no-op)."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise GeometryError(f"crosstalk matrix must be square, got {self.matrix.shape}")
        if not np.isfinite(self.matrix).all():
            raise ValueError("crosstalk matrix must be finite")

    @classmethod
    def identity(cls, n: int) -> "CrosstalkMatrix":
        return cls(np.eye(n))


@dataclass
class MosaicBalanceResult:
    frame: MosaicFrame
    bad_denominator_count: int


def _require_same_geometry(a: MosaicFrame, b: MosaicFrame, what: str):
    if not a.same_geometry(b):
        raise GeometryError(
            f"{what}: geometry mismatch {a.data.shape} vs {b.data.shape} "
            "or differing band layout"
        )


def dark_exposure_correct(frame: MosaicFrame, dark: MosaicFrame) -> MosaicFrame:
    """Subtract the exposure-scaled dark reference; negatives clamp to 0."""
    _require_same_geometry(frame, dark, "dark_exposure_correct")
    scale = frame.exposure_ms / dark.exposure_ms
    corrected = frame.data.astype(np.float64) - scale * dark.data
    np.maximum(corrected, 0.0, out=corrected)
    return MosaicFrame(
        data=corrected,
        band_layout=frame.band_layout,
        exposure_ms=frame.exposure_ms,
        bit_depth=frame.bit_depth,
    )


def white_balance_mosaic(
    image: MosaicFrame,
    white: MosaicFrame,
    dark: MosaicFrame,
    rho: ReflectivityFactors,
    max_bad_fraction: float = 0.01,
) -> MosaicBalanceResult:
    """Raw-domain white balancing, one band per pixel via the mosaic layout.

    Pixels whose exposure-corrected white minus dark is non-positive are set
    to 0 and counted; more than ``max_bad_fraction`` of them raises.
    """
    _require_same_geometry(image, white, "white_balance_mosaic")
    _require_same_geometry(image, dark, "white_balance_mosaic")
    if rho.n_bands != image.n_bands:
        raise GeometryError(
            f"rho has {rho.n_bands} bands, mosaic pattern has {image.n_bands}"
        )
    dark_scaled = (image.exposure_ms / dark.exposure_ms) * dark.data.astype(np.float64)
    numerator = image.data.astype(np.float64) - dark_scaled
    np.maximum(numerator, 0.0, out=numerator)
    denominator = (image.exposure_ms / white.exposure_ms) * white.data - dark_scaled

    bad = denominator <= 0
    bad_count = int(bad.sum())
    if bad_count > max_bad_fraction * bad.size:
        raise CalibrationError(
            f"{bad_count}/{bad.size} pixels have a non-positive white-minus-dark "
            f"denominator (limit {max_bad_fraction:.0%})"
        )

    rho_map = rho.rho[image.band_map()]
    with np.errstate(divide="ignore", invalid="ignore"):
        balanced = rho_map * numerator / denominator
    balanced[bad] = 0.0

    out = MosaicFrame(
        data=balanced,
        band_layout=image.band_layout,
        exposure_ms=image.exposure_ms,
        bit_depth=image.bit_depth,
    )
    return MosaicBalanceResult(frame=out, bad_denominator_count=bad_count)


def _axis_weights(size: int, offset: int, period: int) -> tuple[np.ndarray, np.ndarray]:
    """Gather indices and interpolation fractions for one axis of one band.

    Native sites sit at offset + period*k; output positions beyond the first
    or last native site clamp to it.
    """
    n_sites = (size - 1 - offset) // period + 1
    pos = (np.arange(size, dtype=np.float64) - offset) / period
    pos = np.clip(pos, 0.0, n_sites - 1.0)
    lo = np.minimum(np.floor(pos).astype(np.int64), max(n_sites - 2, 0))
    frac = pos - lo
    if n_sites == 1:
        lo = np.zeros(size, dtype=np.int64)
        frac = np.zeros(size)
    return lo, frac


def demosaic_bilinear(frame: MosaicFrame, band_centers=None) -> Hypercube:
    """Bilinear interpolation of each band's native sites to full resolution.

    Values at a band's own mosaic sites are reproduced exactly; borders clamp
    to the nearest native site.
    """
    h, w = frame.data.shape
    pr, pc = frame.pattern_rows, frame.pattern_cols
    n = frame.n_bands
    data = frame.data.astype(np.float64)
    out = np.empty((h, w, n), dtype=np.float64)

    row_cache = {r0: _axis_weights(h, r0, pr) for r0 in range(pr)}
    col_cache = {c0: _axis_weights(w, c0, pc) for c0 in range(pc)}

    for r0 in range(pr):
        for c0 in range(pc):
            band = int(frame.band_layout[r0, c0])
            native = data[r0::pr, c0::pc]
            rlo, rfrac = row_cache[r0]
            clo, cfrac = col_cache[c0]
            upper = native[rlo]
            lower = native[np.minimum(rlo + 1, native.shape[0] - 1)]
            rows = upper * (1.0 - rfrac)[:, None] + lower * rfrac[:, None]
            left = rows[:, clo]
            right = rows[:, np.minimum(clo + 1, native.shape[1] - 1)]
            out[:, :, band] = left * (1.0 - cfrac)[None, :] + right * cfrac[None, :]

    return Hypercube(data=out, kind=CubeKind.INTENSITY, band_centers=band_centers)


def crosstalk_correct(cube: Hypercube, correction: CrosstalkMatrix) -> Hypercube:
    """Replace every pixel spectrum by C @ spectrum; cube kind is preserved."""
    if correction.matrix.shape[0] != cube.n_bands:
        raise GeometryError(
            f"crosstalk matrix is {correction.matrix.shape[0]}x"
            f"{correction.matrix.shape[0]}, cube has {cube.n_bands} bands"
        )
    flat = cube.data.reshape(-1, cube.n_bands)
    corrected = flat @ correction.matrix.T
    return Hypercube(
        data=corrected.reshape(cube.data.shape),
        kind=cube.kind,
        band_centers=cube.band_centers,
    )
