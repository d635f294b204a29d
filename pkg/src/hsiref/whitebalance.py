"""Hypercube white balancing: quantitative (measured or synthetic reference)
and relative (spectral sensitivities only).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ContentMask, CubeKind, Hypercube, ReflectivityFactors
from .errors import CalibrationError, GeometryError
from .refmodel import WhiteReferenceModel, render_reference


@dataclass
class CubeBalanceResult:
    cube: Hypercube
    bad_denominator_count: int = 0
    over_unity_count: int = 0
    masked_out_count: int = 0
    zero_spectrum_count: int = 0


def _check_same_shape(a: Hypercube, b: Hypercube, what: str):
    if a.data.shape != b.data.shape:
        raise GeometryError(f"{what}: {a.data.shape} vs {b.data.shape}")


def _balance_arrays(
    image: np.ndarray,
    white: np.ndarray,
    dark: np.ndarray | None,
    rho: np.ndarray,
    exposures: tuple[float, float, float],
    inside: np.ndarray | None,
    max_bad_fraction: float,
) -> tuple[np.ndarray, int, int]:
    tau_i, tau_w, tau_d = exposures
    if min(tau_i, tau_w, tau_d) <= 0:
        raise ValueError(f"exposures must be positive, got {exposures}")
    if dark is None:
        dark_scaled = 0.0
    else:
        dark_scaled = (tau_i / tau_d) * dark
    numerator = image - dark_scaled
    np.maximum(numerator, 0.0, out=numerator)
    denominator = (tau_i / tau_w) * white - dark_scaled

    bad = denominator <= 0
    if inside is not None:
        bad = bad & inside[:, :, None]
    bad_count = int(bad.sum())
    considered = int(inside.sum()) * image.shape[2] if inside is not None else bad.size
    if considered == 0:
        raise CalibrationError("content mask excludes every pixel")
    if bad_count > max_bad_fraction * considered:
        raise CalibrationError(
            f"{bad_count}/{considered} values have a non-positive "
            f"white-minus-dark denominator (limit {max_bad_fraction:.0%})"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        out = rho[None, None, :] * numerator / denominator
    out[denominator <= 0] = 0.0
    masked_out = 0
    if inside is not None:
        outside = ~inside
        masked_out = int(outside.sum()) * image.shape[2]
        out[outside] = 0.0
    return out, bad_count, masked_out


def white_balance_cube(
    image: Hypercube,
    white: Hypercube,
    dark: Hypercube | None,
    rho: ReflectivityFactors | None = None,
    exposures: tuple[float, float, float] = (1.0, 1.0, 1.0),
    max_bad_fraction: float = 0.01,
) -> CubeBalanceResult:
    """Pointwise reflectance estimate from measured white/dark references.

    Negative numerators clamp to 0; values with a non-positive denominator
    become 0 and are counted (more than ``max_bad_fraction`` raises).
    ``dark=None`` means an ideal zero dark reference; ``rho=None`` means the
    reference reflectivity is already compensated.
    """
    _check_same_shape(image, white, "image vs white")
    if dark is not None:
        _check_same_shape(image, dark, "image vs dark")
    n = image.n_bands
    rho_arr = np.ones(n) if rho is None else rho.rho
    if rho_arr.size != n:
        raise GeometryError(f"rho has {rho_arr.size} bands, cube has {n}")
    out, bad_count, _ = _balance_arrays(
        image.data.astype(np.float64),
        white.data,
        None if dark is None else dark.data,
        rho_arr,
        exposures,
        None,
        max_bad_fraction,
    )
    cube = Hypercube(data=out, kind=CubeKind.REFLECTANCE,
                     band_centers=image.band_centers)
    return CubeBalanceResult(
        cube=cube,
        bad_denominator_count=bad_count,
        over_unity_count=int((out > 1.0).sum()),
    )


def balance_with_synthetic(
    image: Hypercube,
    model: WhiteReferenceModel,
    dark: Hypercube | None = None,
    exposures: tuple[float, float, float] = (1.0, 1.0, 1.0),
    mask: ContentMask | None = None,
    max_bad_fraction: float = 0.01,
) -> CubeBalanceResult:
    """Quantitative balancing against a rendered synthetic reference.

    The model's reflectivity correction already happened at the composite
    stage, so no rho enters here.  Pixels outside the content mask are zeroed
    and counted separately from bad denominators.
    """
    if model.n_bands != image.n_bands:
        raise GeometryError(
            f"model has {model.n_bands} bands, image has {image.n_bands}"
        )
    if dark is not None:
        _check_same_shape(image, dark, "image vs dark")
    white = render_reference(model, image.height, image.width, mask=None)
    inside = mask.to_mask(image.height, image.width) if mask is not None else None
    out, bad_count, masked_out = _balance_arrays(
        image.data.astype(np.float64),
        white.data,
        None if dark is None else dark.data,
        np.ones(image.n_bands),
        exposures,
        inside,
        max_bad_fraction,
    )
    cube = Hypercube(data=out, kind=CubeKind.REFLECTANCE,
                     band_centers=image.band_centers)
    return CubeBalanceResult(
        cube=cube,
        bad_denominator_count=bad_count,
        over_unity_count=int((out > 1.0).sum()),
        masked_out_count=masked_out,
    )


def balance_relative(
    image: Hypercube,
    sensitivities: np.ndarray,
    dark: Hypercube | None = None,
) -> CubeBalanceResult:
    """Sensitivity-only balancing producing mean-1-normalized relative spectra.

    Each (dark-corrected) spectrum is divided bandwise by S and normalized so
    its mean absolute value is 1; all-zero spectra stay zero and are counted.
    """
    s = np.asarray(sensitivities, dtype=np.float64)
    if s.ndim != 1 or s.size != image.n_bands:
        raise GeometryError(f"sensitivities must have length {image.n_bands}")
    if (s <= 0).any():
        raise ValueError("sensitivities must be strictly positive")
    if abs(s.mean() - 1.0) > 1e-6:
        raise ValueError(f"sensitivities must have mean 1, got {s.mean()!r}")
    data = image.data.astype(np.float64)
    if dark is not None:
        _check_same_shape(image, dark, "image vs dark")
        data = np.maximum(data - dark.data, 0.0)
    divided = data / s[None, None, :]
    norm = np.abs(divided).mean(axis=2)
    zero = norm == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = divided / norm[:, :, None]
    out[zero] = 0.0
    cube = Hypercube(data=out, kind=CubeKind.RELATIVE,
                     band_centers=image.band_centers)
    return CubeBalanceResult(cube=cube, zero_spectrum_count=int(zero.sum()))


def sensitivities_from_roi(
    image: Hypercube,
    center: tuple[float, float],
    radius: float = 150.0,
    rho: ReflectivityFactors | None = None,
) -> np.ndarray:
    """Mean-1 spectral sensitivities from a disk ROI of a reference image.

    The bandwise ROI mean is divided by the reference reflectivity factors
    and renormalized to mean 1.
    """
    ci, cj = center
    if not (0 <= ci - radius and ci + radius <= image.height - 1
            and 0 <= cj - radius and cj + radius <= image.width - 1):
        raise GeometryError(
            f"ROI center {center} radius {radius} exceeds image "
            f"{image.height}x{image.width}"
        )
    ii = np.arange(image.height, dtype=np.float64)[:, None] - ci
    jj = np.arange(image.width, dtype=np.float64)[None, :] - cj
    sel = ii * ii + jj * jj <= radius * radius
    spectrum = image.data[sel].mean(axis=0)
    if rho is not None:
        if rho.n_bands != image.n_bands:
            raise GeometryError(
                f"rho has {rho.n_bands} bands, cube has {image.n_bands}"
            )
        spectrum = spectrum / rho.rho
    mean = spectrum.mean()
    if mean <= 0:
        raise ValueError("ROI spectrum has non-positive mean")
    return spectrum / mean
