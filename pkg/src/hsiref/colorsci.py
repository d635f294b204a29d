"""Colorimetry: camera spectra to CIEXYZ, sRGB and CIELAB, and the CIEDE2000
color difference.

All conversions use the D65 white point for the 2-degree observer.  Scalar
operations work on tagged ColorTriple values; array versions back the
per-pixel image paths.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import BandResponseSet, ContentMask, CubeKind, Hypercube, SampledSpectrum
from .errors import GeometryError
from .refmodel import band_averages

D65_WHITE = (0.95047, 1.0, 1.08883)


def _srgb_conversion_matrix() -> np.ndarray:
    """XYZ -> linear sRGB, derived from the IEC 61966-2-1 primaries and the
    D65 white point at full precision (so the white point maps exactly to
    (1, 1, 1)); agrees with the usual tabulated matrix to ~1e-5."""
    primaries = np.array([[0.64, 0.33], [0.30, 0.60], [0.15, 0.06]])
    directions = np.stack(
        [primaries[:, 0] / primaries[:, 1],
         np.ones(3),
         (1.0 - primaries.sum(axis=1)) / primaries[:, 1]]
    )  # columns are the primaries' XYZ directions
    scale = np.linalg.solve(directions, np.asarray(D65_WHITE))
    return np.linalg.inv(directions * scale[None, :])


_XYZ_TO_LINEAR_SRGB = _srgb_conversion_matrix()

_TWENTYFIVE_POW7 = 25.0 ** 7


class ColorSpace(enum.Enum):
    XYZ = "XYZ"
    LINEAR_SRGB = "linear_sRGB"
    SRGB = "sRGB"
    LAB = "Lab"


@dataclass
class ColorTriple:
    space: ColorSpace
    c1: float
    c2: float
    c3: float
    gamut_clipped: bool = False

    def __post_init__(self):
        if self.space in (ColorSpace.SRGB,):
            for c in (self.c1, self.c2, self.c3):
                if not 0.0 <= c <= 1.0:
                    raise ValueError(f"sRGB components must lie in [0, 1], got {c}")

    def as_array(self) -> np.ndarray:
        return np.array([self.c1, self.c2, self.c3])


@dataclass
class ColorMatrix:
    """3 x N map from a camera spectrum to CIEXYZ."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != 3:
            raise GeometryError(f"color matrix must be 3xN, got {self.matrix.shape}")
        if not np.isfinite(self.matrix).all():
            raise ValueError("color matrix must be finite")

    @property
    def n_bands(self) -> int:
        return self.matrix.shape[1]


def _asymmetric_gaussian(lam, mu, sigma_left, sigma_right):
    lam = np.asarray(lam, dtype=np.float64)
    sigma = np.where(lam < mu, sigma_left, sigma_right)
    t = (lam - mu) / sigma
    return np.exp(-0.5 * t * t)


def cie1931_cmfs(wavelengths_nm=None):
    """CIE 1931 2-degree color matching functions (multi-lobe Gaussian fit).

    Returns (x, y, z) as SampledSpectrum on the given grid (default 360-830 nm
    at 1 nm).
    """
    if wavelengths_nm is None:
        wavelengths_nm = np.arange(360.0, 831.0)
    lam = np.asarray(wavelengths_nm, dtype=np.float64)
    x = (
        1.056 * _asymmetric_gaussian(lam, 599.8, 37.9, 31.0)
        + 0.362 * _asymmetric_gaussian(lam, 442.0, 16.0, 26.7)
        - 0.065 * _asymmetric_gaussian(lam, 501.1, 20.4, 26.2)
    )
    y = (
        0.821 * _asymmetric_gaussian(lam, 568.8, 46.9, 40.5)
        + 0.286 * _asymmetric_gaussian(lam, 530.9, 16.3, 31.1)
    )
    z = (
        1.217 * _asymmetric_gaussian(lam, 437.0, 11.8, 36.0)
        + 0.681 * _asymmetric_gaussian(lam, 459.0, 26.0, 13.8)
    )
    return (
        SampledSpectrum(lam, x),
        SampledSpectrum(lam, y),
        SampledSpectrum(lam, z),
    )


def camera_matrix_from_cmfs(
    bands: BandResponseSet,
    cmfs: tuple[SampledSpectrum, SampledSpectrum, SampledSpectrum],
    white=D65_WHITE,
) -> ColorMatrix:
    """Band-average the color matching functions, then scale each row so a
    flat unit spectrum maps exactly to the white point (hence Y=1 and flat
    reflectance renders as display white)."""
    raw = np.stack([band_averages(cmf, bands) for cmf in cmfs])  # (3, N)
    sums = raw.sum(axis=1)
    if (sums <= 0).any():
        raise ValueError("degenerate camera matrix: a CMF row integrates to zero")
    scale = np.asarray(white, dtype=np.float64) / sums
    return ColorMatrix(raw * scale[:, None])


# ---------------------------------------------------------------------------
# array conversions
# ---------------------------------------------------------------------------

def xyz_to_linear_srgb_array(xyz: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Returns (rgb, clipped) where clipped marks out-of-gamut pixels."""
    rgb = np.asarray(xyz, dtype=np.float64) @ _XYZ_TO_LINEAR_SRGB.T
    clipped = (rgb < 0).any(axis=-1)
    return np.maximum(rgb, 0.0), clipped


def gamma_encode_array(linear: np.ndarray) -> np.ndarray:
    v = np.clip(np.asarray(linear, dtype=np.float64), 0.0, None)
    encoded = np.where(
        v <= 0.0031308, 12.92 * v, 1.055 * np.power(v, 1.0 / 2.4) - 0.055
    )
    return np.clip(encoded, 0.0, 1.0)


def _lab_f(t: np.ndarray) -> np.ndarray:
    delta = 6.0 / 29.0
    return np.where(t > delta ** 3, np.cbrt(t), t / (3.0 * delta ** 2) + 4.0 / 29.0)


def xyz_to_lab_array(xyz: np.ndarray, white=D65_WHITE) -> np.ndarray:
    xyz = np.asarray(xyz, dtype=np.float64)
    ratios = xyz / np.asarray(white, dtype=np.float64)
    fx, fy, fz = (_lab_f(ratios[..., c]) for c in range(3))
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * fy - 16.0
    lab[..., 1] = 500.0 * (fx - fy)
    lab[..., 2] = 200.0 * (fy - fz)
    return lab


def ciede2000_array(lab1: np.ndarray, lab2: np.ndarray) -> np.ndarray:
    """CIEDE2000 with kL = kC = kH = 1, hue arithmetic in degrees."""
    lab1 = np.asarray(lab1, dtype=np.float64)
    lab2 = np.asarray(lab2, dtype=np.float64)
    l1, a1, b1 = lab1[..., 0], lab1[..., 1], lab1[..., 2]
    l2, a2, b2 = lab2[..., 0], lab2[..., 1], lab2[..., 2]

    c1 = np.hypot(a1, b1)
    c2 = np.hypot(a2, b2)
    c_bar = 0.5 * (c1 + c2)
    c_bar7 = c_bar ** 7
    g = 0.5 * (1.0 - np.sqrt(c_bar7 / (c_bar7 + _TWENTYFIVE_POW7)))
    a1p = (1.0 + g) * a1
    a2p = (1.0 + g) * a2
    c1p = np.hypot(a1p, b1)
    c2p = np.hypot(a2p, b2)
    h1p = np.degrees(np.arctan2(b1, a1p)) % 360.0
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360.0

    dl = l2 - l1
    dc = c2p - c1p
    zero_chroma = (c1p * c2p) == 0.0
    hdiff = h2p - h1p
    hdiff = np.where(hdiff > 180.0, hdiff - 360.0, hdiff)
    hdiff = np.where(hdiff < -180.0, hdiff + 360.0, hdiff)
    hdiff = np.where(zero_chroma, 0.0, hdiff)
    dh_term = 2.0 * np.sqrt(c1p * c2p) * np.sin(np.radians(0.5 * hdiff))

    l_bar = 0.5 * (l1 + l2)
    cp_bar = 0.5 * (c1p + c2p)
    hsum = h1p + h2p
    habs = np.abs(h1p - h2p)
    h_bar = np.where(
        zero_chroma,
        hsum,
        np.where(
            habs <= 180.0,
            0.5 * hsum,
            np.where(hsum < 360.0, 0.5 * (hsum + 360.0), 0.5 * (hsum - 360.0)),
        ),
    )
    t = (
        1.0
        - 0.17 * np.cos(np.radians(h_bar - 30.0))
        + 0.24 * np.cos(np.radians(2.0 * h_bar))
        + 0.32 * np.cos(np.radians(3.0 * h_bar + 6.0))
        - 0.20 * np.cos(np.radians(4.0 * h_bar - 63.0))
    )
    dtheta = 30.0 * np.exp(-(((h_bar - 275.0) / 25.0) ** 2))
    cp_bar7 = cp_bar ** 7
    rc = 2.0 * np.sqrt(cp_bar7 / (cp_bar7 + _TWENTYFIVE_POW7))
    sl = 1.0 + 0.015 * (l_bar - 50.0) ** 2 / np.sqrt(20.0 + (l_bar - 50.0) ** 2)
    sc = 1.0 + 0.045 * cp_bar
    sh = 1.0 + 0.015 * cp_bar * t
    rt = -np.sin(np.radians(2.0 * dtheta)) * rc

    return np.sqrt(
        (dl / sl) ** 2
        + (dc / sc) ** 2
        + (dh_term / sh) ** 2
        + rt * (dc / sc) * (dh_term / sh)
    )


# ---------------------------------------------------------------------------
# triple-level operations
# ---------------------------------------------------------------------------

def _require_space(triple: ColorTriple, space: ColorSpace, op: str):
    if triple.space != space:
        raise ValueError(f"{op} expects a {space.value} triple, got {triple.space.value}")


def spectrum_to_xyz(spectrum: np.ndarray, t_matrix: ColorMatrix) -> ColorTriple:
    spectrum = np.asarray(spectrum, dtype=np.float64)
    if spectrum.shape != (t_matrix.n_bands,):
        raise GeometryError(
            f"spectrum has {spectrum.shape}, matrix expects ({t_matrix.n_bands},)"
        )
    x, y, z = t_matrix.matrix @ spectrum
    return ColorTriple(ColorSpace.XYZ, float(x), float(y), float(z))


def xyz_to_linear_srgb(xyz: ColorTriple) -> ColorTriple:
    _require_space(xyz, ColorSpace.XYZ, "xyz_to_linear_srgb")
    rgb, clipped = xyz_to_linear_srgb_array(xyz.as_array())
    return ColorTriple(
        ColorSpace.LINEAR_SRGB, *(float(c) for c in rgb), gamut_clipped=bool(clipped)
    )


def gamma_encode(linear: ColorTriple) -> ColorTriple:
    _require_space(linear, ColorSpace.LINEAR_SRGB, "gamma_encode")
    encoded = gamma_encode_array(linear.as_array())
    return ColorTriple(
        ColorSpace.SRGB, *(float(c) for c in encoded),
        gamut_clipped=linear.gamut_clipped,
    )


def xyz_to_lab(xyz: ColorTriple, white=D65_WHITE) -> ColorTriple:
    _require_space(xyz, ColorSpace.XYZ, "xyz_to_lab")
    if min(white) <= 0:
        raise ValueError("white point must have positive components")
    lab = xyz_to_lab_array(xyz.as_array(), white)
    return ColorTriple(ColorSpace.LAB, *(float(c) for c in lab))


def delta_e_2000(lab1: ColorTriple, lab2: ColorTriple) -> float:
    _require_space(lab1, ColorSpace.LAB, "delta_e_2000")
    _require_space(lab2, ColorSpace.LAB, "delta_e_2000")
    return float(ciede2000_array(lab1.as_array(), lab2.as_array()))


def cube_to_srgb_image(
    cube: Hypercube, t_matrix: ColorMatrix, mask: ContentMask | None = None
) -> np.ndarray:
    """Per-pixel spectrum -> XYZ -> linear sRGB -> gamma -> 8-bit RGB.

    Masked pixels are black.  Returns an (H, W, 3) uint8 array.
    """
    if cube.kind != CubeKind.REFLECTANCE:
        raise ValueError(f"expected a reflectance cube, got kind={cube.kind.name}")
    if t_matrix.n_bands != cube.n_bands:
        raise GeometryError(
            f"matrix expects {t_matrix.n_bands} bands, cube has {cube.n_bands}"
        )
    flat = cube.data.reshape(-1, cube.n_bands)
    xyz = flat @ t_matrix.matrix.T
    rgb, _ = xyz_to_linear_srgb_array(xyz)
    srgb = gamma_encode_array(rgb)
    image = np.rint(srgb * 255.0).astype(np.uint8).reshape(cube.height, cube.width, 3)
    if mask is not None:
        image[~mask.to_mask(cube.height, cube.width)] = 0
    return image
