"""Separable white-reference model: reflectivity correction, model fitting
(non-parametric and Gaussian-vignetting variants), content-area masking and
rendering of the synthetic reference.

The reference is factorized into a scalar intensity factor M, mean-1
spectral sensitivities S(n) and a max-1 spatial vignetting field V(i, j);
fitted models are immutable and report their residual RMS.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .composite import otsu_threshold
from .core import (
    BandResponseSet,
    ContentMask,
    CubeKind,
    Hypercube,
    MosaicFrame,
    ReflectivityFactors,
    SampledSpectrum,
)
from .errors import (
    DegenerateInputError,
    DetectionError,
    GeometryError,
    SupportError,
)
from .optimize import (
    LMResult,
    finite_difference_steps,
    levenberg_marquardt,
    levenberg_marquardt_gram,
)

_MEAN_S_TOL = 1e-9
_MAX_V_TOL = 1e-9


@dataclass
class GaussianVignetting:
    """Isotropic peak-1 Gaussian vignetting, value 1 at (mu_i, mu_j)."""

    mu_i: float
    mu_j: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    def field(self, height: int, width: int) -> np.ndarray:
        ii = np.arange(height, dtype=np.float64)[:, None] - self.mu_i
        jj = np.arange(width, dtype=np.float64)[None, :] - self.mu_j
        return np.exp(-(ii * ii + jj * jj) / (2.0 * self.sigma ** 2))


@dataclass
class WhiteReferenceModel:
    """Fitted separable reference: W(i,j,n) ~= m * sensitivities[n] * V(i,j)."""

    m: float
    sensitivities: np.ndarray
    vignetting: GaussianVignetting | np.ndarray
    residual_rms: float = 0.0
    band_centers: np.ndarray | None = None
    converged: bool = True
    degenerate: bool = False

    def __post_init__(self):
        self.sensitivities = np.asarray(self.sensitivities, dtype=np.float64)
        if not self.m > 0:
            raise ValueError(f"scalar factor must be positive, got {self.m}")
        mean_s = self.sensitivities.mean()
        if abs(mean_s - 1.0) > _MEAN_S_TOL:
            raise ValueError(f"sensitivities must have mean 1, got {mean_s!r}")
        if isinstance(self.vignetting, np.ndarray):
            self.vignetting = np.asarray(self.vignetting, dtype=np.float64)
            vmax = self.vignetting.max()
            if abs(vmax - 1.0) > _MAX_V_TOL:
                raise ValueError(f"vignetting field must peak at 1, got {vmax!r}")
        if self.band_centers is not None:
            self.band_centers = np.asarray(self.band_centers, dtype=np.float64)

    @property
    def n_bands(self) -> int:
        return self.sensitivities.size

    def vignetting_field(self, height: int, width: int) -> np.ndarray:
        if isinstance(self.vignetting, GaussianVignetting):
            return self.vignetting.field(height, width)
        if self.vignetting.shape != (height, width):
            raise GeometryError(
                f"non-parametric vignetting is {self.vignetting.shape}, "
                f"requested {(height, width)}"
            )
        return self.vignetting


# ---------------------------------------------------------------------------
# reflectivity correction
# ---------------------------------------------------------------------------

def band_average(spectrum: SampledSpectrum, band: SampledSpectrum) -> float:
    """Response-weighted average of ``spectrum`` over one band.

    Both curves are linearly interpolated onto the union of their sample
    points inside the band's support and integrated by the trapezoidal rule.
    """
    lo, hi = band.support
    if not spectrum.covers(lo, hi):
        raise SupportError(
            f"spectrum support {spectrum.support} does not cover band "
            f"support ({lo}, {hi})"
        )
    inner = spectrum.wavelengths_nm
    inner = inner[(inner > lo) & (inner < hi)]
    grid = np.union1d(band.wavelengths_nm, inner)
    b = band.value_at(grid)
    denom = np.trapezoid(b, grid)
    if denom <= 0:
        raise ValueError("band response has zero integral over its support")
    return float(np.trapezoid(spectrum.value_at(grid) * b, grid) / denom)


def band_averages(spectrum: SampledSpectrum, bands: BandResponseSet) -> np.ndarray:
    return np.array([band_average(spectrum, b) for b in bands.responses])


def reflectivity_factors(
    t: SampledSpectrum, bands: BandResponseSet
) -> ReflectivityFactors:
    """Per-band reflectivity of the reference object from its spectrum."""
    return ReflectivityFactors(band_averages(t, bands))


def apply_reflectivity_correction(composite, rho: ReflectivityFactors):
    """Divide every value by its band's reflectivity factor.

    Accepts a mosaic frame (band looked up through the layout) or a
    hypercube; invalid-pixel bookkeeping is untouched (zeros stay zero).
    """
    if isinstance(composite, MosaicFrame):
        if rho.n_bands != composite.n_bands:
            raise GeometryError(
                f"rho has {rho.n_bands} bands, mosaic pattern has {composite.n_bands}"
            )
        corrected = composite.data.astype(np.float64) / rho.rho[composite.band_map()]
        return MosaicFrame(
            data=corrected,
            band_layout=composite.band_layout,
            exposure_ms=composite.exposure_ms,
            bit_depth=composite.bit_depth,
        )
    if isinstance(composite, Hypercube):
        if rho.n_bands != composite.n_bands:
            raise GeometryError(
                f"rho has {rho.n_bands} bands, cube has {composite.n_bands}"
            )
        return Hypercube(
            data=composite.data / rho.rho[None, None, :],
            kind=composite.kind,
            band_centers=composite.band_centers,
        )
    raise TypeError(f"expected MosaicFrame or Hypercube, got {type(composite)!r}")


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def _selected_pixels(cube: Hypercube, mask: ContentMask | None, valid):
    sel = (
        mask.to_mask(cube.height, cube.width)
        if mask is not None
        else np.ones((cube.height, cube.width), dtype=bool)
    )
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != sel.shape:
            raise GeometryError(
                f"validity mask shape {valid.shape} does not match image "
                f"{sel.shape}"
            )
        sel = sel & valid
    if not sel.any():
        raise DegenerateInputError("no pixels left after masking")
    return sel


def cube_validity_from_mosaic(
    invalid_mask: np.ndarray, pattern_rows: int, pattern_cols: int
) -> np.ndarray:
    """Cube pixels whose bilinear support contains no invalid mosaic pixel.

    The support of any interpolated site lies within one mosaic period, so a
    box dilation of the invalid mask by one period per side is sufficient.
    """
    size = (2 * pattern_rows + 1, 2 * pattern_cols + 1)
    dilated = ndimage.maximum_filter(invalid_mask.astype(np.uint8), size=size)
    return dilated == 0


def fit_nonparametric(
    cube: Hypercube, mask: ContentMask | None = None, valid=None
) -> WhiteReferenceModel:
    """Closed-form separable fit with a free per-pixel vignetting field.

    M is the maximum band-mean over selected pixels, V the band-mean scaled
    by it, and S the per-band sums normalized to mean 1.
    """
    sel = _selected_pixels(cube, mask, valid)
    data = cube.data[sel]  # (P, N)
    if not np.any(data):
        raise DegenerateInputError("reference is all-zero on the selected pixels")
    band_mean = data.mean(axis=1)
    m = float(band_mean.max())
    if m <= 0:
        raise DegenerateInputError("non-positive band means; cannot normalize")
    v_sel = band_mean / m
    v_field = np.zeros((cube.height, cube.width), dtype=np.float64)
    v_field[sel] = v_sel
    s = data.sum(axis=0) * data.shape[1] / data.sum()
    residual = data - m * v_sel[:, None] * s[None, :]
    rms = float(np.sqrt(np.mean(residual ** 2)))
    return WhiteReferenceModel(
        m=m,
        sensitivities=s,
        vignetting=v_field,
        residual_rms=rms,
        band_centers=cube.band_centers,
    )


def _moment_init(v_field: np.ndarray, sel: np.ndarray) -> np.ndarray:
    ii, jj = np.nonzero(sel)
    w = np.maximum(v_field[sel], 0.0)
    wsum = w.sum()
    mu_i = float((w * ii).sum() / wsum)
    mu_j = float((w * jj).sum() / wsum)
    r2 = (ii - mu_i) ** 2 + (jj - mu_j) ** 2
    sigma = float(np.sqrt(max((w * r2).sum() / wsum, 1.0) / 2.0))
    return np.array([mu_i, mu_j, sigma])


def _is_degenerate(sigma: float, height: int, width: int) -> bool:
    return sigma > 10.0 * float(np.hypot(height, width))


def _explicit_residual_rms(data: np.ndarray, v_sel: np.ndarray,
                           amplitudes: np.ndarray) -> float:
    """Residual RMS accumulated chunkwise, free of large-sum cancellation."""
    total = 0.0
    count = data.shape[0] * data.shape[1]
    step = max(1, (1 << 22) // max(data.shape[1], 1))
    for start in range(0, data.shape[0], step):
        block = data[start: start + step]
        r = block - v_sel[start: start + step, None] * amplitudes[None, :]
        total += float((r * r).sum())
    return float(np.sqrt(total / count))


def fit_gaussian_sequential(
    cube: Hypercube, mask: ContentMask | None = None, valid=None
) -> WhiteReferenceModel:
    """Keep M and S from the non-parametric fit; least-squares fit only the
    Gaussian vignetting parameters against the full data."""
    nonp = fit_nonparametric(cube, mask, valid)
    sel = _selected_pixels(cube, mask, valid)
    data = cube.data[sel]
    ii, jj = np.nonzero(sel)
    ii = ii.astype(np.float64)
    jj = jj.astype(np.float64)

    amplitudes = nonp.m * nonp.sensitivities
    # sum_n (W - m_n V)^2 = b*(V - a/b)^2 + (C - a^2/b) per pixel: fitting V
    # against a/b with weight b is the same least-squares problem over the
    # Gaussian parameters, at a fraction of the residual size.
    a = data @ amplitudes
    b = float(amplitudes @ amplitudes)
    target = a / b
    sqrt_b = np.sqrt(b)
    offset = float((data * data).sum() - (a @ a) / b)

    def residuals(p):
        v = np.exp(-((ii - p[0]) ** 2 + (jj - p[1]) ** 2) / (2.0 * p[2] ** 2))
        return sqrt_b * (v - target)

    result = levenberg_marquardt(
        residuals, _moment_init(nonp.vignetting, sel), cost_offset=max(offset, 0.0)
    )
    mu_i, mu_j, sigma = result.params
    sigma = abs(float(sigma))
    vign = GaussianVignetting(mu_i=float(mu_i), mu_j=float(mu_j), sigma=sigma)
    v_sel = np.exp(-((ii - mu_i) ** 2 + (jj - mu_j) ** 2) / (2.0 * sigma ** 2))
    return WhiteReferenceModel(
        m=nonp.m,
        sensitivities=nonp.sensitivities,
        vignetting=vign,
        residual_rms=_explicit_residual_rms(data, v_sel, amplitudes),
        band_centers=cube.band_centers,
        converged=result.converged,
        degenerate=_is_degenerate(sigma, cube.height, cube.width),
    )


def fit_gaussian_joint(
    cube: Hypercube,
    mask: ContentMask | None = None,
    valid=None,
    init: GaussianVignetting | None = None,
    max_iter: int = 200,
) -> WhiteReferenceModel:
    """Joint least squares over the Gaussian parameters, M and S.

    The linear factors (the per-band amplitudes M*S(n)) are eliminated
    exactly at every evaluation (variable projection), so the optimizer works
    on the three Gaussian parameters while minimizing the full joint
    objective; S is renormalized to mean 1 into M after convergence.

    Two LM phases share the iteration budget: a fast one whose
    finite-difference normal equations come from Gram identities (the full
    residual is never materialized), and a refinement one that assembles the
    same quantities blockwise from explicit residuals, which is slower but
    free of the large-sum cancellation that limits the first phase near a
    perfect fit.
    """
    sel = _selected_pixels(cube, mask, valid)
    data = cube.data[sel]
    ii, jj = np.nonzero(sel)
    ii = ii.astype(np.float64)
    jj = jj.astype(np.float64)
    sum_ww = float((data * data).sum())
    n_bands = data.shape[1]
    block = max(1, (1 << 21) // n_bands)

    def v_of(p, lo=None, hi=None):
        s_ii = ii if lo is None else ii[lo:hi]
        s_jj = jj if lo is None else jj[lo:hi]
        return np.exp(
            -((s_ii - p[0]) ** 2 + (s_jj - p[1]) ** 2) / (2.0 * p[2] ** 2)
        )

    def _fd_points(p):
        steps = finite_difference_steps(p)
        points = [p]
        for k in range(3):
            shifted = p.copy()
            shifted[k] += steps[k]
            points.append(shifted)
        return steps, points

    def gram_cost_fn(p):
        v = v_of(p)
        q = float(v @ v)
        u = data.T @ v
        return sum_ww - float(u @ u) / q

    def gram_fn(p):
        steps, points = _fd_points(p)
        v_stack = np.stack([v_of(pt) for pt in points])  # (4, P)
        q = v_stack @ v_stack.T  # (4, 4) pairwise V dot products
        u = np.stack([data.T @ v_stack[k] for k in range(4)])  # (4, N)
        amps = u / np.diag(q)[:, None]
        au = np.array([float(amps[k] @ u[k]) for k in range(4)])
        # r_a . r_b = sum W^2 - a_a.u_a - a_b.u_b + (a_a.a_b) (V_a.V_b)
        rr = np.empty((4, 4))
        for a_idx in range(4):
            for b_idx in range(a_idx, 4):
                cross = float(amps[a_idx] @ amps[b_idx]) * q[a_idx, b_idx]
                rr[a_idx, b_idx] = rr[b_idx, a_idx] = (
                    sum_ww - au[a_idx] - au[b_idx] + cross
                )
        jtj = np.empty((3, 3))
        jtr = np.empty(3)
        for a_idx in range(3):
            jtr[a_idx] = (rr[a_idx + 1, 0] - rr[0, 0]) / steps[a_idx]
            for b_idx in range(a_idx, 3):
                jtj[a_idx, b_idx] = jtj[b_idx, a_idx] = (
                    rr[a_idx + 1, b_idx + 1]
                    - rr[a_idx + 1, 0]
                    - rr[0, b_idx + 1]
                    + rr[0, 0]
                ) / (steps[a_idx] * steps[b_idx])
        return rr[0, 0], jtj, jtr

    def _amplitudes_for(points):
        n_pts = len(points)
        us = np.zeros((n_pts, n_bands))
        qs = np.zeros(n_pts)
        for lo in range(0, data.shape[0], block):
            hi = min(lo + block, data.shape[0])
            chunk = data[lo:hi]
            for k, pt in enumerate(points):
                v = v_of(pt, lo, hi)
                us[k] += chunk.T @ v
                qs[k] += float(v @ v)
        return us / qs[:, None]

    def explicit_cost_fn(p):
        amps = _amplitudes_for([p])[0]
        total = 0.0
        for lo in range(0, data.shape[0], block):
            hi = min(lo + block, data.shape[0])
            r = data[lo:hi] - v_of(p, lo, hi)[:, None] * amps[None, :]
            total += float((r.ravel() @ r.ravel()))
        return total

    def explicit_gram_fn(p):
        steps, points = _fd_points(p)
        amps = _amplitudes_for(points)
        cost = 0.0
        jtj = np.zeros((3, 3))
        jtr = np.zeros(3)
        for lo in range(0, data.shape[0], block):
            hi = min(lo + block, data.shape[0])
            chunk = data[lo:hi]
            r0 = (chunk - v_of(points[0], lo, hi)[:, None] * amps[0][None, :]).ravel()
            cost += float(r0 @ r0)
            cols = []
            for k in range(3):
                rk = (
                    chunk
                    - v_of(points[k + 1], lo, hi)[:, None] * amps[k + 1][None, :]
                ).ravel()
                cols.append((rk - r0) / steps[k])
            for a_idx in range(3):
                jtr[a_idx] += float(cols[a_idx] @ r0)
                for b_idx in range(a_idx, 3):
                    jtj[a_idx, b_idx] += float(cols[a_idx] @ cols[b_idx])
        for a_idx in range(3):
            for b_idx in range(a_idx + 1, 3):
                jtj[b_idx, a_idx] = jtj[a_idx, b_idx]
        return cost, jtj, jtr

    if init is not None:
        p0 = np.array([init.mu_i, init.mu_j, init.sigma], dtype=np.float64)
    else:
        nonp = fit_nonparametric(cube, mask, valid)
        p0 = _moment_init(nonp.vignetting, sel)

    coarse_budget = max(1, max_iter - 10)
    coarse = levenberg_marquardt_gram(gram_cost_fn, gram_fn, p0, max_iter=coarse_budget)
    refine_budget = max(max_iter - coarse.n_iter, 2)
    result = levenberg_marquardt_gram(
        explicit_cost_fn, explicit_gram_fn, coarse.params, max_iter=refine_budget
    )
    if not coarse.converged and not result.converged:
        result.converged = False
    mu_i, mu_j, sigma = result.params
    sigma = abs(float(sigma))
    v_sel = np.exp(-((ii - mu_i) ** 2 + (jj - mu_j) ** 2) / (2.0 * sigma ** 2))
    amplitudes = (data.T @ v_sel) / float(v_sel @ v_sel)
    m = float(amplitudes.mean())
    if m <= 0:
        raise DegenerateInputError("joint fit produced a non-positive scalar factor")
    return WhiteReferenceModel(
        m=m,
        sensitivities=amplitudes / m,
        vignetting=GaussianVignetting(float(mu_i), float(mu_j), sigma),
        residual_rms=_explicit_residual_rms(data, v_sel, amplitudes),
        band_centers=cube.band_centers,
        converged=result.converged,
        degenerate=_is_degenerate(sigma, cube.height, cube.width),
    )


# ---------------------------------------------------------------------------
# content-area detection and rendering
# ---------------------------------------------------------------------------

def detect_content_circle(image, shrink_factor: float = 0.9,
                          min_area_fraction: float = 0.01) -> ContentMask:
    """Disk estimate of the illuminated content area.

    Otsu-thresholds the band-mean image (for cubes) or the raw mosaic, takes
    the intensity centroid and the equivalent-area radius of the bright set,
    and shrinks the usable radius by ``shrink_factor``.  A uniformly bright
    image yields a full-frame mask; a dark or near-dark one raises and a
    manual mask must be supplied.
    """
    if isinstance(image, Hypercube):
        brightness = image.data.mean(axis=2)
    elif isinstance(image, MosaicFrame):
        brightness = image.data.astype(np.float64)
    else:
        raise TypeError(f"expected MosaicFrame or Hypercube, got {type(image)!r}")
    height, width = brightness.shape
    try:
        threshold = otsu_threshold(brightness.ravel())
    except DegenerateInputError:
        if brightness.max() > 0:
            return ContentMask(
                center_i=(height - 1) / 2.0,
                center_j=(width - 1) / 2.0,
                radius=float(np.sqrt(height * width / np.pi)),
                shrink_factor=shrink_factor,
                full_frame=True,
            )
        raise DetectionError(
            "image is uniformly dark; supply a manual content mask"
        ) from None
    above = brightness > threshold
    area = int(above.sum())
    if area < min_area_fraction * above.size:
        raise DetectionError(
            f"bright area is {area / above.size:.2%} of the image "
            f"(below {min_area_fraction:.0%}); supply a manual content mask"
        )
    weights = brightness[above]
    ii, jj = np.nonzero(above)
    wsum = float(weights.sum())
    return ContentMask(
        center_i=float((weights * ii).sum() / wsum),
        center_j=float((weights * jj).sum() / wsum),
        radius=float(np.sqrt(area / np.pi)),
        shrink_factor=shrink_factor,
    )


def render_reference(
    model: WhiteReferenceModel,
    height: int,
    width: int,
    mask: ContentMask | None = None,
) -> Hypercube:
    """Noise-free model evaluation M*S(n)*V(i,j), zero outside the mask."""
    v = model.vignetting_field(height, width)
    cube = model.m * v[:, :, None] * model.sensitivities[None, None, :]
    if mask is not None:
        cube[~mask.to_mask(height, width)] = 0.0
    return Hypercube(data=cube, kind=CubeKind.INTENSITY,
                     band_centers=model.band_centers)


# ---------------------------------------------------------------------------
# model serialization
# ---------------------------------------------------------------------------

_MODEL_HEADER = "# hsiref white reference model v1: key,value rows; S_n are " \
    "mean-1 sensitivities, vignetting is mu_i/mu_j/sigma or a V_path cube"


def save_model(path, model: WhiteReferenceModel, mask: ContentMask | None = None):
    """CSV sidecar; a non-parametric vignetting field goes to ``<path>.v.hsic``."""
    from .io import write_cube

    path = Path(path)
    rows: list[tuple[str, object]] = [("M", repr(model.m))]
    for n, s in enumerate(model.sensitivities):
        rows.append((f"S_{n}", repr(float(s))))
    if isinstance(model.vignetting, GaussianVignetting):
        rows += [
            ("mu_i", repr(model.vignetting.mu_i)),
            ("mu_j", repr(model.vignetting.mu_j)),
            ("sigma", repr(model.vignetting.sigma)),
        ]
    else:
        v_path = path.with_suffix(path.suffix + ".v.hsic")
        field_cube = Hypercube(
            data=model.vignetting[:, :, None],
            kind=CubeKind.INTENSITY,
            band_centers=np.zeros(1),
        )
        write_cube(v_path, field_cube)
        rows.append(("V_path", v_path.name))
    if model.band_centers is not None:
        for n, lam in enumerate(model.band_centers):
            rows.append((f"lambda_{n}", repr(float(lam))))
    rows += [
        ("residual_rms", repr(model.residual_rms)),
        ("converged", int(model.converged)),
        ("degenerate", int(model.degenerate)),
    ]
    if mask is not None:
        rows += [
            ("mask_center_i", repr(mask.center_i)),
            ("mask_center_j", repr(mask.center_j)),
            ("mask_radius", repr(mask.radius)),
            ("mask_shrink_factor", repr(mask.shrink_factor)),
            ("mask_full_frame", int(mask.full_frame)),
        ]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(_MODEL_HEADER + "\n")
        writer = csv.writer(fh)
        writer.writerow(["key", "value"])
        for key, value in rows:
            writer.writerow([key, value])


def load_model(path) -> tuple[WhiteReferenceModel, ContentMask | None]:
    from .io import read_cube

    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    kv = {key: value for key, value, *_ in rows[1:]}
    n = 0
    while f"S_{n}" in kv:
        n += 1
    if n == 0:
        raise ValueError(f"{path}: no sensitivities found")
    sensitivities = np.array([float(kv[f"S_{k}"]) for k in range(n)])
    if "V_path" in kv:
        v_cube = read_cube(path.parent / kv["V_path"])
        vignetting = v_cube.data[:, :, 0]
    else:
        vignetting = GaussianVignetting(
            mu_i=float(kv["mu_i"]), mu_j=float(kv["mu_j"]), sigma=float(kv["sigma"])
        )
    band_centers = None
    if "lambda_0" in kv:
        band_centers = np.array([float(kv[f"lambda_{k}"]) for k in range(n)])
    model = WhiteReferenceModel(
        m=float(kv["M"]),
        sensitivities=sensitivities,
        vignetting=vignetting,
        residual_rms=float(kv.get("residual_rms", 0.0)),
        band_centers=band_centers,
        converged=bool(int(kv.get("converged", 1))),
        degenerate=bool(int(kv.get("degenerate", 0))),
    )
    mask = None
    if "mask_center_i" in kv:
        mask = ContentMask(
            center_i=float(kv["mask_center_i"]),
            center_j=float(kv["mask_center_j"]),
            radius=float(kv["mask_radius"]),
            shrink_factor=float(kv.get("mask_shrink_factor", 0.9)),
            full_frame=bool(int(kv.get("mask_full_frame", 0))),
        )
    return model, mask
