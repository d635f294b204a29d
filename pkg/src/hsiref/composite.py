"""Temporal compositing: turn a sweep video of the reference object into an
initial composite white reference.

Every pixel's temporal profile is segmented independently (background
suppression via a per-profile Otsu threshold, saturation clamping,
Savitzky-Golay smoothing, gradient peak pairing) and the composite value is
the median of the *raw* samples inside the detected reference regions.

Two execution paths exist: a readable scalar path (one profile at a time,
used as the reference implementation and for the public per-profile
operations) and a numba batch kernel used by :func:`build_composite`.  Both
implement the identical pipeline; tests assert they agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import MosaicFrame, MosaicVideo
from .errors import CoverageError, DegenerateInputError


@dataclass
class CompositeParams:
    """Tunable knobs of the compositing pipeline.

    The smoothing window/order are the published defaults; the remaining
    values are exposed because the pipeline is sensitive to them on unusual
    sweeps.  Peak height/prominence are fractions of each profile's maximum
    absolute temporal gradient.
    """

    saturation_fraction: float = 0.98
    savgol_window: int = 15
    savgol_order: int = 2
    peak_min_height_frac: float = 0.5
    peak_min_prominence_frac: float = 0.25
    region_margin: int = 1
    otsu_bins: int = 256

    def __post_init__(self):
        if self.savgol_window % 2 == 0 or self.savgol_window <= self.savgol_order:
            raise ValueError("savgol_window must be odd and greater than savgol_order")
        if self.savgol_order < 0:
            raise ValueError("savgol_order must be non-negative")
        for name in ("saturation_fraction", "peak_min_height_frac",
                     "peak_min_prominence_frac"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")
        if self.region_margin < 0:
            raise ValueError("region_margin must be non-negative")
        if self.otsu_bins < 2:
            raise ValueError("otsu_bins must be at least 2")


@dataclass
class TemporalProfile:
    """One pixel's intensity trace with its detected reference regions."""

    values: np.ndarray
    preprocessed: np.ndarray | None = None
    regions: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("profile values must be 1-D")
        t = self.values.size
        last_end = -1
        for start, end in self.regions:
            if not (0 <= start <= end <= t - 1):
                raise ValueError(f"region ({start}, {end}) outside [0, {t - 1}]")
            if start <= last_end:
                raise ValueError("regions must be disjoint and sorted")
            last_end = end


@dataclass
class CompositeResult:
    frame: MosaicFrame
    invalid_mask: np.ndarray
    invalid_fraction: float


# ---------------------------------------------------------------------------
# scalar operations
# ---------------------------------------------------------------------------

def otsu_threshold(values, bins: int = 256) -> float:
    """Bin-edge threshold maximizing between-class variance.

    The histogram spans [min, max] of the input; candidate thresholds are the
    interior bin edges and ties resolve to the smallest edge.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 2:
        raise DegenerateInputError("need at least 2 values")
    vmin = float(v.min())
    vmax = float(v.max())
    if vmin == vmax or (vmax - vmin) / bins == 0.0:
        raise DegenerateInputError("constant input has no threshold")
    hist, edges = np.histogram(v, bins=bins, range=(vmin, vmax))
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(hist)[:-1].astype(np.float64)
    s0 = np.cumsum(hist * centers)[:-1]
    n = float(v.size)
    s_total = float((hist * centers).sum())
    valid = (w0 > 0) & (w0 < n)
    bcv = np.full(bins - 1, -np.inf)
    mu0 = s0[valid] / w0[valid]
    mu1 = (s_total - s0[valid]) / (n - w0[valid])
    bcv[valid] = w0[valid] * (n - w0[valid]) * (mu0 - mu1) ** 2
    k = int(np.argmax(bcv))
    return float(edges[1:-1][k])


def _savgol_design(t: int, window: int, order: int):
    """Per-position smoothing weights.

    Interior positions use the full centred window; positions near the ends
    refit the polynomial on the truncated one-sided window (no padding).
    Returns (coeffs (t, window), start (t,), length (t,)).
    """
    half = window // 2
    coeffs = np.zeros((t, window))
    starts = np.empty(t, dtype=np.int64)
    lengths = np.empty(t, dtype=np.int64)
    rows: dict[tuple[int, int], np.ndarray] = {}
    for pos in range(t):
        lo = max(0, pos - half)
        hi = min(t - 1, pos + half)
        key = (lo - pos, hi - pos)
        row = rows.get(key)
        if row is None:
            offsets = np.arange(key[0], key[1] + 1, dtype=np.float64)
            design = np.vander(offsets, order + 1, increasing=True)
            # value of the LS polynomial at offset 0 = first row of pinv
            row = np.linalg.pinv(design)[0]
            rows[key] = row
        starts[pos] = lo
        lengths[pos] = row.size
        coeffs[pos, : row.size] = row
    return coeffs, starts, lengths


def savgol_filter(values, window: int, order: int) -> np.ndarray:
    """Least-squares polynomial smoothing over a sliding window."""
    v = np.asarray(values, dtype=np.float64)
    if window % 2 == 0 or window <= order:
        raise ValueError("window must be odd and greater than order")
    if v.size < window:
        raise ValueError(f"input of length {v.size} is shorter than window {window}")
    coeffs, starts, lengths = _savgol_design(v.size, window, order)
    out = np.empty_like(v)
    for pos in range(v.size):
        m = lengths[pos]
        out[pos] = coeffs[pos, :m] @ v[starts[pos]: starts[pos] + m]
    return out


def find_peaks(values, min_height: float, min_prominence: float) -> list[int]:
    """Local maxima filtered by height and topographic prominence.

    A peak is an index t with ``values[t-1] < values[t] >= values[t+1]``
    (plateaus resolve to their left edge).  Prominence is the drop to the
    lowest contour line separating the peak from higher ground; among
    equal-height peaks the leftmost acts as the parent (the left scan stops
    at values >= the peak, the right scan only at strictly higher values).
    """
    v = np.asarray(values, dtype=np.float64)
    t_len = v.size
    if t_len < 3:
        raise ValueError("need at least 3 samples to detect peaks")
    peaks = []
    for t in range(1, t_len - 1):
        if not (v[t - 1] < v[t] and v[t] >= v[t + 1]):
            continue
        h = v[t]
        if h < min_height:
            continue
        left_min = v[t - 1]
        i = t - 2
        while i >= 0 and v[i] < h:
            left_min = min(left_min, v[i])
            i -= 1
        right_min = v[t + 1]
        i = t + 2
        while i < t_len and v[i] <= h:
            right_min = min(right_min, v[i])
            i += 1
        if h - max(left_min, right_min) >= min_prominence:
            peaks.append(t)
    return peaks


def _central_gradient(values: np.ndarray) -> np.ndarray:
    g = np.empty_like(values)
    g[0] = values[1] - values[0]
    g[-1] = values[-1] - values[-2]
    g[1:-1] = 0.5 * (values[2:] - values[:-2])
    return g


def _merge_regions(regions: list[tuple[int, int]]) -> list[tuple[int, int]]:
    merged: list[list[int]] = []
    for start, end in sorted(regions):
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return [(s, e) for s, e in merged]


def _longest_nonzero_run(values: np.ndarray, min_len: int = 3):
    best = None
    start = None
    for t, v in enumerate(values):
        if v != 0 and start is None:
            start = t
        elif v == 0 and start is not None:
            if best is None or t - start > best[1] - best[0] + 1:
                best = (start, t - 1)
            start = None
    if start is not None:
        if best is None or values.size - start > best[1] - best[0] + 1:
            best = (start, values.size - 1)
    if best is not None and best[1] - best[0] + 1 >= min_len:
        return best
    return None


def segment_reference_regions(
    profile: TemporalProfile, params: CompositeParams, bit_depth: int
) -> TemporalProfile:
    """Detect the reference-present intervals of one temporal profile.

    Pipeline: background suppression at the per-profile Otsu threshold,
    zeroing of saturated samples, Savitzky-Golay smoothing, central-difference
    temporal gradient, rising/falling gradient peak pairing shrunk inward by
    the region margin.  If no pair survives but a nonzero run of length >= 3
    exists in the thresholded profile, that longest run becomes the single
    region.  Empty regions are a valid outcome.
    """
    raw = profile.values
    t_len = raw.size
    if t_len < params.savgol_window:
        raise ValueError(
            f"profile of length {t_len} is shorter than the smoothing window "
            f"{params.savgol_window}"
        )
    pre = raw.astype(np.float64).copy()
    saturation = params.saturation_fraction * (2.0 ** bit_depth - 1.0)
    try:
        # the threshold must not be skewed by specular spikes, so it is
        # computed over the unsaturated samples only
        threshold = otsu_threshold(raw[raw <= saturation], params.otsu_bins)
        pre[pre < threshold] = 0.0
    except DegenerateInputError:
        pre[:] = 0.0
    pre[pre > saturation] = 0.0

    smoothed = savgol_filter(pre, params.savgol_window, params.savgol_order)
    gradient = _central_gradient(smoothed)
    grad_max = float(np.abs(gradient).max())

    regions: list[tuple[int, int]] = []
    if grad_max > 0:
        min_height = params.peak_min_height_frac * grad_max
        min_prom = params.peak_min_prominence_frac * grad_max
        entries = find_peaks(gradient, min_height, min_prom)
        exits = find_peaks(-gradient, min_height, min_prom)
        ptr = 0
        for entry in entries:
            while ptr < len(exits) and exits[ptr] <= entry:
                ptr += 1
            if ptr == len(exits):
                break
            start = entry + params.region_margin
            end = exits[ptr] - params.region_margin
            if start <= end:
                regions.append((start, end))
        regions = _merge_regions(regions)
    if not regions:
        run = _longest_nonzero_run(pre)
        if run is not None:
            regions = [run]
    return TemporalProfile(values=raw, preprocessed=smoothed, regions=regions)


def composite_value(profile: TemporalProfile) -> tuple[float, bool]:
    """Median of the raw samples over the profile's regions.

    Returns (value, valid); pixels with empty regions yield (0.0, False).
    """
    if not profile.regions:
        return 0.0, False
    samples = np.concatenate(
        [profile.values[s: e + 1] for s, e in profile.regions]
    )
    return float(np.median(samples)), True


# ---------------------------------------------------------------------------
# batch execution
# ---------------------------------------------------------------------------

def build_composite(
    video: MosaicVideo,
    params: CompositeParams | None = None,
    threads: int | None = None,
    engine: str = "numba",
    max_invalid_fraction: float = 0.40,
) -> CompositeResult:
    """Composite a sweep video into an initial mosaic white reference.

    Every pixel is processed independently; pixels whose profile yields no
    reference region are set to 0 and reported in the invalid mask.  More
    than ``max_invalid_fraction`` invalid pixels raises a coverage error.
    """
    params = params or CompositeParams()
    t_len, height, width = video.data.shape
    if t_len < params.savgol_window:
        raise ValueError(
            f"video of {t_len} frames is shorter than the smoothing window "
            f"{params.savgol_window}; record a longer sweep"
        )
    coeffs, starts, lengths = _savgol_design(
        t_len, params.savgol_window, params.savgol_order
    )
    saturation = params.saturation_fraction * (2.0 ** video.bit_depth - 1.0)

    if engine == "numba":
        from . import _kernels

        composite, invalid = _kernels.composite_batch(
            video.data,
            saturation,
            coeffs,
            starts,
            lengths,
            params.peak_min_height_frac,
            params.peak_min_prominence_frac,
            params.region_margin,
            params.otsu_bins,
            threads,
        )
    elif engine == "python":
        composite = np.zeros((height, width), dtype=np.float64)
        invalid = np.zeros((height, width), dtype=bool)
        for i in range(height):
            for j in range(width):
                profile = TemporalProfile(values=video.data[:, i, j])
                profile = segment_reference_regions(profile, params, video.bit_depth)
                value, valid = composite_value(profile)
                composite[i, j] = value
                invalid[i, j] = not valid
    else:
        raise ValueError(f"unknown engine {engine!r}")

    invalid_fraction = float(invalid.mean())
    if invalid_fraction > max_invalid_fraction:
        raise CoverageError(
            f"{invalid_fraction:.1%} of pixels never saw the reference "
            f"(limit {max_invalid_fraction:.0%}); sweep the reference more "
            "slowly or cover more of the field of view",
            invalid_fraction=invalid_fraction,
        )
    frame = MosaicFrame(
        data=composite,
        band_layout=video.band_layout,
        exposure_ms=video.exposure_ms,
        bit_depth=video.bit_depth,
    )
    return CompositeResult(frame=frame, invalid_mask=invalid,
                           invalid_fraction=invalid_fraction)
