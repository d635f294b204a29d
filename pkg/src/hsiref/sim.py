"""Synthetic acquisition generator: separable white references, ruler-sweep
mosaic videos and checkerboard scenes with known ground truth.

Everything is generated from the separable radiance model
``M * S(n) * V(i, j) * rho_n(object)`` with band-integrated object
reflectivities, so the downstream correction/fitting algebra cancels exactly
on noiseless data and every test has a sharp oracle.  All generators are
deterministic per seed; per-frame RNG streams are keyed by (seed, stream,
frame) so frame-parallel generation can never reorder draws.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    BandResponseSet,
    CubeKind,
    Hypercube,
    MosaicFrame,
    MosaicVideo,
    SampledSpectrum,
)
from .refmodel import GaussianVignetting, WhiteReferenceModel, band_averages

_STREAM_REFERENCE = 0
_STREAM_SWEEP = 1
_STREAM_CHECKERBOARD = 2


@dataclass
class NoiseModel:
    """none | gaussian (multiplicative, sigma_frac of signal) | poisson
    (gaussian approximation with variance = gain * signal)."""

    kind: str = "gaussian"
    sigma_frac: float = 0.01
    gain: float = 1.0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian", "poisson"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= self.sigma_frac <= 0.2:
            raise ValueError(f"sigma_frac must lie in [0, 0.2], got {self.sigma_frac}")
        if self.gain <= 0:
            raise ValueError("gain must be positive")

    def apply(self, signal: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "none":
            return signal
        if self.kind == "gaussian":
            noisy = signal * (1.0 + self.sigma_frac * rng.standard_normal(signal.shape))
        else:
            noisy = signal + np.sqrt(self.gain * np.maximum(signal, 0.0)) * (
                rng.standard_normal(signal.shape)
            )
        return np.maximum(noisy, 0.0)


@dataclass
class RulerSpec:
    """Axis-aligned reference strip swept across the frame.

    ``start_offset_px`` places the strip further off-frame at the first
    frame, modelling recording lead time before the reference enters.
    """

    reflectance: SampledSpectrum
    width_px: int = 220
    speed_px_per_frame: float = 12.0
    orientation: str = "cols"  # strip spans all rows, moves along columns (or "rows")
    start_offset_px: float = 0.0

    def __post_init__(self):
        if self.width_px < 1:
            raise ValueError("ruler width must be at least 1 px")
        if self.speed_px_per_frame < 1:
            raise ValueError("sweep speed must be at least 1 px/frame")
        if self.orientation not in ("cols", "rows"):
            raise ValueError(f"orientation must be 'cols' or 'rows', got {self.orientation!r}")
        if self.start_offset_px < 0:
            raise ValueError("start_offset_px must be non-negative")


def default_band_layout(pattern_rows: int, pattern_cols: int) -> np.ndarray:
    return np.arange(pattern_rows * pattern_cols).reshape(pattern_rows, pattern_cols)


def flat_spectrum(value: float, lo: float = 380.0, hi: float = 740.0) -> SampledSpectrum:
    return SampledSpectrum(np.array([lo, hi]), np.array([value, value]))


def xenon_like_spectrum(lo: float = 380.0, hi: float = 740.0) -> SampledSpectrum:
    """Smooth broadband emitter."""
    lam = np.linspace(lo, hi, 161)
    values = 0.55 + 0.45 * np.exp(-(((lam - 560.0) / 170.0) ** 2))
    return SampledSpectrum(lam, values)


def led_like_spectrum(lo: float = 380.0, hi: float = 740.0) -> SampledSpectrum:
    """White LED: narrow blue peak plus a phosphor hump."""
    lam = np.linspace(lo, hi, 161)
    values = (
        1.0 * np.exp(-(((lam - 452.0) / 14.0) ** 2))
        + 0.65 * np.exp(-(((lam - 565.0) / 55.0) ** 2))
        + 0.02
    )
    return SampledSpectrum(lam, values)


def ruler_like_spectrum(lo: float = 380.0, hi: float = 740.0) -> SampledSpectrum:
    """Matte white plastic: high, slightly sloped reflectance."""
    lam = np.linspace(lo, hi, 65)
    values = 0.78 + 0.00025 * (lam - lo)
    return SampledSpectrum(lam, values)


def synthetic_band_responses(
    n_bands: int, lo: float = 440.0, hi: float = 650.0, width_nm: float = 42.0
) -> BandResponseSet:
    """Triangular band-pass responses with centers spread over [lo, hi]."""
    centers = np.linspace(lo, hi, n_bands)
    grid = np.linspace(lo - width_nm, hi + width_nm, 321)
    responses = []
    for c in centers:
        tri = np.maximum(1.0 - np.abs(grid - c) / (width_nm / 2.0), 0.0) + 1e-4
        responses.append(SampledSpectrum(grid, tri))
    return BandResponseSet(responses)


@dataclass
class SimScenario:
    height: int = 128
    width: int = 160
    pattern_rows: int = 4
    pattern_cols: int = 4
    band_layout: np.ndarray | None = None
    light_spectrum: SampledSpectrum = field(default_factory=xenon_like_spectrum)
    band_responses: BandResponseSet = field(
        default_factory=lambda: synthetic_band_responses(16)
    )
    vignetting: GaussianVignetting = field(
        default_factory=lambda: GaussianVignetting(mu_i=64.0, mu_j=80.0, sigma=120.0)
    )
    m: float = 600.0
    noise: NoiseModel = field(default_factory=NoiseModel)
    ruler: RulerSpec = field(
        default_factory=lambda: RulerSpec(reflectance=ruler_like_spectrum())
    )
    background_reflectance: SampledSpectrum = field(
        default_factory=lambda: flat_spectrum(0.12)
    )
    seed: int = 0
    frames: int = 40
    exposure_ms: float = 10.0
    bit_depth: int = 10

    def __post_init__(self):
        if self.band_layout is None:
            self.band_layout = default_band_layout(self.pattern_rows, self.pattern_cols)
        else:
            self.band_layout = np.asarray(self.band_layout, dtype=np.int64)
        if self.band_layout.shape != (self.pattern_rows, self.pattern_cols):
            raise ValueError("band_layout shape must match the pattern")
        if self.band_responses.n_bands != self.band_layout.size:
            raise ValueError(
                f"{self.band_responses.n_bands} band responses for a "
                f"{self.band_layout.size}-band pattern"
            )
        if self.m <= 0:
            raise ValueError("m must be positive")

    @property
    def n_bands(self) -> int:
        return self.band_layout.size

    def full_scale(self) -> float:
        return float(2 ** self.bit_depth - 1)


def _rng(scenario: SimScenario, stream: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([scenario.seed, stream, index])


def ground_truth_sensitivities(scenario: SimScenario) -> np.ndarray:
    """Mean-1 band-integrated light spectrum."""
    raw = band_averages(scenario.light_spectrum, scenario.band_responses)
    return raw / raw.mean()


def ground_truth_model(scenario: SimScenario) -> WhiteReferenceModel:
    return WhiteReferenceModel(
        m=scenario.m,
        sensitivities=ground_truth_sensitivities(scenario),
        vignetting=scenario.vignetting,
        residual_rms=0.0,
        band_centers=scenario.band_responses.band_centers(),
    )


def simulate_white_reference(
    scenario: SimScenario,
) -> tuple[Hypercube, WhiteReferenceModel]:
    """Measured-style demosaiced white reference plus its ground truth."""
    truth = ground_truth_model(scenario)
    clean = (
        scenario.m
        * truth.vignetting_field(scenario.height, scenario.width)[:, :, None]
        * truth.sensitivities[None, None, :]
    )
    noisy = scenario.noise.apply(clean, _rng(scenario, _STREAM_REFERENCE))
    cube = Hypercube(
        data=noisy,
        kind=CubeKind.INTENSITY,
        band_centers=scenario.band_responses.band_centers(),
    )
    return cube, truth


def _mosaic_radiance(
    scenario: SimScenario, rho_by_band: np.ndarray
) -> np.ndarray:
    """Noise-free mosaic-sampled radiance M*S*V*rho for a uniform object."""
    s = ground_truth_sensitivities(scenario)
    v = scenario.vignetting.field(scenario.height, scenario.width)
    band_map = np.tile(
        scenario.band_layout,
        (scenario.height // scenario.pattern_rows,
         scenario.width // scenario.pattern_cols),
    )
    return scenario.m * v * s[band_map] * rho_by_band[band_map]


@dataclass
class SweepResult:
    video: MosaicVideo
    truth_composite: MosaicFrame
    coverage_fraction: float


def simulate_ruler_sweep(scenario: SimScenario) -> SweepResult:
    """Sweep the reference strip across a static background.

    The ground-truth composite is the noise-free reference radiance at every
    pixel, quantized to float32 exactly like the emitted frames.
    """
    rho_ruler = band_averages(scenario.ruler.reflectance, scenario.band_responses)
    rho_bg = band_averages(scenario.background_reflectance, scenario.band_responses)
    ruler_radiance = _mosaic_radiance(scenario, rho_ruler)
    bg_radiance = _mosaic_radiance(scenario, rho_bg)
    if ruler_radiance.max() > scenario.full_scale():
        warnings.warn(
            f"reference radiance peaks at {ruler_radiance.max():.0f}, above the "
            f"{scenario.bit_depth}-bit full scale {scenario.full_scale():.0f}",
            stacklevel=2,
        )

    along = scenario.width if scenario.ruler.orientation == "cols" else scenario.height
    width_px = scenario.ruler.width_px
    speed = scenario.ruler.speed_px_per_frame
    axis_pos = np.arange(along, dtype=np.float64)
    covered = np.zeros(along, dtype=bool)

    data = np.empty((scenario.frames, scenario.height, scenario.width), dtype=np.float32)
    for k in range(scenario.frames):
        pos = -float(width_px) - scenario.ruler.start_offset_px + k * speed
        in_strip = (axis_pos >= pos) & (axis_pos < pos + width_px)
        covered |= in_strip
        frame = np.where(
            in_strip[None, :] if scenario.ruler.orientation == "cols" else in_strip[:, None],
            ruler_radiance,
            bg_radiance,
        )
        frame = scenario.noise.apply(frame, _rng(scenario, _STREAM_SWEEP, k))
        data[k] = frame.astype(np.float32)

    coverage = float(covered.mean())
    if coverage < 1.0:
        warnings.warn(
            f"sweep covers only {coverage:.1%} of the frame; increase the "
            "frame budget or slow the sweep",
            stacklevel=2,
        )
    video = MosaicVideo(
        data=data,
        band_layout=scenario.band_layout,
        exposure_ms=scenario.exposure_ms,
        bit_depth=scenario.bit_depth,
    )
    truth = MosaicFrame(
        data=ruler_radiance.astype(np.float32),
        band_layout=scenario.band_layout,
        exposure_ms=scenario.exposure_ms,
        bit_depth=scenario.bit_depth,
    )
    return SweepResult(video=video, truth_composite=truth, coverage_fraction=coverage)


@dataclass
class TileScene:
    cube: Hypercube
    reflectance: np.ndarray  # ground-truth band-integrated tile reflectance


def simulate_checkerboard(
    scenario: SimScenario, tiles: dict[str, SampledSpectrum]
) -> dict[str, TileScene]:
    """One intensity cube per tile: M*S(n)*V(i,j)*R_tile(n) plus noise."""
    s = ground_truth_sensitivities(scenario)
    v = scenario.vignetting.field(scenario.height, scenario.width)
    centers = scenario.band_responses.band_centers()
    scenes = {}
    for index, tile_id in enumerate(sorted(tiles)):
        r_tile = band_averages(tiles[tile_id], scenario.band_responses)
        clean = scenario.m * v[:, :, None] * (s * r_tile)[None, None, :]
        noisy = scenario.noise.apply(clean, _rng(scenario, _STREAM_CHECKERBOARD, index))
        scenes[tile_id] = TileScene(
            cube=Hypercube(data=noisy, kind=CubeKind.INTENSITY, band_centers=centers),
            reflectance=r_tile,
        )
    return scenes


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------

def _spectrum_to_json(s: SampledSpectrum) -> dict:
    return {"wavelengths_nm": s.wavelengths_nm.tolist(), "values": s.values.tolist()}


def _spectrum_from_json(d: dict) -> SampledSpectrum:
    return SampledSpectrum(np.array(d["wavelengths_nm"]), np.array(d["values"]))


def save_scenario(path, scenario: SimScenario):
    doc = {
        "height": scenario.height,
        "width": scenario.width,
        "pattern_rows": scenario.pattern_rows,
        "pattern_cols": scenario.pattern_cols,
        "band_layout": scenario.band_layout.tolist(),
        "light_spectrum": _spectrum_to_json(scenario.light_spectrum),
        "band_responses": [
            _spectrum_to_json(r) for r in scenario.band_responses.responses
        ],
        "vignetting": {
            "mu_i": scenario.vignetting.mu_i,
            "mu_j": scenario.vignetting.mu_j,
            "sigma": scenario.vignetting.sigma,
        },
        "m": scenario.m,
        "noise": {
            "kind": scenario.noise.kind,
            "sigma_frac": scenario.noise.sigma_frac,
            "gain": scenario.noise.gain,
        },
        "ruler": {
            "reflectance": _spectrum_to_json(scenario.ruler.reflectance),
            "width_px": scenario.ruler.width_px,
            "speed_px_per_frame": scenario.ruler.speed_px_per_frame,
            "orientation": scenario.ruler.orientation,
            "start_offset_px": scenario.ruler.start_offset_px,
        },
        "background_reflectance": _spectrum_to_json(scenario.background_reflectance),
        "seed": scenario.seed,
        "frames": scenario.frames,
        "exposure_ms": scenario.exposure_ms,
        "bit_depth": scenario.bit_depth,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scenario(path) -> SimScenario:
    with open(Path(path), encoding="utf-8") as fh:
        doc = json.load(fh)
    return SimScenario(
        height=doc["height"],
        width=doc["width"],
        pattern_rows=doc["pattern_rows"],
        pattern_cols=doc["pattern_cols"],
        band_layout=np.array(doc["band_layout"]),
        light_spectrum=_spectrum_from_json(doc["light_spectrum"]),
        band_responses=BandResponseSet(
            [_spectrum_from_json(r) for r in doc["band_responses"]]
        ),
        vignetting=GaussianVignetting(**doc["vignetting"]),
        m=doc["m"],
        noise=NoiseModel(**doc["noise"]),
        ruler=RulerSpec(
            reflectance=_spectrum_from_json(doc["ruler"]["reflectance"]),
            width_px=doc["ruler"]["width_px"],
            speed_px_per_frame=doc["ruler"]["speed_px_per_frame"],
            orientation=doc["ruler"]["orientation"],
            start_offset_px=doc["ruler"].get("start_offset_px", 0.0),
        ),
        background_reflectance=_spectrum_from_json(doc["background_reflectance"]),
        seed=doc["seed"],
        frames=doc["frames"],
        exposure_ms=doc["exposure_ms"],
        bit_depth=doc["bit_depth"],
    )
