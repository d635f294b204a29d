"""Quantitative evaluation: NRMSE, MedAPE, tile ROI sampling and
reference-vs-reference comparison reports.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .colorsci import ColorMatrix, ciede2000_array, xyz_to_lab_array
from .core import ContentMask, Hypercube, SampledSpectrum
from .errors import GeometryError
from .refmodel import fit_nonparametric


def nrmse(spectrum, reference) -> float:
    """Root-mean-square error normalized by the reference RMS."""
    s = np.asarray(spectrum, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if s.shape != r.shape:
        raise GeometryError(f"length mismatch: {s.shape} vs {r.shape}")
    ref_rms = np.sqrt(np.mean(r * r))
    if ref_rms == 0:
        raise ValueError("reference is all-zero; NRMSE undefined")
    return float(np.sqrt(np.mean((s - r) ** 2)) / ref_rms)


def medape(values, reference, return_excluded: bool = False):
    """Median absolute percentage error; zero-reference entries are excluded
    (and optionally counted)."""
    u = np.asarray(values, dtype=np.float64).ravel()
    r = np.asarray(reference, dtype=np.float64).ravel()
    if u.shape != r.shape:
        raise GeometryError(f"length mismatch: {u.shape} vs {r.shape}")
    keep = r != 0
    excluded = int((~keep).sum())
    if not keep.any():
        raise ValueError("all reference entries are zero; MedAPE undefined")
    value = float(np.median(np.abs((u[keep] - r[keep]) / r[keep])))
    if return_excluded:
        return value, excluded
    return value


def mean_normalize(spectrum) -> np.ndarray:
    """Scale so the mean absolute value is 1 (the relative-spectra convention)."""
    s = np.asarray(spectrum, dtype=np.float64)
    norm = np.abs(s).mean()
    if norm == 0:
        raise ValueError("cannot mean-normalize an all-zero spectrum")
    return s / norm


def _disks_mask(cube: Hypercube, centers, radius: float) -> np.ndarray:
    sel = np.zeros((cube.height, cube.width), dtype=bool)
    for ci, cj in centers:
        if not (0 <= ci - radius and ci + radius <= cube.height - 1
                and 0 <= cj - radius and cj + radius <= cube.width - 1):
            raise GeometryError(
                f"ROI disk at ({ci}, {cj}) radius {radius} exceeds image bounds"
            )
        ii = np.arange(cube.height, dtype=np.float64)[:, None] - ci
        jj = np.arange(cube.width, dtype=np.float64)[None, :] - cj
        sel |= ii * ii + jj * jj <= radius * radius
    return sel


def sample_tile_rois(
    cube: Hypercube, centers, radius: float = 30.0
) -> tuple[np.ndarray, np.ndarray]:
    """Per-band mean and population std over the union of the ROI disks."""
    sel = _disks_mask(cube, centers, radius)
    pixels = cube.data[sel]
    return pixels.mean(axis=0), pixels.std(axis=0)


@dataclass
class ReferenceComparison:
    medape_pixelwise: float
    medape_sensitivities: float
    nrmse_min: float
    nrmse_median: float
    nrmse_max: float


def compare_references(
    synthetic: Hypercube, measured: Hypercube, mask: ContentMask | None = None
) -> ReferenceComparison:
    """Pixel-by-pixel MedAPE, sensitivity MedAPE and per-pixel spectral NRMSE
    statistics between two references on the unmasked area."""
    if synthetic.data.shape != measured.data.shape:
        raise GeometryError(
            f"geometry mismatch: {synthetic.data.shape} vs {measured.data.shape}"
        )
    sel = (
        mask.to_mask(synthetic.height, synthetic.width)
        if mask is not None
        else np.ones((synthetic.height, synthetic.width), dtype=bool)
    )
    syn = synthetic.data[sel]
    mea = measured.data[sel]

    pixelwise = medape(syn, mea)

    s_syn = fit_nonparametric(synthetic, mask).sensitivities
    s_mea = fit_nonparametric(measured, mask).sensitivities
    sens = medape(s_syn, s_mea)

    num = np.sqrt(np.mean((syn - mea) ** 2, axis=1))
    den = np.sqrt(np.mean(mea ** 2, axis=1))
    ok = den > 0
    if not ok.any():
        raise ValueError("measured reference is all-zero on the unmasked area")
    per_pixel = num[ok] / den[ok]
    return ReferenceComparison(
        medape_pixelwise=pixelwise,
        medape_sensitivities=sens,
        nrmse_min=float(per_pixel.min()),
        nrmse_median=float(np.median(per_pixel)),
        nrmse_max=float(per_pixel.max()),
    )


@dataclass
class TileResult:
    tile_id: str
    nrmse_quantitative: float
    nrmse_relative: float
    delta_e_median: float


@dataclass
class TileEvaluation:
    tiles: list[TileResult]
    mean_nrmse_quantitative: float
    mean_nrmse_relative: float
    mean_delta_e_median: float
    subset: list[str] = field(default_factory=list)
    subset_mean_nrmse_quantitative: float | None = None
    subset_mean_nrmse_relative: float | None = None
    subset_mean_delta_e_median: float | None = None


def evaluate_tiles(
    cube: Hypercube,
    tile_layout: dict[str, list[tuple[float, float]]],
    reference_spectra: dict[str, SampledSpectrum],
    reference_lab: dict[str, tuple[float, float, float]],
    t_matrix: ColorMatrix,
    radius: float = 30.0,
    subset: list[str] | None = None,
) -> TileEvaluation:
    """Per-tile spectral and color errors against the reference data.

    For each tile: the mean ROI spectrum is compared to the reference
    spectrum resampled at the cube's band centers (quantitative NRMSE), both
    are mean-normalized and compared again (relative NRMSE), and every ROI
    pixel is converted to Lab for a median CIEDE2000 against the reference
    Lab value.
    """
    results = []
    for tile_id in sorted(tile_layout):
        if tile_id not in reference_spectra:
            raise KeyError(f"tile {tile_id!r} missing from the reference spectra")
        if tile_id not in reference_lab:
            raise KeyError(f"tile {tile_id!r} missing from the reference Lab data")
        centers = tile_layout[tile_id]
        mean_spec, _ = sample_tile_rois(cube, centers, radius)
        ref = reference_spectra[tile_id].value_at(cube.band_centers)
        quant = nrmse(mean_spec, ref)
        relative = nrmse(mean_normalize(mean_spec), mean_normalize(ref))

        sel = _disks_mask(cube, centers, radius)
        xyz = cube.data[sel] @ t_matrix.matrix.T
        lab = xyz_to_lab_array(xyz)
        ref_lab = np.asarray(reference_lab[tile_id], dtype=np.float64)
        de = ciede2000_array(lab, np.broadcast_to(ref_lab, lab.shape))
        results.append(
            TileResult(
                tile_id=tile_id,
                nrmse_quantitative=quant,
                nrmse_relative=relative,
                delta_e_median=float(np.median(de)),
            )
        )

    def _means(rows):
        return (
            float(np.mean([r.nrmse_quantitative for r in rows])),
            float(np.mean([r.nrmse_relative for r in rows])),
            float(np.mean([r.delta_e_median for r in rows])),
        )

    mean_q, mean_r, mean_de = _means(results)
    evaluation = TileEvaluation(
        tiles=results,
        mean_nrmse_quantitative=mean_q,
        mean_nrmse_relative=mean_r,
        mean_delta_e_median=mean_de,
    )
    if subset:
        chosen = [r for r in results if r.tile_id in set(subset)]
        if chosen:
            sq, sr, sde = _means(chosen)
            evaluation.subset = sorted(subset)
            evaluation.subset_mean_nrmse_quantitative = sq
            evaluation.subset_mean_nrmse_relative = sr
            evaluation.subset_mean_delta_e_median = sde
    return evaluation


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

def write_tile_report_csv(path, evaluation: TileEvaluation):
    """One row per tile plus mean rows (columns follow the report glossary:
    NRMSE quantitative in %, NRMSE relative in a.u., median delta E)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["tile_id", "nrmse_quantitative_pct", "nrmse_relative_au",
             "delta_e_median"]
        )
        for tile in evaluation.tiles:
            writer.writerow(
                [tile.tile_id, repr(tile.nrmse_quantitative * 100.0),
                 repr(tile.nrmse_relative), repr(tile.delta_e_median)]
            )
        writer.writerow(
            ["mean_all", repr(evaluation.mean_nrmse_quantitative * 100.0),
             repr(evaluation.mean_nrmse_relative),
             repr(evaluation.mean_delta_e_median)]
        )
        if evaluation.subset_mean_nrmse_quantitative is not None:
            writer.writerow(
                ["mean_subset",
                 repr(evaluation.subset_mean_nrmse_quantitative * 100.0),
                 repr(evaluation.subset_mean_nrmse_relative),
                 repr(evaluation.subset_mean_delta_e_median)]
            )


def report_summary(
    evaluation: TileEvaluation | None = None,
    comparison: ReferenceComparison | None = None,
) -> dict:
    """JSON-ready summary combining tile errors and (when two references were
    compared) MedAPE columns."""
    summary: dict = {}
    if evaluation is not None:
        summary["tiles"] = [asdict(t) for t in evaluation.tiles]
        summary["mean_nrmse_quantitative_pct"] = evaluation.mean_nrmse_quantitative * 100.0
        summary["mean_nrmse_relative_au"] = evaluation.mean_nrmse_relative
        summary["mean_delta_e_median"] = evaluation.mean_delta_e_median
        if evaluation.subset_mean_nrmse_quantitative is not None:
            summary["subset"] = evaluation.subset
            summary["subset_mean_nrmse_quantitative_pct"] = (
                evaluation.subset_mean_nrmse_quantitative * 100.0
            )
            summary["subset_mean_nrmse_relative_au"] = evaluation.subset_mean_nrmse_relative
            summary["subset_mean_delta_e_median"] = evaluation.subset_mean_delta_e_median
    if comparison is not None:
        summary["medape_pixel_by_pixel_pct"] = comparison.medape_pixelwise * 100.0
        summary["medape_sensitivities_pct"] = comparison.medape_sensitivities * 100.0
        summary["nrmse_per_pixel_min"] = comparison.nrmse_min
        summary["nrmse_per_pixel_median"] = comparison.nrmse_median
        summary["nrmse_per_pixel_max"] = comparison.nrmse_max
    return summary


def write_report_json(path, summary: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
