"""Command-line surface: compose, fit, balance, evaluate, simulate.

Every command writes a run manifest (parameters, package version, input and
output content hashes, no timestamps) next to its primary output, so reruns
on identical inputs are byte-identical including the manifest.

Exit codes: 0 success, 1 input/parse error, 2 coverage/detection error,
3 model fit did not converge (best-so-far model is still written).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, io
from .composite import CompositeParams, build_composite
from .core import ContentMask, CubeKind, Hypercube, SampledSpectrum
from .colorsci import (
    ColorMatrix,
    camera_matrix_from_cmfs,
    cie1931_cmfs,
    cube_to_srgb_image,
    xyz_to_lab_array,
)
from .errors import CoverageError, DetectionError, HsirefError
from .metrics import (
    compare_references,
    evaluate_tiles,
    report_summary,
    write_report_json,
    write_tile_report_csv,
)
from .mosaic import demosaic_bilinear
from .refmodel import (
    apply_reflectivity_correction,
    cube_validity_from_mosaic,
    detect_content_circle,
    fit_gaussian_joint,
    fit_gaussian_sequential,
    fit_nonparametric,
    load_model,
    reflectivity_factors,
    render_reference,
    save_model,
)
from .sim import (
    SimScenario,
    flat_spectrum,
    ground_truth_model,
    ground_truth_sensitivities,
    load_scenario,
    simulate_checkerboard,
    simulate_ruler_sweep,
    simulate_white_reference,
)
from .whitebalance import balance_relative, balance_with_synthetic, white_balance_cube

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_COVERAGE = 2
EXIT_NONCONVERGED = 3


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(primary_out, command: str, parameters: dict, inputs: list,
                    outputs: list):
    manifest = {
        "command": command,
        "package": f"hsiref {__version__}",
        "parameters": {k: v for k, v in sorted(parameters.items())},
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
    }
    path = Path(str(primary_out) + ".manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _color_matrix_from_args(args, band_centers=None) -> ColorMatrix:
    if getattr(args, "camera_matrix", None):
        return ColorMatrix(io.load_color_matrix(args.camera_matrix))
    if getattr(args, "band_responses", None):
        bands = io.load_band_responses(args.band_responses)
        cmfs = io.load_cmfs(args.cmfs) if getattr(args, "cmfs", None) else cie1931_cmfs()
        return camera_matrix_from_cmfs(bands, cmfs)
    raise HsirefError(
        "an sRGB/Lab conversion needs --camera-matrix or --band-responses "
        "(plus optional --cmfs)"
    )


# ---------------------------------------------------------------------------
# compose
# ---------------------------------------------------------------------------

def _cmd_compose(args) -> int:
    video = io.read_mosaic_video(args.video)
    params = CompositeParams(
        saturation_fraction=args.saturation_fraction,
        savgol_window=args.savgol_window,
        savgol_order=args.savgol_order,
        peak_min_height_frac=args.peak_min_height_frac,
        peak_min_prominence_frac=args.peak_min_prominence_frac,
        region_margin=args.region_margin,
    )
    result = build_composite(video, params, threads=args.threads)
    io.write_mosaic_frame(args.out, result.frame)
    mask_path = args.invalid_mask_out or str(args.out) + ".invalid.hsic"
    io.write_cube(
        mask_path,
        Hypercube(
            data=result.invalid_mask.astype(np.float64)[:, :, None],
            kind=CubeKind.INTENSITY,
            band_centers=np.zeros(1),
        ),
    )
    _write_manifest(
        args.out,
        "compose",
        {
            "saturation_fraction": args.saturation_fraction,
            "savgol_window": args.savgol_window,
            "savgol_order": args.savgol_order,
            "peak_min_height_frac": args.peak_min_height_frac,
            "peak_min_prominence_frac": args.peak_min_prominence_frac,
            "region_margin": args.region_margin,
            # --threads is deliberately absent: it cannot affect the output
            "invalid_fraction": result.invalid_fraction,
        },
        [args.video],
        [args.out, mask_path],
    )
    print(f"composite written to {args.out} "
          f"({result.invalid_fraction:.2%} invalid pixels)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

_FIT_METHODS = {
    "nonparametric": fit_nonparametric,
    "gaussian-joint": fit_gaussian_joint,
    "gaussian-sequential": fit_gaussian_sequential,
}


def _cmd_fit(args) -> int:
    composite = io.read_mosaic_frame(args.composite)
    ruler = io.load_sampled_spectrum(args.ruler_spectrum)
    bands = io.load_band_responses(args.band_responses)
    if bands.n_bands != composite.n_bands:
        raise HsirefError(
            f"band responses have {bands.n_bands} bands, composite pattern "
            f"has {composite.n_bands}"
        )
    rho = reflectivity_factors(ruler, bands)
    corrected = apply_reflectivity_correction(composite, rho)
    cube = demosaic_bilinear(corrected, band_centers=bands.band_centers())

    valid = None
    if args.invalid_mask:
        invalid = io.read_cube(args.invalid_mask).data[:, :, 0] > 0
        valid = cube_validity_from_mosaic(
            invalid, composite.pattern_rows, composite.pattern_cols
        )
    if args.content_center is not None:
        mask = ContentMask(
            center_i=args.content_center[0],
            center_j=args.content_center[1],
            radius=args.content_radius,
            shrink_factor=args.shrink_factor,
        )
    elif args.full_frame:
        mask = ContentMask(
            center_i=(cube.height - 1) / 2.0,
            center_j=(cube.width - 1) / 2.0,
            radius=float(np.sqrt(cube.height * cube.width / np.pi)),
            shrink_factor=1.0,
            full_frame=True,
        )
    else:
        mask = detect_content_circle(composite, shrink_factor=args.shrink_factor)

    model = _FIT_METHODS[args.method](cube, mask, valid)
    save_model(args.out, model, mask)
    outputs = [args.out]
    v_sidecar = Path(str(args.out) + ".v.hsic")
    if v_sidecar.exists():
        outputs.append(v_sidecar)
    _write_manifest(
        args.out,
        "fit",
        {
            "method": args.method,
            "shrink_factor": args.shrink_factor,
            "content_center": list(args.content_center) if args.content_center else None,
            "content_radius": args.content_radius,
            "full_frame": args.full_frame,
            "residual_rms": model.residual_rms,
            "converged": model.converged,
            "degenerate": model.degenerate,
        },
        [args.composite, args.ruler_spectrum, args.band_responses]
        + ([args.invalid_mask] if args.invalid_mask else []),
        outputs,
    )
    print(f"model written to {args.out} (residual rms {model.residual_rms:.4g})")
    if not model.converged:
        print("warning: fit did not converge; best-so-far model written",
              file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


# ---------------------------------------------------------------------------
# balance
# ---------------------------------------------------------------------------

def _cmd_balance(args) -> int:
    image = io.read_cube(args.image)
    dark = io.read_cube(args.dark) if args.dark else None
    exposures = (args.exposure_image, args.exposure_white, args.exposure_dark)
    inputs = [args.image] + ([args.dark] if args.dark else [])

    if args.mode == "quantitative":
        if args.model:
            model, mask = load_model(args.model)
            inputs.append(args.model)
            result = balance_with_synthetic(
                image, model, dark, exposures=exposures, mask=mask
            )
        elif args.white:
            white = io.read_cube(args.white)
            inputs.append(args.white)
            rho = None
            if args.reflectivity != 1.0:
                from .core import ReflectivityFactors

                rho = ReflectivityFactors(np.full(image.n_bands, args.reflectivity))
            result = white_balance_cube(
                image, white, dark, rho, exposures=exposures
            )
        else:
            raise HsirefError("quantitative mode needs --model or --white")
    else:
        if args.sensitivities:
            sens = io.load_sensitivities(args.sensitivities)
            inputs.append(args.sensitivities)
        elif args.model:
            model, _ = load_model(args.model)
            sens = model.sensitivities
            inputs.append(args.model)
        else:
            raise HsirefError("relative mode needs --sensitivities or --model")
        result = balance_relative(image, sens, dark)

    io.write_cube(args.out, result.cube)
    outputs = [args.out]
    if args.srgb:
        matrix = _color_matrix_from_args(args)
        mask_for_png = None
        if args.model:
            _, mask_for_png = load_model(args.model)
        rgb = cube_to_srgb_image(result.cube, matrix, mask_for_png)
        io.save_png(args.srgb, rgb)
        outputs.append(args.srgb)
    _write_manifest(
        args.out,
        "balance",
        {
            "mode": args.mode,
            "exposure_image": args.exposure_image,
            "exposure_white": args.exposure_white,
            "exposure_dark": args.exposure_dark,
            "reflectivity": args.reflectivity,
            "bad_denominators": result.bad_denominator_count,
            "over_unity": result.over_unity_count,
            "zero_spectra": result.zero_spectrum_count,
        },
        inputs,
        outputs,
    )
    print(f"balanced cube written to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _cmd_evaluate(args) -> int:
    cube = io.read_cube(args.cube)
    layout = io.load_tile_layout(args.tile_layout)
    spectra = io.load_tile_spectra(args.reference_spectra)
    lab = io.load_tile_lab(args.reference_lab)
    matrix = _color_matrix_from_args(args)
    subset = args.subset_tiles.split(",") if args.subset_tiles else None
    evaluation = evaluate_tiles(
        cube, layout, spectra, lab, matrix, radius=args.roi_radius, subset=subset
    )
    comparison = None
    inputs = [args.cube, args.tile_layout, args.reference_spectra, args.reference_lab]
    if args.compare_reference:
        other = io.read_cube(args.compare_reference)
        mask = io.load_mask(args.mask) if args.mask else None
        comparison = compare_references(cube, other, mask)
        inputs.append(args.compare_reference)
        if args.mask:
            inputs.append(args.mask)

    csv_path = str(args.out_report) + ".csv"
    json_path = str(args.out_report) + ".json"
    write_tile_report_csv(csv_path, evaluation)
    write_report_json(json_path, report_summary(evaluation, comparison))
    _write_manifest(
        json_path,
        "evaluate",
        {
            "roi_radius": args.roi_radius,
            "subset_tiles": args.subset_tiles,
        },
        inputs,
        [csv_path, json_path],
    )
    print(f"report written to {csv_path} and {json_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _default_tiles() -> dict:
    lam = np.linspace(380.0, 740.0, 61)
    ramp = (lam - lam[0]) / (lam[-1] - lam[0])
    return {
        "GRAY50": flat_spectrum(0.5),
        "RAMPUP": SampledSpectrum(lam, 0.2 + 0.6 * ramp),
        "RAMPDOWN": SampledSpectrum(lam, 0.8 - 0.6 * ramp),
        "GREENPEAK": SampledSpectrum(
            lam, 0.15 + 0.65 * np.exp(-(((lam - 540.0) / 45.0) ** 2))
        ),
    }


def _cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []

    sweep = simulate_ruler_sweep(scenario)
    io.write_mosaic_video(out / "sweep.hsiv", sweep.video)
    io.write_mosaic_frame(out / "composite_truth.hsiv", sweep.truth_composite)
    outputs += [out / "sweep.hsiv", out / "composite_truth.hsiv"]

    reference, truth = simulate_white_reference(scenario)
    io.write_cube(out / "reference.hsic", reference)
    truth_cube = render_reference(truth, scenario.height, scenario.width)
    io.write_cube(out / "reference_truth.hsic", truth_cube)
    save_model(out / "truth_model.csv", truth)
    outputs += [out / "reference.hsic", out / "reference_truth.hsic",
                out / "truth_model.csv"]

    tiles = _default_tiles()
    scenes = simulate_checkerboard(scenario, tiles)
    import csv as _csv

    with open(out / "checkerboard_truth.csv", "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["tile_id", "band", "value"])
        for tile_id in sorted(scenes):
            io.write_cube(out / f"checkerboard_{tile_id}.hsic", scenes[tile_id].cube)
            outputs.append(out / f"checkerboard_{tile_id}.hsic")
            for band, value in enumerate(scenes[tile_id].reflectance):
                writer.writerow([tile_id, band, repr(float(value))])
    outputs.append(out / "checkerboard_truth.csv")

    io.save_band_responses(out / "band_responses.csv", scenario.band_responses)
    io.save_sampled_spectrum(out / "ruler_spectrum.csv", scenario.ruler.reflectance)
    io.save_sampled_spectrum(out / "light_spectrum.csv", scenario.light_spectrum)
    io.save_sensitivities(out / "sensitivities_truth.csv",
                          ground_truth_sensitivities(scenario))
    io.save_tile_spectra(out / "tiles_spectra.csv", tiles)
    outputs += [out / "band_responses.csv", out / "ruler_spectrum.csv",
                out / "light_spectrum.csv", out / "sensitivities_truth.csv",
                out / "tiles_spectra.csv"]

    # ROI layout (five disks around the image center), reference Lab derived
    # from the ground-truth band reflectances, and the camera matrix
    matrix = camera_matrix_from_cmfs(scenario.band_responses, cie1931_cmfs())
    io.save_color_matrix(out / "camera_matrix.csv", matrix.matrix)
    ci, cj = (scenario.height - 1) / 2.0, (scenario.width - 1) / 2.0
    roi_r = min(scenario.height, scenario.width) / 6.0
    offsets = [(0, 0), (-roi_r, 0), (roi_r, 0), (0, -roi_r), (0, roi_r)]
    with open(out / "tiles_layout.csv", "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["tile_id", "i", "j"])
        for tile_id in sorted(tiles):
            for di, dj in offsets:
                writer.writerow([tile_id, repr(ci + di), repr(cj + dj)])
    for tile_id in sorted(tiles):
        with open(out / f"layout_{tile_id}.csv", "w", newline="",
                  encoding="utf-8") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["tile_id", "i", "j"])
            for di, dj in offsets:
                writer.writerow([tile_id, repr(ci + di), repr(cj + dj)])
        outputs.append(out / f"layout_{tile_id}.csv")
    with open(out / "tiles_lab.csv", "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["tile_id", "L", "a", "b"])
        for tile_id in sorted(scenes):
            xyz = matrix.matrix @ scenes[tile_id].reflectance
            lab = xyz_to_lab_array(xyz)
            writer.writerow([tile_id] + [repr(float(c)) for c in lab])
    outputs += [out / "camera_matrix.csv", out / "tiles_layout.csv",
                out / "tiles_lab.csv"]

    manifest = _write_manifest(
        out / "simulation", "simulate",
        {"scenario": str(args.scenario), "coverage_fraction": sweep.coverage_fraction},
        [args.scenario],
        outputs,
    )
    print(f"simulation written to {out} ({len(outputs)} files, manifest {manifest})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hsiref",
        description="Synthetic white references and reflectance calibration "
        "for snapshot-mosaic hyperspectral imaging.",
    )
    parser.add_argument("--version", action="version", version=f"hsiref {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    defaults = CompositeParams()

    p = sub.add_parser("compose", help="composite a reference sweep video")
    p.add_argument("video", help="HSIV sweep video")
    p.add_argument("--out", required=True, help="output composite (1-frame HSIV)")
    p.add_argument("--invalid-mask-out", default=None,
                   help="output invalid-pixel mask (HSIC, default <out>.invalid.hsic)")
    p.add_argument("--saturation-fraction", type=float,
                   default=defaults.saturation_fraction)
    p.add_argument("--savgol-window", type=int, default=defaults.savgol_window)
    p.add_argument("--savgol-order", type=int, default=defaults.savgol_order)
    p.add_argument("--peak-min-height-frac", type=float,
                   default=defaults.peak_min_height_frac)
    p.add_argument("--peak-min-prominence-frac", type=float,
                   default=defaults.peak_min_prominence_frac)
    p.add_argument("--region-margin", type=int, default=defaults.region_margin)
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (output is independent of this)")
    p.set_defaults(func=_cmd_compose)

    p = sub.add_parser("fit", help="fit a separable white-reference model")
    p.add_argument("composite", help="composite (1-frame HSIV)")
    p.add_argument("--ruler-spectrum", required=True,
                   help="reference-object reflectance CSV")
    p.add_argument("--band-responses", required=True, help="band responses CSV")
    p.add_argument("--method", choices=sorted(_FIT_METHODS), required=True)
    p.add_argument("--out", required=True, help="output model CSV")
    p.add_argument("--invalid-mask", default=None,
                   help="invalid-pixel mask from compose (HSIC)")
    p.add_argument("--content-center", type=float, nargs=2, default=None,
                   metavar=("I", "J"), help="manual content-disk center")
    p.add_argument("--content-radius", type=float, default=None,
                   help="manual content-disk radius (needs --content-center)")
    p.add_argument("--full-frame", action="store_true",
                   help="skip content detection, use the whole frame")
    p.add_argument("--shrink-factor", type=float, default=0.9)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("balance", help="white balance a hypercube")
    p.add_argument("image", help="intensity cube (HSIC)")
    p.add_argument("--mode", choices=["quantitative", "relative"], required=True)
    p.add_argument("--model", default=None, help="fitted model CSV")
    p.add_argument("--white", default=None, help="measured white reference HSIC")
    p.add_argument("--sensitivities", default=None,
                   help="sensitivities CSV (relative mode)")
    p.add_argument("--dark", default=None, help="dark reference HSIC")
    p.add_argument("--exposure-image", type=float, default=1.0)
    p.add_argument("--exposure-white", type=float, default=1.0)
    p.add_argument("--exposure-dark", type=float, default=1.0)
    p.add_argument("--reflectivity", type=float, default=1.0,
                   help="constant reference reflectivity for --white mode")
    p.add_argument("--out", required=True, help="output cube (HSIC)")
    p.add_argument("--srgb", default=None, help="also write an sRGB PNG here")
    p.add_argument("--camera-matrix", default=None, help="3xN matrix CSV for --srgb")
    p.add_argument("--band-responses", default=None,
                   help="band responses CSV (builds the matrix for --srgb)")
    p.add_argument("--cmfs", default=None,
                   help="color matching functions CSV (default: built-in CIE 1931)")
    p.set_defaults(func=_cmd_balance)

    p = sub.add_parser("evaluate", help="tile-based evaluation report")
    p.add_argument("cube", help="balanced reflectance cube (HSIC)")
    p.add_argument("--tile-layout", required=True, help="tile ROI centers CSV")
    p.add_argument("--reference-spectra", required=True,
                   help="per-tile reference spectra CSV")
    p.add_argument("--reference-lab", required=True, help="per-tile Lab CSV")
    p.add_argument("--out-report", required=True,
                   help="report path prefix (writes .csv and .json)")
    p.add_argument("--camera-matrix", default=None)
    p.add_argument("--band-responses", default=None)
    p.add_argument("--cmfs", default=None)
    p.add_argument("--roi-radius", type=float, default=30.0)
    p.add_argument("--subset-tiles", default=None,
                   help="comma-separated tile ids for the subset mean")
    p.add_argument("--compare-reference", default=None,
                   help="second reference cube; adds MedAPE columns")
    p.add_argument("--mask", default=None, help="content mask CSV for the comparison")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("simulate", help="generate a synthetic acquisition")
    p.add_argument("scenario", help="scenario JSON")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CoverageError, DetectionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COVERAGE
    except (HsirefError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
