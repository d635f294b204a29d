import hashlib
import json

import numpy as np
import pytest

from hsiref import io
from hsiref.cli import main
from hsiref.core import CubeKind
from hsiref.refmodel import GaussianVignetting, load_model
from hsiref.sim import (
    NoiseModel,
    SimScenario,
    ground_truth_sensitivities,
    save_scenario,
    simulate_white_reference,
)


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    """One simulated acquisition shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    scenario = SimScenario(seed=21, noise=NoiseModel(kind="gaussian",
                                                     sigma_frac=0.01))
    save_scenario(root / "scenario.json", scenario)
    assert main(["simulate", str(root / "scenario.json"),
                 "--out-dir", str(root / "sim")]) == 0
    return root


def run_chain(root, out_dir, threads=None):
    sim = root / "sim"
    out_dir.mkdir(exist_ok=True)
    compose_args = ["compose", str(sim / "sweep.hsiv"),
                    "--out", str(out_dir / "composite.hsiv")]
    if threads is not None:
        compose_args += ["--threads", str(threads)]
    assert main(compose_args) == 0
    assert main([
        "fit", str(out_dir / "composite.hsiv"),
        "--ruler-spectrum", str(sim / "ruler_spectrum.csv"),
        "--band-responses", str(sim / "band_responses.csv"),
        "--method", "gaussian-sequential",
        "--out", str(out_dir / "model.csv"),
        "--invalid-mask", str(out_dir / "composite.hsiv.invalid.hsic"),
        "--full-frame",
    ]) == 0
    assert main([
        "balance", str(sim / "checkerboard_GRAY50.hsic"),
        "--mode", "quantitative",
        "--model", str(out_dir / "model.csv"),
        "--out", str(out_dir / "balanced.hsic"),
        "--srgb", str(out_dir / "balanced.png"),
        "--band-responses", str(sim / "band_responses.csv"),
    ]) == 0
    assert main([
        "evaluate", str(out_dir / "balanced.hsic"),
        "--tile-layout", str(sim / "layout_GRAY50.csv"),
        "--reference-spectra", str(sim / "tiles_spectra.csv"),
        "--reference-lab", str(sim / "tiles_lab.csv"),
        "--camera-matrix", str(sim / "camera_matrix.csv"),
        "--out-report", str(out_dir / "report"),
        "--roi-radius", "12",
    ]) == 0


class TestSimulateCommand:
    def test_outputs_and_manifest_hashes(self, sim_dir):
        manifest = json.loads((sim_dir / "sim" / "simulation.manifest.json").read_text())
        assert manifest["command"] == "simulate"
        for path_str, digest in manifest["outputs"].items():
            from pathlib import Path

            path = Path(path_str)
            assert path.exists()
            assert sha(path) == digest

    def test_rerun_is_byte_identical(self, sim_dir):
        names = ("sweep.hsiv", "reference.hsic", "truth_model.csv",
                 "simulation.manifest.json")
        before = {n: (sim_dir / "sim" / n).read_bytes() for n in names}
        assert main(["simulate", str(sim_dir / "scenario.json"),
                     "--out-dir", str(sim_dir / "sim")]) == 0
        for name in names:
            assert (sim_dir / "sim" / name).read_bytes() == before[name], name

    def test_noise_free_reference_satisfies_invariants(self, tmp_path):
        scenario = SimScenario(seed=5, noise=NoiseModel(kind="none"))
        save_scenario(tmp_path / "s.json", scenario)
        assert main(["simulate", str(tmp_path / "s.json"),
                     "--out-dir", str(tmp_path / "out")]) == 0
        model, _ = load_model(tmp_path / "out" / "truth_model.csv")
        assert abs(model.sensitivities.mean() - 1.0) < 1e-9


class TestComposeCommand:
    def test_background_only_video_exits_2(self, sim_dir, tmp_path, layout):
        from hsiref.core import MosaicVideo

        video = MosaicVideo(np.full((20, 8, 8), 30.0, dtype=np.float32),
                            layout, exposure_ms=10)
        io.write_mosaic_video(tmp_path / "bg.hsiv", video)
        code = main(["compose", str(tmp_path / "bg.hsiv"),
                     "--out", str(tmp_path / "c.hsiv")])
        assert code == 2

    def test_parameter_echoed_in_manifest(self, sim_dir, tmp_path):
        out = tmp_path / "c.hsiv"
        assert main(["compose", str(sim_dir / "sim" / "sweep.hsiv"),
                     "--out", str(out), "--saturation-fraction", "0.9"]) == 0
        manifest = json.loads((tmp_path / "c.hsiv.manifest.json").read_text())
        assert manifest["parameters"]["saturation_fraction"] == 0.9

    def test_composite_feeds_fit(self, sim_dir, tmp_path):
        run_chain(sim_dir, tmp_path / "chain")
        model, mask = load_model(tmp_path / "chain" / "model.csv")
        assert model.converged
        assert mask is not None


class TestFitCommand:
    def test_missing_band_responses_exits_1(self, sim_dir, tmp_path):
        out_dir = tmp_path / "fit"
        out_dir.mkdir()
        assert main(["compose", str(sim_dir / "sim" / "sweep.hsiv"),
                     "--out", str(out_dir / "c.hsiv")]) == 0
        code = main([
            "fit", str(out_dir / "c.hsiv"),
            "--ruler-spectrum", str(sim_dir / "sim" / "ruler_spectrum.csv"),
            "--band-responses", str(out_dir / "missing.csv"),
            "--method", "nonparametric",
            "--out", str(out_dir / "m.csv"),
        ])
        assert code == 1

    def test_nonparametric_model_has_v_cube(self, sim_dir, tmp_path):
        out_dir = tmp_path / "np"
        out_dir.mkdir()
        sim = sim_dir / "sim"
        assert main(["compose", str(sim / "sweep.hsiv"),
                     "--out", str(out_dir / "c.hsiv")]) == 0
        assert main([
            "fit", str(out_dir / "c.hsiv"),
            "--ruler-spectrum", str(sim / "ruler_spectrum.csv"),
            "--band-responses", str(sim / "band_responses.csv"),
            "--method", "nonparametric",
            "--out", str(out_dir / "m.csv"),
            "--full-frame",
        ]) == 0
        text = (out_dir / "m.csv").read_text()
        assert "V_path" in text
        assert (out_dir / "m.csv.v.hsic").exists()
        model, _ = load_model(out_dir / "m.csv")
        assert isinstance(model.vignetting, np.ndarray)

    def test_noiseless_chain_recovers_scenario_truth(self, tmp_path):
        # smoother vignetting so the fit parameters are cleanly identified;
        # sigma carries the inherent bilinear-demosaic bias, the rest hits 1e-4
        scenario = SimScenario(
            seed=9, noise=NoiseModel(kind="none"),
            vignetting=GaussianVignetting(mu_i=64.0, mu_j=80.0, sigma=250.0),
        )
        save_scenario(tmp_path / "s.json", scenario)
        assert main(["simulate", str(tmp_path / "s.json"),
                     "--out-dir", str(tmp_path / "sim")]) == 0
        assert main(["compose", str(tmp_path / "sim" / "sweep.hsiv"),
                     "--out", str(tmp_path / "c.hsiv")]) == 0
        assert main([
            "fit", str(tmp_path / "c.hsiv"),
            "--ruler-spectrum", str(tmp_path / "sim" / "ruler_spectrum.csv"),
            "--band-responses", str(tmp_path / "sim" / "band_responses.csv"),
            "--method", "gaussian-sequential",
            "--out", str(tmp_path / "m.csv"),
            "--full-frame",
        ]) == 0
        model, _ = load_model(tmp_path / "m.csv")
        truth_s = ground_truth_sensitivities(scenario)
        assert abs(model.m - scenario.m) / scenario.m < 1e-4
        assert np.abs(model.sensitivities / truth_s - 1).max() < 1e-4
        g = model.vignetting
        assert abs(g.mu_i - 64.0) / 64.0 < 1e-4
        assert abs(g.mu_j - 80.0) / 80.0 < 1e-4
        assert abs(g.sigma - 250.0) / 250.0 < 5e-3  # demosaic-limited


class TestBalanceCommand:
    def test_relative_mode_normalization(self, sim_dir, tmp_path):
        sim = sim_dir / "sim"
        out = tmp_path / "rel.hsic"
        assert main([
            "balance", str(sim / "checkerboard_GRAY50.hsic"),
            "--mode", "relative",
            "--sensitivities", str(sim / "sensitivities_truth.csv"),
            "--out", str(out),
        ]) == 0
        cube = io.read_cube(out)
        assert cube.kind == CubeKind.RELATIVE
        cube.validate_values(atol=1e-6)

    def test_srgb_of_unit_reflectance_is_white(self, sim_dir, tmp_path):
        sim = sim_dir / "sim"
        unit = io.read_cube(sim / "checkerboard_GRAY50.hsic")
        from hsiref.core import Hypercube

        io.write_cube(tmp_path / "ones.hsic",
                      Hypercube(np.ones_like(unit.data), CubeKind.INTENSITY,
                                unit.band_centers))
        io.write_cube(tmp_path / "white.hsic",
                      Hypercube(np.ones_like(unit.data), CubeKind.INTENSITY,
                                unit.band_centers))
        assert main([
            "balance", str(tmp_path / "ones.hsic"),
            "--mode", "quantitative",
            "--white", str(tmp_path / "white.hsic"),
            "--out", str(tmp_path / "r.hsic"),
            "--srgb", str(tmp_path / "r.png"),
            "--band-responses", str(sim / "band_responses.csv"),
        ]) == 0
        from PIL import Image

        image = np.asarray(Image.open(tmp_path / "r.png"))
        assert np.all(image == 255)

    def test_quantitative_with_model_close_to_truth(self, sim_dir, tmp_path):
        run_chain(sim_dir, tmp_path / "chain2")
        cube = io.read_cube(tmp_path / "chain2" / "balanced.hsic")
        # GRAY50 band reflectances from the simulator's truth file
        truth_rows = (sim_dir / "sim" / "checkerboard_truth.csv").read_text().splitlines()
        truth = np.array([float(r.split(",")[2]) for r in truth_rows[1:]
                          if r.startswith("GRAY50")])
        center = cube.data[54:74, 70:90].mean(axis=(0, 1))
        assert np.abs(center / truth - 1).max() < 0.02


class TestEvaluateCommand:
    def test_report_columns_and_compare_reference(self, sim_dir, tmp_path):
        sim = sim_dir / "sim"
        out_dir = tmp_path / "ev"
        run_chain(sim_dir, out_dir)
        report = json.loads((out_dir / "report.json").read_text())
        assert report["tiles"][0]["tile_id"] == "GRAY50"
        assert report["tiles"][0]["nrmse_quantitative"] < 0.03
        assert "medape_pixel_by_pixel_pct" not in report

        # comparing synthetic and measured references adds MedAPE columns
        assert main([
            "evaluate", str(sim / "reference.hsic"),
            "--tile-layout", str(sim / "layout_GRAY50.csv"),
            "--reference-spectra", str(sim / "tiles_spectra.csv"),
            "--reference-lab", str(sim / "tiles_lab.csv"),
            "--camera-matrix", str(sim / "camera_matrix.csv"),
            "--compare-reference", str(sim / "reference_truth.hsic"),
            "--out-report", str(out_dir / "cmp"),
            "--roi-radius", "12",
        ]) == 0
        cmp_report = json.loads((out_dir / "cmp.json").read_text())
        assert "medape_pixel_by_pixel_pct" in cmp_report
        assert "medape_sensitivities_pct" in cmp_report


class TestDeterminism:
    def test_full_chain_rerun_and_threads_byte_identical(self, sim_dir, tmp_path):
        out = tmp_path / "chain"
        names = ("composite.hsiv", "composite.hsiv.invalid.hsic",
                 "model.csv", "balanced.hsic", "balanced.png",
                 "report.csv", "report.json",
                 "composite.hsiv.manifest.json", "model.csv.manifest.json",
                 "balanced.hsic.manifest.json")
        run_chain(sim_dir, out, threads=1)
        before = {n: (out / n).read_bytes() for n in names}
        run_chain(sim_dir, out, threads=8)  # rerun in place, more threads
        for name in names:
            assert (out / name).read_bytes() == before[name], (
                f"{name} differs between reruns/thread counts"
            )
