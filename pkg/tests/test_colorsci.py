import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from hsiref.colorsci import (
    D65_WHITE,
    ColorMatrix,
    ColorSpace,
    ColorTriple,
    camera_matrix_from_cmfs,
    cie1931_cmfs,
    ciede2000_array,
    cube_to_srgb_image,
    delta_e_2000,
    gamma_encode,
    gamma_encode_array,
    spectrum_to_xyz,
    xyz_to_lab,
    xyz_to_lab_array,
    xyz_to_linear_srgb,
)
from hsiref.core import BandResponseSet, CubeKind, Hypercube, SampledSpectrum

# Published CIEDE2000 verification dataset (Sharma, Wu & Dalal 2005): 34 Lab
# pairs with reference differences, kL = kC = kH = 1.
CIEDE2000_CASES = [
    ((50.0000, 2.6772, -79.7751), (50.0000, 0.0000, -82.7485), 2.0425),
    ((50.0000, 3.1571, -77.2803), (50.0000, 0.0000, -82.7485), 2.8615),
    ((50.0000, 2.8361, -74.0200), (50.0000, 0.0000, -82.7485), 3.4412),
    ((50.0000, -1.3802, -84.2814), (50.0000, 0.0000, -82.7485), 1.0000),
    ((50.0000, -1.1848, -84.8006), (50.0000, 0.0000, -82.7485), 1.0000),
    ((50.0000, -0.9009, -85.5211), (50.0000, 0.0000, -82.7485), 1.0000),
    ((50.0000, 0.0000, 0.0000), (50.0000, -1.0000, 2.0000), 2.3669),
    ((50.0000, -1.0000, 2.0000), (50.0000, 0.0000, 0.0000), 2.3669),
    ((50.0000, 2.4900, -0.0010), (50.0000, -2.4900, 0.0009), 7.1792),
    ((50.0000, 2.4900, -0.0010), (50.0000, -2.4900, 0.0010), 7.1792),
    ((50.0000, 2.4900, -0.0010), (50.0000, -2.4900, 0.0011), 7.2195),
    ((50.0000, 2.4900, -0.0010), (50.0000, -2.4900, 0.0012), 7.2195),
    ((50.0000, -0.0010, 2.4900), (50.0000, 0.0009, -2.4900), 4.8045),
    ((50.0000, -0.0010, 2.4900), (50.0000, 0.0010, -2.4900), 4.8045),
    ((50.0000, -0.0010, 2.4900), (50.0000, 0.0011, -2.4900), 4.7461),
    ((50.0000, 2.5000, 0.0000), (50.0000, 0.0000, -2.5000), 4.3065),
    ((50.0000, 2.5000, 0.0000), (73.0000, 25.0000, -18.0000), 27.1492),
    ((50.0000, 2.5000, 0.0000), (61.0000, -5.0000, 29.0000), 22.8977),
    ((50.0000, 2.5000, 0.0000), (56.0000, -27.0000, -3.0000), 31.9030),
    ((50.0000, 2.5000, 0.0000), (58.0000, 24.0000, 15.0000), 19.4535),
    ((50.0000, 2.5000, 0.0000), (50.0000, 3.1736, 0.5854), 1.0000),
    ((50.0000, 2.5000, 0.0000), (50.0000, 3.2972, 0.0000), 1.0000),
    ((50.0000, 2.5000, 0.0000), (50.0000, 1.8634, 0.5757), 1.0000),
    ((50.0000, 2.5000, 0.0000), (50.0000, 3.2592, 0.3350), 1.0000),
    ((60.2574, -34.0099, 36.2677), (60.4626, -34.1751, 39.4387), 1.2644),
    ((63.0109, -31.0961, -5.8663), (62.8187, -29.7946, -4.0864), 1.2630),
    ((61.2901, 3.7196, -5.3901), (61.4292, 2.2480, -4.9620), 1.8731),
    ((35.0831, -44.1164, 3.7933), (35.0232, -40.0716, 1.5901), 1.8645),
    ((22.7233, 20.0904, -46.6940), (23.0331, 14.9730, -42.5619), 2.0373),
    ((36.4612, 47.8580, 18.3852), (36.2715, 50.5065, 21.2231), 1.4146),
    ((90.8027, -2.0831, 1.4410), (91.1528, -1.6435, 0.0447), 1.4441),
    ((90.9257, -0.5406, -0.9208), (88.6381, -0.8985, -0.7239), 1.5381),
    ((6.7747, -0.2908, -2.4247), (5.8714, -0.0985, -2.2286), 0.6377),
    ((2.0776, 0.0795, -1.1350), (0.9033, -0.0636, -0.5514), 0.9082),
]


def lab(values):
    return ColorTriple(ColorSpace.LAB, *values)


class TestCiede2000:
    @pytest.mark.parametrize("lab1,lab2,expected", CIEDE2000_CASES)
    def test_published_dataset(self, lab1, lab2, expected):
        assert delta_e_2000(lab(lab1), lab(lab2)) == pytest.approx(expected, abs=1e-4)

    def test_identity_is_zero(self):
        assert delta_e_2000(lab((42.0, 5.0, -3.0)), lab((42.0, 5.0, -3.0))) == 0.0

    @settings(max_examples=100, deadline=None)
    @given(
        l1=st.floats(0, 100), a1=st.floats(-100, 100), b1=st.floats(-100, 100),
        l2=st.floats(0, 100), a2=st.floats(-100, 100), b2=st.floats(-100, 100),
    )
    def test_symmetric_and_non_negative(self, l1, a1, b1, l2, a2, b2):
        fwd = delta_e_2000(lab((l1, a1, b1)), lab((l2, a2, b2)))
        rev = delta_e_2000(lab((l2, a2, b2)), lab((l1, a1, b1)))
        assert fwd >= 0
        assert fwd == pytest.approx(rev, abs=1e-9)

    def test_vectorized_matches_scalar(self):
        lab1 = np.array([c[0] for c in CIEDE2000_CASES])
        lab2 = np.array([c[1] for c in CIEDE2000_CASES])
        expected = np.array([c[2] for c in CIEDE2000_CASES])
        assert np.allclose(ciede2000_array(lab1, lab2), expected, atol=1e-4)


class TestXyzToLinearSrgb:
    def test_white_point_maps_to_ones(self):
        triple = xyz_to_linear_srgb(ColorTriple(ColorSpace.XYZ, *D65_WHITE))
        assert triple.space == ColorSpace.LINEAR_SRGB
        assert np.allclose([triple.c1, triple.c2, triple.c3], 1.0, atol=1e-4)
        assert not triple.gamut_clipped

    def test_black_maps_to_black(self):
        triple = xyz_to_linear_srgb(ColorTriple(ColorSpace.XYZ, 0, 0, 0))
        assert (triple.c1, triple.c2, triple.c3) == (0, 0, 0)

    def test_pure_y_is_out_of_gamut(self):
        triple = xyz_to_linear_srgb(ColorTriple(ColorSpace.XYZ, 0, 1, 0))
        assert triple.gamut_clipped
        assert triple.c1 == 0.0  # negative red clipped

    def test_wrong_space_rejected(self):
        with pytest.raises(ValueError, match="XYZ"):
            xyz_to_linear_srgb(ColorTriple(ColorSpace.LAB, 50, 0, 0))


class TestGammaEncode:
    def test_endpoints(self):
        out = gamma_encode_array(np.array([0.0, 1.0]))
        assert out[0] == 0.0
        assert out[1] == pytest.approx(1.0, abs=1e-12)

    def test_knee_value(self):
        assert gamma_encode_array(np.array([0.0031308]))[0] == pytest.approx(
            12.92 * 0.0031308, abs=1e-12
        )
        # both branch formulas agree at the knee
        linear_side = 12.92 * 0.0031308
        power_side = 1.055 * 0.0031308 ** (1 / 2.4) - 0.055
        assert linear_side == pytest.approx(power_side, abs=1e-5)

    def test_mid_value(self):
        assert gamma_encode_array(np.array([0.5]))[0] == pytest.approx(
            1.055 * 0.5 ** (1 / 2.4) - 0.055, abs=1e-12
        )

    def test_strictly_monotone_and_branches_meet(self):
        xs = np.linspace(0, 1, 2001)
        ys = gamma_encode_array(xs)
        assert np.all(np.diff(ys) > 0)
        knee = 0.0031308
        assert abs(12.92 * knee - (1.055 * knee ** (1 / 2.4) - 0.055)) < 1e-7

    def test_triple_interface(self):
        triple = gamma_encode(ColorTriple(ColorSpace.LINEAR_SRGB, 0.5, 0.25, 1.0))
        assert triple.space == ColorSpace.SRGB
        assert 0 <= triple.c1 <= 1


class TestXyzToLab:
    def test_white_point(self):
        triple = xyz_to_lab(ColorTriple(ColorSpace.XYZ, *D65_WHITE))
        assert triple.c1 == pytest.approx(100.0, abs=1e-9)
        assert triple.c2 == pytest.approx(0.0, abs=1e-9)
        assert triple.c3 == pytest.approx(0.0, abs=1e-9)

    def test_black(self):
        triple = xyz_to_lab(ColorTriple(ColorSpace.XYZ, 0, 0, 0))
        assert (triple.c1, triple.c2, triple.c3) == (0.0, 0.0, 0.0)

    def test_mid_gray(self):
        xyz = tuple(0.18 * c for c in D65_WHITE)
        triple = xyz_to_lab(ColorTriple(ColorSpace.XYZ, *xyz))
        assert triple.c1 == pytest.approx(116 * 0.18 ** (1 / 3) - 16, abs=1e-9)
        assert triple.c1 == pytest.approx(49.496, abs=1e-3)
        assert abs(triple.c2) < 1e-9 and abs(triple.c3) < 1e-9

    def test_inverse_round_trip(self):
        for lab_in in [(1.0, 0, 0), (25.0, 10.0, -20.0), (50.0, -30.0, 40.0),
                       (100.0, 5.0, 5.0)]:
            xyz = oracles.lab_to_xyz(lab_in)
            back = xyz_to_lab_array(np.array(xyz))
            assert np.allclose(back, lab_in, atol=1e-9)


class TestCameraMatrix:
    def _bands(self, n=16):
        from hsiref.sim import synthetic_band_responses

        return synthetic_band_responses(n)

    def test_flat_spectrum_maps_to_white_point(self):
        matrix = camera_matrix_from_cmfs(self._bands(), cie1931_cmfs())
        xyz = matrix.matrix @ np.ones(16)
        assert xyz[1] == pytest.approx(1.0, abs=1e-9)
        assert np.allclose(xyz, D65_WHITE, atol=1e-9)

    def test_single_band_unit_cmf(self):
        band = BandResponseSet([SampledSpectrum([500, 600], [1.0, 1.0])])
        flat = SampledSpectrum([400, 700], [1.0, 1.0])
        matrix = camera_matrix_from_cmfs(band, (flat, flat, flat))
        # one band carrying the whole white point
        assert np.allclose(matrix.matrix[:, 0], D65_WHITE, atol=1e-12)

    def test_identical_bands_give_identical_columns(self):
        band = SampledSpectrum([500, 550, 600], [0.2, 1.0, 0.2])
        bands = BandResponseSet([band, band])
        matrix = camera_matrix_from_cmfs(bands, cie1931_cmfs())
        assert np.allclose(matrix.matrix[:, 0], matrix.matrix[:, 1], atol=1e-12)


class TestCubeToSrgb:
    def _matrix(self, n=4):
        from hsiref.sim import synthetic_band_responses

        return camera_matrix_from_cmfs(synthetic_band_responses(n), cie1931_cmfs())

    def test_unit_reflectance_renders_white(self):
        cube = Hypercube(np.ones((4, 5, 4)), CubeKind.REFLECTANCE)
        image = cube_to_srgb_image(cube, self._matrix())
        assert image.shape == (4, 5, 3)
        assert np.all(image == 255)

    def test_zero_reflectance_renders_black(self):
        cube = Hypercube(np.zeros((4, 5, 4)), CubeKind.REFLECTANCE)
        assert np.all(cube_to_srgb_image(cube, self._matrix()) == 0)

    def test_mask_blacks_outside(self):
        from hsiref.core import ContentMask

        cube = Hypercube(np.ones((8, 8, 4)), CubeKind.REFLECTANCE)
        mask = ContentMask(center_i=4, center_j=4, radius=2, shrink_factor=1.0)
        image = cube_to_srgb_image(cube, self._matrix(), mask)
        assert np.all(image[4, 4] == 255)
        assert np.all(image[0, 0] == 0)

    def test_requires_reflectance_kind(self):
        cube = Hypercube(np.ones((2, 2, 4)), CubeKind.INTENSITY)
        with pytest.raises(ValueError, match="reflectance"):
            cube_to_srgb_image(cube, self._matrix())

    def test_matches_per_pixel_triple_conversion(self, rng):
        matrix = self._matrix()
        cube = Hypercube(rng.uniform(0, 1, (3, 3, 4)), CubeKind.REFLECTANCE)
        image = cube_to_srgb_image(cube, matrix)
        for i in range(3):
            for j in range(3):
                xyz = spectrum_to_xyz(cube.data[i, j], matrix)
                srgb = gamma_encode(xyz_to_linear_srgb(xyz))
                expected = np.rint(np.array([srgb.c1, srgb.c2, srgb.c3]) * 255)
                assert np.array_equal(image[i, j], expected.astype(np.uint8))
