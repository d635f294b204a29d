import numpy as np
import pytest

from hsiref.core import (
    BandResponseSet,
    ContentMask,
    CubeKind,
    Hypercube,
    MosaicFrame,
    MosaicVideo,
    ReflectivityFactors,
    SampledSpectrum,
)
from hsiref.errors import GeometryError


class TestMosaicFrame:
    def test_band_map_tiles_layout(self, layout):
        frame = MosaicFrame(np.zeros((8, 8)), layout, exposure_ms=10)
        bm = frame.band_map()
        assert bm.shape == (8, 8)
        assert bm[0, 0] == layout[0, 0]
        assert bm[5, 6] == layout[1, 2]

    def test_duplicate_band_index_rejected(self):
        bad = np.zeros((4, 4), dtype=int)
        with pytest.raises(ValueError, match="bijection"):
            MosaicFrame(np.zeros((8, 8)), bad, exposure_ms=10)

    def test_dimensions_must_be_pattern_multiples(self, layout):
        with pytest.raises(GeometryError):
            MosaicFrame(np.zeros((7, 8)), layout, exposure_ms=10)
        with pytest.raises(GeometryError):
            MosaicFrame(np.zeros((8, 10)), layout, exposure_ms=10)

    def test_non_positive_exposure_rejected(self, layout):
        with pytest.raises(ValueError):
            MosaicFrame(np.zeros((8, 8)), layout, exposure_ms=0)

    def test_count_range_validation(self, layout):
        frame = MosaicFrame(np.full((4, 4), 1024.0), layout, exposure_ms=10,
                            bit_depth=10)
        with pytest.raises(ValueError, match="raw counts"):
            frame.validate_counts()
        MosaicFrame(np.full((4, 4), 1023.0), layout, exposure_ms=10,
                    bit_depth=10).validate_counts()


class TestMosaicVideo:
    def test_frame_view(self, layout):
        data = np.arange(2 * 4 * 4, dtype=np.float32).reshape(2, 4, 4)
        video = MosaicVideo(data, layout, exposure_ms=5)
        assert video.frame_count == 2
        frame = video.frame(1)
        assert frame.exposure_ms == 5
        assert np.array_equal(frame.data, data[1])

    def test_single_frame_allowed(self, layout):
        MosaicVideo(np.zeros((1, 4, 4), dtype=np.float32), layout, exposure_ms=5)


class TestHypercube:
    def test_placeholder_band_centers(self):
        cube = Hypercube(np.zeros((2, 2, 3)))
        assert np.array_equal(cube.band_centers, [0.0, 1.0, 2.0])

    def test_band_center_length_checked(self):
        with pytest.raises(GeometryError):
            Hypercube(np.zeros((2, 2, 3)), band_centers=np.zeros(2))

    def test_reflectance_validation(self):
        cube = Hypercube(np.full((2, 2, 2), -0.5), kind=CubeKind.REFLECTANCE)
        with pytest.raises(ValueError, match="negative"):
            cube.validate_values()
        over = Hypercube(np.full((2, 2, 2), 1.5), kind=CubeKind.REFLECTANCE)
        assert over.validate_values() == 8  # flagged, not an error

    def test_relative_normalization_validation(self):
        data = np.ones((2, 2, 4))
        Hypercube(data, kind=CubeKind.RELATIVE).validate_values()
        data[0, 0] = [2, 2, 2, 2]
        with pytest.raises(ValueError, match="normalization"):
            Hypercube(data, kind=CubeKind.RELATIVE).validate_values()
        # zero (masked) pixels are permitted and counted
        data[0, 0] = 0
        assert Hypercube(data, kind=CubeKind.RELATIVE).validate_values() == 1


class TestSampledSpectrum:
    def test_strictly_increasing_required(self):
        with pytest.raises(ValueError):
            SampledSpectrum([500, 500], [1, 2])
        with pytest.raises(ValueError):
            SampledSpectrum([500, 400], [1, 2])

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            SampledSpectrum([500], [1])

    def test_interpolation_clamps(self):
        s = SampledSpectrum([400, 500], [1.0, 2.0])
        assert s.value_at(450) == 1.5
        assert s.value_at(300) == 1.0
        assert s.value_at(600) == 2.0


class TestBandResponseSet:
    def test_negative_response_rejected(self):
        with pytest.raises(ValueError, match="negative"):
            BandResponseSet([SampledSpectrum([400, 500], [-0.1, 1.0])])

    def test_zero_integral_rejected(self):
        with pytest.raises(ValueError, match="integral"):
            BandResponseSet([SampledSpectrum([400, 500], [0.0, 0.0])])

    def test_band_centers_are_centroids(self):
        # symmetric triangle centred at 550
        band = SampledSpectrum([500, 550, 600], [0.0, 1.0, 0.0])
        centers = BandResponseSet([band]).band_centers()
        assert centers == pytest.approx([550.0])


class TestReflectivityFactors:
    def test_range(self):
        ReflectivityFactors([0.5, 1.0])
        with pytest.raises(ValueError):
            ReflectivityFactors([0.0, 0.5])
        with pytest.raises(ValueError):
            ReflectivityFactors([0.5, 1.1])


class TestContentMask:
    def test_effective_radius_and_membership(self):
        mask = ContentMask(center_i=10, center_j=10, radius=10, shrink_factor=0.9)
        assert mask.effective_radius == pytest.approx(9.0)
        grid = mask.to_mask(21, 21)
        assert grid[10, 10]
        assert grid[10, 19]  # distance 9 inside
        assert not grid[10, 20]  # distance 10 outside after shrink

    def test_full_frame_short_circuits(self):
        mask = ContentMask(center_i=0, center_j=0, radius=1, full_frame=True)
        assert mask.to_mask(4, 5).all()

    def test_validation(self):
        with pytest.raises(ValueError):
            ContentMask(0, 0, radius=0)
        with pytest.raises(ValueError):
            ContentMask(0, 0, radius=5, shrink_factor=0)
