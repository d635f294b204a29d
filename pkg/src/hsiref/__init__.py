"""Synthetic white references and reflectance calibration for snapshot-mosaic
hyperspectral imaging."""

__version__ = "0.1.0"

from .core import (
    BandResponseSet,
    ContentMask,
    CubeKind,
    Hypercube,
    MosaicFrame,
    MosaicVideo,
    ReflectivityFactors,
    SampledSpectrum,
)

__all__ = [
    "BandResponseSet",
    "ContentMask",
    "CubeKind",
    "Hypercube",
    "MosaicFrame",
    "MosaicVideo",
    "ReflectivityFactors",
    "SampledSpectrum",
    "__version__",
]
