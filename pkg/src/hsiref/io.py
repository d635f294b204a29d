"""Portable file formats: HSIC cubes, HSIV mosaic videos and the CSV sidecars.

Binary layouts are little-endian with 32-bit float payloads so that a write
followed by a read returns a value-identical object on any platform.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .core import (
    BandResponseSet,
    ContentMask,
    CubeKind,
    Hypercube,
    MosaicFrame,
    MosaicVideo,
    SampledSpectrum,
)
from .errors import FormatError, SpectrumParseError

HSIC_MAGIC = b"HSIC"
HSIV_MAGIC = b"HSIV"
_LAYOUT_BYTES = 16

# guards against absurd header dimensions before multiplying them out
_MAX_DIM = 1 << 20
_MAX_VALUES = 1 << 34


def _read_exact(fh, count: int, what: str) -> bytes:
    offset = fh.tell()
    buf = fh.read(count)
    if len(buf) != count:
        raise FormatError(f"truncated {what}: wanted {count} bytes, got {len(buf)}", offset)
    return buf


def _check_dims(dims: dict[str, int], offset: int):
    for name, value in dims.items():
        if value == 0 or value > _MAX_DIM:
            raise FormatError(f"dimension overflow: {name}={value}", offset)


# ---------------------------------------------------------------------------
# HSIC hypercube files
# ---------------------------------------------------------------------------

def write_cube(path, cube: Hypercube):
    """magic 'HSIC', u32 version, u32 H, u32 W, u32 N, u8 kind, 3 pad bytes,
    N f32 band centers, then H*W*N f32 payload in (i, j, n) row-major order."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(HSIC_MAGIC)
        fh.write(struct.pack("<IIIIB3x", 1, cube.height, cube.width, cube.n_bands,
                             int(cube.kind)))
        fh.write(np.asarray(cube.band_centers, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(cube.data, dtype="<f4").tobytes())


def read_cube(path) -> Hypercube:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != HSIC_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {HSIC_MAGIC!r}", 0)
        header_off = fh.tell()
        version, h, w, n, kind = struct.unpack(
            "<IIIIB3x", _read_exact(fh, struct.calcsize("<IIIIB3x"), "header")
        )
        if version != 1:
            raise FormatError(f"unsupported version {version}", header_off)
        _check_dims({"H": h, "W": w, "N": n}, header_off)
        if h * w * n > _MAX_VALUES:
            raise FormatError(f"dimension overflow: {h}x{w}x{n} values", header_off)
        if kind > 2:
            raise FormatError(f"unknown cube kind {kind}", header_off + 16)
        centers = np.frombuffer(_read_exact(fh, 4 * n, "band centers"), dtype="<f4")
        payload = _read_exact(fh, 4 * h * w * n, "payload")
        data = np.frombuffer(payload, dtype="<f4").reshape(h, w, n)
    return Hypercube(
        data=data.astype(np.float64),
        kind=CubeKind(kind),
        band_centers=centers.astype(np.float64),
    )


# ---------------------------------------------------------------------------
# HSIV mosaic video files
# ---------------------------------------------------------------------------

def write_mosaic_video(path, video: MosaicVideo):
    """magic 'HSIV', u32 version, u32 H, u32 W, u32 pattern_rows,
    u32 pattern_cols, u32 frame_count, f32 exposure_ms, u8 bit_depth,
    3 pad bytes, 16 u8 band layout (row-major over the pattern, zero padded),
    then frame_count H*W f32 frame payloads."""
    path = Path(path)
    pr, pc = video.band_layout.shape
    if pr * pc > _LAYOUT_BYTES:
        raise FormatError(f"pattern {pr}x{pc} exceeds the {_LAYOUT_BYTES}-byte layout field")
    layout = np.zeros(_LAYOUT_BYTES, dtype=np.uint8)
    layout[: pr * pc] = video.band_layout.ravel()
    with open(path, "wb") as fh:
        fh.write(HSIV_MAGIC)
        fh.write(struct.pack("<IIIIIIfB3x", 1, video.height, video.width, pr, pc,
                             video.frame_count, video.exposure_ms, video.bit_depth))
        fh.write(layout.tobytes())
        fh.write(np.ascontiguousarray(video.data, dtype="<f4").tobytes())


def write_mosaic_frame(path, frame: MosaicFrame):
    """A single frame is stored as a 1-frame HSIV video."""
    video = MosaicVideo(
        data=frame.data[None, :, :],
        band_layout=frame.band_layout,
        exposure_ms=frame.exposure_ms,
        bit_depth=frame.bit_depth,
    )
    write_mosaic_video(path, video)


def read_mosaic_video(path) -> MosaicVideo:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != HSIV_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {HSIV_MAGIC!r}", 0)
        header_off = fh.tell()
        version, h, w, pr, pc, frames, exposure, bit_depth = struct.unpack(
            "<IIIIIIfB3x", _read_exact(fh, struct.calcsize("<IIIIIIfB3x"), "header")
        )
        if version != 1:
            raise FormatError(f"unsupported version {version}", header_off)
        _check_dims({"H": h, "W": w, "pattern_rows": pr, "pattern_cols": pc,
                     "frame_count": frames}, header_off)
        if pr * pc > _LAYOUT_BYTES:
            raise FormatError(f"pattern {pr}x{pc} exceeds the layout field", header_off)
        if h * w * frames > _MAX_VALUES:
            raise FormatError(f"dimension overflow: {frames}x{h}x{w} values", header_off)
        layout_raw = np.frombuffer(_read_exact(fh, _LAYOUT_BYTES, "band layout"),
                                   dtype=np.uint8)
        layout = layout_raw[: pr * pc].reshape(pr, pc).astype(np.int64)
        frame_bytes = 4 * h * w
        data = np.empty((frames, h, w), dtype=np.float32)
        for k in range(frames):
            offset = fh.tell()
            buf = fh.read(frame_bytes)
            if len(buf) != frame_bytes:
                raise FormatError(
                    f"truncated payload in frame {k}: wanted {frame_bytes} bytes, "
                    f"got {len(buf)}",
                    offset,
                )
            data[k] = np.frombuffer(buf, dtype="<f4").reshape(h, w)
    return MosaicVideo(data=data, band_layout=layout, exposure_ms=exposure,
                       bit_depth=bit_depth)


def read_mosaic_frame(path) -> MosaicFrame:
    video = read_mosaic_video(path)
    if video.frame_count != 1:
        raise FormatError(f"expected a 1-frame file, found {video.frame_count} frames")
    frame = video.frame(0)
    return MosaicFrame(
        data=frame.data.astype(np.float64),
        band_layout=frame.band_layout,
        exposure_ms=frame.exposure_ms,
        bit_depth=frame.bit_depth,
    )


# ---------------------------------------------------------------------------
# CSV spectra and sidecars
# ---------------------------------------------------------------------------

def _read_csv_rows(path) -> list[list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [row for row in csv.reader(fh)]


def _parse_float(text: str, line: int, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise SpectrumParseError(f"bad {what} value {text!r}", line) from None


def load_sampled_spectrum(path) -> SampledSpectrum:
    """CSV with header ``wavelength_nm,value``; wavelengths strictly increasing."""
    rows = _read_csv_rows(path)
    if not rows or [c.strip() for c in rows[0][:2]] != ["wavelength_nm", "value"]:
        raise SpectrumParseError("expected header 'wavelength_nm,value'", 1)
    wavelengths, values = [], []
    for idx, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) < 2:
            raise SpectrumParseError("expected two columns", idx)
        lam = _parse_float(row[0], idx, "wavelength")
        val = _parse_float(row[1], idx, "spectrum")
        if wavelengths:
            if lam == wavelengths[-1]:
                raise SpectrumParseError(f"duplicate wavelength {lam:g}", idx)
            if lam < wavelengths[-1]:
                raise SpectrumParseError(
                    f"wavelengths not increasing: {lam:g} after {wavelengths[-1]:g}", idx
                )
        wavelengths.append(lam)
        values.append(val)
    if len(wavelengths) < 2:
        raise SpectrumParseError("need at least 2 samples", len(rows))
    return SampledSpectrum(np.array(wavelengths), np.array(values))


def save_sampled_spectrum(path, spectrum: SampledSpectrum):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["wavelength_nm", "value"])
        for lam, val in zip(spectrum.wavelengths_nm, spectrum.values):
            writer.writerow([repr(float(lam)), repr(float(val))])


def load_band_responses(path) -> BandResponseSet:
    """CSV with header ``wavelength_nm,band_0,...,band_{N-1}``."""
    rows = _read_csv_rows(path)
    if not rows or rows[0][0].strip() != "wavelength_nm" or len(rows[0]) < 2:
        raise SpectrumParseError("expected header 'wavelength_nm,band_0,...'", 1)
    n = len(rows[0]) - 1
    wavelengths, columns = [], [[] for _ in range(n)]
    for idx, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != n + 1:
            raise SpectrumParseError(f"expected {n + 1} columns, got {len(row)}", idx)
        lam = _parse_float(row[0], idx, "wavelength")
        if wavelengths and lam <= wavelengths[-1]:
            raise SpectrumParseError("wavelengths must be strictly increasing", idx)
        wavelengths.append(lam)
        for b in range(n):
            columns[b].append(_parse_float(row[b + 1], idx, f"band_{b}"))
    lam_arr = np.array(wavelengths)
    return BandResponseSet([SampledSpectrum(lam_arr, np.array(col)) for col in columns])


def save_band_responses(path, bands: BandResponseSet):
    grid = np.unique(np.concatenate([r.wavelengths_nm for r in bands.responses]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["wavelength_nm"] + [f"band_{n}" for n in range(bands.n_bands)])
        for lam in grid:
            writer.writerow([repr(float(lam))] +
                            [repr(float(r.value_at(lam))) for r in bands.responses])


def load_cmfs(path) -> tuple[SampledSpectrum, SampledSpectrum, SampledSpectrum]:
    """Color matching functions as CSV with header ``wavelength_nm,x,y,z``."""
    rows = _read_csv_rows(path)
    if not rows or [c.strip() for c in rows[0][:4]] != ["wavelength_nm", "x", "y", "z"]:
        raise SpectrumParseError("expected header 'wavelength_nm,x,y,z'", 1)
    wavelengths, cols = [], ([], [], [])
    for idx, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        lam = _parse_float(row[0], idx, "wavelength")
        if wavelengths and lam <= wavelengths[-1]:
            raise SpectrumParseError("wavelengths must be strictly increasing", idx)
        wavelengths.append(lam)
        for c in range(3):
            cols[c].append(_parse_float(row[c + 1], idx, "xyz"))
    lam_arr = np.array(wavelengths)
    return tuple(SampledSpectrum(lam_arr, np.array(col)) for col in cols)


def load_sensitivities(path) -> np.ndarray:
    """Spectral sensitivities as CSV with header ``band,value``."""
    rows = _read_csv_rows(path)
    if not rows or [c.strip() for c in rows[0][:2]] != ["band", "value"]:
        raise SpectrumParseError("expected header 'band,value'", 1)
    values: dict[int, float] = {}
    for idx, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        band = int(_parse_float(row[0], idx, "band"))
        values[band] = _parse_float(row[1], idx, "sensitivity")
    if sorted(values) != list(range(len(values))):
        raise SpectrumParseError("bands must cover 0..N-1 exactly")
    return np.array([values[b] for b in range(len(values))])


def save_sensitivities(path, sensitivities: np.ndarray):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["band", "value"])
        for b, val in enumerate(np.asarray(sensitivities, dtype=float)):
            writer.writerow([b, repr(float(val))])


def load_tile_lab(path) -> dict[str, tuple[float, float, float]]:
    """Reference Lab values per tile, CSV columns ``tile_id,L,a,b``."""
    rows = _read_csv_rows(path)
    if not rows or [c.strip() for c in rows[0][:4]] != ["tile_id", "L", "a", "b"]:
        raise SpectrumParseError("expected header 'tile_id,L,a,b'", 1)
    out = {}
    for idx, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        out[row[0]] = tuple(_parse_float(row[c], idx, "Lab") for c in (1, 2, 3))
    return out


def load_tile_spectra(path) -> dict[str, SampledSpectrum]:
    """Reference spectra per tile, CSV columns ``tile_id,wavelength_nm,value``."""
    rows = _read_csv_rows(path)
    if not rows or [c.strip() for c in rows[0][:3]] != ["tile_id", "wavelength_nm", "value"]:
        raise SpectrumParseError("expected header 'tile_id,wavelength_nm,value'", 1)
    acc: dict[str, tuple[list, list]] = {}
    for idx, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        lam = _parse_float(row[1], idx, "wavelength")
        val = _parse_float(row[2], idx, "spectrum")
        lams, vals = acc.setdefault(row[0], ([], []))
        if lams and lam <= lams[-1]:
            raise SpectrumParseError(f"wavelengths for tile {row[0]} must increase", idx)
        lams.append(lam)
        vals.append(val)
    return {tile: SampledSpectrum(np.array(l), np.array(v)) for tile, (l, v) in acc.items()}


def save_tile_spectra(path, spectra: dict[str, SampledSpectrum]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tile_id", "wavelength_nm", "value"])
        for tile in sorted(spectra):
            s = spectra[tile]
            for lam, val in zip(s.wavelengths_nm, s.values):
                writer.writerow([tile, repr(float(lam)), repr(float(val))])


def load_tile_layout(path) -> dict[str, list[tuple[float, float]]]:
    """ROI centers per tile, CSV columns ``tile_id,i,j`` (one row per center)."""
    rows = _read_csv_rows(path)
    if not rows or [c.strip() for c in rows[0][:3]] != ["tile_id", "i", "j"]:
        raise SpectrumParseError("expected header 'tile_id,i,j'", 1)
    out: dict[str, list[tuple[float, float]]] = {}
    for idx, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        out.setdefault(row[0], []).append(
            (_parse_float(row[1], idx, "i"), _parse_float(row[2], idx, "j"))
        )
    return out


def load_color_matrix(path) -> np.ndarray:
    """3 rows x N columns of matrix entries (no header)."""
    rows = [r for r in _read_csv_rows(path) if r]
    if len(rows) != 3:
        raise SpectrumParseError(f"color matrix needs exactly 3 rows, got {len(rows)}")
    try:
        matrix = np.array([[float(v) for v in row] for row in rows])
    except ValueError as exc:
        raise SpectrumParseError(f"bad matrix entry: {exc}") from None
    return matrix


def save_color_matrix(path, matrix: np.ndarray):
    matrix = np.asarray(matrix, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])


def save_mask(path, mask: ContentMask):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "value"])
        writer.writerow(["center_i", repr(float(mask.center_i))])
        writer.writerow(["center_j", repr(float(mask.center_j))])
        writer.writerow(["radius", repr(float(mask.radius))])
        writer.writerow(["shrink_factor", repr(float(mask.shrink_factor))])
        writer.writerow(["full_frame", int(mask.full_frame)])


def load_mask(path) -> ContentMask:
    rows = _read_csv_rows(path)
    kv = {row[0]: row[1] for row in rows[1:] if row}
    return ContentMask(
        center_i=float(kv["center_i"]),
        center_j=float(kv["center_j"]),
        radius=float(kv["radius"]),
        shrink_factor=float(kv.get("shrink_factor", 0.9)),
        full_frame=bool(int(kv.get("full_frame", 0))),
    )


def save_png(path, rgb: np.ndarray):
    """8-bit RGB PNG without an embedded profile (assumed sRGB)."""
    from PIL import Image

    rgb = np.asarray(rgb)
    if rgb.dtype != np.uint8 or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) uint8 array")
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")
