"""Multi-band rasters, coarse/fine patch geometry and class-map rendering.

Three on-disk formats are supported:

* ``band_float``: ASCII header ``BFLOAT <width> <height> <bands>\\n`` followed by
  a band-sequential, row-major float32 little-endian payload.
* binary PGM (P5) and PPM (P6) with ``maxval <= 65535``; integer samples are
  scaled to ``[0, 1]`` on load.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "RasterError",
    "Raster",
    "PatchMapping",
    "LabelMap",
    "load_raster",
    "write_band_float",
    "write_pnm",
    "patch_of",
    "load_label_map",
    "write_label_map",
    "write_class_map",
]


class RasterError(ValueError):
    """Malformed raster file or inconsistent raster geometry."""


@dataclass(frozen=True)
class Raster:
    """Immutable multi-band image. ``data`` has shape ``(bands, height, width)``."""

    data: np.ndarray
    band_names: tuple[str, ...] = ()

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3 or data.size == 0:
            raise RasterError(f"raster data must be a non-empty (bands, height, width) array, got shape {data.shape}")
        bad = np.argwhere(~np.isfinite(data))
        if len(bad):
            b, y, x = bad[0]
            raise RasterError(f"non-finite sample in band {b} at pixel index {y * data.shape[2] + x}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        names = tuple(self.band_names) or tuple(f"b{i + 1}" for i in range(data.shape[0]))
        if len(names) != data.shape[0]:
            raise RasterError(f"{len(names)} band names for {data.shape[0]} bands")
        object.__setattr__(self, "band_names", names)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def samples(self) -> np.ndarray:
        """Flat band-sequential row-major view of all samples."""
        return self.data.reshape(-1)

    def pixels(self) -> np.ndarray:
        """Per-pixel spectral vectors, shape ``(height * width, bands)``."""
        return self.data.reshape(self.bands, -1).T

    def window(self, x0: int, y0: int, x1: int, y1: int) -> "Raster":
        return Raster(self.data[:, y0:y1, x0:x1], self.band_names)


@dataclass(frozen=True)
class PatchMapping:
    """Correspondence between a coarse pixel and its square block of fine pixels."""

    scale_factor: int
    coarse_width: int
    coarse_height: int

    def __post_init__(self):
        if self.scale_factor < 1:
            raise RasterError("scale_factor must be >= 1")

    @classmethod
    def from_rasters(cls, coarse: Raster, fine: Raster) -> "PatchMapping":
        if fine.width % coarse.width or fine.height % coarse.height:
            raise RasterError(
                f"fine raster {fine.width}x{fine.height} is not an integer multiple of "
                f"coarse raster {coarse.width}x{coarse.height}"
            )
        sx, sy = fine.width // coarse.width, fine.height // coarse.height
        if sx != sy:
            raise RasterError(f"anisotropic scale factors {sx} and {sy}")
        return cls(sx, coarse.width, coarse.height)

    @property
    def fine_width(self) -> int:
        return self.coarse_width * self.scale_factor

    @property
    def fine_height(self) -> int:
        return self.coarse_height * self.scale_factor


def patch_of(mapping: PatchMapping, coarse_x: int, coarse_y: int) -> tuple[int, int, int, int]:
    """Return the fine-pixel rectangle ``(x0, y0, x1, y1)``, half-open, under a coarse pixel."""
    if not (0 <= coarse_x < mapping.coarse_width and 0 <= coarse_y < mapping.coarse_height):
        raise RasterError(
            f"coarse pixel ({coarse_x}, {coarse_y}) outside "
            f"{mapping.coarse_width}x{mapping.coarse_height} grid"
        )
    s = mapping.scale_factor
    return coarse_x * s, coarse_y * s, (coarse_x + 1) * s, (coarse_y + 1) * s


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel class ids on the coarse grid, 0 meaning unlabeled."""

    labels: np.ndarray
    num_classes: int = field(default=0)

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if labels.ndim != 2:
            raise RasterError("label map must be 2-D")
        if labels.min() < 0:
            raise RasterError("negative class id in label map")
        k = self.num_classes or int(labels.max())
        if labels.max() > k:
            raise RasterError(f"class id {labels.max()} exceeds num_classes={k}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "num_classes", k)

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def check_matches(self, raster: Raster) -> None:
        if (self.width, self.height) != (raster.width, raster.height):
            raise RasterError(
                f"label map {self.width}x{self.height} does not match raster {raster.width}x{raster.height}"
            )


# ---------------------------------------------------------------------------
# file I/O


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise RasterError(f"truncated header at byte offset {start}")
    return buf[start:pos], pos


def _parse_int(tok: bytes, what: str, offset: int) -> int:
    try:
        v = int(tok)
    except ValueError:
        raise RasterError(f"malformed {what} {tok!r} at byte offset {offset}") from None
    if v <= 0:
        raise RasterError(f"non-positive {what} {v} at byte offset {offset}")
    return v


def _load_band_float(buf: bytes) -> np.ndarray:
    nl = buf.find(b"\n")
    if nl < 0:
        raise RasterError("missing band_float header line")
    parts = buf[:nl].split()
    if len(parts) != 4 or parts[0] != b"BFLOAT":
        raise RasterError(f"malformed band_float header {buf[:nl]!r} at byte offset 0")
    width, height, bands = (_parse_int(t, name, 0) for t, name in zip(parts[1:], ("width", "height", "bands")))
    expected = width * height * bands * 4
    payload = buf[nl + 1:]
    if len(payload) != expected:
        raise RasterError(
            f"band_float payload has {len(payload)} bytes, header {width}x{height}x{bands} needs {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(bands, height, width)
    bad = np.flatnonzero(~np.isfinite(data.reshape(-1)))
    if len(bad):
        i = int(bad[0])
        raise RasterError(
            f"non-finite sample in band {i // (width * height)} at pixel index {i % (width * height)} "
            f"(byte offset {nl + 1 + 4 * i})"
        )
    return data.astype(np.float64)


def _load_pnm(buf: bytes, magic: bytes) -> np.ndarray:
    tok, pos = _read_token(buf, 0)
    if tok != magic:
        raise RasterError(f"expected magic {magic.decode()} but found {tok!r} at byte offset 0")
    fields = []
    for name in ("width", "height", "maxval"):
        start = pos
        tok, pos = _read_token(buf, pos)
        fields.append(_parse_int(tok, name, start))
    width, height, maxval = fields
    if maxval > 65535:
        raise RasterError(f"maxval {maxval} exceeds 65535")
    pos += 1  # single whitespace byte after maxval
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = width * height * channels * dtype.itemsize
    payload = buf[pos:]
    if len(payload) < expected:
        raise RasterError(f"payload has {len(payload)} bytes, needs {expected} (starting at byte offset {pos})")
    raw = np.frombuffer(payload[:expected], dtype=dtype).reshape(height, width, channels)
    if raw.max(initial=0) > maxval:
        i = int(np.argmax(raw.reshape(-1) > maxval))
        raise RasterError(f"sample exceeds maxval at byte offset {pos + i * dtype.itemsize}")
    return raw.transpose(2, 0, 1), maxval


def load_raster(path: str | os.PathLike, format: str = "band_float") -> Raster:
    """Load a raster; integer formats are scaled to floats in ``[0, 1]``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if format == "band_float":
        return Raster(_load_band_float(buf))
    if format in ("pgm", "ppm"):
        raw, maxval = _load_pnm(buf, b"P5" if format == "pgm" else b"P6")
        return Raster(raw.astype(np.float64) / maxval)
    raise RasterError(f"unknown raster format {format!r}")


def write_band_float(raster: Raster, path: str | os.PathLike) -> None:
    """Write ``band_float``; samples are stored as float32 (exact for float32-representable data)."""
    header = f"BFLOAT {raster.width} {raster.height} {raster.bands}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(raster.data.astype("<f4").tobytes())


def write_pnm(array: np.ndarray, path: str | os.PathLike, maxval: int = 255) -> None:
    """Write an integer ``(height, width)`` array as P5 or ``(height, width, 3)`` as P6."""
    array = np.asarray(array)
    if array.ndim == 2:
        magic = "P5"
    elif array.ndim == 3 and array.shape[2] == 3:
        magic = "P6"
    else:
        raise RasterError(f"cannot write array of shape {array.shape} as PNM")
    if not 0 < maxval <= 65535:
        raise RasterError(f"maxval {maxval} out of range")
    if array.min(initial=0) < 0 or array.max(initial=0) > maxval:
        raise RasterError(f"values outside [0, {maxval}]")
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = array.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"{magic}\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(array.astype(dtype).tobytes())


def load_label_map(path: str | os.PathLike, num_classes: int = 0) -> LabelMap:
    """Load class ids stored as gray values of a P5 file (no scaling)."""
    with open(path, "rb") as fh:
        raw, _ = _load_pnm(fh.read(), b"P5")
    return LabelMap(raw[0].astype(np.int64), num_classes)


def write_label_map(labels: LabelMap, path: str | os.PathLike) -> None:
    write_pnm(labels.labels, path, maxval=max(255, int(labels.labels.max())))


def write_class_map(
    labels: LabelMap, palette: Mapping[int, Sequence[int]], path: str | os.PathLike
) -> None:
    """Render a label map as a binary PPM; label 0 is drawn black."""
    rgb = np.zeros((labels.height, labels.width, 3), dtype=np.int64)
    for c in np.unique(labels.labels):
        c = int(c)
        if c == 0:
            continue
        if c not in palette:
            raise RasterError(f"class {c} has no palette entry")
        rgb[labels.labels == c] = palette[c]
    write_pnm(rgb, path, maxval=255)
