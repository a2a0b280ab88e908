"""Grayscale irradiance rasters: PGM input/output, bilinear sampling,
mollification, and resampling.

An image carries a physical extent in the target plane.  Pixel values
are stored in raster order, ``values[row, column]`` with row 0 at the
top of the picture, i.e. at the *largest* second plane coordinate; the
mapping between raster indices and plane coordinates is confined to
:func:`pixel_centers`, :func:`bilinear_sample`, and :func:`bin_index`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

Extent = tuple[float, float, float, float]  # (x0, x1, y0, y1)


@dataclass(frozen=True)
class IrradianceImage:
    """Nonnegative pixel grid with a physical extent in the target plane."""

    width: int
    height: int
    extent: Extent
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.height, self.width):
            raise ValueError(f"values shape {values.shape} does not match height x width = ({self.height}, {self.width})")
        if not np.all(np.isfinite(values)):
            raise ValueError("pixel values must be finite")
        if np.any(values < 0.0):
            raise ValueError("pixel values must be nonnegative")
        x0, x1, y0, y1 = self.extent
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"extent must have positive widths, got {self.extent}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def pixel_size(self) -> tuple[float, float]:
        x0, x1, y0, y1 = self.extent
        return (x1 - x0) / self.width, (y1 - y0) / self.height

    @property
    def total_flux(self) -> float:
        dx, dy = self.pixel_size
        return float(np.sum(self.values)) * dx * dy


def make_image(values: np.ndarray, extent: Extent) -> IrradianceImage:
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValueError(f"expected a 2-d pixel array, got shape {values.shape}")
    return IrradianceImage(width=values.shape[1], height=values.shape[0], extent=extent, values=values)


def constant_image(width: int, height: int, extent: Extent, value: float = 1.0) -> IrradianceImage:
    return make_image(np.full((height, width), float(value)), extent)


def with_values(image: IrradianceImage, values: np.ndarray) -> IrradianceImage:
    return make_image(values, image.extent)


def pixel_centers(image: IrradianceImage) -> tuple[np.ndarray, np.ndarray]:
    """Plane coordinates of pixel centers: (per-column x, per-row y).

    Row 0 is the top of the picture, so the per-row coordinates
    decrease from y1 to y0.
    """
    x0, x1, y0, y1 = image.extent
    dx, dy = image.pixel_size
    xs = x0 + dx * (np.arange(image.width) + 0.5)
    ys = y1 - dy * (np.arange(image.height) + 0.5)
    return xs, ys


def bilinear_sample(image: IrradianceImage, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear interpolation at plane points; outside the extent the
    nearest boundary pixel value is used (clamp-to-edge)."""
    x0, x1, y0, y1 = image.extent
    dx, dy = image.pixel_size
    cx = np.clip((np.asarray(x, dtype=float) - x0) / dx - 0.5, 0.0, image.width - 1.0)
    cy = np.clip((y1 - np.asarray(y, dtype=float)) / dy - 0.5, 0.0, image.height - 1.0)
    ix = np.minimum(np.floor(cx).astype(int), image.width - 2) if image.width > 1 else np.zeros_like(cx, dtype=int)
    iy = np.minimum(np.floor(cy).astype(int), image.height - 2) if image.height > 1 else np.zeros_like(cy, dtype=int)
    fx = cx - ix
    fy = cy - iy
    v = image.values
    if image.width == 1:
        fx = np.zeros_like(fx)
        top = v[iy, ix]
        bottom = v[np.minimum(iy + 1, image.height - 1), ix]
        return top * (1.0 - fy) + bottom * fy
    if image.height == 1:
        fy = np.zeros_like(fy)
    jx = np.minimum(ix + 1, image.width - 1)
    jy = np.minimum(iy + 1, image.height - 1)
    return (
        v[iy, ix] * (1.0 - fx) * (1.0 - fy)
        + v[iy, jx] * fx * (1.0 - fy)
        + v[jy, ix] * (1.0 - fx) * fy
        + v[jy, jx] * fx * fy
    )


def bilinear_gradient(image: IrradianceImage, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Plane-coordinate gradient of the bilinear interpolant (piecewise
    constant per pixel cell, zero in the clamped exterior)."""
    x0, x1, y0, y1 = image.extent
    dx, dy = image.pixel_size
    raw_cx = (np.asarray(x, dtype=float) - x0) / dx - 0.5
    raw_cy = (y1 - np.asarray(y, dtype=float)) / dy - 0.5
    cx = np.clip(raw_cx, 0.0, image.width - 1.0)
    cy = np.clip(raw_cy, 0.0, image.height - 1.0)
    ix = np.minimum(np.floor(cx).astype(int), max(image.width - 2, 0))
    iy = np.minimum(np.floor(cy).astype(int), max(image.height - 2, 0))
    fx = cx - ix
    fy = cy - iy
    v = image.values
    jx = np.minimum(ix + 1, image.width - 1)
    jy = np.minimum(iy + 1, image.height - 1)
    dvdx = ((v[iy, jx] - v[iy, ix]) * (1.0 - fy) + (v[jy, jx] - v[jy, ix]) * fy) / dx
    dvdy = -((v[jy, ix] - v[iy, ix]) * (1.0 - fx) + (v[jy, jx] - v[iy, jx]) * fx) / dy
    inside_x = (raw_cx > 0.0) & (raw_cx < image.width - 1.0)
    inside_y = (raw_cy > 0.0) & (raw_cy < image.height - 1.0)
    return np.where(inside_x, dvdx, 0.0), np.where(inside_y, dvdy, 0.0)


def bin_index(image: IrradianceImage, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Raster bin (row, column) per point plus the inside-extent mask.

    Points on the maximal edges fall into the last pixel so the closed
    extent is covered exactly.
    """
    x0, x1, y0, y1 = image.extent
    dx, dy = image.pixel_size
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    inside = (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
    col = np.minimum(np.floor((x - x0) / dx).astype(int), image.width - 1)
    row = np.minimum(np.floor((y1 - y) / dy).astype(int), image.height - 1)
    return row, col, inside


def mollifier_weights(n: int) -> np.ndarray:
    """Discrete bump-function kernel on an n x n support, weights
    normalized to sum 1.  The weight at offset (i, j) from the center is
    exp(−1/(1−r²)) with r = ‖(2i/n, 2j/n)‖₂ where r < 1, zero beyond."""
    if n < 1:
        raise ValueError(f"mollifier support must be at least 1, got {n}")
    if n % 2 == 0:
        raise ValueError(f"mollifier support must be odd, got {n}")
    offsets = np.arange(n) - n // 2
    r2 = (2.0 * offsets[:, None] / n) ** 2 + (2.0 * offsets[None, :] / n) ** 2
    with np.errstate(divide="ignore", over="ignore"):
        weights = np.where(r2 < 1.0, np.exp(-1.0 / np.maximum(1.0 - r2, 1e-300)), 0.0)
    return weights / np.sum(weights)


def mollify(image: IrradianceImage, n: int) -> IrradianceImage:
    """Convolution with the normalized bump kernel; reflected at the
    picture edges and rescaled so the total flux is preserved exactly."""
    if n == 1:
        return image
    # pad by hand: np.pad keeps reflecting when the kernel radius
    # exceeds the raster, which ndimage's own boundary handling does not
    half = n // 2
    padded = np.pad(image.values, half, mode="symmetric")
    blurred = ndimage.convolve(padded, mollifier_weights(n), mode="nearest")
    blurred = blurred[half : half + image.height, half : half + image.width]
    blurred = np.maximum(blurred, 0.0)
    total = np.sum(blurred)
    if total > 0.0:
        blurred *= np.sum(image.values) / total
    return with_values(image, blurred)


def resample(image: IrradianceImage, width: int, height: int) -> IrradianceImage:
    """Bilinear resampling onto a new raster with the same extent."""
    if width < 1 or height < 1:
        raise ValueError(f"target raster must be at least 1x1, got {width}x{height}")
    if (width, height) == (image.width, image.height):
        return image
    target = constant_image(width, height, image.extent)
    xs, ys = pixel_centers(target)
    return with_values(target, bilinear_sample(image, xs[None, :], ys[:, None]))


def to_8bit(values: np.ndarray, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    """Linear map of a float array onto 0..255 integers."""
    values = np.asarray(values, dtype=float)
    lo = float(np.min(values)) if lo is None else lo
    hi = float(np.max(values)) if hi is None else hi
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.uint8)
    scaled = np.rint(255.0 * (np.clip(values, lo, hi) - lo) / (hi - lo))
    return scaled.astype(np.uint8)


# ---------------------------------------------------------------------------
# PGM input/output (plain P2 and binary P5, maxval up to 255)


def read_pgm(path: str | Path) -> tuple[np.ndarray, int]:
    """Pixel array (raster order) and maxval from a P2 or P5 file."""
    data = Path(path).read_bytes()
    if data[:2] not in (b"P2", b"P5"):
        raise ValueError(f"{path}: not a PGM file (magic {data[:2]!r})")
    binary = data[:2] == b"P5"

    # header tokenizer: whitespace-separated tokens, '#' comments to end of line
    pos = 2
    tokens: list[int] = []
    while len(tokens) < 3:
        if pos >= len(data):
            raise ValueError(f"{path}: truncated PGM header")
        byte = data[pos : pos + 1]
        if byte == b"#":
            eol = data.find(b"\n", pos)
            pos = len(data) if eol < 0 else eol + 1
        elif byte.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace() and data[end : end + 1] != b"#":
                end += 1
            token = data[pos:end]
            if not token.isdigit():
                raise ValueError(f"{path}: malformed PGM header token {token!r}")
            tokens.append(int(token))
            pos = end

    width, height, maxval = tokens
    if width < 1 or height < 1:
        raise ValueError(f"{path}: empty raster {width}x{height}")
    if not 0 < maxval <= 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")

    if binary:
        pos += 1  # single whitespace byte after maxval
        raw = data[pos : pos + width * height]
        if len(raw) != width * height:
            raise ValueError(f"{path}: expected {width * height} pixel bytes, got {len(raw)}")
        values = np.frombuffer(raw, dtype=np.uint8).astype(float)
    else:
        fields = data[pos:].split()
        if len(fields) != width * height:
            raise ValueError(f"{path}: expected {width * height} pixel values, got {len(fields)}")
        values = np.array([int(f) for f in fields], dtype=float)
    if np.any(values > maxval):
        raise ValueError(f"{path}: pixel value exceeds maxval {maxval}")
    return values.reshape(height, width), maxval


def write_pgm(path: str | Path, values: np.ndarray, binary: bool = True) -> None:
    """Write an integer pixel array (raster order, 0..255) as PGM."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError(f"expected a 2-d pixel array, got shape {values.shape}")
    if np.any(values < 0) or np.any(values > 255) or not np.issubdtype(values.dtype, np.integer):
        raise ValueError("pixel values must be integers in 0..255")
    height, width = values.shape
    header = f"{'P5' if binary else 'P2'}\n{width} {height}\n255\n"
    if binary:
        Path(path).write_bytes(header.encode("ascii") + values.astype(np.uint8).tobytes())
        return
    lines = []
    for row in values:
        line = " ".join(str(int(v)) for v in row)
        # keep plain-format lines within the customary 70-character limit
        while len(line) > 70:
            cut = line.rfind(" ", 0, 70)
            lines.append(line[:cut])
            line = line[cut + 1 :]
        lines.append(line)
    Path(path).write_text(header + "\n".join(lines) + "\n", encoding="ascii")


def image_from_pgm(path: str | Path, extent: Extent) -> IrradianceImage:
    values, _ = read_pgm(path)
    return make_image(values, extent)
