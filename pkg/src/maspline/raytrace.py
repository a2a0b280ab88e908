"""Forward Monte-Carlo validation of a reflector surface.

Rays leave the point source at the origin toward the mirror graph
R(x) = X(x)/u(x) with X = (x₁, x₂, ω), reflect off the exact tangent
plane of the spline, and land on the target plane z₃ = z_plane where
their weights are accumulated into an irradiance raster.  The result is
compared against the prepared (gray-lifted, flux-normalized) target.

Sampling is stratified: one jittered sample per cell of a √ray_count ×
√ray_count grid over Ω, each weighted by the source solid-angle measure
f/ω times the cell area.  Accumulation runs over fixed-size batches in
a fixed order, so a given seed reproduces the image bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import image as im
from . import reflector as rf
from . import surface as sf

BATCH_SIZE = 1 << 20


@dataclass(frozen=True)
class ValidationReport:
    """Rendered image plus agreement metrics against the prepared target."""

    rendered: im.IrradianceImage
    relative_l1: float
    normalized_cross_correlation: float
    miss_fraction: float
    ray_count: int
    emitted_flux: float
    deposited_flux: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.miss_fraction <= 1.0:
            raise ValueError(f"miss fraction must be in [0, 1], got {self.miss_fraction}")


def report_line(report: ValidationReport) -> str:
    """Single-line JSON summary (the raster itself is not included)."""
    return json.dumps(
        {
            "ray_count": report.ray_count,
            "relative_l1": report.relative_l1,
            "ncc": report.normalized_cross_correlation,
            "miss_fraction": report.miss_fraction,
            "emitted_flux": report.emitted_flux,
            "deposited_flux": report.deposited_flux,
        }
    )


# ---------------------------------------------------------------------------
# geometry


def reflect_at(surface: sf.SplineSurface, x: np.ndarray, y: np.ndarray):
    """Surface points, unit normals, and reflected directions at
    parameter points: P = X/u, n from the exact tangent cross product
    oriented against the incident ray, d' = X − 2(X·n)n."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    jets = sf.eval_points(surface, x, y, {"value", "gradient"})
    u, ux, uy = jets["u"], jets["ux"], jets["uy"]
    if np.any(u <= 0.0) or not np.all(np.isfinite(u)):
        k = int(np.argmax((u <= 0.0) | ~np.isfinite(u)))
        raise ValueError(f"reflector height must be positive, got u={u[k]:.6g} at ({x[k]}, {y[k]})")
    omega = np.sqrt(1.0 - x**2 - y**2)
    X = np.column_stack([x, y, omega])
    P = X / u[:, None]

    # tangents of x ↦ X(x)/u(x)
    ex = np.column_stack([np.ones_like(x), np.zeros_like(x), -x / omega])
    ey = np.column_stack([np.zeros_like(x), np.ones_like(x), -y / omega])
    tx = ex / u[:, None] - (ux / u**2)[:, None] * X
    ty = ey / u[:, None] - (uy / u**2)[:, None] * X
    normal = np.cross(tx, ty)
    length = np.linalg.norm(normal, axis=1)
    if np.any(length <= 1e-14):
        k = int(np.argmax(length <= 1e-14))
        raise ValueError(f"degenerate surface normal at ({x[k]}, {y[k]})")
    normal /= length[:, None]
    # face the source: the incident ray must see the front of the mirror
    inner = np.sum(normal * X, axis=1)
    normal *= -np.sign(inner)[:, None]
    reflected = X - 2.0 * np.sum(X * normal, axis=1)[:, None] * normal
    return P, normal, reflected


def hit_points(surface: sf.SplineSurface, z_plane: float, x: np.ndarray, y: np.ndarray):
    """Intersections of reflected rays with the plane z₃ = z_plane:
    (points, valid).  A ray is invalid when it moves away from the plane."""
    P, _, d = reflect_at(surface, x, y)
    gap = z_plane - P[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = gap / d[:, 2]
    valid = np.isfinite(tau) & (tau > 0.0)
    hits = P[:, :2] + tau[:, None] * d[:, :2]
    return hits, valid


# ---------------------------------------------------------------------------
# comparison metrics


def compare(rendered: im.IrradianceImage, target: im.IrradianceImage) -> tuple[float, float]:
    """(relative L1 after flux matching, zero-mean normalized cross
    correlation).  For two constant rasters the correlation is 1 when
    they are identical and 0 otherwise."""
    if (rendered.width, rendered.height) != (target.width, target.height):
        raise ValueError(
            f"raster mismatch: rendered {rendered.width}x{rendered.height}, target {target.width}x{target.height}"
        )
    r = rendered.values
    t = target.values
    t_total = float(t.sum())
    if t_total <= 0.0:
        raise ValueError("target raster has zero flux")
    r_total = float(r.sum())
    matched = r * (t_total / r_total) if r_total > 0.0 else r
    relative_l1 = float(np.abs(matched - t).sum() / t_total)

    dr = r - r.mean()
    dt = t - t.mean()
    denom = math.sqrt(float((dr**2).sum()) * float((dt**2).sum()))
    if denom == 0.0:
        ncc = 1.0 if np.array_equal(r, t) else 0.0
    else:
        ncc = float((dr * dt).sum() / denom)
    return relative_l1, ncc


# ---------------------------------------------------------------------------
# tracing


def trace(
    surface: sf.SplineSurface,
    setup: rf.ReflectorSetup,
    ray_count: int,
    rng_seed: int = 0,
) -> ValidationReport:
    """Render the reflector's illumination and compare it against the
    prepared target.

    ``ray_count`` is rounded to the nearest square so the samples fill a
    uniform stratification grid over Ω exactly once.
    """
    if ray_count < 1:
        raise ValueError(f"ray count must be at least 1, got {ray_count}")
    prepared = rf.prepare_target(setup, setup.target)
    k = max(1, round(math.sqrt(ray_count)))
    total = k * k
    rng = np.random.default_rng(rng_seed)

    x0, x1, y0, y1 = setup.omega_rect
    dx = (x1 - x0) / k
    dy = (y1 - y0) / k
    acc = np.zeros((prepared.height, prepared.width))
    emitted = 0.0
    deposited = 0.0
    hit_count = 0
    for start in range(0, total, BATCH_SIZE):
        idx = np.arange(start, min(start + BATCH_SIZE, total))
        jitter = rng.random((2, idx.size))
        x = x0 + (idx // k + jitter[0]) * dx
        y = y0 + (idx % k + jitter[1]) * dy
        omega = np.sqrt(1.0 - x**2 - y**2)
        weight = setup.f(x, y) / omega * (dx * dy)
        hits, valid = hit_points(surface, setup.z_plane, x, y)
        row, col, inside = im.bin_index(prepared, hits[:, 0], hits[:, 1])
        ok = valid & inside
        np.add.at(acc, (row[ok], col[ok]), weight[ok])
        emitted += float(weight.sum())
        deposited += float(weight[ok].sum())
        hit_count += int(ok.sum())

    pdx, pdy = prepared.pixel_size
    rendered = im.make_image(acc / (pdx * pdy), prepared.extent)
    relative_l1, ncc = compare(rendered, prepared)
    return ValidationReport(
        rendered=rendered,
        relative_l1=relative_l1,
        normalized_cross_correlation=ncc,
        miss_fraction=1.0 - hit_count / total,
        ray_count=total,
        emitted_flux=emitted,
        deposited_flux=deposited,
    )


# ---------------------------------------------------------------------------
# surface structure visualization


def high_pass(surface: sf.SplineSurface, cutoff: int, resolution: int = 256) -> im.IrradianceImage:
    """High-frequency content of the height field: the sampled heights
    minus a heavily mollified copy, normalized symmetrically to 8 bits.

    Zero difference renders as mid-gray (128); a surface with no
    structure above numerical noise renders as an all-zero raster."""
    ax, bx, ay, by = surface.rectangle
    xs = np.linspace(ax, bx, resolution)
    ys = np.linspace(ay, by, resolution)
    grid_u = sf.eval_grid(surface, xs, ys)["u"]
    raster = grid_u.T[::-1, :]  # rows run top (largest y) to bottom
    # shift to a nonnegative raster; the shift cancels in the difference
    # up to the mollifier's flux renormalization
    base = raster - raster.min()
    blurred = im.mollify(im.make_image(base, (ax, bx, ay, by)), cutoff).values
    diff = base - blurred
    bound = float(np.max(np.abs(diff)))
    if bound <= 1e-9 * max(1.0, float(np.max(np.abs(raster)))):
        return im.make_image(np.zeros((resolution, resolution)), (ax, bx, ay, by))
    levels = im.to_8bit(diff, lo=-bound, hi=bound)
    return im.make_image(levels.astype(float), (ax, bx, ay, by))
