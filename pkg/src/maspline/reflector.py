"""Inverse reflector problem: a point source at the origin shines on a
mirror parameterized over Ω (radial graph R(x) = X(x)/u(x) with
X = (x₁, x₂, ω), ω = √(1−‖x‖²)), and the reflected light must paint a
prescribed irradiance g on the target rectangle Σ in the plane
z₃ = z_plane.

The height function u solves a Monge-Ampère-type equation
det(D²u + κ𝒩) = c·b(x, u, Du) whose right-hand side carries the target
density evaluated at the reflected hit point Z(x, u, Du).  The unknown
scalar c absorbs the flux imbalance of the running iteration and is
paired with the size constraint ∫_Ω u dx = 𝒢.  The transport boundary
condition ("boundary maps onto the target boundary") is relaxed to a
Picard iteration: the current boundary image is projected onto ∂Σ and
its normal component is prescribed, refreshed after every accepted
Newton step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import roots_legendre

from . import bspline as bs
from . import collocation as co
from . import image as im
from . import surface as sf
from .benchmarks import SymMat2, det_plus_lambda, det_plus_lambda_derivs

Rect = tuple[float, float, float, float]  # (x0, x1, y0, y1)

OMEGA_RECT_DEFAULT: Rect = (-0.25, 0.25, -0.25, 0.25)
SIGMA_RECT_DEFAULT: Rect = (-1.5, 1.5, 1.0, 4.0)
Z_PLANE_DEFAULT = -5.0
SIZE_G_DEFAULT = 0.417674
GRAY_LIFT_DEFAULT = 20
# (grid size, mollifier support) continuation pairs, coarse to fine
DEFAULT_SCHEDULE: tuple[tuple[int, int], ...] = (
    (21, 55),
    (41, 55),
    (41, 19),
    (81, 19),
    (81, 7),
    (161, 7),
    (161, 3),
    (321, 3),
)
REFLECTOR_CONFIG = co.SolverConfig(max_iter=200, tol_residual=1e-8)


def _uniform_f(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.ones_like(np.asarray(x, dtype=float) * np.asarray(y, dtype=float))


@dataclass(frozen=True)
class ReflectorSetup:
    """Geometry, source density, target image and solver constants."""

    target: im.IrradianceImage
    omega_rect: Rect = OMEGA_RECT_DEFAULT
    sigma_rect: Rect = SIGMA_RECT_DEFAULT
    z_plane: float = Z_PLANE_DEFAULT
    f: Callable[[np.ndarray, np.ndarray], np.ndarray] = _uniform_f
    size_G: float = SIZE_G_DEFAULT
    lam: float = 1.0e3
    gray_lift: float = GRAY_LIFT_DEFAULT

    def __post_init__(self) -> None:
        x0, x1, y0, y1 = self.omega_rect
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"omega rectangle must have positive widths, got {self.omega_rect}")
        corner = np.hypot(max(abs(x0), abs(x1)), max(abs(y0), abs(y1)))
        if corner >= 1.0:
            raise ValueError(f"omega rectangle must lie strictly inside the unit disk, corner radius {corner}")
        if self.size_G <= 0.0:
            raise ValueError(f"size constant must be positive, got {self.size_G}")
        if self.gray_lift < 0:
            raise ValueError(f"gray lift must be nonnegative, got {self.gray_lift}")
        if self.lam < 0.0:
            raise ValueError(f"penalty weight must be nonnegative, got {self.lam}")

    @property
    def omega_area(self) -> float:
        x0, x1, y0, y1 = self.omega_rect
        return (x1 - x0) * (y1 - y0)


@dataclass(frozen=True)
class ReflectorJet:
    """All Theorem-level quantities at one or more parameter points
    (leading axis = points)."""

    omega: np.ndarray
    t: np.ndarray
    a_tilde: np.ndarray
    b_tilde: np.ndarray
    X: np.ndarray  # (P, 3) unit source directions
    Z0: np.ndarray  # (P, 3)
    Z: np.ndarray  # (P, 3) target hit points
    Nmat: np.ndarray  # (P, 2, 2)
    Amat: np.ndarray  # (P, 2, 2)


class _Jets:
    """Vectorized jet quantities and their (u, ux, uy) derivatives."""

    __slots__ = (
        "x", "y", "u", "ux", "uy", "omega", "t", "t_u", "a", "a_u", "a_ux", "a_uy",
        "b", "b_u", "b_ux", "b_uy", "kappa", "kappa_u", "kappa_ux", "kappa_uy",
        "T1", "T2", "T1_u", "T1_ux", "T1_uy", "T2_u", "T2_ux", "T2_uy",
        "n11", "n12", "n22", "bad",
    )

    def __init__(self, setup: ReflectorSetup, x, y, u, ux, uy):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        u = np.asarray(u, dtype=float)
        ux = np.asarray(ux, dtype=float)
        uy = np.asarray(uy, dtype=float)
        zp = setup.z_plane

        omega2 = 1.0 - x**2 - y**2
        omega = np.sqrt(np.maximum(omega2, 0.0))
        q = ux * x + uy * y  # Duᵀx
        s = u - q
        grad2 = ux**2 + uy**2

        a = grad2 - s**2
        b = grad2 + u**2 - q**2
        t = 1.0 - u * zp / omega

        # admissible: positive height, downward ray, negative ã (the
        # R-convex branch), positive b̃
        bad = ~np.isfinite(u) | (u <= 0.0) | (t <= 0.0) | (a >= 0.0) | (b <= 0.0)

        with np.errstate(divide="ignore", invalid="ignore"):
            kappa = a * zp / (2.0 * t * omega)

            a_u = -2.0 * s
            a_ux = 2.0 * ux + 2.0 * s * x
            a_uy = 2.0 * uy + 2.0 * s * y
            b_u = 2.0 * u
            b_ux = 2.0 * ux - 2.0 * q * x
            b_uy = 2.0 * uy - 2.0 * q * y
            t_u = -zp / omega

            kappa_u = zp * (a_u * t - a * t_u) / (2.0 * omega * t**2)
            kappa_ux = zp * a_ux / (2.0 * omega * t)
            kappa_uy = zp * a_uy / (2.0 * omega * t)

            # in-plane hit point T = (1−t)x/u + (2t/ã)Du
            T1 = (1.0 - t) * x / u + 2.0 * t * ux / a
            T2 = (1.0 - t) * y / u + 2.0 * t * uy / a
            T1_u = x * (-t_u * u - (1.0 - t)) / u**2 + 2.0 * ux * (t_u * a - t * a_u) / a**2
            T2_u = y * (-t_u * u - (1.0 - t)) / u**2 + 2.0 * uy * (t_u * a - t * a_u) / a**2
            T1_ux = -2.0 * t * a_ux * ux / a**2 + 2.0 * t / a
            T1_uy = -2.0 * t * a_uy * ux / a**2
            T2_ux = -2.0 * t * a_ux * uy / a**2
            T2_uy = -2.0 * t * a_uy * uy / a**2 + 2.0 * t / a

            n11 = 1.0 + x**2 / omega2
            n12 = x * y / omega2
            n22 = 1.0 + y**2 / omega2

        self.x, self.y, self.u, self.ux, self.uy = x, y, u, ux, uy
        self.omega, self.t, self.t_u = omega, t, t_u
        self.a, self.a_u, self.a_ux, self.a_uy = a, a_u, a_ux, a_uy
        self.b, self.b_u, self.b_ux, self.b_uy = b, b_u, b_ux, b_uy
        self.kappa, self.kappa_u, self.kappa_ux, self.kappa_uy = kappa, kappa_u, kappa_ux, kappa_uy
        self.T1, self.T2 = T1, T2
        self.T1_u, self.T1_ux, self.T1_uy = T1_u, T1_ux, T1_uy
        self.T2_u, self.T2_ux, self.T2_uy = T2_u, T2_ux, T2_uy
        self.n11, self.n12, self.n22 = n11, n12, n22
        self.bad = bad

    def mask(self, value: np.ndarray) -> np.ndarray:
        return np.where(self.bad, np.nan, value)


def reflector_jet(setup: ReflectorSetup, x, y, u, ux, uy) -> ReflectorJet:
    """Theorem quantities at admissible states; raises on inadmissible
    input (non-positive height, upward ray, sign-flipped ã)."""
    j = _Jets(setup, np.atleast_1d(x), np.atleast_1d(y), np.atleast_1d(u), np.atleast_1d(ux), np.atleast_1d(uy))
    if np.any(j.bad):
        k = int(np.argmax(j.bad))
        raise ValueError(
            f"inadmissible state at ({j.x[k]}, {j.y[k]}): u={j.u[k]:.6g}, t={j.t[k]:.6g}, a_tilde={j.a[k]:.6g}, b_tilde={j.b[k]:.6g}"
        )
    points = j.x.shape[0]
    X = np.column_stack([j.x, j.y, j.omega])
    Z0 = np.column_stack([2.0 * j.ux / j.a, 2.0 * j.uy / j.a, np.zeros(points)])
    Z = X / j.u[:, None] + j.t[:, None] * (Z0 - X / j.u[:, None])
    Nmat = np.empty((points, 2, 2))
    Nmat[:, 0, 0] = j.n11
    Nmat[:, 0, 1] = Nmat[:, 1, 0] = j.n12
    Nmat[:, 1, 1] = j.n22
    Amat = j.kappa[:, None, None] * Nmat
    return ReflectorJet(
        omega=j.omega, t=j.t, a_tilde=j.a, b_tilde=j.b, X=X, Z0=Z0, Z=Z, Nmat=Nmat, Amat=Amat
    )


def _rhs_and_derivs(setup: ReflectorSetup, g_image: im.IrradianceImage, j: _Jets):
    """Right-hand side b(x, u, Du) = −ã³ f/(4 t² b̃ ω g(T)) and its
    (u, ux, uy) partial derivatives; nan at inadmissible states."""
    g = im.bilinear_sample(g_image, j.T1, j.T2)
    gx, gy = im.bilinear_gradient(g_image, j.T1, j.T2)
    fsrc = setup.f(j.x, j.y)
    with np.errstate(divide="ignore", invalid="ignore"):
        rhs = -j.a**3 * fsrc / (4.0 * j.t**2 * j.b * j.omega * g)
        bad = j.bad | ~(g > 0.0)

        def d(a_t, b_t, t_t, T1_t, T2_t):
            return rhs * (3.0 * a_t / j.a - 2.0 * t_t / j.t - b_t / j.b - (gx * T1_t + gy * T2_t) / g)

        rhs_u = d(j.a_u, j.b_u, j.t_u, j.T1_u, j.T2_u)
        rhs_ux = d(j.a_ux, j.b_ux, 0.0, j.T1_ux, j.T2_ux)
        rhs_uy = d(j.a_uy, j.b_uy, 0.0, j.T1_uy, j.T2_uy)
    mask = lambda v: np.where(bad, np.nan, v)
    return mask(rhs), mask(rhs_u), mask(rhs_ux), mask(rhs_uy)


def reflector_rhs(setup: ReflectorSetup, g_image: im.IrradianceImage, x, y, u, ux, uy) -> np.ndarray:
    """Scalar right-hand side of the reflector equation (positive at
    admissible states); raises on inadmissibility."""
    jet = _Jets(setup, np.atleast_1d(x), np.atleast_1d(y), np.atleast_1d(u), np.atleast_1d(ux), np.atleast_1d(uy))
    rhs, _, _, _ = _rhs_and_derivs(setup, g_image, jet)
    if not np.all(np.isfinite(rhs)):
        k = int(np.argmax(~np.isfinite(rhs)))
        raise ValueError(f"inadmissible state or nonpositive target density at ({jet.x[k]}, {jet.y[k]})")
    return rhs


# ---------------------------------------------------------------------------
# targets and flux bookkeeping


def source_flux(setup: ReflectorSetup, order: int = 64) -> float:
    """Total emitted flux ∫_Ω f/ω dx (solid-angle measure of the source
    cone), by tensor Gauss-Legendre quadrature."""
    nodes, weights = roots_legendre(order)
    x0, x1, y0, y1 = setup.omega_rect
    xs = 0.5 * (x1 - x0) * nodes + 0.5 * (x0 + x1)
    ys = 0.5 * (y1 - y0) * nodes + 0.5 * (y0 + y1)
    wx = 0.5 * (x1 - x0) * weights
    wy = 0.5 * (y1 - y0) * weights
    omega = np.sqrt(1.0 - xs[:, None] ** 2 - ys[None, :] ** 2)
    vals = setup.f(xs[:, None], ys[None, :]) / omega
    return float(wx @ vals @ wy)


def prepare_target(setup: ReflectorSetup, image: im.IrradianceImage) -> im.IrradianceImage:
    """Gray-lift (no true black) and flux normalization against the
    source: the returned density satisfies energy conservation."""
    lift = max(0.0, setup.gray_lift - float(np.min(image.values)))
    lifted = image.values + lift
    total = im.with_values(image, lifted).total_flux
    if total <= 0.0:
        raise ValueError("target image has zero flux after gray lift")
    return im.with_values(image, lifted * (source_flux(setup) / total))


def constant_target(setup: ReflectorSetup, resolution: int = 64) -> im.IrradianceImage:
    return im.constant_image(resolution, resolution, setup.sigma_rect)


# ---------------------------------------------------------------------------
# boundary projection (Picard step)


def project_to_rect_boundary(points: np.ndarray, rect: Rect) -> np.ndarray:
    """Closest point on the rectangle *boundary* for each input point:
    outside points clamp onto the rectangle, inside points move to the
    nearest edge."""
    x0, x1, y0, y1 = rect
    p = np.array(points, dtype=float)
    px = np.clip(p[:, 0], x0, x1)
    py = np.clip(p[:, 1], y0, y1)
    inside = (p[:, 0] > x0) & (p[:, 0] < x1) & (p[:, 1] > y0) & (p[:, 1] < y1)
    edge_gaps = np.stack([p[:, 0] - x0, x1 - p[:, 0], p[:, 1] - y0, y1 - p[:, 1]], axis=1)
    nearest = np.argmin(edge_gaps, axis=1)
    proj = np.column_stack([px, py])
    for edge, coord, value in ((0, 0, x0), (1, 0, x1), (2, 1, y0), (3, 1, y1)):
        move = inside & (nearest == edge)
        proj[move, coord] = value
    return proj


def boundary_map(setup: ReflectorSetup, surface: sf.SplineSurface, grid: sf.CollocationGrid) -> np.ndarray:
    """In-plane target points T(x) at the boundary collocation points."""
    xb, yb = grid.boundary[:, 0], grid.boundary[:, 1]
    jets = sf.eval_points(surface, xb, yb, {"value", "gradient"})
    j = _Jets(setup, xb, yb, jets["u"], jets["ux"], jets["uy"])
    return np.column_stack([j.mask(j.T1), j.mask(j.T2)])


def boundary_phi_update(setup: ReflectorSetup, surface: sf.SplineSurface, grid: sf.CollocationGrid | None = None) -> np.ndarray:
    """Picard refresh of the transport boundary data: project the
    current boundary image onto ∂Σ and prescribe its normal component."""
    if grid is None:
        grid = sf.collocation_points(surface.basis_x, surface.basis_y)
    T = boundary_map(setup, surface, grid)
    proj = project_to_rect_boundary(T, setup.sigma_rect)
    return np.sum(proj * grid.normals, axis=1)


# ---------------------------------------------------------------------------
# the collocation problem


def flux_factor(aux: float | np.ndarray) -> float | np.ndarray:
    """Energy factor c from the solver unknown γ: c = e^γ.

    c is a ratio of positive fluxes, but as a free-signed unknown it
    also admits roots with det⁺_λ < 0 = c·b on non-elliptic branches;
    the exponential parameterization confines the iteration to c > 0
    so only the R-convex branch remains solvable.
    """
    return np.exp(np.minimum(aux, 700.0))


def make_reflector_problem(
    setup: ReflectorSetup,
    g_image: im.IrradianceImage,
    grid: sf.CollocationGrid,
    phi: np.ndarray,
) -> co.PdeProblem:
    """Collocation problem for one continuation level.

    ``phi`` is read live (mutated by the Picard callback between Newton
    steps); the scalar unknown is γ = log c."""
    if phi.shape != (grid.boundary.shape[0],):
        raise ValueError(f"phi has shape {phi.shape}, expected ({grid.boundary.shape[0]},)")
    lam = setup.lam
    weights_x = bs.basis_integrals(grid.basis_x)
    weights_y = bs.basis_integrals(grid.basis_y)

    def interior_residual(x, y, u, ux, uy, uxx, uxy, uyy, aux):
        j = _Jets(setup, x, y, u, ux, uy)
        rhs, _, _, _ = _rhs_and_derivs(setup, g_image, j)
        m = SymMat2(uxx + j.kappa * j.n11, uxy + j.kappa * j.n12, uyy + j.kappa * j.n22)
        return j.mask(det_plus_lambda(m, lam)) - flux_factor(aux) * rhs

    def interior_jacobian(x, y, u, ux, uy, uxx, uxy, uyy, aux):
        j = _Jets(setup, x, y, u, ux, uy)
        rhs, rhs_u, rhs_ux, rhs_uy = _rhs_and_derivs(setup, g_image, j)
        m = SymMat2(uxx + j.kappa * j.n11, uxy + j.kappa * j.n12, uyy + j.kappa * j.n22)
        d11, d12, d22 = det_plus_lambda_derivs(m, lam)
        sn = d11 * j.n11 + d12 * j.n12 + d22 * j.n22
        c = flux_factor(aux)
        f_u = sn * j.kappa_u - c * rhs_u
        f_ux = sn * j.kappa_ux - c * rhs_ux
        f_uy = sn * j.kappa_uy - c * rhs_uy
        return j.mask(f_u), j.mask(f_ux), j.mask(f_uy), d11, d12, d22, -c * rhs

    def boundary_residual(x, y, nx, ny, u, ux, uy, aux):
        j = _Jets(setup, x, y, u, ux, uy)
        return j.mask(nx * j.T1 + ny * j.T2) - phi

    def boundary_jacobian(x, y, nx, ny, u, ux, uy, aux):
        j = _Jets(setup, x, y, u, ux, uy)
        f_u = nx * j.T1_u + ny * j.T2_u
        f_ux = nx * j.T1_ux + ny * j.T2_ux
        f_uy = nx * j.T1_uy + ny * j.T2_uy
        return j.mask(f_u), j.mask(f_ux), j.mask(f_uy), np.zeros_like(x)

    def scalar_constraint(surface: sf.SplineSurface, aux: float) -> float:
        return sf.surface_integral(surface) - setup.size_G

    def constraint_jacobian(surface: sf.SplineSurface, aux: float):
        return np.outer(weights_x, weights_y).ravel(), 0.0

    return co.PdeProblem(
        interior_residual=interior_residual,
        boundary_residual=boundary_residual,
        interior_jacobian=interior_jacobian,
        boundary_jacobian=boundary_jacobian,
        scalar_constraint=scalar_constraint,
        constraint_jacobian=constraint_jacobian,
        has_aux=True,
    )


# ---------------------------------------------------------------------------
# continuation driver


@dataclass(frozen=True)
class LevelRun:
    n: int
    mollifier: int
    c: float
    report: co.SolveReport


def truncate_schedule(schedule, n_target: int) -> list[tuple[int, int]]:
    pairs = [(int(n), int(m)) for n, m in schedule if n <= n_target]
    if not pairs:
        raise ValueError(f"no schedule pairs at or below N={n_target}")
    if [n for n, _ in pairs] != sorted(n for n, _ in pairs):
        raise ValueError(f"schedule grid sizes must be nondecreasing, got {pairs}")
    return pairs


def _solve_level(
    setup: ReflectorSetup,
    g_level: im.IrradianceImage,
    surface: sf.SplineSurface,
    c: float,
    config: co.SolverConfig,
    mollifier_n: int,
    intertwined: bool = True,
    phi0: np.ndarray | None = None,
) -> tuple[sf.SplineSurface, LevelRun]:
    grid = sf.collocation_points(surface.basis_x, surface.basis_y)
    phi = boundary_phi_update(setup, surface, grid) if phi0 is None else np.array(phi0, dtype=float)
    problem = make_reflector_problem(setup, g_level, grid, phi)

    def refresh_phi(accepted: sf.SplineSurface, aux: float) -> None:
        phi[:] = boundary_phi_update(setup, accepted, grid)

    if c <= 0.0:
        raise ValueError(f"flux factor must be positive, got {c}")
    solution, report = co.solve(
        problem, surface, grid, config, aux0=float(np.log(c)), on_accept=refresh_phi if intertwined else None
    )
    return solution, LevelRun(
        n=surface.basis_x.dim, mollifier=mollifier_n, c=float(flux_factor(report.aux_value)), report=report
    )


def solve_reflector(
    setup: ReflectorSetup,
    initial: sf.SplineSurface,
    n_target: int,
    schedule=DEFAULT_SCHEDULE,
    config: co.SolverConfig = REFLECTOR_CONFIG,
    c0: float = 1.0,
) -> tuple[sf.SplineSurface, list[LevelRun]]:
    """Nested iteration over (grid, mollifier) pairs with the Picard
    boundary update intertwined into every accepted Newton step."""
    pairs = truncate_schedule(schedule, n_target)
    if initial.basis_x.dim != pairs[0][0]:
        raise ValueError(f"initial surface is N={initial.basis_x.dim}, schedule starts at N={pairs[0][0]}")
    prepared = prepare_target(setup, setup.target)

    current = initial
    c = c0
    runs: list[LevelRun] = []
    for level, (n, mollifier_n) in enumerate(pairs):
        g_level = im.mollify(prepared, mollifier_n)
        if current.basis_x.dim != n:
            current = co.lift_to(current, n)
        current, run = _solve_level(setup, g_level, current, c, config, mollifier_n)
        runs.append(run)
        if run.report.stop_reason not in ("residual", "step", "stall"):
            raise co.LevelFailure(level, n, run.report, current)
        c = run.c
    return current, runs


def _aim_tilt(t_center: float, target_offset: float, u0: float) -> float:
    """Slope α of the cap tilt that sends the central reflected ray to
    in-plane offset ``target_offset``: the negative root of
    w·α² − 2·t·α − w·u₀² = 0 (from T = 2tα/(α² − u₀²) at the center)."""
    if target_offset == 0.0:
        return 0.0
    return (t_center - np.hypot(t_center, target_offset * u0)) / target_offset


def universal_initial(
    setup: ReflectorSetup,
    n: int = 21,
    config: co.SolverConfig = REFLECTOR_CONFIG,
) -> tuple[sf.SplineSurface, list[LevelRun]]:
    """Image-independent starting reflector: the constant-target solve
    from an aimed spherical-cap ansatz at the coarsest grid.

    The ansatz u = u₀ + α₁(x−x_c) + α₂(y−y_c) has cap height
    u₀ = 𝒢/|Ω| (so ∫u = 𝒢 exactly — the linear terms integrate out)
    and tilts chosen so the central reflected ray hits the center of Σ.
    The tilt matters: it spreads the initial boundary image across ∂Σ,
    which gives the self-projection boundary update an actual normal
    component to prescribe from the first Newton step on.  An un-aimed
    cap reflects the beam around the in-plane origin instead; when Σ
    sits off-axis its entire image then projects onto the nearest edge
    of Σ and the iteration collapses onto a degenerate branch with
    c → 0.  From the aimed ansatz a single intertwined solve lands on
    the Picard fixed point.
    """
    const_setup = ReflectorSetup(
        target=constant_target(setup),
        omega_rect=setup.omega_rect,
        sigma_rect=setup.sigma_rect,
        z_plane=setup.z_plane,
        f=setup.f,
        size_G=setup.size_G,
        lam=setup.lam,
        gray_lift=setup.gray_lift,
    )
    ox0, ox1, oy0, oy1 = setup.omega_rect
    sx0, sx1, sy0, sy1 = setup.sigma_rect
    x_c, y_c = 0.5 * (ox0 + ox1), 0.5 * (oy0 + oy1)
    u0 = setup.size_G / setup.omega_area
    omega_c = float(np.sqrt(1.0 - x_c * x_c - y_c * y_c))
    t_center = 1.0 - u0 * setup.z_plane / omega_c
    ax = _aim_tilt(t_center, 0.5 * (sx0 + sx1), u0)
    ay = _aim_tilt(t_center, 0.5 * (sy0 + sy1), u0)

    basis_x = bs.make_basis(ox0, ox1, n)
    basis_y = bs.make_basis(oy0, oy1, n)
    aimed_cap = sf.interpolate(
        lambda x, y: u0 + ax * (x - x_c) + ay * (y - y_c), basis_x, basis_y
    )
    prepared = prepare_target(const_setup, const_setup.target)

    solution, run = _solve_level(const_setup, prepared, aimed_cap, 1.0, config, mollifier_n=1)
    if run.report.stop_reason not in ("residual", "step"):
        raise co.LevelFailure(0, n, run.report, solution)
    return solution, [run]
