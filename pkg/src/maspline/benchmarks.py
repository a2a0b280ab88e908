"""Determinant kernel and the five Monge-Ampère Dirichlet benchmarks.

The interior equation of every benchmark is det_plus_lambda(D²u) = f on
the unit square with Dirichlet data from the known solution (benchmark 5
has no known solution; its data is zero).  The penalized determinant
replaces det(D²u) so that the convex (elliptic) solution branch is the
only root reachable by the Newton iteration: non-convex trial iterates
see a large negative residual instead of a spurious sign flip.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import bspline as bs
from . import collocation as co
from . import surface as sf

LAMBDA_DEFAULT = 1.0e3
DOMAIN = (0.0, 1.0)
CENTER = (0.5, 0.5)
CONE_RADIUS = 0.2  # flat-bottom radius of benchmark 2
CROSS_SECTION_SAMPLES = 512


@dataclass(frozen=True)
class SymMat2:
    """Symmetric 2x2 matrix entries; fields may be equal-shape arrays."""

    w11: float | np.ndarray
    w12: float | np.ndarray
    w22: float | np.ndarray


def det_plus(w: SymMat2) -> float | np.ndarray:
    """Determinant with negative diagonal entries clamped to zero.

    Equals det(w) whenever both diagonal entries are positive and is
    non-positive as soon as one of them is non-positive.
    """
    return np.maximum(w.w11, 0.0) * np.maximum(w.w22, 0.0) - np.square(w.w12)


def det_plus_lambda(w: SymMat2, lam: float) -> float | np.ndarray:
    """Clamped determinant minus the quadratic negative-diagonal penalty."""
    if lam < 0.0:
        raise ValueError(f"penalty weight must be nonnegative, got {lam}")
    penalty = np.square(np.minimum(w.w11, 0.0)) + np.square(np.minimum(w.w22, 0.0))
    return det_plus(w) - lam * penalty


def det_plus_lambda_derivs(
    w: SymMat2, lam: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Partial derivatives of det_plus_lambda with respect to (w11, w12, w22)."""
    d11 = np.where(w.w11 > 0.0, np.maximum(w.w22, 0.0), 0.0) - 2.0 * lam * np.minimum(w.w11, 0.0)
    d22 = np.where(w.w22 > 0.0, np.maximum(w.w11, 0.0), 0.0) - 2.0 * lam * np.minimum(w.w22, 0.0)
    d12 = -2.0 * np.asarray(w.w12)
    return d11, d12, d22


# ---------------------------------------------------------------------------
# benchmark definitions


@dataclass(frozen=True)
class Benchmark:
    """One Dirichlet test case: right-hand side, boundary data, exact jets."""

    id: int
    rhs: Callable[[np.ndarray, np.ndarray], np.ndarray]
    boundary_g: Callable[[np.ndarray, np.ndarray], np.ndarray]
    exact_solution: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]] | None


def _radius(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.hypot(x - CENTER[0], y - CENTER[1])


def _benchmark_fields(bench_id: int, n: int) -> Benchmark:
    if bench_id == 1:
        # smooth radially symmetric convex solution

        def exact1(x, y):
            u = np.exp(0.5 * (x**2 + y**2))
            return u, x * u, y * u

        return Benchmark(
            id=1,
            rhs=lambda x, y: (1.0 + x**2 + y**2) * np.exp(x**2 + y**2),
            boundary_g=lambda x, y: np.exp(0.5 * (x**2 + y**2)),
            exact_solution=exact1,
        )
    if bench_id == 2:
        # C^1 solution, flat on a disk around the center

        def exact2(x, y):
            r = _radius(x, y)
            bump = np.maximum(0.0, r - CONE_RADIUS)
            with np.errstate(invalid="ignore", divide="ignore"):
                slope = np.where(r > 0.0, bump / np.where(r > 0.0, r, 1.0), 0.0)
            return 0.5 * bump**2, slope * (x - CENTER[0]), slope * (y - CENTER[1])

        def rhs2(x, y):
            r = _radius(x, y)
            with np.errstate(divide="ignore"):
                return np.where(r > CONE_RADIUS, 1.0 - CONE_RADIUS / np.where(r > 0.0, r, 1.0), 0.0)

        return Benchmark(
            id=2,
            rhs=rhs2,
            boundary_g=lambda x, y: exact2(x, y)[0],
            exact_solution=exact2,
        )
    if bench_id == 3:
        # unbounded right-hand side at the far corner (1, 1)

        def exact3(x, y):
            # the gradient diverges toward the corner (1, 1) where root -> 0
            root = np.sqrt(2.0 - x**2 - y**2)
            with np.errstate(divide="ignore"):
                return -root, x / root, y / root

        return Benchmark(
            id=3,
            rhs=lambda x, y: 2.0 / (2.0 - x**2 - y**2) ** 2,
            boundary_g=lambda x, y: -np.sqrt(2.0 - x**2 - y**2),
            exact_solution=exact3,
        )
    if bench_id == 4:
        # cone (Lipschitz only); the Dirac measure pi * delta is replaced
        # by the grid-scaled indicator f_h = 4/h^2 on the ball of radius h/2
        h = (DOMAIN[1] - DOMAIN[0]) / (n - 1)

        def exact4(x, y):
            r = _radius(x, y)
            with np.errstate(invalid="ignore", divide="ignore"):
                inv = np.where(r > 0.0, 1.0 / np.where(r > 0.0, r, 1.0), 0.0)
            return r, (x - CENTER[0]) * inv, (y - CENTER[1]) * inv

        return Benchmark(
            id=4,
            rhs=lambda x, y: np.where(_radius(x, y) <= h / 2.0, 4.0 / h**2, 0.0),
            boundary_g=lambda x, y: _radius(x, y),
            exact_solution=exact4,
        )
    if bench_id == 5:
        # constant right-hand side, homogeneous data, no known solution
        return Benchmark(
            id=5,
            rhs=lambda x, y: np.ones_like(np.asarray(x, dtype=float) * np.asarray(y, dtype=float)),
            boundary_g=lambda x, y: np.zeros_like(np.asarray(x, dtype=float) * np.asarray(y, dtype=float)),
            exact_solution=None,
        )
    raise ValueError(f"benchmark id must be 1..5, got {bench_id}")


def make_benchmark(bench_id: int, n: int, lam: float = LAMBDA_DEFAULT) -> tuple[co.PdeProblem, Benchmark]:
    """The collocation problem det_plus_lambda(D²u) = f, u = g on the boundary."""
    if n < 11:
        raise ValueError(f"n must be at least 11, got {n}")
    bench = _benchmark_fields(bench_id, n)

    def interior_residual(x, y, u, ux, uy, uxx, uxy, uyy, aux):
        return det_plus_lambda(SymMat2(uxx, uxy, uyy), lam) - bench.rhs(x, y)

    def interior_jacobian(x, y, u, ux, uy, uxx, uxy, uyy, aux):
        d11, d12, d22 = det_plus_lambda_derivs(SymMat2(uxx, uxy, uyy), lam)
        zero = np.zeros_like(x)
        return zero, zero, zero, d11, d12, d22, zero

    def boundary_residual(x, y, nx, ny, u, ux, uy, aux):
        return u - bench.boundary_g(x, y)

    def boundary_jacobian(x, y, nx, ny, u, ux, uy, aux):
        zero = np.zeros_like(x)
        return np.ones_like(x), zero, zero, zero

    # the infinity-norm stopping test is scaled by the data magnitude so
    # that grid-dependent right-hand sides (benchmark 4) stay reachable
    # in double precision
    xs = np.linspace(*DOMAIN, n)[1:-1]
    scale = float(max(1.0, np.max(np.abs(bench.rhs(xs[:, None], xs[None, :])))))
    problem = co.PdeProblem(
        interior_residual=interior_residual,
        boundary_residual=boundary_residual,
        interior_jacobian=interior_jacobian,
        boundary_jacobian=boundary_jacobian,
        residual_scale=scale,
    )
    return problem, bench


# ---------------------------------------------------------------------------
# initial guess and pipeline


def poisson_problem(source: Callable, boundary_g: Callable) -> co.PdeProblem:
    """The linear collocation problem Δu = source, u = g on the boundary."""

    def interior_residual(x, y, u, ux, uy, uxx, uxy, uyy, aux):
        return uxx + uyy - source(x, y)

    def interior_jacobian(x, y, u, ux, uy, uxx, uxy, uyy, aux):
        zero = np.zeros_like(x)
        one = np.ones_like(x)
        return zero, zero, zero, one, zero, one, zero

    def boundary_residual(x, y, nx, ny, u, ux, uy, aux):
        return u - boundary_g(x, y)

    def boundary_jacobian(x, y, nx, ny, u, ux, uy, aux):
        zero = np.zeros_like(x)
        return np.ones_like(x), zero, zero, zero

    return co.PdeProblem(
        interior_residual=interior_residual,
        boundary_residual=boundary_residual,
        interior_jacobian=interior_jacobian,
        boundary_jacobian=boundary_jacobian,
    )


def poisson_initial_guess(bench: Benchmark, n: int) -> sf.SplineSurface:
    """Initial guess from the Laplacian surrogate Δu = sqrt(2 f).

    The surrogate matches the Monge-Ampère operator on isotropic
    Hessians; no convexification is applied afterwards.
    """
    problem = poisson_problem(
        lambda x, y: np.sqrt(2.0 * np.maximum(bench.rhs(x, y), 0.0)),
        bench.boundary_g,
    )
    basis = bs.make_basis(*DOMAIN, n)
    grid = sf.collocation_points(basis, basis)
    zero = sf.make_surface(basis, basis, np.zeros((n, n)))
    config = co.SolverConfig(max_iter=5, initial_radius=1e10)
    solution, report = co.solve(problem, zero, grid, config)
    if not report.converged:
        raise RuntimeError(f"linear initial-guess solve did not converge: {report.final_residual_norm:.3e}")
    return solution


# the toughest benchmark level observed needs a bit over 100 steps
BENCHMARK_CONFIG = co.SolverConfig(max_iter=400, progress_window=50, tol_progress=1.0)


def solve_benchmark(
    bench_id: int,
    n: int,
    config: co.SolverConfig = BENCHMARK_CONFIG,
    n_coarsest: int = 11,
) -> tuple[sf.SplineSurface, list[co.SolveReport]]:
    """Full pipeline for one target grid: Poisson guess at the coarsest
    level, then nested iteration up the schedule."""
    schedule = co.schedule_to(n, n_coarsest)
    guess = poisson_initial_guess(_benchmark_fields(bench_id, schedule[0]), schedule[0])
    return co.nested_solve(
        lambda level_n: make_benchmark(bench_id, level_n)[0],
        guess,
        schedule,
        config,
    )


def max_knot_error(surface: sf.SplineSurface, bench: Benchmark) -> float:
    """Maximum absolute deviation from the exact solution over all
    collocation points (the n x n knot grid)."""
    if bench.exact_solution is None:
        raise ValueError(f"benchmark {bench.id} has no exact solution")
    xs = surface.basis_x.kv.distinct()
    ys = surface.basis_y.kv.distinct()
    u = sf.eval_grid(surface, xs, ys)["u"]
    exact, _, _ = bench.exact_solution(xs[:, None], ys[None, :])
    return float(np.max(np.abs(u - exact)))


CLEAN_STOPS = ("residual", "step", "stall")


@dataclass(frozen=True)
class TableRow:
    n: int
    max_error: float
    seconds: float
    stop_reason: str  # final level; prefixed "failed:" if a level aborted

    @property
    def clean(self) -> bool:
        return self.stop_reason in CLEAN_STOPS


def run_table(bench_id: int, n_list: list[int], config: co.SolverConfig = BENCHMARK_CONFIG) -> list[TableRow]:
    """Error/timing rows; the wall time covers the full pipeline
    including the initial guess.  The error is always that of the last
    iterate — for a stalled or failed solve it reports what the
    returned surface actually achieves."""
    rows = []
    for n in n_list:
        start = time.perf_counter()
        try:
            surface, reports = solve_benchmark(bench_id, n, config)
            stop_reason = reports[-1].stop_reason
        except co.LevelFailure as failure:
            surface = failure.surface
            stop_reason = f"failed:{failure.report.stop_reason}"
        seconds = time.perf_counter() - start
        bench = _benchmark_fields(bench_id, n)
        if bench.exact_solution is not None:
            error = max_knot_error(surface, bench)
        else:
            error = float("nan")
        rows.append(TableRow(n=n, max_error=error, seconds=seconds, stop_reason=stop_reason))
    return rows


def table_csv(rows: list[TableRow]) -> str:
    lines = ["N,max_error,seconds"]
    for row in rows:
        lines.append(f"{row.n},{row.max_error:.6e},{row.seconds:.3f}")
    return "\n".join(lines) + "\n"


def cross_sections(surface: sf.SplineSurface) -> tuple[np.ndarray, np.ndarray]:
    """Two sampled curves: along the horizontal center line and along
    the main diagonal.  Each is a (samples, 2) array of (abscissa, u)."""
    ax, bx_, ay, by_ = surface.rectangle
    t = np.linspace(0.0, 1.0, CROSS_SECTION_SAMPLES)
    xs = ax + (bx_ - ax) * t
    ys = ay + (by_ - ay) * t
    mid = np.full_like(xs, 0.5 * (ay + by_))
    axis_u = sf.eval_points(surface, xs, mid, {"value"})["u"]
    diag_u = sf.eval_points(surface, xs, ys, {"value"})["u"]
    return np.column_stack([xs, axis_u]), np.column_stack([xs, diag_u])
