"""Square nonlinear collocation systems and their trust-region solver.

A PDE problem contributes one residual equation per collocation point
(interior operator rows, then boundary rows, then an optional scalar
constraint row paired with one extra scalar unknown).  The solver is a
double-dogleg trust-region quasi-Newton iteration on the merit function
half the squared residual norm, with sparse-LU Newton directions and a
coarse-to-fine nested-iteration driver.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import bspline as bs
from . import surface as sf

# trust-region control constants (gain-ratio update): expand the radius
# when the actual-to-predicted merit decrease exceeds EXPAND_RHO, shrink
# when it falls below SHRINK_RHO, accept any positive gain.
EXPAND_RHO = 0.75
SHRINK_RHO = 0.25
EXPAND_FACTOR = 2.0
SHRINK_FACTOR = 1.0 / 3.0
STALL_RADIUS = 1e-14
MAX_RADIUS = 1e12
# double-dogleg Newton bias: the second elbow sits at eta * newton_step
# with eta = DOGLEG_BIAS * gamma + (1 - DOGLEG_BIAS)
DOGLEG_BIAS = 0.8


@dataclass(frozen=True)
class PdeProblem:
    """Residual callbacks of a second-order collocation problem.

    All callbacks are vectorized: point coordinates, jets and normals
    arrive as equal-length arrays and a same-length residual array is
    returned.  ``aux`` is the optional extra scalar unknown; problems
    without it receive 0.0.

    The *_jacobian callbacks return the partial derivatives of the
    residual with respect to the jet entries (and aux), as tuples of
    arrays: interior (F_u, F_ux, F_uy, F_uxx, F_uxy, F_uyy, F_aux),
    boundary (F_u, F_ux, F_uy, F_aux).  They may be None, in which case
    only finite-difference Jacobians are available.
    """

    interior_residual: Callable[..., np.ndarray]
    boundary_residual: Callable[..., np.ndarray]
    scalar_constraint: Callable[[sf.SplineSurface, float], float] | None = None
    has_aux: bool = False
    interior_jacobian: Callable[..., tuple] | None = None
    boundary_jacobian: Callable[..., tuple] | None = None
    constraint_jacobian: Callable[[sf.SplineSurface, float], tuple[np.ndarray, float]] | None = None
    residual_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.has_aux != (self.scalar_constraint is not None):
            raise ValueError("scalar_constraint must be present exactly when has_aux is set")


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 100
    tol_residual: float = 1e-10
    tol_step: float = 1e-12
    initial_radius: float = 100.0
    jacobian_mode: str = "analytic"
    fd_step: float = 1e-6
    # no-progress stall: stop when the merit decreased by less than
    # tol_progress (relative) over the last progress_window accepted
    # steps; 0 disables the check (the default -- opt in per problem
    # class, since a legitimate slow solve would trip any fixed window)
    progress_window: int = 0
    tol_progress: float = 1.0

    def __post_init__(self) -> None:
        if min(self.tol_residual, self.tol_step, self.initial_radius, self.fd_step) <= 0.0:
            raise ValueError("tolerances, radius and fd_step must be positive")
        if self.jacobian_mode not in ("analytic", "finite-difference"):
            raise ValueError(f"unknown jacobian_mode {self.jacobian_mode!r}")
        if self.progress_window < 0 or self.tol_progress < 0.0:
            raise ValueError("progress_window and tol_progress must be nonnegative")


@dataclass
class SolveReport:
    iterations: int = 0
    final_residual_norm: float = np.inf
    converged: bool = False
    stop_reason: str = "max_iter"
    radius_history: list[float] = field(default_factory=list)
    merit_history: list[float] = field(default_factory=list)
    aux_value: float | None = None


class LevelFailure(RuntimeError):
    """A nested-iteration level ended without meeting a stopping criterion."""

    def __init__(self, level: int, n: int, report: SolveReport, surface: sf.SplineSurface):
        super().__init__(f"level {level} (N={n}) stopped with {report.stop_reason!r}, residual {report.final_residual_norm:.3e}")
        self.level = level
        self.n = n
        self.report = report
        self.surface = surface


# ---------------------------------------------------------------------------
# assembly


def _active_tables(basis: bs.ModifiedBasis) -> tuple[np.ndarray, np.ndarray]:
    """Per-knot active basis functions and their jet values.

    Returns (indices, tables) of shapes (n, K) and (n, K, 3): at knot i
    the functions indices[i, :] have values tables[i, :, 0], first
    derivatives tables[i, :, 1], second derivatives tables[i, :, 2];
    padding entries carry index 0 and zero values.
    """
    xs = basis.kv.distinct()
    v, d1, d2 = bs.design_matrices(basis, xs)
    stacked = np.stack([v, d1, d2], axis=2)  # (n, dim, 3)
    nonzero = np.any(stacked != 0.0, axis=2)
    width = int(nonzero.sum(axis=1).max())
    indices = np.zeros((len(xs), width), dtype=np.int64)
    tables = np.zeros((len(xs), width, 3))
    for i in range(len(xs)):
        cols = np.nonzero(nonzero[i])[0]
        indices[i, : len(cols)] = cols
        tables[i, : len(cols)] = stacked[i, cols]
    return indices, tables


@dataclass(frozen=True)
class _Workspace:
    """Cached per-grid design data shared by residual and Jacobian assembly."""

    grid: sf.CollocationGrid
    active_x: tuple[np.ndarray, np.ndarray]
    active_y: tuple[np.ndarray, np.ndarray]

    @property
    def n_coeffs(self) -> int:
        return self.grid.basis_x.dim * self.grid.basis_y.dim


def _workspace(grid: sf.CollocationGrid) -> _Workspace:
    return _Workspace(
        grid=grid,
        active_x=_active_tables(grid.basis_x),
        active_y=_active_tables(grid.basis_y),
    )


def _grid_jets(surface: sf.SplineSurface, grid: sf.CollocationGrid) -> dict[str, np.ndarray]:
    return sf.eval_grid(surface, grid.xs, grid.ys)


def _interior_args(jets: dict[str, np.ndarray], grid: sf.CollocationGrid) -> tuple[np.ndarray, ...]:
    i, j = grid.interior_ij[:, 0], grid.interior_ij[:, 1]
    x, y = grid.interior[:, 0], grid.interior[:, 1]
    return (x, y) + tuple(jets[k][i, j] for k in ("u", "ux", "uy", "uxx", "uxy", "uyy"))


def _boundary_args(jets: dict[str, np.ndarray], grid: sf.CollocationGrid) -> tuple[np.ndarray, ...]:
    i, j = grid.boundary_ij[:, 0], grid.boundary_ij[:, 1]
    x, y = grid.boundary[:, 0], grid.boundary[:, 1]
    return (x, y, grid.normals[:, 0], grid.normals[:, 1]) + tuple(jets[k][i, j] for k in ("u", "ux", "uy"))


def assemble_residual(
    problem: PdeProblem,
    surface: sf.SplineSurface,
    grid: sf.CollocationGrid,
    aux: float = 0.0,
    check: bool = True,
) -> np.ndarray:
    """Residual vector: interior rows, boundary rows, optional constraint.

    With ``check`` set, a non-finite entry raises with the offending
    point; the solver disables the check and treats non-finite trial
    residuals as rejected steps.
    """
    jets = _grid_jets(surface, grid)
    r_int = np.asarray(problem.interior_residual(*_interior_args(jets, grid), aux), dtype=float)
    r_bnd = np.asarray(problem.boundary_residual(*_boundary_args(jets, grid), aux), dtype=float)
    parts = [r_int, r_bnd]
    if problem.has_aux:
        parts.append(np.array([problem.scalar_constraint(surface, aux)], dtype=float))
    residual = np.concatenate(parts)
    if check and not np.all(np.isfinite(residual)):
        bad = int(np.flatnonzero(~np.isfinite(residual))[0])
        points = np.vstack([grid.interior, grid.boundary])
        where = f"point {tuple(points[bad])}" if bad < len(points) else "constraint row"
        raise FloatingPointError(f"non-finite residual at {where}")
    return residual


def _scatter_blocks(
    ws: _Workspace,
    ij: np.ndarray,
    row0: int,
    weights: list[tuple[np.ndarray, int, int]],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """COO data for residual rows whose derivative is a sum of
    weight(x,y) * d^a Bx * d^b By terms."""
    idx_x, tab_x = ws.active_x
    idx_y, tab_y = ws.active_y
    i, j = ij[:, 0], ij[:, 1]
    tx, ty = tab_x[i], tab_y[j]  # (P, K, 3)
    block = np.zeros((len(i), tx.shape[1], ty.shape[1]))
    for w, dx, dy in weights:
        block += np.einsum("p,pk,pl->pkl", w, tx[:, :, dx], ty[:, :, dy])
    ny = ws.grid.basis_y.dim
    cols = (idx_x[i][:, :, None] * ny + idx_y[j][:, None, :]).ravel()
    rows = np.repeat(row0 + np.arange(len(i)), tx.shape[1] * ty.shape[1])
    return rows, cols, block.ravel()


def assemble_jacobian(
    problem: PdeProblem,
    surface: sf.SplineSurface,
    grid: sf.CollocationGrid,
    aux: float = 0.0,
    workspace: _Workspace | None = None,
) -> sp.csc_matrix:
    """Sparse Jacobian of the residual with respect to the coefficients
    (and the aux scalar, as the trailing column/row when present)."""
    if problem.interior_jacobian is None or problem.boundary_jacobian is None:
        raise ValueError("problem has no analytic Jacobian; use jacobian_mode='finite-difference'")
    ws = workspace if workspace is not None else _workspace(grid)
    jets = _grid_jets(surface, grid)
    n_int, n_bnd = len(grid.interior), len(grid.boundary)
    n_unknowns = ws.n_coeffs + (1 if problem.has_aux else 0)

    fu, fux, fuy, fuxx, fuxy, fuyy, faux_i = problem.interior_jacobian(*_interior_args(jets, grid), aux)
    rows_i, cols_i, data_i = _scatter_blocks(
        ws,
        grid.interior_ij,
        0,
        [(fu, 0, 0), (fux, 1, 0), (fuy, 0, 1), (fuxx, 2, 0), (fuxy, 1, 1), (fuyy, 0, 2)],
    )
    gu, gux, guy, faux_b = problem.boundary_jacobian(*_boundary_args(jets, grid), aux)
    rows_b, cols_b, data_b = _scatter_blocks(
        ws,
        grid.boundary_ij,
        n_int,
        [(gu, 0, 0), (gux, 1, 0), (guy, 0, 1)],
    )
    rows = [rows_i, rows_b]
    cols = [cols_i, cols_b]
    data = [data_i, data_b]

    if problem.has_aux:
        aux_col = ws.n_coeffs
        for r0, f in ((0, faux_i), (n_int, faux_b)):
            f = np.broadcast_to(np.asarray(f, dtype=float), (n_int if r0 == 0 else n_bnd,))
            rows.append(r0 + np.arange(len(f)))
            cols.append(np.full(len(f), aux_col))
            data.append(f)
        if problem.constraint_jacobian is None:
            raise ValueError("aux problems need a constraint_jacobian for analytic mode")
        c_grad, c_aux = problem.constraint_jacobian(surface, aux)
        crow = n_int + n_bnd
        rows.append(np.full(ws.n_coeffs + 1, crow))
        cols.append(np.arange(ws.n_coeffs + 1))
        data.append(np.concatenate([np.asarray(c_grad, dtype=float).ravel(), [c_aux]]))

    mat = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_unknowns, n_unknowns),
    )
    return mat.tocsc()


def fd_jacobian(
    problem: PdeProblem,
    surface: sf.SplineSurface,
    grid: sf.CollocationGrid,
    aux: float = 0.0,
    fd_step: float = 1e-6,
) -> np.ndarray:
    """Dense central-difference Jacobian (testing oracle and fallback)."""
    base = assemble_residual(problem, surface, grid, aux, check=False)
    nx, ny = surface.basis_x.dim, surface.basis_y.dim
    n_unknowns = nx * ny + (1 if problem.has_aux else 0)
    jac = np.zeros((len(base), n_unknowns))
    flat = surface.coeffs.ravel()

    def bumped_residual(k: int, step: float) -> np.ndarray:
        bumped = flat.copy()
        bumped[k] += step
        s2 = sf.make_surface(surface.basis_x, surface.basis_y, bumped.reshape(nx, ny))
        return assemble_residual(problem, s2, grid, aux, check=False)

    for k in range(nx * ny):
        step = fd_step * (1.0 + abs(flat[k]))
        jac[:, k] = (bumped_residual(k, step) - bumped_residual(k, -step)) / (2.0 * step)
    if problem.has_aux:
        step = fd_step * (1.0 + abs(aux))
        fwd = assemble_residual(problem, surface, grid, aux + step, check=False)
        bwd = assemble_residual(problem, surface, grid, aux - step, check=False)
        jac[:, -1] = (fwd - bwd) / (2.0 * step)
    return jac


# ---------------------------------------------------------------------------
# solver


def _newton_direction(jac: sp.csc_matrix, residual: np.ndarray, has_aux: bool) -> np.ndarray:
    """Solve J p = -residual, eliminating the dense constraint border first.

    The constraint row is dense; factorizing the core block and solving
    the 1x1 Schur complement keeps the LU fill sparse.  Singular
    factorizations are retried with a scaled diagonal shift before
    giving up.
    """

    def lu_solve(matrix: sp.csc_matrix, rhs: np.ndarray) -> Callable[[np.ndarray], np.ndarray] | None:
        scale = abs(matrix).max()
        for shift in (0.0, 1e-12, 1e-8):
            try:
                lu = splu(matrix if shift == 0.0 else (matrix + (shift * scale) * sp.identity(matrix.shape[0], format="csc")).tocsc())
                return lu.solve(rhs)
            except RuntimeError:
                continue
        return None

    if not has_aux:
        sol = lu_solve(jac, -residual)
        if sol is None:
            raise RuntimeError("singular Jacobian after regularization attempts")
        return sol

    core = jac[:-1, :-1].tocsc()
    b_col = np.asarray(jac[:-1, [-1]].todense()).ravel()
    g_row = np.asarray(jac[[-1], :-1].todense()).ravel()
    d = float(jac[-1, -1])
    rhs = np.column_stack([residual[:-1], b_col])
    sol = lu_solve(core, rhs)
    if sol is None:
        # fall back to the full bordered factorization
        full = lu_solve(jac, -residual)
        if full is None:
            raise RuntimeError("singular Jacobian after regularization attempts")
        return full
    w, v = sol[:, 0], sol[:, 1]
    denom = d - g_row @ v
    if denom == 0.0:
        raise RuntimeError("singular Jacobian after regularization attempts")
    d_aux = (g_row @ w - residual[-1]) / denom
    return np.concatenate([-w - v * d_aux, [d_aux]])


def _dogleg_step(p_newton: np.ndarray, g: np.ndarray, jg_sq: float, r_sq: float, radius: float) -> np.ndarray:
    """Double-dogleg point at the given radius.

    Path: steepest descent to the Cauchy point, straight to the biased
    Newton point eta * p_newton, then along p_newton.  Within the radius
    of the full Newton step, that step is returned unchanged.
    """
    norm_newton = np.linalg.norm(p_newton)
    if norm_newton <= radius:
        return p_newton
    g_sq = float(g @ g)
    alpha = g_sq / jg_sq
    p_cauchy = -alpha * g
    norm_cauchy = alpha * np.sqrt(g_sq)
    if norm_cauchy >= radius:
        return (-radius / np.sqrt(g_sq)) * g
    gamma = g_sq * g_sq / (jg_sq * r_sq)
    eta = DOGLEG_BIAS * gamma + (1.0 - DOGLEG_BIAS)
    if eta * norm_newton <= radius:
        return (radius / norm_newton) * p_newton
    # intersect the segment p_cauchy -> eta p_newton with the radius
    d = eta * p_newton - p_cauchy
    a = float(d @ d)
    b = 2.0 * float(p_cauchy @ d)
    c = norm_cauchy**2 - radius**2
    s = (-b + np.sqrt(b * b - 4.0 * a * c)) / (2.0 * a)
    return p_cauchy + s * d


def _unpack(z: np.ndarray, template: sf.SplineSurface, has_aux: bool) -> tuple[sf.SplineSurface, float]:
    nx, ny = template.basis_x.dim, template.basis_y.dim
    coeffs = (z[:-1] if has_aux else z).reshape(nx, ny)
    aux = float(z[-1]) if has_aux else 0.0
    return sf.make_surface(template.basis_x, template.basis_y, coeffs), aux


def solve(
    problem: PdeProblem,
    initial: sf.SplineSurface,
    grid: sf.CollocationGrid,
    config: SolverConfig = SolverConfig(),
    aux0: float = 1.0,
    on_accept: Callable[[sf.SplineSurface, float], None] | None = None,
) -> tuple[sf.SplineSurface, SolveReport]:
    """Trust-region Newton iteration on the collocation system.

    ``on_accept`` runs after every accepted step (used to refresh
    problem data that depends on the current iterate, e.g. projected
    boundary targets); the residual is re-evaluated afterwards so the
    merit always refers to the current problem data.

    Stopping: converged when the residual infinity norm falls below
    tol_residual * problem.residual_scale; otherwise stops on a step
    shorter than tol_step * (1 + |coefficients|), on a stall (radius
    underflow, or no meaningful merit decrease over the trailing
    progress window — non-smooth problems can grind indefinitely
    without either classic criterion firing) or on the iteration cap.
    """
    if not np.all(np.isfinite(initial.coeffs)):
        raise ValueError("initial surface has non-finite coefficients")
    ws = _workspace(grid)
    has_aux = problem.has_aux
    z = np.concatenate([initial.coeffs.ravel(), [aux0]]) if has_aux else initial.coeffs.ravel().copy()
    tol_res = config.tol_residual * problem.residual_scale

    surface, aux = _unpack(z, initial, has_aux)
    r = assemble_residual(problem, surface, grid, aux)
    merit = 0.5 * float(r @ r)
    radius = config.initial_radius
    report = SolveReport(aux_value=aux if has_aux else None)
    report.merit_history.append(merit)

    use_fd = config.jacobian_mode == "finite-difference"
    # merits of the accepted iterates since the last merit increase
    # (on_accept callbacks may raise the merit; those restart the window)
    progress: list[float] = [merit]

    for _ in range(config.max_iter):
        res_norm = float(np.max(np.abs(r)))
        report.final_residual_norm = res_norm
        if res_norm <= tol_res:
            report.converged = True
            report.stop_reason = "residual"
            return surface, report

        if use_fd:
            jac = sp.csc_matrix(fd_jacobian(problem, surface, grid, aux, config.fd_step))
        else:
            jac = assemble_jacobian(problem, surface, grid, aux, workspace=ws)
        p_newton = _newton_direction(jac, r, has_aux)
        g = jac.T @ r
        jg = jac @ g
        jg_sq = float(jg @ jg)
        r_sq = float(r @ r)
        if jg_sq == 0.0:
            report.stop_reason = "stall"
            return surface, report

        accepted = False
        while radius >= STALL_RADIUS:
            p = _dogleg_step(p_newton, g, jg_sq, r_sq, radius)
            jp = jac @ p
            predicted = -(float(g @ p) + 0.5 * float(jp @ jp))
            trial_surface, trial_aux = _unpack(z + p, initial, has_aux)
            r_trial = assemble_residual(problem, trial_surface, grid, trial_aux, check=False)
            finite = np.all(np.isfinite(r_trial))
            merit_trial = 0.5 * float(r_trial @ r_trial) if finite else np.inf
            rho = (merit - merit_trial) / predicted if (finite and predicted > 0.0) else -np.inf

            if rho > EXPAND_RHO:
                radius = min(radius * EXPAND_FACTOR, MAX_RADIUS)
            elif rho < SHRINK_RHO:
                radius *= SHRINK_FACTOR
            if rho > 0.0:
                z = z + p
                surface, aux = trial_surface, trial_aux
                if on_accept is not None:
                    on_accept(surface, aux)
                    r = assemble_residual(problem, surface, grid, aux)
                    merit = 0.5 * float(r @ r)
                else:
                    r, merit = r_trial, merit_trial
                accepted = True
                report.iterations += 1
                report.radius_history.append(radius)
                report.merit_history.append(merit)
                if has_aux:
                    report.aux_value = aux
                break

        report.final_residual_norm = float(np.max(np.abs(r)))
        if not accepted:
            report.stop_reason = "stall"
            return surface, report
        if np.linalg.norm(p) <= config.tol_step * (1.0 + np.linalg.norm(z)):
            report.converged = report.final_residual_norm <= tol_res
            report.stop_reason = "residual" if report.converged else "step"
            return surface, report
        progress = [merit] if merit > progress[-1] else progress + [merit]
        if config.progress_window and len(progress) > config.progress_window:
            window_old = progress[-config.progress_window - 1]
            if window_old - merit < config.tol_progress * max(merit, 1e-300):
                report.stop_reason = "stall"
                return surface, report

    report.converged = report.final_residual_norm <= tol_res
    if report.converged:
        report.stop_reason = "residual"
    return surface, report


# ---------------------------------------------------------------------------
# nested iteration


def schedule_to(n_target: int, n_coarsest: int = 11) -> list[int]:
    """Grid schedule: repeatedly double (2N - 1) from the coarsest grid,
    finishing with a direct jump to the target when doubling overshoots."""
    if n_target < n_coarsest:
        raise ValueError(f"target N {n_target} below coarsest level {n_coarsest}")
    levels = [n_coarsest]
    while 2 * levels[-1] - 1 <= n_target:
        levels.append(2 * levels[-1] - 1)
    if levels[-1] != n_target:
        levels.append(n_target)
    return levels


def resample(s: sf.SplineSurface, basis_x: bs.ModifiedBasis, basis_y: bs.ModifiedBasis) -> sf.SplineSurface:
    """Interpolate a surface onto arbitrary (possibly non-nested) bases."""
    return sf.interpolate(lambda x, y: sf.eval_grid(s, x.ravel(), y.ravel())["u"], basis_x, basis_y)


def lift_to(s: sf.SplineSurface, n_next: int) -> sf.SplineSurface:
    """Carry a surface to the next schedule level: exact prolongation
    when the knots are nested (2N - 1), spline re-interpolation otherwise."""
    n = s.basis_x.dim
    if n_next == n:
        return s
    if n_next == 2 * n - 1:
        return sf.prolong(s)
    kv = s.basis_x.kv
    return resample(s, bs.make_basis(kv.a, kv.b, n_next), bs.make_basis(s.basis_y.kv.a, s.basis_y.kv.b, n_next))


def nested_solve(
    problem_family: Callable[[int], PdeProblem],
    initial_coarse: sf.SplineSurface,
    schedule: list[int],
    config: SolverConfig = SolverConfig(),
    aux0: float = 1.0,
) -> tuple[sf.SplineSurface, list[SolveReport]]:
    """Coarse-to-fine continuation along a strictly increasing schedule.

    Each level's solution is lifted (exactly where nested, by spline
    interpolation otherwise) as the next initial guess.  Residual, step
    and stall stops all continue to the next level — a stalled iterate
    is still the best available surface and non-smooth problems stall
    by nature — while an exhausted iteration budget aborts with a
    LevelFailure carrying the level index and partial solution.
    """
    if list(schedule) != sorted(set(schedule)):
        raise ValueError(f"schedule must be strictly increasing, got {schedule}")
    if initial_coarse.basis_x.dim != schedule[0]:
        raise ValueError(f"initial surface is N={initial_coarse.basis_x.dim}, schedule starts at N={schedule[0]}")

    current = initial_coarse
    aux = aux0
    reports: list[SolveReport] = []
    for level, n in enumerate(schedule):
        current = lift_to(current, n)
        problem = problem_family(n)
        grid = sf.collocation_points(current.basis_x, current.basis_y)
        current, report = solve(problem, current, grid, config, aux0=aux)
        reports.append(report)
        if report.stop_reason not in ("residual", "step", "stall"):
            raise LevelFailure(level, n, report, current)
        if problem.has_aux:
            aux = report.aux_value
    return current, reports
