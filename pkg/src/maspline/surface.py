"""Tensor-product spline surfaces on a rectangle.

A surface is a coefficient matrix over two one-dimensional mixed bases,
u(x, y) = sum_ij C[i, j] Bx_i(x) By_j(y).  The module provides jet
evaluation (value, gradient, Hessian), the knot collocation grid with
outward boundary normals, interpolation at the grid points, and exact
prolongation onto once-refined knot vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Collection, Iterable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import bspline as bs

JET_PARTS = frozenset({"value", "gradient", "hessian"})


@dataclass(frozen=True)
class SplineSurface:
    """Immutable tensor-product spline, coefficients indexed [x, y]."""

    basis_x: bs.ModifiedBasis
    basis_y: bs.ModifiedBasis
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        expected = (self.basis_x.dim, self.basis_y.dim)
        if self.coeffs.shape != expected:
            raise ValueError(f"coefficient shape {self.coeffs.shape} does not match bases {expected}")

    @property
    def rectangle(self) -> tuple[float, float, float, float]:
        return self.basis_x.a, self.basis_x.b, self.basis_y.a, self.basis_y.b


def make_surface(basis_x: bs.ModifiedBasis, basis_y: bs.ModifiedBasis, coeffs: np.ndarray) -> SplineSurface:
    c = np.array(coeffs, dtype=float)
    c.flags.writeable = False
    return SplineSurface(basis_x=basis_x, basis_y=basis_y, coeffs=c)


def constant_surface(basis_x: bs.ModifiedBasis, basis_y: bs.ModifiedBasis, value: float) -> SplineSurface:
    """The constant function, represented exactly."""
    cx = bs.monomial_coeffs(basis_x, 0)
    cy = bs.monomial_coeffs(basis_y, 0)
    return make_surface(basis_x, basis_y, value * np.outer(cx, cy))


# ---------------------------------------------------------------------------
# evaluation


def eval_grid(s: SplineSurface, x: np.ndarray, y: np.ndarray) -> dict[str, np.ndarray]:
    """All jets of the surface on the tensor grid x × y.

    Returns arrays of shape (len(x), len(y)) under keys
    u, ux, uy, uxx, uxy, uyy.
    """
    vx, dx, dxx = bs.design_matrices(s.basis_x, np.asarray(x, dtype=float))
    vy, dy, dyy = bs.design_matrices(s.basis_y, np.asarray(y, dtype=float))
    c = s.coeffs
    return {
        "u": vx @ c @ vy.T,
        "ux": dx @ c @ vy.T,
        "uy": vx @ c @ dy.T,
        "uxx": dxx @ c @ vy.T,
        "uxy": dx @ c @ dy.T,
        "uyy": vx @ c @ dyy.T,
    }


def eval_points(
    s: SplineSurface,
    x: np.ndarray,
    y: np.ndarray,
    want: Collection[str] = JET_PARTS,
) -> dict[str, np.ndarray]:
    """Jets at scattered points (x[k], y[k]) without dense design matrices.

    Only the sixteen raw tensor B-splines active at each point are
    touched, so the cost is O(len(x)) regardless of basis dimension.
    Returns requested arrays under keys u / ux, uy / uxx, uxy, uyy.
    """
    unknown = set(want) - JET_PARTS
    if unknown:
        raise ValueError(f"unknown jet parts: {sorted(unknown)}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    spans_x, bx0, bx1, bx2 = bs.local_tables(s.basis_x.kv, x)
    spans_y, by0, by1, by2 = bs.local_tables(s.basis_y.kv, y)

    # raw-basis coefficient matrix; 4x4 active block per point
    raw = s.basis_x.mix.T @ s.coeffs @ s.basis_y.mix
    ix = spans_x[:, None] + np.arange(-3, 1)[None, :]
    iy = spans_y[:, None] + np.arange(-3, 1)[None, :]
    block = raw[ix[:, :, None], iy[:, None, :]]  # (P, 4, 4)

    def contract(tx: np.ndarray, ty: np.ndarray) -> np.ndarray:
        return np.einsum("pi,pij,pj->p", tx, block, ty)

    out: dict[str, np.ndarray] = {}
    if "value" in want:
        out["u"] = contract(bx0, by0)
    if "gradient" in want:
        out["ux"] = contract(bx1, by0)
        out["uy"] = contract(bx0, by1)
    if "hessian" in want:
        out["uxx"] = contract(bx2, by0)
        out["uxy"] = contract(bx1, by1)
        out["uyy"] = contract(bx0, by2)
    return out


def eval_surface(
    s: SplineSurface,
    p: Iterable[float],
    want: Collection[str] = JET_PARTS,
) -> tuple[float | None, np.ndarray | None, np.ndarray | None]:
    """Value, gradient and Hessian at a single point of the rectangle.

    Parts not requested through ``want`` are returned as None.  The
    Hessian is symmetric by construction: both mixed entries come from
    the same factorized product.
    """
    px, py = (float(v) for v in p)
    ax, bx_, ay, by_ = s.rectangle
    if not (ax <= px <= bx_ and ay <= py <= by_):
        raise ValueError(f"point ({px}, {py}) outside [{ax}, {bx_}] x [{ay}, {by_}]")
    jets = eval_points(s, np.array([px]), np.array([py]), want)
    u = float(jets["u"][0]) if "value" in want else None
    grad = np.array([jets["ux"][0], jets["uy"][0]]) if "gradient" in want else None
    hess = None
    if "hessian" in want:
        hess = np.array(
            [
                [jets["uxx"][0], jets["uxy"][0]],
                [jets["uxy"][0], jets["uyy"][0]],
            ]
        )
    return u, grad, hess


def surface_integral(s: SplineSurface) -> float:
    """Integral of the surface over its rectangle (exact)."""
    wx = bs.basis_integrals(s.basis_x)
    wy = bs.basis_integrals(s.basis_y)
    return float(wx @ s.coeffs @ wy)


# ---------------------------------------------------------------------------
# collocation grid


@dataclass(frozen=True)
class CollocationGrid:
    """Knot collocation points split into interior and boundary parts.

    One point per basis function: dim_x * dim_y in total.  Boundary
    points carry outward unit normals; at corners the normal is the
    normalized sum of the two edge normals.
    """

    basis_x: bs.ModifiedBasis
    basis_y: bs.ModifiedBasis
    interior: np.ndarray = field(repr=False)  # (Ni, 2) points
    boundary: np.ndarray = field(repr=False)  # (Nb, 2) points
    normals: np.ndarray = field(repr=False)  # (Nb, 2) outward units
    interior_ij: np.ndarray = field(repr=False)  # (Ni, 2) knot indices
    boundary_ij: np.ndarray = field(repr=False)  # (Nb, 2) knot indices

    @property
    def xs(self) -> np.ndarray:
        return self.basis_x.kv.distinct()

    @property
    def ys(self) -> np.ndarray:
        return self.basis_y.kv.distinct()

    @property
    def size(self) -> int:
        return len(self.interior) + len(self.boundary)


def collocation_points(basis_x: bs.ModifiedBasis, basis_y: bs.ModifiedBasis) -> CollocationGrid:
    xs = basis_x.kv.distinct()
    ys = basis_y.kv.distinct()
    nx, ny = len(xs), len(ys)

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    on_edge = (ii == 0) | (ii == nx - 1) | (jj == 0) | (jj == ny - 1)

    interior_ij = np.column_stack([ii[~on_edge], jj[~on_edge]])
    boundary_ij = np.column_stack([ii[on_edge], jj[on_edge]])

    normals = np.zeros((len(boundary_ij), 2))
    normals[:, 0] = np.where(boundary_ij[:, 0] == 0, -1.0, 0.0) + np.where(boundary_ij[:, 0] == nx - 1, 1.0, 0.0)
    normals[:, 1] = np.where(boundary_ij[:, 1] == 0, -1.0, 0.0) + np.where(boundary_ij[:, 1] == ny - 1, 1.0, 0.0)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    def points_of(ij: np.ndarray) -> np.ndarray:
        return np.column_stack([xs[ij[:, 0]], ys[ij[:, 1]]])

    return CollocationGrid(
        basis_x=basis_x,
        basis_y=basis_y,
        interior=points_of(interior_ij),
        boundary=points_of(boundary_ij),
        normals=normals,
        interior_ij=interior_ij,
        boundary_ij=boundary_ij,
    )


# ---------------------------------------------------------------------------
# interpolation and prolongation


def _interpolation_lu(basis_x: bs.ModifiedBasis, basis_y: bs.ModifiedBasis):
    """Sparse LU of the tensor interpolation matrix at the knot points."""
    vx, _, _ = bs.design_matrices(basis_x, basis_x.kv.distinct())
    vy, _, _ = bs.design_matrices(basis_y, basis_y.kv.distinct())
    system = sp.kron(sp.csc_matrix(vx), sp.csc_matrix(vy), format="csc")
    return splu(system)


def interpolate(
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
    basis_x: bs.ModifiedBasis,
    basis_y: bs.ModifiedBasis,
) -> SplineSurface:
    """Surface matching f at every knot collocation point.

    ``f`` is called with broadcasting meshgrid arrays and must return
    finite values of the same shape.
    """
    xs = basis_x.kv.distinct()
    ys = basis_y.kv.distinct()
    values = np.asarray(f(xs[:, None], ys[None, :]), dtype=float)
    values = np.broadcast_to(values, (len(xs), len(ys)))
    if not np.all(np.isfinite(values)):
        raise ValueError("interpolation data contains non-finite values")
    lu = _interpolation_lu(basis_x, basis_y)
    coeffs = lu.solve(values.ravel()).reshape(len(xs), len(ys))
    return make_surface(basis_x, basis_y, coeffs)


def prolong(s: SplineSurface) -> SplineSurface:
    """The same function on once-refined knot vectors.

    The coarse space is a subspace of the refined one, so interpolating
    the surface at the fine knot points reproduces it exactly.
    """
    fine_x = bs.basis_from_knots(bs.refine(s.basis_x.kv))
    fine_y = bs.basis_from_knots(bs.refine(s.basis_y.kv))
    values = eval_grid(s, fine_x.kv.distinct(), fine_y.kv.distinct())["u"]
    lu = _interpolation_lu(fine_x, fine_y)
    coeffs = lu.solve(values.ravel()).reshape(fine_x.dim, fine_y.dim)
    return make_surface(fine_x, fine_y, coeffs)
