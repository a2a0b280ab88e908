"""One-dimensional clamped cubic B-splines with a boundary-modified basis.

Spline spaces on an interval [a, b] built from four-fold end knots and
equidistant interior knots.  A grid of ``n`` distinct knots carries
``n + 2`` raw cubic B-splines; mixing the five outermost raw splines at
each end into four new functions (the fixed matrix ``A_BOUNDARY``)
lowers the dimension to exactly ``n``, so collocation at the knots gives
a square system.  The mixed basis keeps full cubic reproduction and has
a convenient boundary structure: at each endpoint exactly one basis
function has a nonzero value, exactly one a nonzero first derivative,
and exactly one a nonzero second derivative.

Evaluation is right-continuous at interior knots; at ``x = b`` the left
limit is taken, so collocation at knot points is well defined.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORDER = 4  # cubic splines: lowest order that is C^2 across simple knots

# Boundary mixing matrix: row i holds the weights of the i-th mixed
# function on the five outermost raw B-splines.  Knot-independent, hence
# the mixed functions are shift invariant.  The same matrix serves both
# ends (mirrored on the right).
#
# The rows span the head coefficients of {1, x, x^2, x^3}, i.e. the row
# space is the orthogonal complement of (6, -12, 9, -4, 1) -- the vector
# of third-derivative jumps of the five outer raw splines at the first
# interior knot.  Mixed splines therefore have no third-derivative jump
# there (a not-a-knot end), which makes the space reproduce cubics
# exactly and makes coarse spaces subspaces of midpoint-refined ones.
A_BOUNDARY = np.array(
    [
        [1.0, 1.0, 1.0, 3.0 / 4.0, 0.0],
        [0.0, 1.0 / 4.0, 3.0 / 4.0, 15.0 / 16.0, 0.0],
        [0.0, 0.0, 1.0 / 3.0, 3.0 / 4.0, 0.0],
        [0.0, 0.0, 0.0, 1.0 / 4.0, 1.0],
    ]
)


@dataclass(frozen=True)
class KnotVector:
    """Clamped equidistant knot sequence on [a, b].

    ``n`` is the number of distinct knots (equally the number of
    collocation points per direction and the dimension of the modified
    basis).  The full sequence has ``n + 6`` entries: four-fold knots at
    ``a`` and ``b`` with ``n - 2`` equidistant interior knots between
    them, spacing ``h = (b - a)/(n - 1)``.
    """

    a: float
    b: float
    n: int
    knots: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return (self.b - self.a) / (self.n - 1)

    @property
    def raw_dim(self) -> int:
        return self.n + 2

    def distinct(self) -> np.ndarray:
        """The n distinct knot values, ascending."""
        return self.knots[3 : self.n + 3]


def make_knots(a: float, b: float, n: int) -> KnotVector:
    if not b > a:
        raise ValueError(f"empty interval: a={a}, b={b}")
    if n < 8:
        raise ValueError(f"n must be at least 8 so the mixed end blocks do not overlap, got {n}")
    grid = np.linspace(a, b, n)
    knots = np.concatenate([[a] * 3, grid, [b] * 3])
    knots.flags.writeable = False
    return KnotVector(a=float(a), b=float(b), n=int(n), knots=knots)


def refine(kv: KnotVector) -> KnotVector:
    """Knot vector with halved interior spacing (2n - 1 distinct knots).

    Every old knot is kept, so the spline spaces are nested and any
    spline on ``kv`` is exactly representable on the refined vector.
    """
    return make_knots(kv.a, kv.b, 2 * kv.n - 1)


def _find_spans(kv: KnotVector, x: np.ndarray) -> np.ndarray:
    """Span index k with t[k] <= x < t[k+1], clamped so x=b uses the last span."""
    spans = np.searchsorted(kv.knots, x, side="right") - 1
    return np.clip(spans, 3, kv.n + 1)


def local_tables(kv: KnotVector, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Nonzero raw B-spline values and derivatives at each point.

    Returns (spans, b0, b1, b2); row p of b0/b1/b2 holds value, first and
    second derivative of the four raw splines with indices
    spans[p]-3 .. spans[p] at x[p].
    """
    t = kv.knots
    x = np.asarray(x, dtype=float)
    spans = _find_spans(kv, x)
    npts = x.shape[0]

    # triangular recurrence for the nonzero basis values, orders 1..4
    vals = np.zeros((npts, ORDER))
    vals[:, 0] = 1.0
    left = np.zeros((npts, ORDER))
    right = np.zeros((npts, ORDER))
    order2 = np.zeros((npts, 2))
    order3 = np.zeros((npts, 3))
    for j in range(1, ORDER):
        left[:, j] = x - t[spans + 1 - j]
        right[:, j] = t[spans + j] - x
        saved = np.zeros(npts)
        for r in range(j):
            den = right[:, r + 1] + left[:, j - r]
            temp = vals[:, r] / den
            vals[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        vals[:, j] = saved
        if j == 1:
            order2[:] = vals[:, :2]
        elif j == 2:
            order3[:] = vals[:, :3]

    def safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
        out = np.zeros_like(num)
        np.divide(num, den, out=out, where=den != 0.0)
        return out

    # first derivative from order-3, second from order-2 values; terms with
    # a zero knot span carry a zero basis value and are dropped
    i = spans[:, None] + np.arange(-3, 1)[None, :]  # raw indices, (npts, 4)
    o3 = np.zeros((npts, 5))  # order-3 values for indices spans-3 .. spans+1
    o3[:, 1:4] = order3
    o2 = np.zeros((npts, 6))  # order-2 values for indices spans-3 .. spans+2
    o2[:, 2:4] = order2

    d3 = t[i + 3] - t[i]  # t[i+3]-t[i] for i = spans-3 .. spans
    d3r = t[i + 4] - t[i + 1]
    b1 = 3.0 * (safe_div(o3[:, 0:4], d3) - safe_div(o3[:, 1:5], d3r))

    def d1_order3(col0: int) -> np.ndarray:
        # derivative of order-3 splines with indices spans-3+col0 .. spans+col0
        ii = i + col0
        return 2.0 * (safe_div(o2[:, col0 : col0 + 4], t[ii + 2] - t[ii]) - safe_div(o2[:, col0 + 1 : col0 + 5], t[ii + 3] - t[ii + 1]))

    b2 = 3.0 * (safe_div(d1_order3(0), d3) - safe_div(d1_order3(1), d3r))
    return spans, vals, b1, b2


def raw_design(kv: KnotVector, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dense design matrices of the raw basis at the points x.

    Returns (V, D1, D2), each of shape (len(x), raw_dim), with
    V[p, j] = N_j(x[p]) and so on for the derivatives.
    """
    x = np.asarray(x, dtype=float)
    spans, b0, b1, b2 = local_tables(kv, x)
    cols = spans[:, None] + np.arange(-3, 1)[None, :]
    rows = np.repeat(np.arange(x.shape[0])[:, None], ORDER, axis=1)
    out = []
    for tab in (b0, b1, b2):
        m = np.zeros((x.shape[0], kv.raw_dim))
        m[rows, cols] = tab
        out.append(m)
    return out[0], out[1], out[2]


def eval_raw_bspline(kv: KnotVector, i: int, x: float, deriv: int = 0) -> float:
    """Value or derivative of the i-th raw B-spline (0-based, i < n + 2)."""
    if not 0 <= i < kv.raw_dim:
        raise IndexError(f"raw index {i} out of range [0, {kv.raw_dim})")
    if deriv not in (0, 1, 2):
        raise ValueError(f"derivative order must be 0, 1 or 2, got {deriv}")
    if not kv.a <= x <= kv.b:
        raise ValueError(f"x={x} outside [{kv.a}, {kv.b}]")
    spans, b0, b1, b2 = local_tables(kv, np.array([float(x)]))
    loc = i - (int(spans[0]) - 3)
    if not 0 <= loc < ORDER:
        return 0.0
    return float((b0, b1, b2)[deriv][0, loc])


def _mix_matrix(n: int) -> np.ndarray:
    """Row i = weights of mixed function i on the raw basis."""
    raw = n + 2
    m = np.zeros((n, raw))
    m[0:4, 0:5] = A_BOUNDARY
    for i in range(4, n - 4):
        m[i, i + 1] = 1.0
    for i in range(4):
        for j in range(5):
            m[n - 1 - i, raw - 1 - j] = A_BOUNDARY[i, j]
    return m


@dataclass(frozen=True)
class ModifiedBasis:
    """The n-dimensional mixed basis over a knot vector."""

    kv: KnotVector
    mix: np.ndarray = field(repr=False)  # (dim, raw_dim) raw-expansion weights

    @property
    def dim(self) -> int:
        return self.kv.n

    @property
    def a(self) -> float:
        return self.kv.a

    @property
    def b(self) -> float:
        return self.kv.b


def make_basis(a: float, b: float, n: int) -> ModifiedBasis:
    kv = make_knots(a, b, n)
    return basis_from_knots(kv)


def basis_from_knots(kv: KnotVector) -> ModifiedBasis:
    mix = _mix_matrix(kv.n)
    mix.flags.writeable = False
    return ModifiedBasis(kv=kv, mix=mix)


def design_matrices(basis: ModifiedBasis, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dense (len(x), dim) value/derivative matrices of the mixed basis."""
    v, d1, d2 = raw_design(basis.kv, x)
    mt = basis.mix.T
    return v @ mt, d1 @ mt, d2 @ mt


def eval_modified(basis: ModifiedBasis, i: int, x: float, deriv: int = 0) -> float:
    """Value or derivative of the i-th mixed basis function (0-based, i < dim)."""
    if not 0 <= i < basis.dim:
        raise IndexError(f"basis index {i} out of range [0, {basis.dim})")
    if deriv not in (0, 1, 2):
        raise ValueError(f"derivative order must be 0, 1 or 2, got {deriv}")
    kv = basis.kv
    spans, b0, b1, b2 = local_tables(kv, np.array([float(x)]))
    tab = (b0, b1, b2)[deriv][0]
    cols = int(spans[0]) + np.arange(-3, 1)
    return float(np.dot(basis.mix[i, cols], tab))


def monomial_coeffs(basis: ModifiedBasis, m: int) -> np.ndarray:
    """Coefficients c with sum_i c[i] B_i(x) = x^m exactly, for m = 0..3.

    The raw-basis coefficients of x^m are the normalized elementary
    symmetric means of each spline's three inner knots (Marsden's
    identity); the boundary blocks then solve the overdetermined but
    consistent 5x4 mixing systems.
    """
    if m not in (0, 1, 2, 3):
        raise ValueError(f"monomial degree must be 0..3, got {m}")
    t = basis.kv.knots
    raw = basis.kv.raw_dim
    j = np.arange(raw)
    t1, t2, t3 = t[j + 1], t[j + 2], t[j + 3]
    if m == 0:
        b = np.ones(raw)
    elif m == 1:
        b = (t1 + t2 + t3) / 3.0
    elif m == 2:
        b = (t1 * t2 + t1 * t3 + t2 * t3) / 3.0
    else:
        b = t1 * t2 * t3

    dim = basis.dim
    c = np.zeros(dim)
    c[4 : dim - 4] = b[5 : raw - 5]
    c[0:4] = np.linalg.lstsq(A_BOUNDARY.T, b[0:5], rcond=None)[0]
    c[dim - 1 - np.arange(4)] = np.linalg.lstsq(A_BOUNDARY.T, b[raw - 1 - np.arange(5)], rcond=None)[0]
    return c


def basis_integrals(basis: ModifiedBasis) -> np.ndarray:
    """Integrals of the mixed basis functions over [a, b].

    Each raw cubic B-spline integrates to a quarter of its support
    length; the mixed values follow from the raw expansion.
    """
    t = basis.kv.knots
    j = np.arange(basis.kv.raw_dim)
    raw_ints = (t[j + 4] - t[j]) / 4.0
    return basis.mix @ raw_ints
