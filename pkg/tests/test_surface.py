"""Unit tests for tensor-product spline surfaces."""

import numpy as np
import pytest

from maspline import bspline as bs
from maspline import surface as sf


def unit_bases(n: int = 11) -> tuple[bs.ModifiedBasis, bs.ModifiedBasis]:
    return bs.make_basis(0.0, 1.0, n), bs.make_basis(0.0, 1.0, n)


def test_surface_shape_validation() -> None:
    bx, by = unit_bases()
    with pytest.raises(ValueError):
        sf.make_surface(bx, by, np.zeros((11, 10)))


def test_constant_surface_jets() -> None:
    bx, by = unit_bases()
    s = sf.constant_surface(bx, by, 3.5)
    u, grad, hess = sf.eval_surface(s, (0.37, 0.91))
    assert u == pytest.approx(3.5, abs=1e-13)
    np.testing.assert_allclose(grad, 0.0, atol=1e-11)
    np.testing.assert_allclose(hess, 0.0, atol=1e-9)


def test_paraboloid_hessian_is_identity_scaled() -> None:
    bx, by = unit_bases()
    s = sf.interpolate(lambda x, y: x**2 + y**2, bx, by)
    rng = np.random.default_rng(7)
    for _ in range(20):
        p = rng.uniform(0.0, 1.0, size=2)
        _, grad, hess = sf.eval_surface(s, p)
        np.testing.assert_allclose(grad, 2.0 * p, atol=1e-9)
        np.testing.assert_allclose(hess, 2.0 * np.eye(2), atol=1e-9)


def test_eval_surface_wants_and_bounds() -> None:
    bx, by = unit_bases()
    s = sf.constant_surface(bx, by, 1.0)
    u, grad, hess = sf.eval_surface(s, (0.5, 0.5), want={"value"})
    assert u == pytest.approx(1.0)
    assert grad is None and hess is None
    with pytest.raises(ValueError):
        sf.eval_surface(s, (1.5, 0.5))
    with pytest.raises(ValueError):
        sf.eval_points(s, np.array([0.5]), np.array([0.5]), want={"jerk"})


def test_hessian_symmetric_by_construction() -> None:
    bx, by = unit_bases(9)
    rng = np.random.default_rng(3)
    s = sf.make_surface(bx, by, rng.standard_normal((9, 9)))
    _, _, hess = sf.eval_surface(s, (0.3, 0.8))
    assert hess[0, 1] == hess[1, 0]


def test_gradient_hessian_match_finite_differences() -> None:
    bx, by = unit_bases()
    s = sf.interpolate(lambda x, y: np.exp(0.5 * (x**2 + y**2)), bx, by)
    eps = 1e-5
    p = np.array([0.4321, 0.6789])
    u0, grad, hess = sf.eval_surface(s, p)

    def val(q: np.ndarray) -> float:
        return sf.eval_surface(s, q, want={"value"})[0]

    fd_grad = np.array(
        [
            (val(p + [eps, 0]) - val(p - [eps, 0])) / (2 * eps),
            (val(p + [0, eps]) - val(p - [0, eps])) / (2 * eps),
        ]
    )
    np.testing.assert_allclose(grad, fd_grad, rtol=1e-5)
    fd_hess = np.array(
        [
            [
                (val(p + [eps, 0]) - 2 * u0 + val(p - [eps, 0])) / eps**2,
                (val(p + [eps, eps]) - val(p + [eps, -eps]) - val(p + [-eps, eps]) + val(p - [eps, eps])) / (4 * eps**2),
            ],
            [0.0, (val(p + [0, eps]) - 2 * u0 + val(p - [0, eps])) / eps**2],
        ]
    )
    fd_hess[1, 0] = fd_hess[0, 1]
    np.testing.assert_allclose(hess, fd_hess, rtol=1e-4)


def test_eval_points_matches_eval_grid() -> None:
    bx, by = unit_bases(9)
    rng = np.random.default_rng(11)
    s = sf.make_surface(bx, by, rng.standard_normal((9, 9)))
    x = rng.uniform(0.0, 1.0, 40)
    y = rng.uniform(0.0, 1.0, 40)
    scattered = sf.eval_points(s, x, y)
    for k, key in enumerate(["u", "ux", "uy", "uxx", "uxy", "uyy"]):
        grid = sf.eval_grid(s, x, y)[key]  # (40, 40); diagonal = scattered points
        np.testing.assert_allclose(scattered[key], np.diag(grid), atol=1e-10, err_msg=key)


# ---------------------------------------------------------------------------
# collocation grid


def test_collocation_grid_counts_and_normals() -> None:
    bx, by = bs.make_basis(0.0, 1.0, 9), bs.make_basis(0.0, 1.0, 9)
    grid = sf.collocation_points(bx, by)
    assert grid.size == 81 == bx.dim * by.dim
    assert len(grid.interior) == 49
    assert len(grid.boundary) == 32

    np.testing.assert_allclose(np.linalg.norm(grid.normals, axis=1), 1.0, atol=1e-15)
    corners = {(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)}
    seen = {}
    for point, normal in zip(grid.boundary, grid.normals):
        key = (point[0], point[1])
        if key in corners:
            assert key not in seen
            seen[key] = normal
    assert set(seen) == corners
    r = 1.0 / np.sqrt(2.0)
    np.testing.assert_allclose(seen[(0.0, 0.0)], [-r, -r])
    np.testing.assert_allclose(seen[(1.0, 1.0)], [r, r])
    np.testing.assert_allclose(seen[(0.0, 1.0)], [-r, r])
    np.testing.assert_allclose(seen[(1.0, 0.0)], [r, -r])

    # edge points carry axis normals
    for point, normal in zip(grid.boundary, grid.normals):
        if (point[0], point[1]) in corners:
            continue
        assert sorted(np.abs(normal)) == pytest.approx([0.0, 1.0])


def test_collocation_points_are_knots() -> None:
    bx = bs.make_basis(0.0, 1.0, 9)
    by = bs.make_basis(2.0, 3.0, 10)
    grid = sf.collocation_points(bx, by)
    all_points = np.vstack([grid.interior, grid.boundary])
    assert set(np.round(all_points[:, 0], 12)) <= set(np.round(bx.kv.distinct(), 12))
    assert set(np.round(all_points[:, 1], 12)) <= set(np.round(by.kv.distinct(), 12))
    assert grid.size == 90


# ---------------------------------------------------------------------------
# interpolation and prolongation


def test_interpolate_reproduces_tensor_cubic() -> None:
    bx, by = unit_bases()
    s = sf.interpolate(lambda x, y: x**3 * y**3, bx, by)
    rng = np.random.default_rng(5)
    x, y = rng.uniform(0.0, 1.0, (2, 200))
    np.testing.assert_allclose(sf.eval_points(s, x, y, {"value"})["u"], x**3 * y**3, atol=1e-10)


def test_interpolation_conditions_hold_at_knots() -> None:
    bx, by = unit_bases(31)

    def f(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.exp(0.5 * (x**2 + y**2))

    s = sf.interpolate(f, bx, by)
    xs, ys = bx.kv.distinct(), by.kv.distinct()
    values = sf.eval_grid(s, xs, ys)["u"]
    np.testing.assert_allclose(values, f(xs[:, None], ys[None, :]), atol=1e-12)
    # fourth-order accuracy away from the knots for a smooth function
    u_mid, _, _ = sf.eval_surface(s, (0.5, 0.5), want={"value"})
    assert abs(u_mid - np.exp(0.25)) < (bx.kv.h) ** 4


def test_interpolate_cone_error_is_first_order_at_kink() -> None:
    def cone(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.hypot(x - 0.5, y - 0.5)

    errors = []
    for n in (17, 33):
        bx, by = unit_bases(n)
        s = sf.interpolate(cone, bx, by)
        t = np.linspace(0.47, 0.53, 41)
        err = np.abs(sf.eval_points(s, t, t, {"value"})["u"] - cone(t, t)).max()
        errors.append(err)
    assert errors[1] < errors[0]
    assert errors[1] > errors[0] / 8.0  # first order near the kink, not third


def test_interpolate_rejects_non_finite() -> None:
    bx, by = unit_bases(8)
    with pytest.raises(ValueError):
        sf.interpolate(lambda x, y: np.where(x > 0.5, np.nan, 1.0), bx, by)


def test_interpolate_is_projection() -> None:
    bx, by = unit_bases(9)
    rng = np.random.default_rng(17)
    s = sf.make_surface(bx, by, rng.standard_normal((9, 9)))
    again = sf.interpolate(lambda x, y: sf.eval_grid(s, x.ravel(), y.ravel())["u"], bx, by)
    np.testing.assert_allclose(again.coeffs, s.coeffs, atol=1e-10)


def test_prolong_preserves_evaluation() -> None:
    bx, by = unit_bases(11)
    rng = np.random.default_rng(23)
    s = sf.make_surface(bx, by, rng.standard_normal((11, 11)))
    fine = sf.prolong(s)
    assert fine.basis_x.dim == 21
    x, y = rng.uniform(0.0, 1.0, (2, 10_000))
    np.testing.assert_allclose(
        sf.eval_points(fine, x, y, {"value"})["u"],
        sf.eval_points(s, x, y, {"value"})["u"],
        atol=1e-12,
    )


def test_surface_integral_exact_for_cubics() -> None:
    bx, by = unit_bases(9)
    s = sf.interpolate(lambda x, y: x**3 * y**3, bx, by)
    assert sf.surface_integral(s) == pytest.approx(1.0 / 16.0, abs=1e-12)
