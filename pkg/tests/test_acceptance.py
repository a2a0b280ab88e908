"""Acceptance suite: one test per headline requirement of the package.

Run with ``pytest -v tests/test_acceptance.py`` — the verbose listing
gives exactly one pass/fail line per criterion.  The expensive solves
are shared through module-scoped fixtures; the whole suite is designed
for a single desktop core (the C1 and Lipschitz-cone sweeps dominate,
about half an hour total, every other criterion finishes in minutes).

Reference error levels for the standard problems are frozen here from
the published results this implementation reproduces; the tolerances
(factor 2 or 3) absorb iteration-path and architecture differences.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np
import pytest

from maspline import benchmarks as bm
from maspline import bspline as bs
from maspline import cli
from maspline import collocation as co
from maspline import image as im
from maspline import raytrace as rt
from maspline import reflector as rf
from maspline import surface as sf

TABLE_N = [31, 45, 63, 89, 127, 181, 255, 361]

REFERENCE_ERROR = {
    1: {31: 9.60e-5, 45: 4.53e-5, 63: 2.29e-5, 89: 1.14e-5, 127: 5.58e-6, 181: 2.74e-6, 255: 1.37e-6, 361: 6.84e-7},
    2: {31: 1.18e-4, 45: 7.90e-5, 63: 4.40e-5, 89: 2.86e-5, 127: 2.37e-5, 181: 1.58e-5, 255: 1.01e-5, 361: 7.27e-6},
    3: {31: 3.76e-3, 361: 1.18e-3},
}

# stagnation plateau of this implementation on the Lipschitz cone,
# recorded once as a regression reference (criterion 4 itself only
# requires the error to stay above 1e-3)
STAGNATION_LEVEL = {89: 3.28e-2, 127: 3.32e-2, 181: 3.32e-2, 255: 3.32e-2, 361: 3.32e-2}


# ---------------------------------------------------------------------------
# shared runs


@dataclass
class Sweep:
    rows: list
    reports: list
    final_surface: sf.SplineSurface


def _sweep(bench_id: int, n_list: list[int]) -> Sweep:
    rows, reports_all, last = [], [], None
    for n in n_list:
        start = time.perf_counter()
        solution, reports = bm.solve_benchmark(bench_id, n)
        seconds = time.perf_counter() - start
        _, fields = bm.make_benchmark(bench_id, n)
        error = bm.max_knot_error(solution, fields) if fields.exact_solution else float("nan")
        rows.append(bm.TableRow(n=n, max_error=error, seconds=seconds, stop_reason=reports[-1].stop_reason))
        reports_all.extend(reports)
        last = solution
    return Sweep(rows=rows, reports=reports_all, final_surface=last)


@pytest.fixture(scope="module")
def sweep_smooth():
    # 255 and 361 are not needed for the accuracy criterion; they anchor
    # the runtime-scaling fit where solver cost dominates overhead
    return _sweep(1, [31, 63, 127, 255, 361])


@pytest.fixture(scope="module")
def sweep_c1():
    return _sweep(2, TABLE_N)


@pytest.fixture(scope="module")
def sweep_blowup():
    return _sweep(3, [31, 361])


@pytest.fixture(scope="module")
def sweep_lipschitz():
    return _sweep(4, [89, 127, 181, 255, 361])


@pytest.fixture(scope="module")
def flat_density_solution():
    solution, reports = bm.solve_benchmark(5, 181)
    return solution, reports


def _blob_image() -> im.IrradianceImage:
    """64x64 high-contrast target: two bright spots on a dim floor."""
    base = im.constant_image(64, 64, rf.SIGMA_RECT_DEFAULT)
    xs, ys = im.pixel_centers(base)
    px, py = np.meshgrid(xs, ys)
    blobs = np.exp(-((px + 0.7) ** 2 + (py - 1.8) ** 2) / (2.0 * 0.45**2)) + np.exp(
        -((px - 0.7) ** 2 + (py - 3.1) ** 2) / (2.0 * 0.6**2)
    )
    return im.with_values(base, 20.0 + 215.0 * np.minimum(blobs, 1.0))


@dataclass
class ReflectorRun:
    setup: rf.ReflectorSetup
    surface: sf.SplineSurface
    report: rt.ValidationReport
    seconds: float


def _design_and_trace(target: im.IrradianceImage, n_target: int) -> ReflectorRun:
    start = time.perf_counter()
    setup = rf.ReflectorSetup(target=target)
    initial, _ = rf.universal_initial(setup)
    surface, _ = rf.solve_reflector(setup, initial, n_target)
    report = rt.trace(surface, setup, ray_count=10**7, rng_seed=0)
    return ReflectorRun(setup=setup, surface=surface, report=report, seconds=time.perf_counter() - start)


@pytest.fixture(scope="module")
def uniform_reflector():
    return _design_and_trace(im.constant_image(64, 64, rf.SIGMA_RECT_DEFAULT), n_target=81)


@pytest.fixture(scope="module")
def image_reflector():
    return _design_and_trace(_blob_image(), n_target=161)


# ---------------------------------------------------------------------------
# criteria


def test_criterion_1_smooth_problem_accuracy_and_runtime(sweep_smooth):
    rows = {row.n: row for row in sweep_smooth.rows}
    for n in (31, 63, 127):
        row = rows[n]
        reference = REFERENCE_ERROR[1][n]
        assert row.clean, f"N={n} stopped with {row.stop_reason}"
        assert reference / 2.0 <= row.max_error <= reference * 2.0, (
            f"N={n}: error {row.max_error:.3e} outside factor 2 of {reference:.2e}"
        )
        assert row.seconds <= 60.0, f"N={n} took {row.seconds:.1f} s"
    unknowns = np.array([n**2 for n in (31, 63, 127)], dtype=float)
    errors = np.array([rows[n].max_error for n in (31, 63, 127)])
    slope = np.polyfit(np.log(unknowns), np.log(errors), 1)[0]
    assert -1.2 <= slope <= -0.85, f"error slope vs unknowns {slope:.3f}"


def test_criterion_2_c1_problem_accuracy_and_monotone_decrease(sweep_c1):
    errors = []
    for row in sweep_c1.rows:
        reference = REFERENCE_ERROR[2][row.n]
        assert row.clean, f"N={row.n} stopped with {row.stop_reason}"
        assert reference / 3.0 <= row.max_error <= reference * 3.0, (
            f"N={row.n}: error {row.max_error:.3e} outside factor 3 of {reference:.2e}"
        )
        errors.append(row.max_error)
    assert all(late < early for early, late in zip(errors, errors[1:])), f"not monotone: {errors}"


def test_criterion_3_blowup_problem_convergence_ratio(sweep_blowup):
    rows = {row.n: row for row in sweep_blowup.rows}
    assert rows[31].clean and rows[361].clean
    ratio = rows[31].max_error / rows[361].max_error
    reference_ratio = REFERENCE_ERROR[3][31] / REFERENCE_ERROR[3][361]
    assert reference_ratio / 2.0 <= ratio <= reference_ratio * 2.0, (
        f"error ratio N=31/N=361 is {ratio:.2f}, reference {reference_ratio:.2f}"
    )


def test_criterion_4_lipschitz_problem_stagnation(sweep_lipschitz):
    for row in sweep_lipschitz.rows:
        assert row.clean, f"N={row.n} stopped with {row.stop_reason}"
        assert row.max_error >= 1e-3, f"N={row.n}: error {row.max_error:.3e} dropped below 1e-3"
        level = STAGNATION_LEVEL[row.n]
        assert level / 1.5 <= row.max_error <= level * 1.5, (
            f"N={row.n}: plateau {row.max_error:.3e} drifted from recorded {level:.2e}"
        )


def test_criterion_5_flat_density_shape(flat_density_solution, tmp_path):
    solution, _ = flat_density_solution

    knots = solution.basis_x.kv.distinct()
    interior = knots[1:-1]
    jets = sf.eval_grid(solution, interior, interior)
    determinant = jets["uxx"] * jets["uyy"] - jets["uxy"] ** 2
    assert np.all(jets["uxx"] > 0.0) and np.all(determinant > 0.0), "Hessian not positive definite"

    axis, diagonal = bm.cross_sections(solution)
    for name, curve in (("axis", axis), ("diagonal", diagonal)):
        asymmetry = np.max(np.abs(curve[:, 1] - curve[::-1, 1]))
        assert asymmetry <= 1e-8, f"{name} cross-section asymmetry {asymmetry:.2e}"

    center = sf.eval_points(solution, np.array([0.5]), np.array([0.5]), {"value"})["u"][0]
    assert center < np.min(jets["u"][0, :]) and center < axis[0, 1], "center is not the minimum"
    assert center == pytest.approx(np.min(jets["u"]), abs=1e-12)

    cli._write_curve(tmp_path / "benchmark5_axis.csv", axis)
    cli._write_curve(tmp_path / "benchmark5_diagonal.csv", diagonal)
    assert (tmp_path / "benchmark5_axis.csv").exists() and (tmp_path / "benchmark5_diagonal.csv").exists()


def test_criterion_6_runtime_scaling(sweep_smooth):
    # fit over the sizes where solver cost dominates fixed overhead
    # (the N=31 run finishes in under 0.1 s)
    rows = {row.n: row for row in sweep_smooth.rows}
    ns = np.array([63, 127, 255, 361], dtype=float)
    seconds = np.array([rows[int(n)].seconds for n in ns])
    slope = np.polyfit(np.log(ns), np.log(seconds), 1)[0]
    assert 2.3 <= slope <= 3.7, f"time slope {slope:.2f} with samples {dict(zip(ns, seconds))}"


def test_criterion_7_property_suites(sweep_smooth, sweep_c1, sweep_blowup, sweep_lipschitz, flat_density_solution):
    rng = np.random.default_rng(7)

    # partition of unity of the raw B-spline basis
    kv = bs.make_knots(0.0, 1.0, 23)
    x = rng.uniform(0.0, 1.0, 501)
    values, _, _ = bs.raw_design(kv, x)
    assert np.max(np.abs(values.sum(axis=1) - 1.0)) <= 1e-12

    # cubic reproduction by tensor interpolation
    basis = bs.make_basis(0.0, 1.0, 11)
    cubic = lambda x, y: (x - 0.3) ** 3 + (y + 0.1) ** 3 - 3.0 * x * y + 2.0 * x * x * y - 0.7
    interpolant = sf.interpolate(cubic, basis, basis)
    dense = np.linspace(0.0, 1.0, 101)
    gap = sf.eval_grid(interpolant, dense, dense)["u"] - cubic(dense[:, None], dense[None, :])
    assert np.max(np.abs(gap)) <= 1e-10

    # nested prolongation is exact
    coarse = sf.make_surface(basis, basis, rng.standard_normal((11, 11)))
    fine = sf.prolong(coarse)
    xs, ys = rng.uniform(0.0, 1.0, (2, 400))
    coarse_values = sf.eval_points(coarse, xs, ys, {"value"})["u"]
    fine_values = sf.eval_points(fine, xs, ys, {"value"})["u"]
    assert np.max(np.abs(coarse_values - fine_values)) <= 1e-12

    # boundary structure: exactly one basis function carries the value,
    # the slope, and the curvature at each endpoint
    end_basis = bs.make_basis(-0.25, 0.25, 13)
    jets = bs.design_matrices(end_basis, np.array([end_basis.a, end_basis.b]))
    dim = end_basis.dim
    for end, expected in ((0, (0, 1, 2)), (1, (dim - 1, dim - 2, dim - 3))):
        for matrix, index in zip(jets, expected):
            nonzero = np.flatnonzero(np.abs(matrix[end]) > 1e-12)
            assert list(nonzero) == [index]

    # the penalized determinant equals the plain determinant on SPD input
    low = rng.standard_normal((500, 2, 2))
    spd = low @ np.swapaxes(low, 1, 2) + 1e-3 * np.eye(2)
    w = bm.SymMat2(spd[:, 0, 0], spd[:, 0, 1], spd[:, 1, 1])
    plain = spd[:, 0, 0] * spd[:, 1, 1] - spd[:, 0, 1] ** 2
    assert np.array_equal(bm.det_plus_lambda(w, 1e3), plain)

    # analytic Jacobians match central differences at N=11
    problem1, fields1 = bm.make_benchmark(1, 11)
    surface1 = bm.poisson_initial_guess(fields1, 11)
    grid1 = sf.collocation_points(surface1.basis_x, surface1.basis_y)
    analytic = co.assemble_jacobian(problem1, surface1, grid1).toarray()
    numeric = co.fd_jacobian(problem1, surface1, grid1)
    assert np.max(np.abs(analytic - numeric)) <= 1e-5 * np.max(np.abs(numeric))

    setup = rf.ReflectorSetup(target=im.constant_image(32, 32, rf.SIGMA_RECT_DEFAULT))
    cap = setup.size_G / setup.omega_area
    basis_r = bs.make_basis(-0.25, 0.25, 11)
    surface_r = sf.interpolate(lambda x, y: cap * (1.0 + 0.05 * np.sin(2.0 * x + 1.0) + 0.04 * y), basis_r, basis_r)
    grid_r = sf.collocation_points(basis_r, basis_r)
    phi = rf.boundary_phi_update(setup, surface_r, grid_r)
    problem_r = rf.make_reflector_problem(setup, rf.prepare_target(setup, setup.target), grid_r, phi)
    analytic_r = co.assemble_jacobian(problem_r, surface_r, grid_r, aux=0.05).toarray()
    numeric_r = co.fd_jacobian(problem_r, surface_r, grid_r, aux=0.05)
    assert np.max(np.abs(analytic_r - numeric_r)) <= 1e-5 * np.max(np.abs(numeric_r))

    # trust-region steps never increase the merit on any benchmark run
    all_reports = (
        sweep_smooth.reports
        + sweep_c1.reports
        + sweep_blowup.reports
        + sweep_lipschitz.reports
        + flat_density_solution[1]
    )
    assert len(all_reports) >= 20
    for report in all_reports:
        merits = np.asarray(report.merit_history)
        assert np.all(np.diff(merits) <= 0.0), "merit increased along accepted steps"


def test_criterion_8_reflector_end_to_end(uniform_reflector, image_reflector):
    # (a) uniform target: flat illumination to a few percent
    rendered = uniform_reflector.report.rendered.values
    coefficient_of_variation = float(np.std(rendered) / np.mean(rendered))
    assert coefficient_of_variation <= 0.1, f"CoV {coefficient_of_variation:.4f}"

    # (b) high-contrast image target: rendered illumination matches it
    assert image_reflector.report.relative_l1 <= 0.2, f"rel L1 {image_reflector.report.relative_l1:.4f}"
    assert image_reflector.report.normalized_cross_correlation >= 0.85, (
        f"NCC {image_reflector.report.normalized_cross_correlation:.4f}"
    )

    # (c) the integral constraint holds on both designs
    for run in (uniform_reflector, image_reflector):
        integral = sf.surface_integral(run.surface)
        assert integral == pytest.approx(0.417674, abs=1e-6), f"integral {integral!r}"

    # (d) the analytic target map and the traced rays agree
    run = image_reflector
    x0, x1, y0, y1 = run.setup.omega_rect
    side = np.linspace(x0 + 1e-3, x1 - 1e-3, 100)
    gx, gy = np.meshgrid(side, side)
    xs, ys = gx.ravel(), gy.ravel()
    jets = sf.eval_points(run.surface, xs, ys, {"value", "gradient"})
    jet = rf.reflector_jet(run.setup, xs, ys, jets["u"], jets["ux"], jets["uy"])
    hits, valid = rt.hit_points(run.surface, run.setup.z_plane, xs, ys)
    assert np.all(valid)
    gap = np.max(np.abs(hits - jet.Z[:, :2]))
    assert gap <= 1e-6, f"map vs ray gap {gap:.2e} over {xs.size} points"

    # (e) rays stay on the target, (runtime) both pipelines fit the budget
    for run in (uniform_reflector, image_reflector):
        assert run.report.miss_fraction <= 0.02, f"miss fraction {run.report.miss_fraction:.4f}"
    total_seconds = uniform_reflector.seconds + image_reflector.seconds
    assert total_seconds <= 1800.0, f"reflector pipelines took {total_seconds:.0f} s"


def test_criterion_9_determinism(tmp_path):
    def run(args_, out):
        out.mkdir(parents=True, exist_ok=True)
        assert cli.main(args_ + ["--out", str(out)]) == 0
        return out

    first = run(["reflector", "--schedule", "11:19"], tmp_path / "r1")
    second = run(["reflector", "--schedule", "11:19"], tmp_path / "r2")
    surface = str(first / "reflector_surface.csv")
    for name in ("reflector_surface.csv", "reflector_highpass.pgm"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name

    trace_args = ["raytrace", surface, "--rays", "200000", "--seed", "11"]
    t1 = run(list(trace_args), tmp_path / "t1")
    t2 = run(list(trace_args), tmp_path / "t2")
    for name in ("raytrace_rendered.pgm", "raytrace_report.txt"):
        assert (t1 / name).read_bytes() == (t2 / name).read_bytes(), name

    s1 = run(["cross-section", surface], tmp_path / "s1")
    s2 = run(["cross-section", surface], tmp_path / "s2")
    for name in ("cross_section_axis.csv", "cross_section_diagonal.csv"):
        assert (s1 / name).read_bytes() == (s2 / name).read_bytes(), name

    # benchmark tables carry a wall-clock column; everything else in
    # them must agree byte for byte
    b1 = run(["benchmark", "1", "--N", "11"], tmp_path / "b1")
    b2 = run(["benchmark", "1", "--N", "11"], tmp_path / "b2")

    def stripped(path):
        lines = (path / "benchmark1_table.csv").read_text().splitlines()
        return [",".join(line.split(",")[:2]) for line in lines]

    assert stripped(b1) == stripped(b2)
