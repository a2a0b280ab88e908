"""Command-line front end: benchmark tables, reflector design runs,
forward ray-trace validation, and saved-surface cross-sections.

Every command writes plain-text artifacts (CSV tables, ``key = value``
manifests) and PGM images into ``--out``.  All output bytes are a
deterministic function of the recorded configuration — no timestamps,
no machine state — with one exception: the ``seconds`` column of
benchmark tables reports measured wall time.

Exit codes: 0 — every requested solve stopped at a stopping criterion
and every artifact was written; 1 — an input file was missing or
malformed, a configuration was inadmissible, or a solve aborted;
2 — command-line or configuration syntax errors.
"""

from __future__ import annotations

import argparse
import hashlib
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import benchmarks as bm
from . import bspline as bs
from . import collocation as co
from . import image as im
from . import raytrace as rt
from . import reflector as rf
from . import surface as sf


class UsageError(Exception):
    """Bad flag or configuration input; maps to exit code 2."""


# ---------------------------------------------------------------------------
# configuration files: flat "key = value" lines, typed, unknown keys rejected


def _parse_rect(text: str) -> tuple[float, float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 4:
        raise ValueError(f"expected x0,x1,y0,y1 — got {len(parts)} values")
    return tuple(parts)


def _parse_schedule(text: str) -> tuple[tuple[int, int], ...]:
    pairs = []
    for item in text.split(","):
        n_text, sep, m_text = item.partition(":")
        if sep != ":":
            raise ValueError(f"expected grid:mollifier pairs, got {item!r}")
        pairs.append((int(n_text), int(m_text)))
    return tuple(pairs)


CONFIG_PARSERS = {
    "omega_rect": _parse_rect,
    "sigma_rect": _parse_rect,
    "z_plane": float,
    "size_g": float,
    "gray_lift": float,
    "lam": float,
    "n": int,
    "rays": int,
    "seed": int,
    "schedule": _parse_schedule,
    "cutoff": int,
}

DEFAULTS = {
    "omega_rect": rf.OMEGA_RECT_DEFAULT,
    "sigma_rect": rf.SIGMA_RECT_DEFAULT,
    "z_plane": rf.Z_PLANE_DEFAULT,
    "size_g": rf.SIZE_G_DEFAULT,
    "gray_lift": float(rf.GRAY_LIFT_DEFAULT),
    "lam": bm.LAMBDA_DEFAULT,
    "n": None,  # None means the largest grid in the schedule
    "rays": 1_000_000,
    "seed": 0,
    "schedule": rf.DEFAULT_SCHEDULE,
    "cutoff": 31,
}


def read_config(path: str | Path) -> dict:
    """Parse a configuration file, rejecting unknown or repeated keys."""
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if sep != "=":
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = key.strip(), value.strip()
        if key not in CONFIG_PARSERS:
            raise UsageError(f"{path}:{lineno}: unknown configuration key {key!r}")
        if key in values:
            raise UsageError(f"{path}:{lineno}: duplicate configuration key {key!r}")
        try:
            values[key] = CONFIG_PARSERS[key](value)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: invalid value for {key!r}: {exc}") from exc
    return values


def resolve_settings(config_path: str | None, **overrides) -> dict:
    """Defaults, overlaid by the configuration file, overlaid by flags."""
    merged = dict(DEFAULTS)
    if config_path is not None:
        merged.update(read_config(config_path))
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return merged


def _format_setting(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple) and value and isinstance(value[0], tuple):
        return ",".join(f"{n}:{m}" for n, m in value)
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_manifest(out_dir: Path, name: str, resolved: dict, seed: int | None) -> None:
    """Record everything needed to reproduce the run's output bytes."""
    body = [f"{key} = {_format_setting(value)}" for key, value in sorted(resolved.items())]
    digest = hashlib.sha256(("\n".join(body) + "\n").encode()).hexdigest()
    lines = [
        f"command = {name}",
        f"seed = {_format_setting(seed)}",
        f"config_sha256 = {digest}",
        f"maspline = {__version__}",
        f"python = {platform.python_version()}",
        f"numpy = {np.__version__}",
        f"scipy = {scipy.__version__}",
        *body,
    ]
    (out_dir / f"{name.replace('-', '_')}_manifest.txt").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# surface files: header with the two uniform bases, then one CSV row of
# coefficients per x-index.  repr() round-trips doubles exactly, so a
# written surface reloads bit-identically.

SURFACE_MAGIC = "maspline-surface,v1"


def write_surface_csv(path: str | Path, surface: sf.SplineSurface) -> None:
    lines = [SURFACE_MAGIC]
    for tag, basis in (("x", surface.basis_x), ("y", surface.basis_y)):
        lines.append(f"{tag},{float(basis.a)!r},{float(basis.b)!r},{basis.dim}")
    for row in surface.coeffs:
        lines.append(",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_surface_csv(path: str | Path) -> sf.SplineSurface:
    lines = [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
    try:
        if not lines or lines[0] != SURFACE_MAGIC:
            raise ValueError("missing surface header")
        if len(lines) < 3:
            raise ValueError("truncated basis block")
        bases = []
        for expected_tag, line in zip(("x", "y"), lines[1:3]):
            parts = line.split(",")
            if len(parts) != 4 or parts[0] != expected_tag:
                raise ValueError(f"bad {expected_tag}-basis line {line!r}")
            bases.append(bs.make_basis(float(parts[1]), float(parts[2]), int(parts[3])))
        basis_x, basis_y = bases
        rows = lines[3:]
        if len(rows) != basis_x.dim:
            raise ValueError(f"expected {basis_x.dim} coefficient rows, found {len(rows)}")
        coeffs = np.array([[float(v) for v in row.split(",")] for row in rows])
        if coeffs.shape != (basis_x.dim, basis_y.dim):
            raise ValueError(f"coefficient block is {coeffs.shape}, expected {(basis_x.dim, basis_y.dim)}")
    except ValueError as exc:
        raise ValueError(f"malformed surface file {path}: {exc}") from exc
    return sf.make_surface(basis_x, basis_y, coeffs)


def _write_curve(path: Path, curve: np.ndarray) -> None:
    lines = ["x,u"] + [f"{float(x)!r},{float(u)!r}" for x, u in curve]
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# shared plumbing


def _load_target(image_path: str | None, sigma_rect) -> im.IrradianceImage:
    if image_path is None:
        return im.constant_image(64, 64, tuple(sigma_rect))
    return im.image_from_pgm(image_path, tuple(sigma_rect))


def _setup_from(settings: dict, target: im.IrradianceImage) -> rf.ReflectorSetup:
    return rf.ReflectorSetup(
        target=target,
        omega_rect=tuple(settings["omega_rect"]),
        sigma_rect=tuple(settings["sigma_rect"]),
        z_plane=settings["z_plane"],
        size_G=settings["size_g"],
        lam=settings["lam"],
        gray_lift=settings["gray_lift"],
    )


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_n_list(text: str) -> list[int]:
    try:
        values = [int(p) for p in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"invalid --N list {text!r}: {exc}") from exc
    return values


# ---------------------------------------------------------------------------
# commands


def cmd_benchmark(args) -> int:
    n_list = _parse_n_list(args.N)
    out = _out_dir(args)
    table_path = out / f"benchmark{args.id}_table.csv"
    _write_manifest(out, "benchmark", {"id": args.id, "N": ",".join(map(str, n_list))}, seed=None)

    rows: list[bm.TableRow] = []
    section_surface = None
    for n in n_list:
        start = time.perf_counter()
        try:
            surface, reports = bm.solve_benchmark(args.id, n)
            stop_reason = reports[-1].stop_reason
        except co.LevelFailure as failure:
            surface = failure.surface
            stop_reason = f"failed:{failure.report.stop_reason}"
        seconds = time.perf_counter() - start
        _, fields = bm.make_benchmark(args.id, n)
        error = bm.max_knot_error(surface, fields) if fields.exact_solution else float("nan")
        row = bm.TableRow(n=n, max_error=error, seconds=seconds, stop_reason=stop_reason)
        rows.append(row)
        # rewrite after every row so an aborted sweep keeps its partial table
        table_path.write_text(bm.table_csv(rows))
        print(f"N={n} error={error:.3e} seconds={seconds:.1f} stop={stop_reason}", flush=True)
        if row.clean and n == max(n_list):
            section_surface = surface

    if args.id == 5 and section_surface is not None:
        axis, diagonal = bm.cross_sections(section_surface)
        _write_curve(out / "benchmark5_axis.csv", axis)
        _write_curve(out / "benchmark5_diagonal.csv", diagonal)

    all_clean = all(row.clean for row in rows)
    return 0 if all_clean and (args.id != 5 or section_surface is not None) else 1


def _level_line(label: str, run: rf.LevelRun) -> str:
    report = run.report
    return (
        f"{label}: N={run.n} mollifier={run.mollifier} iterations={report.iterations}"
        f" residual={report.final_residual_norm:.6e} stop={report.stop_reason} c={run.c!r}"
    )


def cmd_reflector(args) -> int:
    overrides: dict = {"n": args.N}
    if args.schedule is not None:
        try:
            overrides["schedule"] = _parse_schedule(args.schedule)
        except ValueError as exc:
            raise UsageError(f"invalid --schedule {args.schedule!r}: {exc}") from exc
    settings = resolve_settings(args.config, **overrides)
    schedule = settings["schedule"]
    n_target = settings["n"] if settings["n"] is not None else max(n for n, _ in schedule)

    target = _load_target(args.image, settings["sigma_rect"])
    setup = _setup_from(settings, target)
    out = _out_dir(args)
    recorded = {key: settings[key] for key in
                ("omega_rect", "sigma_rect", "z_plane", "size_g", "gray_lift", "lam", "schedule", "cutoff")}
    _write_manifest(out, "reflector", {**recorded, "n": n_target, "image": args.image}, seed=None)

    log_lines: list[str] = []

    def note(line: str) -> None:
        print(line, flush=True)
        log_lines.append(line)

    status = 0
    try:
        initial, init_runs = rf.universal_initial(setup, n=schedule[0][0])
        for run in init_runs:
            note(_level_line("initial", run))
        surface, runs = rf.solve_reflector(setup, initial, n_target, schedule)
        for index, run in enumerate(runs):
            note(_level_line(f"level {index}", run))
        c_final = runs[-1].c
    except co.LevelFailure as failure:
        note(f"failed: {failure}")
        surface = failure.surface
        c_final = float("nan")
        status = 1

    integral = sf.surface_integral(surface)
    note(f"integral_u = {float(integral)!r}")
    note(f"size_G = {float(setup.size_G)!r}")
    note(f"integral_gap = {abs(float(integral) - setup.size_G):.3e}")
    note(f"c = {float(c_final)!r}")

    write_surface_csv(out / "reflector_surface.csv", surface)
    high = rt.high_pass(surface, settings["cutoff"])
    im.write_pgm(out / "reflector_highpass.pgm", high.values.astype(np.uint8))
    (out / "reflector_log.txt").write_text("\n".join(log_lines) + "\n")
    return status


def cmd_raytrace(args) -> int:
    settings = resolve_settings(args.config, rays=args.rays, seed=args.seed)
    rays, seed = settings["rays"], settings["seed"]
    if rays < 1:
        raise UsageError(f"ray count must be at least 1, got {rays}")

    surface = read_surface_csv(args.surface)
    target = _load_target(args.image, settings["sigma_rect"])
    setup = _setup_from(settings, target)
    out = _out_dir(args)
    recorded = {key: settings[key] for key in
                ("omega_rect", "sigma_rect", "z_plane", "size_g", "gray_lift", "lam", "rays")}
    _write_manifest(out, "raytrace", {**recorded, "seed": seed, "image": args.image, "surface": args.surface},
                    seed=seed)

    report = rt.trace(surface, setup, rays, seed)
    im.write_pgm(out / "raytrace_rendered.pgm", im.to_8bit(report.rendered.values))
    line = rt.report_line(report)
    (out / "raytrace_report.txt").write_text(line + "\n")
    print(line, flush=True)
    return 0


def cmd_cross_section(args) -> int:
    surface = read_surface_csv(args.surface)
    out = _out_dir(args)
    _write_manifest(out, "cross-section", {"surface": args.surface}, seed=None)
    axis, diagonal = bm.cross_sections(surface)
    _write_curve(out / "cross_section_axis.csv", axis)
    _write_curve(out / "cross_section_diagonal.csv", diagonal)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maspline",
        description="Tensor-product spline collocation for Monge-Ampere equations "
        "and free-form reflector design.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    bench = sub.add_parser("benchmark", help="solve a standard problem over a grid sweep and tabulate errors")
    bench.add_argument("id", type=int, choices=[1, 2, 3, 4, 5], metavar="ID", help="standard problem, 1-5")
    bench.add_argument("--N", default="31,45,63", help="comma-separated grid sizes (default: %(default)s)")
    bench.add_argument("--out", default=".", help="output directory (default: current)")
    bench.set_defaults(handler=cmd_benchmark)

    refl = sub.add_parser("reflector", help="design a reflector that paints a PGM image")
    refl.add_argument("--config", help="key = value configuration file")
    refl.add_argument("--image", help="target PGM image; omitted means a uniform target")
    refl.add_argument("--N", type=int, help="finest grid size (truncates the schedule)")
    refl.add_argument("--schedule", help="continuation pairs, e.g. 21:55,41:55,41:19")
    refl.add_argument("--out", default=".", help="output directory (default: current)")
    refl.set_defaults(handler=cmd_reflector)

    ray = sub.add_parser("raytrace", help="validate a saved reflector by forward Monte Carlo tracing")
    ray.add_argument("surface", help="reflector surface CSV")
    ray.add_argument("--config", help="key = value configuration file")
    ray.add_argument("--image", help="target PGM image the reflector was designed for")
    ray.add_argument("--rays", type=int, help="ray count (default: 1000000)")
    ray.add_argument("--seed", type=int, help="random seed (default: 0)")
    ray.add_argument("--out", default=".", help="output directory (default: current)")
    ray.set_defaults(handler=cmd_raytrace)

    sect = sub.add_parser("cross-section", help="sample center-line and diagonal curves of a saved surface")
    sect.add_argument("surface", help="surface CSV")
    sect.add_argument("--out", default=".", help="output directory (default: current)")
    sect.set_defaults(handler=cmd_cross_section)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, co.LevelFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
