"""Command-line front end: run the pipeline, generate synthetic cases,
evaluate designs and run timing sweeps.

Exit codes: 0 ok, 2 input error, 3 pipeline error, 4 evaluation error.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .assemble import PipelineConfig, dehomogenise, extract_contours, plan_resolutions
from .core import Grid, ScalarField, wrap_angle
from .evaluate import BCSpec, EvaluationError, compliance, connectivity, periodicity_estimate
from .ingest import CaseError, CoarseSolution, Layer, parse_case, serialise_case

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_PIPELINE = 3
EXIT_EVAL = 4


def write_pgm(path: Path, solid: np.ndarray) -> None:
    """Binary PGM, 255 = solid, 0 = void, row 0 = top of the domain."""
    ny, nx = solid.shape
    data = (np.flipud(solid).astype(np.uint8) * 255).tobytes()
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n255\n".encode("ascii"))
        fh.write(data)


def read_pgm(path: Path) -> np.ndarray:
    """Inverse of write_pgm; returns a bool (ny, nx) array, row 0 = bottom."""
    raw = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P5":
        raise CaseError(f"$: not a binary PGM file: {path}")
    nx, ny, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    pixels = np.frombuffer(raw[pos + 1 :], dtype=np.uint8, count=nx * ny)
    return np.flipud(pixels.reshape(ny, nx) > maxval // 2)


def write_svg(path: Path, contours: list[np.ndarray], grid: Grid) -> None:
    """One path per polyline, physical coordinates (y up via group transform)."""
    w = grid.nx * grid.h
    h = grid.ny * grid.h
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w} {h}">',
        f'<g transform="translate(0,{h}) scale(1,-1)" fill="none" '
        f'stroke="black" stroke-width="{grid.h}">',
    ]
    for poly in contours:
        pts = " L ".join(f"{x:.6g} {y:.6g}" for x, y in poly)
        lines.append(f'<path d="M {pts}" />')
    lines += ["</g>", "</svg>"]
    Path(path).write_text("\n".join(lines) + "\n")


def _branch_positions(diag) -> list[np.ndarray]:
    return [np.asarray(p.gamma) for pts in diag.branch_points for p in pts]


def _evaluate_design(sol: CoarseSolution, raster, diag, reference: dict | None) -> dict:
    """Metrics block for a finished run; FE quantities are null without a
    usable bc block or a connected load path."""
    out: dict = {
        "C": None,
        "V": float(raster.solid.mean()),
        "S": None,
        "R": None,
        "components": None,
        "load_connected": None,
        "wavelength_median_ratio": None,
    }
    theta = ScalarField(sol.grid, sol.layers[0].theta)
    stats = periodicity_estimate(
        raster.solid, raster.grid, theta, diag.plan.omega, exclude=_branch_positions(diag)
    )
    out["wavelength_median_ratio"] = stats["median_ratio"]
    out["wavelength_reliable"] = stats["reliable"]
    if sol.bc is None:
        return out
    bc = BCSpec.from_dict(sol.bc)
    n_comp, ok = connectivity(raster.solid, raster.grid, bc)
    out["components"] = n_comp
    out["load_connected"] = ok
    if not ok:
        return out
    c, v = compliance(ScalarField(raster.grid, raster.solid.astype(float)), bc)
    out["C"], out["V"], out["S"] = c, v, c * v
    if reference is not None:
        ref_s = reference.get("S")
        if ref_s:
            out["R"] = out["S"] / ref_s
    return out


def cmd_run(args) -> int:
    try:
        sol = parse_case(Path(args.input).read_bytes())
    except OSError as exc:
        print(f"error: cannot read {args.input}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CaseError as exc:
        print(f"error: {args.input}: {exc}", file=sys.stderr)
        return EXIT_INPUT

    cfg = PipelineConfig(
        omega=args.omega,
        iterations=args.iters,
        h_min=args.h_min,
        boundary=not args.no_boundary,
        branch_repair=not args.no_branch_repair,
        phase_shift=args.phase_shift,
    )
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        raster, diag = dehomogenise(sol, cfg)
    except (ValueError, RuntimeError) as exc:
        print(f"error: pipeline: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    print("plan:", json.dumps(diag.plan.as_dict()))

    write_pgm(out_dir / "design.pgm", raster.solid)
    if args.contours:
        rho = ScalarField(raster.grid, raster.solid.astype(float))
        write_svg(out_dir / "contours.svg", extract_contours(rho, 0.5), raster.grid)

    reference = None
    if args.reference:
        try:
            reference = json.loads(Path(args.reference).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read reference metrics: {exc}", file=sys.stderr)
            return EXIT_INPUT
    try:
        metrics = _evaluate_design(sol, raster, diag, reference)
    except EvaluationError as exc:
        print(f"error: evaluation: {exc}", file=sys.stderr)
        return EXIT_EVAL
    doc = {
        "schema": 1,
        **metrics,
        "plan": diag.plan.as_dict(),
        "timings_ms": diag.timings_ms,
        "flags": diag.flags,
    }
    (out_dir / "metrics.json").write_text(json.dumps(doc, indent=2) + "\n")
    return EXIT_OK


def synth_case(kind: str, n_c: int, mu: float, mu_min: float) -> CoarseSolution:
    """Synthetic single-layer cases on the unit square, coarse grid n_c^2."""
    if n_c < 8:
        raise CaseError("$.n_c: need at least 8 coarse elements per side")
    if not (0.0 < mu <= 1.0) or not (0.0 < mu_min < 1.0):
        raise CaseError("$.mu: thicknesses must lie in (0, 1]")
    grid = Grid(n_c, n_c, 1.0 / n_c)
    X, Y = grid.points()
    cx = cy = 0.5
    if kind == "stripes":
        # theta = 0 gives vertical stripes; the axial load runs along them
        theta = np.zeros(grid.shape)
        mu_field = np.full(grid.shape, mu)
        bc = {
            "fixed": [{"edge": "bottom"}],
            "loads": [{"edge": "top", "f": [0.0, 1.0]}],
        }
    elif kind in ("square", "circle"):
        # concentric stripes: wave direction radial, so laminations are rings
        theta = wrap_angle(np.arctan2(Y - cy, X - cx) + np.pi / 2)
        mu_field = np.full(grid.shape, mu)
        if kind == "circle":
            inside = (X - cx) ** 2 + (Y - cy) ** 2 <= 0.25
            mu_field = np.where(inside, mu_field, 0.0)
            bc = {
                "fixed": [{"box": [0.4, 0.4, 0.6, 0.6]}],
                "loads": [
                    {"at": [cx + 0.45, cy], "f": [1.0, 0.0]},
                    {"at": [cx - 0.45, cy], "f": [-1.0, 0.0]},
                    {"at": [cx, cy + 0.45], "f": [0.0, 1.0]},
                    {"at": [cx, cy - 0.45], "f": [0.0, -1.0]},
                ],
            }
        else:
            bc = {
                "fixed": [{"edge": "left"}],
                "loads": [{"edge": "right", "f": [1.0, 0.0]}],
            }
    else:
        raise CaseError(f"$.kind: unknown synthetic case kind {kind!r}")
    return CoarseSolution(
        grid=grid,
        mu_min=mu_min,
        layers=[Layer(theta=theta, mu=mu_field)],
        bc=bc,
    )


def cmd_synth(args) -> int:
    try:
        sol = synth_case(args.kind, args.n_c, args.mu, args.mu_min)
    except CaseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    Path(args.output).write_text(serialise_case(sol) + "\n")
    return EXIT_OK


def _parse_list(text: str, cast) -> list:
    try:
        vals = [cast(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise CaseError(f"$: bad list {text!r}: {exc}") from exc
    if not vals:
        raise CaseError(f"$: empty list {text!r}")
    return vals


SWEEP_HEADER = [
    "n_c", "omega", "mu_min", "h_min",
    "i_up1", "i_up2", "f_up",
    "t_align_ms", "t_sample_ms", "t_branch_ms", "t_boundary_ms",
    "t_assemble_ms", "t_total_ms",
]


def cmd_sweep(args) -> int:
    try:
        n_cs = _parse_list(args.n_c, int)
        omegas = _parse_list(args.omega, float)
        mu_mins = _parse_list(args.mu_min, float)
    except CaseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    rows = []
    predictors, totals = [], []
    for n_c in n_cs:
        for omega in omegas:
            for mu_min in mu_mins:
                row = {
                    "n_c": n_c, "omega": omega,
                    "mu_min": mu_min, "h_min": args.h_min,
                }
                try:
                    plan = plan_resolutions(1.0 / n_c, omega, mu_min, args.h_min, n_c=n_c)
                    sol = synth_case(args.kind, n_c, mu_min, mu_min)
                    cfg = PipelineConfig(omega=omega, iterations=args.iters, h_min=args.h_min)
                    _, diag = dehomogenise(sol, cfg)
                except (CaseError, ValueError, RuntimeError) as exc:
                    print(f"sweep: n_c={n_c} omega={omega} mu_min={mu_min} failed: {exc}",
                          file=sys.stderr)
                    rows.append(row)
                    continue
                row.update(i_up1=plan.i_up1, i_up2=plan.i_up2, f_up=plan.f_up)
                row.update(diag.timings_ms)
                rows.append(row)
                predictors.append(n_c * omega / mu_min)
                totals.append(diag.timings_ms["t_total_ms"])

    with open(args.output, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_HEADER, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)

    if len(totals) >= 2 and np.ptp(predictors) > 0:
        r2 = fit_r_squared(np.asarray(predictors), np.asarray(totals))
        print(f"linear fit of total time vs n_c*omega/mu_min: R^2 = {r2:.4f}")
    else:
        print("linear fit undefined (need >= 2 successful combinations)")
    return EXIT_OK


def fit_r_squared(x: np.ndarray, y: np.ndarray) -> float:
    """Coefficient of determination of a least-squares line through (x, y)."""
    coeffs = np.polyfit(x, y, 1)
    resid = y - np.polyval(coeffs, x)
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0:
        return 1.0
    return float(1.0 - np.sum(resid**2) / ss_tot)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("-i", "--input", required=True, help="case JSON file")
    p.add_argument("-o", "--output", default="out", help="output directory")
    p.add_argument("--omega", type=float, default=48.0, help="stripe frequency")
    p.add_argument("--iters", type=int, default=20, help="phase-alignment sweeps")
    p.add_argument("--h-min", type=int, default=3, help="min feature size, pixels")
    p.add_argument("--phase-shift", type=float, default=0.0,
                   help="global phase shift added after alignment")
    p.add_argument("--no-boundary", action="store_true",
                   help="skip boundary wave and cut fields")
    p.add_argument("--no-branch-repair", action="store_true",
                   help="skip branch closure and pinch correction")
    p.add_argument("--contours", action="store_true", help="also write contours.svg")
    p.add_argument("--reference", help="metrics.json of a reference design for R")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dehom",
        description="Dehomogenise a rank-N laminate solution into a binary raster.",
    )
    sub = parser.add_subparsers(dest="command")

    run = sub.add_parser("run", help="run the pipeline on a case file")
    _add_run_flags(run)
    run.set_defaults(func=cmd_run)

    synth = sub.add_parser("synth", help="write a synthetic case file")
    synth.add_argument("--kind", choices=["square", "circle", "stripes"], default="square")
    synth.add_argument("--n-c", type=int, default=40, help="coarse elements per side")
    synth.add_argument("--mu", type=float, default=0.5, help="relative thickness")
    synth.add_argument("--mu-min", type=float, default=0.1, help="void threshold")
    synth.add_argument("-o", "--output", default="case.json")
    synth.set_defaults(func=cmd_synth)

    sweep = sub.add_parser("sweep", help="timing sweep over synthetic cases")
    sweep.add_argument("--n-c", default="20,40", help="comma list of grid sizes")
    sweep.add_argument("--omega", default="30,60", help="comma list of frequencies")
    sweep.add_argument("--mu-min", default="0.1,0.2", help="comma list of thresholds")
    sweep.add_argument("--h-min", type=int, default=3)
    sweep.add_argument("--iters", type=int, default=20)
    sweep.add_argument("--kind", choices=["square", "circle", "stripes"], default="square")
    sweep.add_argument("-o", "--output", default="sweep.csv")
    sweep.set_defaults(func=cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # bare `dehom -i case.json ...` runs the pipeline without a subcommand
    if argv and argv[0] not in ("run", "synth", "sweep", "-h", "--help"):
        argv = ["run"] + argv
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return EXIT_INPUT
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
