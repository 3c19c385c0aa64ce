"""Batch front end: solve / check / boundary / simulate / report.

Exit codes: 0 success, 1 input or environment error, 2 the run finished
but produced a flagged-quality result (unconverged levels, failing
hypothesis items, discontinuity flags).

The STOPSURF_THREADS environment variable caps BLAS/OpenMP threads; it is
applied before the numerical modules are imported, so it only works when
the CLI is the process entry point.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_FLAGGED = 2


def _apply_thread_cap() -> None:
    cap = os.environ.get("STOPSURF_THREADS")
    if not cap:
        return
    if "numpy" in sys.modules:
        print("stopsurf: STOPSURF_THREADS set after numpy import; cap not applied",
              file=sys.stderr)
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def _parse_window(text: str):
    from .model import Window
    try:
        parts = [p for chunk in text.split(",") for p in chunk.split(":")]
        t1, t2, x1, x2, y1, y2 = (float(v) for v in parts)
        return Window(t1, t2, x1, x2, y1, y2)
    except (ValueError, TypeError) as err:
        raise ValueError(f"bad window {text!r} (want t1:t2,x1:x2,y1:y2): {err}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stopsurf",
                                 description="free-boundary laboratory for "
                                             "two-dimensional optimal stopping")
    sub = ap.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="solve the obstacle problem backward in time")
    solve.add_argument("problem", type=Path)
    solve.add_argument("--out", type=Path, required=True)
    solve.add_argument("--nt", type=int, required=True)
    solve.add_argument("--nx", type=int, required=True)
    solve.add_argument("--ny", type=int, required=True)
    solve.add_argument("--theta", type=float)
    solve.add_argument("--psor-omega", type=float, dest="psor_omega")
    solve.add_argument("--psor-tol", type=float, dest="psor_tol")
    solve.add_argument("--psor-max-iter", type=int, dest="psor_max_iter")
    solve.add_argument("--obstacle-method", choices=("psor", "penalty"),
                       dest="obstacle_method")
    solve.add_argument("--penalty-rho", type=float, dest="penalty_rho")
    solve.add_argument("--format", choices=("binary", "csv"), default="binary")

    check = sub.add_parser("check", help="run the hypothesis catalog on a solve")
    check.add_argument("problem", type=Path)
    check.add_argument("--artifacts", type=Path, required=True)
    check.add_argument("--window", help="t1:t2,x1:x2,y1:y2 (defaults to [window] "
                                        "in the problem file)")

    boundary = sub.add_parser("boundary", help="extract the stopping surface and "
                                               "report its continuity diagnostics")
    boundary.add_argument("problem", type=Path)
    boundary.add_argument("--artifacts", type=Path, required=True)
    boundary.add_argument("--window")
    boundary.add_argument("--declared-mono", default="t=inc,y=inc",
                          help="declared monotone directions, e.g. t=inc,y=dec")
    boundary.add_argument("--jump-factor", type=float, default=10.0)
    boundary.add_argument("--no-refine", action="store_true",
                          help="skip sub-grid refinement of the surface")
    boundary.add_argument("--compare", type=Path,
                          help="second artifact dir on a refined grid; vetoes "
                               "non-persistent jump flags and reports the "
                               "sup-distance between the surfaces")

    simulate = sub.add_parser("simulate", help="pathwise validation of a solve")
    simulate.add_argument("problem", type=Path)
    simulate.add_argument("--artifacts", type=Path, required=True)
    simulate.add_argument("--paths", type=int, default=10_000)
    simulate.add_argument("--dt-sim", type=float, dest="dt_sim")
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--antithetic", action="store_true")
    simulate.add_argument("--start", help="x,y (or t,x,y) start point; defaults to "
                                          "the box center at t = 0")
    simulate.add_argument("--checkpoints",
                          help="comma-separated times (default 0, T/4, T/2, T)")
    simulate.add_argument("--basis-degree", type=int, default=2, choices=(2, 3))
    simulate.add_argument("--edge", choices=("absorb", "reflect-report"),
                          default="absorb")

    report = sub.add_parser("report", help="render figures and a text report "
                                           "from an artifact directory")
    report.add_argument("--artifacts", type=Path, required=True)
    report.add_argument("--out", type=Path)
    return ap


def _load_solve_artifacts(problem_path: Path, artifacts_dir: Path):
    """Rebuild a SolveResult from the problem file and the grid artifacts."""
    import numpy as np

    from . import artifacts as art
    from .model import evaluate_field
    from .problemfile import load_problem, load_solver_config
    from .solver import SolveResult

    manifest = art.verify_manifest(artifacts_dir, problem_path)
    spec = load_problem(problem_path)
    names = {e["name"]: e["path"] for e in manifest["outputs"]}
    if "value" not in names or "mask" not in names:
        raise art.ArtifactError("artifacts do not contain a value and mask grid")
    kind, meta, v = _read_grid(artifacts_dir / names["value"], manifest)
    kind_m, meta_m, mask_f = _read_grid(artifacts_dir / names["mask"], manifest)
    grid = art.grid_from_meta(spec, meta)
    gain = np.empty_like(v)
    tdep = "t" in _gain_free_vars(spec)
    for k in range(grid.nt):
        if k == 0 or tdep:
            level = evaluate_field(spec.gain.g, grid, k)
        gain[k] = level
    gain[grid.nt - 1] = evaluate_field(spec.gain.terminal_expr(), grid, grid.nt - 1)
    cfg = load_solver_config(problem_path, manifest.get("solver", {}))
    res = SolveResult(v=v, mask=mask_f > 0.5, gain=gain,
                      iterations=np.zeros(grid.nt, dtype=int),
                      residuals=np.zeros(grid.nt),
                      converged=np.ones(grid.nt, dtype=bool),
                      config=cfg, grid=grid, spec=spec)
    return manifest, spec, grid, res


def _gain_free_vars(spec):
    from . import exprs
    return exprs.free_vars(spec.gain.g)


def _read_grid(path: Path, manifest: dict):
    from . import artifacts as art
    if path.suffix == ".csv":
        raise art.ArtifactError("csv grids are export-only; use --format binary "
                                "for downstream commands")
    return art.read_grid_binary(path)


def cmd_solve(args) -> int:
    from . import artifacts as art
    from .model import InvalidCounts, build_grid, validate_spec
    from .problemfile import ProblemFileError, load_problem, load_solver_config
    from .solver import AssemblyError, StabilityError, solve_backward

    if not args.problem.exists():
        print(f"stopsurf: problem file not found: {args.problem}", file=sys.stderr)
        return EXIT_INPUT
    try:
        spec = load_problem(args.problem)
        overrides = {k: getattr(args, k) for k in
                     ("theta", "psor_omega", "psor_tol", "psor_max_iter",
                      "obstacle_method", "penalty_rho")}
        cfg = load_solver_config(args.problem, overrides)
        grid = build_grid(spec, args.nt, args.nx, args.ny)
    except (ProblemFileError, InvalidCounts) as err:
        print(f"stopsurf: {err}", file=sys.stderr)
        return EXIT_INPUT

    diags = validate_spec(spec, grid)
    for d in diags:
        print(f"stopsurf: {d}", file=sys.stderr)
    if any(d.level == "error" for d in diags):
        return EXIT_INPUT

    try:
        res = solve_backward(spec, grid, cfg)
    except (StabilityError, AssemblyError) as err:
        print(f"stopsurf: {err}", file=sys.stderr)
        return EXIT_INPUT

    outdir = args.out
    with art.output_lock(outdir):
        if args.format == "binary":
            value_path = outdir / "value.grid"
            mask_path = outdir / "mask.grid"
            art.write_grid_binary(value_path, "value", spec, grid, res.v)
            art.write_grid_binary(mask_path, "mask", spec, grid,
                                  res.mask.astype(float))
        else:
            value_path = outdir / "value.csv"
            mask_path = outdir / "mask.csv"
            art.write_grid_csv(value_path, grid, res.v, "value")
            art.write_grid_csv(mask_path, grid, res.mask.astype(float), "mask")
        solver_echo = {"theta": cfg.theta, "psor_omega": cfg.psor_omega,
                       "psor_tol": cfg.psor_tol, "psor_max_iter": cfg.psor_max_iter,
                       "obstacle_method": cfg.obstacle_method,
                       "penalty_rho": cfg.penalty_rho}
        flags = {"converged": not res.flagged,
                 "unconverged_levels": int((~res.converged).sum()),
                 "diagnostics": list(res.diagnostics)}
        art.new_manifest(outdir, args.problem, grid, solver_echo, flags)
        art.record_outputs(outdir, [("value", value_path), ("mask", mask_path)])
    print(f"stopsurf: solve finished; value at t=0 box center = "
          f"{res.v[0, grid.nx // 2, grid.ny // 2]:.6g}")
    return EXIT_FLAGGED if res.flagged else EXIT_OK


def cmd_check(args) -> int:
    from . import artifacts as art
    from .hypotheses import run_catalog
    from .model import WindowError
    from .problemfile import ProblemFileError, load_window

    try:
        manifest, spec, grid, res = _load_solve_artifacts(args.problem, args.artifacts)
        window = _parse_window(args.window) if args.window else load_window(args.problem)
        if window is None:
            print("stopsurf: no window given (flag --window or a [window] section)",
                  file=sys.stderr)
            return EXIT_INPUT
        window.indices(grid)  # malformed or margin-violating windows exit early
        report = run_catalog(spec, grid, window, u_field=res.u(), stop_mask=res.mask)
    except (art.ArtifactError, ProblemFileError, WindowError, ValueError) as err:
        print(f"stopsurf: {err}", file=sys.stderr)
        return EXIT_INPUT

    payload = art.sanitize({"format": "stopsurf-assumptions@1",
                            "window": vars(window), **report.to_dict()})
    out_path = args.artifacts / "assumptions.json"
    with art.output_lock(args.artifacts):
        art.write_json(out_path, payload)
        art.record_outputs(args.artifacts, [("assumptions", out_path)])

    width = max(len(i.id) for i in report.items)
    for item in report.items:
        print(f"{item.id:<{width}}  {item.status:<14} margin={item.margin:< .4g}"
              f"  {item.notes}")
    failures = report.failures()
    if failures:
        for item in failures:
            print(f"stopsurf: FAIL {item.id} witness={item.witness}", file=sys.stderr)
        return EXIT_FLAGGED
    return EXIT_OK


def _write_boundary_csv(path: Path, surface) -> None:
    with open(path, "w") as f:
        f.write("t,y,x_star\n")
        for k in range(surface.values.shape[0]):
            for j in range(surface.values.shape[1]):
                f.write(f"{surface.t[k]:.17g},{surface.y[j]:.17g},"
                        f"{surface.values[k, j]:.17g}\n")


def cmd_boundary(args) -> int:
    import numpy as np

    from . import artifacts as art
    from .boundary import (OrientationMismatch, continuity_report, extract_boundary,
                           smooth_fit_residual, surface_distance)
    from .model import Window
    from .problemfile import ProblemFileError, load_window

    try:
        manifest, spec, grid, res = _load_solve_artifacts(args.problem, args.artifacts)
        window = _parse_window(args.window) if args.window else load_window(args.problem)
        if window is None:
            # whole box, excluding the terminal level (an all-stop sentinel row)
            window = Window(float(grid.t[0]) - grid.dt,
                            float(grid.t[-2] + grid.t[-1]) / 2.0,
                            spec.x_lo - grid.hx, spec.x_hi + grid.hx,
                            spec.y_lo - grid.hy, spec.y_hi + grid.hy)
        declared = {}
        for part in args.declared_mono.split(","):
            axis, _, direction = part.partition("=")
            if axis.strip() not in ("t", "y") or direction.strip() not in ("inc", "dec"):
                raise ValueError(f"bad --declared-mono entry {part!r}")
            declared[axis.strip()] = direction.strip()
        surface = extract_boundary(res, refine=not args.no_refine)
        refined = None
        distance = None
        if args.compare is not None:
            _, _, _, res2 = _load_solve_artifacts(args.problem, args.compare)
            refined = extract_boundary(res2, refine=not args.no_refine)
            distance = surface_distance(surface, refined, window)
        rep = continuity_report(surface, window, declared,
                                jump_factor=args.jump_factor, refined=refined)
        try:
            smoothfit = smooth_fit_residual(res, surface, window)
        except ValueError:
            smoothfit = None
    except OrientationMismatch as err:
        print(f"stopsurf: {err}", file=sys.stderr)
        return EXIT_INPUT
    except (art.ArtifactError, ProblemFileError, ValueError) as err:
        print(f"stopsurf: {err}", file=sys.stderr)
        return EXIT_INPUT

    payload = {"format": "stopsurf-continuity@1", **rep.to_dict(),
               "healed_slices": int(surface.flagged.sum()),
               "detached_band_slices": int((surface.detached > 0).sum()),
               "extraction_tol": surface.extraction_tol,
               "lineage": {"nt": surface.nt, "nx": surface.nx, "ny": surface.ny,
                           "refined_subgrid": surface.refined}}
    if smoothfit is not None:
        payload["smooth_fit"] = smoothfit
    if distance is not None:
        payload["refinement_sup_distance"] = distance

    csv_path = args.artifacts / "boundary.csv"
    json_path = args.artifacts / "continuity.json"
    with art.output_lock(args.artifacts):
        _write_boundary_csv(csv_path, surface)
        art.write_json(json_path, art.sanitize(payload))
        art.record_outputs(args.artifacts, [("boundary", csv_path),
                                            ("continuity", json_path)])
    finite = surface.values[np.isfinite(surface.values)]
    if finite.size:
        print(f"stopsurf: boundary extracted; range [{finite.min():.6g}, "
              f"{finite.max():.6g}] over {finite.size} slices")
    if rep.any_flag():
        print(f"stopsurf: discontinuity flags {rep.flags}", file=sys.stderr)
        return EXIT_FLAGGED
    return EXIT_OK


def cmd_simulate(args) -> int:
    from . import artifacts as art
    from .montecarlo import (InfiniteActivityUnsupported, SimConfig, SpecMismatch,
                             evaluate_policy, longstaff_schwartz, martingale_check,
                             simulate_paths)
    from .problemfile import ProblemFileError

    try:
        manifest, spec, grid, res = _load_solve_artifacts(args.problem, args.artifacts)
        dt_sim = args.dt_sim if args.dt_sim is not None else grid.dt
        if dt_sim > grid.dt + 1e-15:
            raise ValueError(f"dt_sim={dt_sim:g} exceeds the grid step {grid.dt:g}")
        if args.start:
            parts = [float(v) for v in args.start.split(",")]
            if len(parts) == 2:
                start = (0.0, parts[0], parts[1])
            elif len(parts) == 3:
                start = (parts[0], parts[1], parts[2])
            else:
                raise ValueError("--start wants 'x,y' or 't,x,y'")
        else:
            start = (0.0, 0.5 * (spec.x_lo + spec.x_hi), 0.5 * (spec.y_lo + spec.y_hi))
        if args.checkpoints:
            checkpoints = [float(v) for v in args.checkpoints.split(",")]
        else:
            T = spec.horizon
            checkpoints = [start[0], T / 4, T / 2, T]
        cfg = SimConfig(n_paths=args.paths, dt_sim=dt_sim, seed=args.seed,
                        antithetic=args.antithetic, edge_behavior=args.edge)
        batch = simulate_paths(spec, start, cfg)
        policy = evaluate_policy(batch, res, spec)
        lsmc = longstaff_schwartz(batch, spec, basis_degree=args.basis_degree)
        table = martingale_check(batch, res, spec, checkpoints)
    except (art.ArtifactError, ProblemFileError, SpecMismatch,
            InfiniteActivityUnsupported, ValueError) as err:
        print(f"stopsurf: {err}", file=sys.stderr)
        return EXIT_INPUT

    policy_payload = art.sanitize({
        "format": "stopsurf-policy@1",
        "start": {"t": start[0], "x": start[1], "y": start[2]},
        "seed": cfg.seed, "n_paths": cfg.n_paths, "dt_sim": cfg.dt_sim,
        "antithetic": cfg.antithetic,
        "policy": policy.to_dict(),
        "regression": lsmc.to_dict(),
        "exited_paths": int(batch.exited.sum()),
        "reflections": batch.reflections,
    })
    mart_payload = art.sanitize({"format": "stopsurf-martingale@1",
                                 "start": {"t": start[0], "x": start[1], "y": start[2]},
                                 "seed": cfg.seed, "n_paths": cfg.n_paths,
                                 **table.to_dict()})
    pol_path = args.artifacts / "policy.json"
    mart_path = args.artifacts / "martingale.json"
    csv_path = args.artifacts / "checkpoints.csv"
    with art.output_lock(args.artifacts):
        art.write_json(pol_path, policy_payload)
        art.write_json(mart_path, mart_payload)
        with open(csv_path, "w") as f:
            f.write("checkpoint,stopped_mean,stopped_se,unstopped_mean,unstopped_se\n")
            for row in zip(table.checkpoints, table.stopped_mean, table.stopped_se,
                           table.unstopped_mean, table.unstopped_se):
                f.write(",".join(f"{v:.17g}" for v in row) + "\n")
        art.record_outputs(args.artifacts, [("policy", pol_path),
                                            ("martingale", mart_path),
                                            ("checkpoints", csv_path)])
    print(f"stopsurf: policy value {policy.value:.6g} +- {policy.std_error:.3g}; "
          f"regression value {lsmc.value:.6g} +- {lsmc.std_error:.3g}")
    return EXIT_OK


def cmd_report(args) -> int:
    from . import artifacts as art
    from .report import render_report

    try:
        outdir = args.out if args.out is not None else args.artifacts / "report"
        written = render_report(args.artifacts, outdir)
    except art.ArtifactError as err:
        print(f"stopsurf: {err}", file=sys.stderr)
        return EXIT_INPUT
    for path in written:
        print(f"stopsurf: wrote {path}")
    return EXIT_OK


def main(argv=None) -> int:
    _apply_thread_cap()
    args = build_parser().parse_args(argv)
    handler = {"solve": cmd_solve, "check": cmd_check, "boundary": cmd_boundary,
               "simulate": cmd_simulate, "report": cmd_report}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
