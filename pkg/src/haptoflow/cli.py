"""Command-line driver: runs, benchmarks, convergence studies, probes."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import benchmarks
from .basis import build_basis
from .grid import build_grid, zero_state
from .integrator import StepControl, run
from .io import (
    DEFAULT_CONFIG,
    RunConfig,
    load_tensor_field,
    write_convergence_csv,
    write_field_vtk,
)
from .model import ModelField, ScalingNumbers, nondimensionalize
from .operators import Scheme, SchemeConfig
from .verification import ConvergenceStudy

BENCH_NAMES = ("fundamental", "manufactured", "quadrants", "halfplane", "brain-toy")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


def _configure_threads(threads: int | None) -> int:
    count = threads if threads and threads > 0 else os.cpu_count() or 1
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(count))
    return count


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="haptoflow",
        description="Asymptotic-preserving micro-macro solver for haptotaxis "
        "transport equations",
    )
    parser.add_argument("--quiet", action="store_true",
                        help="suppress all stdout except errors")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (env HAPTOFLOW_THREADS overrides)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="time integration driven by a TOML config")
    p_run.add_argument("--config", type=Path, help="TOML run configuration")
    p_run.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p_run.add_argument("--print-defaults", action="store_true",
                       help="print the default configuration and exit")

    for name in ("bench", "convergence"):
        p = sub.add_parser(
            name,
            help="single benchmark run" if name == "bench" else "grid refinement study",
        )
        p.add_argument("bench", choices=BENCH_NAMES)
        p.add_argument("--out", type=Path, default=Path("."))
        p.add_argument("--variant", choices=("mi1", "mi2", "iv1", "iv2"), default="mi1")
        p.add_argument("--stencil", choices=("plain", "improved"), default="improved")
        p.add_argument("--drift", choices=("centered", "upwind"), default=None,
                       help="override the bench default drift discretization")
        p.add_argument("--eps", type=float, default=None)
        p.add_argument("--order", type=int, default=1, help="moment order N")
        p.add_argument("--grid", type=int, default=None, help="cells per axis")
        if name == "convergence":
            p.add_argument("--levels", type=int, default=4)
            p.add_argument("--refine", type=float, default=1.5)
        p.add_argument("--steady-tol", type=float, default=None)

    p_lim = sub.add_parser("limit-stencil", help="impulse probe of the stiff limit")
    p_lim.add_argument("--stencil", choices=("plain", "improved"), default="plain")
    p_lim.add_argument("--eps", type=float, default=1e-10)

    sub.add_parser("info", help="build parameters and conventions")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK

    env_threads = os.environ.get("HAPTOFLOW_THREADS")
    threads = int(env_threads) if env_threads else args.threads
    threads = _configure_threads(threads)

    say = (lambda *a, **k: None) if args.quiet else print
    try:
        if args.command == "info":
            return cmd_info(say, threads)
        if args.command == "limit-stencil":
            return cmd_limit_stencil(args, say)
        if args.command == "run":
            return cmd_run(args, say)
        if args.command == "bench":
            return cmd_bench(args, say)
        if args.command == "convergence":
            return cmd_convergence(args, say)
        parser.error(f"unknown command {args.command!r}")
    except (ValueError, TypeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_info(say, threads: int) -> int:
    from . import __version__

    say(f"haptoflow {__version__}")
    say(f"threads: {threads}")
    say("moment basis: real spherical harmonics, components (l, m) lexicographic,")
    say("  order-1 block ~ (v_eta, v_zeta, v_xi); no Condon-Shortley phase")
    say("schemes: mi1 mi2 iv1 iv2; stencils: plain improved; drift: centered upwind")
    say("boundary kernels: u_turn thermal dirichlet")
    return EXIT_OK


def cmd_limit_stencil(args, say) -> int:
    probe = benchmarks.limit_stencil_probe(stencil=args.stencil, eps=args.eps)
    say(f"stencil={args.stencil} eps={args.eps:g} dt={probe['dt']:.3e}")
    say("normalized 3x3 impulse response:")
    for row in probe["window"]:
        say("  " + "  ".join(f"{v: .3e}" for v in row))
    say(f"classification: {probe['pattern']}")
    return EXIT_OK


def cmd_run(args, say) -> int:
    if args.print_defaults:
        say(DEFAULT_CONFIG)
        return EXIT_OK
    if args.config is None:
        raise ValueError("run requires --config <path> (or --print-defaults)")
    cfg = RunConfig.from_toml(args.config)
    basis = build_basis(cfg.order)
    counts = tuple(c + 1 for c in cfg.cells)
    grid = build_grid(counts, cfg.extents, origin=cfg.origin)

    if cfg.scaling_kind == "dimensionless":
        scaling = ScalingNumbers(**cfg.scaling_params)
    else:
        p = cfg.scaling_params
        scaling = nondimensionalize(p["c"], p["lam0"], p["lam1"], p["M"], p["X"], p["T"])
    say(f"scaling: eps={scaling.eps:g} delta={scaling.delta:g} "
        f"nu={scaling.nu:g} theta={scaling.theta:g}")

    if cfg.tensor_path:
        tensors, _, _ = load_tensor_field(cfg.tensor_path)
        d_water = tensors[..., 0, :, :] if grid.dim == 2 else tensors
        if d_water.shape[:-2] != grid.cell_counts:
            raise ValueError(
                f"tensor field shape {d_water.shape[:-2]} does not match "
                f"the grid cells {grid.cell_counts}"
            )
    else:
        d_water = np.eye(3)

    growth = cfg.growth
    model = ModelField(grid, basis, d_water, scaling,
                       rho_cc=growth.get("rho_cc", 1.0),
                       k_plus=growth.get("k_plus", 0.1),
                       k_minus=growth.get("k_minus", 0.1))
    config = SchemeConfig(**cfg.scheme)
    scheme = Scheme(grid, model, basis, config)
    state = zero_state(grid, basis.n_restricted, scheme.n_variants)
    if cfg.initial.get("kind", "point") == "point":
        center = tuple(c // 2 for c in grid.counts)
        state.rho[center] = float(cfg.initial.get("value", 1.0))
    else:
        state.rho[:] = float(cfg.initial.get("value", 1.0))

    out_dir = args.out
    out_dir.mkdir(parents=True, exist_ok=True)
    every = cfg.output_every

    def cb(step, t, diag):
        if every and step % every == 0:
            write_field_vtk(out_dir / f"state_{step:06d}.vtk", grid,
                            {"rho": diag["state"].rho})
        say(f"step {step:6d}  t={t:.5g}  mass={diag['mass']:.6g}  "
            f"rho=[{diag['rho_min']:.3g}, {diag['rho_max']:.3g}]")
        return True

    control = StepControl(t_end=cfg.t_end, steady_tol=cfg.steady_tol)
    final, summary = run(state, scheme, control,
                         callback=cb if (every or not args.quiet) else None,
                         diag_every=max(1, every or 50))
    write_field_vtk(out_dir / "final.vtk", grid, {
        "rho": final.rho,
        "volume_fraction_Q": _q_on_vertices(model, grid),
    })
    say(f"finished after {summary.steps} steps at t={summary.time:g} ({summary.reason})")
    say(f"wrote {out_dir / 'final.vtk'}")
    return EXIT_OK


def _q_on_vertices(model, grid) -> np.ndarray:
    q = np.zeros(grid.counts)
    counts = np.zeros(grid.counts)
    for sl in grid.corner_slices():
        q[sl] += model.volume_fraction
        counts[sl] += 1.0
    return q / counts


def cmd_bench(args, say) -> int:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    name = args.bench
    if name == "fundamental":
        cells = args.grid or 40
        eps = args.eps if args.eps is not None else 1e-5
        say("defaults: D0=0.01, anisotropy diag(2.5,1,1)/4.5 rotated onto (-1,2,0), "
            "a0=0, t_offset=0.2, t_end=1, unit square, exact Dirichlet traces")
        res = benchmarks.fundamental_bench(cells=cells, eps=eps, variant=args.variant,
                                           stencil=args.stencil, order=args.order,
                                           drift=args.drift)
        say(f"fundamental: cells={cells} eps={eps:g} L2 error={res.error:.6e} "
            f"steps={res.steps}")
        write_field_vtk(out / "fundamental.vtk", res.grid,
                        {"rho": res.state.rho, "rho_exact": res.extra["exact"]})
        say(f"wrote {out / 'fundamental.vtk'}")
    elif name == "manufactured":
        cells = args.grid or 20
        eps = args.eps if args.eps is not None else 1.0
        say("defaults: delta=0.1, theta=0, nu=0, D_W=diag(1+xi,1,1), t_end=0.25, "
            "reflective walls, sources from the prescribed bump solution")
        res = benchmarks.manufactured_bench(cells=cells, eps=eps, variant=args.variant,
                                            stencil=args.stencil, order=args.order,
                                            drift=args.drift)
        say(f"manufactured: cells={cells} eps={eps:g} L2 error={res.error:.6e} "
            f"steps={res.steps}")
        write_field_vtk(out / "manufactured.vtk", res.grid,
                        {"rho": res.state.rho, "rho_exact": res.extra["exact"]})
    elif name == "quadrants":
        cells = args.grid or 40
        tol = args.steady_tol if args.steady_tol is not None else 3e-4
        res = benchmarks.quadrants_bench(cells=cells, steady_tol=tol,
                                         variant=args.variant, stencil=args.stencil,
                                         order=args.order)
        sol = res.extra["solution"]
        say("defaults: kappa=(100,1,100,1) via turning factor 3/kappa, eps=1e-6, "
            "exact Dirichlet traces, marching from the exact solution")
        say(f"quadrants: alpha = {sol.alpha:.12f}")
        say(f"a = {np.array2string(sol.a, precision=8)}")
        say(f"b = {np.array2string(sol.b, precision=8)}")
        say(f"cells={cells} steady L2 error={res.error:.6e} steps={res.steps}")
        write_field_vtk(out / "quadrants.vtk", res.grid,
                        {"rho": res.state.rho, "rho_exact": res.extra["exact"]})
        study = ConvergenceStudy(base_points=cells, refine=1.0)
        study.add(cells, 2.0 / cells, res.error)
        write_convergence_csv(out / "quadrants.csv", study)
        say(f"wrote {out / 'quadrants.vtk'}, {out / 'quadrants.csv'}")
    elif name == "halfplane":
        cells = args.grid or 50
        say("defaults: main axes 80/20 deg, anisotropy 2.5; test 1 slope (1,0) "
            "fully pinned at eps=1e-8; test 2 slope (1,1) with mass-preserving "
            "eta-walls at eps=1e-5, horizon t=0.05")
        for test in (1, 2):
            res = benchmarks.halfplane_bench(
                test=test, cells=cells, eps=args.eps,
                variant=args.variant, stencil=args.stencil, order=args.order,
                steady_tol=args.steady_tol,
            )
            say(f"halfplane test {test}: max rel density error={res.error:.4e} "
                f"max rel flux error={res.extra['max_flux_rel_error']:.4e} "
                f"steps={res.steps}")
            write_field_vtk(out / f"halfplane_test{test}.vtk", res.grid,
                            {"rho": res.state.rho, "rho_exact": res.extra["exact"]})
    elif name == "brain-toy":
        cells = args.grid or 40
        res = benchmarks.brain_toy_bench(cells=cells, variant=args.variant,
                                         stencil=args.stencil, order=args.order,
                                         eps=args.eps if args.eps is not None else 3.28e-6,
                                         drift=args.drift)
        s = res.extra["scaling"]
        say("reference parameters: "
            + ", ".join(f"{k}={v:g}" for k, v in benchmarks.BRAIN_PARAMETERS.items()))
        say(f"characteristic numbers: eps={s.eps:g} delta={s.delta:g} "
            f"nu={s.nu:g} theta={s.theta:g}")
        say(f"two-year run: steps={res.steps} "
            f"rho range [{res.extra['rho_min']:.4f}, {res.extra['rho_max']:.4f}]")
        write_field_vtk(out / "brain_toy.vtk", res.grid, {
            "rho": res.state.rho,
            "volume_fraction_Q": _q_on_vertices(res.extra["model"], res.grid),
        })
        say(f"wrote {out / 'brain_toy.vtk'}")
    return EXIT_OK


def cmd_convergence(args, say) -> int:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    name = args.bench
    if name == "fundamental":
        eps = args.eps if args.eps is not None else 1e-5
        study = benchmarks.fundamental_convergence(
            base=args.grid or 40, refine=args.refine, levels=args.levels,
            eps=eps, variant=args.variant, stencil=args.stencil,
        )
    elif name == "manufactured":
        eps = args.eps if args.eps is not None else 1.0
        study = benchmarks.manufactured_convergence(
            base=args.grid or 20, refine=args.refine, levels=args.levels,
            eps=eps, variant=args.variant, stencil=args.stencil,
        )
    elif name == "quadrants":
        study = benchmarks.quadrants_convergence(
            base=args.grid or 20, refine=args.refine, levels=args.levels,
            steady_tol=args.steady_tol if args.steady_tol is not None else 3e-4,
            variant=args.variant, stencil=args.stencil,
        )
    else:
        raise ValueError(f"no convergence protocol for bench {name!r}")
    path = out / f"convergence_{name}.csv"
    write_convergence_csv(path, study)
    say(f"levels: {[lv[0] for lv in study.levels]}")
    say(f"errors: {['%.4e' % lv[2] for lv in study.levels]}")
    say(f"rates:  {['%.3f' % r for r in study.rates]}")
    say(f"fitted order: {study.fitted_order():.3f}")
    say(f"wrote {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
