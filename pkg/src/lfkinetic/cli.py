"""Command-line entry points: run experiments, synthesize grids, validate.

`run` orchestrates the full pipeline: obtain the feedback (cached grid
synthesis, closed-form gain, or none), sample the initial populations,
iterate the particle scheme, and export CSVs plus a metadata record.
Exit codes: 0 success, 2 configuration errors, 1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .backend import BACKEND
from .config import (RunConfig, apply_paper_scale, dp_digest, load_config,
                     load_preset, save_config)
from .diagnostics import write_density_csv, write_series_csv, write_surface_csv
from .dp import policy_iteration, value_iteration
from .dsmc import (GridFeedback, ParticleEnsemble, RiccatiFeedback, run_tpbb,
                   sample_initial)
from .errors import PersistFailure, ValidationError
from .gridfile import check_grid_matches, load_grid, save_grid
from .riccati import riccati_gain

GENERATOR_NAME = "PCG64"


def _load_from_args(args) -> RunConfig:
    if getattr(args, "preset", None):
        cfg = load_preset(args.preset)
    elif getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        raise ValidationError("either --preset or --config is required")
    return cfg


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "no_control", False):
        cfg = replace(cfg, control="none")
    if getattr(args, "paper_scale", False):
        cfg = apply_paper_scale(cfg)
    cfg.validate()
    return cfg


def _synthesize(cfg: RunConfig):
    mesh = cfg.mesh()
    if cfg.dp_method == "value_iter":
        return value_iteration(mesh, cfg.controls, cfg.cost, cfg.kernels,
                               tol=cfg.dp_tol, max_iter=cfg.dp_max_iter)
    return policy_iteration(mesh, cfg.controls, cfg.cost, cfg.kernels,
                            tol=cfg.dp_tol)


def _grid_feedback(cfg: RunConfig, cache_dir: Path, log) -> tuple:
    """Load the cached value grid for cfg or synthesize and cache it."""
    digest = dp_digest(cfg)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"grid-{digest[:16]}.vgrid"
    synth_time = 0.0
    if path.exists():
        grid = load_grid(path)
        check_grid_matches(grid, mesh=cfg.mesh(), cost=cfg.cost,
                           controls=cfg.controls, kernels=cfg.kernels)
        log(f"loaded cached value grid {path}")
    else:
        log(f"synthesizing value grid ({cfg.mesh_n}^4 nodes, "
            f"{cfg.dp_method}) ...")
        t0 = time.perf_counter()
        grid = _synthesize(cfg)
        synth_time = time.perf_counter() - t0
        log(f"  residual {grid.residual:.3e} after {grid.iterations} "
            f"iterations in {synth_time:.1f}s")
        save_grid(grid, path)
    return GridFeedback(grid), grid, path, synth_time, digest


def _control_source(cfg: RunConfig, cache_dir: Path, log):
    if cfg.control == "none":
        return None, None, None, 0.0, dp_digest(cfg)
    if cfg.control == "riccati":
        gain = riccati_gain(cfg.kernels, cfg.cost,
                            cfg.controls.u_min, cfg.controls.u_max)
        return RiccatiFeedback(gain), None, None, 0.0, dp_digest(cfg)
    return _grid_feedback(cfg, cache_dir, log)


def _write_counts_csv(path, res) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "t", "n_ff", "n_fl", "m_ll", "n_fl_eff",
                        "phi_mean", "phi_sq_mean"])
            for i in range(res.counts_ff.shape[0]):
                w.writerow([i, repr(float(res.times[i + 1])),
                            int(res.counts_ff[i]), int(res.counts_fl[i]),
                            int(res.counts_ll[i]), int(res.counts_fl_eff[i]),
                            repr(float(res.phi_mean[i])),
                            repr(float(res.phi_sq_mean[i]))])
    except OSError as exc:
        raise PersistFailure(f"could not write {path}: {exc}") from exc


def cmd_run(args) -> int:
    log = (lambda *a: None) if args.quiet else (lambda *a: print(*a, file=sys.stderr))
    cfg = _apply_overrides(_load_from_args(args), args)
    if args.workers != 1:
        log(f"note: --workers {args.workers} requested; running the "
            f"single-worker determinism reference")

    out = Path(args.out) if args.out else Path(cfg.out_dir) / cfg.name
    out.mkdir(parents=True, exist_ok=True)
    cache_dir = Path(args.cache_dir) if args.cache_dir else out.parent / "vgrid-cache"

    meta = {
        "version": __version__,
        "backend": BACKEND,
        "generator": GENERATOR_NAME,
        "seed": cfg.seed,
        "workers": args.workers,
        "status": "partial: setup",
    }
    meta_path = out / "metadata.json"
    try:
        fb, grid, grid_path, synth_time, digest = _control_source(
            cfg, cache_dir, log)
        meta["dp_digest"] = digest
        meta["synthesis_seconds"] = synth_time
        if grid is not None:
            meta["grid_file"] = str(grid_path)
            meta["dp_residual"] = grid.residual
            meta["dp_iterations"] = grid.iterations
            meta["dp_converged"] = grid.converged
            meta["dp_method"] = grid.method

        root = np.random.SeedSequence(cfg.seed)
        ss_main, ss_diag = root.spawn(2)
        rng = np.random.default_rng(ss_main)
        diag_rng = np.random.default_rng(ss_diag)

        x0 = sample_initial(cfg.init_f[0], cfg.init_f[1], cfg.n_s, rng)
        y0 = sample_initial(cfg.init_l[0], cfg.init_l[1], cfg.m_s, rng)
        e0 = ParticleEnsemble(x=x0, y=y0, rho_f=cfg.rho_f, rho_l=cfg.rho_l)

        meta["status"] = "partial: run"
        log(f"running {cfg.n_steps} steps "
            f"(N_s={cfg.n_s}, M_s={cfg.m_s}, control={cfg.control}) ...")
        t0 = time.perf_counter()
        res = run_tpbb(
            e0, cfg.scaling, cfg.kernels, fb, cfg.n_steps, rng,
            cost=cfg.cost, snapshot_stride=cfg.snapshot_stride,
            delta_x=cfg.hist_dx, omega=cfg.omega,
            surface_points=cfg.surface_points,
            surface_partners=cfg.surface_partners,
            phi_pairs=cfg.phi_pairs, symmetric=cfg.symmetric,
            diag_rng=diag_rng,
        )
        meta["run_seconds"] = time.perf_counter() - t0
        log(f"  done in {meta['run_seconds']:.1f}s; "
            f"final means F={res.mean_f[-1]:+.4f} L={res.mean_l[-1]:+.4f}")

        meta["status"] = "partial: export"
        write_density_csv(out / "density.csv", res.snap_times,
                          res.bin_centers, res.dens_f, res.dens_l)
        write_surface_csv(out / "surface.csv", res.snap_times,
                          res.surf_y, res.surf_phi)
        write_series_csv(out / "series.csv", res.times, res.mean_f,
                         res.mean_l, res.cost)
        _write_counts_csv(out / "counts.csv", res)
        save_config(cfg, out / "config.ini")
        meta["run_metadata"] = res.metadata
        meta["final_cost"] = float(res.cost[-1])
        meta["status"] = "complete"
        return 0
    finally:
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def cmd_synthesize(args) -> int:
    cfg = _apply_overrides(_load_from_args(args), args)
    if cfg.control == "none" and cfg.dp_method == "riccati":
        raise ValidationError("this configuration never uses a value grid")
    print(f"synthesizing {cfg.mesh_n}^4 grid with {cfg.dp_method} ...",
          file=sys.stderr)
    t0 = time.perf_counter()
    grid = _synthesize(cfg)
    dt = time.perf_counter() - t0
    save_grid(grid, args.out)
    print(f"residual {grid.residual:.3e}, {grid.iterations} iterations, "
          f"{dt:.1f}s -> {args.out}", file=sys.stderr)
    return 0


def cmd_validate(args) -> int:
    cfg = _load_from_args(args)
    cfg.validate()
    if args.grid:
        grid = load_grid(args.grid)
        check_grid_matches(grid, mesh=cfg.mesh(), cost=cfg.cost,
                           controls=cfg.controls, kernels=cfg.kernels)
    print("ok")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="lfkinetic",
        description="Feedback-controlled leader-follower particle simulations")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_source(p):
        p.add_argument("--preset", choices=["test1", "test2", "test2-noleaders",
                                            "test3a", "test3b"],
                       help="built-in experiment configuration")
        p.add_argument("--config", help="INI configuration file")

    run = sub.add_parser("run", help="execute a full experiment")
    add_source(run)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--no-control", action="store_true",
                     help="free dynamics, no feedback on the leaders")
    run.add_argument("--paper-scale", action="store_true",
                     help="full-size sampling (slow)")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--cache-dir", default=None,
                     help="value-grid cache directory")
    run.add_argument("--quiet", action="store_true")
    run.set_defaults(func=cmd_run)

    syn = sub.add_parser("synthesize-dp", help="solve the control problem only")
    add_source(syn)
    syn.add_argument("--seed", type=int, default=None)
    syn.add_argument("--out", required=True, help="grid file to write")
    syn.set_defaults(func=cmd_synthesize)

    val = sub.add_parser("validate", help="check a configuration")
    add_source(val)
    val.add_argument("--grid", default=None,
                     help="also check this grid file against the config")
    val.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # surfaced with a nonzero code, not a traceback
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
