"""Command line entry point: ``stvmlu <command> [options]``.

Exit codes: 0 success, 1 numerical failure, 2 usage or input error.
Option precedence is command-line flag, then ``--config`` file
(``key=value`` lines, keys are option names), then built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import LABEL as BASELINE_LABEL
from .baseline import BaselineConfig, l12nmf_solve
from .candidates import RankDeficientError, build_candidates
from .hsi_data import (
    HsiFormatError,
    ensure_dir,
    file_sha256,
    flatten,
    load_cube,
    load_library,
    load_matrix_csv,
    save_cube,
    save_matrix_csv,
)
from .metrics import evaluate
from .solver import NumericalError, SolverConfig, solve
from .synthgen import make_scene, procedural_library, realized_snr
from .tv import TvProxConfig, fgp_denoise, prox_objective

logger = logging.getLogger("stvmlu")

ALPHA_GRID = (0.001, 0.01, 0.02, 0.05, 0.1, 0.5, 1.0)
LAMBDA_GRID = (0.0001, 0.001, 0.01, 0.02, 0.05, 0.1, 0.5, 1.0)
SWEEP_FIELDS = [
    "layers", "alpha", "lambda", "repeat", "seed", "status",
    "sad_mean", "rmse_mean", "iterations", "termination",
]


class UsageError(Exception):
    pass


# -- small helpers ------------------------------------------------------------


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _float_list(text):
    try:
        values = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    return values


def _int_list(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}")


def _require(path, what="input"):
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{what} not found: {path}")
    return path


def _require_cube(path):
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".json", ".f64") else path
    _require(stem.with_suffix(".json"), "cube header")
    _require(stem.with_suffix(".f64"), "cube payload")
    return stem


def _cube_files(stem):
    stem = Path(stem)
    return [stem.with_suffix(".json"), stem.with_suffix(".f64")]


def _solver_config(args) -> SolverConfig:
    return SolverConfig(
        num_layers=args.layers,
        alpha=args.alpha,
        lam=args.lam,
        mu0=args.mu0,
        rho=args.rho,
        mu_max=args.mu_max,
        t_max=args.max_iter,
        eps_stop=args.eps,
        asc_delta=args.asc_delta,
        seed=args.seed,
        init=args.init,
        tv=TvProxConfig(inner_iters=args.tv_iters),
    )


def _manifest(out_dir, args, inputs, extra=None):
    """Write ``manifest_<command>.json``: everything needed to rerun, no timings."""
    record = {
        "command": args.command,
        "args": _resolved_args(args),
        "seed": args.seed,
        "inputs": {str(p): file_sha256(p) for p in inputs},
        "tool_version": __version__,
    }
    if extra:
        record.update(extra)
    _write_json(Path(out_dir) / f"manifest_{args.command}.json", record)


def _timings(out_dir, args, timings):
    _write_json(Path(out_dir) / f"timings_{args.command}.json", timings)


def _resolved_args(args):
    skip = {"command", "func", "config"}
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in skip:
            continue
        out[key] = str(value) if isinstance(value, Path) else value
    return out


# -- commands -----------------------------------------------------------------


def cmd_synth(args):
    out = ensure_dir(args.out)
    t0 = time.perf_counter()
    if args.library:
        library = load_library(_require(args.library, "library"))
    else:
        library = procedural_library(bands=args.bands, seed=0)
    snr = float("inf") if args.no_noise else args.snr
    scene = make_scene(
        args.rows, args.cols, args.endmembers, snr, args.seed, library,
        indices=args.indices, block_size=args.block_size,
        filter_radius=args.filter_radius, purity_threshold=args.purity,
    )
    save_cube(scene.cube, out / "cube")
    save_cube(scene.clean, out / "clean")
    save_matrix_csv(scene.a_true, out / "a_true.csv")
    save_matrix_csv(scene.s_true.values, out / "s_true.csv")
    measured = None if np.isinf(snr) else realized_snr(scene.clean.values, scene.cube.values)
    _write_json(
        out / "scene.json",
        {
            "rows": args.rows, "cols": args.cols, "bands": scene.cube.bands,
            "endmembers": args.endmembers, "snr_db": None if np.isinf(snr) else snr,
            "realized_snr_db": measured, "seed": args.seed,
            "library": args.library or "procedural",
            "library_names": [library.names[i] for i in (args.indices or range(args.endmembers))],
            "block_size": args.block_size, "filter_radius": args.filter_radius,
            "purity_threshold": args.purity,
        },
    )
    inputs = [Path(args.library)] if args.library else []
    _manifest(out, args, inputs)
    _timings(out, args, {"total_s": time.perf_counter() - t0})
    print(f"scene written to {out}")


def cmd_candidates(args):
    stem = _require_cube(args.input)
    out_path = Path(args.out)
    if out_path.suffix != ".csv":
        out_path = out_path / "phi.csv"
    ensure_dir(out_path.parent)
    t0 = time.perf_counter()
    cube = load_cube(stem, allow_negative=args.allow_negative)
    cm = build_candidates(flatten(cube), args.endmembers, args.runs, args.seed)
    save_matrix_csv(cm.phi, out_path)
    with open(out_path.with_name(out_path.stem + "_provenance.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["column", "method", "run", "seed"])
        for k, (method, run, seed) in enumerate(cm.provenance):
            w.writerow([k, method, run, seed])
    _manifest(out_path.parent, args, _cube_files(stem), {"K": cm.K})
    _timings(out_path.parent, args, {"total_s": time.perf_counter() - t0})
    print(f"{cm.K} candidates written to {out_path}")


def _write_trace(path, result):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "cost", "gap_inf", "mu"])
        for i, (c, g, m) in enumerate(zip(result.cost_trace, result.gap_trace, result.mu_trace), 1):
            w.writerow([i, format(c, ".17g"), format(g, ".17g"), format(m, ".17g")])


def cmd_unmix(args):
    stem = _require_cube(args.input)
    phi_path = _require(args.phi, "candidate matrix")
    out = ensure_dir(args.out)
    cube = load_cube(stem, allow_negative=args.allow_negative)
    phi = load_matrix_csv(phi_path)
    t0 = time.perf_counter()
    result = solve(flatten(cube), phi, args.endmembers, cube.rows, cube.cols, _solver_config(args))
    elapsed = time.perf_counter() - t0
    save_matrix_csv(result.a, out / "A.csv")
    save_matrix_csv(result.s, out / "S.csv")
    _write_trace(out / "trace.csv", result)
    _write_json(
        out / "result.json",
        {
            "termination": result.termination,
            "iterations": result.iterations_run,
            "final_cost": result.cost_trace[-1],
            "rows": cube.rows, "cols": cube.cols, "endmembers": args.endmembers,
            "input_scaling": "none",
        },
    )
    _manifest(out, args, [*_cube_files(stem), phi_path])
    _timings(out, args, {"solve_s": elapsed})
    print(f"{result.termination} after {result.iterations_run} iterations; outputs in {out}")
    return result


def cmd_baseline(args):
    stem = _require_cube(args.input)
    out = ensure_dir(args.out)
    cube = load_cube(stem, allow_negative=args.allow_negative)
    cfg = BaselineConfig(
        n_endmembers=args.endmembers, lam=args.lam, t_max=args.max_iter,
        seed=args.seed, asc_delta=args.asc_delta,
    )
    t0 = time.perf_counter()
    result = l12nmf_solve(flatten(cube), cfg)
    elapsed = time.perf_counter() - t0
    save_matrix_csv(result.a, out / "A.csv")
    save_matrix_csv(result.s, out / "S.csv")
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "cost"])
        for i, c in enumerate(result.cost_trace, 1):
            w.writerow([i, format(c, ".17g")])
    _write_json(out / "result.json", {"label": BASELINE_LABEL, "iterations": len(result.cost_trace)})
    _manifest(out, args, _cube_files(stem))
    _timings(out, args, {"solve_s": elapsed})
    print(f"{BASELINE_LABEL}: outputs in {out}")


def cmd_eval(args):
    paths = {"est_a": args.est_a, "ref_a": args.ref_a}
    for key in ("est_s", "ref_s"):
        if getattr(args, key):
            paths[key] = getattr(args, key)
    for key, p in paths.items():
        _require(p, key.replace("_", "-"))
    mats = {k: load_matrix_csv(p) for k, p in paths.items()}
    report = evaluate(mats["est_a"], mats["ref_a"], mats.get("est_s"), mats.get("ref_s"))
    out_path = Path(args.out)
    if out_path.suffix != ".json":
        out_path = out_path / "report.json"
    ensure_dir(out_path.parent)
    payload = report.to_dict()
    payload["sad_unit"] = "radians"
    payload["config"] = {k: str(v) for k, v in paths.items()}
    _write_json(out_path, payload)
    _manifest(out_path.parent, args, [Path(p) for p in paths.values()])
    print(
        f"mean SAD {report.sad_mean:.4f} rad"
        + ("" if report.rmse_mean is None else f", mean RMSE {report.rmse_mean:.4f}")
    )
    return report


def _sweep_cell(job):
    x, phi, rows, cols, m, a_ref, s_ref, cfg, key = job
    t0 = time.perf_counter()
    row = dict(zip(["layers", "alpha", "lambda", "repeat", "seed"], key))
    try:
        result = solve(x, phi, m, rows, cols, cfg)
        rep = evaluate(result.a, a_ref, result.s, s_ref)
        row.update(
            status="ok", sad_mean=rep.sad_mean, rmse_mean=rep.rmse_mean,
            iterations=result.iterations_run, termination=result.termination,
        )
    except (NumericalError, ValueError) as exc:
        row.update(status=f"failed: {exc}", sad_mean="", rmse_mean="", iterations="", termination="")
    return row, time.perf_counter() - t0


def _sweep_key(row):
    return (int(row["layers"]), float(row["alpha"]), float(row["lambda"]), int(row["repeat"]))


def _fmt(v):
    return format(v, ".17g") if isinstance(v, float) else str(v)


def _write_sweep_summary(path, rows):
    """Mean and raw standard deviation (ddof=0) over the repeats of each cell."""
    cells = {}
    for row in rows:
        if row["status"] == "ok":
            key = (int(row["layers"]), float(row["alpha"]), float(row["lambda"]))
            cells.setdefault(key, []).append((float(row["sad_mean"]), float(row["rmse_mean"])))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layers", "alpha", "lambda", "n_ok", "sad_mean", "sad_std", "rmse_mean", "rmse_std"])
        for key in sorted(cells):
            sad, rmse = np.array(cells[key]).T
            stats = [sad.mean(), sad.std(), rmse.mean(), rmse.std()]
            w.writerow([*key, len(sad), *(_fmt(float(v)) for v in stats)])


def cmd_sweep(args):
    if not args.layer_list or not args.alphas or not args.lambdas:
        raise UsageError("empty grid: --layer-list, --alphas and --lambdas need at least one value")
    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    scene_dir = _require(args.scene, "scene directory")
    stem = _require_cube(scene_dir / "cube")
    a_ref = load_matrix_csv(_require(scene_dir / "a_true.csv", "reference endmembers"))
    s_ref = load_matrix_csv(_require(scene_dir / "s_true.csv", "reference abundances"))
    cube = load_cube(stem, allow_negative=args.allow_negative)
    x = flatten(cube)
    m = a_ref.shape[1]
    inputs = [*_cube_files(stem), scene_dir / "a_true.csv", scene_dir / "s_true.csv"]
    if args.phi:
        phi_path = _require(args.phi, "candidate matrix")
        phi = load_matrix_csv(phi_path)
        inputs.append(phi_path)
    else:
        phi = build_candidates(x, m, args.runs, args.seed).phi

    jobs = []
    for layers in args.layer_list:
        for alpha in args.alphas:
            for lam in args.lambdas:
                for rep in range(args.repeats):
                    seed = args.seed + rep
                    cfg = SolverConfig(
                        num_layers=layers, alpha=alpha, lam=lam, mu0=args.mu0, rho=args.rho,
                        mu_max=args.mu_max, t_max=args.max_iter, eps_stop=args.eps,
                        asc_delta=args.asc_delta, seed=seed, init=args.init,
                        tv=TvProxConfig(inner_iters=args.tv_iters),
                    )
                    key = (layers, alpha, lam, rep, seed)
                    jobs.append((x, phi, cube.rows, cube.cols, m, a_ref, s_ref, cfg, key))

    if args.threads > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]

    out = ensure_dir(args.out)
    sweep_path = out / "sweep.csv"
    rows = {}
    if sweep_path.exists():
        with open(sweep_path, newline="") as fh:
            for row in csv.DictReader(fh):
                rows[_sweep_key(row)] = row
    for row, _ in results:
        rows[_sweep_key(row)] = {k: _fmt(row[k]) for k in SWEEP_FIELDS}
    with open(sweep_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS, lineterminator="\n")
        w.writeheader()
        for key in sorted(rows):
            w.writerow(rows[key])
    _write_sweep_summary(out / "sweep_summary.csv", [rows[k] for k in sorted(rows)])
    with open(out / "sweep_timings.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layers", "alpha", "lambda", "repeat", "wall_s"])
        for row, wall in results:
            w.writerow([row["layers"], row["alpha"], row["lambda"], row["repeat"], f"{wall:.3f}"])
    _manifest(out, args, inputs, {"cells": len(jobs)})
    failed = sum(1 for row, _ in results if row["status"] != "ok")
    print(f"{len(jobs)} cells written to {sweep_path} ({failed} failed)")


def cmd_tvprox(args):
    path = _require(args.input_grid, "grid")
    grid = load_matrix_csv(path)
    z, _ = fgp_denoise(grid, args.weight, inner_iters=args.iters, box_lower=args.box_lower)
    out_path = Path(args.out)
    if out_path.suffix != ".csv":
        out_path = out_path / "tvprox.csv"
    ensure_dir(out_path.parent)
    save_matrix_csv(z, out_path)
    _manifest(out_path.parent, args, [path])
    print(
        f"objective {prox_objective(grid, grid, args.weight):.6g} (input) -> "
        f"{prox_objective(z, grid, args.weight):.6g}; written to {out_path}"
    )


def cmd_pipeline(args):
    out = ensure_dir(args.out)
    t = {}
    t0 = time.perf_counter()
    if args.input:
        stem = _require_cube(args.input)
        inputs = _cube_files(stem)
        cube = load_cube(stem, allow_negative=args.allow_negative)
        a_ref = load_matrix_csv(_require(args.ref_a, "ref-a")) if args.ref_a else None
        s_ref = load_matrix_csv(_require(args.ref_s, "ref-s")) if args.ref_s else None
        inputs += [Path(p) for p in (args.ref_a, args.ref_s) if p]
    else:
        library = load_library(_require(args.library, "library")) if args.library else None
        scene = make_scene(
            args.rows, args.cols, args.endmembers,
            float("inf") if args.no_noise else args.snr, args.seed, library,
        )
        cube, a_ref, s_ref = scene.cube, scene.a_true, scene.s_true.values
        save_cube(cube, out / "cube")
        save_matrix_csv(a_ref, out / "a_true.csv")
        save_matrix_csv(s_ref, out / "s_true.csv")
        inputs = [Path(args.library)] if args.library else []
    t["synth_s"] = time.perf_counter() - t0

    x = flatten(cube)
    t0 = time.perf_counter()
    cm = build_candidates(x, args.endmembers, args.runs, args.seed)
    save_matrix_csv(cm.phi, out / "phi.csv")
    t["candidates_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    result = solve(x, cm.phi, args.endmembers, cube.rows, cube.cols, _solver_config(args))
    save_matrix_csv(result.a, out / "A.csv")
    save_matrix_csv(result.s, out / "S.csv")
    _write_trace(out / "trace.csv", result)
    t["unmix_s"] = time.perf_counter() - t0

    report = {
        "termination": result.termination,
        "iterations": result.iterations_run,
        "rows": cube.rows, "cols": cube.cols, "bands": cube.bands,
        "endmembers": args.endmembers, "input_scaling": "none",
    }
    if a_ref is not None:
        rep = evaluate(result.a, a_ref, result.s if s_ref is not None else None, s_ref)
        report["stvmlu"] = rep.to_dict()
    if args.with_baseline:
        t0 = time.perf_counter()
        base = l12nmf_solve(
            x, BaselineConfig(args.endmembers, args.lam, args.max_iter, seed=args.seed,
                              asc_delta=args.asc_delta),
        )
        save_matrix_csv(base.a, out / "baseline_A.csv")
        save_matrix_csv(base.s, out / "baseline_S.csv")
        t["baseline_s"] = time.perf_counter() - t0
        if a_ref is not None:
            rep = evaluate(base.a, a_ref, base.s if s_ref is not None else None, s_ref)
            report["baseline"] = {"label": BASELINE_LABEL, **rep.to_dict()}
    _write_json(out / "report.json", report)
    _manifest(out, args, inputs)
    _timings(out, args, t)
    if "stvmlu" in report:
        sads = ", ".join(f"{v:.4f}" for v in report["stvmlu"]["sad_per_endmember"])
        print(f"SAD per endmember: {sads}; mean {report['stvmlu']['sad_mean']:.4f}")
    print(f"report written to {out / 'report.json'}")


def cmd_rerun(args):
    manifest_path = _require(args.manifest, "manifest")
    record = json.loads(manifest_path.read_text())
    argv = rebuild_argv(record["command"], record["args"])
    return main(argv)


# -- parser -------------------------------------------------------------------


def _add_solver_options(p):
    p.add_argument("--layers", type=int, default=3, help="number of weight layers")
    p.add_argument("--alpha", type=float, default=0.01, help="TV weight")
    p.add_argument("--lambda", dest="lam", type=float, default=0.01, help="L1/2 weight")
    p.add_argument("--mu0", type=float, default=0.01)
    p.add_argument("--rho", type=float, default=1.1)
    p.add_argument("--mu-max", type=float, default=1000.0)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--eps", type=float, default=1e-3, help="stop when max|S - L| < eps")
    p.add_argument("--asc-delta", type=float, default=20.0, help="0 disables sum-to-one")
    p.add_argument("--init", choices=("kmeans", "random"), default="kmeans")
    p.add_argument("--tv-iters", type=int, default=20, help="inner FGP iterations")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("--config", type=Path, help="key=value defaults file")
    common.add_argument("--out", default="out", help="output directory (or file where noted)")
    common.add_argument("--allow-negative", action="store_true", help="clamp negative reflectance to 0")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="stvmlu", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"stvmlu {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic scene")
    p.add_argument("--rows", type=int, default=64)
    p.add_argument("--cols", type=int, default=64)
    p.add_argument("--endmembers", type=int, default=5)
    p.add_argument("--snr", type=float, default=20.0)
    p.add_argument("--no-noise", action="store_true")
    p.add_argument("--library", help="delimited text library (wavelength + signature columns)")
    p.add_argument("--indices", type=_int_list, help="library columns to use")
    p.add_argument("--bands", type=int, default=224, help="bands of the procedural library")
    p.add_argument("--block-size", type=int, default=8)
    p.add_argument("--filter-radius", type=int, default=4)
    p.add_argument("--purity", type=float, default=0.8)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("candidates", parents=[common], help="build the candidate matrix")
    p.add_argument("--input", required=True, help="cube path (without or with .json)")
    p.add_argument("--endmembers", type=int, required=True)
    p.add_argument("--runs", type=int, default=5)
    p.set_defaults(func=cmd_candidates)

    p = sub.add_parser("unmix", parents=[common], help="run the multilayer TV/L1/2 solver")
    p.add_argument("--input", required=True)
    p.add_argument("--phi", required=True)
    p.add_argument("--endmembers", type=int, required=True)
    _add_solver_options(p)
    p.set_defaults(func=cmd_unmix)

    p = sub.add_parser("baseline", parents=[common], help="run the L1/2-NMF baseline")
    p.add_argument("--input", required=True)
    p.add_argument("--endmembers", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=0.01)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--asc-delta", type=float, default=20.0)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", parents=[common], help="SAD / RMSE against references")
    p.add_argument("--est-a", required=True)
    p.add_argument("--est-s")
    p.add_argument("--ref-a", required=True)
    p.add_argument("--ref-s")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="layer and (alpha, lambda) sweeps")
    p.add_argument("--scene", required=True, type=Path, help="directory written by synth")
    p.add_argument("--phi", help="candidate matrix; built from the scene when omitted")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--layer-list", type=_int_list, default="3")
    p.add_argument("--alphas", type=_float_list, default=",".join(map(str, ALPHA_GRID)))
    p.add_argument("--lambdas", type=_float_list, default=",".join(map(str, LAMBDA_GRID)))
    p.add_argument("--repeats", type=int, default=10)
    _add_solver_options(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("tvprox", parents=[common], help="TV proximal step on one grid")
    p.add_argument("--in", dest="input_grid", required=True, help="grid as matrix CSV")
    p.add_argument("--weight", type=float, required=True)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--box-lower", type=float)
    p.set_defaults(func=cmd_tvprox)

    p = sub.add_parser("pipeline", parents=[common], help="synth -> candidates -> unmix -> eval")
    p.add_argument("--input", help="existing cube; a synthetic scene is generated otherwise")
    p.add_argument("--ref-a")
    p.add_argument("--ref-s")
    p.add_argument("--library")
    p.add_argument("--rows", type=int, default=64)
    p.add_argument("--cols", type=int, default=64)
    p.add_argument("--snr", type=float, default=20.0)
    p.add_argument("--no-noise", action="store_true")
    p.add_argument("--endmembers", type=int, default=5)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--with-baseline", action="store_true")
    _add_solver_options(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("rerun", parents=[common], help="re-execute a command from its manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_rerun)

    parser._subparsers_map = sub.choices  # used by config handling and rerun
    return parser


def _read_config(path: Path) -> dict:
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    values = {}
    for n, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (t.strip() for t in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _apply_config(parser, subparser, argv, args):
    values = _read_config(args.config)
    known = {a.dest: a for a in subparser._actions}
    aliases = {"lambda": "lam"}
    defaults = {}
    for key, value in values.items():
        dest = aliases.get(key, key)
        if dest not in known or dest in ("config", "help"):
            raise UsageError(f"{args.config}: unknown option {key!r} for {args.command}")
        action = known[dest]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = value.lower() in ("1", "true", "yes", "on")
        else:
            defaults[dest] = value  # string defaults go through the option's type
        action.required = False
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def rebuild_argv(command: str, resolved: dict) -> list[str]:
    """Turn a manifest's resolved arguments back into an explicit argv."""
    sub = build_parser()._subparsers_map[command]
    argv = [command]
    for action in sub._actions:
        if action.dest not in resolved or action.dest in ("help", "config"):
            continue
        value = resolved[action.dest]
        if not action.option_strings:
            argv.append(str(value))
            continue
        flag = action.option_strings[-1] if action.option_strings[-1].startswith("--") else action.option_strings[0]
        if isinstance(action, argparse._StoreTrueAction):
            if value:
                argv.append(flag)
        elif value is None:
            continue
        elif isinstance(value, list):
            argv += [flag, ",".join(_fmt(v) for v in value)]
        else:
            argv += [flag, _fmt(value)]
    return argv


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.config is not None:
            args = _apply_config(parser, parser._subparsers_map[args.command], argv, args)
        args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (UsageError, FileNotFoundError, HsiFormatError) as exc:
        print(f"stvmlu {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, RankDeficientError) as exc:
        print(f"stvmlu {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"stvmlu {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
