"""Command line entry point: ``stokes-rve <mode> --config <path>``.

Exit codes: 0 success, 2 configuration error, 3 solver or geometry failure,
4 failed invariant.  Logs go to stderr; every numeric result goes to files in
the output directory, together with ``manifest.json`` holding the resolved
configuration and a SHA-256 checksum per artifact.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import RunConfig, load_config
from .corrector import StokesProblem
from .effective import (
    EffectiveCoefficients,
    StrainBasis,
    compute_effective,
    dilute_slope,
    ensemble_stats,
    linearity_discrepancy,
    summary_dict,
    write_coefficients_csv,
    write_summary_json,
)
from .errors import ConfigParseError, StokesRVEError
from .geometry import InclusionSet, perturbed_lattice_generate, rsa_generate, save_inclusions, validate
from .grid import dump_field
from .twoscale import default_forcing, prepare_cell, run_ladder, write_two_scale_csv

log = logging.getLogger("stokes_rve")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INVARIANT = 0, 2, 3, 4


# -- task helpers ---------------------------------------------------------------


def make_inclusions(cfg: RunConfig, seed: int, L: float | None = None) -> InclusionSet:
    L = cfg.L if L is None else L
    if cfg.generator == "lattice":
        spacing = cfg.spacing[0] if len(cfg.spacing) == 1 else cfg.spacing
        return perturbed_lattice_generate(cfg.dim, L, spacing, cfg.jitter, cfg.delta, seed)
    return rsa_generate(cfg.dim, L, cfg.lam, cfg.delta, seed)


def map_tasks(func: Callable, items: Sequence, workers: int) -> list:
    """Apply ``func`` to every item; results come back in item order."""
    if workers <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(func, items))


def _effective_task(args) -> tuple[EffectiveCoefficients, dict]:
    cfg, seed, dump = args
    inc = make_inclusions(cfg, seed)
    s = cfg.solver
    coeffs, sols = compute_effective(
        inc, cfg.N, tol=s.tol, max_iter=s.max_iter, preconditioner=s.preconditioner, strict=cfg.strict
    )
    extra = {"inclusions": inc}
    if dump is not None:
        extra["fields"] = sols
    return coeffs, extra


def _dump_solutions(out: Path, cfg: RunConfig, seed: int, inc: InclusionSet, sols) -> list[Path]:
    ddir = out / cfg.solver.dump_dir
    ddir.mkdir(parents=True, exist_ok=True)
    paths = [ddir / f"inclusions_seed{seed}.txt"]
    save_inclusions(inc, paths[0])
    for i, sol in enumerate(sols):
        pv = ddir / f"psi_seed{seed}_E{i + 1}.txt"
        pp = ddir / f"sigma_seed{seed}_E{i + 1}.txt"
        dump_field(pv, sol.grid, sol.psi, "velocity")
        dump_field(pp, sol.grid, sol.sigma, "pressure")
        paths += [pv, pp]
    return paths


# -- modes ------------------------------------------------------------------------


@dataclass
class ModeResult:
    artifacts: list[Path]
    failed: list[str]


def run_effective(cfg: RunConfig, out: Path) -> ModeResult:
    dump = cfg.solver.dump_fields or None
    tasks = [(cfg, seed, dump) for seed in cfg.seeds]
    results = map_tasks(_effective_task, tasks, cfg.workers)
    artifacts = [out / "coefficients.csv", out / "summary.json"]
    coeffs = [c for c, _ in results]
    write_coefficients_csv(artifacts[0], coeffs)
    summary = summary_dict(coeffs)
    summary["diagnostics"] = [c.diagnostics for c in coeffs]
    write_summary_json(artifacts[1], summary)
    if dump:
        for seed, (_, extra) in zip(cfg.seeds, results):
            artifacts += _dump_solutions(out, cfg, seed, extra["inclusions"], extra["fields"])
    return ModeResult(artifacts, [])


def run_dilute(cfg: RunConfig, out: Path) -> ModeResult:
    s = cfg.solver
    fit = dilute_slope(cfg.lambdas, n=cfg.N, seeds=cfg.seeds, dim=cfg.dim, gap=cfg.delta, tol=s.tol)
    table = out / "dilute.csv"
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "seed", "excess"])
        for a, lam in enumerate(fit.lambdas):
            for j, seed in enumerate(cfg.seeds):
                w.writerow([f"{lam:.17g}", seed, f"{fit.excess[a, j]:.17g}"])
    summary = out / "summary.json"
    write_summary_json(summary, {"slope": fit.slope, "ci": list(fit.ci), "lambdas": fit.lambdas, "N": cfg.N})
    return ModeResult([table, summary], [])


def run_ensemble(cfg: RunConfig, out: Path) -> ModeResult:
    s = cfg.solver
    gen = lambda L, seed: make_inclusions(cfg, seed, L)  # noqa: E731
    rows = ensemble_stats(cfg.dim, cfg.lam, cfg.delta, cfg.seeds, cfg.L_ladder, cfg.h, tol=s.tol, generator=gen)
    m = rows[0].mean_B.shape[0]
    table = out / "ensemble.csv"
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh)
        idx = [f"{i + 1}{j + 1}" for i in range(m) for j in range(m)]
        w.writerow(
            ["L", "n_seeds"]
            + [f"mean_B_{k}" for k in idx]
            + [f"std_B_{k}" for k in idx]
            + [f"mean_b_{i + 1}" for i in range(m)]
            + [f"std_b_{i + 1}" for i in range(m)]
        )
        for r in rows:
            vals = np.concatenate([r.mean_B.ravel(), r.std_B.ravel(), r.mean_b, r.std_b])
            w.writerow([f"{r.L:.17g}", r.n_seeds] + [f"{v:.17g}" for v in vals])
    coeffs = out / "coefficients.csv"
    write_coefficients_csv(coeffs, [c for r in rows for c in r.results])
    summary = out / "summary.json"
    write_summary_json(
        summary,
        {
            "L_ladder": cfg.L_ladder,
            "h": cfg.h,
            "mean_grad_res": max(c.diagnostics["mean_grad_res"] for r in rows for c in r.results),
            "mean_pressure": max(c.diagnostics["mean_pressure"] for r in rows for c in r.results),
        },
    )
    return ModeResult([table, coeffs, summary], [])


def _smooth_buoyancy(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    out[:, 0] = np.cos(np.pi * x[:, 1])
    out[:, 1] = np.sin(np.pi * x[:, 0])
    return out


def _constant_buoyancy(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    out[:, -1] = -1.0
    return out


def run_twoscale(cfg: RunConfig, out: Path) -> ModeResult:
    s = cfg.solver
    g = {"none": None, "constant": _constant_buoyancy, "smooth": _smooth_buoyancy}[cfg.sedimentation]
    artifacts = []
    failed = []
    for seed in cfg.seeds:
        cell = prepare_cell(make_inclusions(cfg, seed), cfg.N, tol=s.tol, strict=cfg.strict, preconditioner=s.preconditioner)
        report = run_ladder(cell, cfg.eps, f=default_forcing, g=g, tol=s.tol, strict=cfg.strict, preconditioner=s.preconditioner)
        path = out / (f"twoscale_seed{seed}.csv" if len(cfg.seeds) > 1 else "twoscale.csv")
        write_two_scale_csv(path, report)
        artifacts.append(path)
        for col in ("h1_err_vel", "l2_err_press"):
            if not report.decreasing(col):
                log.warning("seed %d: %s does not decrease monotonically", seed, col)
    return ModeResult(artifacts, failed)


# -- validate ---------------------------------------------------------------------

EIG_FLOOR = 1.0 - 1e-6
SYMMETRY_TOL = 1e-7
ENERGY_TOL = 1e-8


def invariant_checks(cfg: RunConfig, seed: int) -> list[tuple[str, bool, str]]:
    """Invariant suite for one realization; returns ``(name, passed, detail)``."""
    s = cfg.solver
    inc = make_inclusions(cfg, seed)
    checks = []
    rep = validate(inc)
    checks.append(("geometry_gap", rep.passed, f"min gap {rep.min_gap:.6g} > delta {inc.gap:g}"))
    coeffs, sols = compute_effective(
        inc, cfg.N, tol=s.tol, max_iter=s.max_iter, preconditioner=s.preconditioner, strict=cfg.strict
    )
    d = coeffs.diagnostics
    B = coeffs.B_matrix
    if len(inc.centers) == 0:
        err = float(np.abs(B - np.eye(B.shape[0])).max())
        checks.append(("identity_B", err < 1e-9, f"max |B - I| = {err:.3e}"))
        bmax = float(np.abs(coeffs.b_vector).max())
        checks.append(("zero_b", bmax == 0.0, f"max |b| = {bmax:.3e}"))
    eig = float(coeffs.eigenvalues().min())
    checks.append(("coercivity", eig >= EIG_FLOOR, f"min eigenvalue {eig:.12g}"))
    sym = coeffs.symmetry_error()
    checks.append(("symmetry", sym < SYMMETRY_TOL, f"|B - B^T|/|B| = {sym:.3e}"))
    checks.append(("energy_identity", d["energy_res"] < ENERGY_TOL, f"max rel residual {d['energy_res']:.3e}"))
    bal = max(d["res_force"], d["res_torque"])
    checks.append(("force_torque_balance", bal < 10 * s.tol, f"max residual {bal:.3e}"))
    if len(inc.centers) and len(sols) >= 2:
        problem = StokesProblem(sols[0].grid, sols[0].labels, s.preconditioner)
        basis = StrainBasis(cfg.dim)
        lin = linearity_discrepancy(problem, basis.elements[0], basis.elements[1], tol=s.tol)
        checks.append(("linearity", lin < 10 * s.tol, f"energy-norm discrepancy {lin:.3e}"))
    return checks


def run_validate(cfg: RunConfig, out: Path) -> ModeResult:
    results = [invariant_checks(cfg, seed) for seed in cfg.seeds]
    path = out / "validate.csv"
    failed = []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "check", "passed", "detail"])
        for seed, checks in zip(cfg.seeds, results):
            for name, ok, detail in checks:
                w.writerow([seed, name, int(ok), detail])
                print(f"{'PASS' if ok else 'FAIL'} seed={seed} {name}: {detail}")
                if not ok:
                    failed.append(f"seed {seed}: {name}")
    return ModeResult([path], failed)


MODES = {
    "effective": run_effective,
    "dilute": run_dilute,
    "ensemble": run_ensemble,
    "twoscale": run_twoscale,
    "validate": run_validate,
}


# -- manifest and entry point -----------------------------------------------------


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, cfg: RunConfig, artifacts: Sequence[Path], failed: Sequence[str]) -> Path:
    from . import __version__

    manifest = {
        "package_version": __version__,
        "config": cfg.resolved(),
        "artifacts": {str(p.relative_to(out)): sha256(p) for p in sorted(artifacts)},
        "failed_invariants": list(failed),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stokes-rve", description="Homogenization of rigid-particle Stokes suspensions.")
    p.add_argument("mode", choices=sorted(MODES))
    p.add_argument("--config", required=True, help="INI configuration file")
    p.add_argument("--seed-override", type=int, default=None, help="run a single seed instead of the configured list")
    p.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
    p.add_argument("--log-level", choices=("info", "debug"), default="info")
    return p


def run(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = MODES[cfg.mode](cfg, out)
    except StokesRVEError as exc:
        log.error("%s failed: %s: %s", cfg.mode, type(exc).__name__, exc)
        return EXIT_SOLVER
    write_manifest(out, cfg, result.artifacts, result.failed)
    if result.failed:
        log.error("%d invariant(s) failed: %s", len(result.failed), "; ".join(result.failed))
        return EXIT_INVARIANT
    log.info("%s done, artifacts in %s", cfg.mode, out)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.log_level == "debug" else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config, args.mode)
    except ConfigParseError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    if args.seed_override is not None:
        if args.seed_override < 0:
            log.error("config error: --seed-override must be non-negative")
            return EXIT_CONFIG
        cfg = replace(cfg, seeds=[args.seed_override])
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
