"""Acceptance criteria 1-11.

Each test records one pass/fail line, printed in the pytest terminal summary
under "acceptance criteria".  Run alone with ``pytest tests/test_acceptance.py``.
"""

import math
import time

import numpy as np
import pytest
from conftest import record

from stokes_rve.corrector import DEFAULT_TOL, StokesProblem, solve_weak_sedimentation
from stokes_rve.effective import StrainBasis, compute_effective, dilute_slope, ensemble_stats, linearity_discrepancy
from stokes_rve.geometry import InclusionSet, perturbed_lattice_generate, rsa_generate
from stokes_rve.grid import DIRICHLET, Grid
from stokes_rve.twoscale import default_forcing, empty_labels, prepare_cell, run_ladder, solve_homogenized

TOL = DEFAULT_TOL
SEEDS8 = range(8)


def timed(func, *args, **kwargs):
    t0 = time.perf_counter()
    out = func(*args, **kwargs)
    return out, time.perf_counter() - t0


# -- shared realizations ----------------------------------------------------------


def _rsa_batch(n):
    out = []
    for seed in SEEDS8:
        inc = rsa_generate(2, 32.0, 0.15, 0.2, seed)
        out.append(compute_effective(inc, n, tol=TOL, surface=True)[0])
    return out


@pytest.fixture(scope="module")
def rsa_256():
    return timed(_rsa_batch, 256)


@pytest.fixture(scope="module")
def rsa_128():
    return timed(_rsa_batch, 128)


@pytest.fixture(scope="module")
def cell_9():
    # fixed protocol: package default seed 0, L = 16, N_cell = 256 (h = 1/16 <= delta/2)
    return prepare_cell(rsa_generate(2, 16.0, 0.1, 0.2, 0), 256, tol=TOL)


@pytest.fixture(scope="module")
def ladder_9(cell_9):
    return timed(run_ladder, cell_9, (1 / 4, 1 / 8, 1 / 16), f=default_forcing, tol=TOL)


def smooth_buoyancy(x):
    return np.stack([np.cos(np.pi * x[:, 1]), np.sin(np.pi * x[:, 0])], axis=1)


@pytest.fixture(scope="module")
def ladder_11(cell_9):
    return run_ladder(cell_9, (1 / 4, 1 / 8, 1 / 16), f=default_forcing, g=smooth_buoyancy, tol=TOL)


@pytest.fixture(scope="module")
def linearity_6():
    out = []
    rng = np.random.default_rng(6)
    basis = StrainBasis(2)
    for seed in range(3):
        inc = rsa_generate(2, 16.0, 0.1, 0.2, seed)
        coeffs, sols = compute_effective(inc, 128, tol=TOL, surface=False)
        problem = StokesProblem(sols[0].grid, sols[0].labels)
        E1 = basis.matrix(rng.standard_normal(basis.m))
        E2 = basis.matrix(rng.standard_normal(basis.m))
        out.append((linearity_discrepancy(problem, E1, E2, tol=TOL), coeffs))
    return out


@pytest.fixture(scope="module")
def dilute_5():
    return timed(dilute_slope, (0.005, 0.01, 0.02), n=512, seeds=(0, 1, 2), dim=2, gap=0.2, tol=TOL)


# -- criteria -----------------------------------------------------------------------


def test_criterion_01_empty_suspension_identity():
    inc = InclusionSet(2, 16.0, np.empty((0, 2)), 0.2)
    (coeffs, _), secs = timed(compute_effective, inc, 64, tol=TOL)
    err = float(np.abs(coeffs.B_matrix - np.eye(2)).max())
    b_zero = bool(np.all(coeffs.b_vector == 0.0))
    ok = err < 1e-9 and b_zero and secs < 10
    record(1, ok, f"max|B-I| = {err:.2e}, b exactly 0: {b_zero}, {secs:.2f} s")
    assert ok


def test_criterion_02_coercivity_and_symmetry(rsa_256):
    results, secs = rsa_256
    eig = min(float(c.eigenvalues().min()) for c in results)
    sym = max(c.symmetry_error() for c in results)
    recip = max(c.diagnostics["reciprocity_error"] for c in results)
    ok = eig >= 1 - 1e-6 and sym < 1e-7 and recip < 1e-7 and secs < 600
    record(
        2, ok,
        f"min eigenvalue {eig:.6f}, |B-B^T|/|B| = {sym:.1e}, reciprocity asymmetry {recip:.1e}, "
        f"8 realizations in {secs:.0f} s",
    )
    assert ok


def test_criterion_03_energy_identity(rsa_256, rsa_128, linearity_6, dilute_5, ladder_9, ladder_11):
    worst = dilute_5[0].worst["energy_res"]
    for c in rsa_256[0] + rsa_128[0] + [c for _, c in linearity_6]:
        worst = max(worst, c.diagnostics["energy_res"])
    for row in ladder_9[0].rows + ladder_11.rows:
        worst = max(worst, row.energy_res)
    ok = worst < 1e-8
    record(3, ok, f"worst relative energy residual {worst:.2e} over all solves")
    assert ok


def test_criterion_04_z_identity(rsa_128, rsa_256):
    e128 = np.array([c.diagnostics["z_identity_error"] for c in rsa_128[0]])
    e256 = np.array([c.diagnostics["z_identity_error"] for c in rsa_256[0]])
    h128, h256 = 32 / 128, 32 / 256
    within = bool(np.all(e128 < 5 * h128) and np.all(e256 < 5 * h256))
    decreasing = bool(np.all(e256 < e128))
    ok = within and decreasing
    record(
        4, ok,
        f"max error {e128.max():.4f} (N=128, bound {5 * h128}), {e256.max():.4f} (N=256, bound {5 * h256}); "
        f"decreasing for {int(np.sum(e256 < e128))}/8",
    )
    assert ok


def dilute_oracle_2d() -> float:
    """First-order coefficient of a rigid disk in 2D pure strain.

    The stresslet of a rigid cylinder of radius a in a strain E is
    S = 4 pi a^2 E (unit viscosity).  The dissipation excess per unit area
    at volume fraction lam is lam * S:E / (2 pi a^2 |E|^2), so c = 2.
    """
    a = 1.0
    stresslet = 4 * math.pi * a**2
    return stresslet / (2 * math.pi * a**2)


def test_criterion_05_dilute_slope(dilute_5):
    oracle = dilute_oracle_2d()
    fit, secs = dilute_5
    rel = abs(fit.slope - oracle) / oracle
    ok = rel < 0.10 and secs < 1200
    record(
        5, ok,
        f"c = {fit.slope:.4f} (95% CI {fit.ci[0]:.4f}..{fit.ci[1]:.4f}), oracle {oracle:g}, "
        f"rel. error {rel:.3f}, {secs:.0f} s",
    )
    assert ok


def test_criterion_06_linearity(linearity_6):
    worst = max(d for d, _ in linearity_6)
    ok = worst < 10 * TOL
    record(6, ok, f"max energy-norm discrepancy {worst:.2e} (bound {10 * TOL:.0e}) on 3 realizations")
    assert ok


def test_criterion_07_rve_convergence():
    rows = ensemble_stats(2, 0.10, 0.2, SEEDS8, (16.0, 32.0, 64.0), h=0.25, tol=TOL)
    m = rows[0].mean_B.shape[0]
    shear = m - 1  # the off-diagonal (e1 x e2) basis element
    std = [float(r.std_B[shear, shear]) for r in rows]
    ok = bool(np.all(np.diff(std) < 0))
    record(7, ok, "stddev of shear entry over 8 seeds at L = 16, 32, 64: " + ", ".join(f"{s:.5f}" for s in std))
    assert ok


def test_criterion_08_isotropy_of_b():
    bs = np.array(
        [compute_effective(rsa_generate(2, 32.0, 0.15, 0.2, s), 128, tol=TOL, surface=False)[0].b_vector for s in range(16)]
    )
    mean_norm = float(np.linalg.norm(bs.mean(0)))
    std = float(np.sqrt(np.sum(bs.var(0, ddof=1))))
    lattice = perturbed_lattice_generate(2, 32.0, (3.2, 6.4), 0.3, 0.2, seed=0)
    b_lat = float(np.linalg.norm(compute_effective(lattice, 128, tol=TOL, surface=False)[0].b_vector))
    ok = mean_norm < 2 * std and b_lat > 5 * std
    record(
        8, ok,
        f"RSA |mean b| = {mean_norm:.4f} < 2 x std {std:.4f}; lattice |b| = {b_lat:.4f} > 5 x std = {5 * std:.4f}",
    )
    assert ok


def test_criterion_09_two_scale_decay(ladder_9):
    report, secs = ladder_9
    h1 = report.column("h1_err_vel")
    p = report.column("l2_err_press")
    ok = report.decreasing("h1_err_vel") and report.decreasing("l2_err_press") and secs < 1800
    record(
        9, ok,
        "H1 " + ", ".join(f"{x:.4f}" for x in h1) + "; pressure " + ", ".join(f"{x:.4f}" for x in p)
        + f"; eps = 1/4, 1/8, 1/16; {secs:.0f} s",
    )
    assert ok


def test_criterion_10_force_torque_balance(rsa_256, rsa_128, linearity_6, dilute_5, ladder_9, ladder_11):
    worst = max(dilute_5[0].worst["res_force"], dilute_5[0].worst["res_torque"])
    for c in rsa_256[0] + rsa_128[0] + [c for _, c in linearity_6]:
        worst = max(worst, c.diagnostics["res_force"], c.diagnostics["res_torque"])
    for row in ladder_9[0].rows + ladder_11.rows:
        worst = max(worst, row.res_force, row.res_torque)
    ok = worst < 10 * TOL
    record(10, ok, f"worst per-inclusion force/torque residual {worst:.2e} (bound {10 * TOL:.0e})")
    assert ok


def _trend_down(values: np.ndarray, eps: np.ndarray) -> bool:
    """Net decrease over the ladder: last below first and positive log-log slope."""
    slope = np.polyfit(np.log(eps), np.log(values), 1)[0]
    return bool(values[-1] < values[0] and slope > 0)


def test_criterion_11_weak_sedimentation(ladder_11):
    g = Grid(2, 32, 1.0, DIRICHLET)
    gravity = lambda x: np.tile([0.0, -1.0], (len(x), 1))  # noqa: E731
    zero = lambda x: np.zeros_like(x)  # noqa: E731
    empty = solve_weak_sedimentation(g, empty_labels(g), gravity, zero, tol=TOL)
    empty_max = max(np.abs(empty.psi.flat()).max(), np.abs(empty.sigma).max())
    hom = solve_homogenized(g, 1.2 * np.eye(2), 0.1, zero, gravity, tol=TOL)
    hom_max = float(np.abs(hom.psi.flat()).max())
    eps = ladder_11.column("eps")
    weak = ladder_11.column("weak_avg_err")
    h1 = ladder_11.column("h1_err_vel")
    trend = _trend_down(weak, eps) and _trend_down(h1, eps)
    ok = empty_max == 0.0 and hom_max < 1e-10 and trend
    record(
        11, ok,
        f"no-inclusion limit max |u|,|p| = {empty_max:.1e}; constant g homogenized |u| = {hom_max:.1e}; "
        "block-average error " + ", ".join(f"{x:.5f}" for x in weak)
        + "; H1 " + ", ".join(f"{x:.4f}" for x in h1),
    )
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
