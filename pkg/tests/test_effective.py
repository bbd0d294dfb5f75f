import math

import numpy as np
import pytest

from stokes_rve.corrector import StokesProblem
from stokes_rve.effective import (
    StrainBasis,
    compute_effective,
    csv_header,
    effective_pressure_coefficient,
    effective_tensor,
    ensemble_stats,
    linearity_discrepancy,
    moment_tensor,
    polarization_error,
    read_coefficients_csv,
    single_inclusion_cell,
    write_coefficients_csv,
)
from stokes_rve.errors import InconsistentInputs
from stokes_rve.geometry import InclusionSet, perturbed_lattice_generate, rsa_generate


@pytest.mark.parametrize("dim", [2, 3])
def test_basis_is_orthonormal_and_trace_free(dim):
    basis = StrainBasis(dim)
    E = basis.elements
    assert len(E) == basis.m == dim * (dim + 1) // 2 - 1
    gram = np.array([[np.sum(a * b) for b in E] for a in E])
    assert np.allclose(gram, np.eye(basis.m))
    for M in E:
        assert np.allclose(M, M.T) and abs(np.trace(M)) < 1e-15
    rng = np.random.default_rng(0)
    X = rng.standard_normal((dim, dim))
    X = X + X.T
    X -= np.trace(X) / dim * np.eye(dim)
    assert np.allclose(basis.matrix(basis.coordinates(X)), X)


def test_empty_cell_gives_identity():
    inc = InclusionSet(2, 16.0, np.empty((0, 2)), 0.2)
    coeffs, sols = compute_effective(inc, 64)
    assert np.abs(coeffs.B_matrix - np.eye(2)).max() < 1e-10
    assert np.all(coeffs.b_vector == 0.0)


@pytest.fixture(scope="module")
def rsa_cell():
    inc = rsa_generate(2, 16.0, 0.15, 0.2, 1)
    return compute_effective(inc, 128)


def test_effective_tensor_properties(rsa_cell):
    coeffs, sols = rsa_cell
    B = coeffs.B_matrix
    assert np.allclose(B, B.T)
    assert coeffs.eigenvalues().min() >= 1.0
    for i, s in enumerate(sols):
        assert B[i, i] == pytest.approx(s.energy, rel=1e-10)
    d = coeffs.diagnostics
    assert d["reciprocity_error"] < 1e-7
    assert d["moment_form_error"] < 1e-7
    assert d["energy_res"] < 1e-8
    assert d["mean_grad_res"] < 1e-9
    assert d["mean_pressure"] < 1e-10


def test_moment_tensor_matches_bilinear_form(rsa_cell):
    coeffs, sols = rsa_cell
    M = moment_tensor(sols)
    assert np.abs(M - coeffs.B_matrix).max() < 1e-8


def test_polarization_and_linearity():
    inc = rsa_generate(2, 16.0, 0.1, 0.2, 2)
    coeffs, sols = compute_effective(inc, 64)
    problem = StokesProblem(sols[0].grid, sols[0].labels)
    basis = StrainBasis(2)
    assert polarization_error(problem, coeffs.B_matrix, basis) < 1e-8
    assert linearity_discrepancy(problem, basis.elements[0], basis.elements[1]) < 1e-8


def test_surface_and_volume_paths_agree_on_anisotropic_lattice():
    inc = perturbed_lattice_generate(2, 16.0, (3.2, 4.0), 0.3, 0.2, seed=1)
    coeffs, sols = compute_effective(inc, 128, surface=True)
    b_vol, _ = effective_pressure_coefficient(sols, method="volume")
    b_surf, _ = effective_pressure_coefficient(sols, method="surface")
    assert np.linalg.norm(b_vol) > 0.05
    h = 16.0 / 128
    assert np.linalg.norm(b_surf - b_vol) < 5 * h * np.linalg.norm(b_vol)
    assert coeffs.diagnostics["z_identity_error"] < 5 * h


def test_mismatched_solutions_rejected(rsa_cell):
    _, sols = rsa_cell
    other = compute_effective(rsa_generate(2, 16.0, 0.1, 0.2, 5), 64)[1]
    with pytest.raises(InconsistentInputs):
        effective_tensor([sols[0], other[1]])
    with pytest.raises(InconsistentInputs):
        effective_tensor(sols[::-1])


def test_single_inclusion_cell_fraction():
    inc = single_inclusion_cell(2, 0.02, 0.2)
    assert inc.volume_fraction == pytest.approx(0.02)
    assert inc.n_centers == 1


def test_ensemble_with_empty_cells_has_zero_variance():
    rows = ensemble_stats(2, 0.0, 0.2, [0, 1], [8.0, 16.0], 0.25)
    for r in rows:
        assert np.all(r.std_B == 0.0) and np.allclose(r.mean_B, np.eye(2))
    with pytest.raises(InconsistentInputs):
        ensemble_stats(2, 0.1, 0.2, [0], [8.0], 0.25)


def test_csv_round_trip_and_determinism(tmp_path, rsa_cell):
    coeffs, _ = rsa_cell
    assert csv_header(2) == [
        "seed", "L", "N", "lambda", "B_11", "B_12", "B_21", "B_22",
        "b_1", "b_2", "res_force", "res_torque", "iters",
    ]
    write_coefficients_csv(tmp_path / "a.csv", [coeffs])
    again, _ = compute_effective(rsa_generate(2, 16.0, 0.15, 0.2, 1), 128)
    write_coefficients_csv(tmp_path / "b.csv", [again])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    row = read_coefficients_csv(tmp_path / "a.csv")[0]
    assert row["B_12"] == coeffs.B_matrix[0, 1]
    assert row["b_2"] == coeffs.b_vector[1]


def test_shear_eigenvalue_bracket():
    # 2D RSA, lambda = 0.1: dilute slope 2 plus a positive second-order term
    means = []
    for seed in range(8):
        coeffs, _ = compute_effective(rsa_generate(2, 32.0, 0.10, 0.2, seed), 256, surface=False)
        means.append(coeffs.eigenvalues().mean())
    mean = float(np.mean(means))
    assert 1.18 < mean < 1.30
    assert math.isfinite(mean)
