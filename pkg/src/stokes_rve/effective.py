"""Effective viscosity ``B`` and pressure coefficient ``b`` from periodic correctors.

``B`` is the matrix of the bilinear form ``E':B E = <(D psi_E' + E'):(D psi_E + E)>``
in an orthonormal basis of trace-free symmetric matrices.  ``b`` follows from
the trace of the mean traction moment, ``b:E = -(1/d) tr <Z_E>``.  Traction
moments are assembled two ways: from the discrete reaction on rigid faces
(volume form) and from finite-difference stresses on the staircase boundary
(surface form).
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corrector import DEFAULT_TOL, CorrectorSolution, StokesProblem, check_strain
from .errors import InconsistentInputs
from .geometry import InclusionSet, ball_volume, rsa_generate
from .grid import FLUID, Grid, rasterize, strain_operators, strain_weights

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StrainBasis:
    """Canonical orthonormal basis of trace-free symmetric ``d x d`` matrices.

    2D: ``diag(1,-1)/sqrt2``, ``(e12+e21)/sqrt2``.
    3D: ``diag(1,-1,0)/sqrt2``, ``diag(1,1,-2)/sqrt6``, then the off-diagonal
    elements for the pairs (0,1), (0,2), (1,2), each scaled by ``1/sqrt2``.
    """

    dim: int

    @property
    def elements(self) -> list[np.ndarray]:
        d = self.dim
        out = []
        if d == 2:
            out.append(np.diag([1.0, -1.0]) / math.sqrt(2))
        elif d == 3:
            out.append(np.diag([1.0, -1.0, 0.0]) / math.sqrt(2))
            out.append(np.diag([1.0, 1.0, -2.0]) / math.sqrt(6))
        else:
            raise InconsistentInputs(f"unsupported dimension {d}")
        for a in range(d):
            for b in range(a + 1, d):
                E = np.zeros((d, d))
                E[a, b] = E[b, a] = 1.0 / math.sqrt(2)
                out.append(E)
        return out

    @property
    def m(self) -> int:
        return self.dim * (self.dim + 1) // 2 - 1

    def coordinates(self, M: np.ndarray) -> np.ndarray:
        return np.array([float(np.sum(E * M)) for E in self.elements])

    def matrix(self, coords: Sequence[float]) -> np.ndarray:
        return sum(c * E for c, E in zip(coords, self.elements))


# -- bilinear assembly --------------------------------------------------------


def _strain_samples(sol: CorrectorSolution) -> dict[tuple[int, int], np.ndarray]:
    flat = sol.psi.flat()
    return {pair: op @ flat + sol.E[pair] for pair, op in strain_operators(sol.grid).items()}


def _bilinear(grid: Grid, sa: dict, sb: dict) -> float:
    total = 0.0
    for pair in sa:
        total += float(strain_weights(grid, pair) @ (sa[pair] * sb[pair]))
    return total * grid.cell_volume / grid.volume


def _check_same_geometry(solutions: Sequence[CorrectorSolution]) -> None:
    if not solutions:
        raise InconsistentInputs("no corrector solutions given")
    g0, l0 = solutions[0].grid, solutions[0].labels
    for s in solutions[1:]:
        if s.grid != g0 or s.labels is not l0 and not np.array_equal(s.labels.cells, l0.cells):
            raise InconsistentInputs("corrector solutions live on different grids or geometries")


def effective_tensor(solutions: Sequence[CorrectorSolution], basis: StrainBasis | None = None) -> np.ndarray:
    """``B[i, j] = <(D psi_i + E_i):(D psi_j + E_j)>`` for solutions ordered like ``basis``."""
    _check_same_geometry(solutions)
    grid = solutions[0].grid
    basis = basis or StrainBasis(grid.dim)
    if len(solutions) != basis.m:
        raise InconsistentInputs(f"expected {basis.m} solutions, got {len(solutions)}")
    for s, E in zip(solutions, basis.elements):
        if not np.allclose(s.E, E, atol=1e-14):
            raise InconsistentInputs("solutions are not ordered like the strain basis")
    samples = [_strain_samples(s) for s in solutions]
    m = basis.m
    B = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            B[i, j] = B[j, i] = _bilinear(grid, samples[i], samples[j])
    # the diagonal must agree with the energy evaluated from the matrix form
    for i, s in enumerate(solutions):
        if abs(B[i, i] - s.energy) > 1e-10 * max(1.0, abs(B[i, i])):
            raise InconsistentInputs(
                f"diagonal entry {i} ({B[i, i]:.15g}) disagrees with solution energy {s.energy:.15g}"
            )
    return B


def moment_tensor(solutions: Sequence[CorrectorSolution], basis: StrainBasis | None = None) -> np.ndarray:
    """``M[i, j] = E_i:E_j - sum_n E_i : Z_n(psi_j) / (2 |cell|)`` from traction moments.

    Each column uses one corrector only, so ``M`` is not symmetric by
    construction; its symmetry (reciprocity) and agreement with ``B`` are
    independent checks of the solves.
    """
    _check_same_geometry(solutions)
    basis = basis or StrainBasis(solutions[0].grid.dim)
    vol = solutions[0].grid.volume
    E = basis.elements
    M = np.empty((basis.m, basis.m))
    for j, sol in enumerate(solutions):
        for i in range(basis.m):
            work = sum(float(np.sum(E[i] * Z)) for Z in sol.moments.values())
            M[i, j] = float(np.sum(E[i] * E[j])) - work / (2.0 * vol)
    return M


# -- traction moments ---------------------------------------------------------


@dataclass
class ZFieldSummary:
    """Per-inclusion traction moments ``Z_n`` and their cell average."""

    moments: np.ndarray  # (n_inclusions, d, d)
    inclusions: np.ndarray
    mean: np.ndarray
    method: str

    @property
    def skew_residual(self) -> float:
        """``|skew(<Z>)| / |<Z>|``; zero by torque balance."""
        nrm = np.linalg.norm(self.mean)
        if nrm == 0:
            return 0.0
        return float(np.linalg.norm(0.5 * (self.mean - self.mean.T)) / nrm)

    def trace_coefficient(self) -> float:
        """``b:E = -(1/d) tr <Z_E>``."""
        return -float(np.trace(self.mean)) / self.mean.shape[0]


def volume_moments(sol: CorrectorSolution) -> ZFieldSummary:
    """Moments from the discrete reaction on rigid faces (Galerkin form)."""
    d = sol.grid.dim
    keys = sorted(sol.moments)
    Z = np.array([sol.moments[n] for n in keys]).reshape(-1, d, d)
    return ZFieldSummary(Z, np.array(keys, dtype=int), Z.sum(axis=0) / sol.grid.volume, "volume")


def surface_moments(sol: CorrectorSolution) -> ZFieldSummary:
    """Moments ``-sum h^(d-1) (sigma nu) (x_F - x_n)`` over the staircase boundary.

    For a face ``F`` between a cell of inclusion ``n`` and a cell outside it,
    with outward normal ``s e_k``, the stress column ``sigma[:, k]`` uses

    * ``2 (D_kk + E_kk)`` from the outer cell and the pressure extrapolated
      linearly to ``F`` from the two nearest outer cells,
    * ``d_i psi_k`` as a centered difference along the face,
    * ``d_k psi_i`` as a difference of cell-averaged ``psi_i`` across ``F``.
    """
    grid = sol.grid
    if not grid.periodic:
        raise InconsistentInputs("surface moments are assembled on periodic grids")
    d, h = grid.dim, grid.h
    labels = sol.labels
    cells = labels.cells.reshape(grid.cell_shape)
    E = sol.E
    has_p = sol.pressure_mask
    p = np.where(has_p, sol.sigma, 0.0)
    U = [sol.psi.components[k] for k in range(d)]
    ubar = [0.5 * (U[i] + np.roll(U[i], -1, axis=i)) for i in range(d)]
    dkk = [(np.roll(U[k], -1, axis=k) - U[k]) / h for k in range(d)]

    inclusions = np.unique(cells[cells >= 0])
    index = np.full(max(labels.n_inclusions, 1), -1)
    index[inclusions] = np.arange(len(inclusions))
    Z = np.zeros((len(inclusions), d, d))
    area = h ** (d - 1)
    for k in range(d):
        lower = np.roll(cells, 1, axis=k)  # face i along k separates cells i-1 and i
        upper = cells
        centers = grid.face_centers(k).reshape(*grid.cell_shape, d)
        tangential = {}
        for i in range(d):
            if i != k:
                di_uk = (np.roll(U[k], -1, axis=i) - np.roll(U[k], 1, axis=i)) / (2 * h)
                dk_ui = (ubar[i] - np.roll(ubar[i], 1, axis=k)) / h
                tangential[i] = dk_ui + di_uk + 2 * E[i, k]
        for s in (1, -1):
            inner, outer = (lower, upper) if s == 1 else (upper, lower)
            mask = (inner >= 0) & (outer != inner)
            if not mask.any():
                continue
            near = 0 if s == 1 else 1  # roll bringing the outer cell onto the face
            far = near - s
            p1 = np.roll(p, near, axis=k)[mask]
            p2 = np.roll(p, far, axis=k)[mask]
            usable = np.roll(has_p, far, axis=k)[mask]
            p_face = np.where(usable, 1.5 * p1 - 0.5 * p2, p1)
            t = np.empty((int(mask.sum()), d))
            t[:, k] = 2 * (np.roll(dkk[k], near, axis=k)[mask] + E[k, k]) - p_face
            for i, field_i in tangential.items():
                t[:, i] = field_i[mask]
            t *= s
            owners = inner[mask]
            r = labels.displacement(centers[mask], owners)
            np.add.at(Z, index[owners], -area * t[:, :, None] * r[:, None, :])
    return ZFieldSummary(Z, inclusions.astype(int), Z.sum(axis=0) / grid.volume, "surface")


def z_identity_error(
    surface: ZFieldSummary, B: np.ndarray, b_vector: np.ndarray, basis: StrainBasis, i: int
) -> float:
    """Relative mismatch between the surface ``<Z_E>`` and ``2(Id - B)E - (b:E) Id``."""
    d = basis.dim
    Bop = basis.matrix(B[:, i])  # B applied to E_i, as a matrix
    target = 2 * (basis.elements[i] - Bop) - b_vector[i] * np.eye(d)
    scale = np.linalg.norm(target)
    return float(np.linalg.norm(surface.mean - target) / scale) if scale > 0 else float(np.linalg.norm(surface.mean))


def effective_pressure_coefficient(
    solutions: Sequence[CorrectorSolution],
    basis: StrainBasis | None = None,
    method: str = "volume",
) -> tuple[np.ndarray, list[ZFieldSummary]]:
    """``b_i = b:E_i`` for each basis element, plus the moment summaries used."""
    _check_same_geometry(solutions)
    basis = basis or StrainBasis(solutions[0].grid.dim)
    if method == "volume":
        summaries = [volume_moments(s) for s in solutions]
    elif method == "surface":
        summaries = [surface_moments(s) for s in solutions]
    else:
        raise InconsistentInputs(f"unknown moment method {method!r}")
    b = np.array([z.trace_coefficient() for z in summaries])
    return b, summaries


# -- one realization ----------------------------------------------------------


@dataclass
class EffectiveCoefficients:
    B_matrix: np.ndarray
    b_vector: np.ndarray
    lam: float
    meta: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        m = len(self.b_vector)
        return 2 if m == 2 else 3

    @property
    def b_matrix(self) -> np.ndarray:
        return StrainBasis(self.dim).matrix(self.b_vector)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.B_matrix + self.B_matrix.T))

    def symmetry_error(self) -> float:
        return float(np.linalg.norm(self.B_matrix - self.B_matrix.T) / np.linalg.norm(self.B_matrix))

    def isotropic_fit(self) -> tuple[float, float]:
        """Shear modulus ``mean eigenvalue`` and relative anisotropy residual."""
        m = self.B_matrix.shape[0]
        mu = float(np.trace(self.B_matrix) / m)
        resid = float(np.linalg.norm(self.B_matrix - mu * np.eye(m)) / np.linalg.norm(self.B_matrix))
        return mu, resid


def compute_effective(
    inclusions: InclusionSet,
    n: int,
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
    preconditioner: str = "blockdiag",
    strict: bool = False,
    surface: bool = True,
) -> tuple[EffectiveCoefficients, list[CorrectorSolution]]:
    """Solve all basis correctors on an ``n^d`` grid and assemble ``B`` and ``b``."""
    grid = Grid(inclusions.dim, n, inclusions.cell_length)
    labels = rasterize(inclusions, grid, strict=strict)
    basis = StrainBasis(grid.dim)
    if labels.n_inclusions == 0:
        sols = [_trivial_solution(grid, labels, E) for E in basis.elements]
    else:
        problem = StokesProblem(grid, labels, preconditioner)
        sols = [problem.solve(E=E, tol=tol, max_iter=max_iter) for E in basis.elements]
    B = effective_tensor(sols, basis)
    b, vol = effective_pressure_coefficient(sols, basis, "volume")
    M = moment_tensor(sols, basis)
    diag = {
        "reciprocity_error": float(np.linalg.norm(M - M.T) / np.linalg.norm(M)),
        "moment_form_error": float(np.abs(M - B).max()),
        "res_force": max(s.residuals["force_res"] for s in sols),
        "res_torque": max(s.residuals["torque_res"] for s in sols),
        "energy_res": max(s.residuals["energy_res"] for s in sols),
        "iters": sum(s.iterations for s in sols),
        "skew_residual": max(z.skew_residual for z in vol),
        "mean_grad_res": max(s.residuals["mean_grad_res"] for s in sols),
        "mean_pressure": max(abs(float(np.mean(np.where(s.labels.cells.reshape(s.grid.cell_shape) == FLUID, s.sigma, 0.0)))) for s in sols),
    }
    if surface and labels.n_inclusions:
        b_surf, surf = effective_pressure_coefficient(sols, basis, "surface")
        diag["b_surface"] = b_surf
        diag["z_identity_error"] = max(z_identity_error(z, B, b, basis, i) for i, z in enumerate(surf))
        diag["surface_skew_residual"] = max(z.skew_residual for z in surf)
    meta = {"seed": inclusions.seed, "L": inclusions.cell_length, "N": n, "tol": tol}
    return EffectiveCoefficients(B, b, inclusions.volume_fraction, meta, diag), sols


def _trivial_solution(grid, labels, E) -> CorrectorSolution:
    """Exact corrector without inclusions (``psi = 0``, zero pressure)."""
    from .grid import StaggeredField

    return CorrectorSolution(
        grid=grid,
        labels=labels,
        psi=StaggeredField.zeros(grid),
        sigma=np.zeros(grid.cell_shape),
        pressure_mask=np.ones(grid.cell_shape, dtype=bool),
        rigid={},
        E=check_strain(E, grid.dim),
        residuals={k: 0.0 for k in ("relative", "momentum_res", "div_res", "force_res", "torque_res",
                                    "mean_grad_res", "energy_res", "max_div")},
        iterations=0,
        energy=float(np.sum(E * E)),
        reaction=np.zeros(grid.n_faces),
        forces={},
        moments={},
    )


# -- consistency checks -------------------------------------------------------


def energy_norm(problem: StokesProblem, u: np.ndarray) -> float:
    """``sqrt(<|D u|^2>)`` of a periodic face field."""
    return math.sqrt(max(float(u @ (problem.A @ u)), 0.0) / (2 * problem.grid.volume))


def linearity_discrepancy(
    problem: StokesProblem, E1: np.ndarray, E2: np.ndarray, tol: float = DEFAULT_TOL
) -> float:
    """Energy norm of ``psi_{E1+E2} - psi_E1 - psi_E2``."""
    s1 = problem.solve(E=E1, tol=tol)
    s2 = problem.solve(E=E2, tol=tol)
    s12 = problem.solve(E=np.asarray(E1) + np.asarray(E2), tol=tol)
    diff = s12.psi.flat() - s1.psi.flat() - s2.psi.flat()
    return energy_norm(problem, diff)


def polarization_error(problem: StokesProblem, B: np.ndarray, basis: StrainBasis, tol: float = DEFAULT_TOL) -> float:
    """Largest deviation of off-diagonal ``B`` from polarizing the quadratic form.

    ``B_ij = q((E_i+E_j)/sqrt2) - (B_ii + B_jj)/2`` with ``q`` the solved energy.
    """
    worst = 0.0
    for i in range(basis.m):
        for j in range(i + 1, basis.m):
            E = (basis.elements[i] + basis.elements[j]) / math.sqrt(2)
            q = problem.solve(E=E, tol=tol).energy
            worst = max(worst, abs(q - 0.5 * (B[i, i] + B[j, j]) - B[i, j]))
    return worst


# -- ensembles ----------------------------------------------------------------


@dataclass
class DiluteFit:
    slope: float
    ci: tuple[float, float]
    lambdas: np.ndarray
    excess: np.ndarray  # (n_lambda, n_seeds): mean eigenvalue - 1
    realized: np.ndarray  # realized volume fractions, same shape
    worst: dict = field(default_factory=dict)  # max energy_res, res_force, res_torque over all solves


def single_inclusion_cell(dim: int, lam: float, gap: float, seed: int = 0, h_hint: float | None = None) -> InclusionSet:
    """One unit ball in a cell with volume fraction ``lam``; ``seed`` jitters the center."""
    L = (ball_volume(dim) / lam) ** (1.0 / dim)
    center = np.full(dim, L / 2)
    if seed:
        rng = np.random.default_rng(seed)
        center = center + rng.uniform(-0.5, 0.5, size=dim) * (h_hint if h_hint else 0.0)
    return InclusionSet(dim=dim, cell_length=L, centers=[center], gap=gap, seed=seed)


def dilute_slope(
    lambdas: Sequence[float] = (0.005, 0.01, 0.02),
    n: int = 512,
    seeds: Sequence[int] = (0, 1, 2),
    dim: int = 2,
    gap: float = 0.2,
    tol: float = DEFAULT_TOL,
    use_realized: bool = False,
) -> DiluteFit:
    """Fit ``mean eigenvalue(B) - 1 = c * lambda`` on single-inclusion cells.

    Seeds shift the center by up to half a grid step, which averages out
    the sub-cell placement of the staircase.  The interval is a 95% normal
    interval over per-seed slopes.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    excess = np.zeros((len(lambdas), len(seeds)))
    realized = np.zeros_like(excess)
    worst = {"energy_res": 0.0, "res_force": 0.0, "res_torque": 0.0}
    for a, lam in enumerate(lambdas):
        L = (ball_volume(dim) / lam) ** (1.0 / dim)
        for s_idx, seed in enumerate(seeds):
            inc = single_inclusion_cell(dim, lam, gap, seed, h_hint=L / n)
            coeffs, sols = compute_effective(inc, n, tol=tol, surface=False)
            excess[a, s_idx] = float(np.mean(coeffs.eigenvalues())) - 1.0
            for key in worst:
                worst[key] = max(worst[key], float(coeffs.diagnostics[key]))
            realized[a, s_idx] = sols[0].labels.labeled_fraction() if use_realized else lam
            log.info("dilute lam=%g seed=%d excess=%.6g", lam, seed, excess[a, s_idx])
    per_seed = np.sum(realized * excess, axis=0) / np.sum(realized**2, axis=0)
    slope = float(np.sum(realized * excess) / np.sum(realized**2))
    if len(seeds) > 1:
        half = 1.96 * float(np.std(per_seed, ddof=1)) / math.sqrt(len(seeds))
    else:
        half = 0.0
    return DiluteFit(slope, (slope - half, slope + half), lambdas, excess, realized, worst)


@dataclass
class EnsembleRow:
    L: float
    n_seeds: int
    mean_B: np.ndarray
    std_B: np.ndarray
    mean_b: np.ndarray
    std_b: np.ndarray
    results: list[EffectiveCoefficients]


def ensemble_stats(
    dim: int,
    lam: float,
    gap: float,
    seeds: Sequence[int],
    L_ladder: Sequence[float],
    h: float,
    tol: float = DEFAULT_TOL,
    generator=None,
) -> list[EnsembleRow]:
    """Mean and sample stddev of ``B`` and ``b`` over seeds for each cell size.

    The grid step ``h`` is kept fixed, so ``N = L / h`` must be an integer.
    """
    if len(seeds) < 2:
        raise InconsistentInputs("ensemble statistics need at least two seeds")
    generator = generator or (lambda L, seed: rsa_generate(dim, L, lam, gap, seed))
    rows = []
    for L in L_ladder:
        n = int(round(L / h))
        if abs(n * h - L) > 1e-9 * L:
            raise InconsistentInputs(f"h = {h} does not divide L = {L}")
        results = [compute_effective(generator(L, seed), n, tol=tol, surface=False)[0] for seed in seeds]
        Bs = np.array([r.B_matrix for r in results])
        bs = np.array([r.b_vector for r in results])
        rows.append(
            EnsembleRow(L, len(seeds), Bs.mean(0), Bs.std(0, ddof=1), bs.mean(0), bs.std(0, ddof=1), results)
        )
    return rows


# -- output -------------------------------------------------------------------


def csv_header(m: int) -> list[str]:
    head = ["seed", "L", "N", "lambda"]
    head += [f"B_{i + 1}{j + 1}" for i in range(m) for j in range(m)]
    head += [f"b_{i + 1}" for i in range(m)]
    head += ["res_force", "res_torque", "iters"]
    return head


def _g17(x) -> str:
    return f"{float(x) + 0.0:.17g}"  # no "-0"


def write_coefficients_csv(path: str | Path, results: Iterable[EffectiveCoefficients]) -> None:
    results = list(results)
    if not results:
        raise InconsistentInputs("nothing to write")
    m = results[0].B_matrix.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(csv_header(m))
        for r in results:
            row = [str(r.meta.get("seed", 0)), _g17(r.meta["L"]), str(r.meta["N"]), _g17(r.lam)]
            row += [_g17(x) for x in r.B_matrix.ravel()]
            row += [_g17(x) for x in r.b_vector]
            row += [_g17(r.diagnostics.get("res_force", 0.0)), _g17(r.diagnostics.get("res_torque", 0.0))]
            row.append(str(int(r.diagnostics.get("iters", 0))))
            w.writerow(row)


def read_coefficients_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def summary_dict(results: Sequence[EffectiveCoefficients]) -> dict:
    Bs = np.array([r.B_matrix for r in results])
    bs = np.array([r.b_vector for r in results])
    ddof = 1 if len(results) > 1 else 0
    out = {
        "n_realizations": len(results),
        "B_mean": Bs.mean(0).tolist(),
        "B_std": Bs.std(0, ddof=ddof).tolist(),
        "b_mean": bs.mean(0).tolist(),
        "b_std": bs.std(0, ddof=ddof).tolist(),
        "lambda_mean": float(np.mean([r.lam for r in results])),
        "min_eigenvalue": float(min(r.eigenvalues().min() for r in results)),
    }
    return out


def write_summary_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)}")
