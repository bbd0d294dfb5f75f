"""Two-scale verification on the box ``U = [0, 1]^d``.

The periodic RVE (period ``L``, unit balls, ``N`` cells per side) is scaled
by ``eps`` and tiled over ``U``; balls whose enlarged copy leaves ``U`` are
dropped.  The box grid uses the spacing ``eps * L / N``, so every box face
and cell sits exactly on a tiled copy of a corrector face or cell and
``psi_E(x / eps)`` is read off by index, without interpolation.
"""

from __future__ import annotations

import csv
import functools
import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .corrector import (
    DEFAULT_TOL,
    CorrectorSolution,
    FaceData,
    StokesProblem,
    sample_faces,
    solve_eps_problem,
    solve_weak_sedimentation,
)
from .effective import StrainBasis, effective_pressure_coefficient, effective_tensor
from .errors import GridMismatch, InvalidParams
from .geometry import InclusionSet, restrict_to_box
from .grid import (
    DIRICHLET,
    FLUID,
    Grid,
    LabelField,
    StaggeredField,
    cell_to_face_average,
    laplacian_form_matrix,
    node_derivative_matrix,
    node_to_cell_matrix,
    rasterize,
    strain_operators,
    viscous_matrix,
)

log = logging.getLogger(__name__)


def default_forcing(x: np.ndarray) -> np.ndarray:
    """Smooth body force ``(sin pi x1 sin pi x2, cos pi x1 cos pi x2)`` (3D: third component ``sin pi x3``)."""
    s = np.sin(np.pi * x)
    c = np.cos(np.pi * x)
    out = np.empty_like(x)
    out[:, 0] = s[:, 0] * s[:, 1]
    out[:, 1] = c[:, 0] * c[:, 1]
    if x.shape[1] == 3:
        out[:, 2] = s[:, 2]
    return out


def empty_labels(grid: Grid) -> LabelField:
    box = ((0.0,) * grid.dim, (grid.length,) * grid.dim)
    empty = InclusionSet(grid.dim, grid.length, np.empty((0, grid.dim)), gap=0.5, box=None if grid.periodic else box)
    return rasterize(empty, grid)


# -- homogenized problem --------------------------------------------------------


def basis_strain_matrices(grid: Grid, basis: StrainBasis) -> list[sp.csr_matrix]:
    """Cells x faces matrices of ``E_i : D_h(u)``; off-diagonal strains are averaged from nodes."""
    ops = strain_operators(grid)
    mats = []
    for E in basis.elements:
        C = sp.csr_matrix((grid.n_cells, grid.n_faces))
        for k in range(grid.dim):
            if E[k, k] != 0:
                C = C + E[k, k] * ops[(k, k)]
        for j, k in grid.node_pairs:
            if E[j, k] != 0:
                C = C + 2 * E[j, k] * (node_to_cell_matrix(grid, j, k) @ ops[(j, k)])
        mats.append(C.tocsr())
    return mats


def homogenized_viscous_matrix(grid: Grid, B: np.ndarray, basis: StrainBasis | None = None) -> sp.csr_matrix:
    """SPD matrix of ``2 mu sum |D u|^2 + 2 sum_cells c(u)' (B - mu I) c(u)``.

    ``mu`` is the smallest eigenvalue of ``B`` and ``c_i(u) = E_i : D_h(u)``.
    For ``B = I`` this is exactly the plain viscous matrix.
    """
    basis = basis or StrainBasis(grid.dim)
    Bs = 0.5 * (np.asarray(B, dtype=float) + np.asarray(B, dtype=float).T)
    mu = float(np.linalg.eigvalsh(Bs).min())
    A = mu * viscous_matrix(grid)
    K = Bs - mu * np.eye(basis.m)
    if np.abs(K).max() > 0:
        C = basis_strain_matrices(grid, basis)
        extra = sum(K[i, j] * (C[i].T @ C[j]) for i in range(basis.m) for j in range(basis.m) if K[i, j] != 0)
        A = A + 2.0 * grid.cell_volume * extra
    return sp.csr_matrix(A)


def solve_homogenized(
    grid: Grid,
    B: np.ndarray,
    lam: float,
    f: FaceData,
    g: FaceData = None,
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
    preconditioner: str = "blockdiag",
) -> CorrectorSolution:
    """Dirichlet Stokes with viscosity ``2B`` and force ``(1 - lam) f + lam g``.

    The pressure has zero mean over the box.  ``b`` does not enter the
    homogenized equation; it only shifts the reconstructed pressure.
    """
    if grid.periodic:
        raise InvalidParams("the homogenized problem lives on a Dirichlet box")
    eig = np.linalg.eigvalsh(0.5 * (B + np.transpose(B)))
    if eig.min() < 1 - 1e-6:
        raise InvalidParams(f"effective tensor is not coercive (min eigenvalue {eig.min():.6g})")
    if not 0.0 <= lam < 1.0:
        raise InvalidParams("lambda must lie in [0, 1)")
    A = homogenized_viscous_matrix(grid, B)
    problem = StokesProblem(grid, empty_labels(grid), preconditioner, viscous=A)
    force = (1.0 - lam) * sample_faces(grid, f) + lam * sample_faces(grid, g)
    load = np.zeros(grid.n_faces)
    load[problem.free] = grid.cell_volume * force[problem.free]
    return problem.solve(load=load, tol=tol, max_iter=max_iter)


# -- index maps between box and cell grids --------------------------------------


def check_alignment(box_grid: Grid, cell_grid: Grid, eps: float) -> None:
    ratio = eps * cell_grid.length / box_grid.h
    if abs(ratio - cell_grid.n) > 1e-9 * cell_grid.n or any(o != 0 for o in box_grid.origin):
        raise GridMismatch(
            f"box spacing {box_grid.h:g} does not tile eps*L = {eps * cell_grid.length:g} "
            f"with {cell_grid.n} cells"
        )


def periodic_face_map(box_grid: Grid, cell_grid: Grid) -> np.ndarray:
    """Flat corrector face index for every box face (indices taken modulo ``N``)."""
    out = []
    for k in range(box_grid.dim):
        idx = np.indices(box_grid.face_shape(k)).reshape(box_grid.dim, -1) % cell_grid.n
        local = np.ravel_multi_index(tuple(idx), cell_grid.face_shape(k))
        out.append(cell_grid.face_offsets[k] + local)
    return np.concatenate(out)


def periodic_cell_map(box_grid: Grid, cell_grid: Grid) -> np.ndarray:
    idx = np.indices(box_grid.cell_shape).reshape(box_grid.dim, -1) % cell_grid.n
    return np.ravel_multi_index(tuple(idx), cell_grid.cell_shape)


def check_tiled_labels(box_labels: LabelField, cell_labels: LabelField, parent: np.ndarray, cell_map: np.ndarray) -> None:
    """Every box inclusion cell must be a tiled copy of the same periodic inclusion cell,
    and every kept inclusion must carry as many cells as its periodic parent."""
    ours = box_labels.cells
    tiled = cell_labels.cells[cell_map]
    solid = ours >= 0
    if np.any(tiled[solid] != parent[ours[solid]]):
        raise GridMismatch("box inclusion cells differ from the tiled periodic labels")
    if len(parent):
        counts = np.bincount(ours[solid], minlength=len(parent))
        ref = np.bincount(cell_labels.cells[cell_labels.cells >= 0], minlength=cell_labels.n_inclusions)
        if np.any(counts != ref[parent]):
            raise GridMismatch("a kept inclusion was rasterized differently from its periodic parent")


# -- errors -----------------------------------------------------------------------


@dataclass
class TwoScaleRow:
    eps: float
    lambda_eps: float
    h1_err_vel: float
    l2_err_press: float
    weak_avg_err: float
    l2_err_press_unshifted: float = math.nan
    h1_norm_hom: float = math.nan
    n_box: int = 0
    iterations: int = 0
    energy_res: float = math.nan
    res_force: float = math.nan
    res_torque: float = math.nan


@dataclass
class TwoScaleReport:
    rows: list[TwoScaleRow]
    seed: int
    forcing: str
    B: np.ndarray
    b: np.ndarray
    lam: float
    extra: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def decreasing(self, name: str) -> bool:
        col = self.column(name)
        return bool(np.all(np.diff(col) < 0))


@functools.lru_cache(maxsize=8)
def h1_matrix(grid: Grid) -> sp.csr_matrix:
    """Matrix of ``sum h^d |grad w|^2`` using only differences of stored values.

    Unlike the solver's Dirichlet form, no ghost values are used at the walls,
    so a nonzero tangential trace of ``w`` is not penalized.
    """
    if grid.periodic:
        return laplacian_form_matrix(grid)
    d, n = grid.dim, grid.n
    mats = []
    for k in range(d):
        op = strain_operators(grid)[(k, k)]
        mats.append(op.T @ op)
    for j, k in itertools.permutations(range(d), 2):
        op = node_derivative_matrix(grid, j, k)
        a, b = min(j, k), max(j, k)
        idx = np.indices(grid.node_shape(a, b))[k].ravel()
        w = grid.node_weights(a, b) * ((idx > 0) & (idx < n))
        mats.append(op.T @ sp.diags(w) @ op)
    return (grid.cell_volume * sum(mats)).tocsr()


def discrete_h1_norm(grid: Grid, w: np.ndarray) -> float:
    """``sqrt(sum h^d |grad w|^2 + sum h^d |w|^2)`` over the box."""
    grad2 = float(w @ (h1_matrix(grid) @ w))
    return math.sqrt(max(grad2, 0.0) + grid.cell_volume * float(w @ w))


def block_averages(grid: Grid, u: np.ndarray, blocks: int = 4) -> np.ndarray:
    """Per-component averages of a face field over a ``blocks^d`` partition of the box."""
    comps = grid.face_components()
    x = grid.all_face_centers() - np.asarray(grid.origin)
    ids = np.clip((x / grid.length * blocks).astype(int), 0, blocks - 1)
    flat = np.ravel_multi_index(tuple(ids.T), (blocks,) * grid.dim)
    out = np.zeros((blocks**grid.dim, grid.dim))
    for c in range(grid.dim):
        sel = comps == c
        sums = np.bincount(flat[sel], weights=u[sel], minlength=blocks**grid.dim)
        cnt = np.bincount(flat[sel], minlength=blocks**grid.dim)
        out[:, c] = sums / np.maximum(cnt, 1)
    return out


def two_scale_errors(
    eps_sol: CorrectorSolution,
    hom_sol: CorrectorSolution,
    correctors: Sequence[CorrectorSolution],
    b: np.ndarray,
    eps: float,
    basis: StrainBasis | None = None,
) -> TwoScaleRow:
    """Errors of the two-scale expansion for one rung of the ladder."""
    grid = eps_sol.grid
    if hom_sol.grid != grid:
        raise GridMismatch("homogenized and eps solutions live on different grids")
    cell_grid = correctors[0].grid
    check_alignment(grid, cell_grid, eps)
    basis = basis or StrainBasis(grid.dim)
    fmap = periodic_face_map(grid, cell_grid)
    cmap = periodic_cell_map(grid, cell_grid)

    u_eps = eps_sol.psi.flat()
    u_hom = hom_sol.psi.flat()
    C = basis_strain_matrices(grid, basis)
    grads = [Ci @ u_hom for Ci in C]  # E_i : grad u at cells
    w = u_eps - u_hom
    for g_i, sol in zip(grads, correctors):
        g_faces = np.concatenate([cell_to_face_average(g_i, grid, k).ravel() for k in range(grid.dim)])
        w -= eps * sol.psi.flat()[fmap] * g_faces
    h1 = discrete_h1_norm(grid, w)

    fluid = eps_sol.labels.cells == FLUID
    res = eps_sol.sigma.ravel() - hom_sol.sigma.ravel()
    for b_i, g_i, sol in zip(b, grads, correctors):
        res = res - b_i * g_i - sol.sigma.ravel()[cmap] * g_i
    r = res[fluid]
    kappa = float(r.mean()) if r.size else 0.0
    l2p = math.sqrt(grid.cell_volume * float(np.sum((r - kappa) ** 2)))
    l2p0 = math.sqrt(grid.cell_volume * float(np.sum(r**2)))

    weak = float(np.abs(block_averages(grid, u_eps - u_hom)).max())
    return TwoScaleRow(
        eps=eps,
        lambda_eps=eps_sol.labels.labeled_fraction(),
        h1_err_vel=h1,
        l2_err_press=l2p,
        weak_avg_err=weak,
        l2_err_press_unshifted=l2p0,
        h1_norm_hom=discrete_h1_norm(grid, u_hom),
        n_box=grid.n,
        iterations=eps_sol.iterations + hom_sol.iterations,
    )


# -- ladder ---------------------------------------------------------------------


@dataclass
class CellData:
    """Correctors and coefficients of the periodic RVE shared by every rung."""

    inclusions: InclusionSet
    grid: Grid
    labels: LabelField
    correctors: list[CorrectorSolution]
    B: np.ndarray
    b: np.ndarray
    lam: float


def prepare_cell(
    inclusions: InclusionSet,
    n_cell: int,
    tol: float = DEFAULT_TOL,
    strict: bool = True,
    preconditioner: str = "blockdiag",
) -> CellData:
    grid = Grid(inclusions.dim, n_cell, inclusions.cell_length)
    labels = rasterize(inclusions, grid, strict=strict)
    basis = StrainBasis(grid.dim)
    if labels.n_inclusions:
        problem = StokesProblem(grid, labels, preconditioner)
        sols = [problem.solve(E=E, tol=tol) for E in basis.elements]
    else:
        from .effective import _trivial_solution

        sols = [_trivial_solution(grid, labels, E) for E in basis.elements]
    B = effective_tensor(sols, basis)
    b, _ = effective_pressure_coefficient(sols, basis)
    # the fraction of forced faces is what the discrete averaging sees
    lam = labels.rigid_face_fraction()
    return CellData(inclusions, grid, labels, sols, B, b, lam)


def run_ladder(
    cell: CellData,
    eps_ladder: Sequence[float] = (1 / 4, 1 / 8, 1 / 16),
    f: Callable | None = default_forcing,
    g: Callable | None = None,
    tol: float = DEFAULT_TOL,
    strict: bool = True,
    preconditioner: str = "blockdiag",
) -> TwoScaleReport:
    """Solve the eps-problem and the homogenized problem on every rung.

    With ``g`` the inclusions additionally carry the buoyancy ``int_{I_n} g``
    and the homogenized force becomes ``(1 - lam) f + lam g``.
    """
    eps_ladder = list(eps_ladder)
    if any(b >= a for a, b in zip(eps_ladder, eps_ladder[1:])):
        raise InvalidParams("eps ladder must be strictly decreasing")
    d = cell.grid.dim
    box = ((0.0,) * d, (1.0,) * d)
    cmap_cache = {}
    rows = []
    for eps in eps_ladder:
        m_float = 1.0 / (eps * cell.grid.h)
        m = int(round(m_float))
        if abs(m - m_float) > 1e-9 * m:
            raise GridMismatch(f"eps = {eps} does not give an integer number of box cells")
        grid = Grid(d, m, 1.0, DIRICHLET)
        check_alignment(grid, cell.grid, eps)
        scaled = restrict_to_box(cell.inclusions, eps, box)
        labels = rasterize(scaled, grid, strict=strict)
        cmap_cache[eps] = periodic_cell_map(grid, cell.grid)
        check_tiled_labels(labels, cell.labels, scaled.parent, cmap_cache[eps])
        if g is None:
            eps_sol = solve_eps_problem(grid, labels, f, tol=tol, preconditioner=preconditioner)
        else:
            eps_sol = solve_weak_sedimentation(grid, labels, g, f, tol=tol, preconditioner=preconditioner)
        hom = solve_homogenized(grid, cell.B, cell.lam, f, g, tol=tol, preconditioner=preconditioner)
        row = two_scale_errors(eps_sol, hom, cell.correctors, cell.b, eps)
        row.iterations = eps_sol.iterations + hom.iterations
        row.energy_res = max(eps_sol.residuals["energy_res"], hom.residuals["energy_res"])
        row.res_force = eps_sol.residuals["force_res"]
        row.res_torque = eps_sol.residuals["torque_res"]
        log.info(
            "eps=%g N=%d h1=%.4e p=%.4e weak=%.4e", eps, m, row.h1_err_vel, row.l2_err_press, row.weak_avg_err
        )
        rows.append(row)
    forcing = "default" if f is default_forcing else getattr(f, "__name__", "custom")
    if g is not None:
        forcing += "+sedimentation"
    return TwoScaleReport(rows, cell.inclusions.seed, forcing, cell.B, cell.b, cell.lam)


TWO_SCALE_HEADER = ["eps", "lambda_eps", "h1_err_vel", "l2_err_press", "weak_avg_err"]


def write_two_scale_csv(path: str | Path, report: TwoScaleReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TWO_SCALE_HEADER)
        for r in report.rows:
            w.writerow([f"{getattr(r, k):.17g}" for k in TWO_SCALE_HEADER])
