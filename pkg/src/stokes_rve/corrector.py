"""Stokes flow around rigid inclusions on a MAC grid.

Unknowns are eliminated exactly: every rigid face value is the affine map

    u_f = V_n[c] + (Theta_n r_f)[c] - (E r_f)[c],     r_f = x_f - x_n,

of the inclusion's translation ``V_n`` and skew rate ``Theta_n`` (``E = 0``
for the Dirichlet problem).  Writing ``u = T q + u0`` with ``q`` = (free face
values, rigid parameters), the discrete problem is the symmetric system

    [ T'AT   -B'] [q]   [T'(load - A u0)]
    [ -B      0 ] [p] = [B u0           ]

with ``A`` the viscous matrix of ``2 sum h^d |D(u)|^2`` and ``B = h^d div``
restricted to pressure cells.  Force and torque balance on each inclusion
are the rows of the rigid parameters; they are not imposed separately.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import InvalidParams, ShapeMismatch, SingularSystem
from .grid import (
    FLUID,
    Grid,
    LabelField,
    StaggeredField,
    divergence_matrix,
    laplacian_form_matrix,
    strain_operators,
    strain_weights,
    viscous_matrix,
)
from .krylov import (
    KrylovResult,
    SaddleSystem,
    amg_block_preconditioner,
    block_diagonal_preconditioner,
    orthonormal_columns,
    saddle_solve,
)

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9


def skew_pairs(dim: int) -> list[tuple[int, int]]:
    return list(itertools.combinations(range(dim), 2))


def rigid_dofs(dim: int) -> int:
    return dim + dim * (dim - 1) // 2


def skew_matrix(params: np.ndarray, dim: int) -> np.ndarray:
    """Skew matrix with ``Theta[b, a] = theta_ab``, ``Theta[a, b] = -theta_ab``."""
    theta = np.zeros((dim, dim))
    for value, (a, b) in zip(params, skew_pairs(dim)):
        theta[b, a] = value
        theta[a, b] = -value
    return theta


@dataclass(frozen=True)
class RigidMotion:
    V: np.ndarray
    Theta: np.ndarray

    def __post_init__(self):
        if np.any(self.Theta + self.Theta.T != 0):
            raise InvalidParams("Theta must be exactly skew-symmetric")


def rigid_face_values(
    motion: RigidMotion, E: np.ndarray, disp: np.ndarray, comps: np.ndarray
) -> np.ndarray:
    """Face values ``V[c] + (Theta r)[c] - (E r)[c]`` of one inclusion."""
    return (
        motion.V[comps]
        + np.sum(motion.Theta[comps] * disp, axis=1)
        - np.sum(E[comps] * disp, axis=1)
    )


def check_strain(E: np.ndarray, dim: int) -> np.ndarray:
    E = np.asarray(E, dtype=float)
    if E.shape != (dim, dim):
        raise ShapeMismatch(f"strain must be {dim}x{dim}")
    scale = max(np.linalg.norm(E), 1e-300)
    if np.abs(E - E.T).max() > 1e-12 * scale or abs(np.trace(E)) > 1e-12 * scale:
        raise InvalidParams("strain direction must be symmetric and trace-free")
    return E


FaceData = Callable[[np.ndarray], np.ndarray] | StaggeredField | np.ndarray | None


def sample_faces(grid: Grid, data: FaceData) -> np.ndarray:
    """Flat face vector from a callable ``x -> (m, d)``, a field, or a flat array."""
    if data is None:
        return np.zeros(grid.n_faces)
    if isinstance(data, StaggeredField):
        if data.grid != grid:
            raise ShapeMismatch("face data lives on a different grid")
        return data.flat()
    if callable(data):
        return StaggeredField.from_function(grid, data).flat()
    arr = np.asarray(data, dtype=float)
    if arr.shape != (grid.n_faces,):
        raise ShapeMismatch("flat face data has the wrong length")
    return arr


@dataclass
class CorrectorSolution:
    """Velocity, pressure and rigid motions of one solve plus diagnostics.

    ``sigma`` is defined on ``pressure_mask`` cells (zero elsewhere) and has
    zero mean there.  ``reaction`` is ``A u - B' p - load`` on every face: on
    rigid faces it is the force the inclusion exerts on the fluid, so that
    ``moments[n] = sum_f reaction_f e_c(f) (x) (x_f - x_n)`` is the traction
    moment ``-int sigma nu (x) (x - x_n)`` over the inclusion boundary.
    """

    grid: Grid
    labels: LabelField
    psi: StaggeredField
    sigma: np.ndarray
    pressure_mask: np.ndarray
    rigid: dict[int, RigidMotion]
    E: np.ndarray
    residuals: dict[str, float]
    iterations: int
    energy: float
    reaction: np.ndarray
    forces: dict[int, np.ndarray] = field(default_factory=dict)
    moments: dict[int, np.ndarray] = field(default_factory=dict)
    history: list[float] = field(default_factory=list)

    @property
    def u(self) -> StaggeredField:
        return self.psi

    @property
    def pressure(self) -> np.ndarray:
        return self.sigma


class StokesProblem:
    """Assembled constrained Stokes system for one geometry.

    The system matrix (and its preconditioner factorization) depends only on
    grid and labels, so one instance serves several strain directions or
    loads.
    """

    def __init__(
        self,
        grid: Grid,
        labels: LabelField,
        preconditioner: str = "blockdiag",
        viscous: sp.spmatrix | None = None,
    ):
        if labels.grid != grid:
            raise ShapeMismatch("labels were rasterized on a different grid")
        if preconditioner not in ("blockdiag", "none"):
            raise InvalidParams(f"unknown preconditioner {preconditioner!r}")
        self.grid = grid
        self.labels = labels
        self.preconditioner_kind = preconditioner
        d = grid.dim
        h_d = grid.cell_volume
        owners = labels.faces
        comps = grid.face_components()

        self.free = np.flatnonzero(owners == FLUID)
        rigid_mask = owners >= 0
        self.rigid_faces = np.flatnonzero(rigid_mask)
        self.rigid_owner = owners[rigid_mask]
        self.rigid_comp = comps[rigid_mask]
        self.rigid_disp = labels.displacement(grid.all_face_centers()[rigid_mask], self.rigid_owner)
        self.inclusions = np.unique(self.rigid_owner)
        n_free = len(self.free)
        nr = rigid_dofs(d)
        self.n_rigid_dofs = nr
        self.rigid_base = {int(n): n_free + i * nr for i, n in enumerate(self.inclusions)}
        n_q = n_free + nr * len(self.inclusions)
        self.n_q = n_q
        if n_free == 0:
            raise SingularSystem("no fluid faces: an inclusion fills the whole cell")

        # T: faces x q
        rows = [self.free]
        cols = [np.arange(n_free)]
        vals = [np.ones(n_free)]
        base = np.array([self.rigid_base[int(n)] for n in self.rigid_owner], dtype=np.int64)
        rows.append(self.rigid_faces)
        cols.append(base + self.rigid_comp)
        vals.append(np.ones(len(self.rigid_faces)))
        for s, (a, b) in enumerate(skew_pairs(d)):
            col = base + d + s
            on_a = self.rigid_comp == a
            on_b = self.rigid_comp == b
            rows += [self.rigid_faces[on_a], self.rigid_faces[on_b]]
            cols += [col[on_a], col[on_b]]
            vals += [-self.rigid_disp[on_a, b], self.rigid_disp[on_b, a]]
        self.T = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(grid.n_faces, n_q),
        ).tocsr()

        # a custom SPD viscous form (homogenized operator) may replace 2|D u|^2
        self.custom_viscous = viscous is not None
        self.A = viscous_matrix(grid) if viscous is None else sp.csr_matrix(viscous)
        div = divergence_matrix(grid)
        # pressure lives on fluid cells and on inclusion cells touching a free face
        cell_free = np.abs(div) @ (owners == FLUID).astype(float) > 0
        candidates = np.flatnonzero((labels.cells == FLUID) | cell_free)
        B = (h_d * div[candidates]).tocsr()
        Bhat = (B @ self.T).tocsr()
        Bhat.eliminate_zeros()
        # rows touching a single rigid motion only are satisfied identically
        keep = np.diff(Bhat.indptr) > 0
        self.pressure_cells = candidates[keep]
        if len(self.pressure_cells) == 0:
            raise SingularSystem("no pressure unknowns: inclusions fill the cell")
        self.B = B[keep]
        self.Bhat = Bhat[keep]
        self.Ahat = (self.T.T @ self.A @ self.T).tocsr()
        self.n_p = len(self.pressure_cells)
        self.K = sp.bmat([[self.Ahat, -self.Bhat.T], [-self.Bhat, None]], format="csr")

        null = []
        if grid.periodic:
            for c in range(d):
                z = np.zeros(n_q + self.n_p)
                z[: n_free][comps[self.free] == c] = 1.0
                for n in self.inclusions:
                    z[self.rigid_base[int(n)] + c] = 1.0
                null.append(z)
        zp = np.zeros(n_q + self.n_p)
        zp[n_q:] = 1.0
        null.append(zp)
        self.null_space = orthonormal_columns(null)
        self._precond = None

    # -- assembly helpers -------------------------------------------------

    def affine_part(self, E: np.ndarray) -> np.ndarray:
        """Face vector ``u0`` carrying ``-E r`` on rigid faces."""
        u0 = np.zeros(self.grid.n_faces)
        if self.rigid_faces.size:
            u0[self.rigid_faces] = -np.sum(E[self.rigid_comp] * self.rigid_disp, axis=1)
        return u0

    def buoyancy_loads(self, g_faces: np.ndarray) -> dict[int, np.ndarray]:
        """Per-inclusion ``int_{I_n} g`` by face quadrature over rigid faces."""
        loads = {}
        h_d = self.grid.cell_volume
        for n in self.inclusions:
            sel = self.rigid_owner == n
            F = np.zeros(self.grid.dim)
            np.add.at(F, self.rigid_comp[sel], h_d * g_faces[self.rigid_faces[sel]])
            loads[int(n)] = F
        return loads

    def rhs(
        self,
        E: np.ndarray,
        load: np.ndarray,
        rigid_loads: dict[int, np.ndarray] | None = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        u0 = self.affine_part(E)
        rv = self.T.T @ (load - self.A @ u0)
        if rigid_loads:
            for n, F in rigid_loads.items():
                if n in self.rigid_base:
                    b = self.rigid_base[n]
                    rv[b : b + self.grid.dim] += F
        rp = self.B @ u0
        return np.concatenate([rv, rp]), u0

    def preconditioner(self):
        if self.preconditioner_kind == "none":
            return None
        if self._precond is None:
            shift = 1e-6 if self.grid.periodic else 0.0
            # sparse LU fill-in is prohibitive in 3D; use an AMG cycle there
            build = block_diagonal_preconditioner if self.grid.dim == 2 else amg_block_preconditioner
            self._precond = build(self.Ahat, self.n_p, self.grid.cell_volume, shift=shift)
        return self._precond

    def system(self, rhs: np.ndarray) -> SaddleSystem:
        return SaddleSystem(self.K, rhs, self.null_space, self.preconditioner())

    def default_max_iter(self) -> int:
        return int(20 * self.grid.n ** (self.grid.dim / 2))

    # -- solve -----------------------------------------------------------

    def solve(
        self,
        E: np.ndarray | None = None,
        load: np.ndarray | None = None,
        rigid_loads: dict[int, np.ndarray] | None = None,
        tol: float = DEFAULT_TOL,
        max_iter: int | None = None,
        auto_project: bool = False,
    ) -> CorrectorSolution:
        grid = self.grid
        d = grid.dim
        E = np.zeros((d, d)) if E is None else check_strain(E, d)
        load = np.zeros(grid.n_faces) if load is None else load
        rhs, u0 = self.rhs(E, load, rigid_loads)
        result = saddle_solve(
            self.system(rhs), tol=tol, max_iter=max_iter or self.default_max_iter(), auto_project=auto_project
        )
        return self._package(result, rhs, E, load, rigid_loads or {})

    def _motions(self, q: np.ndarray) -> dict[int, RigidMotion]:
        d = self.grid.dim
        out = {}
        for n, b in self.rigid_base.items():
            V = q[b : b + d].copy()
            out[n] = RigidMotion(V=V, Theta=skew_matrix(q[b + d : b + self.n_rigid_dofs], d))
        return out

    def expand(self, q: np.ndarray, E: np.ndarray) -> tuple[np.ndarray, dict[int, RigidMotion]]:
        """Full face vector from reduced unknowns; rigid faces from the motion formula."""
        u = np.zeros(self.grid.n_faces)
        u[self.free] = q[: len(self.free)]
        motions = self._motions(q)
        for n, motion in motions.items():
            sel = self.rigid_owner == n
            u[self.rigid_faces[sel]] = rigid_face_values(
                motion, E, self.rigid_disp[sel], self.rigid_comp[sel]
            )
        return u, motions

    def _anchor_mean(self, q: np.ndarray, E: np.ndarray) -> np.ndarray:
        """Shift the periodic velocity so that each component has zero cell mean."""
        u, _ = self.expand(q, E)
        comps = self.grid.face_components()
        q = q.copy()
        n_free = len(self.free)
        for c in range(self.grid.dim):
            mean = u[comps == c].mean()
            q[:n_free][comps[self.free] == c] -= mean
            for b in self.rigid_base.values():
                q[b + c] -= mean
        return q

    def _package(
        self,
        result: KrylovResult,
        rhs: np.ndarray,
        E: np.ndarray,
        load: np.ndarray,
        rigid_loads: dict[int, np.ndarray],
    ) -> CorrectorSolution:
        grid = self.grid
        d = grid.dim
        x = result.x
        q, p = x[: self.n_q], x[self.n_q :]
        if grid.periodic:
            q = self._anchor_mean(q, E)
        # zero mean over fluid cells (contact cells carry pressure but are not fluid)
        fluid_p = self.labels.cells.ravel()[self.pressure_cells] == FLUID
        p = p - (p[fluid_p].mean() if fluid_p.any() else p.mean())
        x = np.concatenate([q, p])
        u, motions = self.expand(q, E)

        res_vec = rhs - self.K @ x
        scale = max(np.linalg.norm(rhs), 1e-300)
        n_free = len(self.free)
        force_res = 0.0
        torque_res = 0.0
        for b in self.rigid_base.values():
            force_res = max(force_res, float(np.linalg.norm(res_vec[b : b + d])))
            torque_res = max(torque_res, float(np.linalg.norm(res_vec[b + d : b + self.n_rigid_dofs])))

        sigma = np.zeros(grid.n_cells)
        sigma[self.pressure_cells] = p
        mask = np.zeros(grid.n_cells, dtype=bool)
        mask[self.pressure_cells] = True

        reaction = self.A @ u - self.B.T @ p - load
        forces, moments = {}, {}
        for n in self.inclusions:
            sel = self.rigid_owner == n
            R = reaction[self.rigid_faces[sel]]
            comps = self.rigid_comp[sel]
            F = np.zeros(d)
            np.add.at(F, comps, R)
            Z = np.zeros((d, d))
            np.add.at(Z, comps, R[:, None] * self.rigid_disp[sel])
            # traction force exerted by the fluid on the inclusion
            forces[int(n)] = -F
            moments[int(n)] = Z

        strain_energy = float(u @ (self.A @ u))  # = 2 sum h^d |D u|^2
        energy = strain_energy / (2.0 * grid.volume) + float(np.sum(E * E))
        if np.any(E != 0):
            # work of boundary tractions on the imposed strain
            work = -sum(float(np.sum(E * Z)) for Z in moments.values())
        else:
            if self.custom_viscous:
                grad_energy = strain_energy
            else:
                grad_energy = float(u @ (laplacian_form_matrix(grid) @ u))
            work = float(load @ u) + sum(
                float(F @ motions[n].V) for n, F in rigid_loads.items() if n in motions
            )
            strain_energy = grad_energy
        ref = max(abs(strain_energy), abs(work))
        energy_res = abs(strain_energy - work) / ref if ref > 0 else 0.0

        residuals = {
            "relative": float(np.linalg.norm(res_vec) / scale),
            "momentum_res": float(np.linalg.norm(res_vec[:n_free]) / scale),
            "div_res": float(np.linalg.norm(res_vec[self.n_q :]) / scale),
            "force_res": force_res / scale,
            "torque_res": torque_res / scale,
            "mean_grad_res": mean_gradient(u, grid) if grid.periodic else 0.0,
            "energy_res": energy_res,
            "max_div": float(np.abs(divergence_matrix(grid)[self.pressure_cells] @ u).max()),
        }
        return CorrectorSolution(
            grid=grid,
            labels=self.labels,
            psi=StaggeredField.from_flat(grid, u),
            sigma=sigma.reshape(grid.cell_shape),
            pressure_mask=mask.reshape(grid.cell_shape),
            rigid=motions,
            E=E,
            residuals=residuals,
            iterations=result.iterations,
            energy=energy,
            reaction=reaction,
            forces=forces,
            moments=moments,
            history=result.history,
        )


def mean_gradient(u: np.ndarray, grid: Grid) -> float:
    """Largest entry of the cell average of the discrete velocity gradient."""
    from .grid import node_derivative_matrix

    worst = 0.0
    for (j, k), op in strain_operators(grid).items():
        if j == k:
            worst = max(worst, abs(float(np.mean(op @ u))))
    for j, k in itertools.permutations(range(grid.dim), 2):
        worst = max(worst, abs(float(np.mean(node_derivative_matrix(grid, j, k) @ u))))
    return worst


def strain_energy_density(psi: StaggeredField, E: np.ndarray) -> float:
    """Cell average of ``|D(psi) + E|^2``, evaluated directly from strain samples."""
    grid = psi.grid
    flat = psi.flat()
    total = 0.0
    for pair, op in strain_operators(grid).items():
        j, k = pair
        w = strain_weights(grid, pair)
        s = op @ flat + E[j, k]
        total += float(w @ (s * s))
    return total * grid.cell_volume / grid.volume


def solve_corrector(
    grid: Grid,
    labels: LabelField,
    E: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
    preconditioner: str = "blockdiag",
    problem: StokesProblem | None = None,
) -> CorrectorSolution:
    """Periodic corrector for the trace-free symmetric strain ``E``."""
    if not grid.periodic:
        raise InvalidParams("the corrector problem lives on a periodic grid")
    problem = problem or StokesProblem(grid, labels, preconditioner)
    return problem.solve(E=E, tol=tol, max_iter=max_iter)


def solve_eps_problem(
    grid: Grid,
    labels: LabelField,
    f: FaceData,
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
    preconditioner: str = "blockdiag",
    problem: StokesProblem | None = None,
) -> CorrectorSolution:
    """Dirichlet Stokes problem with rigid inclusions; ``f`` acts on free faces only."""
    if grid.periodic:
        raise InvalidParams("the eps-problem needs a Dirichlet grid")
    problem = problem or StokesProblem(grid, labels, preconditioner)
    f_faces = sample_faces(grid, f)
    load = np.zeros(grid.n_faces)
    load[problem.free] = grid.cell_volume * f_faces[problem.free]
    return problem.solve(load=load, tol=tol, max_iter=max_iter)


def solve_weak_sedimentation(
    grid: Grid,
    labels: LabelField,
    g: FaceData,
    f: FaceData = None,
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
    preconditioner: str = "blockdiag",
    problem: StokesProblem | None = None,
) -> CorrectorSolution:
    """Dirichlet problem whose force balance carries an O(1) buoyancy ``int_{I_n} g``."""
    if grid.periodic:
        raise InvalidParams("the sedimentation problem needs a Dirichlet grid")
    problem = problem or StokesProblem(grid, labels, preconditioner)
    f_faces = sample_faces(grid, f)
    load = np.zeros(grid.n_faces)
    load[problem.free] = grid.cell_volume * f_faces[problem.free]
    loads = problem.buoyancy_loads(sample_faces(grid, g))
    return problem.solve(load=load, rigid_loads=loads, tol=tol, max_iter=max_iter)
