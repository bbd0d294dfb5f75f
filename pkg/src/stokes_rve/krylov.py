"""Preconditioned MINRES for symmetric (possibly singular) saddle systems."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NoConvergence

log = logging.getLogger(__name__)

Operator = Callable[[np.ndarray], np.ndarray]


@dataclass
class SaddleSystem:
    """Symmetric system ``K x = b`` with an orthonormal null-space basis.

    ``null_space`` has shape ``(n, k)``; its columns span ``ker K`` (constant
    pressures, and constant velocities for periodic correctors).
    """

    matrix: sp.spmatrix
    rhs: np.ndarray
    null_space: np.ndarray | None = None
    preconditioner: Operator | None = None

    def project(self, x: np.ndarray) -> np.ndarray:
        if self.null_space is None or self.null_space.shape[1] == 0:
            return x
        Z = self.null_space
        return x - Z @ (Z.T @ x)


@dataclass
class KrylovResult:
    x: np.ndarray
    iterations: int
    residual: float
    history: list[float] = field(default_factory=list)


def orthonormal_columns(vectors: list[np.ndarray]) -> np.ndarray:
    if not vectors:
        return np.zeros((0, 0))
    q, _ = np.linalg.qr(np.column_stack(vectors))
    return q


def minres(
    apply_K: Operator,
    b: np.ndarray,
    apply_M: Operator | None = None,
    project: Operator | None = None,
    tol: float = 1e-9,
    max_iter: int = 1000,
    x0: np.ndarray | None = None,
) -> KrylovResult:
    """Paige-Saunders MINRES with an SPD preconditioner.

    ``project`` is applied to every preconditioned Lanczos vector so that the
    iterates never pick up null-space components.  Convergence is declared on
    the true relative residual ``|b - K x| / |b|`` (Euclidean).
    """
    ident = lambda v: v  # noqa: E731
    apply_M = apply_M or ident
    project = project or ident
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else x0.copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return KrylovResult(np.zeros(n), 0, 0.0, [0.0])
    r1 = b - apply_K(x) if x0 is not None else b.copy()
    history = [np.linalg.norm(r1) / bnorm]
    if history[0] < tol:
        return KrylovResult(x, 0, history[0], history)

    y = project(apply_M(r1))
    beta1 = math.sqrt(max(r1 @ y, 0.0))
    if beta1 == 0.0:
        return KrylovResult(x, 0, history[0], history)
    oldb = 0.0
    beta = beta1
    dbar = 0.0
    epsln = 0.0
    phibar = beta1
    cs, sn = -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1
    # the preconditioned estimate phibar/beta1 tracks |r|_{M^-1}; the target
    # is tightened when the Euclidean check disagrees
    target = tol
    best = math.inf
    stalls = 0
    itn = 0
    while itn < max_iter:
        itn += 1
        s = 1.0 / beta
        v = s * y
        y = apply_K(v)
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = v @ y
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        y = project(apply_M(r2))
        oldb = beta
        beta = math.sqrt(max(r2 @ y, 0.0))

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(math.hypot(gbar, beta), np.finfo(float).eps)
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w
        history.append(phibar / beta1)

        if phibar / beta1 < target or beta == 0.0:
            res = np.linalg.norm(b - apply_K(x)) / bnorm
            if res < tol:
                history[-1] = res
                return KrylovResult(x, itn, res, history)
            if beta == 0.0:
                break
            stalls = stalls + 1 if res > 0.99 * best else 0
            best = min(best, res)
            if stalls >= 3:
                break
            target = min(target, phibar / beta1) * max(tol / res, 1e-3)
    res = np.linalg.norm(b - apply_K(x)) / bnorm
    raise NoConvergence(itn, res)


def block_diagonal_preconditioner(
    velocity_block: sp.spmatrix,
    n_pressure: int,
    pressure_scale: float,
    shift: float = 0.0,
) -> Operator:
    """``diag(A_shifted^-1, I / pressure_scale)`` with a sparse LU of the velocity block.

    ``shift`` (relative to the diagonal) regularizes singular periodic blocks.
    """
    A = velocity_block.tocsc()
    if shift > 0.0:
        A = (A + shift * sp.diags(A.diagonal())).tocsc()
    lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
    nv = A.shape[0]

    def apply(r: np.ndarray) -> np.ndarray:
        out = np.empty_like(r)
        out[:nv] = lu.solve(r[:nv])
        out[nv:] = r[nv:] / pressure_scale
        return out

    apply.n_velocity = nv  # type: ignore[attr-defined]
    return apply


def amg_block_preconditioner(
    velocity_block: sp.spmatrix,
    n_pressure: int,
    pressure_scale: float,
    shift: float = 0.0,
) -> Operator:
    """Like :func:`block_diagonal_preconditioner` but with one symmetric
    smoothed-aggregation V-cycle for the velocity block (3D sized grids)."""
    import pyamg

    A = velocity_block.tocsr()
    if shift > 0.0:
        A = (A + shift * sp.diags(A.diagonal())).tocsr()
    ml = pyamg.smoothed_aggregation_solver(A, symmetry="symmetric", max_coarse=500)
    M = ml.aspreconditioner(cycle="V")
    nv = A.shape[0]

    def apply(r: np.ndarray) -> np.ndarray:
        out = np.empty_like(r)
        out[:nv] = M @ r[:nv]
        out[nv:] = r[nv:] / pressure_scale
        return out

    apply.n_velocity = nv  # type: ignore[attr-defined]
    return apply


def saddle_solve(
    system: SaddleSystem,
    tol: float = 1e-9,
    max_iter: int = 1000,
    auto_project: bool = False,
) -> KrylovResult:
    """Solve a symmetric saddle system with MINRES.

    A right-hand side with a component in the null space is inconsistent:
    with ``auto_project`` it is projected out, otherwise ``NoConvergence``
    is raised immediately.
    """
    b = system.rhs
    if auto_project:
        b = system.project(b)
    elif system.null_space is not None and system.null_space.size:
        bnorm = np.linalg.norm(b)
        inconsistent = np.linalg.norm(system.null_space.T @ b)
        if bnorm > 0 and inconsistent > tol * bnorm:
            raise NoConvergence(0, inconsistent / bnorm)
    K = system.matrix
    result = minres(
        lambda v: K @ v,
        b,
        apply_M=system.preconditioner,
        project=system.project,
        tol=tol,
        max_iter=max_iter,
    )
    result.x = system.project(result.x)
    log.debug("minres: %d iterations, residual %.3e", result.iterations, result.residual)
    return result
