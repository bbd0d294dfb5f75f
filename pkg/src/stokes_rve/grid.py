"""Staggered (MAC) grids, difference operators and inclusion rasterization.

Layout, for a grid of ``n`` cells of width ``h`` per axis:

* cell ``i`` has center ``origin + (i + 1/2) h``;
* velocity component ``k`` lives on faces normal to ``e_k``; face ``i`` of
  component ``k`` sits at ``x_k = origin_k + i_k h`` (other coordinates
  centered), i.e. it is the lower ``k``-face of cell ``i``;
* off-diagonal strain ``(j, k)``, ``j < k``, lives on "nodes" with
  ``x_j = i_j h`` and ``x_k = i_k h`` (grid vertices in 2D, edges in 3D).

Periodic grids have ``n`` entries per axis everywhere.  Dirichlet grids add
the closing face along the normal axis (``n + 1`` faces, the two boundary
ones pinned to zero) and ``n + 1`` node positions along both node axes;
tangential wall values enter through an odd ghost reflection and wall nodes
carry quadrature weight 1/2 per wall axis.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import InvalidParams, ResolutionTooCoarse, ShapeMismatch
from .geometry import InclusionSet, min_image

PERIODIC = "periodic"
DIRICHLET = "dirichlet"

FLUID = -1
FIXED = -2  # Dirichlet boundary face


@dataclass(frozen=True)
class Grid:
    dim: int
    n: int
    length: float
    boundary: str = PERIODIC
    origin: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise InvalidParams(f"dimension must be 2 or 3, got {self.dim}")
        if self.n < 4:
            raise InvalidParams(f"need at least 4 cells per side, got {self.n}")
        if self.length <= 0:
            raise InvalidParams("grid length must be positive")
        if self.boundary not in (PERIODIC, DIRICHLET):
            raise InvalidParams(f"unknown boundary kind {self.boundary!r}")
        origin = (0.0,) * self.dim if self.origin is None else tuple(float(o) for o in self.origin)
        object.__setattr__(self, "origin", origin)

    @property
    def h(self) -> float:
        return self.length / self.n

    @property
    def periodic(self) -> bool:
        return self.boundary == PERIODIC

    @property
    def cell_shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def n_cells(self) -> int:
        return self.n**self.dim

    @property
    def volume(self) -> float:
        return self.length**self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    def face_shape(self, k: int) -> tuple[int, ...]:
        shape = [self.n] * self.dim
        if not self.periodic:
            shape[k] += 1
        return tuple(shape)

    @property
    def face_sizes(self) -> list[int]:
        return [int(np.prod(self.face_shape(k))) for k in range(self.dim)]

    @property
    def face_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.face_sizes)])

    @property
    def n_faces(self) -> int:
        return int(sum(self.face_sizes))

    @property
    def node_pairs(self) -> list[tuple[int, int]]:
        return list(itertools.combinations(range(self.dim), 2))

    def node_shape(self, j: int, k: int) -> tuple[int, ...]:
        shape = [self.n] * self.dim
        if not self.periodic:
            shape[j] += 1
            shape[k] += 1
        return tuple(shape)

    def _coords(self, shape: tuple[int, ...], staggered: tuple[int, ...]) -> np.ndarray:
        """Coordinates of an index array; axes in ``staggered`` sit on grid lines."""
        axes = []
        for ax, m in enumerate(shape):
            shift = 0.0 if ax in staggered else 0.5
            axes.append(self.origin[ax] + (np.arange(m) + shift) * self.h)
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.dim)

    def cell_centers(self) -> np.ndarray:
        return self._coords(self.cell_shape, ())

    def face_centers(self, k: int) -> np.ndarray:
        return self._coords(self.face_shape(k), (k,))

    def all_face_centers(self) -> np.ndarray:
        return np.concatenate([self.face_centers(k) for k in range(self.dim)])

    def face_components(self) -> np.ndarray:
        return np.repeat(np.arange(self.dim), self.face_sizes)

    def node_centers(self, j: int, k: int) -> np.ndarray:
        return self._coords(self.node_shape(j, k), (j, k))

    def node_weights(self, j: int, k: int) -> np.ndarray:
        """Quadrature weights of strain nodes (1/2 per wall axis on Dirichlet grids)."""
        w = np.ones(self.node_shape(j, k))
        if not self.periodic:
            for ax in (j, k):
                w[_sl(ax, 0, self.dim)] *= 0.5
                w[_sl(ax, -1, self.dim)] *= 0.5
        return w.ravel()

    def boundary_face_mask(self) -> np.ndarray:
        """Flat mask of faces pinned to zero (normal faces on a Dirichlet wall)."""
        masks = []
        for k in range(self.dim):
            m = np.zeros(self.face_shape(k), dtype=bool)
            if not self.periodic:
                m[_sl(k, 0, self.dim)] = True
                m[_sl(k, -1, self.dim)] = True
            masks.append(m.ravel())
        return np.concatenate(masks)


def _sl(axis: int, index, ndim: int) -> tuple:
    s = [slice(None)] * ndim
    s[axis] = index
    return tuple(s)


# ---------------------------------------------------------------------------
# sparse operators
# ---------------------------------------------------------------------------


def _face_index(grid: Grid, k: int) -> np.ndarray:
    return grid.face_offsets[k] + np.arange(grid.face_sizes[k]).reshape(grid.face_shape(k))


@functools.lru_cache(maxsize=16)
def divergence_matrix(grid: Grid) -> sp.csr_matrix:
    """Cells x faces matrix of the centered divergence."""
    d, h = grid.dim, grid.h
    cells = np.arange(grid.n_cells).reshape(grid.cell_shape)
    rows, cols, vals = [], [], []
    for k in range(d):
        fidx = _face_index(grid, k)
        if grid.periodic:
            lower = fidx
            upper = np.roll(fidx, -1, axis=k)
        else:
            lower = fidx[_sl(k, slice(0, -1), d)]
            upper = fidx[_sl(k, slice(1, None), d)]
        rows += [cells.ravel(), cells.ravel()]
        cols += [upper.ravel(), lower.ravel()]
        vals += [np.full(grid.n_cells, 1.0 / h), np.full(grid.n_cells, -1.0 / h)]
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.n_cells, grid.n_faces),
    )
    return mat.tocsr()


def _component_divergence(grid: Grid, k: int) -> sp.csr_matrix:
    """Rows: cells; the ``d u_k / d x_k`` part of the divergence."""
    div = divergence_matrix(grid).tocsc()
    cols = np.zeros(grid.n_faces, dtype=bool)
    cols[grid.face_offsets[k] : grid.face_offsets[k + 1]] = True
    return (div @ sp.diags(cols.astype(float))).tocsr()


@functools.lru_cache(maxsize=32)
def node_derivative_matrix(grid: Grid, j: int, k: int) -> sp.csr_matrix:
    """``d u_j / d x_k`` (``j != k``) evaluated on the node set of pair ``(min, max)``.

    Dirichlet grids use the ghost value ``-u`` across the wall, i.e. a zero
    tangential trace.
    """
    if j == k:
        raise InvalidParams("node derivatives are off-diagonal only")
    d, h = grid.dim, grid.h
    a, b = min(j, k), max(j, k)
    nshape = grid.node_shape(a, b)
    nodes = np.arange(int(np.prod(nshape))).reshape(nshape)
    fidx = _face_index(grid, j)
    rows, cols, vals = [], [], []
    if grid.periodic:
        upper = fidx
        lower = np.roll(fidx, 1, axis=k)
        rows += [nodes.ravel(), nodes.ravel()]
        cols += [upper.ravel(), lower.ravel()]
        vals += [np.full(nodes.size, 1.0 / h), np.full(nodes.size, -1.0 / h)]
    else:
        n = grid.n
        # interior nodes along k: 1..n-1, faces of u_j along k: 0..n-1
        inner = nodes[_sl(k, slice(1, n), d)]
        rows += [inner.ravel(), inner.ravel()]
        cols += [fidx[_sl(k, slice(1, n), d)].ravel(), fidx[_sl(k, slice(0, n - 1), d)].ravel()]
        vals += [np.full(inner.size, 1.0 / h), np.full(inner.size, -1.0 / h)]
        first = nodes[_sl(k, 0, d)]
        rows.append(first.ravel())
        cols.append(fidx[_sl(k, 0, d)].ravel())
        vals.append(np.full(first.size, 2.0 / h))
        last = nodes[_sl(k, n, d)]
        rows.append(last.ravel())
        cols.append(fidx[_sl(k, n - 1, d)].ravel())
        vals.append(np.full(last.size, -2.0 / h))
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nodes.size, grid.n_faces),
    )
    return mat.tocsr()


@functools.lru_cache(maxsize=16)
def strain_operators(grid: Grid) -> dict[tuple[int, int], sp.csr_matrix]:
    """Discrete symmetric gradient: ``(k, k)`` at cells, ``(j, k)`` at nodes."""
    ops = {}
    for k in range(grid.dim):
        ops[(k, k)] = _component_divergence(grid, k)
    for j, k in grid.node_pairs:
        ops[(j, k)] = 0.5 * (node_derivative_matrix(grid, j, k) + node_derivative_matrix(grid, k, j))
    return ops


def strain_weights(grid: Grid, pair: tuple[int, int]) -> np.ndarray:
    """Frobenius multiplicity times quadrature weight of each strain location."""
    j, k = pair
    if j == k:
        return np.ones(grid.n_cells)
    return 2.0 * grid.node_weights(j, k)


@functools.lru_cache(maxsize=16)
def viscous_matrix(grid: Grid) -> sp.csr_matrix:
    """Matrix of ``a(u, v) = 2 * sum h^d W D(u):D(v)`` over all faces."""
    mats = []
    for pair, op in strain_operators(grid).items():
        w = strain_weights(grid, pair)
        mats.append(op.T @ sp.diags(w) @ op)
    return (2.0 * grid.cell_volume * sum(mats)).tocsr()


@functools.lru_cache(maxsize=16)
def laplacian_form_matrix(grid: Grid) -> sp.csr_matrix:
    """Matrix of ``sum h^d grad u : grad v`` (component-wise Dirichlet form)."""
    mats = []
    for k in range(grid.dim):
        op = _component_divergence(grid, k)
        mats.append(op.T @ op)
    for j, k in itertools.permutations(range(grid.dim), 2):
        op = node_derivative_matrix(grid, j, k)
        w = grid.node_weights(min(j, k), max(j, k))
        mats.append(op.T @ sp.diags(w) @ op)
    return (grid.cell_volume * sum(mats)).tocsr()


@functools.lru_cache(maxsize=16)
def gradient_matrix(grid: Grid) -> sp.csr_matrix:
    """Faces x cells gradient, ``-div^T``; rows of pinned wall faces are zero."""
    g = -divergence_matrix(grid).T.tocsr()
    if not grid.periodic:
        keep = (~grid.boundary_face_mask()).astype(float)
        g = (sp.diags(keep) @ g).tocsr()
    return g


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


@dataclass
class StaggeredField:
    """Face-centered vector field, one array per component."""

    grid: Grid
    components: list[np.ndarray]

    def __post_init__(self):
        if len(self.components) != self.grid.dim:
            raise ShapeMismatch("one array per velocity component expected")
        for k, arr in enumerate(self.components):
            if arr.shape != self.grid.face_shape(k):
                raise ShapeMismatch(
                    f"component {k} has shape {arr.shape}, expected {self.grid.face_shape(k)}"
                )

    @classmethod
    def zeros(cls, grid: Grid) -> "StaggeredField":
        return cls(grid, [np.zeros(grid.face_shape(k)) for k in range(grid.dim)])

    @classmethod
    def from_flat(cls, grid: Grid, values: np.ndarray) -> "StaggeredField":
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n_faces,):
            raise ShapeMismatch(f"expected {grid.n_faces} face values, got {values.shape}")
        off = grid.face_offsets
        comps = [values[off[k] : off[k + 1]].reshape(grid.face_shape(k)).copy() for k in range(grid.dim)]
        return cls(grid, comps)

    @classmethod
    def from_function(cls, grid: Grid, func) -> "StaggeredField":
        """Sample ``func(x) -> (m, d)`` at face centers, taking component ``k`` on ``k``-faces."""
        comps = []
        for k in range(grid.dim):
            x = grid.face_centers(k)
            comps.append(np.asarray(func(x))[:, k].reshape(grid.face_shape(k)))
        field = cls(grid, comps)
        if not grid.periodic:
            flat = field.flat()
            flat[grid.boundary_face_mask()] = 0.0
            field = cls.from_flat(grid, flat)
        return field

    def flat(self) -> np.ndarray:
        return np.concatenate([c.ravel() for c in self.components])


def _check_scalar(p: np.ndarray, grid: Grid) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.size != grid.n_cells:
        raise ShapeMismatch(f"scalar field has {p.size} values, grid has {grid.n_cells} cells")
    return p.ravel()


def _check_vector(u: StaggeredField, grid: Grid) -> np.ndarray:
    if u.grid != grid:
        raise ShapeMismatch("field lives on a different grid")
    return u.flat()


def div(u: StaggeredField, grid: Grid | None = None) -> np.ndarray:
    grid = grid or u.grid
    return (divergence_matrix(grid) @ _check_vector(u, grid)).reshape(grid.cell_shape)


def grad(p: np.ndarray, grid: Grid) -> StaggeredField:
    return StaggeredField.from_flat(grid, gradient_matrix(grid) @ _check_scalar(p, grid))


def sym_grad(u: StaggeredField, grid: Grid | None = None) -> dict[tuple[int, int], np.ndarray]:
    """Symmetric gradient; ``(k, k)`` entries are cell arrays, ``(j, k)`` node arrays."""
    grid = grid or u.grid
    flat = _check_vector(u, grid)
    out = {}
    for (j, k), op in strain_operators(grid).items():
        shape = grid.cell_shape if j == k else grid.node_shape(j, k)
        out[(j, k)] = (op @ flat).reshape(shape)
    return out


def laplace(u: StaggeredField, grid: Grid | None = None) -> StaggeredField:
    """Component-wise second-order Laplacian (ghost reflection at Dirichlet walls)."""
    grid = grid or u.grid
    flat = _check_vector(u, grid)
    lap = -(laplacian_form_matrix(grid) @ flat) / grid.cell_volume
    if not grid.periodic:
        lap[grid.boundary_face_mask()] = 0.0
    return StaggeredField.from_flat(grid, lap)


def scalar_laplacian(p: np.ndarray, grid: Grid) -> np.ndarray:
    """Standard (2d+1)-point Laplacian of a cell field (periodic wrap)."""
    p = _check_scalar(p, grid).reshape(grid.cell_shape)
    out = -2.0 * grid.dim * p
    for k in range(grid.dim):
        out = out + np.roll(p, 1, axis=k) + np.roll(p, -1, axis=k)
    return out / grid.h**2


def inner_cells(p: np.ndarray, q: np.ndarray, grid: Grid) -> float:
    return float(grid.cell_volume * np.dot(np.ravel(p), np.ravel(q)))


def inner_faces(u: StaggeredField, v: StaggeredField) -> float:
    return float(u.grid.cell_volume * np.dot(u.flat(), v.flat()))


def cell_to_face_average(values: np.ndarray, grid: Grid, k: int) -> np.ndarray:
    """Average a cell array onto ``k``-faces (one-sided on Dirichlet walls)."""
    c = np.asarray(values).reshape(grid.cell_shape)
    if grid.periodic:
        return 0.5 * (c + np.roll(c, 1, axis=k))
    d = grid.dim
    out = np.empty(grid.face_shape(k))
    out[_sl(k, slice(1, -1), d)] = 0.5 * (c[_sl(k, slice(0, -1), d)] + c[_sl(k, slice(1, None), d)])
    out[_sl(k, 0, d)] = c[_sl(k, 0, d)]
    out[_sl(k, -1, d)] = c[_sl(k, -1, d)]
    return out


def node_to_cell_average(values: np.ndarray, grid: Grid, j: int, k: int) -> np.ndarray:
    """Average node values of pair ``(j, k)`` onto cell centers (4 nodes per cell)."""
    v = np.asarray(values).reshape(grid.node_shape(j, k))
    d = grid.dim
    if grid.periodic:
        return 0.25 * (v + np.roll(v, -1, axis=j) + np.roll(v, -1, axis=k) + np.roll(np.roll(v, -1, axis=j), -1, axis=k))
    out = 0.0
    for sj in (slice(0, -1), slice(1, None)):
        for sk in (slice(0, -1), slice(1, None)):
            s = [slice(None)] * d
            s[j], s[k] = sj, sk
            out = out + v[tuple(s)]
    return 0.25 * out


@functools.lru_cache(maxsize=16)
def node_to_cell_matrix(grid: Grid, j: int, k: int) -> sp.csr_matrix:
    """Sparse version of :func:`node_to_cell_average`."""
    d = grid.dim
    nshape = grid.node_shape(j, k)
    nodes = np.arange(int(np.prod(nshape))).reshape(nshape)
    cells = np.arange(grid.n_cells)
    cols = []
    if grid.periodic:
        for dj in (0, -1):
            for dk in (0, -1):
                cols.append(np.roll(np.roll(nodes, dj, axis=j), dk, axis=k).ravel())
    else:
        for sj in (slice(0, -1), slice(1, None)):
            for sk in (slice(0, -1), slice(1, None)):
                s = [slice(None)] * d
                s[j], s[k] = sj, sk
                cols.append(nodes[tuple(s)].ravel())
    rows = np.tile(cells, 4)
    vals = np.full(rows.size, 0.25)
    return sp.coo_matrix((vals, (rows, np.concatenate(cols))), shape=(grid.n_cells, nodes.size)).tocsr()


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LabelField:
    """Discrete inclusion indicator.

    ``cells`` holds the inclusion index per cell (``FLUID`` otherwise).
    ``faces`` (flat, all components) holds the owning inclusion of each
    rigid face, ``FLUID`` for free faces and ``FIXED`` for pinned wall faces.
    A face is rigid for inclusion ``n`` when at least one adjacent cell is
    labeled ``n``; a face between cells of two different inclusions (a
    contact face, only possible on grids coarser than the gap) stays free.
    """

    grid: Grid
    cells: np.ndarray
    faces: np.ndarray
    centers: np.ndarray
    radius: float
    n_contact_faces: int = 0

    @property
    def n_inclusions(self) -> int:
        return len(self.centers)

    def labeled_fraction(self) -> float:
        return float(np.mean(self.cells >= 0))

    def rigid_face_fraction(self) -> float:
        """Fraction of velocity faces owned by inclusions (component average)."""
        rigid = self.faces >= 0
        if not self.grid.periodic:
            rigid = rigid[~self.grid.boundary_face_mask()]
            return float(np.mean(rigid))
        return float(np.mean(rigid))

    def displacement(self, points: np.ndarray, owners: np.ndarray) -> np.ndarray:
        """``x - x_n`` for each point, minimum image on periodic grids."""
        disp = points - self.centers[owners]
        if self.grid.periodic:
            disp = min_image(disp, self.grid.length)
        return disp


def check_resolution(inclusions: InclusionSet, grid: Grid, strict: bool = True) -> None:
    h = grid.h
    if h > inclusions.radius / 4 * (1 + 1e-12):
        raise ResolutionTooCoarse(f"h = {h:g} exceeds radius/4 = {inclusions.radius / 4:g}")
    if strict and h > inclusions.gap / 2 * (1 + 1e-12):
        raise ResolutionTooCoarse(f"h = {h:g} exceeds gap/2 = {inclusions.gap / 2:g}")


def rasterize(inclusions: InclusionSet, grid: Grid, strict: bool = True) -> LabelField:
    """Label cells whose center lies in a closed ball.

    ``strict`` enforces ``h <= gap / 2`` so that distinct inclusions never
    touch in the discrete graph; with ``strict=False`` only ``h <= radius/4``
    is required and contact faces are kept as free (thin film) unknowns.
    """
    if inclusions.dim != grid.dim:
        raise ShapeMismatch("inclusion set and grid dimensions differ")
    if inclusions.periodic != grid.periodic:
        raise ShapeMismatch("periodic inclusion sets need periodic grids and vice versa")
    if inclusions.periodic and abs(inclusions.cell_length - grid.length) > 1e-12 * grid.length:
        raise ShapeMismatch("grid length differs from the periodic cell length")
    if inclusions.n_centers:
        check_resolution(inclusions, grid, strict)
    d, h, n = grid.dim, grid.h, grid.n
    cells = np.full(grid.cell_shape, FLUID, dtype=np.int64)
    origin = np.asarray(grid.origin)
    r = inclusions.radius
    span = int(np.ceil(r / h)) + 1
    for idx, c in enumerate(inclusions.centers):
        base = np.floor((c - origin) / h - 0.5).astype(int)
        offsets = np.arange(-span, span + 2)
        axes_idx = [base[a] + offsets for a in range(d)]
        mesh = np.meshgrid(*axes_idx, indexing="ij")
        ids = np.stack(mesh, axis=-1).reshape(-1, d)
        pts = origin + (ids + 0.5) * h
        disp = pts - c
        if grid.periodic:
            disp = min_image(disp, grid.length)
            ids = np.mod(ids, n)
        else:
            ok = np.all((ids >= 0) & (ids < n), axis=1)
            ids, disp = ids[ok], disp[ok]
        inside = np.sum(disp**2, axis=1) <= r * r
        ids = ids[inside]
        if not len(ids):
            continue
        tgt = tuple(ids.T)
        clash = cells[tgt]
        if np.any((clash != FLUID) & (clash != idx)):
            raise ResolutionTooCoarse("two inclusions claim the same cell")
        cells[tgt] = idx

    faces = []
    n_contact = 0
    for k in range(d):
        if grid.periodic:
            lo_cell = np.roll(cells, 1, axis=k)
            hi_cell = cells
        else:
            pad = [(0, 0)] * d
            pad[k] = (1, 1)
            padded = np.pad(cells, pad, constant_values=FLUID)
            lo_cell = padded[_sl(k, slice(0, -1), d)]
            hi_cell = padded[_sl(k, slice(1, None), d)]
        owner = np.where(lo_cell >= 0, lo_cell, hi_cell)
        contact = (lo_cell >= 0) & (hi_cell >= 0) & (lo_cell != hi_cell)
        n_contact += int(np.count_nonzero(contact))
        owner = np.where(contact, FLUID, owner)
        if not grid.periodic:
            owner[_sl(k, 0, d)] = FIXED
            owner[_sl(k, -1, d)] = FIXED
        faces.append(owner.ravel())
    if strict and n_contact:
        raise ResolutionTooCoarse(f"{n_contact} faces touch two inclusions")
    return LabelField(
        grid=grid,
        cells=cells.ravel(),
        faces=np.concatenate(faces),
        centers=inclusions.centers.copy(),
        radius=r,
        n_contact_faces=n_contact,
    )


# ---------------------------------------------------------------------------
# ASCII field dumps
# ---------------------------------------------------------------------------


def dump_field(path: str | Path, grid: Grid, values, role: str) -> None:
    """Header ``d N boundary role`` then one value per line (row-major)."""
    if isinstance(values, StaggeredField):
        flat = values.flat()
    else:
        flat = np.asarray(values, dtype=float).ravel()
    body = "\n".join(f"{v:.17g}" for v in flat)
    Path(path).write_text(f"{grid.dim} {grid.n} {grid.boundary} {role}\n{body}\n")


def load_field(path: str | Path, length: float = 1.0):
    """Inverse of :func:`dump_field`; returns ``(grid, values, role)``.

    The dump carries no physical length; pass it to rebuild the grid.
    """
    lines = Path(path).read_text().split("\n")
    d, n, boundary, role = lines[0].split()
    grid = Grid(int(d), int(n), length, boundary)
    values = np.array([float(x) for x in lines[1:] if x.strip()])
    if role == "velocity":
        return grid, StaggeredField.from_flat(grid, values), role
    return grid, values.reshape(grid.cell_shape), role
