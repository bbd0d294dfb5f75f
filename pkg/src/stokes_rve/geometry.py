"""Periodic hardcore suspensions of balls.

An :class:`InclusionSet` is either periodic (a torus of side ``cell_length``)
or, after :func:`restrict_to_box`, a finite collection inside an axis-aligned
box.  Periodic sets use unit balls; rescaled sets carry ``radius = eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidParams, JammingFailure

# RSA stays well below jamming with these fractions; callers may raise them.
DEFAULT_MAX_FRACTION = {2: 0.30, 3: 0.25}


class GeneratorTag(str, Enum):
    RSA = "RSA"
    PERTURBED_LATTICE = "PerturbedLattice"
    MANUAL = "Manual"


def ball_volume(dim: int, radius: float = 1.0) -> float:
    return math.pi ** (dim / 2) / math.gamma(dim / 2 + 1) * radius**dim


@dataclass(frozen=True)
class InclusionSet:
    dim: int
    cell_length: float
    centers: np.ndarray
    gap: float
    seed: int = 0
    generator_tag: GeneratorTag = GeneratorTag.MANUAL
    radius: float = 1.0
    # (lower, upper) corners for a non-periodic set produced by restrict_to_box
    box: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    # index of the periodic inclusion each center was copied from
    parent: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise InvalidParams(f"dimension must be 2 or 3, got {self.dim}")
        centers = np.array(self.centers, dtype=float).reshape(-1, self.dim)
        centers.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        if self.parent is not None:
            parent = np.asarray(self.parent, dtype=np.int64)
            parent.setflags(write=False)
            object.__setattr__(self, "parent", parent)

    @property
    def n_centers(self) -> int:
        return len(self.centers)

    @property
    def periodic(self) -> bool:
        return self.box is None

    @property
    def domain_volume(self) -> float:
        if self.box is None:
            return self.cell_length**self.dim
        lo, hi = self.box
        return float(np.prod(np.subtract(hi, lo)))

    @property
    def volume_fraction(self) -> float:
        return self.n_centers * ball_volume(self.dim, self.radius) / self.domain_volume


def min_image(disp: np.ndarray, length: float) -> np.ndarray:
    """Minimum-image displacement on a torus of side ``length``."""
    return disp - length * np.round(disp / length)


def pairwise_center_distances(inclusions: InclusionSet) -> np.ndarray:
    """Dense matrix of (minimum-image, for periodic sets) center distances."""
    c = inclusions.centers
    disp = c[:, None, :] - c[None, :, :]
    if inclusions.periodic:
        disp = min_image(disp, inclusions.cell_length)
    return np.sqrt(np.sum(disp**2, axis=-1))


def min_surface_gap(inclusions: InclusionSet) -> float:
    """Smallest surface-to-surface distance; +inf for fewer than two balls."""
    n = inclusions.n_centers
    if n < 2:
        return math.inf
    dist = pairwise_center_distances(inclusions)
    dist[np.diag_indices(n)] = np.inf
    return float(dist.min() - 2 * inclusions.radius)


def rsa_generate(
    dim: int,
    cell_length: float,
    target_fraction: float,
    gap: float,
    seed: int,
    max_attempts: int = 100_000,
    max_fraction: float | None = None,
) -> InclusionSet:
    """Random sequential addition of unit balls on the torus ``[0, L)^d``.

    The number of balls is ``round(target_fraction * L^d / |B_1|)``.  Each
    proposal is uniform on the torus and accepted when every periodic center
    distance exceeds ``2 + gap``.  ``JammingFailure`` is raised after
    ``max_attempts`` consecutive rejections.
    """
    if dim not in (2, 3):
        raise InvalidParams(f"dimension must be 2 or 3, got {dim}")
    if not 0.0 < gap < 1.0:
        raise InvalidParams(f"gap must lie in (0, 1), got {gap}")
    if cell_length <= 0:
        raise InvalidParams("cell_length must be positive")
    limit = DEFAULT_MAX_FRACTION[dim] if max_fraction is None else max_fraction
    if not 0.0 <= target_fraction < 1.0 or target_fraction > limit:
        raise InvalidParams(
            f"target_fraction {target_fraction} outside [0, {limit}] (RSA jamming guard)"
        )
    rng = np.random.default_rng(seed)
    target = int(round(target_fraction * cell_length**dim / ball_volume(dim)))
    min_dist2 = (2.0 + gap) ** 2
    if target > 0 and cell_length <= 2.0 + gap:
        raise JammingFailure(0, target, 0)
    centers = np.empty((target, dim))
    placed = 0
    rejections = 0
    while placed < target:
        trial = rng.uniform(0.0, cell_length, size=dim)
        if placed:
            disp = min_image(centers[:placed] - trial, cell_length)
            if np.min(np.einsum("ij,ij->i", disp, disp)) <= min_dist2:
                rejections += 1
                if rejections >= max_attempts:
                    raise JammingFailure(placed, target, rejections)
                continue
        centers[placed] = trial
        placed += 1
        rejections = 0
    return InclusionSet(
        dim=dim,
        cell_length=float(cell_length),
        centers=centers,
        gap=float(gap),
        seed=int(seed),
        generator_tag=GeneratorTag.RSA,
    )


def perturbed_lattice_generate(
    dim: int,
    cell_length: float,
    spacing: float | Sequence[float],
    jitter_amplitude: float,
    gap: float,
    seed: int = 0,
) -> InclusionSet:
    """One ball per lattice cell, jittered uniformly in ``[-a, a]^d``.

    ``spacing`` may differ per axis (anisotropic lattice); it must divide
    ``cell_length`` and satisfy ``spacing >= 2 + gap + 2 * jitter_amplitude``.
    """
    spacings = np.broadcast_to(np.asarray(spacing, dtype=float), (dim,))
    if not 0.0 < gap < 1.0 or jitter_amplitude < 0:
        raise InvalidParams("need 0 < gap < 1 and jitter_amplitude >= 0")
    needed = 2.0 + gap + 2.0 * jitter_amplitude
    if np.any(spacings < needed):
        raise InvalidParams(
            f"spacing {spacings.tolist()} below 2 + gap + 2*jitter = {needed:g}"
        )
    counts = cell_length / spacings
    if np.any(np.abs(counts - np.round(counts)) > 1e-9):
        raise InvalidParams("spacing must divide cell_length")
    counts = np.round(counts).astype(int)
    axes = [(np.arange(m) + 0.5) * s for m, s in zip(counts, spacings)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    if jitter_amplitude > 0:
        rng = np.random.default_rng(seed)
        grid = grid + rng.uniform(-jitter_amplitude, jitter_amplitude, size=grid.shape)
    grid = np.mod(grid, cell_length)
    return InclusionSet(
        dim=dim,
        cell_length=float(cell_length),
        centers=grid,
        gap=float(gap),
        seed=int(seed),
        generator_tag=GeneratorTag.PERTURBED_LATTICE,
    )


@dataclass(frozen=True)
class ValidationReport:
    min_gap: float
    volume_fraction: float
    checks: dict[str, bool]

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def validate(inclusions: InclusionSet) -> ValidationReport:
    gap = min_surface_gap(inclusions)
    lam = inclusions.volume_fraction
    c = inclusions.centers
    if inclusions.periodic:
        inside = bool(np.all((c >= 0) & (c < inclusions.cell_length)))
        # a ball must not touch its own periodic image
        self_image = inclusions.n_centers == 0 or (
            inclusions.cell_length > 2 * inclusions.radius + inclusions.gap
        )
    else:
        lo, hi = (np.asarray(b) for b in inclusions.box)
        inside = bool(np.all((c >= lo) & (c <= hi)))
        self_image = True
    checks = {
        "hardcore": gap > inclusions.gap,
        "volume_fraction": 0.0 <= lam < 1.0,
        "centers_in_cell": inside,
        "self_image": self_image,
    }
    return ValidationReport(min_gap=gap, volume_fraction=lam, checks=checks)


def restrict_to_box(
    inclusions: InclusionSet,
    eps: float,
    box: tuple[Sequence[float], Sequence[float]],
) -> InclusionSet:
    """Rescale a periodic set by ``eps`` and keep the balls whose
    ``eps * (1 + gap)`` enlargement lies inside ``box`` (closed containment).

    Periodic images are tiled so that every copy intersecting the box is
    considered.  ``parent`` records the periodic index of each kept center.
    """
    if eps <= 0:
        raise InvalidParams("eps must be positive")
    if not inclusions.periodic:
        raise InvalidParams("restrict_to_box expects a periodic inclusion set")
    lo = np.asarray(box[0], dtype=float)
    hi = np.asarray(box[1], dtype=float)
    d = inclusions.dim
    L = inclusions.cell_length
    reach = eps * (inclusions.radius + inclusions.gap)
    kept: list[np.ndarray] = []
    parents: list[np.ndarray] = []
    if inclusions.n_centers:
        kmin = np.floor(lo / (eps * L)) - 1
        kmax = np.ceil(hi / (eps * L)) + 1
        ranges = [np.arange(a, b + 1) for a, b in zip(kmin, kmax)]
        shifts = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, d)
        idx = np.arange(inclusions.n_centers)
        for shift in shifts:
            scaled = eps * (inclusions.centers + L * shift)
            ok = np.all((scaled - reach >= lo) & (scaled + reach <= hi), axis=1)
            kept.append(scaled[ok])
            parents.append(idx[ok])
    centers = np.concatenate(kept) if kept else np.empty((0, d))
    parent = np.concatenate(parents) if parents else np.empty(0, dtype=np.int64)
    return InclusionSet(
        dim=d,
        cell_length=float(np.max(hi - lo)),
        centers=centers,
        gap=inclusions.gap * eps,
        seed=inclusions.seed,
        generator_tag=inclusions.generator_tag,
        radius=inclusions.radius * eps,
        box=(tuple(lo.tolist()), tuple(hi.tolist())),
        parent=parent,
    )


def save_inclusions(inclusions: InclusionSet, path: str | Path) -> None:
    """Write the plain-text format ``d L delta n seed`` + one center per line."""
    lines = [
        f"{inclusions.dim} {inclusions.cell_length:.17g} {inclusions.gap:.17g} "
        f"{inclusions.n_centers} {inclusions.seed}"
    ]
    lines += [" ".join(f"{x:.17g}" for x in row) for row in inclusions.centers]
    Path(path).write_text("\n".join(lines) + "\n")


def load_inclusions(path: str | Path) -> InclusionSet:
    rows = Path(path).read_text().split("\n")
    head = rows[0].split()
    if len(head) != 5:
        raise InvalidParams(f"bad header in {path}: {rows[0]!r}")
    dim, L, delta, n, seed = int(head[0]), float(head[1]), float(head[2]), int(head[3]), int(head[4])
    centers = np.array([[float(x) for x in r.split()] for r in rows[1 : 1 + n]]).reshape(n, dim)
    return InclusionSet(dim=dim, cell_length=L, centers=centers, gap=delta, seed=seed)
