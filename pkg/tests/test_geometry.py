import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stokes_rve.errors import InvalidParams, JammingFailure
from stokes_rve.geometry import (
    InclusionSet,
    ball_volume,
    load_inclusions,
    perturbed_lattice_generate,
    restrict_to_box,
    rsa_generate,
    save_inclusions,
    validate,
)


def brute_force_gap(inc: InclusionSet) -> float:
    """Smallest surface gap over all pairs and all neighboring periodic images."""
    L, c, d = inc.cell_length, inc.centers, inc.dim
    best = np.inf
    for shift in itertools.product((-1, 0, 1), repeat=d):
        s = L * np.array(shift)
        for i in range(len(c)):
            for j in range(len(c)):
                if i == j and not any(shift):
                    continue
                best = min(best, np.linalg.norm(c[i] - c[j] - s) - 2 * inc.radius)
    return best


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_rsa_gap_matches_brute_force(seed):
    inc = rsa_generate(2, 16.0, 0.2, 0.2, seed)
    gap = brute_force_gap(inc)
    assert gap > inc.gap
    assert validate(inc).min_gap == pytest.approx(gap, rel=1e-12)
    assert validate(inc).passed


def test_rsa_count_and_fraction():
    inc = rsa_generate(2, 32.0, 0.15, 0.2, 3)
    assert inc.n_centers == round(0.15 * 32**2 / np.pi)
    assert inc.volume_fraction == pytest.approx(inc.n_centers * np.pi / 32**2)
    assert np.all((inc.centers >= 0) & (inc.centers < 32))


def test_rsa_is_pure_function_of_seed():
    a = rsa_generate(3, 10.0, 0.1, 0.3, 7)
    b = rsa_generate(3, 10.0, 0.1, 0.3, 7)
    c = rsa_generate(3, 10.0, 0.1, 0.3, 8)
    assert np.array_equal(a.centers, b.centers)
    assert not np.array_equal(a.centers, c.centers)


def test_rsa_rejects_bad_params():
    with pytest.raises(InvalidParams):
        rsa_generate(2, 16.0, 0.5, 0.2, 0)
    with pytest.raises(InvalidParams):
        rsa_generate(2, 16.0, 0.1, 1.5, 0)
    with pytest.raises(InvalidParams):
        rsa_generate(4, 16.0, 0.1, 0.2, 0)


def test_rsa_jamming_is_reported():
    with pytest.raises(JammingFailure) as info:
        rsa_generate(2, 10.0, 0.3, 0.9, 0, max_attempts=200)
    assert info.value.placed < info.value.target


def test_ball_volume():
    assert ball_volume(2) == pytest.approx(np.pi)
    assert ball_volume(3, 2.0) == pytest.approx(4 / 3 * np.pi * 8)


def test_lattice_anisotropic():
    inc = perturbed_lattice_generate(2, 32.0, (3.2, 6.4), 0.3, 0.2, seed=1)
    assert inc.n_centers == 10 * 5
    assert validate(inc).passed
    assert brute_force_gap(inc) > 0.2
    with pytest.raises(InvalidParams):
        perturbed_lattice_generate(2, 32.0, (3.0, 6.4), 0.3, 0.2)
    with pytest.raises(InvalidParams):
        perturbed_lattice_generate(2, 32.0, 5.0, 0.0, 0.2)


def test_serialization_round_trip_is_bit_exact(tmp_path):
    inc = rsa_generate(2, 16.0, 0.2, 0.2, 11)
    path = tmp_path / "inc.txt"
    save_inclusions(inc, path)
    back = load_inclusions(path)
    assert back.dim == 2 and back.seed == 11
    assert back.cell_length == inc.cell_length and back.gap == inc.gap
    assert np.array_equal(back.centers, inc.centers)
    header = path.read_text().splitlines()[0].split()
    assert header == ["2", "16", "0.20000000000000001", str(inc.n_centers), "11"]


UNIT_BOX = ((0.0, 0.0), (1.0, 1.0))


def test_restrict_examples():
    # center eps*x = (0.5, 0.5) with eps = 0.1 is kept
    inc = InclusionSet(2, 10.0, [[5.0, 5.0]], 0.2)
    kept = restrict_to_box(inc, 0.1, UNIT_BOX)
    assert np.any(np.all(np.isclose(kept.centers, [0.5, 0.5]), axis=1))
    # center eps*x = (0.05, 0.5), delta = 0.1: 0.05 - 0.11 < 0, dropped
    inc = InclusionSet(2, 10.0, [[0.5, 5.0]], 0.1)
    kept = restrict_to_box(inc, 0.1, UNIT_BOX)
    assert not np.any(np.all(np.isclose(kept.centers, [0.05, 0.5]), axis=1))
    assert np.allclose(kept.radius, 0.1) and np.allclose(kept.gap, 0.01)


def test_restrict_empty_when_nothing_fits():
    inc = rsa_generate(2, 16.0, 0.1, 0.2, 0)
    kept = restrict_to_box(inc, 1.0, UNIT_BOX)
    assert kept.n_centers == 0


def test_restrict_parent_indices():
    inc = rsa_generate(2, 8.0, 0.15, 0.2, 4)
    eps = 1 / 16
    kept = restrict_to_box(inc, eps, UNIT_BOX)
    back = np.mod(kept.centers / eps, inc.cell_length)
    assert np.allclose(back, inc.centers[kept.parent], atol=1e-9)


def tiled_centers_in_box(inc: InclusionSet, eps: float) -> int:
    """Centers of the eps-scaled periodic tiling that lie in the unit box."""
    L = inc.cell_length
    reps = int(np.ceil(1 / (eps * L))) + 1
    count = 0
    for shift in itertools.product(range(-1, reps + 1), repeat=inc.dim):
        x = eps * (inc.centers + L * np.array(shift))
        count += int(np.sum(np.all((x >= 0) & (x <= 1), axis=1)))
    return count


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(2, 12))
def test_restricted_fraction_never_exceeds_tiled(seed, k):
    inc = rsa_generate(2, 8.0, 0.15, 0.2, seed)
    eps = 1.0 / k
    kept = restrict_to_box(inc, eps, UNIT_BOX)
    assert kept.n_centers <= tiled_centers_in_box(inc, eps)
    assert np.all(kept.centers - 1.2 * eps >= -1e-12)
    assert np.all(kept.centers + 1.2 * eps <= 1 + 1e-12)
