import numpy as np
import pytest

from app.config import settings
from app.core.dyadic import build_cubes, containing_cube, level_sides, split_factors, whitney
from app.core.geometry import PhasePoint
from app.exceptions import ValidationFailure


@pytest.fixture
def system1(flat1):
    return build_cubes(flat1, 0, 2, ([0.0, 0.0], [1.0, 1.0]))


def test_level_sides_and_counts(system1):
    assert level_sides(1, 1).tolist() == [0.125, 0.25]
    assert split_factors(2).tolist() == [2, 8, 8, 4]
    assert [system1.count(k) for k in system1.levels()] == [1, 32, 1024]


def test_nesting_and_partition_are_exact(system1, rng):
    assert system1.nesting_violations() == 0
    assert system1.partition_failures(system1.random_boundary_points(5000, rng)) == 0


def test_containing_cube_and_ancestry(system1):
    p = PhasePoint([0.0], [0.3], 0.6)
    cube = containing_cube(system1, p, 2)
    assert cube.index == (19, 9)
    assert cube.contains_params(np.array([0.3, 0.6]))[0]
    parent = system1.parent(cube)
    assert parent.key == containing_cube(system1, p, 1).key
    assert any(child.key == cube.key for child in system1.descendants(parent))
    assert len(system1.descendants(parent)) == 32


def test_cube_edges_belong_to_the_upper_cube(system1):
    cube = containing_cube(system1, PhasePoint([0.0], [0.125], 0.25), 1)
    assert cube.index == (1, 1)


def test_points_outside_window_are_rejected(system1):
    with pytest.raises(ValidationFailure):
        containing_cube(system1, PhasePoint([0.0], [1.5], 0.5), 1)
    with pytest.raises(ValidationFailure):
        system1.parent(system1.cubes(0)[0])


def test_unaligned_window_is_rejected(flat1):
    with pytest.raises(ValidationFailure):
        build_cubes(flat1, 0, 1, ([0.0, 0.0], [1.5, 1.0]))
    with pytest.raises(ValidationFailure):
        build_cubes(flat1, 0, 1, ([0.1, 0.0], [1.1, 1.0]))


def test_cube_budget_is_enforced(flat1, monkeypatch):
    monkeypatch.setattr(settings, "max_cubes", 100)
    with pytest.raises(ValidationFailure):
        build_cubes(flat1, 0, 2, ([0.0, 0.0], [1.0, 1.0]))


def test_measured_constants_are_sane(system1, rng):
    assert 0.0 < system1.diameter_constant(rng, n_cubes=8, n_points=16)["c_star"] < 10.0
    assert 0.0 < system1.inner_ball_constant(rng, n_cubes=8, n_face=16)["alpha"] < 2.0
    fit = system1.thin_boundary_fit(rng, n_cubes=4, n_points=1024)
    assert fit["beta"] > 0.0


def test_cube_centres_lie_on_curved_boundary(sine2):
    system = build_cubes(sine2, 0, 1, ([0.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0]))
    for cube in system.cubes(1)[:20]:
        assert sine2.height(cube.center.X[None, :])[0] == pytest.approx(0.0, abs=1e-14)


def test_whitney_layers(sine2, rng):
    dec = whitney(sine2, ([-1.0], [1.0], 1.0), 6)
    assert dec.side(0) == pytest.approx(0.2)
    cubes = dec.cubes()
    assert all(3.0 <= c.height_ratio <= 5.0 for c in cubes)
    assert all(c.dilate_inside(8.0) for c in cubes)
    expected = 1.0 - dec.h_bottom / dec.h_top
    assert dec.coverage(20000, rng) == pytest.approx(expected, abs=0.02)
    assert dec.locate(np.array([[0.0, 0.0]]))[0] is None


def test_dyadic_whitney_cubes_on_the_half_line(flat1, rng):
    dec = whitney(flat1, ([], [], 1.0), 4, scheme="dyadic")
    cubes = dec.cubes()
    assert len(cubes) == 8
    lows = sorted(c.h_lo for c in cubes)
    assert lows[:2] == [1.0 / 16, 1.5 / 16]
    for c in cubes:
        # side x / 2 at each dyadic distance x = 2^-k
        k = np.log2(c.h_lo)
        if k == np.floor(k):
            assert c.side == c.h_lo / 2
        assert c.height_ratio in (2.0, 3.0)
        assert c.dilate_inside(4.0)
    assert not all(c.dilate_inside(8.0) for c in cubes)
    assert dec.h_bottom == 1.0 / 16
    assert dec.coverage(20000, rng) == pytest.approx(1.0 - 1.0 / 16, abs=0.01)
    assert dec.locate(np.array([[0.3]]))[0].h_lo == 0.25
    assert dec.locate(np.array([[0.45]]))[0].h_lo == 0.375


def test_unknown_whitney_scheme_is_rejected(flat1):
    with pytest.raises(ValidationFailure):
        whitney(flat1, ([], [], 1.0), 2, scheme="octal")
