import numpy as np
import pytest

from app.core.analyze import (ConeParams, bq_from_density, boundary_decay_test, cone_samples, doubling_test,
                              dyadic_groups, hl_max, in_cone, nt_max, quotient_test, solvability_ratios,
                              vertical_approach)
from app.core.domain import GraphDomain
from app.core.dyadic import build_cubes
from app.core.geometry import PhasePoint, ReferenceParams, dilate, origin, reference_point
from app.core.grid import GridFunction
from app.core.simulate import DyadicPartition, SdeConfig, estimate_measure, point_mass_histogram, surface_grid
from app.exceptions import ValidationFailure


def _height(pts):
    return pts[:, 0]


def test_cone_defaults_and_validation(sine2):
    assert ConeParams().eta == 2.0
    with pytest.raises(ValidationFailure):
        ConeParams(eta=-1.0)
    with pytest.raises(ValidationFailure):
        ConeParams(delta=0.0)
    assert not ConeParams(eta=2.0).check_domain(sine2)
    assert ConeParams(eta=0.5).check_domain(sine2)


def test_cone_samples_lie_in_the_cone(flat1):
    cone = ConeParams(eta=2.0)
    pts = cone_samples(flat1, origin(1), cone, 1024)
    assert pts.shape[0] > 100
    assert np.all(in_cone(flat1, origin(1), pts, cone))
    assert np.all(pts[:, 0] > 0)


def test_cone_uses_the_distance_to_the_vertex_level():
    # on a steep graph the cone also reaches below the level of its vertex
    dom = GraphDomain(m=2, family="linear", slope=(0.75,))
    cone = ConeParams(eta=2.0)
    below = np.array([[-0.7, -0.5, 0.0, 0.0, 0.0]])
    assert in_cone(dom, origin(2), below, cone)[0]
    assert not in_cone(dom, origin(2), below, ConeParams(eta=1.0))[0]
    pts = cone_samples(dom, origin(2), cone, 2048)
    assert pts.shape[0] > 0
    assert np.all(dom.contains_arrays(pts))
    assert np.all(in_cone(dom, origin(2), pts, cone))


def test_narrow_cone_is_empty(flat1):
    # d(p, p0) is never below the height of p
    assert cone_samples(flat1, origin(1), ConeParams(eta=1.0), 512).shape[0] == 0


def test_nt_max_of_constant(flat1):
    assert nt_max(lambda pts: np.full(len(pts), 3.0), flat1, origin(1), ConeParams()).value == 3.0


def test_truncated_cone_bounds_the_height(flat1):
    value = nt_max(_height, flat1, origin(1), ConeParams(delta=0.3)).value
    assert 0.0 < value <= 0.3


def test_nt_max_grows_with_the_aperture(flat1):
    p0 = origin(1)
    samples = np.concatenate([cone_samples(flat1, p0, ConeParams(eta=e), 1024) for e in (2.0, 3.0, 4.0)])
    values = [nt_max(_height, flat1, p0, ConeParams(eta=e), samples=samples).value for e in (2.0, 3.0, 4.0)]
    assert values == sorted(values)


def test_hl_max_on_surface_cells(flat1):
    part = surface_grid(flat1, 0.5, n_Y=4, n_t=4)
    f = np.zeros(len(part))
    f[5] = 1.0
    assert hl_max(f, part.cells[5].center, part) == 1.0
    assert hl_max(np.full(len(part), 2.0), part.cells[10].center, part) == pytest.approx(2.0)


def test_hl_max_on_dyadic_cells(flat1):
    part = DyadicPartition(build_cubes(flat1, 0, 1, ([0.0, 0.0], [1.0, 1.0])), 1)
    f = np.zeros(len(part))
    f[0] = 1.0
    assert hl_max(f, part.cells[3].center, part) == pytest.approx(1.0 / len(part))


def test_reverse_holder_of_uniform_density_is_one():
    report = bq_from_density(np.ones(4), np.ones(4), [[0, 1, 2, 3]], 2.0)
    assert report.constant == pytest.approx(1.0)


def test_reverse_holder_grows_with_q():
    density = np.array([1.0, 2.0, 3.0, 4.0])
    c2 = bq_from_density(density, np.ones(4), [[0, 1, 2, 3]], 2.0).constant
    c3 = bq_from_density(density, np.ones(4), [[0, 1, 2, 3]], 3.0).constant
    assert 1.0 < c2 < c3


def test_reverse_holder_flags_zero_children():
    report = bq_from_density(np.array([0.0, 1.0, 1.0, 1.0]), np.ones(4), [[0, 1, 2, 3]], 2.0)
    assert report.flagged == [{"cube": 0, "children": [0]}]
    with pytest.raises(ValidationFailure):
        bq_from_density(np.zeros(4), np.ones(4), [[0, 1, 2, 3]], 2.0)
    with pytest.raises(ValidationFailure):
        bq_from_density(np.ones(4), np.ones(4), [[0, 1, 2, 3]], 1.0)


def test_dyadic_groups_follow_the_ancestors(flat1):
    part = DyadicPartition(build_cubes(flat1, 0, 2, ([0.0, 0.0], [1.0, 1.0])), 2)
    groups = dyadic_groups(part, 1)
    assert len(groups) == 32
    assert all(len(g) == 32 for g in groups)
    with pytest.raises(ValidationFailure):
        dyadic_groups(part, 3)


def test_doubling_of_a_point_mass(flat1):
    part = surface_grid(flat1, 0.5, n_Y=2)
    hist = point_mass_histogram(part, PhasePoint([1.0], [0.0], 0.0), 50, index=0)
    report = doubling_test(hist, part.cells)
    assert report.ratios == [1.0]
    assert report.skipped == [1]
    with pytest.raises(ValidationFailure):
        doubling_test(hist, part.cells, min_count=0)


def test_kolmogorov_doubling_is_dilation_invariant(flat1, identity1):
    # same seed, everything dilated by 2: every path and every cube scales exactly
    pole = reference_point(origin(1), ReferenceParams(0.5, 2.0, "plus"))
    reports = []
    for s in (1.0, 2.0):
        part = surface_grid(flat1, 0.5 * s, n_Y=4, n_t=4, Y_center=[0.25 * s ** 3], t_center=-0.75 * s * s)
        config = SdeConfig(1e-3, 20.0, 2000, 11, batch_size=500).scaled(s)
        hist = estimate_measure(flat1, identity1, dilate(s, pole), part, config, "K")
        reports.append(doubling_test(hist, part.cells, 2.0, min_count=20))
    assert reports[0].ratios
    assert all(np.isfinite(r) and r >= 1.0 for r in reports[0].ratios)
    assert reports[0].skipped == reports[1].skipped
    assert reports[0].ratios == pytest.approx(reports[1].ratios)


@pytest.fixture
def linear_x():
    axes = (np.linspace(0.0, 1.0, 65), np.linspace(-1.0, 1.0, 65), np.linspace(0.0, 0.25, 9))
    X, _, _ = np.meshgrid(*axes, indexing="ij")
    return GridFunction(axes, X, ("x", "y", "t"))


def test_boundary_decay_of_linear_solution(flat1, linear_x):
    base = PhasePoint([0.0], [0.0], 0.125)
    report = boundary_decay_test(linear_x, flat1, base, vertical_approach(base, [0.05, 0.1, 0.2, 0.4]))
    assert report.alpha == pytest.approx(1.0, abs=1e-6)
    assert report.r2 == pytest.approx(1.0)
    with pytest.raises(ValidationFailure):
        boundary_decay_test(linear_x, flat1, base, vertical_approach(base, [0.1, 0.2]))


def test_quotient_of_equal_solutions_is_one(flat1):
    u = lambda pts: 1.0 + pts[:, 0]
    result = quotient_test(u, u, flat1, origin(1), 0.5, n=512)
    assert result["sup"] == pytest.approx(1.0)
    assert result["inf"] == pytest.approx(1.0)


def test_solvability_ratio_of_constant_datum(flat1):
    boundary = np.array([[0.0, 0.0, 0.1], [0.0, 0.1, 0.2]])
    ones = lambda pts: np.ones(len(pts))
    result = solvability_ratios(flat1, [(ones, ones)], boundary, [0.5, 0.5], sample_n=256)
    assert result["constant"] == pytest.approx(1.0)
