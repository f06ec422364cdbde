import numpy as np
import pytest

from app.core.geometry import (GroupConstants, PhasePoint, ReferenceParams, ball_contains, ball_volume, compose,
                               compose_arrays, dilate, distance_arrays, group_norm, inverse, origin,
                               pseudo_triangle_constant, quasi_distance, quasi_triangle_constant, random_points,
                               reference_point, reference_tuple)
from app.core.rng import stream
from app.exceptions import DimensionMismatch, ValidationFailure


def test_compose_worked_example():
    p = compose(PhasePoint([1], [0], 0), PhasePoint([0], [0], 1))
    assert p.allclose(PhasePoint([1], [-1], 1))


def test_inverse_worked_example():
    assert inverse(PhasePoint([1], [2], 3)).allclose(PhasePoint([-1], [-5], -3))


def test_dilation_worked_example():
    assert dilate(2.0, PhasePoint([1], [1], 1)).allclose(PhasePoint([2], [8], 4))


def test_norm_worked_example():
    assert group_norm(PhasePoint([3], [8], 4)) == pytest.approx(7.0, abs=1e-12)


def test_homogeneous_dimension():
    assert GroupConstants(1).q == 6
    assert GroupConstants(2).q == 10
    assert GroupConstants(3).N == 6


@pytest.mark.parametrize("m", [1, 2, 3])
def test_group_axioms_on_random_triples(m):
    gen = stream(7, m)
    a, b, c = (random_points(gen, m, 500, 3.0) for _ in range(3))
    lhs = compose_arrays(compose_arrays(a, b, m), c, m)
    rhs = compose_arrays(a, compose_arrays(b, c, m), m)
    assert np.max(np.abs(lhs - rhs)) < 1e-12
    p = PhasePoint.from_array(a[0], m)
    assert compose(p, inverse(p)).allclose(origin(m))
    assert compose(inverse(p), p).allclose(origin(m))


def test_dilation_is_a_group_automorphism():
    gen = stream(3)
    for a, b in zip(random_points(gen, 2, 50), random_points(gen, 2, 50)):
        p, q = PhasePoint.from_array(a), PhasePoint.from_array(b)
        assert dilate(1.7, compose(p, q)).allclose(compose(dilate(1.7, p), dilate(1.7, q)), atol=1e-10)
        assert group_norm(dilate(1.7, p)) == pytest.approx(1.7 * group_norm(p), rel=1e-12)


def test_quasi_distance_is_symmetric_and_left_invariant():
    gen = stream(5)
    w = PhasePoint.from_array(random_points(gen, 1, 1)[0])
    for a, b in zip(random_points(gen, 1, 50), random_points(gen, 1, 50)):
        p, q = PhasePoint.from_array(a), PhasePoint.from_array(b)
        assert quasi_distance(p, q) == pytest.approx(quasi_distance(q, p), abs=1e-14)
        assert quasi_distance(compose(w, p), compose(w, q)) == pytest.approx(quasi_distance(p, q), rel=1e-10)
    assert quasi_distance(w, w) == 0.0


def test_distance_arrays_matches_points():
    gen = stream(9)
    a, b = random_points(gen, 2, 20), random_points(gen, 2, 20)
    d = distance_arrays(a, b, 2)
    for i in range(20):
        assert d[i] == pytest.approx(quasi_distance(PhasePoint.from_array(a[i]), PhasePoint.from_array(b[i])))


def test_ball_is_open():
    o = origin(1)
    assert not ball_contains(o, 1.0, PhasePoint([1.0], [0.0], 0.0))
    assert ball_contains(o, 1.0, PhasePoint([0.999], [0.0], 0.0))
    with pytest.raises(ValidationFailure):
        ball_contains(o, 0.0, o)


def test_triangle_constants_are_finite(rng):
    c1 = pseudo_triangle_constant(1, 5000, rng)
    c2 = quasi_triangle_constant(1, 5000, rng)
    assert 1.0 <= c1 < np.inf
    assert 0.0 < c2 < np.inf


def test_reference_points():
    a_plus = reference_tuple(1, ReferenceParams(0.5, 2.0, "plus"))
    assert a_plus.allclose(PhasePoint([1.0], [-1.0 / 6.0], 0.25))
    a_minus = reference_tuple(2, ReferenceParams(1.0, 1.0, "minus"))
    assert a_minus.allclose(PhasePoint([0.0, 1.0], [0.0, 2.0 / 3.0], -1.0))
    base = PhasePoint([0.0], [1.0], 2.0)
    assert reference_point(base, ReferenceParams(0.5, 2.0)).allclose(compose(base, a_plus))
    with pytest.raises(ValidationFailure):
        ReferenceParams(0.5, 0.5)


def test_mixed_dimensions_are_rejected():
    with pytest.raises(DimensionMismatch):
        compose(origin(1), origin(2))
    with pytest.raises(DimensionMismatch):
        PhasePoint([0.0, 1.0], [0.0], 0.0)


def test_nonfinite_point_is_rejected():
    with pytest.raises(ValidationFailure):
        PhasePoint([np.nan], [0.0], 0.0)


def test_ball_volume_scales_like_r_to_q():
    v1, e1 = ball_volume(1, 1.0, 200000, stream(11))
    v2, e2 = ball_volume(1, 2.0, 200000, stream(11))
    assert v2 / v1 == pytest.approx(2.0 ** 6, rel=0.05)
    assert e1 > 0 and e2 > 0
