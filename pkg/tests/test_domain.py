import numpy as np
import pytest

from app.core.domain import (GraphDomain, SurfaceCube, TrigTerm, coeff_drift, coeff_eval, constant_field, contains,
                             dini_integral, dini_integral_all, dini_modulus, field_from_spec, laminate_field,
                             sigma_E_box, sigma_of_cube, surface_density, trig_field)
from app.core.geometry import PhasePoint, origin
from app.exceptions import DimensionMismatch, ValidationFailure


def test_flat_domain_membership(flat1):
    assert contains(flat1, PhasePoint([0.5], [3.0], -1.0))
    assert not contains(flat1, PhasePoint([0.0], [0.0], 0.0))
    assert not contains(flat1, PhasePoint([-0.1], [0.0], 0.0))


def test_sine_domain(sine2):
    assert sine2.lipschitz_M == pytest.approx(2 * np.pi * 0.2)
    b = sine2.boundary_point([0.25], [0.0, 0.0], 0.0)
    assert b.X[1] == pytest.approx(0.2)
    assert sine2.height(b.X[None, :])[0] == pytest.approx(0.0, abs=1e-15)


def test_sampled_lipschitz_constant_respects_bound(sine2, rng):
    assert sine2.check_lipschitz(5000, rng) <= sine2.lipschitz_M + 1e-12


def test_m1_rejects_non_flat_graph():
    with pytest.raises(ValidationFailure):
        GraphDomain(m=1, family="sine", amplitude=0.1)


def test_linear_slope_length_is_checked():
    with pytest.raises(DimensionMismatch):
        GraphDomain(m=2, family="linear", slope=(1.0, 2.0))


def test_surface_density_of_linear_graph():
    dom = GraphDomain(m=2, family="linear", slope=(0.75,))
    assert surface_density(dom, np.array([[0.3]]))[0] == pytest.approx(1.25)
    assert sigma_E_box(dom, [0.0], [2.0]) == pytest.approx(2.5)


def test_surface_measures_of_flat_cube(flat2):
    cube = SurfaceCube(PhasePoint([0.0, 0.0], [0.0, 0.0], 0.0), 0.5)
    assert sigma_of_cube(flat2, cube, "E") == pytest.approx(1.0)
    assert sigma_of_cube(flat2, cube, "P") == pytest.approx(0.5)
    assert sigma_of_cube(flat2, cube, "K") == pytest.approx(0.5 * 0.25 ** 2)


def test_cube_membership_is_strict(flat1):
    cube = SurfaceCube(origin(1), 1.0)
    pts = np.array([[0.0, 0.5, 0.5], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -0.99]])
    assert cube.contains_arrays(pts, "K").tolist() == [True, False, False, True]
    assert cube.contains_arrays(pts, "P").tolist() == [True, True, False, True]


def test_cube_centre_must_lie_on_boundary(sine2):
    with pytest.raises(ValidationFailure):
        SurfaceCube(PhasePoint([0.25, 0.0], [0.0, 0.0], 0.0), 0.1).validate_on(sine2)
    SurfaceCube(sine2.boundary_point([0.25], [0.0, 0.0], 0.0), 0.1).validate_on(sine2)


def test_identity_field(identity2):
    X = np.random.default_rng(0).uniform(-3, 3, size=(10, 2))
    assert np.allclose(coeff_eval(identity2, X), np.eye(2))
    assert np.allclose(coeff_drift(identity2, X), 0.0)
    assert identity2.is_identity and identity2.kappa == 1.0


def test_laminate_values_and_drift(sinusoid):
    X = np.array([[0.25], [0.0]])
    assert coeff_eval(sinusoid, X)[:, 0, 0] == pytest.approx([3.0, 2.0])
    assert coeff_drift(sinusoid, X)[:, 0] == pytest.approx([0.0, 2.0 * np.pi], abs=1e-12)
    assert sinusoid.periodic_lattice
    assert sinusoid.kappa == pytest.approx(3.0)


def test_drift_matches_finite_difference_divergence():
    fld = trig_field(np.diag([2.0, 3.0]), [TrigTerm(np.array([[0.3, 0.2], [0.2, 0.4]]), np.array([1.0, 2.0]), 0.3)])
    X = np.array([0.1, 0.7])
    h = 1e-6
    div = np.zeros(2)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        div += (fld.eval(X + e)[i] - fld.eval(X - e)[i]) / (2 * h)
    assert coeff_drift(fld, X[None, :])[0] == pytest.approx(div, rel=1e-6)


def test_non_elliptic_field_is_rejected():
    with pytest.raises(ValidationFailure):
        laminate_field([1.0], [1.5])
    with pytest.raises(ValidationFailure):
        constant_field(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValidationFailure):
        constant_field(np.eye(1) * 2.0, kappa=1.5)


def test_field_dimension_checks(identity2):
    with pytest.raises(DimensionMismatch):
        coeff_eval(identity2, np.zeros((3, 1)))


def test_blended_field_is_identity_far_out():
    fld = trig_field(2.0 * np.eye(1), [TrigTerm(0.5 * np.eye(1), np.array([1.0]))], blend_radius=1.0)
    assert np.allclose(fld.eval(np.array([[5.0]])), np.eye(1))
    assert not fld.periodic_lattice


def test_dini_of_vertical_independent_field_is_zero():
    fld = laminate_field([2.0, 3.0], [1.0, 1.0], axis=0)
    assert fld.xm_independent
    assert dini_modulus(fld, 0.5) == 0.0
    assert dini_integral(fld) == 0.0


def test_dini_of_all_variables_is_finite(sinusoid):
    value = dini_integral_all(sinusoid)
    assert 0.0 < value < np.inf


def test_field_from_spec_dispatch():
    fld = field_from_spec({"family": "laminate", "means": [2.0], "amplitudes": [1.0]})
    assert fld.family == "laminate"
    fld = field_from_spec({"family": "trig_polynomial", "base": [[2.0]],
                           "terms": [{"matrix": [[0.5]], "freq": [1.0]}]})
    assert len(fld.terms) == 1
