import numpy as np
import pytest

from app.core.domain import constant_field, laminate_field
from app.core.geometry import PhasePoint
from app.core.grid import (Box, GridFunction, carleson_constant, evaluate, extend_lateral, harnack_constant,
                           holder_exponent, solve_elliptic, solve_kolmogorov, solve_parabolic)
from app.exceptions import CflViolation, DimensionMismatch, ValidationFailure

KBOX = Box((0.0, -1.0, 0.0), (1.0, 1.0, 0.25))


def _nodes(gf):
    return np.meshgrid(*gf.axes, indexing="ij")


def test_degenerate_box_is_rejected():
    with pytest.raises(ValidationFailure):
        Box((0.0, 1.0), (1.0, 1.0))
    with pytest.raises(DimensionMismatch):
        Box((0.0,), (1.0, 1.0))


def test_elliptic_1d_reproduces_linear_data(flat1, identity1):
    gf = solve_elliptic(flat1, identity1, Box((0.0,), (1.0,)), lambda X: X[:, 0], 0.1)
    assert np.allclose(gf.values, gf.axes[0], atol=1e-8)
    assert gf.report.max_principle_ok


def test_elliptic_2d_reproduces_harmonic_quadratic(flat2, identity2):
    gf = solve_elliptic(flat2, identity2, Box((-1.0, 0.0), (1.0, 1.0)), lambda X: X[:, 0] * X[:, 1], 0.1)
    x1, x2 = _nodes(gf)
    assert np.max(np.abs(gf.values - x1 * x2)) < 1e-7


def test_elliptic_2d_off_diagonal_coefficients(flat2):
    # u = x1 x2 - x1^2 / 2 solves div(A grad u) = 0 for a11 = a22 = 1, a12 = 1/2
    fld = constant_field([[1.0, 0.5], [0.5, 1.0]])
    gf = solve_elliptic(flat2, fld, Box((0.0, 0.0), (1.0, 1.0)), lambda X: X[:, 0] * X[:, 1] - 0.5 * X[:, 0] ** 2,
                        0.1)
    x1, x2 = _nodes(gf)
    assert np.max(np.abs(gf.values - (x1 * x2 - 0.5 * x1 ** 2))) < 1e-7


def test_elliptic_1d_divergence_form_flux_is_constant(flat1, sinusoid):
    # (a u')' = 0 with u(0) = 0, u(1) = 1: a u' is the same on every face
    gf = solve_elliptic(flat1, sinusoid, Box((0.0,), (1.0,)), lambda X: X[:, 0], 1.0 / 64)
    x = gf.axes[0]
    a = sinusoid.eval(x[:, None])[:, 0, 0]
    faces = 2 * a[:-1] * a[1:] / (a[:-1] + a[1:])
    flux = faces * np.diff(gf.values) / np.diff(x)
    assert np.ptp(flux) < 1e-6 * np.abs(flux).max()


def test_spacing_must_divide_the_box(flat1, identity1):
    with pytest.raises(ValidationFailure):
        solve_elliptic(flat1, identity1, Box((0.0,), (1.0,)), lambda X: X[:, 0], 0.3)


@pytest.mark.parametrize("exact", [
    lambda x, y, t: x,
    lambda x, y, t: y + t * x,
    lambda x, y, t: x * x + 2.0 * t,
])
def test_kolmogorov_solver_reproduces_exact_solutions(flat1, identity1, exact):
    gf = solve_kolmogorov(flat1, identity1, KBOX, exact, (16, 32, 8))
    assert np.max(np.abs(gf.values - exact(*_nodes(gf)))) < 1e-10
    assert gf.report.max_principle_ok


def test_kolmogorov_cfl_is_enforced(flat1, identity1):
    with pytest.raises(CflViolation):
        solve_kolmogorov(flat1, identity1, KBOX, lambda x, y, t: x, (16, 32, 1))


def test_parabolic_solver_reproduces_exact_solutions(flat1, identity1):
    gf = solve_parabolic(flat1, identity1, Box((0.0, 0.0), (1.0, 0.5)), lambda x, t: x * x + 2.0 * t, (16, 8))
    x, t = _nodes(gf)
    assert np.max(np.abs(gf.values - (x * x + 2.0 * t))) < 1e-10


def test_crank_nicolson_converges_at_second_order(flat1, identity1):
    exact = lambda x, t: np.exp(x + t)
    errors = []
    for n in (16, 32):
        gf = solve_parabolic(flat1, identity1, Box((0.0, 0.0), (1.0, 0.5)), exact, (n, n // 2), theta=0.5)
        x, t = _nodes(gf)
        errors.append(np.max(np.abs(gf.values - exact(x, t))))
    assert np.log2(errors[0] / errors[1]) > 1.7


def test_time_marching_requires_m1(flat2, identity2):
    with pytest.raises(ValidationFailure):
        solve_kolmogorov(flat2, identity2, KBOX, lambda x, y, t: x, (4, 4, 4))


def test_box_below_boundary_is_rejected(flat1, identity1):
    with pytest.raises(ValidationFailure):
        solve_kolmogorov(flat1, identity1, Box((-0.5, -1.0, 0.0), (1.0, 1.0, 0.25)), lambda x, y, t: x, (8, 8, 8))


def test_homogenized_scale_field_is_accepted(flat1):
    fld = laminate_field([2.0], [1.0])
    gf = solve_kolmogorov(flat1, fld, KBOX, lambda x, y, t: np.ones_like(x), (8, 16, 4), eps=0.25)
    assert np.allclose(gf.values, 1.0)


def test_extend_lateral_zero():
    f = extend_lateral(lambda y, t: 1.0 + 0.0 * y, "zero")
    x = np.array([[0.0, 0.5], [0.0, 0.5]]).T
    assert f(x, np.zeros_like(x), np.zeros_like(x)).tolist() == [[1.0, 1.0], [0.0, 0.0]]
    with pytest.raises(ValidationFailure):
        extend_lateral(lambda y, t: y, "mirror")


@pytest.fixture
def linear_x():
    axes = (np.linspace(0.0, 1.0, 65), np.linspace(-1.0, 1.0, 65), np.linspace(0.0, 0.25, 9))
    X, _, _ = np.meshgrid(*axes, indexing="ij")
    return GridFunction(axes, X, ("x", "y", "t"))


def test_evaluate_interpolates_and_checks_bounds(linear_x):
    assert evaluate(linear_x, PhasePoint([0.3], [0.1], 0.1)) == pytest.approx(0.3)
    with pytest.raises(ValidationFailure):
        evaluate(linear_x, [1.5, 0.0, 0.1])


def test_interior_estimates(linear_x, flat1):
    center = (0.5, 0.0, 0.125)
    fit = holder_exponent(linear_x, center, [0.1, 0.2, 0.4])
    assert fit["alpha"] == pytest.approx(1.0, abs=0.15)
    ones = GridFunction(linear_x.axes, np.ones(linear_x.shape), linear_x.names)
    assert harnack_constant(ones, center, 0.25) == pytest.approx(1.0)
    base = PhasePoint([0.0], [0.0], 0.125)
    assert carleson_constant(ones, flat1, base, 0.25) == pytest.approx(1.0)


def test_grid_text_export(linear_x, tmp_path):
    path = tmp_path / "u.txt"
    linear_x.export_text(path, comment="seed=1")
    back = GridFunction.import_text(path)
    assert back.shape == linear_x.shape
    assert back.names == ("x", "y", "t")
    assert np.array_equal(back.values, linear_x.values)
    linear_x.export_csv_slice(tmp_path / "slice.csv", axis=2, index=0, comment="seed=1")
    lines = (tmp_path / "slice.csv").read_text().splitlines()
    assert lines[0] == "# seed=1"
    assert lines[1] == "x,y,u"
