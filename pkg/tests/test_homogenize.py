import numpy as np
import pytest

from app.core.domain import constant_field, laminate_field, trig_field, TrigTerm
from app.core.grid import Box
from app.core.homogenize import cell_means, effective_matrix, epsilon_sweep, rescale, solve_cell
from app.exceptions import ValidationFailure

SWEEP_BOX = Box((0.0, -1.0, 0.0), (1.0, 1.0, 0.25))
COMPACT = ([0.25, -0.5, 0.125], [0.75, 0.5, 0.24])


@pytest.mark.parametrize("m", [1, 2])
def test_identity_is_its_own_effective_matrix(m):
    tensor = effective_matrix(constant_field(np.eye(m)), 16)
    assert np.allclose(tensor.matrix, np.eye(m), atol=1e-10)


def test_one_dimensional_sinusoid_gives_the_harmonic_mean(sinusoid):
    tensor = effective_matrix(sinusoid, 256)
    assert tensor.matrix[0, 0] == pytest.approx(np.sqrt(3.0), abs=1e-3)
    means = cell_means(sinusoid, 256)
    assert means["harmonic"][0] <= tensor.matrix[0, 0] + 1e-9 <= means["arithmetic"][0] + 1e-9


def test_laminate_effective_matrix():
    fld = laminate_field([2.0, 3.0], [1.0, 1.0], axis=0)
    tensor = effective_matrix(fld, 64)
    assert tensor.matrix[0, 0] == pytest.approx(np.sqrt(3.0), abs=2e-3)
    assert tensor.matrix[1, 1] == pytest.approx(3.0, abs=1e-10)
    assert abs(tensor.matrix[0, 1]) < 1e-10
    assert np.all(tensor.eigenvalues >= 1.0 / fld.kappa)


def test_effective_matrix_does_not_depend_on_the_basis():
    fld = trig_field(np.diag([2.0, 3.0]), [TrigTerm(np.array([[0.5, 0.2], [0.2, 0.5]]), np.array([1.0, 1.0]))])
    c, s = np.cos(np.pi / 6), np.sin(np.pi / 6)
    rotated = effective_matrix(fld, 24, basis=np.array([[c, -s], [s, c]]))
    plain = effective_matrix(fld, 24)
    assert np.allclose(rotated.matrix, plain.matrix, atol=1e-8)
    assert np.allclose(plain.matrix, plain.matrix.T)


def test_non_orthonormal_basis_is_rejected(identity2):
    with pytest.raises(ValidationFailure):
        effective_matrix(identity2, 8, basis=np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_corrector_is_periodic_with_zero_mean(sinusoid):
    corr = solve_cell(sinusoid, [1.0], 64)
    assert abs(corr.chi.mean()) < 1e-10
    closed = corr.chi_closed()
    assert closed[0] == closed[-1]
    # a w' is constant across the faces
    a = sinusoid.eval(corr.nodes[:, None])[:, 0, 0]
    faces = 2 * a * np.roll(a, -1) / (a + np.roll(a, -1))
    flux = faces * corr.gradient_faces()
    assert np.ptp(flux) < 1e-8


def test_cell_problem_needs_a_periodic_field():
    fld = trig_field(2.0 * np.eye(1), [TrigTerm(0.5 * np.eye(1), np.array([1.0]))], blend_radius=2.0)
    with pytest.raises(ValidationFailure):
        solve_cell(fld, [1.0], 16)


def test_rescale_shrinks_the_period(sinusoid):
    fine = rescale(sinusoid, 0.25)
    assert fine.period == 0.25
    assert np.allclose(fine.eval(np.array([[0.0625]])), sinusoid.eval(np.array([[0.25]])))
    assert rescale(sinusoid, 1.0) is sinusoid


def test_sweep_with_constant_field_has_no_error(flat1, identity1):
    table = epsilon_sweep(flat1, identity1, "decay", SWEEP_BOX, [0.5, 0.25], COMPACT, n_cells_grid=16)
    assert max(table.errors) < 1e-8
    assert len(table.rows()) == 2


def test_sweep_input_validation(flat1, identity1):
    with pytest.raises(ValidationFailure):
        epsilon_sweep(flat1, identity1, "decay", SWEEP_BOX, [0.25, 0.5], COMPACT)
    with pytest.raises(ValidationFailure):
        epsilon_sweep(flat1, identity1, "decay", SWEEP_BOX, [0.5], ([0.0, -0.5, 0.1], [0.5, 0.5, 0.2]))
    with pytest.raises(ValidationFailure):
        epsilon_sweep(flat1, identity1, "nope", SWEEP_BOX, [0.5], COMPACT)


@pytest.mark.slow
def test_sinusoid_sweep_converges_to_the_homogenized_solution(flat1, sinusoid):
    table = epsilon_sweep(flat1, sinusoid, "decay", SWEEP_BOX, [0.5, 0.25, 0.125], COMPACT,
                          negative_control=True, n_cells_grid=256)
    assert table.strictly_decreasing
    assert all(r <= 0.75 for r in table.ratios)
    assert table.control_errors[-1] >= 3.0 * table.errors[-1]
