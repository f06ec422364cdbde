"""
Periodic homogenization of div(A grad).

The cell problem is solved for chi = w - alpha.X on a uniform periodic grid
of the period cell in flux form: diagonal fluxes live on faces with harmonic
averages of a_dd, off-diagonal fluxes use centred differences at the nodes.
The discrete energy

    E(u, v) = [ sum_d (D_d u)^T C_d (D_d v) + sum_{d != e} (G_d u)^T S_de (G_e v) ]

defines both the cell system and, averaged over the cell, the effective matrix
Abar_ij = E(w_i, w_j), so Abar is symmetric by construction.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from app.config import settings
from app.core.domain import CoefficientField, GraphDomain, constant_field
from app.core.grid import Box, solve_kolmogorov
from app.exceptions import NumericalFailure, ValidationFailure

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-8
SPECTRUM_TOL = 1e-6
GAUGE_TOL = 1e-10
POINTS_PER_PERIOD = 16


@dataclass(eq=False)
class Corrector:
    alpha: np.ndarray
    n: int
    period: float
    chi: np.ndarray
    residual: float = 0.0

    @property
    def h(self) -> float:
        return self.period / self.n

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n) * self.h

    @property
    def values(self) -> np.ndarray:
        """w_alpha = alpha.X + chi on the grid nodes."""
        grids = np.meshgrid(*([self.nodes] * self.alpha.size), indexing="ij")
        return self.chi + sum(a * g for a, g in zip(self.alpha, grids))

    def chi_closed(self) -> np.ndarray:
        """chi with the wrap-around node appended along every axis (opposite faces equal)."""
        return np.pad(self.chi, [(0, 1)] * self.chi.ndim, mode="wrap")

    def gradient_faces(self, axis: int = 0) -> np.ndarray:
        """Forward difference of w along axis, located at the faces i + 1/2."""
        return (np.roll(self.chi, -1, axis=axis) - self.chi) / self.h + self.alpha[axis]


@dataclass
class EffectiveTensor:
    matrix: np.ndarray
    kappa: float
    n: int = 0

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        if np.max(np.abs(self.matrix - self.matrix.T)) > SYMMETRY_TOL:
            raise NumericalFailure("effective matrix is not symmetric")
        ev = np.linalg.eigvalsh(self.matrix)
        if ev[0] < 1.0 / self.kappa - SPECTRUM_TOL or ev[-1] > self.kappa + SPECTRUM_TOL:
            raise NumericalFailure(f"effective eigenvalues {ev.tolist()} leave [1/kappa, kappa] with kappa={self.kappa}")

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def as_field(self) -> CoefficientField:
        return constant_field(self.matrix)


class _CellOperator:
    """Periodic difference operators and coefficient weights on an n^m cell grid."""

    def __init__(self, fld: CoefficientField, n: int):
        if not fld.periodic_lattice:
            raise ValidationFailure("cell problem needs a coefficient field periodic on the lattice")
        if n < 4:
            raise ValidationFailure(f"cell grid needs at least 4 points per axis, got {n}")
        m = fld.m
        self.m, self.n, self.period = m, n, fld.period
        self.h = fld.period / n
        shape = (n,) * m
        nodes = np.stack(np.meshgrid(*([np.arange(n) * self.h] * m), indexing="ij"), axis=-1)
        A = fld.eval(nodes)
        N = n ** m
        ids = np.arange(N).reshape(shape)
        eye = sp.identity(N, format="csr")
        self.D, self.C, self.G, self.S = [], [], {}, {}
        for d in range(m):
            nb = np.roll(ids, -1, axis=d).ravel()
            shift = sp.csr_matrix((np.ones(N), (np.arange(N), nb)), shape=(N, N))
            self.D.append((shift - eye) / self.h)
            a = A[..., d, d]
            self.C.append(sp.diags((2.0 * a * np.roll(a, -1, axis=d) / (a + np.roll(a, -1, axis=d))).ravel()))
            back = sp.csr_matrix((np.ones(N), (np.arange(N), np.roll(ids, 1, axis=d).ravel())), shape=(N, N))
            self.G[d] = (shift - back) / (2.0 * self.h)
        for d in range(m):
            for e in range(m):
                if d != e and np.any(A[..., d, e] != 0.0):
                    self.S[(d, e)] = sp.diags(A[..., d, e].ravel())
        K = sum(Dd.T @ Cd @ Dd for Dd, Cd in zip(self.D, self.C))
        for (d, e), Sde in self.S.items():
            K = K + self.G[d].T @ Sde @ self.G[e]
        self.K = sp.csr_matrix(K)
        self.N = N
        self.shape = shape

    def load(self, alpha: np.ndarray) -> np.ndarray:
        """Right-hand side -b with b = derivative of the energy at alpha.X in the chi direction."""
        ones = np.ones(self.N)
        b = sum(Dd.T @ (Cd @ (alpha[d] * ones)) for d, (Dd, Cd) in enumerate(zip(self.D, self.C)))
        for (d, e), Sde in self.S.items():
            b = b + self.G[d].T @ (Sde @ (alpha[e] * ones))
        return -b

    def energy(self, chi_a, alpha, chi_b, beta) -> float:
        total = 0.0
        for d, (Dd, Cd) in enumerate(zip(self.D, self.C)):
            total += (Dd @ chi_a + alpha[d]) @ (Cd @ (Dd @ chi_b + beta[d]))
        for (d, e), Sde in self.S.items():
            total += (self.G[d] @ chi_a + alpha[d]) @ (Sde @ (self.G[e] @ chi_b + beta[e]))
        # cell average
        return float(total / self.N)


def _solve(op: _CellOperator, alpha: np.ndarray) -> Corrector:
    rhs = op.load(alpha)
    chi = np.zeros(op.N)
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm > 0.0:
        # node 0 pinned, gauge restored below
        chi[1:] = spsolve(op.K[1:, 1:].tocsc(), rhs[1:])
        if not np.all(np.isfinite(chi)):
            raise NumericalFailure("cell system is singular; is the field elliptic?")
        chi -= chi.mean()
    residual = float(np.linalg.norm(op.K @ chi - rhs) / rhs_norm) if rhs_norm > 0.0 else 0.0
    if residual > settings.solver_tol:
        raise NumericalFailure(f"cell solve residual {residual:.3e} exceeds {settings.solver_tol}")
    if abs(chi.mean()) > GAUGE_TOL:
        raise NumericalFailure("corrector gauge drifted from zero mean")
    return Corrector(np.asarray(alpha, dtype=np.float64), op.n, op.period, chi.reshape(op.shape), residual)


def solve_cell(fld: CoefficientField, alpha, n_cells_grid: int | None = None) -> Corrector:
    alpha = np.atleast_1d(np.asarray(alpha, dtype=np.float64))
    if alpha.shape != (fld.m,):
        raise ValidationFailure(f"direction must have {fld.m} components")
    return _solve(_CellOperator(fld, n_cells_grid or settings.cell_grid), alpha)


def effective_matrix(fld: CoefficientField, n_cells_grid: int | None = None, basis=None) -> EffectiveTensor:
    """
    Abar from unit-direction correctors. With an orthonormal basis Q (columns),
    the energy matrix is formed in that basis and rotated back, Abar = Q M Q^T.
    """
    op = _CellOperator(fld, n_cells_grid or settings.cell_grid)
    Q = np.eye(fld.m) if basis is None else np.asarray(basis, dtype=np.float64)
    if not np.allclose(Q.T @ Q, np.eye(fld.m), atol=1e-12):
        raise ValidationFailure("basis must be orthonormal")
    directions = [Q[:, i] for i in range(fld.m)]
    if settings.threads > 1 and fld.m > 1:
        with ThreadPoolExecutor(max_workers=settings.threads) as pool:
            correctors = list(pool.map(lambda a: _solve(op, a), directions))
    else:
        correctors = [_solve(op, a) for a in directions]
    M = np.empty((fld.m, fld.m))
    for i, ci in enumerate(correctors):
        for j, cj in enumerate(correctors):
            M[i, j] = op.energy(ci.chi.ravel(), ci.alpha, cj.chi.ravel(), cj.alpha)
    M = 0.5 * (M + M.T)
    tensor = EffectiveTensor(Q @ M @ Q.T, fld.kappa, op.n)
    logger.info(f"Effective matrix on {op.n}^{fld.m} cell grid: {np.round(tensor.matrix, 8).tolist()}")
    return tensor


def cell_means(fld: CoefficientField, n_cells_grid: int | None = None) -> dict:
    """Arithmetic and harmonic cell means of A's diagonal, the 1-D and laminate bounds."""
    n = n_cells_grid or settings.cell_grid
    axes = [np.arange(n) * fld.period / n] * fld.m
    A = fld.eval(np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1))
    diag = np.diagonal(A, axis1=-2, axis2=-1).reshape(-1, fld.m)
    return {"arithmetic": diag.mean(axis=0).tolist(), "harmonic": (1.0 / np.mean(1.0 / diag, axis=0)).tolist(),
            "mean_matrix": A.reshape(-1, fld.m, fld.m).mean(axis=0).tolist()}


def rescale(fld: CoefficientField, eps: float) -> CoefficientField:
    """A^eps(X) = A(X / eps)."""
    if eps == 1.0:
        return fld
    return fld.rescaled(eps)


# Epsilon sweep -------------------------------------------------------------------

SWEEP_DATA = {
    "decay": lambda x, y, t: np.exp(-x),
    "kinetic": lambda x, y, t: np.exp(-x) * (1.0 + 0.5 * np.sin(np.pi * y)),
}


@dataclass
class SweepTable:
    eps: list
    errors: list
    ratios: list
    effective: float
    control_errors: list = field(default_factory=list)
    control_value: float | None = None
    grid: tuple = ()

    @property
    def strictly_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.errors, self.errors[1:]))

    def rows(self) -> list[dict]:
        out = []
        for i, (e, err) in enumerate(zip(self.eps, self.errors)):
            row = {"eps": e, "error": err, "ratio": self.ratios[i - 1] if i else None}
            if self.control_errors:
                row["control_error"] = self.control_errors[i]
            out.append(row)
        return out

    def to_json(self) -> dict:
        return {"effective": self.effective, "control_value": self.control_value, "grid": list(self.grid),
                "strictly_decreasing": self.strictly_decreasing, "rows": self.rows()}


def sweep_steps(box: Box, eps_min: float, x_max: float) -> tuple[int, int, int]:
    """Cells (n_x, n_y, n_t) with h_x <= eps_min / 16, h_y = h_x and h_t at the CFL limit."""
    n_x = int(np.ceil(box.width(0) * POINTS_PER_PERIOD / eps_min))
    h = box.width(0) / n_x
    n_y = max(2, int(np.ceil(box.width(1) / h)))
    h_y = box.width(1) / n_y
    n_t = max(1, int(np.ceil(box.width(2) * max(x_max, 1e-12) / h_y)))
    return n_x, n_y, n_t


def epsilon_sweep(dom: GraphDomain, fld: CoefficientField, f_data, box: Box, eps_list, compact_K,
                  negative_control: bool = False, n_cells_grid: int | None = None) -> SweepTable:
    """
    e(eps) = max over compact_K of |u_eps - ubar|, all solves on the grid
    resolving the smallest eps. With negative_control, ubar is also solved
    with the arithmetic cell mean in place of Abar.
    """
    if dom.m != 1 or fld.m != 1:
        raise ValidationFailure("the epsilon sweep runs for m = 1")
    eps_list = [float(e) for e in eps_list]
    if not eps_list or any(e <= 0 for e in eps_list) or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValidationFailure("eps_list must be positive and strictly decreasing")
    lo, hi = (np.asarray(v, dtype=np.float64) for v in compact_K)
    if np.any(lo <= np.asarray(box.lo)) or np.any(hi >= np.asarray(box.hi)) or np.any(hi <= lo):
        raise ValidationFailure("compact set must lie strictly inside the box")
    if isinstance(f_data, str):
        if f_data not in SWEEP_DATA:
            raise ValidationFailure(f"unknown sweep data {f_data!r}; choose from {sorted(SWEEP_DATA)}")
        f_data = SWEEP_DATA[f_data]

    x_max = max(abs(box.lo[0]), abs(box.hi[0]))
    steps = sweep_steps(box, eps_list[-1], x_max)
    abar = effective_matrix(fld, n_cells_grid)
    ubar = solve_kolmogorov(dom, abar.as_field(), box, f_data, steps)
    axes = ubar.axes
    sel = tuple(slice(np.searchsorted(a, l, "left"), np.searchsorted(a, u, "right")) for a, l, u in zip(axes, lo, hi))

    def run(eps):
        return solve_kolmogorov(dom, fld, box, f_data, steps, eps=eps).values[sel]

    if settings.threads > 1:
        with ThreadPoolExecutor(max_workers=settings.threads) as pool:
            solutions = list(pool.map(run, eps_list))
    else:
        solutions = [run(e) for e in eps_list]
    errors = [float(np.max(np.abs(u - ubar.values[sel]))) for u in solutions]
    ratios = [b / a if a > 0 else 0.0 for a, b in zip(errors, errors[1:])]
    table = SweepTable(eps_list, errors, ratios, float(abar.matrix[0, 0]), grid=steps)
    if negative_control:
        mean = cell_means(fld, n_cells_grid)["arithmetic"][0]
        wrong = solve_kolmogorov(dom, constant_field([[mean]]), box, f_data, steps).values[sel]
        table.control_value = mean
        table.control_errors = [float(np.max(np.abs(u - wrong))) for u in solutions]
    logger.info(f"Epsilon sweep over {eps_list}: errors {[f'{e:.3e}' for e in errors]}")
    return table
