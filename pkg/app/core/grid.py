"""
Finite-difference Dirichlet solvers on boxes over the graph domain.

solve_elliptic handles div(A grad u) = 0 for m in {1, 2} in flux form with
harmonic face averages of A. solve_kolmogorov and solve_parabolic handle
m = 1 and march u_t = (a u_x)_x + x u_y (without the transport term for the
parabolic case) forward from data at the earliest time: explicit upwind in
y, then a theta-scheme in x solved line by line.
"""
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import solve_banded
from scipy.sparse.linalg import cg
from scipy.stats import linregress

from app.config import settings
from app.core.domain import CoefficientField, GraphDomain
from app.core.geometry import PhasePoint, ReferenceParams, reference_point
from app.exceptions import CflViolation, ConvergenceFailure, DimensionMismatch, NumericalFailure, ValidationFailure

logger = logging.getLogger(__name__)

MAX_PRINCIPLE_TOL = 1e-8


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi):
            raise DimensionMismatch("box corners have different dimensions")
        if any(b <= a for a, b in zip(lo, hi)):
            raise ValidationFailure(f"degenerate box {lo} .. {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    def width(self, axis: int) -> float:
        return self.hi[axis] - self.lo[axis]


@dataclass(frozen=True)
class SolveReport:
    residual: float
    iterations: int
    max_principle_violation: float

    @property
    def max_principle_ok(self) -> bool:
        return self.max_principle_violation <= MAX_PRINCIPLE_TOL


@dataclass(eq=False)
class GridFunction:
    axes: tuple
    values: np.ndarray
    names: tuple
    mask: np.ndarray | None = None
    report: SolveReport | None = None

    def __post_init__(self):
        self.axes = tuple(np.asarray(a, dtype=np.float64) for a in self.axes)
        shape = tuple(a.size for a in self.axes)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(shape)
        if self.mask is None:
            self.mask = np.ones(shape, dtype=bool)
        if not np.all(np.isfinite(self.values[self.mask])):
            raise NumericalFailure("grid function has non-finite values on its mask")

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def spacing(self) -> tuple:
        return tuple(float(a[1] - a[0]) if a.size > 1 else 0.0 for a in self.axes)

    @property
    def origin(self) -> tuple:
        return tuple(float(a[0]) for a in self.axes)

    def nodes(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1).reshape(-1, len(self.axes))

    def export_text(self, path, comment: str | None = None):
        """Header line with dims, spacings, origin and axis names, then row-major values."""
        header = ("dims " + " ".join(str(n) for n in self.shape)
                  + " spacing " + " ".join(repr(h) for h in self.spacing)
                  + " origin " + " ".join(repr(o) for o in self.origin)
                  + " names " + " ".join(self.names))
        with open(path, "w") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            fh.write(header + "\n")
            for v in self.values.ravel():
                fh.write(f"{v!r}\n")

    @classmethod
    def import_text(cls, path) -> "GridFunction":
        with open(path) as fh:
            line = fh.readline()
            while line.startswith("#"):
                line = fh.readline()
            tokens = line.split()
            values = np.array([float(line) for line in fh if line.strip()])
        try:
            i_sp, i_or, i_nm = tokens.index("spacing"), tokens.index("origin"), tokens.index("names")
            dims = [int(v) for v in tokens[1:i_sp]]
            spacing = [float(v) for v in tokens[i_sp + 1:i_or]]
            origin = [float(v) for v in tokens[i_or + 1:i_nm]]
            names = tuple(tokens[i_nm + 1:])
        except (ValueError, IndexError) as e:
            raise ValidationFailure(f"malformed grid header in {path}: {e}")
        if tokens[0] != "dims" or values.size != int(np.prod(dims)):
            raise ValidationFailure(f"grid file {path} does not match its header")
        axes = tuple(o + h * np.arange(n) for n, h, o in zip(dims, spacing, origin))
        return cls(axes, values, names)

    def export_csv_slice(self, path, axis: int, index: int, comment: str | None = None):
        """2-D (or 1-D) slice at axis=index as CSV rows of coordinates and value."""
        sub = np.take(self.values, index, axis=axis)
        axes = [a for i, a in enumerate(self.axes) if i != axis]
        names = [n for i, n in enumerate(self.names) if i != axis]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
        table = np.column_stack([pts, sub.ravel()])
        header = ",".join(names + ["u"])
        if comment:
            header = f"# {comment}\n" + header
        np.savetxt(path, table, delimiter=",", header=header, comments="")


def _axis(lo: float, hi: float, h: float) -> np.ndarray:
    n = int(round((hi - lo) / h))
    if n < 2:
        raise ValidationFailure(f"grid spacing {h} leaves fewer than 2 cells on [{lo}, {hi}]")
    if abs(n * h - (hi - lo)) > 1e-9 * (hi - lo):
        raise ValidationFailure(f"spacing {h} does not divide [{lo}, {hi}]")
    return np.linspace(lo, hi, n + 1)


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


def _violation(u: np.ndarray, data_min: float, data_max: float) -> float:
    return float(max(0.0, u.max() - data_max, data_min - u.min()))


# Elliptic -----------------------------------------------------------------------

def solve_elliptic(dom: GraphDomain, fld: CoefficientField, box: Box, f_boundary, h: float) -> GridFunction:
    """
    div(A grad u) = 0 on the box nodes with x_m > psi(x); Dirichlet data f_boundary(X)
    on box faces and on nodes outside the domain.
    """
    m = dom.m
    if m not in (1, 2):
        raise ValidationFailure(f"elliptic grid solver supports m in (1, 2), got {m}")
    if fld.m != m or box.dim != m:
        raise DimensionMismatch(f"domain m={m}, field m={fld.m}, box dim={box.dim}")
    axes = tuple(_axis(box.lo[d], box.hi[d], h) for d in range(m))
    hs = [a[1] - a[0] for a in axes]
    shape = tuple(a.size for a in axes)
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    inside = dom.height(nodes) > 0.0
    interior = np.zeros(shape, dtype=bool)
    interior[(slice(1, -1),) * m] = True
    unknown = interior & inside
    if not np.any(unknown):
        raise ValidationFailure("box holds no interior domain nodes")

    g = np.asarray(f_boundary(nodes.reshape(-1, m)), dtype=np.float64).reshape(shape)
    if not np.all(np.isfinite(g)):
        raise ValidationFailure("boundary data is not finite")
    ids = -np.ones(shape, dtype=np.int64)
    ids[unknown] = np.arange(np.count_nonzero(unknown))
    n = int(ids.max()) + 1
    A = fld.eval(nodes)
    pos = np.argwhere(unknown)
    row = ids[tuple(pos.T)]
    diag = np.zeros(n)
    rhs = np.zeros(n)
    rows, cols, vals = [], [], []

    def couple(offset, coef):
        nb = pos + np.asarray(offset)
        nid = ids[tuple(nb.T)]
        free = nid >= 0
        rows.append(row[free])
        cols.append(nid[free])
        vals.append(-coef[free])
        np.add.at(rhs, row[~free], coef[~free] * g[tuple(nb[~free].T)])

    for d in range(m):
        a_here = A[tuple(pos.T)][:, d, d]
        for s in (1, -1):
            e = np.zeros(m, dtype=np.int64)
            e[d] = s
            a_nb = A[tuple((pos + e).T)][:, d, d]
            c = _harmonic(a_here, a_nb) / hs[d] ** 2
            diag[row] += c
            couple(e, c)
    if m == 2 and (not fld.is_constant or abs(fld.base[0, 1]) > 0.0):
        # d1(a12 d2 u) + d2(a12 d1 u), centred
        scale = 1.0 / (4.0 * hs[0] * hs[1])
        for sx in (1, -1):
            for sy in (1, -1):
                a1 = A[tuple((pos + [sx, 0]).T)][:, 0, 1]
                a2 = A[tuple((pos + [0, sy]).T)][:, 0, 1]
                couple((sx, sy), sx * sy * (a1 + a2) * scale)

    rows.append(row)
    cols.append(row)
    vals.append(diag)
    K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    precond = sp.diags(1.0 / diag)
    iters = [0]

    def count(_):
        iters[0] += 1

    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        sol, info = np.zeros(n), 0
    else:
        sol, info = cg(K, rhs, rtol=settings.solver_tol, maxiter=settings.solver_maxiter, M=precond, callback=count)
    residual = float(np.linalg.norm(rhs - K @ sol) / rhs_norm) if rhs_norm else 0.0
    if info != 0:
        raise ConvergenceFailure(f"CG stopped after {iters[0]} iterations with relative residual {residual:.3e}")
    u = g.copy()
    u[unknown] = sol
    data = g[~unknown]
    report = SolveReport(residual, iters[0], _violation(u[unknown], data.min(), data.max()))
    if not report.max_principle_ok:
        logger.warning(f"Elliptic solve violates the discrete maximum principle by {report.max_principle_violation:.3e}")
    logger.info(f"Elliptic solve on {shape} grid: {iters[0]} CG iterations, residual {residual:.2e}")
    names = ("x",) if m == 1 else ("x1", "x2")
    return GridFunction(axes, u, names, None, report)


# Time marching ------------------------------------------------------------------

def _diffusion_band(fld: CoefficientField, x: np.ndarray):
    """Face conductances c_{i+1/2} / h^2 of (a u_x)_x on the x grid."""
    a = fld.eval(x[:, None])[:, 0, 0]
    hx = x[1] - x[0]
    return _harmonic(a[:-1], a[1:]) / hx ** 2


def _apply_Lx(c: np.ndarray, u: np.ndarray) -> np.ndarray:
    """(L_x u) on interior x nodes, u of shape (nx+1, ...)."""
    return c[1:, None] * (u[2:] - u[1:-1]) - c[:-1, None] * (u[1:-1] - u[:-2])


def _tridiag_matvec(ab: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = ab[1][:, None] * v
    out[:-1] += ab[0, 1:, None] * v[1:]
    out[1:] += ab[2, :-1, None] * v[:-1]
    return out


def _march(fld: CoefficientField, x, y, ts, f_data, theta: float, transport: bool):
    if not 0.0 <= theta <= 1.0:
        raise ValidationFailure(f"theta must lie in [0, 1], got {theta}")
    c = _diffusion_band(fld, x)
    hy = y[1] - y[0] if y.size > 1 else 1.0
    X, Yg = np.meshgrid(x, y, indexing="ij")

    def data(t):
        return np.asarray(f_data(X, Yg, np.full_like(X, t)), dtype=np.float64).reshape(X.shape)

    def faces(v):
        parts = [v[0], v[-1]] + ([v[:, 0], v[:, -1]] if transport else [])
        return np.concatenate(parts)

    out = np.empty((x.size, y.size, ts.size))
    u = data(ts[0])
    lo, hi = u.min(), u.max()
    out[..., 0] = u
    residual = 0.0
    for n in range(1, ts.size):
        k = ts[n] - ts[n - 1]
        nxt = data(ts[n])
        lo, hi = min(lo, faces(nxt).min()), max(hi, faces(nxt).max())
        star = u.copy()
        if transport:
            # upwind: information arrives from larger y where x > 0
            fwd = u[1:-1, 2:] - u[1:-1, 1:-1]
            bwd = u[1:-1, 1:-1] - u[1:-1, :-2]
            xi = x[1:-1, None]
            star[1:-1, 1:-1] = u[1:-1, 1:-1] + k * xi * np.where(xi > 0, fwd, bwd) / hy
        rhs = star[1:-1] + (1.0 - theta) * k * _apply_Lx(c, star)
        rhs[0] += theta * k * c[0] * nxt[0]
        rhs[-1] += theta * k * c[-1] * nxt[-1]
        ab = np.zeros((3, x.size - 2))
        ab[0, 1:] = -theta * k * c[1:-1]
        ab[1] = 1.0 + theta * k * (c[:-1] + c[1:])
        ab[2, :-1] = -theta * k * c[1:-1]
        interior = solve_banded((1, 1), ab, rhs)
        residual = max(residual, float(np.max(np.abs(_tridiag_matvec(ab, interior) - rhs))))
        u = nxt.copy()
        if transport:
            u[1:-1, 1:-1] = interior[:, 1:-1]
        else:
            u[1:-1] = interior
        if not np.all(np.isfinite(u)):
            raise NumericalFailure(f"non-finite values at time step {n}")
        out[..., n] = u
    report = SolveReport(residual, ts.size - 1, _violation(out, lo, hi))
    if theta == 1.0 and not report.max_principle_ok:
        logger.warning(f"Time-marching solve violates the maximum principle by {report.max_principle_violation:.3e}")
    return out, report


def _check_m1(dom: GraphDomain, fld: CoefficientField, box: Box, dim: int):
    if dom.m != 1 or fld.m != 1:
        raise ValidationFailure("the time-marching grid solvers support m = 1 only")
    if box.dim != dim:
        raise DimensionMismatch(f"box must have {dim} axes, got {box.dim}")
    if box.lo[0] < dom.offset - 1e-12:
        raise ValidationFailure(f"box reaches below the boundary x = {dom.offset}")


def solve_kolmogorov(dom: GraphDomain, fld: CoefficientField, box: Box, f_data, steps, eps: float | None = None,
                     theta: float = 1.0) -> GridFunction:
    """
    Grid (x, y, t) with steps = (n_x, n_y, n_t) cells. f_data(x, y, t) gives the
    initial slice, both x faces and both y faces.
    """
    _check_m1(dom, fld, box, 3)
    if eps is not None:
        fld = fld.rescaled(eps)
    n_x, n_y, n_t = steps
    x = np.linspace(box.lo[0], box.hi[0], n_x + 1)
    y = np.linspace(box.lo[1], box.hi[1], n_y + 1)
    ts = np.linspace(box.lo[2], box.hi[2], n_t + 1)
    hy, ht = y[1] - y[0], ts[1] - ts[0]
    x_max = float(np.max(np.abs(x)))
    if x_max > 0 and ht > hy / x_max * (1.0 + 1e-12):
        raise CflViolation(f"h_t={ht:.3e} exceeds h_y / max|x| = {hy / x_max:.3e}")
    values, report = _march(fld, x, y, ts, f_data, theta, transport=True)
    logger.info(f"Kolmogorov solve on {values.shape} grid (theta={theta})")
    return GridFunction((x, y, ts), values, ("x", "y", "t"), None, report)


def solve_parabolic(dom: GraphDomain, fld: CoefficientField, box: Box, f_data, steps,
                    theta: float = 1.0) -> GridFunction:
    """Grid (x, t) with steps = (n_x, n_t); f_data(x, t) gives the initial slice and both x faces."""
    _check_m1(dom, fld, box, 2)
    n_x, n_t = steps
    x = np.linspace(box.lo[0], box.hi[0], n_x + 1)
    ts = np.linspace(box.lo[1], box.hi[1], n_t + 1)
    values, report = _march(fld, x, np.zeros(1), ts, lambda X, Y, T: f_data(X, T), theta, transport=False)
    logger.info(f"Parabolic solve on {(x.size, ts.size)} grid (theta={theta})")
    return GridFunction((x, ts), values[:, 0, :], ("x", "t"), None, report)


def extend_lateral(g, mode: str = "constant"):
    """
    Box data from a lateral datum g(y, t) on x = psi: carried unchanged along
    the outward x direction ("constant") or set to 0 off the lateral face ("zero").
    """
    if mode not in ("constant", "zero"):
        raise ValidationFailure(f"unknown extension mode {mode!r}")

    def f(x, y, t):
        v = np.asarray(g(y, t), dtype=np.float64)
        if mode == "zero":
            v = np.where(np.isclose(x, x.min()), v, 0.0)
        return v

    return f


# Evaluation and interior checks --------------------------------------------------

def _coords_of(gf: GridFunction, p) -> np.ndarray:
    if isinstance(p, PhasePoint):
        if gf.names == ("x", "y", "t"):
            return np.array([p.X[0], p.Y[0], p.t])
        if gf.names == ("x", "t"):
            return np.array([p.X[0], p.t])
        return p.X.copy()
    return np.atleast_1d(np.asarray(p, dtype=np.float64))


def evaluate(gf: GridFunction, p) -> float:
    """Multilinear interpolation; p is a PhasePoint or coordinates in axis order."""
    c = _coords_of(gf, p)
    if c.size != len(gf.axes):
        raise DimensionMismatch(f"point has {c.size} coordinates, grid has {len(gf.axes)} axes")
    for v, a in zip(c, gf.axes):
        if not a[0] - 1e-12 <= v <= a[-1] + 1e-12:
            raise ValidationFailure(f"point {c.tolist()} lies outside the grid box")
    c = np.clip(c, [a[0] for a in gf.axes], [a[-1] for a in gf.axes])
    return float(RegularGridInterpolator(gf.axes, gf.values, method="linear")(c[None, :])[0])


def _window(gf: GridFunction, lo, hi) -> np.ndarray:
    sl = tuple(slice(np.searchsorted(a, l, "left"), np.searchsorted(a, u, "right")) for a, l, u in zip(gf.axes, lo, hi))
    return gf.values[sl]


def _kinetic_box(center, r: float):
    """Half-widths r, r^3, r^2 in (x, y, t) around center."""
    c = np.asarray(center, dtype=np.float64)
    half = np.array([r, r ** 3, r ** 2])
    return c - half, c + half


def holder_exponent(gf: GridFunction, center, radii) -> dict:
    """Fit osc(u, Q_r) ~ r^alpha over kinetic boxes Q_r around center."""
    oscs = []
    for r in radii:
        lo, hi = _kinetic_box(center, r)
        w = _window(gf, lo, hi)
        if w.size < 2:
            raise ValidationFailure(f"box of radius {r} holds fewer than two grid nodes")
        oscs.append(float(w.max() - w.min()))
    oscs = np.array(oscs)
    if np.any(oscs <= 0):
        return {"radii": list(radii), "osc": oscs.tolist(), "alpha": float("inf")}
    fit = linregress(np.log(radii), np.log(oscs))
    return {"radii": list(radii), "osc": oscs.tolist(), "alpha": float(fit.slope)}


def harnack_constant(gf: GridFunction, center, r: float) -> float:
    """sup of u over the earlier half-box divided by inf of u over the later half-box."""
    c = np.asarray(center, dtype=np.float64)
    half = np.array([r / 2, r ** 3 / 2])
    earlier = _window(gf, [*(c[:2] - half), c[2] - r ** 2], [*(c[:2] + half), c[2] - r ** 2 / 2])
    later = _window(gf, [*(c[:2] - half), c[2] + r ** 2 / 2], [*(c[:2] + half), c[2] + r ** 2])
    if earlier.size == 0 or later.size == 0:
        raise ValidationFailure("Harnack boxes hold no grid nodes")
    if later.min() <= 0:
        return float("inf")
    return float(earlier.max() / later.min())


def carleson_constant(gf: GridFunction, dom: GraphDomain, base: PhasePoint, r: float, lam: float = 2.0) -> float:
    """max of u near the boundary cube at base over u(A+) of that cube."""
    a_plus = reference_point(base, ReferenceParams(r, lam, "plus"))
    u_ref = evaluate(gf, a_plus)
    if u_ref <= 0:
        raise ValidationFailure("u vanishes at the reference point")
    x0 = dom.offset
    w = _window(gf, [x0, base.Y[0] - r ** 3, base.t - r ** 2], [x0 + r, base.Y[0] + r ** 3, base.t + r ** 2])
    if w.size == 0:
        raise ValidationFailure("Carleson box holds no grid nodes")
    return float(w.max() / u_ref)
