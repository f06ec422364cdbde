"""
Boundary analysis: non-tangential and Hardy-Littlewood maximal functions,
reverse-Holder constants of Poisson kernels, and the ratio tests that
compare, double and decay boundary measures and solutions.

Every "a constant exists" statement is reported as a measured constant.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.stats import linregress, qmc

from app.config import settings
from app.core.domain import CoefficientField, GraphDomain, SurfaceCube, sigma_of_cube
from app.core.geometry import PhasePoint, ReferenceParams, compose_arrays, distance_arrays, reference_point
from app.core.grid import GridFunction
from app.core.simulate import MeasureHistogram, SdeConfig, SurfacePartition, estimate_measure
from app.exceptions import ValidationFailure

logger = logging.getLogger(__name__)

MIN_DECAY_SCALES = 4
SKIP_STDERR = 0.2


@dataclass(frozen=True)
class ConeParams:
    eta: float = 0.0
    delta: float | None = None
    # height cap for untruncated cones
    height_max: float = 1.0

    def __post_init__(self):
        if self.eta == 0.0:
            object.__setattr__(self, "eta", settings.cone_eta)
        if not self.eta > 0:
            raise ValidationFailure(f"cone aperture must be positive, got {self.eta}")
        if self.delta is not None and not self.delta > 0:
            raise ValidationFailure(f"truncation radius must be positive, got {self.delta}")

    def check_domain(self, dom: GraphDomain) -> bool:
        """eta < 1/M keeps the cone inside the domain; warn when that fails."""
        M = dom.lipschitz_M
        ok = M == 0.0 or self.eta < 1.0 / M
        if not ok:
            logger.warning(f"Cone aperture {self.eta} is not below 1/M = {1.0 / M:.4g}")
        return ok

    @property
    def height_cap(self) -> float:
        return self.delta if self.delta is not None else self.height_max


@dataclass(frozen=True)
class NtMax:
    value: float
    n_samples: int


@dataclass
class BqReport:
    q: float
    ratios: list
    constant: float
    flagged: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"q": self.q, "constant": self.constant, "ratios": self.ratios, "flagged_zero_children": self.flagged,
                "skipped": self.skipped}


# Cones ----------------------------------------------------------------------------

def in_cone(dom: GraphDomain, p0: PhasePoint, pts: np.ndarray, cone: ConeParams) -> np.ndarray:
    m = dom.m
    c = p0.as_array()
    d = distance_arrays(pts, c[None, :], m)
    height = np.abs(pts[:, m - 1] - c[m - 1])
    ok = (d < cone.eta * height) & dom.contains_arrays(pts)
    if cone.delta is not None:
        ok &= d < cone.delta
    return ok


def cone_samples(dom: GraphDomain, p0: PhasePoint, cone: ConeParams, n: int | None = None,
                 seed: int | None = None) -> np.ndarray:
    """
    Low-discrepancy points of the cone at p0, drawn as p = p0 o v with v in
    cone-adapted coordinates: height tau = v_Xm uniform in (0, cap], the other
    X components within eta * |tau|. Since |X_v| >= |tau|, the Y and t parts of
    d(p, p0) share what is left, rest = (eta - 1) |tau|; they are drawn on their
    own scale, |Y_i|^(1/3) uniform below 2 rest and |t|^(1/2) below rest.
    Points below the vertex (tau < 0) can lie in the domain only when
    eta * M > 1; tau then ranges over [-cap, cap].
    """
    n = n or settings.cone_samples
    m = dom.m
    D = 2 * m + 1
    u = qmc.Sobol(D, scramble=True, seed=settings.default_seed if seed is None else seed).random(n)
    if cone.eta * dom.lipschitz_M > 1.0:
        tau = (1.0 - 2.0 * u[:, 0]) * cone.height_cap
    else:
        tau = (1.0 - u[:, 0]) * cone.height_cap
    R = cone.eta * np.abs(tau)
    rest = max(cone.eta - 1.0, 0.0) * np.abs(tau)
    v = np.empty((n, D))
    v[:, m - 1] = tau
    for i in range(m - 1):
        v[:, i] = (2.0 * u[:, 1 + i] - 1.0) * R
    for i in range(m):
        w = 2.0 * u[:, m + i] - 1.0
        v[:, m + i] = w * w * w * 8.0 * rest ** 3
    w = 2.0 * u[:, 2 * m] - 1.0
    v[:, 2 * m] = w * np.abs(w) * rest ** 2
    pts = compose_arrays(p0.as_array()[None, :], v, m)
    return pts[in_cone(dom, p0, pts, cone)]


def _grid_columns(gf: GridFunction, m: int) -> list[int]:
    return {("x", "y", "t"): [0, 1, 2], ("x", "t"): [0, 2], ("x",): [0],
            ("x1", "x2"): [0, 1]}.get(gf.names, list(range(m)))


def evaluator(u, m: int):
    """Vectorized evaluation on phase-point rows; grid functions give NaN outside their box."""
    if not isinstance(u, GridFunction):
        return lambda pts: np.asarray(u(pts), dtype=np.float64)
    interp = RegularGridInterpolator(u.axes, u.values, method="linear", bounds_error=False, fill_value=np.nan)
    cols = _grid_columns(u, m)
    return lambda pts: interp(np.atleast_2d(pts)[:, cols])


def nt_max(u, dom: GraphDomain, boundary_pt: PhasePoint, cone: ConeParams, sample_n: int | None = None,
           samples: np.ndarray | None = None) -> NtMax:
    """sup |u| over cone samples; pass samples to reuse one sample set across apertures."""
    pts = cone_samples(dom, boundary_pt, cone, sample_n) if samples is None else \
        samples[in_cone(dom, boundary_pt, samples, cone)]
    vals = evaluator(u, dom.m)(pts) if pts.shape[0] else np.zeros(0)
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        raise ValidationFailure(f"no cone samples inside the domain for aperture {cone.eta}")
    return NtMax(float(np.max(np.abs(vals))), int(vals.size))


def hl_max(f_values, p: PhasePoint, partition) -> float:
    """
    sup over cubes Q containing p of the sigma-weighted average of |f| over the
    partition cells inside Q. Candidate cubes are the dyadic ancestors of the
    cell holding p, or for surface partitions that cell and its doublings.
    """
    f_values = np.abs(np.asarray(f_values, dtype=np.float64))
    sigma = partition.sigmas()
    centers = np.array([c.center.as_array() for c in partition.cells])
    pos = int(partition.assign(p.as_array()[None, :])[0])
    if pos < 0:
        raise ValidationFailure(f"{p} lies in no partition cell")
    best = float(f_values[pos])
    if hasattr(partition, "system"):
        system = partition.system
        for level in range(partition.k - 1, system.k_min - 1, -1):
            inside = system.locate(centers, level) == system.locate(p.as_array(), level)[0]
            best = max(best, float(np.sum(sigma[inside] * f_values[inside]) / np.sum(sigma[inside])))
        return best
    cube = partition.cells[pos]
    while True:
        cube = cube.dilated(2.0)
        inside = cube.contains_arrays(centers, partition.which)
        best = max(best, float(np.sum(sigma[inside] * f_values[inside]) / np.sum(sigma[inside])))
        if np.all(inside):
            return best


# Reverse Holder --------------------------------------------------------------------

def bq_from_density(density, sigma, groups, q: float) -> BqReport:
    """
    For each group of cells (a tested cube and its children): the sigma-weighted
    q-power mean of the density over the plain mean. Zero children are excluded
    and flagged.
    """
    if not q > 1:
        raise ValidationFailure(f"q must exceed 1, got {q}")
    density = np.asarray(density, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    ratios, flagged, skipped = [], [], []
    for g, children in enumerate(groups):
        children = np.asarray(children, dtype=np.int64)
        zero = children[density[children] <= 0.0]
        if zero.size:
            flagged.append({"cube": g, "children": zero.tolist()})
        keep = children[density[children] > 0.0]
        if keep.size == 0:
            skipped.append(g)
            continue
        w = sigma[keep] / sigma[keep].sum()
        mean = float(np.sum(w * density[keep]))
        power = float(np.sum(w * density[keep] ** q) ** (1.0 / q))
        ratios.append(power / mean)
    if not ratios:
        raise ValidationFailure("no tested cube has positive mass")
    return BqReport(q, ratios, max(ratios), flagged, skipped)


def dyadic_groups(partition, depth: int) -> list[list[int]]:
    """Cells of a level-k dyadic partition grouped by their level-(k - depth) ancestor."""
    system, k = partition.system, partition.k
    if k - depth < system.k_min:
        raise ValidationFailure(f"depth {depth} reaches below level {system.k_min}")
    centers = np.array([c.center.as_array() for c in partition.cells])
    anc = system.locate(centers, k - depth)
    return [np.flatnonzero(anc == a).tolist() for a in np.unique(anc)]


def bq_constant(hist: MeasureHistogram, q: float, nested_cubes=None, depth: int = 3) -> BqReport:
    """nested_cubes: groups of cell indices; derived from the dyadic system when omitted."""
    if nested_cubes is None:
        if not hasattr(hist.partition, "system"):
            raise ValidationFailure("nested cube groups are required for surface-cube partitions")
        nested_cubes = dyadic_groups(hist.partition, depth)
    report = bq_from_density(hist.masses / hist.sigma, hist.sigma, nested_cubes, q)
    if report.flagged:
        logger.warning(f"B_{q}: {len(report.flagged)} tested cubes had zero-mass children (excluded)")
    return report


# Measure ratio tests ---------------------------------------------------------------

@dataclass
class ComparabilityTable:
    rows: list
    skipped: list
    max_ratio: float

    def to_json(self) -> dict:
        return {"rows": self.rows, "skipped": self.skipped, "max_ratio": self.max_ratio}


def comparability_test(dom: GraphDomain, fld: CoefficientField, cube_Delta: SurfaceCube, sub_cubes, config: SdeConfig,
                       lam: float = 2.0, c: float = 1.0, kinds=("E", "P", "K")) -> ComparabilityTable:
    """
    sigma(Delta) omega(A+, Delta~) / sigma(Delta~) for each kind, with the pole at
    A+ of the c-dilate of Delta (projections are implicit: E ignores (Y, t), P ignores Y).
    """
    pole = reference_point(cube_Delta.center, ReferenceParams(c * cube_Delta.r, lam, "plus"))
    quantities = {}
    stderr = {}
    for kind in kinds:
        which = kind
        part = SurfacePartition(dom, [cube_Delta], which)
        hist = estimate_measure(dom, fld, pole, part, config, kind)
        sd = sigma_of_cube(dom, cube_Delta, which)
        quantities[kind] = []
        stderr[kind] = []
        for sub in sub_cubes:
            p = hist.mass_of(sub, which)
            quantities[kind].append(sd * p / sigma_of_cube(dom, sub, which))
            stderr[kind].append(np.sqrt(p * (1 - p) / hist.n_paths) / p if p > 0 else np.inf)
    rows, skipped = [], []
    for i in range(len(sub_cubes)):
        if any(stderr[k][i] > SKIP_STDERR for k in kinds):
            skipped.append(i)
            logger.warning(f"Sub-cube {i} skipped: relative stderr above {SKIP_STDERR:.0%}")
            continue
        vals = {k: quantities[k][i] for k in kinds}
        rows.append({"cube": i, **vals, "ratio": max(vals.values()) / min(vals.values()),
                     "rel_stderr": {k: stderr[k][i] for k in kinds}})
    max_ratio = max((r["ratio"] for r in rows), default=float("nan"))
    return ComparabilityTable(rows, skipped, max_ratio)


@dataclass
class DoublingReport:
    ratios: list
    skipped: list

    @property
    def constant(self) -> float:
        return max(self.ratios) if self.ratios else float("nan")

    def to_json(self) -> dict:
        return {"ratios": self.ratios, "skipped": self.skipped, "constant": self.constant}


def doubling_test(hist: MeasureHistogram, cube_list, factor: float = 2.0, min_count: int = 1) -> DoublingReport:
    """
    omega(factor * cube) / omega(cube) from the raw exits. Cubes holding fewer
    than min_count exits are not resolved and go to `skipped`.
    """
    if min_count < 1:
        raise ValidationFailure(f"min_count must be at least 1, got {min_count}")
    ratios, skipped = [], []
    for i, cube in enumerate(cube_list):
        small = hist.count_of(cube)
        if small < min_count:
            skipped.append(i)
            continue
        ratios.append(hist.count_of(cube.dilated(factor)) / small)
    if skipped:
        logger.warning(f"Doubling test skipped {len(skipped)} cubes with fewer than {min_count} exits")
    return DoublingReport(ratios, skipped)


# Solution tests -------------------------------------------------------------------

@dataclass
class DecayReport:
    alpha: float
    r2: float
    heights: list
    values: list
    upper_ratios: list
    lower_ratios: list

    def to_json(self) -> dict:
        return self.__dict__.copy()


def vertical_approach(base: PhasePoint, heights) -> list[PhasePoint]:
    out = []
    for h in heights:
        X = base.X.copy()
        X[-1] += h
        out.append(PhasePoint(X, base.Y, base.t))
    return out


def boundary_decay_test(gf, dom: GraphDomain, base: PhasePoint, pole_pts, lam: float = 2.0) -> DecayReport:
    """
    Fit u(p) ~ height(p)^alpha along pole_pts approaching base, and compare
    u(p) with u at A+ and A- of the same scale where those fall in the grid.
    """
    if len(pole_pts) < MIN_DECAY_SCALES:
        raise ValidationFailure(f"decay fit needs at least {MIN_DECAY_SCALES} scales")
    ev = evaluator(gf, dom.m)
    pts = np.array([p.as_array() for p in pole_pts])
    heights = dom.height(pts[:, : dom.m])
    vals = ev(pts)
    keep = (heights > 0) & np.isfinite(vals) & (vals > 0)
    if np.count_nonzero(keep) < MIN_DECAY_SCALES:
        raise ValidationFailure("decay fit is degenerate: too few positive values")
    fit = linregress(np.log(heights[keep]), np.log(vals[keep]))
    upper, lower = [], []
    for h, v in zip(heights, vals):
        for sign, out in (("plus", upper), ("minus", lower)):
            ref = ev(reference_point(base, ReferenceParams(float(h), lam, sign)).as_array()[None, :])[0]
            out.append(float(v / ref) if np.isfinite(ref) and ref > 0 else None)
    return DecayReport(float(fit.slope), float(fit.rvalue ** 2), heights.tolist(), vals.tolist(), upper, lower)


def quotient_test(u, v, dom: GraphDomain, base: PhasePoint, r: float, lam: float = 2.0,
                  n: int | None = None) -> dict:
    """
    sup and inf of (v/u)(p) over cone points of height below r at base,
    relative to v(A+)/u(A+) for the same scale.
    """
    cone = ConeParams(delta=r)
    pts = cone_samples(dom, base, cone, n)
    eu, ev = evaluator(u, dom.m), evaluator(v, dom.m)
    a_plus = reference_point(base, ReferenceParams(r, lam, "plus")).as_array()[None, :]
    ref = float(ev(a_plus)[0] / eu(a_plus)[0])
    uu, vv = eu(pts), ev(pts)
    ok = np.isfinite(uu) & np.isfinite(vv) & (uu > 0)
    if not np.any(ok) or not np.isfinite(ref) or ref <= 0:
        raise ValidationFailure("quotient test has no usable points")
    q = vv[ok] / uu[ok] / ref
    return {"sup": float(q.max()), "inf": float(q.min()), "reference": ref, "n_points": int(ok.sum())}


def solvability_ratios(dom: GraphDomain, battery, boundary_pts, weights, cone: ConeParams | None = None,
                       sample_n: int | None = None) -> dict:
    """
    ||N(u)||_2 / ||f||_2 for each (u, f) in battery: f evaluates boundary data
    at phase-point rows, N uses the (truncated) cone, norms use boundary weights.
    """
    cone = cone or ConeParams()
    boundary_pts = np.atleast_2d(boundary_pts)
    weights = np.asarray(weights, dtype=np.float64)
    m = dom.m
    samples = [cone_samples(dom, PhasePoint.from_array(b, m), cone, sample_n) for b in boundary_pts]
    ratios = []
    for u, f in battery:
        ev = evaluator(u, m)
        N = np.array([np.nanmax(np.abs(ev(s))) if s.shape[0] else 0.0 for s in samples])
        fv = np.asarray(f(boundary_pts), dtype=np.float64)
        f_norm = np.sqrt(np.sum(weights * fv ** 2))
        if f_norm == 0:
            raise ValidationFailure("boundary datum has zero L2 norm")
        ratios.append(float(np.sqrt(np.sum(weights * N ** 2)) / f_norm))
    return {"ratios": ratios, "constant": max(ratios)}
