"""
Dyadic cubes on the boundary Sigma = dOmega x R^m x R and Whitney cubes in Omega.

Boundary cubes are anisotropic dyadic rectangles in the parameters
(x, Y, t) in R^(m-1) x R^m x R, pushed onto the graph x_m = psi(x). A level-k
rectangle has sides 2^-k in x, 2^-3k in Y and 2^-2k in t, so every level
step splits x in 2, Y in 8 and t in 4 per coordinate. Partition, nesting and
unique ancestry hold exactly; diameter, inner-ball and thin-boundary
constants are measured.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import linregress

from app.config import settings
from app.core.domain import GraphDomain
from app.core.geometry import PhasePoint, distance_arrays
from app.exceptions import ValidationFailure

logger = logging.getLogger(__name__)

_ALIGN_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DyadicCube:
    level: int
    index: tuple
    lo: np.ndarray
    hi: np.ndarray
    center: PhasePoint

    @property
    def ell(self) -> float:
        return 2.0 ** (-self.level)

    @property
    def key(self) -> tuple:
        return (self.level, self.index)

    def contains_params(self, u) -> np.ndarray:
        u = np.atleast_2d(u)
        return np.all((u >= self.lo) & (u < self.hi), axis=1)


def level_sides(m: int, k: int) -> np.ndarray:
    return np.concatenate([np.full(m - 1, 2.0 ** -k), np.full(m, 2.0 ** (-3 * k)), [2.0 ** (-2 * k)]])


def split_factors(m: int) -> np.ndarray:
    return np.concatenate([np.full(m - 1, 2), np.full(m, 8), [4]]).astype(np.int64)


def params_of(pts, m: int) -> np.ndarray:
    """(x, Y, t) parameters of boundary points given as rows [X, Y, t]."""
    pts = np.atleast_2d(pts)
    return np.concatenate([pts[:, : m - 1], pts[:, m:2 * m + 1]], axis=1)


def lift(dom: GraphDomain, u) -> np.ndarray:
    """Boundary points [x, psi(x), Y, t] from parameters (x, Y, t)."""
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    m = dom.m
    x = u[:, : m - 1]
    return np.concatenate([x, dom.psi(x)[:, None], u[:, m - 1:]], axis=1)


class DyadicSystem:
    """Levels k_min..k_max of dyadic boundary cubes over an aligned window."""

    def __init__(self, dom: GraphDomain, window_lo, window_hi, k_min: int, k_max: int):
        self.dom = dom
        self.m = dom.m
        self.k_min = k_min
        self.k_max = k_max
        self.window_lo = np.asarray(window_lo, dtype=np.float64)
        self.window_hi = np.asarray(window_hi, dtype=np.float64)
        D = 2 * self.m
        if self.window_lo.shape != (D,) or self.window_hi.shape != (D,):
            raise ValidationFailure(f"window must have {D} parameter coordinates (x, Y, t)")
        if k_max < k_min:
            raise ValidationFailure(f"k_max={k_max} is below k_min={k_min}")

        side = level_sides(self.m, k_min)
        extent = (self.window_hi - self.window_lo) / side
        start = self.window_lo / side
        if np.any(extent < 1.0 - _ALIGN_TOL):
            raise ValidationFailure(f"window too small for level {k_min}: extents {extent.tolist()} cubes")
        if np.any(np.abs(extent - np.round(extent)) > _ALIGN_TOL) or np.any(np.abs(start - np.round(start)) > _ALIGN_TOL):
            raise ValidationFailure(f"window is not aligned to the level-{k_min} dyadic lattice")

        self._counts = {}
        self._origin = {}
        total = 0
        for k in range(k_min, k_max + 1):
            side = level_sides(self.m, k)
            self._origin[k] = np.round(self.window_lo / side).astype(np.int64)
            self._counts[k] = np.round((self.window_hi - self.window_lo) / side).astype(np.int64)
            total += int(np.prod(self._counts[k]))
        if total > settings.max_cubes:
            raise ValidationFailure(f"dyadic system would hold {total} cubes (limit {settings.max_cubes})")
        self._cubes = {}
        logger.info(f"Dyadic system m={self.m} levels {k_min}..{k_max}: {total} cubes")

    def count(self, k: int) -> int:
        return int(np.prod(self._counts[k]))

    def levels(self) -> range:
        return range(self.k_min, self.k_max + 1)

    def lattice_index(self, u, k: int) -> np.ndarray:
        return np.floor(np.atleast_2d(u) / level_sides(self.m, k)).astype(np.int64)

    def locate(self, pts, k: int) -> np.ndarray:
        """Position of the level-k cube holding each boundary point, -1 outside the window."""
        u = params_of(pts, self.m)
        rel = self.lattice_index(u, k) - self._origin[k]
        counts = self._counts[k]
        ok = np.all((rel >= 0) & (rel < counts), axis=1)
        pos = np.full(u.shape[0], -1, dtype=np.int64)
        if np.any(ok):
            pos[ok] = np.ravel_multi_index(tuple(rel[ok].T), tuple(counts))
        return pos

    def cube_at(self, k: int, pos: int) -> DyadicCube:
        rel = np.array(np.unravel_index(pos, tuple(self._counts[k])))
        idx = rel + self._origin[k]
        side = level_sides(self.m, k)
        lo = idx * side
        hi = lo + side
        center = PhasePoint.from_array(lift(self.dom, 0.5 * (lo + hi))[0], self.m)
        return DyadicCube(k, tuple(int(i) for i in idx), lo, hi, center)

    def cubes(self, k: int) -> list[DyadicCube]:
        if k not in self._cubes:
            self._cubes[k] = [self.cube_at(k, p) for p in range(self.count(k))]
        return self._cubes[k]

    def by_index(self, k: int, index) -> DyadicCube:
        rel = np.asarray(index, dtype=np.int64) - self._origin[k]
        if np.any(rel < 0) or np.any(rel >= self._counts[k]):
            raise ValidationFailure(f"cube {tuple(index)} is outside the level-{k} window")
        return self.cube_at(k, int(np.ravel_multi_index(tuple(rel), tuple(self._counts[k]))))

    def containing_cube(self, p: PhasePoint, k: int) -> DyadicCube:
        if not self.k_min <= k <= self.k_max:
            raise ValidationFailure(f"level {k} outside {self.k_min}..{self.k_max}")
        pos = int(self.locate(p.as_array(), k)[0])
        if pos < 0:
            raise ValidationFailure(f"{p} lies outside the dyadic window")
        return self.cube_at(k, pos)

    def parent(self, cube: DyadicCube) -> DyadicCube:
        if cube.level <= self.k_min:
            raise ValidationFailure(f"level-{cube.level} cube has no parent in this system")
        idx = np.floor_divide(np.asarray(cube.index), split_factors(self.m))
        return self.by_index(cube.level - 1, idx)

    def descendants(self, cube: DyadicCube, depth: int = 1) -> list[DyadicCube]:
        k = cube.level + depth
        if k > self.k_max:
            raise ValidationFailure(f"descendants at level {k} exceed k_max={self.k_max}")
        factor = split_factors(self.m) ** depth
        base = np.asarray(cube.index) * factor
        return [self.by_index(k, base + np.array(off)) for off in np.ndindex(*factor)]

    # Measured properties

    def nesting_violations(self) -> int:
        """Children not inside their parent, plus parents without the full set of children."""
        bad = 0
        per_parent = int(np.prod(split_factors(self.m)))
        for k in range(self.k_min + 1, self.k_max + 1):
            side, pside = level_sides(self.m, k), level_sides(self.m, k - 1)
            rel = np.array(np.unravel_index(np.arange(self.count(k)), tuple(self._counts[k]))).T
            idx = rel + self._origin[k]
            lo = idx * side
            plo = np.floor_divide(idx, split_factors(self.m)) * pside
            inside = np.all((lo >= plo - 1e-15) & (lo + side <= plo + pside + 1e-15), axis=1)
            bad += int(np.count_nonzero(~inside))
            _, n_children = np.unique(np.floor_divide(idx, split_factors(self.m)), axis=0, return_counts=True)
            bad += int(np.count_nonzero(n_children != per_parent))
        return bad

    def partition_failures(self, pts) -> int:
        """Sample points that are not in exactly the located cube at some level."""
        u = params_of(pts, self.m)
        fails = 0
        for k in self.levels():
            pos = self.locate(pts, k)
            if np.any(pos < 0):
                fails += int(np.count_nonzero(pos < 0))
                continue
            rel = np.array(np.unravel_index(pos, tuple(self._counts[k]))).T
            lo = (rel + self._origin[k]) * level_sides(self.m, k)
            hit = np.all((u >= lo) & (u < lo + level_sides(self.m, k)), axis=1)
            fails += int(np.count_nonzero(~hit))
        return fails

    def random_boundary_points(self, n: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.uniform(self.window_lo, self.window_hi, size=(n, 2 * self.m))
        return lift(self.dom, u)

    def _sample_cubes(self, k: int, n_cubes: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(self.count(k), size=min(n_cubes, self.count(k)), replace=False)

    def diameter_constant(self, rng: np.random.Generator, n_cubes: int = 32, n_points: int = 64) -> dict:
        """max d(p, p') / 2^-k over sampled pairs in sampled cubes, per level."""
        out = {}
        for k in self.levels():
            side = level_sides(self.m, k)
            worst = 0.0
            for pos in self._sample_cubes(k, n_cubes, rng):
                cube = self.cube_at(k, int(pos))
                corners = np.array([[cube.lo[i] if b == 0 else cube.hi[i] - 1e-12 * side[i]
                                     for i, b in enumerate(bits)] for bits in np.ndindex(*([2] * len(side)))])
                u = np.concatenate([corners, rng.uniform(cube.lo, cube.hi, size=(n_points, len(side)))])
                pts = lift(self.dom, u)
                d = distance_arrays(pts[:, None, :], pts[None, :, :], self.m)
                worst = max(worst, float(d.max()))
            out[k] = worst / 2.0 ** (-k)
        return {"per_level": out, "c_star": max(out.values())}

    def _face_points(self, cube: DyadicCube, n: int, rng: np.random.Generator) -> np.ndarray:
        D = len(cube.lo)
        pts = []
        for i in range(D):
            for value in (cube.lo[i], cube.hi[i]):
                u = rng.uniform(cube.lo, cube.hi, size=(n, D))
                u[:, i] = value
                pts.append(u)
        return np.concatenate(pts)

    def inner_ball_constant(self, rng: np.random.Generator, n_cubes: int = 32, n_face: int = 64) -> dict:
        """Largest alpha with Sigma cap B(center, alpha 2^-k) inside the cube, per level."""
        out = {}
        for k in self.levels():
            best = np.inf
            for pos in self._sample_cubes(k, n_cubes, rng):
                cube = self.cube_at(k, int(pos))
                face = lift(self.dom, self._face_points(cube, n_face, rng))
                d = distance_arrays(face, cube.center.as_array()[None, :], self.m)
                best = min(best, float(d.min()))
            out[k] = best / 2.0 ** (-k)
        return {"per_level": out, "alpha": min(out.values())}

    def _complement_distance(self, cube: DyadicCube, u) -> np.ndarray:
        """Distance from interior points to the nearest face point of their cube."""
        pts = lift(self.dom, u)
        best = np.full(u.shape[0], np.inf)
        for i in range(u.shape[1]):
            for value in (cube.lo[i], cube.hi[i]):
                v = u.copy()
                v[:, i] = value
                best = np.minimum(best, distance_arrays(pts, lift(self.dom, v), self.m))
        return best

    def thin_boundary_fit(self, rng: np.random.Generator, k: int | None = None, n_cubes: int = 16,
                          n_points: int = 2048, rhos=None) -> dict:
        """
        Fraction of cube points within rho 2^-k of the complement, fitted to
        c rho^beta on a log-log scale.
        """
        k = self.k_max if k is None else k
        rhos = np.geomspace(0.01, 0.3, 10) if rhos is None else np.asarray(rhos)
        dist = []
        for pos in self._sample_cubes(k, n_cubes, rng):
            cube = self.cube_at(k, int(pos))
            u = rng.uniform(cube.lo, cube.hi, size=(n_points, len(cube.lo)))
            dist.append(self._complement_distance(cube, u))
        dist = np.concatenate(dist) / 2.0 ** (-k)
        frac = np.array([np.mean(dist < r) for r in rhos])
        keep = frac > 0
        if np.count_nonzero(keep) < 3:
            raise ValidationFailure("thin-boundary fit needs at least three non-empty scales")
        fit = linregress(np.log(rhos[keep]), np.log(frac[keep]))
        return {"level": k, "rhos": rhos.tolist(), "fractions": frac.tolist(), "beta": float(fit.slope),
                "c": float(np.exp(fit.intercept)), "r2": float(fit.rvalue ** 2)}


def build_cubes(dom: GraphDomain, k_min: int, k_max: int, window) -> DyadicSystem:
    """window = (lo, hi) in parameter coordinates (x, Y, t)."""
    lo, hi = window
    return DyadicSystem(dom, lo, hi, k_min, k_max)


def containing_cube(cubes: DyadicSystem, p: PhasePoint, k: int) -> DyadicCube:
    return cubes.containing_cube(p, k)


# Whitney cubes --------------------------------------------------------------------

# scheme -> (height ratio between layers, cube side / layer bottom, dilation kept inside)
WHITNEY_SCHEMES = {"layered": (0.8, 0.25, 8.0), "dyadic": (0.5, 0.5, 4.0)}


@dataclass(frozen=True, eq=False)
class WhitneyCube:
    """Box in flattened coordinates (x, h = x_m - psi(x)): x in [x_lo, x_lo + side), h in [h_lo, h_lo + side)."""
    x_lo: np.ndarray
    h_lo: float
    side: float

    @property
    def height_ratio(self) -> float:
        return self.h_lo / self.side

    def dilate_inside(self, factor: float) -> bool:
        return self.h_lo + 0.5 * self.side - 0.5 * factor * self.side > 0.0

    def distance_bounds(self, dom: GraphDomain) -> tuple[float, float]:
        """Lower and upper bounds on the Euclidean distance to the graph."""
        return self.h_lo / np.sqrt(1.0 + dom.lipschitz_M ** 2), self.h_lo


class WhitneyDecomposition:
    """
    Layers n = 0..depth-1 below the window top h_top. Layer n covers heights
    [b_n, b_n / ratio) with b_n = h_top ratio^(n+1).

    "layered": ratio 4/5, one row of cubes of side b_n / 4, so a cube of side s
    sits at heights [4s, 5s) and its 8x dilate stays in the domain.
    "dyadic": ratio 1/2, cubes of side b_n / 2 in two rows; at dyadic distance
    x from the boundary the side is x / 2, and 4x dilates stay inside.
    """

    def __init__(self, dom: GraphDomain, x_lo, x_hi, h_top: float, depth: int, scheme: str = "layered"):
        if scheme not in WHITNEY_SCHEMES:
            raise ValidationFailure(f"Whitney scheme must be one of {sorted(WHITNEY_SCHEMES)}, got {scheme!r}")
        if h_top <= 0:
            raise ValidationFailure("window top must lie inside the domain")
        if depth < 1:
            raise ValidationFailure("Whitney depth must be at least 1")
        self.dom = dom
        self.x_lo = np.atleast_1d(np.asarray(x_lo, dtype=np.float64))[: dom.m - 1]
        self.x_hi = np.atleast_1d(np.asarray(x_hi, dtype=np.float64))[: dom.m - 1]
        self.h_top = float(h_top)
        self.depth = depth
        self.scheme = scheme
        self.ratio, self.side_factor, self.dilation = WHITNEY_SCHEMES[scheme]
        self.rows = int(round((1.0 - self.ratio) / (self.ratio * self.side_factor)))

    def bottom(self, n: int) -> float:
        return self.h_top * self.ratio ** (n + 1)

    def side(self, n: int) -> float:
        return self.side_factor * self.bottom(n)

    @property
    def h_bottom(self) -> float:
        return self.bottom(self.depth - 1)

    def layer_of(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            n = np.floor(np.log(h / self.h_top) / np.log(self.ratio)).astype(np.int64)
        return np.where((h > 0) & (h <= self.h_top) & (n < self.depth), np.maximum(n, 0), -1)

    def locate(self, X) -> list:
        """Whitney cube holding each X (rows of length m), None when uncovered."""
        X = np.atleast_2d(X)
        h = self.dom.height(X)
        layers = self.layer_of(h)
        out = []
        for row, h_row, n in zip(X, h, layers):
            if n < 0:
                out.append(None)
                continue
            s = self.side(int(n))
            b = self.bottom(int(n))
            x = row[: self.dom.m - 1]
            x_lo = self.x_lo + np.floor((x - self.x_lo) / s) * s
            r = min(int(np.floor((h_row - b) / s)), self.rows - 1)
            out.append(WhitneyCube(x_lo, b + max(r, 0) * s, s))
        return out

    def coverage(self, n: int, rng: np.random.Generator) -> float:
        """Fraction of window points (x uniform, h uniform in (0, h_top]) lying in some cube."""
        x = rng.uniform(self.x_lo, self.x_hi, size=(n, self.dom.m - 1))
        h = rng.uniform(0.0, self.h_top, size=n)
        return float(np.mean(self.layer_of(h) >= 0))

    def cubes(self) -> list[WhitneyCube]:
        out = []
        for n in range(self.depth):
            s = self.side(n)
            counts = np.ceil((self.x_hi - self.x_lo) / s - 1e-12).astype(np.int64)
            total = int(np.prod(counts)) if counts.size else 1
            if len(out) + total * self.rows > settings.max_cubes:
                raise ValidationFailure(f"Whitney decomposition exceeds {settings.max_cubes} cubes")
            for r in range(self.rows):
                for idx in np.ndindex(*counts):
                    out.append(WhitneyCube(self.x_lo + np.asarray(idx) * s, self.bottom(n) + r * s, s))
        return out


def whitney(dom: GraphDomain, window, depth: int, scheme: str = "layered") -> WhitneyDecomposition:
    """window = (x_lo, x_hi, h_top) in flattened coordinates."""
    x_lo, x_hi, h_top = window
    return WhitneyDecomposition(dom, x_lo, x_hi, h_top, depth, scheme)
