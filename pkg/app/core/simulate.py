"""
Monte Carlo boundary measures.

Elliptic, caloric and Kolmogorov measures are estimated as first-exit laws
of the diffusion generated by div(A grad) in X, carried along the group flow
Y' = X and the backward clock t = t0 - s for Kolmogorov runs (Y' = -X and
t = t0 + s for the adjoint). The divergence-form generator is simulated in
Ito form with drift b_j = sum_i d_i a_ij and diffusion sqrt(2A).
"""
import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf, erfc
from scipy.stats import kstest

from app.config import settings
from app.core.domain import CoefficientField, GraphDomain, SurfaceCube, contains, sigma_E_box, sigma_of_cube
from app.core.dyadic import DyadicCube, DyadicSystem
from app.core.geometry import GroupConstants, PhasePoint, distance_arrays
from app.core.rng import batch_bounds, stream
from app.exceptions import CensoredRun, DimensionMismatch, NumericalFailure, ValidationFailure

logger = logging.getLogger(__name__)

KINDS = ("E", "P", "K")
EXIT_REFINE = ("none", "bisection")
BISECTION_TOL = 1e-8
# normals drawn per path per refill
NOISE_BLOCK = 64
CAPTURE_WARNING = 0.95


@dataclass(frozen=True)
class SdeConfig:
    dt: float
    max_time: float
    n_paths: int
    seed: int = 0
    exit_refine: str = "none"
    batch_size: int = 0
    # steps grow like (h / h_ref)^2 once the path is farther than h_ref from the boundary
    adaptive: bool = True
    h_ref: float = 0.1
    dt_max: float = 0.05

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationFailure(f"dt must be positive, got {self.dt}")
        if not self.dt <= self.max_time:
            raise ValidationFailure(f"dt={self.dt} exceeds max_time={self.max_time}")
        if self.n_paths < 1:
            raise ValidationFailure(f"n_paths must be >= 1, got {self.n_paths}")
        if not 0 <= self.seed < 1 << 64:
            raise ValidationFailure(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.exit_refine not in EXIT_REFINE:
            raise ValidationFailure(f"exit_refine must be one of {EXIT_REFINE}, got {self.exit_refine!r}")
        if not (self.h_ref > 0 and self.dt_max >= self.dt):
            raise ValidationFailure("adaptive stepping needs h_ref > 0 and dt_max >= dt")
        if self.batch_size <= 0:
            object.__setattr__(self, "batch_size", settings.mc_batch_size)

    def step_sizes(self, h: np.ndarray, s: np.ndarray) -> np.ndarray:
        dt = np.full(h.shape, self.dt)
        if self.adaptive:
            far = h > self.h_ref
            dt[far] = np.minimum(self.dt * (h[far] / self.h_ref) ** 2, self.dt_max)
        return np.minimum(dt, self.max_time - s)

    def scaled(self, r: float) -> "SdeConfig":
        """Same configuration seen through the dilation delta_r (times by r^2, lengths by r)."""
        return SdeConfig(self.dt * r * r, self.max_time * r * r, self.n_paths, self.seed, self.exit_refine,
                         self.batch_size, self.adaptive, self.h_ref * r, self.dt_max * r * r)


@dataclass
class PathState:
    X: np.ndarray
    Y: np.ndarray
    s: np.ndarray


@dataclass(frozen=True, eq=False)
class ExitEvent:
    point: PhasePoint
    elapsed: float
    censored: bool


# Partitions -----------------------------------------------------------------------

class SurfacePartition:
    """Disjoint surface cubes; an exit goes to the first cube holding it."""

    def __init__(self, dom: GraphDomain, cubes: list[SurfaceCube], which: str = "K"):
        if not cubes:
            raise ValidationFailure("partition needs at least one cube")
        for c in cubes:
            if c.m != dom.m:
                raise DimensionMismatch(f"cube has m={c.m}, domain has m={dom.m}")
            c.validate_on(dom)
        self.dom = dom
        self.cells = list(cubes)
        self.which = which

    def __len__(self):
        return len(self.cells)

    def assign(self, pts: np.ndarray) -> np.ndarray:
        pos = np.full(pts.shape[0], -1, dtype=np.int64)
        for i, cube in enumerate(self.cells):
            free = pos < 0
            if not np.any(free):
                break
            hit = np.zeros_like(free)
            hit[free] = cube.contains_arrays(pts[free], self.which)
            pos[hit] = i
        return pos

    def sigmas(self) -> np.ndarray:
        return np.array([sigma_of_cube(self.dom, c, self.which) for c in self.cells])

    def describe(self, i: int) -> dict:
        c = self.cells[i]
        return {"id": i, "center": c.center.as_array().tolist(), "r": c.r}

    def index_of(self, cube) -> int:
        for i, c in enumerate(self.cells):
            if c is cube:
                return i
        raise ValidationFailure("cube is not part of this partition")


class DyadicPartition:
    """All level-k cubes of a dyadic system."""

    which = "K"

    def __init__(self, system: DyadicSystem, k: int):
        if not system.k_min <= k <= system.k_max:
            raise ValidationFailure(f"level {k} outside {system.k_min}..{system.k_max}")
        self.system = system
        self.k = k
        self.dom = system.dom
        self.cells = system.cubes(k)

    def __len__(self):
        return len(self.cells)

    def assign(self, pts: np.ndarray) -> np.ndarray:
        return self.system.locate(pts, self.k)

    def sigmas(self) -> np.ndarray:
        m = self.dom.m
        out = np.empty(len(self.cells))
        for i, c in enumerate(self.cells):
            vol = np.prod(c.hi[m - 1:] - c.lo[m - 1:])
            out[i] = sigma_E_box(self.dom, c.lo[: m - 1], c.hi[: m - 1]) * vol
        return out

    def describe(self, i: int) -> dict:
        c = self.cells[i]
        return {"id": i, "center": c.center.as_array().tolist(), "r": c.ell, "level": c.level,
                "index": list(c.index)}

    def index_of(self, cube: DyadicCube) -> int:
        pos = int(self.system.locate(cube.center.as_array(), self.k)[0])
        if pos < 0 or cube.level != self.k:
            raise ValidationFailure("cube is not part of this partition")
        return pos


def surface_grid(dom: GraphDomain, r: float, n_x: int = 1, n_Y: int = 1, n_t: int = 1, x_center=None,
                 Y_center=None, t_center: float = 0.0, which: str = "K") -> SurfacePartition:
    """
    Tiling by surface cubes of radius r: centres step 2r in each x direction,
    2r^3 in each Y direction and 2r^2 in t. Cubes in one x column share X0,
    so their sheared (Y, t) boxes tile exactly.
    """
    m = dom.m
    x_center = np.zeros(m - 1) if x_center is None else np.atleast_1d(np.asarray(x_center, dtype=np.float64))
    Y_center = np.zeros(m) if Y_center is None else np.atleast_1d(np.asarray(Y_center, dtype=np.float64))

    def offsets(n, step):
        return (np.arange(n) - 0.5 * (n - 1)) * step

    x_axes = [x_center[i] + offsets(n_x, 2 * r) for i in range(m - 1)]
    Y_axes = [Y_center[i] + offsets(n_Y if which == "K" else 1, 2 * r ** 3) for i in range(m)]
    t_axis = t_center + offsets(n_t if which in ("P", "K") else 1, 2 * r ** 2)
    cubes = []
    for x in (np.stack(np.meshgrid(*x_axes, indexing="ij"), -1).reshape(-1, m - 1) if m > 1 else [np.zeros(0)]):
        for Y in np.stack(np.meshgrid(*Y_axes, indexing="ij"), -1).reshape(-1, m):
            for t in t_axis:
                cubes.append(SurfaceCube(dom.boundary_point(x, Y, t), r))
    return SurfacePartition(dom, cubes, which)


# Histograms -----------------------------------------------------------------------

@dataclass(eq=False)
class MeasureHistogram:
    kind: str
    adjoint: bool
    pole: PhasePoint
    partition: SurfacePartition | DyadicPartition
    counts: np.ndarray
    outside: int
    censored: int
    n_paths: int
    exits: np.ndarray
    elapsed: np.ndarray
    sigma: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.sigma is None:
            self.sigma = self.partition.sigmas()
        if int(self.counts.sum()) + self.outside + self.censored != self.n_paths:
            raise NumericalFailure("histogram bookkeeping does not add up to n_paths")

    @property
    def masses(self) -> np.ndarray:
        return self.counts / self.n_paths

    @property
    def stderr(self) -> np.ndarray:
        p = self.masses
        return np.sqrt(p * (1.0 - p) / self.n_paths)

    @property
    def censored_fraction(self) -> float:
        return self.censored / self.n_paths

    @property
    def outside_fraction(self) -> float:
        return self.outside / self.n_paths

    @property
    def captured_fraction(self) -> float:
        exited = self.n_paths - self.censored
        return float(self.counts.sum() / exited) if exited else 0.0

    @property
    def zero_cells(self) -> np.ndarray:
        return np.flatnonzero(self.counts == 0)

    def count_of(self, cube: SurfaceCube, which: str | None = None) -> int:
        if self.exits.shape[0] == 0:
            return 0
        return int(np.count_nonzero(cube.contains_arrays(self.exits, which or self.partition.which)))

    def mass_of(self, cube: SurfaceCube, which: str | None = None) -> float:
        """Empirical measure of an arbitrary surface cube, recomputed from the raw exits."""
        return self.count_of(cube, which) / self.n_paths

    def rows(self) -> list[dict]:
        out = []
        for i in range(len(self.partition)):
            row = self.partition.describe(i)
            row.update(mass=float(self.masses[i]), stderr=float(self.stderr[i]), sigma=float(self.sigma[i]),
                       count=int(self.counts[i]))
            out.append(row)
        return out

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "adjoint": self.adjoint,
            "pole": self.pole.as_array().tolist(),
            "n_paths": self.n_paths,
            "censored": self.censored,
            "outside": self.outside,
            "captured_fraction": self.captured_fraction,
            "cells": self.rows(),
        }

    def to_csv(self, path, comment: str | None = None):
        m = self.pole.m
        coords = [f"X{i + 1}" for i in range(m)] + [f"Y{i + 1}" for i in range(m)] + ["t"]
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            writer = csv.writer(fh)
            writer.writerow(["cube_id", *coords, "r", "mass", "stderr", "sigma"])
            for row in self.rows():
                writer.writerow([row["id"], *row["center"], row["r"], row["mass"], row["stderr"], row["sigma"]])


@dataclass(frozen=True)
class KernelRatio:
    value: float
    stderr: float
    count: int

    @property
    def zero_count(self) -> bool:
        return self.count == 0


# Dynamics -------------------------------------------------------------------------

def sqrt_diffusion(fld: CoefficientField, X: np.ndarray) -> np.ndarray:
    """Principal square root of 2A(X), shape (n, m, m)."""
    A2 = 2.0 * (fld.base[None, :, :] if fld.is_constant else fld.eval(X))
    w, V = np.linalg.eigh(A2)
    if np.any(w <= 0.0):
        raise ValidationFailure("coefficient matrix is not positive definite (ellipticity violated)")
    S = np.einsum("...ik,...k,...jk->...ij", V, np.sqrt(w), V)
    return np.broadcast_to(S, (X.shape[0], fld.m, fld.m))


def sde_step(fld: CoefficientField, state: PathState, dW: np.ndarray, dt, kind: str = "K",
             adjoint: bool = False) -> PathState:
    """
    One Euler-Maruyama step X <- X + b dt + sqrt(2A) dW; for Kolmogorov runs
    also Y <- Y + X dt (Y <- Y - X dt for the adjoint). dW ~ N(0, dt I).
    """
    dt = np.broadcast_to(np.asarray(dt, dtype=np.float64), state.s.shape)
    X = state.X
    drift = fld.drift(X) if not fld.is_constant else 0.0
    X_new = X + drift * dt[:, None] + np.einsum("nij,nj->ni", sqrt_diffusion(fld, X), dW)
    if kind == "K":
        Y_new = state.Y - X * dt[:, None] if adjoint else state.Y + X * dt[:, None]
    else:
        Y_new = state.Y.copy()
    return PathState(X_new, Y_new, state.s + dt)


def _bisect(dom: GraphDomain, a: np.ndarray, b: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Refine the crossing fraction of the segments a -> b to BISECTION_TOL in length."""
    lo = np.zeros_like(lam)
    hi = np.ones_like(lam)
    # iteration count is per segment
    length = np.maximum(np.linalg.norm(b - a, axis=1), BISECTION_TOL)
    n_iter = np.clip(np.ceil(np.log2(length / BISECTION_TOL)), 0, 60).astype(np.int64)
    for k in range(int(n_iter.max()) if n_iter.size else 0):
        mid = 0.5 * (lo + hi)
        inside = dom.height(a + mid[:, None] * (b - a)) > 0.0
        live = k < n_iter
        lo = np.where(live & inside, mid, lo)
        hi = np.where(live & ~inside, mid, hi)
    return np.where(n_iter > 0, hi, lam)


class PathNoise:
    """
    Brownian increments of paths first, first + 1, ...: path i reads its own
    stream (seed, i) front to back, so its trajectory does not depend on the
    batch it runs in or on the other paths of that batch.
    """

    def __init__(self, seed: int, first: int, n: int, m: int, block: int = NOISE_BLOCK):
        self.seed = seed
        self.first = first
        self.m = m
        self.block = block
        self._gens: list[np.random.Generator | None] = [None] * n
        self._buf = np.empty((n, block, m))
        self._used = np.full(n, block, dtype=np.int64)

    def draw(self, rows: np.ndarray) -> np.ndarray:
        """One N(0, I_m) vector for each of the given paths."""
        stale = rows[self._used[rows] >= self.block]
        for r in stale:
            if self._gens[r] is None:
                self._gens[r] = stream(self.seed, self.first + int(r))
            self._buf[r] = self._gens[r].standard_normal((self.block, self.m))
        self._used[stale] = 0
        z = self._buf[rows, self._used[rows]]
        self._used[rows] += 1
        return z


def _simulate_batch(dom: GraphDomain, fld: CoefficientField, start: PhasePoint, config: SdeConfig, kind: str,
                    adjoint: bool, n: int, noise: PathNoise):
    m = dom.m
    X = np.tile(start.X, (n, 1))
    Y = np.tile(start.Y, (n, 1))
    s = np.zeros(n)
    out_X, out_Y, out_s = X.copy(), Y.copy(), np.zeros(n)
    censored = np.zeros(n, dtype=bool)
    active = np.arange(n)

    while active.size:
        state = PathState(X[active], Y[active], s[active])
        h = dom.height(state.X)
        step = config.step_sizes(h, state.s)
        dW = noise.draw(active) * np.sqrt(step)[:, None]
        new = sde_step(fld, state, dW, step, kind, adjoint)
        if not (np.all(np.isfinite(new.X)) and np.all(np.isfinite(new.Y))):
            raise NumericalFailure("Euler-Maruyama step produced a non-finite state")
        h_new = dom.height(new.X)
        hit = h_new <= 0.0
        if np.any(hit):
            lam = h[hit] / (h[hit] - h_new[hit])
            if config.exit_refine == "bisection":
                lam = _bisect(dom, state.X[hit], new.X[hit], lam)
            ex = state.X[hit] + lam[:, None] * (new.X[hit] - state.X[hit])
            ex[:, -1] = dom.psi(ex[:, : m - 1])
            idx = active[hit]
            out_X[idx] = ex
            out_Y[idx] = state.Y[hit] + lam[:, None] * (new.Y[hit] - state.Y[hit])
            out_s[idx] = state.s[hit] + lam * step[hit]
        timed_out = ~hit & (new.s >= config.max_time * (1.0 - 1e-12))
        if np.any(timed_out):
            idx = active[timed_out]
            out_X[idx], out_Y[idx], out_s[idx] = new.X[timed_out], new.Y[timed_out], new.s[timed_out]
            censored[idx] = True
        X[active], Y[active], s[active] = new.X, new.Y, new.s
        active = active[~(hit | timed_out)]

    if kind == "E":
        t = np.full(n, start.t)
    else:
        t = start.t + out_s if adjoint else start.t - out_s
    return np.concatenate([out_X, out_Y, t[:, None]], axis=1), out_s, censored


def _check_setup(dom: GraphDomain, fld: CoefficientField, start: PhasePoint, kind: str):
    if kind not in KINDS:
        raise ValidationFailure(f"kind must be one of {KINDS}, got {kind!r}")
    if not dom.m == fld.m == start.m:
        raise DimensionMismatch(f"domain m={dom.m}, field m={fld.m} and start m={start.m} differ")
    if not contains(dom, start):
        raise ValidationFailure(f"start point {start} is not strictly inside the domain")


def sample_exit(dom: GraphDomain, fld: CoefficientField, start: PhasePoint, config: SdeConfig, kind: str = "K",
                adjoint: bool = False, index: int = 0) -> ExitEvent:
    """First exit of path `index`; the same path as row `index` of simulate_exits."""
    _check_setup(dom, fld, start, kind)
    pts, elapsed, censored = _simulate_batch(dom, fld, start, config, kind, adjoint, 1,
                                             PathNoise(config.seed, index, 1, dom.m))
    return ExitEvent(PhasePoint.from_array(pts[0], dom.m), float(elapsed[0]), bool(censored[0]))


def simulate_exits(dom: GraphDomain, fld: CoefficientField, start: PhasePoint, config: SdeConfig, kind: str = "K",
                   adjoint: bool = False, threads: int | None = None):
    """
    Exit points, elapsed times and censoring flags of config.n_paths paths.

    Path i draws from stream (seed, i). Batches only group paths for the
    workers and are concatenated in index order, so neither the batch size nor
    the thread count changes the result.
    """
    _check_setup(dom, fld, start, kind)
    batches = batch_bounds(config.n_paths, config.batch_size)

    def run(bounds):
        lo, hi = bounds
        return _simulate_batch(dom, fld, start, config, kind, adjoint, hi - lo,
                               PathNoise(config.seed, lo, hi - lo, dom.m))

    workers = threads or settings.threads
    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, batches))
    else:
        results = [run(b) for b in batches]
    pts = np.concatenate([r[0] for r in results])
    elapsed = np.concatenate([r[1] for r in results])
    censored = np.concatenate([r[2] for r in results])
    return pts, elapsed, censored


def histogram_from_exits(partition, pole: PhasePoint, kind: str, adjoint: bool, pts: np.ndarray,
                         elapsed: np.ndarray, censored: np.ndarray) -> MeasureHistogram:
    n = pts.shape[0]
    n_cens = int(np.count_nonzero(censored))
    if n_cens == n:
        raise CensoredRun(f"all {n} paths were censored; raise max_time")
    exits = pts[~censored]
    pos = partition.assign(exits)
    counts = np.bincount(pos[pos >= 0], minlength=len(partition)).astype(np.int64)
    outside = exits.shape[0] - int(counts.sum())
    hist = MeasureHistogram(kind, adjoint, pole, partition, counts, outside, n_cens, n, exits, elapsed[~censored])
    if hist.captured_fraction < CAPTURE_WARNING:
        logger.warning(f"Partition captures only {hist.captured_fraction:.1%} of exits")
    return hist


def estimate_measure(dom: GraphDomain, fld: CoefficientField, pole: PhasePoint, partition, config: SdeConfig,
                     kind: str = "K", adjoint: bool = False, threads: int | None = None) -> MeasureHistogram:
    pts, elapsed, censored = simulate_exits(dom, fld, pole, config, kind, adjoint, threads)
    hist = histogram_from_exits(partition, pole, kind, adjoint, pts, elapsed, censored)
    logger.info(f"Estimated {'adjoint ' if adjoint else ''}{kind}-measure from {config.n_paths} paths: "
                f"censored {hist.censored_fraction:.2%}, outside {hist.outside_fraction:.2%}")
    return hist


def kernel_ratio(hist: MeasureHistogram, cube, which_sigma: str | None = None) -> KernelRatio:
    """omega(cube) / sigma(cube): the cube-scale Radon-Nikodym estimate."""
    i = cube if isinstance(cube, (int, np.integer)) else hist.partition.index_of(cube)
    if which_sigma is None or which_sigma == hist.partition.which:
        sigma = hist.sigma[i]
    else:
        sigma = sigma_of_cube(hist.partition.dom, hist.partition.cells[i], which_sigma)
    if not sigma > 0:
        raise ValidationFailure(f"cube {i} has zero surface measure")
    count = int(hist.counts[i])
    if count == 0:
        logger.warning(f"Cube {i} received no exits; kernel ratio reported as 0")
    return KernelRatio(float(hist.masses[i] / sigma), float(hist.stderr[i] / sigma), count)


def point_mass_histogram(partition, pole: PhasePoint, n_paths: int, index: int = 0,
                         kind: str = "K") -> MeasureHistogram:
    """Synthetic measure with all mass in one cell, a non-doubling control."""
    counts = np.zeros(len(partition), dtype=np.int64)
    counts[index] = n_paths
    center = partition.cells[index].center.as_array()
    exits = np.tile(center, (n_paths, 1))
    return MeasureHistogram(kind, False, pole, partition, counts, 0, 0, n_paths, exits, np.zeros(n_paths))


# Free dynamics and oracles ---------------------------------------------------------

def free_transition(fld: CoefficientField, start: PhasePoint, s: float, n_paths: int, dt: float, seed: int = 0,
                    adjoint: bool = False) -> PathState:
    """Kolmogorov dynamics run for time s with no boundary."""
    n_steps = max(1, int(round(s / dt)))
    h = s / n_steps
    rng = stream(seed, 0)
    state = PathState(np.tile(start.X, (n_paths, 1)), np.tile(start.Y, (n_paths, 1)), np.zeros(n_paths))
    for _ in range(n_steps):
        dW = rng.standard_normal((n_paths, fld.m)) * np.sqrt(h)
        state = sde_step(fld, state, dW, h, "K", adjoint)
    return state


def kinetic_mean(x: float, y: float, s: float) -> np.ndarray:
    return np.array([x, y + x * s])


def kinetic_covariance(s: float) -> np.ndarray:
    return np.array([[2.0 * s, s * s], [s * s, 2.0 * s ** 3 / 3.0]])


def fundamental_solution_const(p: PhasePoint, p_tilde: PhasePoint, fld: CoefficientField | None = None) -> float:
    """
    Gamma(p, p~) for A = I: the transition density from p = (X, Y, t) to
    (X~, Y~) after s = t - t~, a product of 2x2 Gaussians per coordinate.
    """
    if fld is not None and not fld.is_identity:
        raise ValidationFailure("the closed-form fundamental solution needs A = I")
    if p.m != p_tilde.m:
        raise DimensionMismatch(f"points have m={p.m} and m={p_tilde.m}")
    s = p.t - p_tilde.t
    if s <= 0:
        return 0.0
    det = s ** 4 / 3.0
    inv = np.linalg.inv(kinetic_covariance(s))
    value = 1.0
    for i in range(p.m):
        r = np.array([p_tilde.X[i], p_tilde.Y[i]]) - kinetic_mean(p.X[i], p.Y[i], s)
        value *= np.exp(-0.5 * r @ inv @ r) / (2.0 * np.pi * np.sqrt(det))
    return float(value)


def fundamental_bound_constant(m: int, n: int, rng: np.random.Generator, scale: float = 1.0) -> float:
    """Sampled max of Gamma(p, p~) d(p, p~)^(q-2) over pairs with t > t~."""
    q = GroupConstants(m).q
    a = rng.uniform(-scale, scale, size=(n, 2 * m + 1))
    b = rng.uniform(-scale, scale, size=(n, 2 * m + 1))
    d = distance_arrays(a, b, m)
    worst = 0.0
    for pa, pb, dist in zip(a, b, d):
        g = fundamental_solution_const(PhasePoint.from_array(pa, m), PhasePoint.from_array(pb, m))
        if g > 0:
            worst = max(worst, g * dist ** (q - 2))
    return worst


def halfplane_poisson_kernel(pole_X, xi, offset: float = 0.0) -> np.ndarray:
    x1, x2 = pole_X[0], pole_X[1] - offset
    xi = np.asarray(xi, dtype=np.float64)
    return x2 / (np.pi * ((x1 - xi) ** 2 + x2 ** 2))


def halfplane_poisson_mass(pole_X, lo: float, hi: float, offset: float = 0.0) -> float:
    """Harmonic measure of [lo, hi] seen from pole_X in {x2 > offset}."""
    x1, x2 = pole_X[0], pole_X[1] - offset
    return float((np.arctan((hi - x1) / x2) - np.arctan((lo - x1) / x2)) / np.pi)


def caloric_exit_density(x0: float, s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    return x0 / np.sqrt(4.0 * np.pi) * s ** -1.5 * np.exp(-x0 * x0 / (4.0 * s))


def caloric_exit_cdf(x0: float, s) -> np.ndarray:
    s = np.maximum(np.asarray(s, dtype=np.float64), 1e-300)
    return erfc(x0 / (2.0 * np.sqrt(s)))


def halfline_censored_fraction(x0: float, max_time: float) -> float:
    return float(erf(x0 / (2.0 * np.sqrt(max_time))))


def exit_time_ks(elapsed: np.ndarray, x0: float, max_time: float | None = None):
    """KS statistic of exit times against the half-line first-passage law (conditioned on s <= max_time)."""
    norm = 1.0 if max_time is None else float(caloric_exit_cdf(x0, max_time))
    result = kstest(elapsed, lambda s: np.minimum(caloric_exit_cdf(x0, s) / norm, 1.0))
    return float(result.statistic), float(result.pvalue)
