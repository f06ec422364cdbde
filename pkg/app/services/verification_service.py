"""
Verification suites.

A suite runs a small experiment end to end and reduces it to named checks,
each with a measured value, a threshold and a verdict. Scale "quick" shrinks
sample sizes and widens the statistical thresholds to match; "full" runs at
acceptance size.
"""
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.linalg import cholesky, solve_triangular
from scipy.stats import linregress, norm

from app.core.analyze import (ConeParams, bq_from_density, boundary_decay_test, comparability_test, cone_samples,
                              doubling_test, dyadic_groups, hl_max, in_cone, nt_max, solvability_ratios,
                              vertical_approach)
from app.core.domain import (GraphDomain, SurfaceCube, TrigTerm, constant_field, dini_integral, dini_integral_all,
                             laminate_field, trig_field)
from app.core.dyadic import build_cubes
from app.core.geometry import (GroupConstants, PhasePoint, ReferenceParams, ball_contains, compose, dilate,
                               group_norm, inverse, origin, pseudo_triangle_constant, quasi_distance,
                               quasi_triangle_constant, reference_point)
from app.core.grid import (MAX_PRINCIPLE_TOL, Box, carleson_constant, evaluate, extend_lateral, harnack_constant,
                           holder_exponent, solve_elliptic, solve_kolmogorov, solve_parabolic)
from app.core.homogenize import cell_means, effective_matrix, epsilon_sweep
from app.core.rng import stream
from app.core.simulate import (DyadicPartition, SdeConfig, estimate_measure, exit_time_ks, free_transition,
                               fundamental_bound_constant, fundamental_solution_const, halfline_censored_fraction,
                               halfplane_poisson_mass, histogram_from_exits, kinetic_covariance, point_mass_histogram,
                               simulate_exits, surface_grid)
from app.exceptions import ValidationFailure
from app.schemas import DyadicSpec, WhitneySpec
from app.services.experiment_service import (DATA, ball_scaling, cube_properties, group_errors, solution_error,
                                             whitney_properties)
from app.services.report_service import Report, plain

logger = logging.getLogger(__name__)

SIZES = {
    "quick": {
        "group_samples": 10000,
        "triangle_samples": 20000,
        "ball_samples": 200000,
        "cube_k_max_m1": 2,
        "cell_grid": 64,
        "refinements": (16, 32, 64),
        "harmonic_paths": 20000,
        "harmonic_max_time": 200.0,
        "caloric_paths": 50000,
        "kinetic_paths": 20000,
        "kinetic_steps": (80, 80, 80),
        "kinetic_rel_tol": 0.10,
        "transition_paths": 100000,
        "transition_dt": 1e-3,
        "comparability_paths": 20000,
        "doubling_paths": 20000,
        "doubling_min_count": 200,
        "bq_paths": 50000,
        "battery_steps": (48, 96, 50),
        "determinism_paths": 2000,
        "sigmas": 4.0,
        "tv_tol": 0.03,
        "ks_tol": 0.03,
    },
    "full": {
        "group_samples": 10000,
        "triangle_samples": 100000,
        "ball_samples": 1000000,
        "cube_k_max_m1": 3,
        "cell_grid": 256,
        "refinements": (16, 32, 64),
        "harmonic_paths": 1000000,
        "harmonic_max_time": 1000.0,
        "caloric_paths": 1000000,
        "kinetic_paths": 200000,
        "kinetic_steps": (160, 160, 160),
        "kinetic_rel_tol": 0.05,
        "transition_paths": 1000000,
        "transition_dt": 2e-4,
        "comparability_paths": 100000,
        "doubling_paths": 100000,
        "doubling_min_count": 1000,
        "bq_paths": 200000,
        "battery_steps": (96, 192, 100),
        "determinism_paths": 8000,
        "sigmas": 3.0,
        "tv_tol": 0.02,
        "ks_tol": 0.02,
    },
}
SCALES = tuple(SIZES)

GROUP_TOL = 1e-12
EXACT_TOL = 1e-8
BALL_TOL = 0.02
TENSOR_TOL = 1e-3
BASIS_TOL = 1e-6
COMPARABILITY_LIMIT = 10.0
DOUBLING_AGREEMENT = 0.2
# B_2 stability: tested cubes hold at least this many exits per child
BQ_MIN_COUNT = 40
BQ_GROWTH = 0.2
BQ_ZERO_CHILDREN = 0.5
SWEEP_RATIO = 0.75
CONTROL_FACTOR = 3.0


@dataclass
class Check:
    name: str
    value: object
    threshold: object
    passed: bool

    def row(self, suite: str) -> dict:
        return {"suite": suite, "check": self.name, "value": self.value, "threshold": self.threshold,
                "passed": bool(self.passed)}


@dataclass
class SuiteResult:
    suite: str
    checks: list = field(default_factory=list)
    measured: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def below(self, name: str, value, limit):
        self.checks.append(Check(name, value, limit, bool(np.isfinite(value) and value <= limit)))

    def above(self, name: str, value, limit):
        self.checks.append(Check(name, value, limit, bool(np.isfinite(value) and value >= limit)))

    def finite(self, name: str, value):
        self.checks.append(Check(name, value, "finite", bool(np.all(np.isfinite(value)))))

    def holds(self, name: str, ok: bool, value=None):
        self.checks.append(Check(name, value, True, bool(ok)))


SUITES = {}


def suite(name: str):
    def register(fn):
        SUITES[name] = fn
        return fn
    return register


def _order(hs, errors) -> float:
    return float(linregress(np.log(hs), np.log(errors)).slope)


def _next_seed(seed: int) -> int:
    return (seed + 1) % (1 << 64)


# Geometry -------------------------------------------------------------------------

@suite("group-axioms")
def group_axioms(size: dict, seed: int, threads: int) -> SuiteResult:
    res = SuiteResult("group-axioms")
    for m in (1, 2):
        q = GroupConstants(m).q
        res.holds(f"m={m} homogeneous dimension", q == 4 * m + 2, q)
        errors = group_errors(m, size["group_samples"], stream(seed, m))
        res.measured[f"m{m}_errors"] = errors
        for name, err in errors.items():
            res.below(f"m={m} {name}", err, GROUP_TOL)
        res.measured[f"m{m}_pseudo_triangle"] = pseudo_triangle_constant(m, size["triangle_samples"],
                                                                         stream(seed, 10 + m))
        res.measured[f"m{m}_quasi_triangle"] = quasi_triangle_constant(m, size["triangle_samples"],
                                                                       stream(seed, 20 + m))
        res.finite(f"m={m} pseudo-triangle constant", res.measured[f"m{m}_pseudo_triangle"])
        res.finite(f"m={m} quasi-triangle constant", res.measured[f"m{m}_quasi_triangle"])

    def p(X, Y, t):
        return PhasePoint([X], [Y], t)

    base = origin(1)
    examples = [
        ("(1,0,0) o (0,0,1)", compose(p(1, 0, 0), p(0, 0, 1)), p(1, -1, 1)),
        ("inverse of (2,3,1)", inverse(p(2, 3, 1)), p(-2, -5, -1)),
        ("dilation by 2 of (1,1,1)", dilate(2.0, p(1, 1, 1)), p(2, 8, 4)),
        ("A+ at rho=1, lambda=2", reference_point(base, ReferenceParams(1.0, 2.0, "plus")), p(2, -4 / 3, 1)),
        ("A- at rho=1, lambda=2", reference_point(base, ReferenceParams(1.0, 2.0, "minus")), p(2, 4 / 3, -1)),
    ]
    for name, got, want in examples:
        res.holds(name, got.allclose(want), got.as_array())
    res.below("norm of (1,8,4) is 5", abs(group_norm(p(1, 8, 4)) - 5.0), GROUP_TOL)
    res.below("d(0, (1,0,0)) is 1", abs(quasi_distance(base, p(1, 0, 0)) - 1.0), GROUP_TOL)
    res.holds("balls are open", not ball_contains(base, 1.0, p(1, 0, 0)))
    return res


@suite("ball-scaling")
def ball_scaling_suite(size: dict, seed: int, threads: int) -> SuiteResult:
    res = SuiteResult("ball-scaling")
    for m in (1, 2):
        rows = ball_scaling(m, [1.0, 2.0], size["ball_samples"], seed)
        res.measured[f"m{m}"] = rows
        res.below(f"m={m} vol(B_2)/vol(B_1) against 2^q", rows[1]["rel_error"], BALL_TOL)
    return res


@suite("cubes")
def cubes_suite(size: dict, seed: int, threads: int) -> SuiteResult:
    res = SuiteResult("cubes")
    setups = [
        ("m=1 flat", GraphDomain(1), DyadicSpec(window_lo=[0.0, 0.0], window_hi=[1.0, 1.0], k_max=size["cube_k_max_m1"])),
        ("m=2 sine", GraphDomain(2, "sine", amplitude=0.2),
         DyadicSpec(window_lo=[0.0] * 4, window_hi=[1.0] * 4, k_max=1)),
    ]
    for label, dom, spec in setups:
        props = cube_properties(dom, spec, seed)
        res.measured[label] = props
        res.holds(f"{label} children nest in parents", props["nesting_violations"] == 0,
                  props["nesting_violations"])
        res.holds(f"{label} each point in exactly one cube per level", props["partition_failures"] == 0,
                  props["partition_failures"])
        res.finite(f"{label} diameter constant", props["diameter"]["c_star"])
        res.above(f"{label} inner ball constant", props["inner_ball"]["alpha"], np.finfo(float).tiny)
        res.above(f"{label} thin-boundary exponent", props["thin_boundary"]["beta"], np.finfo(float).tiny)
        res.above(f"{label} thin-boundary fit r^2", props["thin_boundary"]["r2"], 0.9)

    dom = GraphDomain(2, "sine", amplitude=0.2)
    spec = WhitneySpec(x_lo=[-1.0], x_hi=[1.0])
    props = whitney_properties(dom, spec, seed)
    res.measured["whitney"] = props
    sd = np.sqrt(props["expected_coverage"] * (1.0 - props["expected_coverage"]) / spec.samples)
    res.below("Whitney coverage", abs(props["coverage"] - props["expected_coverage"]),
              size["sigmas"] * sd + 1e-12)
    lo, hi = props["distance_over_side"]
    res.holds("Whitney distance within [1/4, 4] sides", 0.25 <= lo and hi <= 4.0 + 1e-12, [lo, hi])
    res.holds("Whitney 8-dilates stay inside", props["dilates_inside"])
    return res


# Homogenization -------------------------------------------------------------------

@suite("effective-tensor")
def effective_tensor_suite(size: dict, seed: int, threads: int) -> SuiteResult:
    res = SuiteResult("effective-tensor")
    n = size["cell_grid"]
    for m in (1, 2):
        tensor = effective_matrix(constant_field(np.eye(m)), n)
        res.below(f"m={m} identity", float(np.max(np.abs(tensor.matrix - np.eye(m)))), 1e-10)

    sinusoid = laminate_field([2.0], [1.0])
    abar = effective_matrix(sinusoid, 256).matrix[0, 0]
    means = cell_means(sinusoid, 256)
    res.measured["sinusoid"] = {"abar": abar, **means}
    res.below("2 + sin(2 pi x) gives sqrt(3)", abs(abar - np.sqrt(3.0)), TENSOR_TOL)
    res.holds("harmonic <= abar <= arithmetic",
              means["harmonic"][0] - TENSOR_TOL <= abar <= means["arithmetic"][0] + TENSOR_TOL,
              [means["harmonic"][0], abar, means["arithmetic"][0]])
    res.below("1-D abar equals the harmonic mean", abs(abar - means["harmonic"][0]), TENSOR_TOL)

    laminate = laminate_field([2.0, 3.0], [1.0, 1.0], axis=0)
    tensor = effective_matrix(laminate, n)
    res.measured["laminate"] = tensor.matrix
    res.below("laminate gives diag(harmonic, arithmetic)",
              float(np.max(np.abs(tensor.matrix - np.diag([np.sqrt(3.0), 3.0])))), TENSOR_TOL)
    c, s = np.cos(np.pi / 6), np.sin(np.pi / 6)
    rotated = effective_matrix(laminate, n, basis=[[c, -s], [s, c]])
    res.below("rotated corrector basis", float(np.max(np.abs(rotated.matrix - tensor.matrix))), BASIS_TOL)

    res.below("x_m-independent field has zero Dini integral", dini_integral(laminate), 0.0)
    res.finite("laminate full Dini integral", dini_integral_all(laminate))
    vertical = trig_field(2.0 * np.eye(2), [TrigTerm(0.5 * np.eye(2), np.array([0.0, 1.0]))])
    res.measured["vertical_dini"] = dini_integral(vertical)
    res.finite("sinusoid in x_m has a finite Dini integral", res.measured["vertical_dini"])
    return res


@suite("homogenization")
def homogenization_suite(size: dict, seed: int, threads: int) -> SuiteResult:
    res = SuiteResult("homogenization")
    dom = GraphDomain(1)
    box = Box((0.0, -1.0, 0.0), (1.0, 1.0, 0.25))
    compact = ([0.25, -0.5, 0.125], [0.75, 0.5, 0.24])
    eps = [0.5, 0.25, 0.125]

    flat = epsilon_sweep(dom, constant_field([[1.0]]), "decay", box, eps, compact, n_cells_grid=size["cell_grid"])
    res.below("constant coefficients do not oscillate", max(flat.errors), EXACT_TOL)

    table = epsilon_sweep(dom, laminate_field([2.0], [1.0]), "decay", box, eps, compact, negative_control=True,
                          n_cells_grid=size["cell_grid"])
    res.measured["sweep"] = table.to_json()
    res.holds("errors strictly decreasing", table.strictly_decreasing, table.errors)
    for i, ratio in enumerate(table.ratios):
        res.below(f"error ratio eps={eps[i + 1]}", ratio, SWEEP_RATIO)
    factor = table.control_errors[-1] / table.errors[-1] if table.errors[-1] > 0 else float("inf")
    res.above("arithmetic-mean control error factor", factor, CONTROL_FACTOR)
    return res


# Grid solvers ---------------------------------------------------------------------

def _exact_1d(a: float, b: float):
    """u(x) = int_0^x ds / (a + b sin 2 pi s), normalized so u(1) = 1."""
    def f(s):
        return 1.0 / (a + b * np.sin(2.0 * np.pi * s))
    total = quad(f, 0.0, 1.0)[0]
    return lambda x: np.array([quad(f, 0.0, v)[0] for v in x]) / total


@suite("solver")
def solver_suite(size: dict, seed: int, threads: int) -> SuiteResult:
    res = SuiteResult("solver")
    dom1, eye1 = GraphDomain(1), constant_field([[1.0]])
    kbox = Box((0.0, -1.0, 0.0), (1.0, 1.0, 0.25))

    for name in ("x", "y_plus_tx", "x2_plus_2t"):
        data = DATA["kolmogorov"][name][0]
        gf = solve_kolmogorov(dom1, eye1, kbox, data, (16, 32, 8))
        res.below(f"kolmogorov reproduces {name}", solution_error(gf, data), EXACT_TOL)
        res.below(f"kolmogorov {name} maximum principle", gf.report.max_principle_violation, MAX_PRINCIPLE_TOL)
    for name in ("x", "x2_plus_2t"):
        data = DATA["parabolic"][name][0]
        gf = solve_parabolic(dom1, eye1, Box((0.0, 0.0), (1.0, 0.5)), data, (16, 8))
        res.below(f"parabolic reproduces {name}", solution_error(gf, data), EXACT_TOL)
    data = DATA["elliptic"]["x1x2"][0]
    gf = solve_elliptic(GraphDomain(2), constant_field(np.eye(2)), Box((-1.0, 0.0), (1.0, 1.0)), data, 0.05)
    res.below("elliptic reproduces x1 x2", solution_error(gf, data), EXACT_TOL)
    res.below("elliptic maximum principle", gf.report.max_principle_violation, MAX_PRINCIPLE_TOL)

    sinusoid = laminate_field([2.0], [1.0])
    exact = _exact_1d(2.0, 1.0)
    hs, errors = [], []
    for N in (32, 64):
        gf = solve_elliptic(dom1, sinusoid, Box((0.0,), (1.0,)), lambda X: X[:, 0], 1.0 / N)
        hs.append(1.0 / N)
        errors.append(float(np.max(np.abs(gf.values - exact(gf.axes[0])))))
    res.measured["elliptic_1d_errors"] = errors
    res.above("elliptic 1-D quadrature order", _order(hs, errors), 1.8)

    smooth = DATA["parabolic"]["exp_x_plus_t"][0]
    hs, errors = [], []
    for N in size["refinements"]:
        gf = solve_parabolic(dom1, eye1, Box((0.0, 0.0), (1.0, 0.5)), smooth, (N, N // 2), theta=0.5)
        hs.append(1.0 / N)
        errors.append(solution_error(gf, smooth))
    res.measured["crank_nicolson_errors"] = errors
    res.above("Crank-Nicolson order", _order(hs, errors), 1.8)

    kinetic = DATA["kolmogorov"]["exp_kinetic"][0]
    hs, errors = [], []
    for N in size["refinements"]:
        gf = solve_kolmogorov(dom1, eye1, Box((0.0, 0.0, 0.0), (1.0, 1.0, 0.25)), kinetic, (N, N, N // 4))
        hs.append(1.0 / N)
        errors.append(solution_error(gf, kinetic))
        res.below(f"upwind N={N} maximum principle", gf.report.max_principle_violation, MAX_PRINCIPLE_TOL)
    res.measured["upwind_errors"] = errors
    res.above("upwind Kolmogorov order", _order(hs, errors), 0.8)

    heights = np.geomspace(0.02, 0.3, 6)
    base = dom1.boundary_point([], [0.0], 0.2)
    linear = solve_kolmogorov(dom1, eye1, kbox, DATA["kolmogorov"]["x"][0], (16, 32, 8))
    decay = boundary_decay_test(linear, dom1, base, vertical_approach(base, heights))
    res.below("u = x decays with exponent 1", abs(decay.alpha - 1.0), 1e-6)
    oscillating = solve_kolmogorov(dom1, sinusoid, kbox, DATA["kolmogorov"]["x"][0], (64, 128, 16))
    decay = boundary_decay_test(oscillating, dom1, base, vertical_approach(base, heights))
    res.measured["decay"] = decay.to_json()
    res.holds("oscillating coefficients: decay exponent in (0, 1.2]", 0.0 < decay.alpha <= 1.2, decay.alpha)
    res.above("oscillating coefficients: decay fit r^2", decay.r2, 0.95)

    positive = solve_kolmogorov(dom1, eye1, kbox, DATA["kolmogorov"]["decay"][0], (32, 64, 8))
    center = (0.5, 0.0, 0.125)
    res.measured["holder"] = holder_exponent(positive, center, (0.05, 0.1, 0.2))
    res.measured["harnack"] = harnack_constant(positive, center, 0.2)
    res.measured["carleson"] = carleson_constant(oscillating, dom1, dom1.boundary_point([], [0.0], 0.125), 0.2)
    res.finite("Holder exponent", res.measured["holder"]["alpha"])
    res.finite("Harnack constant", res.measured["harnack"])
    res.finite("Carleson constant", res.measured["carleson"])
    return res


# Boundary measures ----------------------------------------------------------------

def _smoothed_indicator(center: float, half: float, h: float):
    """1 inside |v - center| < half with a one-cell linear ramp, 1/2 on the edge."""
    return lambda v: np.clip((half - np.abs(v - center)) / h + 0.5, 0.0, 1.0)


@suite("measure-oracles")
def measure_oracles(size: dict, seed: int, threads: int) -> SuiteResult:
    res = SuiteResult("measure-oracles")
    k = size["sigmas"]

    # harmonic measure of the half-plane
    dom2 = GraphDomain(2)
    pole = PhasePoint([0.0, 1.0], [0.0, 0.0], 0.0)
    part = surface_grid(dom2, 0.25, n_x=16, which="E")
    max_time = size["harmonic_max_time"]
    config = SdeConfig(1e-3, max_time, size["harmonic_paths"], seed, "bisection")
    hist = estimate_measure(dom2, constant_field(np.eye(2)), pole, part, config, "E", threads=threads)
    exact = np.array([halfplane_poisson_mass(pole.X, c.center.X[0] - 0.25, c.center.X[0] + 0.25)
                      for c in part.cells])
    n = hist.n_paths
    sd = np.sqrt(exact * (1.0 - exact) / n)
    deviation = np.abs(hist.masses - exact)
    res.measured["harmonic"] = {"masses": hist.masses, "exact": exact}
    res.below(f"harmonic cube masses within {k:g} sigma", float(np.max(deviation / sd)), k)
    res.below("harmonic total variation", 0.5 * float(deviation.sum()), size["tv_tol"])
    expected = halfline_censored_fraction(1.0, max_time)
    res.below("harmonic censoring against erf", abs(hist.censored_fraction - expected),
              k * np.sqrt(expected * (1.0 - expected) / n) + 0.005)

    # caloric exit-time law of the half-line
    dom1, eye1 = GraphDomain(1), constant_field([[1.0]])
    config = SdeConfig(1e-3, 100.0, size["caloric_paths"], seed, "bisection")
    pts, elapsed, censored = simulate_exits(dom1, eye1, PhasePoint([1.0], [0.0], 0.0), config, "P", threads=threads)
    ks, pvalue = exit_time_ks(elapsed[~censored], 1.0, 100.0)
    res.measured["caloric"] = {"ks": ks, "pvalue": pvalue, "censored_fraction": float(censored.mean())}
    res.below("caloric exit-time KS distance", ks, size["ks_tol"])
    expected = halfline_censored_fraction(1.0, 100.0)
    res.below("caloric censoring against erf", abs(float(censored.mean()) - expected),
              k * np.sqrt(expected * (1.0 - expected) / censored.size) + 0.005)

    # Kolmogorov measure against grid solves of the same Dirichlet problem
    pole = PhasePoint([0.25], [0.0], 0.0)
    part = surface_grid(dom1, 0.5, n_Y=3, n_t=2, t_center=-0.5)
    config = SdeConfig(1e-3, 1.0, size["kinetic_paths"], seed, "bisection")
    hist = estimate_measure(dom1, eye1, pole, part, config, "K", threads=threads)
    box = Box((0.0, -2.0, -1.0), (4.0, 2.0, 0.0))
    steps = size["kinetic_steps"]
    hy, ht = 4.0 / steps[1], 1.0 / steps[2]
    rows = []
    for i, cube in enumerate(part.cells):
        in_y = _smoothed_indicator(cube.center.Y[0], cube.r ** 3, hy)
        in_t = _smoothed_indicator(cube.center.t, cube.r ** 2, ht)
        gf = solve_kolmogorov(dom1, eye1, box, extend_lateral(lambda y, t: in_y(y) * in_t(t), "zero"), steps)
        grid_mass = evaluate(gf, pole)
        rows.append({"cube": i, "grid": grid_mass, "mc": float(hist.masses[i]), "stderr": float(hist.stderr[i])})
    res.measured["kinetic"] = rows
    tested = [r for r in rows if r["grid"] >= 0.05]
    res.holds("some cube carries mass >= 0.05", bool(tested), len(tested))
    for r in tested:
        limit = max(size["kinetic_rel_tol"] * r["grid"], 3.0 * r["stderr"])
        res.below(f"kinetic cube {r['cube']} against grid", abs(r["mc"] - r["grid"]), limit)
    return res


@suite("fundamental-solution")
def fundamental_solution_suite(size: dict, seed: int, threads: int) -> SuiteResult:
    res = SuiteResult("fundamental-solution")
    s = 0.5
    n = size["transition_paths"]
    state = free_transition(constant_field([[1.0]]), origin(1), s, n, size["transition_dt"], seed)
    L = cholesky(kinetic_covariance(s), lower=True)
    z = solve_triangular(L, np.stack([state.X[:, 0], state.Y[:, 0]]), lower=True)
    edges = np.arange(-3.0, 4.0)
    counts, _, _ = np.histogram2d(z[0], z[1], bins=[edges, edges])
    cell = np.diff(norm.cdf(edges))
    expected = np.outer(cell, cell)
    sd = np.sqrt(expected * (1.0 - expected) / n)
    worst = float(np.max(np.abs(counts / n - expected) / sd))
    res.measured["transition_worst_sigma"] = worst
    res.below(f"whitened transition law within {size['sigmas']:g} sigma per bin", worst, size["sigmas"])

    bound = fundamental_bound_constant(1, size["group_samples"], stream(seed, 30))
    res.measured["bound_constant"] = bound
    res.finite("Gamma d^(q-2) bound constant", bound)

    times = np.geomspace(0.01, 1.0, 8)
    gamma = [fundamental_solution_const(PhasePoint([0.0], [0.0], t), origin(1)) for t in times]
    slope_s = float(linregress(np.log(times), np.log(gamma)).slope)
    slope_d = float(linregress(0.5 * np.log(times), np.log(gamma)).slope)
    res.measured["diagonal_slopes"] = {"time": slope_s, "distance": slope_d}
    res.below("diagonal decay s^-2", abs(slope_s + 2.0), 1e-9)
    res.below("diagonal decay d^(2-q)", abs(slope_d - (2 - GroupConstants(1).q)), 1e-9)
    res.holds("no mass before the pole time",
              fundamental_solution_const(origin(1), PhasePoint([0.0], [0.0], 1.0)) == 0.0)
    return res


@suite("comparability")
def comparability_suite(size: dict, seed: int, threads: int) -> SuiteResult:
    res = SuiteResult("comparability")
    dom, eye = GraphDomain(1), constant_field([[1.0]])
    config = SdeConfig(1e-3, 100.0, size["comparability_paths"], seed, "bisection")

    def family(r: float, cfg: SdeConfig):
        delta = SurfaceCube(origin(1), r)
        subs = [delta] + surface_grid(dom, r / 2, n_Y=8, n_t=4).cells
        return comparability_test(dom, eye, delta, subs, cfg)

    table = family(1.0, config)
    res.measured["table"] = table.to_json()
    top = next((r for r in table.rows if r["cube"] == 0), None)
    res.holds("top cube is resolved", top is not None)
    if top is not None:
        res.below("E, P and K agree on the top cube", top["ratio"], COMPARABILITY_LIMIT)

    s = 0.5
    scaled_config = SdeConfig(config.dt, config.max_time, config.n_paths, _next_seed(seed), config.exit_refine,
                              config.batch_size, config.adaptive, config.h_ref, config.dt_max).scaled(s)
    scaled = family(s, scaled_config)
    res.measured["scaled_table"] = scaled.to_json()
    by_cube = {r["cube"]: r for r in scaled.rows}
    worst = 0.0
    for row in table.rows:
        other = by_cube.get(row["cube"])
        if other is None:
            continue
        for kind in ("E", "P", "K"):
            se = np.hypot(row[kind] * row["rel_stderr"][kind], other[kind] * other["rel_stderr"][kind])
            gap = abs(row[kind] - other[kind])
            worst = max(worst, gap / se if se > 0 else (0.0 if gap == 0 else np.inf))
    res.below("table is dilation invariant (combined sigmas)", worst, size["sigmas"])
    return res


@suite("doubling")
def doubling_suite(size: dict, seed: int, threads: int) -> SuiteResult:
    """
    omega_K(2 cube) / omega_K(cube) for m = 1, A = I from the poles A+ at
    heights 1 and 2; the second cube family is the dilate of the first and its
    run uses an independent seed.
    """
    res = SuiteResult("doubling")
    dom, eye = GraphDomain(1), constant_field(np.eye(1))
    pole = reference_point(origin(1), ReferenceParams(0.5, 2.0, "plus"))
    families = []
    for s, run_seed in ((1.0, seed), (2.0, _next_seed(seed))):
        part = surface_grid(dom, 0.5 * s, n_Y=4, n_t=4, Y_center=[0.25 * s ** 3], t_center=-0.75 * s * s)
        config = SdeConfig(1e-3, 20.0, size["doubling_paths"], run_seed).scaled(s)
        hist = estimate_measure(dom, eye, dilate(s, pole), part, config, "K", threads=threads)
        families.append((s, part, hist))

    unresolved = set()
    for _, part, hist in families:
        unresolved |= set(doubling_test(hist, part.cells, 2.0, size["doubling_min_count"]).skipped)
    common = [i for i in range(len(families[0][1])) if i not in unresolved]
    res.holds("cubes resolved at both pole heights", bool(common), len(common))
    constants = []
    for s, part, hist in families:
        report = doubling_test(hist, [part.cells[i] for i in common], 2.0)
        res.measured[f"pole_height_{s:g}"] = {**report.to_json(), "cubes": common}
        res.holds(f"pole height {s:g}: all ratios finite and >= 1",
                  bool(report.ratios) and all(np.isfinite(r) and r >= 1.0 for r in report.ratios),
                  report.constant)
        constants.append(report.constant)
    res.below("doubling constant stable across pole heights", abs(constants[0] / constants[1] - 1.0),
              DOUBLING_AGREEMENT)
    return res


def _bq_level(hist, q: float = 2.0) -> dict:
    """B_q over level-(k-1) cubes holding enough exits, with the share of empty children."""
    groups = [g for g in dyadic_groups(hist.partition, 1) if hist.counts[g].sum() >= BQ_MIN_COUNT * len(g)]
    if not groups:
        return {"constant": float("nan"), "zero_fraction": 1.0, "tested": 0}
    report = bq_from_density(hist.masses / hist.sigma, hist.sigma, groups, q)
    zero = sum(len(f["children"]) for f in report.flagged) / sum(len(g) for g in groups)
    return {"constant": report.constant, "zero_fraction": zero, "tested": len(groups)}


def _bq_stability(coarse, fine) -> dict:
    a, b = _bq_level(coarse), _bq_level(fine)
    stable = (a["tested"] > 0 and b["tested"] > 0 and np.isfinite(a["constant"]) and np.isfinite(b["constant"])
              and max(a["zero_fraction"], b["zero_fraction"]) <= BQ_ZERO_CHILDREN
              and b["constant"] <= (1.0 + BQ_GROWTH) * a["constant"])
    return {"coarse": a, "fine": b, "stable": bool(stable)}


@suite("bq-coupling")
def bq_coupling(size: dict, seed: int, threads: int) -> SuiteResult:
    res = SuiteResult("bq-coupling")
    dom, eye = GraphDomain(1), constant_field([[1.0]])
    pole = reference_point(dom.boundary_point([], [0.0], 0.0), ReferenceParams(0.5, 2.0, "plus"))
    # exits never reach Y below the pole's Y nor t above its time; the window starts there
    Y0, t0 = pole.Y[0], pole.t
    system = build_cubes(dom, 0, 2, ([Y0, t0 - 3.0], [Y0 + 3.0, t0]))
    n = size["bq_paths"]
    config = SdeConfig(1e-3, 10.0, n, seed, "bisection")
    pts, elapsed, censored = simulate_exits(dom, eye, pole, config, "K", threads=threads)
    kernel, control = [], []
    for k in (1, 2):
        hist = histogram_from_exits(DyadicPartition(system, k), pole, "K", False, pts, elapsed, censored)
        kernel.append(hist)
        control.append(point_mass_histogram(hist.partition, pole, n, int(np.argmax(hist.counts))))
    verdict = _bq_stability(*kernel)
    control_verdict = _bq_stability(*control)
    res.measured["kernel"] = verdict
    res.measured["control"] = control_verdict
    res.holds("Kolmogorov kernel is B_2 stable", verdict["stable"], verdict["fine"]["constant"])
    res.holds("point-mass control fails B_2 stability", not control_verdict["stable"])

    box = Box((0.0, -1.5, 0.0), (1.5, 1.5, 1.0))
    data = [
        lambda y, t: 1.0 + 0.0 * y,
        lambda y, t: 1.0 + 0.5 * np.sin(np.pi * y),
        lambda y, t: t + 0.0 * y,
        lambda y, t: np.exp(-4.0 * y * y) + 0.0 * t,
        lambda y, t: (1.0 + y * y) * (1.0 - 0.5 * t),
    ]
    battery, bounds = [], []
    ys, ts = np.linspace(-0.5, 0.5, 5), np.linspace(0.4, 0.9, 6)
    boundary = np.array([[0.0, y, t] for y in ys for t in ts])
    for g in data:
        gf = solve_kolmogorov(dom, eye, box, extend_lateral(g, "zero"), size["battery_steps"])
        battery.append((gf, lambda p, g=g: g(p[:, 1], p[:, 2])))
        yy, tt = np.meshgrid(gf.axes[1], gf.axes[2], indexing="ij")
        face_max = float(np.max(np.abs(g(yy, tt))))
        rms = float(np.sqrt(np.mean(g(boundary[:, 1], boundary[:, 2]) ** 2)))
        bounds.append(face_max / rms)
    ratios = solvability_ratios(dom, battery, boundary, np.ones(len(boundary)), ConeParams(eta=2.0, delta=0.2))
    res.measured["solvability"] = {**ratios, "bounds": bounds}
    res.finite("one solvability constant for the battery", ratios["constant"])
    for i, (ratio, bound) in enumerate(zip(ratios["ratios"], bounds)):
        res.below(f"datum {i}: ||N(u)|| / ||f|| within the maximum principle", ratio, bound * (1.0 + 1e-9))
    return res


# Analysis primitives and determinism ----------------------------------------------

@suite("maximal")
def maximal_suite(size: dict, seed: int, threads: int) -> SuiteResult:
    res = SuiteResult("maximal")
    dom = GraphDomain(1)
    base = dom.boundary_point([], [0.0], 0.0)

    value = nt_max(lambda p: np.full(p.shape[0], 3.0), dom, base, ConeParams(eta=2.0), 1024).value
    res.below("N of a constant is its modulus", abs(value - 3.0), GROUP_TOL)
    value = nt_max(lambda p: dom.height(p[:, :1]), dom, base, ConeParams(eta=2.0, delta=0.3), 1024).value
    res.below("truncated N of the height stays below delta", value, 0.3)

    etas = (2.0, 3.0, 4.0)
    shared = np.concatenate([cone_samples(dom, base, ConeParams(eta=e), 1024) for e in etas])
    wave = lambda p: np.sin(5.0 * p[:, 1]) + p[:, 2]  # noqa: E731
    values = [nt_max(wave, dom, base, ConeParams(eta=e), samples=shared).value for e in etas]
    res.holds("N is monotone in the aperture", all(a <= b for a, b in zip(values, values[1:])), values)
    res.holds("shared samples nest across apertures",
              bool(np.all(in_cone(dom, base, shared, ConeParams(eta=2.0)) <=
                          in_cone(dom, base, shared, ConeParams(eta=4.0)))))

    part = surface_grid(dom, 0.5, n_Y=4, n_t=4)
    spike = np.zeros(len(part))
    spike[5] = 1.0
    res.below("maximal function of an indicator at its cube", abs(hl_max(spike, part.cells[5].center, part) - 1.0),
              GROUP_TOL)
    flat = hl_max(np.full(len(part), 2.0), part.cells[10].center, part)
    res.below("maximal function of a constant", abs(flat - 2.0), GROUP_TOL)

    sigma = part.sigmas()
    group = [list(range(len(part)))]
    res.below("B_2 of a uniform density", abs(bq_from_density(np.ones(len(part)), sigma, group, 2.0).constant - 1.0),
              GROUP_TOL)
    density = stream(seed, 40).uniform(0.1, 2.0, len(part))
    gammas = [bq_from_density(density, sigma, group, q).constant for q in (1.5, 2.0, 3.0)]
    res.holds("B_q is monotone in q", all(a <= b + GROUP_TOL for a, b in zip(gammas, gammas[1:])), gammas)
    return res


@suite("determinism")
def determinism_suite(size: dict, seed: int, threads: int) -> SuiteResult:
    res = SuiteResult("determinism")
    dom, eye = GraphDomain(1), constant_field([[1.0]])
    pole = PhasePoint([0.5], [0.0], 0.0)
    config = SdeConfig(1e-3, 2.0, size["determinism_paths"], seed, "none", batch_size=256)
    serial = simulate_exits(dom, eye, pole, config, "K", threads=1)
    pooled = simulate_exits(dom, eye, pole, config, "K", threads=max(threads, 4))
    res.holds("exits identical across worker counts", all(np.array_equal(a, b) for a, b in zip(serial, pooled)))

    part = surface_grid(dom, 0.5, n_Y=4, n_t=4, t_center=-1.0)
    docs = [json.dumps(plain(histogram_from_exits(part, pole, "K", False, *run).to_json()), sort_keys=True)
            for run in (serial, pooled)]
    res.holds("histogram JSON byte-identical", docs[0] == docs[1])
    return res


# Service ---------------------------------------------------------------------------

class VerificationService:
    def run(self, name: str, scale: str, seed: int, threads: int) -> Report:
        if scale not in SIZES:
            raise ValidationFailure(f"scale must be one of {SCALES}, got {scale!r}")
        if name != "all" and name not in SUITES:
            raise ValidationFailure(f"unknown suite {name!r}; choose from {['all', *SUITES]}")
        names = list(SUITES) if name == "all" else [name]
        size = SIZES[scale]
        results, rows = {}, []
        for suite_name in names:
            logger.info(f"Running suite {suite_name} at {scale} scale")
            result = SUITES[suite_name](size, seed, threads)
            failed = [c.name for c in result.checks if not c.passed]
            if failed:
                logger.warning(f"Suite {suite_name} failed {len(failed)} checks: {failed}")
            else:
                logger.info(f"Suite {suite_name} passed {len(result.checks)} checks")
            results[suite_name] = {"passed": result.passed, "measured": result.measured,
                                   "failed": failed}
            rows += [c.row(suite_name) for c in result.checks]
        passed = all(r["passed"] for r in results.values())
        payload = {"scale": scale, "suites": results, "passed_suites": sum(r["passed"] for r in results.values()),
                   "total_suites": len(results)}
        return Report(f"verify-{name}", payload, {"checks": rows}, passed=passed)


verification_service = VerificationService()
