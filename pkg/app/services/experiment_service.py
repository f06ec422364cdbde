import logging

import numpy as np

from app.core.analyze import bq_constant, doubling_test
from app.core.domain import CoefficientField, GraphDomain, dini_integral, dini_integral_all
from app.core.dyadic import build_cubes, whitney
from app.core.geometry import (GroupConstants, ball_volume, compose_arrays, dilate_arrays, distance_arrays,
                               inverse_arrays, norm_arrays, pseudo_triangle_constant, quasi_triangle_constant,
                               random_points)
from app.core.grid import Box, GridFunction, evaluate, solve_elliptic, solve_kolmogorov, solve_parabolic
from app.core.homogenize import SWEEP_DATA, EffectiveTensor, cell_means, effective_matrix, epsilon_sweep, solve_cell
from app.core.rng import stream
from app.core.simulate import DyadicPartition, SurfacePartition, estimate_measure, kernel_ratio, surface_grid
from app.exceptions import ValidationFailure
from app.schemas import (CellConfig, DyadicSpec, GeomCheckConfig, HomogenizeConfig, MeasureConfig, PartitionSpec,
                         SolveConfig, WhitneySpec)
from app.services.report_service import Report

logger = logging.getLogger(__name__)

# Named boundary/initial data. The flag marks exact solutions for A = I.
ELLIPTIC_DATA = {
    "x_m": (lambda X: X[:, -1], True),
    "x1x2": (lambda X: X[:, 0] * X[:, 1], True),
    "bump": (lambda X: np.exp(-np.sum(X * X, axis=1)), False),
}
PARABOLIC_DATA = {
    "x": (lambda x, t: x, True),
    "x2_plus_2t": (lambda x, t: x * x + 2.0 * t, True),
    "exp_x_plus_t": (lambda x, t: np.exp(x + t), True),
}
KOLMOGOROV_DATA = {
    "x": (lambda x, y, t: x, True),
    "y_plus_tx": (lambda x, y, t: y + t * x, True),
    "x2_plus_2t": (lambda x, y, t: x * x + 2.0 * t, True),
    "exp_kinetic": (lambda x, y, t: np.exp(y + t * x + t ** 3 / 3.0), True),
    "decay": (SWEEP_DATA["decay"], False),
    "kinetic": (SWEEP_DATA["kinetic"], False),
}
DATA = {"elliptic": ELLIPTIC_DATA, "parabolic": PARABOLIC_DATA, "kolmogorov": KOLMOGOROV_DATA}

# Stream indices of the independent random tasks of geom-check
_GROUP_STREAM, _TRIANGLE_STREAM, _BALL_STREAM, _CUBE_STREAM, _WHITNEY_STREAM = 0, 1, 2, 16, 17


def _rel_err(a, b) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def group_errors(m: int, n: int, rng: np.random.Generator, scale: float = 10.0) -> dict:
    """Largest componentwise deviations of the group, dilation and distance identities."""
    a, b, c = (random_points(rng, m, n, scale) for _ in range(3))
    zero = np.zeros((n, 2 * m + 1))
    aX, aY, at = a[:, :m], a[:, m:2 * m], a[:, 2 * m]
    bX, bY, bt = b[:, :m], b[:, m:2 * m], b[:, 2 * m]
    inverse_law = np.concatenate([aX - bX, aY - bY + (at - bt)[:, None] * bX, (at - bt)[:, None]], axis=1)
    out = {
        "associativity": _rel_err(compose_arrays(compose_arrays(a, b, m), c, m),
                                  compose_arrays(a, compose_arrays(b, c, m), m)),
        "identity": max(_rel_err(compose_arrays(a, zero, m), a), _rel_err(compose_arrays(zero, a, m), a)),
        "inverse": max(_rel_err(compose_arrays(a, inverse_arrays(a, m), m), zero),
                       _rel_err(compose_arrays(inverse_arrays(a, m), a, m), zero)),
        "involution": _rel_err(inverse_arrays(inverse_arrays(a, m), m), a),
        "inverse_law": _rel_err(compose_arrays(inverse_arrays(b, m), a, m), inverse_law),
        "symmetry": _rel_err(distance_arrays(a, b, m), distance_arrays(b, a, m)),
        "self_distance": float(np.max(distance_arrays(a, a, m))),
    }
    norm_h, dist_h, dil = 0.0, 0.0, 0.0
    for r in (0.25, 0.5, 2.0, 3.0):
        ra, rb = dilate_arrays(r, a, m), dilate_arrays(r, b, m)
        norm_h = max(norm_h, _rel_err(norm_arrays(ra, m), r * norm_arrays(a, m)))
        dist_h = max(dist_h, _rel_err(distance_arrays(ra, rb, m), r * distance_arrays(a, b, m)))
        dil = max(dil, _rel_err(dilate_arrays(r, dilate_arrays(1.5, a, m), m), dilate_arrays(1.5 * r, a, m)))
    out.update(norm_homogeneity=norm_h, distance_homogeneity=dist_h, dilation_composition=dil)
    return out


def ball_scaling(m: int, radii, n: int, seed: int) -> list[dict]:
    """Ball volumes against the r^q law. Every radius reuses one stream, so the ratios share their noise."""
    q = GroupConstants(m).q
    rows = []
    for r in radii:
        vol, err = ball_volume(m, r, n, stream(seed, _BALL_STREAM))
        rows.append({"r": r, "volume": vol, "stderr": err})
    v0, r0 = rows[0]["volume"], rows[0]["r"]
    for row in rows:
        expected = (row["r"] / r0) ** q
        row["ratio"] = row["volume"] / v0
        row["expected_ratio"] = expected
        row["rel_error"] = abs(row["ratio"] / expected - 1.0)
    return rows


def cube_properties(dom: GraphDomain, spec: DyadicSpec, seed: int, n_points: int = 4096) -> dict:
    system = build_cubes(dom, spec.k_min, spec.k_max, (spec.window_lo, spec.window_hi))
    rng = stream(seed, _CUBE_STREAM)
    pts = system.random_boundary_points(n_points, rng)
    return {
        "counts": {k: system.count(k) for k in system.levels()},
        "nesting_violations": system.nesting_violations(),
        "partition_failures": system.partition_failures(pts),
        "diameter": system.diameter_constant(rng),
        "inner_ball": system.inner_ball_constant(rng),
        "thin_boundary": system.thin_boundary_fit(rng),
    }


def whitney_properties(dom: GraphDomain, spec: WhitneySpec, seed: int) -> dict:
    x_lo = spec.x_lo or [-1.0] * (dom.m - 1)
    x_hi = spec.x_hi or [1.0] * (dom.m - 1)
    decomposition = whitney(dom, (x_lo, x_hi, spec.h_top), spec.depth, spec.scheme)
    cubes = decomposition.cubes()
    bounds = np.array([c.distance_bounds(dom) for c in cubes])
    ratios = bounds / np.array([c.side for c in cubes])[:, None]
    return {
        "scheme": spec.scheme,
        "cubes": len(cubes),
        "h_bottom": decomposition.h_bottom,
        "coverage": decomposition.coverage(spec.samples, stream(seed, _WHITNEY_STREAM)),
        "expected_coverage": 1.0 - decomposition.h_bottom / spec.h_top,
        "distance_over_side": [float(ratios.min()), float(ratios.max())],
        "dilation": decomposition.dilation,
        "dilates_inside": all(c.dilate_inside(decomposition.dilation) for c in cubes),
    }


def build_partition(dom: GraphDomain, spec: PartitionSpec, kind: str):
    if spec.type == "surface_grid":
        return surface_grid(dom, spec.r, spec.n_x, spec.n_Y, spec.n_t, spec.x_center, spec.Y_center,
                            spec.t_center, spec.which or kind)
    system = build_cubes(dom, spec.cubes.k_min, spec.cubes.k_max, (spec.cubes.window_lo, spec.cubes.window_hi))
    return DyadicPartition(system, system.k_max if spec.level is None else spec.level)


def lookup_data(operator: str, name: str):
    table = DATA[operator]
    if name not in table:
        raise ValidationFailure(f"unknown {operator} data {name!r}; choose from {sorted(table)}")
    return table[name]


class ExperimentService:
    def __init__(self):
        # effective tensors keyed by field fingerprint, grid and basis
        self._cache = {}

    def _get_from_cache(self, key):
        return self._cache.get(key)

    def _set_to_cache(self, key, data):
        self._cache[key] = data

    def clear_cache(self):
        logger.info("Clearing effective tensor cache")
        self._cache = {}

    def effective_tensor(self, fld: CoefficientField, grid: int | None = None, basis=None) -> EffectiveTensor:
        key = (fld.fingerprint(), grid, None if basis is None else np.round(basis, 14).tobytes())
        cached = self._get_from_cache(key)
        if cached is not None:
            logger.info("Effective tensor served from cache")
            return cached
        tensor = effective_matrix(fld, grid, basis)
        self._set_to_cache(key, tensor)
        return tensor

    # geom-check
    def geom_check(self, cfg: GeomCheckConfig, seed: int) -> Report:
        m = cfg.m
        payload = {
            "m": m,
            "q": GroupConstants(m).q,
            "group_errors": group_errors(m, cfg.n_samples, stream(seed, _GROUP_STREAM)),
            "pseudo_triangle_constant": pseudo_triangle_constant(m, cfg.triangle_samples,
                                                                 stream(seed, _TRIANGLE_STREAM)),
            "quasi_triangle_constant": quasi_triangle_constant(m, cfg.triangle_samples,
                                                               stream(seed, _TRIANGLE_STREAM + 1)),
        }
        tables = {"balls": ball_scaling(m, cfg.radii, cfg.ball_samples, seed)}
        if cfg.domain is not None:
            dom = cfg.domain.build()
            payload["lipschitz"] = {"M": dom.lipschitz_M,
                                    "sampled": dom.check_lipschitz(cfg.n_samples, stream(seed, _CUBE_STREAM + 1))}
            if cfg.cubes is not None:
                payload["cubes"] = cube_properties(dom, cfg.cubes, seed)
            if cfg.whitney is not None:
                payload["whitney"] = whitney_properties(dom, cfg.whitney, seed)
        logger.info(f"Geometry checks for m={m} done")
        return Report("geom-check", payload, tables)

    # cell
    def cell(self, cfg: CellConfig) -> Report:
        fld = cfg.field.build()
        tensor = self.effective_tensor(fld, cfg.grid, cfg.basis)
        payload = {
            "m": fld.m,
            "matrix": tensor.matrix,
            "eigenvalues": tensor.eigenvalues,
            "kappa": fld.kappa,
            "grid": tensor.n,
            "means": cell_means(fld, tensor.n),
            "dini_integral": dini_integral(fld),
            "dini_integral_all": dini_integral_all(fld),
        }
        tables = {"matrix": [{"i": i, "j": j, "value": tensor.matrix[i, j]}
                             for i in range(fld.m) for j in range(fld.m)]}
        if cfg.correctors:
            rows = []
            for i in range(fld.m):
                corrector = solve_cell(fld, np.eye(fld.m)[i], tensor.n)
                flat = corrector.chi.ravel()
                nodes = np.stack(np.meshgrid(*([corrector.nodes] * fld.m), indexing="ij"), -1).reshape(-1, fld.m)
                rows += [{"direction": i, **{f"x{d + 1}": X[d] for d in range(fld.m)}, "chi": c}
                         for X, c in zip(nodes, flat)]
                payload.setdefault("corrector_residuals", []).append(corrector.residual)
            tables["correctors"] = rows
        return Report("cell", payload, tables)

    # measure
    def measure(self, cfg: MeasureConfig, seed: int, threads: int) -> Report:
        dom, fld = cfg.domain.build(), cfg.field.build()
        pole = cfg.pole.build() if cfg.pole is not None else cfg.reference.build(dom)
        partition = build_partition(dom, cfg.partition, cfg.kind)
        hist = estimate_measure(dom, fld, pole, partition, cfg.sde.build(seed), cfg.kind, cfg.adjoint, threads)
        payload = {key: value for key, value in hist.to_json().items() if key != "cells"}
        payload.update(censored_fraction=hist.censored_fraction, outside_fraction=hist.outside_fraction,
                       zero_cells=hist.zero_cells)
        rows = hist.rows()
        for i, row in enumerate(rows):
            ratio = kernel_ratio(hist, i)
            row.update(kernel=ratio.value, kernel_stderr=ratio.stderr)
        tables = {"cells": rows}
        if cfg.doubling_factor is not None:
            if not isinstance(partition, SurfacePartition):
                raise ValidationFailure("doubling ratios need a surface_grid partition")
            payload["doubling"] = doubling_test(hist, partition.cells, cfg.doubling_factor).to_json()
        if cfg.bq is not None:
            groups = None if isinstance(partition, DyadicPartition) else [list(range(len(partition)))]
            payload["bq"] = bq_constant(hist, cfg.bq.q, groups, cfg.bq.depth).to_json()
        return Report("measure", payload, tables)

    # solve
    def solve(self, cfg: SolveConfig) -> Report:
        dom, fld = cfg.domain.build(), cfg.field.build()
        box = Box(cfg.box.lo, cfg.box.hi)
        data, exact = lookup_data(cfg.operator, cfg.data)
        if cfg.data == "x1x2" and dom.m != 2:
            raise ValidationFailure("data x1x2 needs m = 2")
        if cfg.operator == "elliptic":
            gf = solve_elliptic(dom, fld, box, data, cfg.h)
        elif cfg.operator == "parabolic":
            gf = solve_parabolic(dom, fld, box, data, tuple(cfg.steps), cfg.theta)
        else:
            gf = solve_kolmogorov(dom, fld, box, data, tuple(cfg.steps), cfg.eps, cfg.theta)
        payload = {
            "operator": cfg.operator,
            "shape": gf.shape,
            "spacing": gf.spacing,
            "names": gf.names,
            "residual": gf.report.residual,
            "iterations": gf.report.iterations,
            "max_principle_violation": gf.report.max_principle_violation,
            "max_principle_ok": gf.report.max_principle_ok,
        }
        if exact and fld.is_identity and cfg.eps is None:
            payload["max_error"] = solution_error(gf, data)
        probes = [{"point": p, "value": evaluate(gf, p)} for p in cfg.probes]
        slices = {f"slice_{s.axis}_{s.index}": (gf, s.axis, s.index) for s in cfg.slices}
        grids = {"grid": gf} if cfg.export_grid else {}
        return Report("solve", payload, {"probes": probes} if probes else {}, grids, slices)

    # homogenize
    def homogenize(self, cfg: HomogenizeConfig) -> Report:
        dom, fld = cfg.domain.build(), cfg.field.build()
        box = Box(cfg.box.lo, cfg.box.hi)
        table = epsilon_sweep(dom, fld, cfg.data, box, cfg.eps, (cfg.compact_lo, cfg.compact_hi),
                              cfg.negative_control, cfg.grid)
        payload = table.to_json()
        rows = payload.pop("rows")
        if table.control_errors:
            payload["control_factor"] = table.control_errors[-1] / table.errors[-1] if table.errors[-1] else None
        return Report("homogenize", payload, {"sweep": rows})


def solution_error(gf: GridFunction, exact) -> float:
    """Max nodal deviation from a closed-form solution (axes passed in grid order)."""
    nodes = gf.nodes()
    if gf.names in (("x",), ("x1", "x2")):
        ref = exact(nodes)
    else:
        ref = exact(*nodes.T)
    return float(np.max(np.abs(gf.values.ravel() - np.asarray(ref, dtype=np.float64).ravel())))


experiment_service = ExperimentService()
