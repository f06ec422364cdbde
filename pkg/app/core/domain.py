"""
Lipschitz graph domains, surface measures and coefficient fields.

The domain is Omega x R^m x R with Omega = {x_m > psi(x)}, x in R^(m-1).
Coefficient fields are symmetric matrix fields A(X) drawn from closed-form
families (constant, trigonometric polynomial, laminate), so values, the
divergence-form drift b_j = sum_i d_i a_ij, and periodicity are exact.
"""
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import qmc

from app.config import settings
from app.core.geometry import PhasePoint, compose_arrays, inverse_arrays
from app.exceptions import DimensionMismatch, NumericalFailure, ValidationFailure

logger = logging.getLogger(__name__)

SIGMA_KINDS = ("E", "P", "K")
DOMAIN_FAMILIES = ("flat", "linear", "sine", "smooth_sawtooth")
FIELD_FAMILIES = ("constant", "trig_polynomial", "laminate")


# Graph domains ------------------------------------------------------------------

@dataclass(frozen=True)
class GraphDomain:
    m: int
    family: str = "flat"
    offset: float = 0.0
    # linear: slope vector; sine / smooth_sawtooth: amplitude, frequency, axis
    slope: tuple = ()
    amplitude: float = 0.0
    frequency: float = 1.0
    axis: int = 0
    smoothing: float = 0.1

    def __post_init__(self):
        if self.m < 1:
            raise ValidationFailure(f"m must be >= 1, got {self.m}")
        if self.family not in DOMAIN_FAMILIES:
            raise ValidationFailure(f"unknown domain family {self.family!r}")
        if self.m == 1 and self.family != "flat":
            # psi is a function of zero variables
            raise ValidationFailure("for m=1 the defining function is a constant; use family 'flat'")
        if self.family == "linear" and len(self.slope) != self.m - 1:
            raise DimensionMismatch(f"linear slope needs {self.m - 1} entries, got {len(self.slope)}")
        if self.family in ("sine", "smooth_sawtooth") and not 0 <= self.axis < self.m - 1:
            raise ValidationFailure(f"axis {self.axis} out of range for m={self.m}")

    @property
    def lipschitz_M(self) -> float:
        if self.family == "flat":
            return 0.0
        if self.family == "linear":
            return float(np.linalg.norm(self.slope))
        if self.family == "sine":
            return float(2.0 * np.pi * abs(self.amplitude) * self.frequency)
        return float(np.pi * abs(self.amplitude) * self.frequency)

    def _as_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.m == 1:
            return np.zeros((x.shape[0] if x.ndim == 2 else 1, 0))
        return x.reshape(-1, self.m - 1)

    def psi(self, x) -> np.ndarray:
        x = self._as_x(x)
        if self.family == "flat":
            return np.full(x.shape[0], self.offset)
        if self.family == "linear":
            return self.offset + x @ np.asarray(self.slope, dtype=np.float64)
        u = x[:, self.axis]
        if self.family == "sine":
            return self.offset + self.amplitude * np.sin(2.0 * np.pi * self.frequency * u)
        s = self.smoothing
        arg = np.pi * self.frequency * u
        return self.offset + self.amplitude * (np.sqrt(np.sin(arg) ** 2 + s * s) - s)

    def grad_psi(self, x) -> np.ndarray:
        x = self._as_x(x)
        g = np.zeros_like(x)
        if self.family == "linear":
            g[:] = np.asarray(self.slope, dtype=np.float64)
        elif self.family == "sine":
            u = x[:, self.axis]
            w = 2.0 * np.pi * self.frequency
            g[:, self.axis] = self.amplitude * w * np.cos(w * u)
        elif self.family == "smooth_sawtooth":
            arg = np.pi * self.frequency * x[:, self.axis]
            sn, cs = np.sin(arg), np.cos(arg)
            g[:, self.axis] = (self.amplitude * np.pi * self.frequency * sn * cs
                               / np.sqrt(sn * sn + self.smoothing ** 2))
        return g

    def height(self, X) -> np.ndarray:
        """x_m - psi(x) for X of shape (..., m)."""
        X = np.asarray(X, dtype=np.float64)
        lead = X.shape[:-1]
        flat = X.reshape(-1, self.m)
        return (flat[:, -1] - self.psi(flat[:, :-1])).reshape(lead)

    def contains_arrays(self, pts) -> np.ndarray:
        return self.height(np.asarray(pts)[..., :self.m]) > 0.0

    def boundary_point(self, x, Y, t: float) -> PhasePoint:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))[: self.m - 1]
        X = np.concatenate([x, self.psi(x)])
        return PhasePoint(X, Y, t)

    def check_lipschitz(self, n_pairs: int, rng: np.random.Generator, scale: float = 2.0) -> float:
        """Largest sampled |psi(x) - psi(x')| / |x - x'|; 0 for m = 1."""
        if self.m == 1:
            return 0.0
        a = rng.uniform(-scale, scale, size=(n_pairs, self.m - 1))
        b = rng.uniform(-scale, scale, size=(n_pairs, self.m - 1))
        dist = np.linalg.norm(a - b, axis=1)
        keep = dist > 1e-12
        return float(np.max(np.abs(self.psi(a) - self.psi(b))[keep] / dist[keep]))


def contains(dom: GraphDomain, p: PhasePoint) -> bool:
    if p.m != dom.m:
        raise DimensionMismatch(f"point has m={p.m}, domain has m={dom.m}")
    return bool(dom.height(p.X[None, :])[0] > 0.0)


def surface_density(dom: GraphDomain, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    g = dom.grad_psi(x)
    dens = np.sqrt(1.0 + np.sum(g * g, axis=1))
    return float(dens[0]) if dens.size == 1 and x.ndim <= 1 else dens


# Surface cubes --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SurfaceCube:
    center: PhasePoint
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValidationFailure(f"cube radius must be positive, got {self.r}")

    @property
    def m(self) -> int:
        return self.center.m

    def validate_on(self, dom: GraphDomain, tol: float = 1e-12):
        gap = abs(dom.height(self.center.X[None, :])[0])
        if gap > tol * max(1.0, abs(self.center.X[-1])):
            raise ValidationFailure(f"cube centre is off the boundary by {gap:.3e}")
        return self

    def contains_arrays(self, pts, which: str = "K") -> np.ndarray:
        """Membership of boundary points (rows [X, Y, t]) in the cube."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        m = self.m
        c = self.center.as_array()
        rel = compose_arrays(inverse_arrays(c, m)[None, :], pts, m)
        inside = np.all(np.abs(rel[:, : m - 1]) < self.r, axis=1)
        if which in ("P", "K"):
            inside &= np.abs(rel[:, 2 * m]) < self.r ** 2
        if which == "K":
            inside &= np.all(np.abs(rel[:, m:2 * m]) < self.r ** 3, axis=1)
        return inside

    def dilated(self, s: float) -> "SurfaceCube":
        """Same centre, radius multiplied by s (the gamma-dilate of a cube)."""
        return SurfaceCube(self.center, self.r * s)


_GL_NODES = 32


def sigma_E_box(dom: GraphDomain, lo, hi) -> float:
    """Integral of the surface density over the x-box [lo, hi] (a point for m = 1)."""
    d = dom.m - 1
    if d == 0:
        return 1.0
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    nodes, weights = np.polynomial.legendre.leggauss(_GL_NODES)
    grids = [0.5 * (hi[i] - lo[i]) * nodes + 0.5 * (hi[i] + lo[i]) for i in range(d)]
    wgrids = [0.5 * (hi[i] - lo[i]) * weights for i in range(d)]
    pts = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, d)
    w = np.prod(np.stack(np.meshgrid(*wgrids, indexing="ij"), axis=-1).reshape(-1, d), axis=1)
    dens = surface_density(dom, pts)
    if not np.all(np.isfinite(dens)):
        raise NumericalFailure("non-finite surface density in quadrature")
    return float(np.sum(w * np.atleast_1d(dens)))


def sigma_of_cube(dom: GraphDomain, cube: SurfaceCube, which: str = "K") -> float:
    if which not in SIGMA_KINDS:
        raise ValidationFailure(f"unknown surface measure {which!r}")
    m = dom.m
    x0 = cube.center.X[: m - 1]
    sigma = sigma_E_box(dom, x0 - cube.r, x0 + cube.r)
    if which in ("P", "K"):
        sigma *= 2.0 * cube.r ** 2
    if which == "K":
        sigma *= (2.0 * cube.r ** 3) ** m
    return sigma


# Coefficient fields ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TrigTerm:
    """matrix * sin(2 pi freq . X + phase)"""
    matrix: np.ndarray
    freq: np.ndarray
    phase: float = 0.0


@dataclass(frozen=True, eq=False)
class CoefficientField:
    m: int
    base: np.ndarray
    terms: tuple = ()
    family: str = "constant"
    kappa: float | None = None
    period: float = 1.0
    blend_radius: float | None = None
    blend_width: float = 1.0
    laminate_axis: int | None = None
    _bounds: tuple = field(default=(0.0, 0.0), repr=False)

    def __post_init__(self):
        if self.family not in FIELD_FAMILIES:
            raise ValidationFailure(f"unknown coefficient family {self.family!r}")
        base = np.atleast_2d(np.asarray(self.base, dtype=np.float64))
        if base.shape != (self.m, self.m):
            raise DimensionMismatch(f"base matrix must be {self.m}x{self.m}, got {base.shape}")
        if not np.allclose(base, base.T, atol=1e-14):
            raise ValidationFailure("base matrix must be symmetric")
        terms = []
        for term in self.terms:
            B = np.atleast_2d(np.asarray(term.matrix, dtype=np.float64))
            f = np.atleast_1d(np.asarray(term.freq, dtype=np.float64))
            if B.shape != (self.m, self.m) or f.shape != (self.m,):
                raise DimensionMismatch("trig term shapes do not match m")
            if not np.allclose(B, B.T, atol=1e-14):
                raise ValidationFailure("trig term matrices must be symmetric")
            terms.append(TrigTerm(B, f, float(term.phase)))
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "terms", tuple(terms))

        # Weyl bound on the spectrum of A0 + sum B_k s_k, |s_k| <= 1
        ev = np.linalg.eigvalsh(base)
        spread = sum(np.linalg.norm(t.matrix, 2) for t in terms)
        lo, hi = ev[0] - spread, ev[-1] + spread
        if self.blend_radius is not None:
            lo, hi = min(lo, 1.0), max(hi, 1.0)
        if lo <= 0:
            raise ValidationFailure(f"coefficient field is not uniformly elliptic (eigenvalue bound {lo:.3g})")
        bound_kappa = max(hi, 1.0 / lo, 1.0)
        if self.kappa is None:
            object.__setattr__(self, "kappa", float(bound_kappa))
        elif self.kappa < bound_kappa - 1e-12:
            raise ValidationFailure(f"kappa={self.kappa} is smaller than the field's bound {bound_kappa:.6g}")
        object.__setattr__(self, "_bounds", (float(lo), float(hi)))

    # Structure flags

    @property
    def periodic_lattice(self) -> bool:
        """A(X + period Z) = A(X) for Z in Z^m."""
        if self.blend_radius is not None:
            return False
        for t in self.terms:
            k = t.freq * self.period
            if not np.allclose(k, np.round(k), atol=1e-12):
                return False
        return True

    @property
    def xm_independent(self) -> bool:
        if self.blend_radius is not None:
            return False
        return all(t.freq[-1] == 0.0 for t in self.terms)

    @property
    def is_constant(self) -> bool:
        return not self.terms and self.blend_radius is None

    @property
    def is_identity(self) -> bool:
        return self.is_constant and np.allclose(self.base, np.eye(self.m), atol=1e-15)

    # Evaluation

    def _blend(self, X):
        """Cut-off chi(|X|) and its gradient; chi = 1 inside blend_radius."""
        s = np.linalg.norm(X, axis=-1)
        u = np.clip((s - self.blend_radius) / self.blend_width, 0.0, 1.0)
        chi = 1.0 - (3.0 * u ** 2 - 2.0 * u ** 3)
        dchi = -(6.0 * u - 6.0 * u ** 2) / self.blend_width
        with np.errstate(invalid="ignore", divide="ignore"):
            grad = np.where(s[..., None] > 0, dchi[..., None] * X / s[..., None], 0.0)
        return chi, grad

    def eval(self, X) -> np.ndarray:
        """A(X) for X of shape (..., m); returns (..., m, m)."""
        X = np.asarray(X, dtype=np.float64)
        A = np.broadcast_to(self.base, X.shape[:-1] + (self.m, self.m)).copy()
        for t in self.terms:
            s = np.sin(2.0 * np.pi * (X @ t.freq) + t.phase)
            A += s[..., None, None] * t.matrix
        if self.blend_radius is not None:
            chi, _ = self._blend(X)
            A = chi[..., None, None] * A + (1.0 - chi)[..., None, None] * np.eye(self.m)
        return A

    def drift(self, X) -> np.ndarray:
        """b_j = sum_i d_i a_ij, shape (..., m)."""
        X = np.asarray(X, dtype=np.float64)
        b = np.zeros(X.shape)
        for t in self.terms:
            c = np.cos(2.0 * np.pi * (X @ t.freq) + t.phase)
            b += 2.0 * np.pi * c[..., None] * (t.matrix @ t.freq)
        if self.blend_radius is not None:
            chi, grad = self._blend(X)
            A = self.eval_unblended(X)
            b = chi[..., None] * b + np.einsum("...ij,...i->...j", A - np.eye(self.m), grad)
        return b

    def eval_unblended(self, X) -> np.ndarray:
        return replace(self, blend_radius=None, kappa=None).eval(X)

    def check_ellipticity(self, n: int, rng: np.random.Generator, scale: float = 2.0) -> tuple[float, float]:
        """Min and max of xi^T A(X) xi / |xi|^2 over sampled (X, xi)."""
        X = rng.uniform(-scale, scale, size=(n, self.m))
        xi = rng.standard_normal(size=(n, self.m))
        A = self.eval(X)
        rq = np.einsum("ni,nij,nj->n", xi, A, xi) / np.sum(xi * xi, axis=1)
        return float(rq.min()), float(rq.max())

    def rescaled(self, eps: float) -> "CoefficientField":
        """A^eps(X) = A(X / eps)."""
        if not eps > 0:
            raise ValidationFailure(f"eps must be positive, got {eps}")
        terms = tuple(TrigTerm(t.matrix, t.freq / eps, t.phase) for t in self.terms)
        blend_radius = None if self.blend_radius is None else self.blend_radius * eps
        return replace(self, terms=terms, period=self.period * eps, blend_radius=blend_radius,
                       blend_width=self.blend_width * eps)

    def fingerprint(self) -> str:
        parts = [self.family, str(self.m), np.round(self.base, 14).tobytes().hex()]
        for t in self.terms:
            parts += [np.round(t.matrix, 14).tobytes().hex(), np.round(t.freq, 14).tobytes().hex(), repr(t.phase)]
        parts += [repr(self.period), repr(self.blend_radius), repr(self.blend_width)]
        return "|".join(parts)


def constant_field(A, kappa: float | None = None) -> CoefficientField:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    return CoefficientField(A.shape[0], A, family="constant", kappa=kappa)


def trig_field(base, terms, kappa: float | None = None, blend_radius: float | None = None,
               blend_width: float = 1.0) -> CoefficientField:
    base = np.atleast_2d(np.asarray(base, dtype=np.float64))
    terms = tuple(t if isinstance(t, TrigTerm) else TrigTerm(*t) for t in terms)
    return CoefficientField(base.shape[0], base, terms, family="trig_polynomial", kappa=kappa,
                            blend_radius=blend_radius, blend_width=blend_width)


def laminate_field(means, amplitudes, axis: int = 0, frequency: int = 1, phases=None,
                   kappa: float | None = None) -> CoefficientField:
    """A = diag(mean_i + amp_i sin(2 pi frequency x_axis + phase_i))."""
    means = np.asarray(means, dtype=np.float64)
    amplitudes = np.asarray(amplitudes, dtype=np.float64)
    m = means.size
    phases = np.zeros(m) if phases is None else np.asarray(phases, dtype=np.float64)
    freq = np.zeros(m)
    freq[axis] = frequency
    terms = []
    for i in range(m):
        if amplitudes[i] != 0.0:
            B = np.zeros((m, m))
            B[i, i] = amplitudes[i]
            terms.append(TrigTerm(B, freq.copy(), phases[i]))
    return CoefficientField(m, np.diag(means), tuple(terms), family="laminate", kappa=kappa,
                            laminate_axis=axis)


def coeff_eval(fld: CoefficientField, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != fld.m:
        raise DimensionMismatch(f"X has {X.shape[-1]} components, field has m={fld.m}")
    return fld.eval(X)


def coeff_drift(fld: CoefficientField, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != fld.m:
        raise DimensionMismatch(f"X has {X.shape[-1]} components, field has m={fld.m}")
    return fld.drift(X)


# Dini moduli ------------------------------------------------------------------------

def _x_samples(fld: CoefficientField, n: int) -> np.ndarray:
    d = fld.m - 1
    if d == 0:
        return np.zeros((1, 0))
    extent = fld.period if fld.periodic_lattice else 2.0
    if d == 1:
        return (np.arange(n) / n * extent).reshape(-1, 1)
    return qmc.Sobol(d, scramble=False).random(n) * extent


def dini_modulus(fld: CoefficientField, rho: float, n_x: int | None = None, n_pairs: int | None = None,
                 n_gaps: int | None = None) -> float:
    """
    theta(rho) = sup |A(x, l1) - A(x, l2)|_F over |l1 - l2| <= rho.

    x runs over an n_x grid of the cell (Sobol points when m - 1 > 1), l1 over
    n_pairs uniform points of one period in x_m and the gap over n_gaps
    uniform values in (0, rho].
    """
    if not 0 < rho <= 1:
        raise ValidationFailure(f"rho must lie in (0, 1], got {rho}")
    if fld.xm_independent:
        return 0.0
    n_x = n_x or settings.dini_x_grid
    n_pairs = n_pairs or settings.dini_pairs
    n_gaps = n_gaps or settings.dini_gaps
    xs = _x_samples(fld, n_x)
    extent = fld.period if fld.periodic_lattice else 2.0
    lam = np.arange(n_pairs) / n_pairs * extent
    gaps = rho * np.arange(1, n_gaps + 1) / n_gaps
    X1 = np.concatenate([np.repeat(xs, n_pairs, axis=0), np.tile(lam, xs.shape[0])[:, None]], axis=1)
    A1 = fld.eval(X1)
    best = 0.0
    for g in gaps:
        X2 = X1.copy()
        X2[:, -1] += g
        diff = fld.eval(X2) - A1
        best = max(best, float(np.max(np.sqrt(np.sum(diff * diff, axis=(1, 2))))))
    return best


def dini_modulus_all(fld: CoefficientField, rho: float, n_points: int | None = None,
                     n_dirs: int = 16, n_gaps: int | None = None) -> float:
    """Theta(rho) = sup |A(X) - A(X')|_F over |X - X'| <= rho, all variables."""
    if not 0 < rho <= 1:
        raise ValidationFailure(f"rho must lie in (0, 1], got {rho}")
    if fld.is_constant:
        return 0.0
    n_points = n_points or settings.dini_pairs
    n_gaps = n_gaps or settings.dini_gaps
    extent = fld.period if fld.periodic_lattice else 2.0
    X = qmc.Sobol(fld.m, scramble=False).random(n_points) * extent
    if fld.m == 1:
        dirs = np.array([[1.0]])
    else:
        dirs = qmc.Sobol(fld.m, scramble=False).random(n_dirs) - 0.5
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    A0 = fld.eval(X)
    best = 0.0
    for g in rho * np.arange(1, n_gaps + 1) / n_gaps:
        for d in dirs:
            diff = fld.eval(X + g * d) - A0
            best = max(best, float(np.max(np.sqrt(np.sum(diff * diff, axis=(1, 2))))))
    return best


def _log_integral(modulus, cutoff: float, n_rho: int = 48) -> float:
    rho = np.geomspace(cutoff, 1.0, n_rho)
    theta = np.array([modulus(r) for r in rho])
    # int theta^2 / rho d rho = int theta^2 d log rho
    return float(trapezoid(theta ** 2, np.log(rho)))


def dini_integral(fld: CoefficientField, cutoff: float | None = None) -> float:
    if fld.xm_independent:
        return 0.0
    return _log_integral(lambda r: dini_modulus(fld, r), cutoff or settings.dini_cutoff)


def dini_integral_all(fld: CoefficientField, cutoff: float | None = None) -> float:
    if fld.is_constant:
        return 0.0
    return _log_integral(lambda r: dini_modulus_all(fld, r), cutoff or settings.dini_cutoff)


# Config hooks -----------------------------------------------------------------------

def domain_from_spec(spec: dict) -> GraphDomain:
    spec = dict(spec)
    if "slope" in spec:
        spec["slope"] = tuple(spec["slope"])
    return GraphDomain(**spec)


def field_from_spec(spec: dict) -> CoefficientField:
    spec = dict(spec)
    family = spec.pop("family")
    kappa = spec.pop("kappa", None)
    if family == "constant":
        return constant_field(spec["matrix"], kappa=kappa)
    if family == "laminate":
        return laminate_field(spec["means"], spec["amplitudes"], axis=spec.get("axis", 0),
                              frequency=spec.get("frequency", 1), phases=spec.get("phases"), kappa=kappa)
    if family == "trig_polynomial":
        terms = [TrigTerm(np.asarray(t["matrix"]), np.asarray(t["freq"]), t.get("phase", 0.0))
                 for t in spec.get("terms", [])]
        return trig_field(spec["base"], terms, kappa=kappa, blend_radius=spec.get("blend_radius"),
                          blend_width=spec.get("blend_width", 1.0))
    raise ValidationFailure(f"unknown coefficient family {family!r}")
