"""
Kolmogorov group calculus on R^m x R^m x R.

Points are (X, Y, t). The group law, dilations, homogeneous norm and the
symmetrized quasi-distance all come in two flavours: on PhasePoint objects
for readable call sites, and on stacked arrays of shape (..., 2m+1) laid out
as [X, Y, t] for the Monte Carlo and sampling code.
"""
import logging
from dataclasses import dataclass

import numpy as np

from app.exceptions import DimensionMismatch, ValidationFailure

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PhasePoint:
    X: np.ndarray
    Y: np.ndarray
    t: float

    def __post_init__(self):
        X = np.atleast_1d(np.asarray(self.X, dtype=np.float64)).copy()
        Y = np.atleast_1d(np.asarray(self.Y, dtype=np.float64)).copy()
        t = float(self.t)
        if X.ndim != 1 or Y.ndim != 1:
            raise DimensionMismatch("X and Y must be vectors")
        if X.size < 1 or X.size != Y.size:
            raise DimensionMismatch(f"X and Y must share m >= 1, got {X.size} and {Y.size}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y)) and np.isfinite(t)):
            raise ValidationFailure("PhasePoint components must be finite")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "t", t)

    @property
    def m(self) -> int:
        return self.X.size

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.X, self.Y, [self.t]])

    @classmethod
    def from_array(cls, a, m: int | None = None) -> "PhasePoint":
        a = np.asarray(a, dtype=np.float64)
        if m is None:
            if (a.size - 1) % 2:
                raise DimensionMismatch(f"array of length {a.size} is not a phase point")
            m = (a.size - 1) // 2
        if a.size != 2 * m + 1:
            raise DimensionMismatch(f"expected {2 * m + 1} components, got {a.size}")
        return cls(a[:m], a[m:2 * m], a[2 * m])

    def allclose(self, other: "PhasePoint", atol: float = 1e-12) -> bool:
        return self.m == other.m and np.allclose(self.as_array(), other.as_array(), rtol=0.0, atol=atol)

    def __repr__(self):
        return f"PhasePoint(X={self.X.tolist()}, Y={self.Y.tolist()}, t={self.t})"


@dataclass(frozen=True)
class GroupConstants:
    m: int

    def __post_init__(self):
        if self.m < 1:
            raise ValidationFailure(f"m must be >= 1, got {self.m}")

    @property
    def q(self) -> int:
        # homogeneous dimension
        return 4 * self.m + 2

    @property
    def N(self) -> int:
        return 2 * self.m


@dataclass(frozen=True)
class ReferenceParams:
    rho: float
    lam: float
    sign: str = "plus"

    def __post_init__(self):
        if not self.rho > 0:
            raise ValidationFailure(f"rho must be positive, got {self.rho}")
        if not self.lam >= 1:
            raise ValidationFailure(f"lambda must be >= 1, got {self.lam}")
        if self.sign not in ("plus", "minus"):
            raise ValidationFailure(f"sign must be 'plus' or 'minus', got {self.sign!r}")


def origin(m: int) -> PhasePoint:
    return PhasePoint(np.zeros(m), np.zeros(m), 0.0)


def _split(a, m):
    return a[..., :m], a[..., m:2 * m], a[..., 2 * m]


def _join(X, Y, t):
    return np.concatenate([X, Y, np.asarray(t)[..., None]], axis=-1)


def _check_same_m(p: PhasePoint, q: PhasePoint):
    if p.m != q.m:
        raise DimensionMismatch(f"points live in different groups (m={p.m} vs m={q.m})")


# Array level ----------------------------------------------------------------

def compose_arrays(a, b, m: int):
    aX, aY, at = _split(a, m)
    bX, bY, bt = _split(b, m)
    return _join(aX + bX, aY + bY - bt[..., None] * aX, at + bt)


def inverse_arrays(a, m: int):
    X, Y, t = _split(a, m)
    return _join(-X, -Y - t[..., None] * X, -t)


def dilate_arrays(r: float, a, m: int):
    X, Y, t = _split(a, m)
    return _join(r * X, r ** 3 * Y, r ** 2 * t)


def norm_arrays(a, m: int):
    X, Y, t = _split(a, m)
    return (np.linalg.norm(X, axis=-1)
            + np.cbrt(np.linalg.norm(Y, axis=-1))
            + np.sqrt(np.abs(t)))


def distance_arrays(a, b, m: int):
    """d(a, b) = (||b^-1 a|| + ||a^-1 b||) / 2, broadcast over leading axes."""
    ab = compose_arrays(inverse_arrays(b, m), a, m)
    ba = compose_arrays(inverse_arrays(a, m), b, m)
    return 0.5 * (norm_arrays(ab, m) + norm_arrays(ba, m))


# Point level ----------------------------------------------------------------

def compose(p: PhasePoint, q: PhasePoint) -> PhasePoint:
    _check_same_m(p, q)
    return PhasePoint(p.X + q.X, p.Y + q.Y - q.t * p.X, p.t + q.t)


def inverse(p: PhasePoint) -> PhasePoint:
    return PhasePoint(-p.X, -p.Y - p.t * p.X, -p.t)


def dilate(r: float, p: PhasePoint) -> PhasePoint:
    if not r > 0:
        raise ValidationFailure(f"dilation factor must be positive, got {r}")
    return PhasePoint(r * p.X, r ** 3 * p.Y, r ** 2 * p.t)


def group_norm(p: PhasePoint) -> float:
    return float(np.linalg.norm(p.X) + np.cbrt(np.linalg.norm(p.Y)) + np.sqrt(abs(p.t)))


def quasi_distance(p: PhasePoint, q: PhasePoint) -> float:
    _check_same_m(p, q)
    return 0.5 * (group_norm(compose(inverse(q), p)) + group_norm(compose(inverse(p), q)))


def ball_contains(center: PhasePoint, r: float, p: PhasePoint) -> bool:
    if not r > 0:
        raise ValidationFailure(f"ball radius must be positive, got {r}")
    return quasi_distance(p, center) < r


def reference_tuple(m: int, params: ReferenceParams) -> PhasePoint:
    """A^+/A^- at the origin: X = (0, lam*rho), Y = (0, -/+ 2/3 lam rho^3), t = +/- rho^2."""
    X = np.zeros(m)
    Y = np.zeros(m)
    X[-1] = params.lam * params.rho
    s = 1.0 if params.sign == "plus" else -1.0
    Y[-1] = -s * 2.0 / 3.0 * params.lam * params.rho ** 3
    return PhasePoint(X, Y, s * params.rho ** 2)


def reference_point(base: PhasePoint, params: ReferenceParams) -> PhasePoint:
    return compose(base, reference_tuple(base.m, params))


def project_X(p: PhasePoint) -> np.ndarray:
    return p.X.copy()


def project_Xt(p: PhasePoint) -> tuple[np.ndarray, float]:
    return p.X.copy(), p.t


# Sampling estimators --------------------------------------------------------

def random_points(rng: np.random.Generator, m: int, n: int, scale: float = 1.0) -> np.ndarray:
    return rng.uniform(-scale, scale, size=(n, 2 * m + 1))


def pseudo_triangle_constant(m: int, n: int, rng: np.random.Generator, scale: float = 10.0) -> float:
    """Empirical c in ||p^-1|| <= c ||p||."""
    a = random_points(rng, m, n, scale)
    ratio = norm_arrays(inverse_arrays(a, m), m) / norm_arrays(a, m)
    return float(np.max(ratio))


def quasi_triangle_constant(m: int, n: int, rng: np.random.Generator, scale: float = 10.0) -> float:
    """Empirical c in d(p,q) <= c (d(p,w) + d(w,q)) over random triples."""
    p = random_points(rng, m, n, scale)
    q = random_points(rng, m, n, scale)
    w = random_points(rng, m, n, scale)
    lhs = distance_arrays(p, q, m)
    rhs = distance_arrays(p, w, m) + distance_arrays(w, q, m)
    return float(np.max(lhs / rhs))


def ball_volume(m: int, r: float, n: int, rng: np.random.Generator, chunk: int = 250000) -> tuple[float, float]:
    """
    Monte Carlo volume of the open ball B_r(origin) with its standard error.

    d(p, 0) = |X| + (|Y|^(1/3) + |Y + tX|^(1/3))/2 + |t|^(1/2), so the ball
    sits inside |X| < r, |Y| < 8r^3, |t| < r^2; points are drawn uniformly in
    that box.
    """
    if not r > 0:
        raise ValidationFailure(f"ball radius must be positive, got {r}")
    half = np.concatenate([np.full(m, r), np.full(m, 8.0 * r ** 3), [r ** 2]])
    box_volume = float(np.prod(2.0 * half))
    zero = np.zeros(2 * m + 1)
    hits = 0
    done = 0
    while done < n:
        k = min(chunk, n - done)
        pts = rng.uniform(-1.0, 1.0, size=(k, 2 * m + 1)) * half
        hits += int(np.count_nonzero(distance_arrays(pts, zero, m) < r))
        done += k
    frac = hits / n
    stderr = box_volume * np.sqrt(frac * (1.0 - frac) / n)
    return box_volume * frac, float(stderr)
