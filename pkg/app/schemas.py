"""
Experiment configuration models.

Each subcommand reads one JSON file into one of the *Config models below.
Unknown keys are rejected everywhere; a missing required key is reported
with its dotted location.
"""
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.domain import CoefficientField, GraphDomain, domain_from_spec, field_from_spec
from app.core.geometry import PhasePoint, ReferenceParams, reference_point
from app.core.simulate import SdeConfig


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# Building blocks ----------------------------------------------------------------

class DomainSpec(StrictModel):
    m: int = Field(ge=1)
    family: Literal["flat", "linear", "sine", "smooth_sawtooth"] = "flat"
    offset: float = 0.0
    slope: list[float] = []
    amplitude: float = 0.0
    frequency: float = 1.0
    axis: int = 0
    smoothing: float = 0.1

    def build(self) -> GraphDomain:
        return domain_from_spec(self.model_dump())


class TrigTermSpec(StrictModel):
    matrix: list[list[float]]
    freq: list[float]
    phase: float = 0.0


class FieldSpec(StrictModel):
    family: Literal["constant", "laminate", "trig_polynomial"]
    kappa: float | None = None
    # constant
    matrix: list[list[float]] | None = None
    # laminate
    means: list[float] | None = None
    amplitudes: list[float] | None = None
    axis: int = 0
    frequency: int = 1
    phases: list[float] | None = None
    # trig_polynomial
    base: list[list[float]] | None = None
    terms: list[TrigTermSpec] = []
    blend_radius: float | None = None
    blend_width: float = 1.0

    @model_validator(mode="after")
    def _family_keys(self):
        required = {"constant": ("matrix",), "laminate": ("means", "amplitudes"),
                    "trig_polynomial": ("base",)}[self.family]
        for key in required:
            if getattr(self, key) is None:
                raise ValueError(f"family {self.family!r} requires key {key!r}")
        return self

    def build(self) -> CoefficientField:
        return field_from_spec(self.model_dump(exclude_none=True))


class PointSpec(StrictModel):
    X: list[float]
    Y: list[float]
    t: float = 0.0

    def build(self) -> PhasePoint:
        return PhasePoint(self.X, self.Y, self.t)


class ReferenceSpec(StrictModel):
    """Pole given as base o A+/- for a boundary point base."""
    x: list[float] = []
    Y: list[float]
    t: float = 0.0
    rho: float
    lam: float = 2.0
    sign: Literal["plus", "minus"] = "plus"

    def build(self, dom: GraphDomain) -> PhasePoint:
        base = dom.boundary_point(self.x, self.Y, self.t)
        return reference_point(base, ReferenceParams(self.rho, self.lam, self.sign))


class SdeSpec(StrictModel):
    dt: float = 1e-3
    max_time: float = 1e3
    n_paths: int = Field(10000, ge=1)
    exit_refine: Literal["none", "bisection"] = "none"
    batch_size: int = 0
    adaptive: bool = True
    h_ref: float = 0.1
    dt_max: float = 0.05

    def build(self, seed: int) -> SdeConfig:
        return SdeConfig(self.dt, self.max_time, self.n_paths, seed, self.exit_refine, self.batch_size,
                         self.adaptive, self.h_ref, self.dt_max)


class BoxSpec(StrictModel):
    lo: list[float]
    hi: list[float]


class DyadicSpec(StrictModel):
    window_lo: list[float]
    window_hi: list[float]
    k_min: int = 0
    k_max: int = 2


class WhitneySpec(StrictModel):
    x_lo: list[float] = []
    x_hi: list[float] = []
    h_top: float = 1.0
    depth: int = Field(6, ge=1)
    samples: int = 4096
    scheme: Literal["layered", "dyadic"] = "layered"


class PartitionSpec(StrictModel):
    type: Literal["surface_grid", "dyadic"] = "surface_grid"
    # surface_grid
    r: float | None = None
    n_x: int = 1
    n_Y: int = 1
    n_t: int = 1
    x_center: list[float] | None = None
    Y_center: list[float] | None = None
    t_center: float = 0.0
    which: Literal["E", "P", "K"] | None = None
    # dyadic
    cubes: DyadicSpec | None = None
    level: int | None = None

    @model_validator(mode="after")
    def _type_keys(self):
        if self.type == "surface_grid" and self.r is None:
            raise ValueError("surface_grid partition requires key 'r'")
        if self.type == "dyadic" and self.cubes is None:
            raise ValueError("dyadic partition requires key 'cubes'")
        return self


class BqSpec(StrictModel):
    q: float = 2.0
    depth: int = 1


# Subcommand configs -------------------------------------------------------------

class ExperimentConfig(StrictModel):
    seed: int | None = None


class GeomCheckConfig(ExperimentConfig):
    m: int = Field(1, ge=1)
    n_samples: int = 10000
    triangle_samples: int = 100000
    ball_samples: int = 1000000
    radii: list[float] = [1.0, 2.0]
    domain: DomainSpec | None = None
    cubes: DyadicSpec | None = None
    whitney: WhitneySpec | None = None

    @model_validator(mode="after")
    def _same_m(self):
        if self.domain is not None and self.domain.m != self.m:
            raise ValueError(f"domain.m={self.domain.m} differs from m={self.m}")
        if (self.cubes is not None or self.whitney is not None) and self.domain is None:
            raise ValueError("cube and Whitney checks require key 'domain'")
        return self


class CellConfig(ExperimentConfig):
    field: FieldSpec
    grid: int | None = None
    basis: list[list[float]] | None = None
    correctors: bool = False


class MeasureConfig(ExperimentConfig):
    domain: DomainSpec
    field: FieldSpec
    pole: PointSpec | None = None
    reference: ReferenceSpec | None = None
    kind: Literal["E", "P", "K"] = "K"
    adjoint: bool = False
    partition: PartitionSpec
    sde: SdeSpec = SdeSpec()
    doubling_factor: float | None = None
    bq: BqSpec | None = None

    @model_validator(mode="after")
    def _one_pole(self):
        if (self.pole is None) == (self.reference is None):
            raise ValueError("give exactly one of 'pole' and 'reference'")
        return self


class SliceSpec(StrictModel):
    axis: int
    index: int


class SolveConfig(ExperimentConfig):
    domain: DomainSpec
    field: FieldSpec
    operator: Literal["elliptic", "parabolic", "kolmogorov"]
    box: BoxSpec
    data: str
    h: float | None = None
    steps: list[int] | None = None
    theta: float = Field(1.0, ge=0.5, le=1.0)
    eps: float | None = None
    probes: list[list[float]] = []
    slices: list[SliceSpec] = []
    export_grid: bool = False

    @model_validator(mode="after")
    def _resolution(self):
        if self.operator == "elliptic" and self.h is None:
            raise ValueError("elliptic solves require key 'h'")
        if self.operator != "elliptic" and self.steps is None:
            raise ValueError(f"{self.operator} solves require key 'steps'")
        return self


class HomogenizeConfig(ExperimentConfig):
    domain: DomainSpec = DomainSpec(m=1)
    field: FieldSpec
    data: str = "decay"
    box: BoxSpec = BoxSpec(lo=[0.0, -1.0, 0.0], hi=[1.0, 1.0, 0.25])
    eps: list[float] = [0.5, 0.25, 0.125]
    compact_lo: list[float] = [0.25, -0.5, 0.125]
    compact_hi: list[float] = [0.75, 0.5, 0.24]
    negative_control: bool = True
    grid: int | None = None


class VerifyConfig(ExperimentConfig):
    scale: Literal["quick", "full"] = "quick"
