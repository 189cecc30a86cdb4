import math
from datetime import datetime
from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, model_validator


# Weighted-norm parameters
class WeightParams(BaseModel):
    s: int = Field(0, ge=0)
    gamma: float = Field(1.0, ge=1.0)
    sigma: Optional[float] = None  # defaults to gamma + 1
    delta: float = Field(0.1, gt=0.0, lt=1.0)
    mu_rate: float = Field(0.25, gt=0.0)
    alpha: float = Field(0.25, ge=0.25, le=0.5)
    tau: float = Field(1.0, gt=0.0)

    @model_validator(mode="after")
    def _sigma_above_gamma(self):
        if self.sigma is None:
            self.sigma = self.gamma + 1.0
        if not self.sigma > self.gamma + 0.5:
            raise ValueError(f"sigma must exceed gamma + 1/2 (gamma={self.gamma}, sigma={self.sigma})")
        return self


class NormReport(BaseModel):
    values: Dict[str, float]
    t: float = 0.0
    grid: Dict[str, float] = Field(default_factory=dict)
    m_max: Optional[int] = None
    tail_estimate: Dict[str, Optional[float]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _finite_nonnegative(self):
        for name, value in self.values.items():
            if not (math.isfinite(value) and value >= 0.0):
                raise ValueError(f"norm {name} must be finite and nonnegative, got {value}")
        return self


# Diagnostics
class VerdictStatus(str, Enum):
    COMPLETED_HORIZON = "completed_horizon"
    BLOWUP = "blowup"
    BACKFLOW = "backflow"
    SCHEME_BREAKDOWN = "scheme_breakdown"


class BlowupVerdict(BaseModel):
    status: VerdictStatus
    t_star: Optional[float] = None
    x_star: Optional[float] = None
    confirmed: Optional[bool] = None
    detail: Optional[str] = None
    sup_history: List[Tuple[float, float]] = Field(default_factory=list)
    energy_history: List[Tuple[float, float]] = Field(default_factory=list)


# Scenario configuration
class GridSpec(BaseModel):
    n_x: int = Field(64, ge=4)
    x_period: float = Field(2 * math.pi, gt=0.0)
    n_y: int = Field(201, ge=4)
    y_max: float = Field(20.0, gt=0.0)
    y_stretch: float = Field(1.0, ge=1.0)


class OuterSpec(BaseModel):
    kind: Literal["constant", "traveling_wave", "linear_ramp", "tabulated"] = "constant"
    speed: float = 1.0
    amplitude: float = 0.0
    wavenumber: float = 1.0
    phase_speed: float = 1.0
    rate: float = 0.0
    pressure: Literal["bernoulli", "fixed"] = "bernoulli"
    pressure_gradient: float = 0.0
    far_b: Optional[float] = None
    times: Optional[List[float]] = None
    table: Optional[List[List[float]]] = None

    @model_validator(mode="after")
    def _table_shape(self):
        if self.kind == "tabulated":
            if not self.times or not self.table or len(self.times) != len(self.table):
                raise ValueError("tabulated outer flow needs 'times' and one 'table' row per time")
            widths = {len(row) for row in self.table}
            if len(widths) != 1 or widths.pop() < 4:
                raise ValueError("tabulated rows must share one length of at least 4")
        return self


class InitialSpec(BaseModel):
    catalog: Literal["hartmann", "erf", "perturbed_hartmann", "backflow_probe", "snapshot"] = "hartmann"
    ubar: Optional[float] = None
    amplitude: float = 0.0
    mode: int = Field(1, ge=0)
    decay: float = Field(0.35, gt=0.0)
    snapshot: Optional[str] = None

    @model_validator(mode="after")
    def _snapshot_path(self):
        if self.catalog == "snapshot" and not self.snapshot:
            raise ValueError("catalog 'snapshot' needs a snapshot path")
        return self


class DetectorSpec(BaseModel):
    blowup_factor: float = Field(1.0e3, gt=1.0)
    stop_on_backflow: bool = True
    refine_confirm: bool = False


class EESpec(BaseModel):
    amplitude: float = 7.0
    dt_max: float = Field(1.0e-2, gt=0.0)
    energy_variant: Literal["minus", "plus"] = "minus"


class CroccoSpec(BaseModel):
    scheme: Literal["explicit", "implicit", "unsteady"] = "implicit"
    n_xi: int = Field(1, ge=1)
    n_eta: int = Field(41, ge=4)
    X: float = Field(1.0, gt=0.0)
    nu: float = Field(1.0, ge=0.0)
    v0: float = 0.0
    A: float = 0.0
    B: float = 0.0
    C: float = 0.0
    p_x: float = 0.0
    h: float = Field(1.0e-3, gt=0.0)
    M: float = Field(1.0, ge=0.0)
    bound_w: float = Field(1.0, gt=0.0)
    bound_speed: float = Field(1.0, ge=0.0)
    initial: Literal["linear", "quadratic"] = "linear"


class Structure3DSpec(BaseModel):
    n_y: int = Field(16, ge=4)
    y_period: float = Field(2 * math.pi, gt=0.0)
    K: float = 0.7
    K_wave: float = 0.0  # amplitude of a sin(y) modulation; nonzero violates the Burgers constraint
    v_offset: float = 0.0


class ScenarioConfig(BaseModel):
    kind: Literal["prandtl2d", "ee_blowup", "crocco", "structure3d"] = "prandtl2d"
    variant: Literal["classical", "hartmann_damped", "magnetic_ph", "shercliff"] = "classical"
    grid: GridSpec
    outer: OuterSpec = Field(default_factory=OuterSpec)
    initial: InitialSpec = Field(default_factory=InitialSpec)
    horizon: float = Field(1.0, gt=0.0)
    dt: Optional[float] = Field(None, gt=0.0)
    cfl: float = Field(0.5, gt=0.0, le=1.0)
    eps: float = Field(0.0, ge=0.0)
    detectors: DetectorSpec = Field(default_factory=DetectorSpec)
    norms: List[WeightParams] = Field(default_factory=list)
    sample_every: int = Field(10, ge=1)
    study: Literal["shear_oracle", "mms"] = "shear_oracle"
    ee: Optional[EESpec] = None
    crocco: Optional[CroccoSpec] = None
    structure3d: Optional[Structure3DSpec] = None

    @model_validator(mode="after")
    def _cross_field(self):
        problems = []
        if self.kind == "ee_blowup" and self.ee is None:
            problems.append("ee: block required for kind ee_blowup")
        if self.kind == "crocco" and self.crocco is None:
            problems.append("crocco: block required for kind crocco")
        if self.kind == "structure3d" and self.structure3d is None:
            problems.append("structure3d: block required for kind structure3d")
        if self.variant == "shercliff" and self.outer.far_b is None:
            problems.append("outer.far_b: required for the shercliff variant")
        if self.initial.catalog in ("hartmann", "perturbed_hartmann") and self.initial.ubar is not None:
            # far field follows the Hartmann constant
            self.outer.speed = self.initial.ubar
        if problems:
            raise ValueError("; ".join(problems))
        return self


# Run bookkeeping
class RunRecord(BaseModel):
    config_hash: str
    kind: str
    status: str = "completed"
    started_at: datetime
    finished_at: Optional[datetime] = None
    verdicts: List[BlowupVerdict] = Field(default_factory=list)
    output_paths: List[str] = Field(default_factory=list)
    software_version: str
    error: Optional[str] = None

    class Config:
        from_attributes = True


# API payloads
class RunRequest(BaseModel):
    config_yaml: str


class SelfSimilarSummary(BaseModel):
    equation: str
    wall_shear: float
    wall_shear_classical: float
    eta_inf: float
    far_field_error: float
    residual: float
    floor_hits: int = 0
    table: Optional[List[Tuple[float, float, float, float]]] = None


class StandardResponse(BaseModel):
    message: str
    data: Optional[dict] = None
