"""Semi-implicit stepping of the 2D boundary-layer variants.

Every step is one IMEX pass: tangential regularization and normal diffusion
(plus linear damping) are implicit, advection and the remaining forcing are
explicit. v is recovered from continuity before each step.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

from prandtl_lab.core.errors import (
    CFLViolation,
    DecayError,
    GridMismatchError,
    LabError,
    NonFiniteError,
    ParameterError,
)
from prandtl_lab.numerics import diagnostics
from prandtl_lab.numerics.grid import (
    Field,
    Grid2D,
    NormalAxis,
    Role,
    build_grid,
    cumulative_normal,
    finite_difference_weights,
    first_bad_node,
    normal_derivative,
    periodic_derivative,
    recover_v_values,
    solve_implicit_diffusion,
    spectral_derivative,
    upwind_normal,
    upwind_periodic,
)
from prandtl_lab.numerics.norms import norm_report
from prandtl_lab.numerics.shear import ShearProfile, erf_profile, heat_kernel_shear
from prandtl_lab.schemas import BlowupVerdict, NormReport, OuterSpec, ScenarioConfig, VerdictStatus

logger = logging.getLogger(__name__)

DEFAULT_CFL = 0.5
FAR_FIELD_TOL = 1e-8

SpaceTime = Callable[[float, np.ndarray], np.ndarray]
Source = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


class Variant(str, Enum):
    CLASSICAL = "classical"
    HARTMANN_DAMPED = "hartmann_damped"
    MAGNETIC_PH = "magnetic_ph"
    SHERCLIFF = "shercliff"


@dataclass(frozen=True, eq=False)
class OuterFlow:
    """Outer speed U(t, x) and pressure gradient P_x(t, x).

    ``U_t``/``U_x`` are optional analytic derivatives; without them the
    Bernoulli residual falls back to central differences.
    """

    U: SpaceTime
    P_x: SpaceTime
    far_b: Optional[float] = None
    U_t: Optional[SpaceTime] = None
    U_x: Optional[SpaceTime] = None
    kind: str = "callable"

    def speed(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.U(t, x), dtype=float), x.shape).copy()

    def pressure_gradient(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.P_x(t, x), dtype=float), x.shape).copy()

    def derivatives(self, t: float, x: np.ndarray, h: float = 1e-5) -> Tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        if self.U_t is not None:
            ut = np.broadcast_to(np.asarray(self.U_t(t, x), dtype=float), x.shape)
        else:
            ut = (self.speed(t + h, x) - self.speed(t - h, x)) / (2.0 * h)
        if self.U_x is not None:
            ux = np.broadcast_to(np.asarray(self.U_x(t, x), dtype=float), x.shape)
        else:
            ux = (self.speed(t, x + h) - self.speed(t, x - h)) / (2.0 * h)
        return ut, ux


def constant_outer(speed: float = 1.0, pressure_gradient: float = 0.0, far_b: Optional[float] = None) -> OuterFlow:
    zero = lambda t, x: np.zeros_like(x)
    return OuterFlow(
        U=lambda t, x: np.full_like(x, speed),
        P_x=lambda t, x: np.full_like(x, pressure_gradient),
        far_b=far_b,
        U_t=zero,
        U_x=zero,
        kind="constant",
    )


def traveling_wave(
    speed: float = 1.0,
    amplitude: float = 0.5,
    wavenumber: float = 1.0,
    phase_speed: float = 1.0,
    pressure: str = "bernoulli",
    pressure_gradient: float = 0.0,
    far_b: Optional[float] = None,
) -> OuterFlow:
    """U = U0 + A cos(k (x - c t)); Bernoulli pressure unless ``pressure='fixed'``."""
    k, c = wavenumber, phase_speed

    def U(t, x):
        return speed + amplitude * np.cos(k * (x - c * t))

    def U_t(t, x):
        return amplitude * k * c * np.sin(k * (x - c * t))

    def U_x(t, x):
        return -amplitude * k * np.sin(k * (x - c * t))

    if pressure == "bernoulli":
        P_x = lambda t, x: -(U_t(t, x) + U(t, x) * U_x(t, x))
    else:
        P_x = lambda t, x: np.full_like(x, pressure_gradient)
    return OuterFlow(U=U, P_x=P_x, far_b=far_b, U_t=U_t, U_x=U_x, kind="traveling_wave")


def linear_ramp(speed: float = 1.0, rate: float = 0.0, far_b: Optional[float] = None) -> OuterFlow:
    """U = U0 + rate t, uniform in x, with Bernoulli pressure gradient -rate."""
    return OuterFlow(
        U=lambda t, x: np.full_like(x, speed + rate * t),
        P_x=lambda t, x: np.full_like(x, -rate),
        far_b=far_b,
        U_t=lambda t, x: np.full_like(x, rate),
        U_x=lambda t, x: np.zeros_like(x),
        kind="linear_ramp",
    )


def tabulated(
    times: Sequence[float],
    table: Sequence[Sequence[float]],
    x_period: float,
    pressure: str = "bernoulli",
    pressure_gradient: float = 0.0,
    far_b: Optional[float] = None,
) -> OuterFlow:
    """U from rows sampled uniformly over one period, linear in time between rows."""
    times = np.asarray(times, dtype=float)
    rows = np.asarray(table, dtype=float)
    if rows.ndim != 2 or rows.shape[0] != times.size or times.size < 1:
        raise ParameterError("tabulated outer flow needs one row per time")
    if times.size > 1 and np.any(np.diff(times) <= 0):
        raise ParameterError("tabulated times must increase")
    slopes = spectral_derivative(rows, x_period, 1, axis=1)
    x_table = np.arange(rows.shape[1]) * x_period / rows.shape[1]

    def _interp(data, t, x):
        x = np.asarray(x, dtype=float)
        if times.size == 1 or t <= times[0]:
            row = data[0]
        elif t >= times[-1]:
            row = data[-1]
        else:
            k = int(np.searchsorted(times, t)) - 1
            theta = (t - times[k]) / (times[k + 1] - times[k])
            row = (1.0 - theta) * data[k] + theta * data[k + 1]
        return np.interp(x, x_table, row, period=x_period)

    def U_t(t, x):
        x = np.asarray(x, dtype=float)
        if times.size == 1 or t < times[0] or t >= times[-1]:
            return np.zeros_like(x)
        k = int(np.searchsorted(times, t, side="right")) - 1
        return np.interp(x, x_table, (rows[k + 1] - rows[k]) / (times[k + 1] - times[k]), period=x_period)

    U = lambda t, x: _interp(rows, t, x)
    U_x = lambda t, x: _interp(slopes, t, x)
    if pressure == "bernoulli":
        P_x = lambda t, x: -(U_t(t, x) + U(t, x) * U_x(t, x))
    else:
        P_x = lambda t, x: np.full_like(np.asarray(x, dtype=float), pressure_gradient)
    return OuterFlow(U=U, P_x=P_x, far_b=far_b, U_t=U_t, U_x=U_x, kind="tabulated")


def outer_from_spec(spec: OuterSpec, x_period: float) -> OuterFlow:
    if spec.kind == "constant":
        return constant_outer(spec.speed, spec.pressure_gradient, spec.far_b)
    if spec.kind == "traveling_wave":
        return traveling_wave(
            spec.speed, spec.amplitude, spec.wavenumber, spec.phase_speed,
            spec.pressure, spec.pressure_gradient, spec.far_b,
        )
    if spec.kind == "linear_ramp":
        return linear_ramp(spec.speed, spec.rate, spec.far_b)
    return tabulated(spec.times, spec.table, x_period, spec.pressure, spec.pressure_gradient, spec.far_b)


@dataclass(frozen=True, eq=False)
class FlowState:
    t: float
    u: Field
    variant: Variant
    outer: OuterFlow
    eps: float = 0.0
    # far-field constant the hartmann_damped forcing relaxes toward
    ubar: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.eps < 0:
            raise ParameterError(f"regularization eps must be nonnegative, got {self.eps}")
        if self.u.role is not Role.U:
            raise ParameterError(f"flow state needs a u field, got role {self.u.role.value}")
        if self.variant is Variant.SHERCLIFF and self.outer.far_b is None:
            raise ParameterError("shercliff variant needs outer.far_b")

    @property
    def grid(self) -> Grid2D:
        return self.u.grid


def discrete_hartmann_profile(normal: NormalAxis, ubar: float = 1.0) -> np.ndarray:
    """Discrete steady state of u_yy - u + ubar = 0 with u(0) = 0, u(y_max) = ubar."""
    rhs = np.full(normal.n, float(ubar))
    return solve_implicit_diffusion(normal, rhs, 1.0, damping=1.0, wall=0.0, far=ubar, identity=0.0)


def stable_dt(state: FlowState, cfl: float = DEFAULT_CFL) -> float:
    """Largest explicit-advection step allowed by the CFL bound in x and y."""
    grid = state.grid
    u = state.u.values
    v = recover_v_values(u, grid)
    limits = []
    umax = float(np.max(np.abs(u)))
    if umax > 0:
        limits.append(cfl * grid.dx / umax)
    vmax = float(np.max(np.abs(v[:, 1:]) / grid.dy[None, :]))
    if vmax > 0:
        limits.append(cfl / vmax)
    return min(limits) if limits else math.inf


def _regularize(values: np.ndarray, eps: float, dt: float, dx: float) -> np.ndarray:
    """Implicit (1 - dt eps D_xx)^{-1} with the periodic three-point D_xx, diagonal in Fourier."""
    n = values.shape[0]
    m = np.arange(n // 2 + 1)
    symbol = 1.0 + dt * eps * (4.0 / dx**2) * np.sin(np.pi * m / n) ** 2
    return np.fft.irfft(np.fft.rfft(values, axis=0) / symbol[:, None], n=n, axis=0)


def _damping(variant: Variant) -> float:
    return 1.0 if variant in (Variant.HARTMANN_DAMPED, Variant.MAGNETIC_PH) else 0.0


def step(state: FlowState, dt: float, cfl: float = DEFAULT_CFL, source: Optional[Source] = None) -> FlowState:
    grid = state.grid
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    limit = stable_dt(state, cfl)
    if dt > limit * (1.0 + 1e-12):
        raise CFLViolation(dt, limit)

    t = state.t
    x = grid.x
    u = state.u.values
    v = recover_v_values(u, grid)
    advection = u * upwind_periodic(u, u, grid.dx, axis=0) + v * upwind_normal(u, v, grid.normal, axis=1)

    forcing = -state.outer.pressure_gradient(t, x)[:, None] * np.ones_like(u)
    if state.variant is Variant.HARTMANN_DAMPED:
        forcing = forcing + state.ubar
    elif state.variant is Variant.MAGNETIC_PH:
        forcing = forcing + state.outer.speed(t, x)[:, None]
    elif state.variant is Variant.SHERCLIFF:
        b = solve_b(state.u, state.outer.far_b)
        forcing = forcing + periodic_derivative(b.values, grid.dx, 1, axis=0)
    if source is not None:
        X, Y = grid.mesh()
        forcing = forcing + source(t, X, Y)

    rhs = u + dt * (forcing - advection)
    if state.eps > 0:
        rhs = _regularize(rhs, state.eps, dt, grid.dx)
    new = solve_implicit_diffusion(
        grid.normal,
        rhs.T,
        dt,
        damping=_damping(state.variant),
        wall=0.0,
        far=state.outer.speed(t + dt, x),
    ).T

    node = first_bad_node(new)
    if node is not None:
        raise NonFiniteError(node, t=t + dt)
    return replace(state, t=t + dt, u=state.u.with_values(new))


def vorticity_of(state: FlowState) -> Field:
    return Field(state.grid, Role.VORTICITY, normal_derivative(state.u.values, state.grid.normal, 1, axis=1))


def solve_b(u: Field, far_b: Optional[float] = None, tol: float = 1e-6) -> Field:
    """Magnetic potential from d_x u + d_y^2 b = 0 with b(x, 0) = 0 and d_y b -> 0.

    d_y b(y) = int_y^{y_max} d_x u, then b by a second cumulative integral.
    """
    grid = u.grid
    ux = spectral_derivative(u.values, grid.x_period, 1, axis=0)
    scale = max(1.0, float(np.max(np.abs(ux))))
    far = float(np.max(np.abs(ux[:, -1])))
    if far > tol * scale:
        raise DecayError(f"d_x u does not decay: max |d_x u(., y_max)| = {far:.3g}")
    running = cumulative_normal(ux, grid.normal, axis=1)
    by = running[:, -1:] - running
    b = cumulative_normal(by, grid.normal, axis=1)
    if far_b is not None:
        logger.debug("solve_b far-field gap %.3e", far_field_gap(b, far_b))
    return Field(grid, Role.B, b)


def far_field_gap(b, far_b: float) -> float:
    values = b.values if isinstance(b, Field) else np.asarray(b)
    return float(np.max(np.abs(values[:, -1] - far_b)))


@dataclass(frozen=True, eq=False)
class PerturbationSplit:
    perturbation: Field
    background: np.ndarray
    far_field_residual: float
    passed: bool

    def recombine(self) -> Field:
        return Field(self.perturbation.grid, Role.U, self.background[None, :] + self.perturbation.values)


def perturbation_split(state: FlowState, background: ShearProfile, tol: float = FAR_FIELD_TOL) -> PerturbationSplit:
    """u = u^s(t, y) + u~; recombining reproduces u up to one rounding per node."""
    if background.grid is not None and background.grid != state.grid:
        raise GridMismatchError("background shear profile is defined on a different grid")
    base = np.asarray(background.values(state.t, state.grid.y), dtype=float)
    pert = state.u.values - base[None, :]
    residual = float(np.max(np.abs(pert[:, -1])))
    return PerturbationSplit(
        perturbation=Field(state.grid, Role.GENERIC, pert),
        background=base,
        far_field_residual=residual,
        passed=residual <= tol,
    )


# Wall identities

COMPAT_SAFETY = 10.0
COMPAT_FLOOR = 1e-9
# one-sided stencils use order + COMPAT_EXTRA and order + COMPAT_EXTRA + 1 nodes
COMPAT_EXTRA = 5
# a node is only called satisfied when its tolerance resolves the identity to this fraction
COMPAT_RESOLUTION = 0.1


class CompatStatus(str, Enum):
    SATISFIED = "satisfied"
    VIOLATED = "violated"
    INCONCLUSIVE = "inconclusive"


class _WallValue:
    """Wall value with a propagated error estimate."""

    __slots__ = ("value", "error")

    def __init__(self, value, error):
        self.value = np.asarray(value, dtype=float)
        self.error = np.asarray(error, dtype=float)

    def __add__(self, other):
        other = _lift(other)
        return _WallValue(self.value + other.value, self.error + other.error)

    __radd__ = __add__

    def __sub__(self, other):
        other = _lift(other)
        return _WallValue(self.value - other.value, self.error + other.error)

    def __rsub__(self, other):
        return _lift(other) - self

    def __mul__(self, other):
        other = _lift(other)
        err = np.abs(self.value) * other.error + np.abs(other.value) * self.error + self.error * other.error
        return _WallValue(self.value * other.value, err)

    __rmul__ = __mul__

    def __neg__(self):
        return _WallValue(-self.value, self.error)


def _lift(value) -> _WallValue:
    if isinstance(value, _WallValue):
        return value
    return _WallValue(value, 0.0)


def _wall_derivative(values: np.ndarray, y: np.ndarray, order: int) -> _WallValue:
    if order == 0:
        return _WallValue(values[:, 0], 0.0)
    estimates = []
    rounding = 0.0
    for points in (order + COMPAT_EXTRA, order + COMPAT_EXTRA + 1):
        w = finite_difference_weights(y[:points], order)
        estimates.append(values[:, :points] @ w)
        rounding = 64.0 * np.finfo(float).eps * (np.abs(values[:, :points]) @ np.abs(w))
    return _WallValue(estimates[1], np.abs(estimates[1] - estimates[0]) + rounding)


@dataclass(frozen=True, eq=False)
class CompatEntry:
    name: str
    order: int
    residual: np.ndarray
    tolerance: np.ndarray
    status: CompatStatus

    @property
    def passed(self) -> bool:
        return self.status is CompatStatus.SATISFIED

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residual)))


@dataclass(frozen=True, eq=False)
class CompatReport:
    entries: List[CompatEntry]

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def violated(self) -> bool:
        return any(e.status is CompatStatus.VIOLATED for e in self.entries)

    def entry(self, order: int) -> CompatEntry:
        for e in self.entries:
            if e.order == order:
                return e
        raise KeyError(order)


def compat_check(
    u0: Field,
    background: ShearProfile,
    order: int,
    variant: Variant = Variant.CLASSICAL,
    outer: Optional[OuterFlow] = None,
    ubar: float = 1.0,
) -> CompatReport:
    """Wall identities up to ``order`` (0, 2, 4 or 6) for u = u^s(0, y) + u0.

    Targets assume outer data that is stationary near t = 0. Residuals are
    reported as (left side - right side) per x node. An identity is violated
    when some node's residual exceeds its tolerance, and inconclusive when the
    tolerance is too wide to resolve it.
    """
    if order not in (0, 2, 4, 6):
        raise ParameterError(f"compatibility order must be 0, 2, 4 or 6, got {order}")
    variant = Variant(variant)
    grid = u0.grid
    outer = outer or constant_outer(ubar)
    y = grid.y
    u = u0.values + np.asarray(background.values(0.0, y), dtype=float)[None, :]
    ux = spectral_derivative(u, grid.x_period, 1, axis=0)
    uxx = spectral_derivative(u, grid.x_period, 2, axis=0)

    def d(k: int) -> _WallValue:
        return _wall_derivative(u, y, k)

    def dx(k: int) -> _WallValue:
        return _wall_derivative(ux, y, k)

    P_x = outer.pressure_gradient(0.0, grid.x)
    if variant is Variant.HARTMANN_DAMPED:
        target2 = _lift(P_x - ubar)
    elif variant is Variant.MAGNETIC_PH:
        target2 = _lift(P_x - outer.speed(0.0, grid.x))
    else:
        target2 = _lift(P_x)
    damped = variant in (Variant.HARTMANN_DAMPED, Variant.MAGNETIC_PH)

    identities: List[Tuple[str, int, _WallValue, _WallValue]] = [("u|0 = 0", 0, d(0), _lift(0.0))]
    if order >= 2:
        identities.append(("d_y^2 u|0", 2, d(2), target2))
    if order >= 4:
        rhs4 = d(1) * dx(1)
        if damped:
            rhs4 = rhs4 + d(2)
        identities.append(("d_y^4 u|0", 4, d(4), rhs4))
    if order >= 6:
        if variant is Variant.SHERCLIFF:
            b = solve_b(u0.with_values(u, Role.U)).values
            by = normal_derivative(b, grid.normal, 1, axis=1)
            bxy = _wall_derivative(spectral_derivative(by, grid.x_period, 1, axis=0), y, 0)
            bxxy = _wall_derivative(spectral_derivative(by, grid.x_period, 2, axis=0), y, 0)
            rhs6 = (
                4.0 * d(1) * dx(3) - dx(1) * d(3) + d(1) * bxxy + dx(1) * bxy
                + 2.0 * d(2) * dx(2) + _wall_derivative(uxx, y, 2)
            )
        else:
            rhs6 = 4.0 * d(1) * dx(3) - dx(1) * d(3) + 2.0 * d(2) * dx(2)
            if damped:
                rhs6 = rhs6 - d(1) * dx(1) + d(2)
        identities.append(("d_y^6 u|0", 6, d(6), rhs6))

    entries = []
    for name, k, lhs, rhs in identities:
        lhs, rhs = _lift(lhs), _lift(rhs)
        diff = lhs - rhs
        tol = np.broadcast_to(COMPAT_SAFETY * diff.error + COMPAT_FLOOR, diff.value.shape)
        scale = np.maximum(1.0, np.maximum(np.abs(lhs.value), np.abs(rhs.value)))
        if np.any(np.abs(diff.value) > tol):
            status = CompatStatus.VIOLATED
        elif np.all(tol <= COMPAT_RESOLUTION * scale):
            status = CompatStatus.SATISFIED
        else:
            status = CompatStatus.INCONCLUSIVE
        entries.append(CompatEntry(name=name, order=k, residual=diff.value, tolerance=tol, status=status))
        logger.debug("compat %s: %s, max residual %.3e", name, status.value, entries[-1].max_residual)
    return CompatReport(entries)


# Runs

@dataclass
class Trajectory:
    samples: List[FlowState] = field(default_factory=list)
    series: List[Dict[str, float]] = field(default_factory=list)
    norm_reports: List[NormReport] = field(default_factory=list)
    verdict: Optional[BlowupVerdict] = None

    @property
    def final(self) -> FlowState:
        return self.samples[-1]


def _perturbation_shape(grid: Grid2D, amplitude: float, mode: int, decay: float) -> np.ndarray:
    X, Y = grid.mesh()
    return amplitude * np.cos(mode * X) * Y * np.exp(-decay * Y)


def initial_state(config: ScenarioConfig, initial: Optional[Field] = None) -> Tuple[FlowState, Callable[[float], np.ndarray]]:
    """Flow state at t = 0 and the x-independent background used for perturbation series."""
    g = config.grid
    grid = build_grid(g.n_x, g.x_period, g.n_y, g.y_max, g.y_stretch)
    outer = outer_from_spec(config.outer, grid.x_period)
    spec = config.initial
    ubar = spec.ubar if spec.ubar is not None else config.outer.speed

    if spec.catalog in ("hartmann", "perturbed_hartmann"):
        base = discrete_hartmann_profile(grid.normal, ubar)
        background = lambda t: base
        values = np.tile(base, (grid.n_x, 1))
        if spec.catalog == "perturbed_hartmann":
            values = values + _perturbation_shape(grid, spec.amplitude, spec.mode, spec.decay)
    elif spec.catalog == "erf":
        background = lambda t: erf_profile(ubar, grid.y, t)
        values = np.tile(erf_profile(ubar, grid.y), (grid.n_x, 1))
        values = values + _perturbation_shape(grid, spec.amplitude, spec.mode, spec.decay)
    elif spec.catalog == "backflow_probe":
        X, Y = grid.mesh()
        values = ubar * (1.0 - np.exp(-Y * (1.0 + spec.amplitude * np.cos(spec.mode * X))))
        mean = values.mean(axis=0)
        background = lambda t: mean
    else:
        if initial is None:
            raise ParameterError("snapshot initial data must be loaded by the caller")
        if initial.grid != grid:
            raise GridMismatchError("snapshot grid differs from the configured grid")
        values = np.array(initial.values)
        mean = values.mean(axis=0)
        background = lambda t: mean

    values[:, 0] = 0.0
    values[:, -1] = outer.speed(0.0, grid.x)
    state = FlowState(0.0, Field(grid, Role.U, values), Variant(config.variant), outer, config.eps, ubar)
    return state, background


def _sample_row(state: FlowState, background: Callable[[float], np.ndarray]) -> Dict[str, float]:
    grid = state.grid
    pert = state.u.values - background(state.t)[None, :]
    l2 = math.sqrt(float(trapezoid(np.sum(pert * pert, axis=0) * grid.dx, grid.y)))
    return {
        "t": state.t,
        "perturbation_l2": l2,
        "min_wall_shear": float(np.min(diagnostics.wall_shear(state))),
        "sup_u": float(np.max(np.abs(state.u.values))),
    }


def integrate(
    state: FlowState,
    horizon: float,
    dt: Optional[float] = None,
    cfl: float = DEFAULT_CFL,
    sample_every: int = 10,
    background: Optional[Callable[[float], np.ndarray]] = None,
    norms=(),
    blowup_factor: float = 1e3,
    stop_on_backflow: bool = False,
    source: Optional[Source] = None,
) -> Trajectory:
    """Step to ``horizon`` sampling every ``sample_every`` steps and at the end."""
    if background is None:
        mean = state.u.values.mean(axis=0)
        background = lambda t: mean
    traj = Trajectory()
    threshold = blowup_factor * max(float(np.max(np.abs(state.u.values))), 1e-300)

    def sample(s: FlowState):
        traj.samples.append(s)
        row = _sample_row(s, background)
        if norms:
            pert = Field(s.grid, Role.GENERIC, s.u.values - background(s.t)[None, :])
            try:
                report = norm_report(pert, norms, t=s.t)
                traj.norm_reports.append(report)
                row.update(report.values)
            except LabError as e:
                logger.warning("norms at t=%.4g skipped: %s", s.t, e)
        traj.series.append(row)

    sample(state)
    steps = 0
    status, t_star, detail = VerdictStatus.COMPLETED_HORIZON, None, None
    logger.info("run %s: horizon %.4g on %dx%d grid", state.variant.value, horizon, *state.grid.shape)
    while state.t < horizon - 1e-12:
        dt_k = min(dt or math.inf, stable_dt(state, cfl), horizon - state.t)
        try:
            state = step(state, dt_k, cfl, source)
        except NonFiniteError as e:
            status, t_star, detail = VerdictStatus.SCHEME_BREAKDOWN, e.t, str(e)
            logger.warning("run stopped: %s", e)
            break
        steps += 1
        last = state.t >= horizon - 1e-12
        if steps % sample_every == 0 or last:
            sample(state)
            if traj.series[-1]["sup_u"] > threshold:
                status, t_star = VerdictStatus.BLOWUP, state.t
                logger.info("sup-norm threshold crossed at t=%.4g", state.t)
                break
            if stop_on_backflow and traj.series[-1]["min_wall_shear"] <= 0.0:
                logger.info("wall shear vanished at t=%.4g", state.t)
                break
    if traj.samples[-1] is not state:
        sample(state)

    history = [(row["t"], row["sup_u"]) for row in traj.series]
    if status is VerdictStatus.COMPLETED_HORIZON:
        back = diagnostics.backflow_detect(traj.samples)
        if back.detected:
            traj.verdict = BlowupVerdict(
                status=VerdictStatus.BACKFLOW,
                t_star=back.t_star,
                x_star=back.x_star,
                detail=f"boundary-first {'holds' if back.boundary_first else 'violated'}",
                sup_history=history,
            )
        else:
            traj.verdict = diagnostics.blowup_monitor(history, threshold)
    else:
        traj.verdict = BlowupVerdict(status=status, t_star=t_star, detail=detail, sup_history=history)
    logger.info("run finished at t=%.4g after %d steps: %s", state.t, steps, traj.verdict.status.value)
    return traj


def run(config: ScenarioConfig, initial: Optional[Field] = None) -> Trajectory:
    state, background = initial_state(config, initial)
    det = config.detectors
    return integrate(
        state,
        config.horizon,
        dt=config.dt,
        cfl=config.cfl,
        sample_every=config.sample_every,
        background=background,
        norms=config.norms,
        blowup_factor=det.blowup_factor,
        stop_on_backflow=det.stop_on_backflow,
    )


# Verification studies

def _order(errors: Sequence[float]) -> List[Optional[float]]:
    out: List[Optional[float]] = [None]
    for a, b in zip(errors[:-1], errors[1:]):
        out.append(math.log2(a / b) if a > 0 and b > 0 else None)
    return out


def shear_refinement_study(
    levels: int = 3,
    base_n_y: int = 41,
    y_max: float = 12.0,
    t_end: float = 1.0,
    dt_factor: float = 1.0,
) -> List[Dict[str, float]]:
    """x-independent classical runs against the heat-kernel oracle; dt shrinks with dy^2."""
    if levels < 2:
        raise ParameterError("refinement needs at least 2 levels")
    u0 = lambda s: 1.0 - math.exp(-s)
    rows = []
    for level in range(levels):
        n_y = (base_n_y - 1) * 2**level + 1
        grid = build_grid(4, 2 * math.pi, n_y, y_max)
        dy = y_max / (n_y - 1)
        dt = dt_factor * dy**2
        values = np.tile(1.0 - np.exp(-grid.y), (grid.n_x, 1))
        state = FlowState(0.0, Field(grid, Role.U, values), Variant.CLASSICAL, constant_outer(1.0))
        traj = integrate(state, t_end, dt=dt, sample_every=10**9)
        exact = heat_kernel_shear(u0, t_end, grid.y)
        err = float(np.max(np.abs(traj.final.u.values[0] - exact)))
        rows.append({"dy": dy, "dt": dt, "error": err})
    for row, order in zip(rows, _order([r["error"] for r in rows])):
        row["order"] = order
    return rows


MMS_AMPLITUDE = 0.1


def mms_exact(t: float, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return (1.0 - np.exp(-Y)) * (1.0 + MMS_AMPLITUDE * np.sin(X - t))


def mms_source(t: float, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Residual of the classical equation (P_x = 0) at the manufactured solution."""
    a = MMS_AMPLITUDE
    E = np.exp(-Y)
    g = 1.0 - E
    s, c = np.sin(X - t), np.cos(X - t)
    u = g * (1.0 + a * s)
    u_t = -a * g * c
    u_x = a * g * c
    u_y = E * (1.0 + a * s)
    u_yy = -E * (1.0 + a * s)
    v = -a * c * (Y - g)
    return u_t + u * u_x + v * u_y - u_yy


def mms_study(
    levels: int = 3,
    base_n_x: int = 16,
    base_n_y: int = 41,
    y_max: float = 10.0,
    t_end: float = 0.5,
    base_dt: float = 0.01,
) -> List[Dict[str, float]]:
    """Manufactured-solution refinement in dx, dy and dt (dt ~ dy^2)."""
    if levels < 2:
        raise ParameterError("refinement needs at least 2 levels")
    rows = []
    for level in range(levels):
        grid = build_grid(base_n_x * 2**level, 2 * math.pi, (base_n_y - 1) * 2**level + 1, y_max)
        far = lambda t, x, y_max=y_max: mms_exact(t, x, np.full_like(x, y_max))
        outer = OuterFlow(U=far, P_x=lambda t, x: np.zeros_like(x), kind="manufactured")
        X, Y = grid.mesh()
        state = FlowState(0.0, Field(grid, Role.U, mms_exact(0.0, X, Y)), Variant.CLASSICAL, outer)
        traj = integrate(state, t_end, dt=base_dt / 4**level, sample_every=10**9, source=mms_source)
        err = float(np.max(np.abs(traj.final.u.values - mms_exact(traj.final.t, X, Y))))
        rows.append({"dy": float(grid.dy[0]), "dx": grid.dx, "dt": base_dt / 4**level, "error": err})
    for row, order in zip(rows, _order([r["error"] for r in rows])):
        row["order"] = order
    return rows


def epsilon_study(
    state: FlowState, horizon: float, dt: float, eps_values: Sequence[float]
) -> List[Dict[str, float]]:
    """Final-time L2 distance between the eps-regularized runs and the eps = 0 run."""
    reference = integrate(replace(state, eps=0.0), horizon, dt=dt, sample_every=10**9).final.u.values
    grid = state.grid
    rows = []
    for eps in eps_values:
        final = integrate(replace(state, eps=float(eps)), horizon, dt=dt, sample_every=10**9).final.u.values
        diff = final - reference
        l2 = math.sqrt(float(trapezoid(np.sum(diff * diff, axis=0) * grid.dx, grid.y)))
        rows.append({"eps": float(eps), "l2_difference": l2})
    return rows
