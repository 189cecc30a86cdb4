"""Detectors attached to runs: blow-up, back-flow, extremum and monotonicity
monitors, the Bernoulli consistency of an outer flow, and the reduced 1D
equation a_t = a_yy + a^2 - a_y int_0^y a obtained from u = -x a(t, y).

Detectors are pure folds over trajectories and never raise on a finding.
This module only relies on duck-typed flow states (``.t``, ``.u``,
``.grid``) so the solvers can import it.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from prandtl_lab.core.errors import CFLViolation, DecayError, NonFiniteError, ParameterError
from prandtl_lab.numerics.grid import (
    NormalAxis,
    finite_difference_weights,
    first_bad_node,
    normal_derivative,
    solve_implicit_diffusion,
    upwind_normal,
)
from prandtl_lab.schemas import BlowupVerdict, VerdictStatus

logger = logging.getLogger(__name__)

DEFAULT_BLOWUP_FACTOR = 1e3
EE_CFL = 0.5
# dt <= EE_GROWTH / max|a| keeps the quadratic source resolved near blow-up
EE_GROWTH = 0.2
# normal band excluded from interior checks next to y_max
FAR_BUFFER = 2.0


def _require_decay(a: np.ndarray, tol: float = 1e-6) -> None:
    scale = max(1.0, float(np.max(np.abs(a))))
    if abs(a[-1]) > tol * scale:
        raise DecayError(f"profile does not decay: a(y_max) = {a[-1]:.3g}")


def ee_energy(a: np.ndarray, y: np.ndarray, variant: str = "minus") -> float:
    """int (a_y^2/2 - a^3/4) dy (``minus``) or int (a_y^2/2 + a^3/4) dy (``plus``)."""
    if variant not in ("minus", "plus"):
        raise ParameterError(f"energy variant must be 'minus' or 'plus', got {variant!r}")
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    _require_decay(a)
    ay = np.gradient(a, y, edge_order=2)
    sign = -1.0 if variant == "minus" else 1.0
    return float(trapezoid(0.5 * ay * ay + sign * 0.25 * a**3, y))


def ee_stable_dt(a: np.ndarray, normal: NormalAxis, dt_max: float = 1e-2) -> float:
    A = cumulative_trapezoid(a, normal.nodes, initial=0.0)
    limits = [dt_max]
    amax = float(np.max(np.abs(a)))
    if amax > 0:
        limits.append(EE_GROWTH / amax)
    speed = float(np.max(np.abs(A[1:]) / normal.spacings))
    if speed > 0:
        limits.append(EE_CFL / speed)
    return min(limits)


def ee_step(a: np.ndarray, normal: NormalAxis, dt: float) -> np.ndarray:
    """One IMEX step: implicit a_yy, explicit a^2 and upwinded -A a_y with A = int_0^y a."""
    a = np.asarray(a, dtype=float)
    A = cumulative_trapezoid(a, normal.nodes, initial=0.0)
    speed = float(np.max(np.abs(A[1:]) / normal.spacings))
    if dt * speed > 1.0:
        raise CFLViolation(dt, 1.0 / speed)
    # -A a_y is advection with velocity A
    rhs = a + dt * (a * a - A * upwind_normal(a, A, normal))
    new = solve_implicit_diffusion(normal, rhs, dt, wall=0.0, far=0.0)
    node = first_bad_node(new)
    if node is not None:
        raise NonFiniteError(node, what="a")
    return new


@dataclass
class EERun:
    t: List[float] = field(default_factory=list)
    sup: List[float] = field(default_factory=list)
    energy: List[float] = field(default_factory=list)
    final: Optional[np.ndarray] = None
    verdict: Optional[BlowupVerdict] = None


def ee_run(
    a0: np.ndarray,
    normal: NormalAxis,
    horizon: float,
    dt_max: float = 1e-2,
    blowup_factor: float = DEFAULT_BLOWUP_FACTOR,
    energy_variant: str = "minus",
    sample_every: int = 1,
) -> EERun:
    """Drive ee_step with adaptive dt until the horizon or the sup-norm threshold."""
    a = np.array(a0, dtype=float)
    a[0] = a[-1] = 0.0
    initial_sup = float(np.max(np.abs(a)))
    threshold = blowup_factor * initial_sup if initial_sup > 0 else math.inf
    out = EERun()
    y = normal.nodes

    def record(t: float, values: np.ndarray):
        out.t.append(t)
        out.sup.append(float(np.max(np.abs(values))))
        try:
            out.energy.append(ee_energy(values, y, energy_variant))
        except DecayError:
            out.energy.append(math.nan)

    t, steps = 0.0, 0
    record(t, a)
    breakdown = None
    while t < horizon - 1e-12:
        dt = min(ee_stable_dt(a, normal, dt_max), horizon - t)
        try:
            a = ee_step(a, normal, dt)
        except NonFiniteError:
            out.t.append(t + dt)
            out.sup.append(math.nan)
            out.energy.append(math.nan)
            breakdown = t + dt
            break
        t += dt
        steps += 1
        if steps % sample_every == 0 or out.sup[-1] * 2 > threshold or t >= horizon - 1e-12:
            record(t, a)
            if out.sup[-1] > threshold:
                break
    if breakdown is None and out.t[-1] != t:
        record(t, a)
    out.final = a
    out.verdict = blowup_monitor(list(zip(out.t, out.sup)), threshold, list(zip(out.t, out.energy)))
    logger.info("ee run: %s at t=%.6g after %d steps", out.verdict.status.value, out.verdict.t_star or t, steps)
    return out


def blowup_monitor(
    history: Sequence[Tuple[float, float]],
    threshold: float,
    energy_history: Optional[Sequence[Tuple[float, float]]] = None,
) -> BlowupVerdict:
    """First crossing of the sup-norm threshold, interpolated linearly in t."""
    hist = [(float(t), float(s)) for t, s in history]
    energy = [(float(t), float(e)) for t, e in (energy_history or []) if math.isfinite(e)]
    for k, (t, s) in enumerate(hist):
        if not math.isfinite(s):
            return BlowupVerdict(
                status=VerdictStatus.SCHEME_BREAKDOWN,
                t_star=t,
                detail="non-finite values",
                sup_history=hist[:k],
                energy_history=energy,
            )
        if s > threshold:
            t_star = t
            if k > 0:
                t0, s0 = hist[k - 1]
                t_star = t0 + (threshold - s0) / (s - s0) * (t - t0)
            return BlowupVerdict(
                status=VerdictStatus.BLOWUP,
                t_star=t_star,
                sup_history=hist[: k + 1],
                energy_history=energy,
            )
    return BlowupVerdict(status=VerdictStatus.COMPLETED_HORIZON, sup_history=hist, energy_history=energy)


def wall_shear(state) -> np.ndarray:
    """d_y u at the wall, one x value per column (three-point one-sided)."""
    y = state.grid.y
    w = finite_difference_weights(y[:3] - y[0], 1)
    return state.u.values[:, :3] @ w


@dataclass(frozen=True)
class BackflowReport:
    detected: bool
    t_star: Optional[float] = None
    x_star: Optional[float] = None
    boundary_first: Optional[bool] = None
    interior_min: Optional[float] = None


def backflow_detect(trajectory: Sequence) -> BackflowReport:
    """Earliest (t*, x*) with d_y u(t, x, 0) <= 0, plus the boundary-first check."""
    if not trajectory:
        return BackflowReport(False)
    times = np.array([s.t for s in trajectory])
    shear = np.array([wall_shear(s) for s in trajectory])
    grid = trajectory[0].grid
    best_t, best_j, best_k, best_theta = math.inf, None, None, 0.0
    for j in range(shear.shape[1]):
        hits = np.nonzero(shear[:, j] <= 0.0)[0]
        if hits.size == 0:
            continue
        k = int(hits[0])
        if k == 0:
            t_j, theta = times[0], 1.0
        else:
            s0, s1 = shear[k - 1, j], shear[k, j]
            theta = s0 / (s0 - s1)
            t_j = times[k - 1] + theta * (times[k] - times[k - 1])
        if t_j < best_t:
            best_t, best_j, best_k, best_theta = t_j, j, k, theta
    if best_j is None:
        return BackflowReport(False)

    later = normal_derivative(trajectory[best_k].u.values, grid.normal, 1, axis=1)
    if best_k > 0:
        earlier = normal_derivative(trajectory[best_k - 1].u.values, grid.normal, 1, axis=1)
        dyu = (1.0 - best_theta) * earlier + best_theta * later
    else:
        dyu = later
    window = (grid.y > 0.0) & (grid.y <= grid.y_max - FAR_BUFFER)
    interior_min = float(np.min(dyu[:, window]))
    boundary_first = interior_min > 0.0
    x_star = float(grid.x[best_j])
    if boundary_first:
        logger.info("back-flow at t*=%.5g, x*=%.4g; interior still monotone", best_t, x_star)
    else:
        logger.warning("back-flow at t*=%.5g, x*=%.4g with interior min %.3g <= 0", best_t, x_star, interior_min)
    return BackflowReport(True, float(best_t), x_star, boundary_first, interior_min)


@dataclass(frozen=True)
class ExtremumReport:
    passed: bool
    worst_index: int
    worst_excess: float
    bounds: List[float]


def extremum_principle_check(
    times: Sequence[float],
    sup_history: Sequence[float],
    wall_history: Sequence[float],
    lam: float = 0.0,
    rel_tol: float = 1e-6,
    abs_tol: float = 1e-10,
) -> ExtremumReport:
    """sup H(t) <= max{e^{lam t} ||H(0)||, max_tau e^{lam (t - tau)} ||H(tau)|_{y=0}||} at every sample."""
    t = np.asarray(times, dtype=float)
    H = np.asarray(sup_history, dtype=float)
    wall = np.asarray(wall_history, dtype=float)
    if not (t.shape == H.shape == wall.shape):
        raise ParameterError("times, sup history and wall history must have equal length")
    bounds, excess = [], []
    for k in range(t.size):
        initial = math.exp(lam * (t[k] - t[0])) * H[0]
        boundary = float(np.max(np.exp(lam * (t[k] - t[: k + 1])) * wall[: k + 1]))
        bound = max(initial, boundary)
        bounds.append(bound)
        excess.append(H[k] - (bound * (1.0 + rel_tol) + abs_tol))
    worst = int(np.argmax(excess))
    passed = bool(excess[worst] <= 0.0)
    if not passed:
        logger.info("extremum bound exceeded at sample %d by %.3g", worst, excess[worst])
    return ExtremumReport(passed, worst, float(excess[worst]), bounds)


@dataclass(frozen=True)
class MonotonicityReport:
    minimum: float
    flagged: bool
    at_wall: bool
    location: Tuple[float, float]


def monotonicity_monitor(state) -> MonotonicityReport:
    grid = state.grid
    dyu = normal_derivative(state.u.values, grid.normal, 1, axis=1)
    i, j = np.unravel_index(np.argmin(dyu), dyu.shape)
    minimum = float(dyu[i, j])
    return MonotonicityReport(
        minimum=minimum,
        flagged=minimum <= 0.0,
        at_wall=bool(j == 0),
        location=(float(grid.x[i]), float(grid.y[j])),
    )


def bernoulli_residual(outer, times: Sequence[float], x: Sequence[float]) -> float:
    """max |U_t + U U_x + P_x| over the sample set."""
    x = np.asarray(x, dtype=float)
    worst = 0.0
    for t in times:
        ut, ux = outer.derivatives(float(t), x)
        res = ut + outer.speed(float(t), x) * ux + outer.pressure_gradient(float(t), x)
        worst = max(worst, float(np.max(np.abs(res))))
    return worst
