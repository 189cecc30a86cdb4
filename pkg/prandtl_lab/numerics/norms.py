"""Weighted-norm instrumentation.

Tangential derivatives are taken in the discrete Fourier representation (the
tangential direction is periodic); normal derivatives use the grid stencils.
All y-integrals are truncated at y_max and carry a tail estimate obtained by
fitting an exponential to the last two nodes of the integrand.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.special import gammaln

from prandtl_lab.core.errors import ParameterError, PositivityError, ResolutionError, TailError
from prandtl_lab.numerics.grid import Field, normal_derivative, spectral_derivative
from prandtl_lab.schemas import NormReport, WeightParams

logger = logging.getLogger(__name__)

# spectral energy allowed in the top third of the resolved wavenumbers
ALIASING_FRACTION = 1e-6
DEFAULT_M_MAX = 16
# ratio bound for f_k = cos(kx) e^{-y}, k <= 64; the family maximum is 0.4287 at k = 1
AGMON_REGRESSION_BOUND = 0.435


def _dx(f: Field, order: int) -> np.ndarray:
    return spectral_derivative(f.values, f.grid.x_period, order, axis=0)


def _dy(values: np.ndarray, f: Field, order: int) -> np.ndarray:
    return normal_derivative(values, f.grid.normal, order, axis=1)


def _derivative(f: Field, a1: int, a2: int) -> np.ndarray:
    return _dy(_dx(f, a1), f, a2)


def _profile(f: Field, integrand: np.ndarray) -> np.ndarray:
    """x-integrated density along y (periodic rectangle rule = trapezoid)."""
    return integrand.sum(axis=0) * f.grid.dx


def _integrate(f: Field, integrand: np.ndarray) -> float:
    return float(trapezoid(_profile(f, integrand), f.grid.y))


def tail_estimate(profile: np.ndarray, y: np.ndarray) -> Optional[float]:
    """Exponential extrapolation of int_{y_max}^inf; None when the profile does not decay."""
    last, before = float(profile[-1]), float(profile[-2])
    if last == 0.0:
        return 0.0
    if before <= last or before <= 0.0:
        return None
    rate = math.log(before / last) / (y[-1] - y[-2])
    return last / rate


def _check_resolution(f: Field, s: int) -> None:
    n = f.grid.n_x
    if s > n // 2:
        raise ResolutionError(f"{n} tangential nodes cannot carry {s} x-derivatives")
    spectrum = np.abs(np.fft.rfft(f.values, axis=0)) ** 2
    total = spectrum.sum()
    if total == 0.0:
        return
    cutoff = (2 * spectrum.shape[0]) // 3
    if spectrum[cutoff:].sum() > ALIASING_FRACTION * total:
        raise ResolutionError(
            f"spectral energy above 2/3 of the Nyquist wavenumber exceeds {ALIASING_FRACTION:g}; refine n_x"
        )


def _weight(f: Field, power: float) -> np.ndarray:
    return (1.0 + f.grid.y)[None, :] ** power


def _sobolev_terms(f: Field, s: int, gamma: float, skip_top_x: bool) -> Tuple[float, np.ndarray]:
    total = 0.0
    profile = np.zeros(f.grid.n_y)
    for a1 in range(s + 1):
        if skip_top_x and a1 == s:
            continue
        for a2 in range(s - a1 + 1):
            g = _weight(f, gamma + a2) * _derivative(f, a1, a2)
            density = g * g
            profile += _profile(f, density)
            total += _integrate(f, density)
    return total, profile


def sobolev_weighted(w: Field, p: WeightParams) -> float:
    """||w||_{H^{s,gamma}}: sum over |alpha| <= s of ||(1+y)^{gamma+alpha_2} D^alpha w||."""
    _check_resolution(w, p.s)
    total, _ = _sobolev_terms(w, p.s, p.gamma, skip_top_x=False)
    return math.sqrt(total)


@dataclass(frozen=True, eq=False)
class GsQuantity:
    field: Field
    identity_residual: float


def _require_positive(w: Field) -> None:
    bad = np.argwhere(w.values <= 0.0)
    if bad.size:
        node = tuple(int(i) for i in bad[0])
        raise PositivityError(node, float(w.values[node]))


def _outer_row(U, f: Field) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    if U.ndim == 0:
        return np.full((f.grid.n_x, 1), float(U))
    return U.reshape(f.grid.n_x, 1)


def gs_quantity(w: Field, u: Field, U, s: int, buffer: float = 2.0) -> GsQuantity:
    """g_s = d_x^s w - (d_y w / w) d_x^s (u - U), plus the residual of g_s = w d_y(d_x^s(u-U)/w)."""
    _require_positive(w)
    deficit = u.values - _outer_row(U, u)
    F = spectral_derivative(deficit, u.grid.x_period, s, axis=0)
    wv = w.values
    g = _dx(w, s) - _dy(wv, w, 1) / wv * F
    other = wv * _dy(F / wv, w, 1)
    window = w.grid.y <= w.grid.y_max - buffer
    residual = float(np.max(np.abs(g - other)[:, window]))
    logger.debug("g_%d identity residual %.3e", s, residual)
    return GsQuantity(field=w.with_values(g), identity_residual=residual)


def hg_norm(w: Field, u: Field, U, p: WeightParams) -> float:
    """||w||_{H_g}: the top pure-x term of H^{s,gamma} replaced by the g_s term."""
    _check_resolution(w, p.s)
    gs = gs_quantity(w, u, U, p.s)
    g = _weight(w, p.gamma) * gs.field.values
    lower, _ = _sobolev_terms(w, p.s, p.gamma, skip_top_x=True)
    return math.sqrt(_integrate(w, g * g) + lower)


@dataclass(frozen=True)
class MembershipReport:
    passed: bool
    lower_bound_ok: bool
    derivative_bound_ok: bool
    worst_node: Tuple[int, int]
    worst_lower: float
    worst_derivative: float


def class_membership(w: Field, p: WeightParams, buffer: float = 2.0) -> MembershipReport:
    """Pointwise conditions of H^{s,gamma}_{sigma,delta} on nodes with y <= y_max - 2."""
    window = w.grid.y <= w.grid.y_max - buffer
    lower = _weight(w, p.sigma) * np.abs(w.values)
    deriv = np.zeros_like(w.values)
    for a1 in range(3):
        for a2 in range(3 - a1):
            g = _weight(w, p.sigma + a2) * _derivative(w, a1, a2)
            deriv += g * g
    lower_w, deriv_w = lower[:, window], deriv[:, window]
    lower_ok = bool(np.all(lower_w >= p.delta))
    deriv_ok = bool(np.all(deriv_w <= 1.0 / p.delta**2))
    if not lower_ok:
        node = np.unravel_index(np.argmin(lower_w), lower_w.shape)
    else:
        node = np.unravel_index(np.argmax(deriv_w), deriv_w.shape)
    return MembershipReport(
        passed=lower_ok and deriv_ok,
        lower_bound_ok=lower_ok,
        derivative_bound_ok=deriv_ok,
        worst_node=(int(node[0]), int(node[1])),
        worst_lower=float(lower_w.min()),
        worst_derivative=float(deriv_w.max()),
    )


def _decaying(profile: np.ndarray) -> bool:
    if not np.any(profile):
        return True
    start = int(0.9 * profile.size)
    tail = profile[start:]
    return bool(tail[-1] < tail[0] and tail[-1] <= 1e-2 * profile.max())


def exp_weight_norm(f: Field, m: int, mu_rate: float = 0.25, mixed_only: bool = False) -> Tuple[float, Optional[float]]:
    """||f||_{H^m_mu} with weight e^{mu_rate y}; ``mixed_only`` gives H^{m,m-1}_mu.

    Returns (value, tail estimate). The weighted integrand must decay.
    """
    weight = np.exp(mu_rate * f.grid.y)[None, :]
    total = 0.0
    profile = np.zeros(f.grid.n_y)
    for a1 in range(m + 1):
        if mixed_only and a1 == m and m > 0:
            continue
        for a2 in range(m - a1 + 1):
            g = weight * _derivative(f, a1, a2)
            density = g * g
            profile += _profile(f, density)
            total += _integrate(f, density)
    if not _decaying(profile):
        raise TailError(f"e^({mu_rate:g} y)-weighted integrand does not decay toward y_max")
    return math.sqrt(total), tail_estimate(profile, f.grid.y)


def factorial_weight_log(m: int) -> float:
    """log M_m with M_m = sqrt(m+1)/m!."""
    return 0.5 * math.log(m + 1.0) - float(gammaln(m + 1.0))


def factorial_weight(m: int) -> float:
    return math.exp(factorial_weight_log(m))


def gaussian_weight(y: np.ndarray, alpha: float, t: float) -> np.ndarray:
    """theta_alpha = exp(alpha z^2 / 4), z = y / sqrt(<t>), <t> = 1 + t."""
    z2 = np.asarray(y, dtype=float) ** 2 / (1.0 + t)
    return np.exp(0.25 * alpha * z2)


@dataclass(frozen=True)
class AnalyticSeminorms:
    X: List[float]
    D: List[float]
    Y: List[float]
    X_sum: float
    D_sum: float
    Y_sum: float
    underflow: List[int] = field(default_factory=list)


def _gaussian_l2(f: Field, values: np.ndarray, theta: np.ndarray) -> Tuple[float, np.ndarray]:
    g = theta * values
    profile = _profile(f, g * g)
    return math.sqrt(float(trapezoid(profile, f.grid.y))), profile


def analytic_seminorms(
    f: Field, p: WeightParams, m_max: int = DEFAULT_M_MAX, t: float = 0.0
) -> AnalyticSeminorms:
    theta = gaussian_weight(f.grid.y, p.alpha, t)[None, :]
    log_tiny = math.log(np.finfo(float).tiny)
    X, D, Y, underflow = [], [], [], []
    for m in range(m_max + 1):
        dm = _dx(f, m)
        norm_x, profile = _gaussian_l2(f, dm, theta)
        if m == 0 and not _decaying(profile):
            raise TailError("Gaussian-weighted integrand diverges toward y_max")
        norm_d, _ = _gaussian_l2(f, _dy(dm, f, 1), theta)
        log_w = m * math.log(p.tau) + factorial_weight_log(m)
        if log_w < log_tiny:
            underflow.append(m)
        X.append(norm_x * math.exp(log_w) if norm_x > 0 else 0.0)
        D.append(norm_d * math.exp(log_w) if norm_d > 0 else 0.0)
        if m >= 1:
            log_wy = (m - 1) * math.log(p.tau) + math.log(m) + factorial_weight_log(m)
            Y.append(norm_x * math.exp(log_wy) if norm_x > 0 else 0.0)
        else:
            Y.append(0.0)
    if underflow:
        logger.info("factorial weights underflow for m in %s", underflow)
    return AnalyticSeminorms(X, D, Y, float(sum(X)), float(sum(D)), float(sum(Y)), underflow)


@dataclass(frozen=True)
class RadiusHistory:
    t: np.ndarray
    tau: np.ndarray
    floor_crossing: Optional[float]


def radius_ode(
    t: Sequence[float],
    x_norm: Sequence[float],
    d_norm: Sequence[float],
    C: float,
    tau0: float,
) -> RadiusHistory:
    """tau^{3/2}(t) = tau0^{3/2} - (3C/2) int_0^t (X + <s>^{1/4} D) ds, stopped at tau0/4."""
    t = np.asarray(t, dtype=float)
    rate = np.asarray(x_norm, dtype=float) + (1.0 + t) ** 0.25 * np.asarray(d_norm, dtype=float)
    drop = 1.5 * C * cumulative_trapezoid(rate, t, initial=0.0)
    tau32 = tau0**1.5 - drop
    floor32 = (tau0 / 4.0) ** 1.5
    below = np.nonzero(tau32 <= floor32)[0]
    crossing = None
    if below.size:
        k = int(below[0])
        if k == 0:
            crossing = float(t[0])
        else:
            frac = (tau32[k - 1] - floor32) / (tau32[k - 1] - tau32[k])
            crossing = float(t[k - 1] + frac * (t[k] - t[k - 1]))
        logger.info("analyticity radius reaches tau0/4 at t=%.6g", crossing)
        t, tau32 = t[:k], tau32[:k]
    return RadiusHistory(t=t, tau=np.maximum(tau32, 0.0) ** (2.0 / 3.0), floor_crossing=crossing)


@dataclass(frozen=True)
class Lifespan:
    T_eps: float
    feasible: bool
    C1: float
    C2: float
    constraint_terms: Tuple[float, float, float]


def lifespan_predict(eps: float, tau0: float, alpha: float, C: float) -> Lifespan:
    if not 0.25 <= alpha <= 0.5:
        raise ParameterError(f"alpha must lie in [1/4, 1/2], got {alpha}")
    if not 0.0 < eps < 1.0:
        raise ParameterError(f"eps must lie in (0, 1), got {eps}")
    if not C > 0:
        raise ParameterError(f"C must be positive, got {C}")
    C1 = 3.0 * C * (alpha + 2.0) / (2.0 * alpha)
    C2 = (7.0 * tau0**1.5 / (8.0 * C1)) ** (4.0 / 3.0)
    T_eps = C2 * eps ** (-4.0 / 3.0) - 1.0
    terms = (
        7.0 * eps / (8.0 * C1),
        128.0 * math.sqrt(2.0) * C * eps,
        256.0 * math.sqrt(2.0) * C * C2**0.75 / alpha,
    )
    return Lifespan(T_eps=T_eps, feasible=max(terms) <= tau0**1.5, C1=C1, C2=C2, constraint_terms=terms)


@dataclass(frozen=True)
class InequalityCheck:
    lhs: float
    rhs: float
    passed: bool


def hardy_check(f: Field, lam: float, tol: float = 0.02) -> InequalityCheck:
    """||(1+y)^lam f|| <= 2/(2 lam + 1) ||(1+y)^{lam+1} d_y f||."""
    if not lam > -0.5:
        raise ParameterError(f"Hardy exponent must exceed -1/2, got {lam}")
    a = _weight(f, lam) * f.values
    b = _weight(f, lam + 1.0) * _dy(f.values, f, 1)
    lhs = math.sqrt(_integrate(f, a * a))
    rhs = 2.0 / (2.0 * lam + 1.0) * math.sqrt(_integrate(f, b * b))
    return InequalityCheck(lhs, rhs, lhs <= rhs * (1.0 + tol))


def poincare_check(f: Field, alpha: float, t: float, m: int, tol: float = 0.02) -> InequalityCheck:
    """(alpha/<t>) ||theta d_x^m f||^2 <= ||theta d_y d_x^m f||^2 for f vanishing at the wall."""
    theta = gaussian_weight(f.grid.y, alpha, t)[None, :]
    dm = _dx(f, m)
    left, _ = _gaussian_l2(f, dm, theta)
    right, _ = _gaussian_l2(f, _dy(dm, f, 1), theta)
    lhs = alpha / (1.0 + t) * left**2
    rhs = right**2
    return InequalityCheck(lhs, rhs, lhs <= rhs * (1.0 + tol))


def agmon_ratio(f: Field) -> float:
    """||f||_{L^inf_x L^2_y} / (||f||^{1/2} ||f||_{H^1}^{1/2})."""
    vals = f.values
    sup_l2 = math.sqrt(float(np.max(trapezoid(vals * vals, f.grid.y, axis=1))))
    l2 = _integrate(f, vals * vals)
    fx = _dx(f, 1)
    fy = _dy(vals, f, 1)
    h1 = l2 + _integrate(f, fx * fx) + _integrate(f, fy * fy)
    if l2 == 0.0:
        return 0.0
    return sup_l2 / (l2**0.25 * h1**0.25)


def norm_report(
    f: Field,
    params: Sequence[WeightParams],
    t: float = 0.0,
    m_max: int = DEFAULT_M_MAX,
    u: Optional[Field] = None,
    U=None,
) -> NormReport:
    """Every norm the instrumentation knows, for each requested parameter set."""
    values: Dict[str, float] = {}
    tails: Dict[str, Optional[float]] = {}
    for i, p in enumerate(params):
        tag = f"[{i}]"
        total, profile = _sobolev_terms(f, p.s, p.gamma, skip_top_x=False)
        _check_resolution(f, p.s)
        values[f"H^{p.s},{p.gamma:g}{tag}"] = math.sqrt(total)
        tails[f"H^{p.s},{p.gamma:g}{tag}"] = tail_estimate(profile, f.grid.y)
        try:
            value, tail = exp_weight_norm(f, p.s, p.mu_rate)
            values[f"H^{p.s}_mu{tag}"] = value
            tails[f"H^{p.s}_mu{tag}"] = tail
        except TailError as e:
            logger.info("skipping exponential-weight norm %s: %s", tag, e)
        try:
            semis = analytic_seminorms(f, p, m_max=m_max, t=t)
            values[f"X_tau{tag}"] = semis.X_sum
            values[f"D_tau{tag}"] = semis.D_sum
            values[f"Y_tau{tag}"] = semis.Y_sum
        except TailError as e:
            logger.info("skipping analytic seminorms %s: %s", tag, e)
        if u is not None and U is not None and p.s >= 1 and np.all(f.values > 0):
            values[f"H_g^{p.s},{p.gamma:g}{tag}"] = hg_norm(f, u, U, p)
    grid = {
        "n_x": f.grid.n_x,
        "x_period": f.grid.x_period,
        "n_y": f.grid.n_y,
        "y_max": f.grid.y_max,
        "y_stretch": f.grid.y_stretch,
    }
    return NormReport(values=values, t=t, grid=grid, m_max=m_max, tail_estimate=tails)
