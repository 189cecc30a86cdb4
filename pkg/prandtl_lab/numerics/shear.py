"""Shear-flow backgrounds: heat-kernel evolution, Hartmann and erf profiles."""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline
from scipy.special import erf

from prandtl_lab.core.errors import ParameterError, QuadratureError
from prandtl_lab.numerics.grid import Grid2D

logger = logging.getLogger(__name__)

# half-width of the Gaussian window in units of sqrt(t); the discarded mass is
# bounded by sup|u0| * erfc(6) < 2.2e-17
KERNEL_WINDOW = 12.0

Samples = Tuple[np.ndarray, np.ndarray]
InitialShear = Union[Callable[[float], float], Samples]


def _as_callable(u0s: InitialShear) -> Callable[[float], float]:
    if callable(u0s):
        return u0s
    y0, values = (np.asarray(a, dtype=float) for a in u0s)
    if y0.ndim != 1 or y0.shape != values.shape:
        raise ParameterError("shear samples must be two 1D arrays of equal length")
    if not np.all(np.isfinite(values)):
        raise ParameterError("shear samples must be finite")
    spline = CubicSpline(y0, values)
    last = float(values[-1])

    def u0(y: float) -> float:
        return float(spline(y)) if y <= y0[-1] else last

    return u0


def heat_kernel_shear(u0s: InitialShear, t: float, y: Sequence[float]) -> np.ndarray:
    """Evolve shear data by the half-line heat equation with u(t, 0) = 0.

    Image-kernel representation, evaluated node by node with adaptive
    quadrature over a window of +-12 sqrt(t) around each query point.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    u0 = _as_callable(u0s)
    if t < 0 or not math.isfinite(t):
        raise ParameterError(f"t must be a finite nonnegative time, got {t}")
    if t == 0:
        return np.array([u0(float(q)) for q in y])

    four_t = 4.0 * t
    norm = 1.0 / (2.0 * math.sqrt(math.pi * t))
    half = KERNEL_WINDOW * math.sqrt(t)
    out = np.empty_like(y)
    for i, q in enumerate(y):
        if q == 0.0:
            out[i] = 0.0
            continue

        def integrand(s: float, q=q) -> float:
            return (math.exp(-((q - s) ** 2) / four_t) - math.exp(-((q + s) ** 2) / four_t)) * u0(s)

        lo, hi = max(0.0, q - half), q + half
        result = quad(integrand, lo, hi, points=[q], epsrel=1e-8, epsabs=1e-13, limit=200, full_output=1)
        if len(result) == 4:
            raise QuadratureError(f"heat-kernel quadrature did not converge at y={q:.6g}, t={t:.6g}: {result[3]}")
        out[i] = norm * result[0]
    return out


def hartmann_profile(ubar: float, y) -> np.ndarray:
    return ubar * (1.0 - np.exp(-np.asarray(y, dtype=float)))


def hartmann_derivative(ubar: float, y) -> np.ndarray:
    return ubar * np.exp(-np.asarray(y, dtype=float))


def erf_profile(ubar: float, y, t: float = 0.0) -> np.ndarray:
    """Self-similar heat solution ubar * erf(y / (2 sqrt(1 + t)))."""
    return ubar * erf(np.asarray(y, dtype=float) / (2.0 * math.sqrt(1.0 + t)))


class ShearKind(str, Enum):
    HEAT_KERNEL = "heat_kernel"
    HARTMANN = "hartmann"
    ERF_SELF_SIMILAR = "erf_self_similar"


@dataclass(frozen=True, eq=False)
class ShearProfile:
    kind: ShearKind
    ubar: float = 1.0
    samples: Optional[Samples] = None
    grid: Optional[Grid2D] = None

    def values(self, t: float, y) -> np.ndarray:
        if self.kind is ShearKind.HARTMANN:
            return hartmann_profile(self.ubar, y)
        if self.kind is ShearKind.ERF_SELF_SIMILAR:
            return erf_profile(self.ubar, y, t)
        if self.samples is None:
            raise ParameterError("heat_kernel profile needs initial samples")
        return heat_kernel_shear(self.samples, t, y)


def hartmann(ubar: float = 1.0) -> ShearProfile:
    return ShearProfile(ShearKind.HARTMANN, ubar=ubar)


def erf_self_similar(ubar: float = 1.0) -> ShearProfile:
    return ShearProfile(ShearKind.ERF_SELF_SIMILAR, ubar=ubar)


def heat_kernel(y0: np.ndarray, values: np.ndarray, grid: Optional[Grid2D] = None) -> ShearProfile:
    samples = (np.asarray(y0, dtype=float), np.asarray(values, dtype=float))
    return ShearProfile(ShearKind.HEAT_KERNEL, samples=samples, grid=grid)


@dataclass(frozen=True)
class DecayReport:
    passed: bool
    worst_y: float
    worst_ratio: float
    constant: float


def _decay_window(derivative: np.ndarray, y: np.ndarray, buffer: float):
    y = np.asarray(y, dtype=float)
    d = np.asarray(derivative, dtype=float)
    keep = y <= y[-1] - buffer
    return d[keep], y[keep]


def fit_decay_constant(derivative: np.ndarray, y: np.ndarray, rate: float = 0.25, buffer: float = 2.0) -> float:
    """Smallest C with C^-1 e^{-rate y} <= derivative <= C e^{-rate y} on the window."""
    d, yy = _decay_window(derivative, y, buffer)
    if np.any(d <= 0):
        raise ParameterError("decay fit needs a strictly positive derivative profile")
    ratio = d / np.exp(-rate * yy)
    return float(max(ratio.max(), 1.0 / ratio.min()))


def decay_bound_check(
    derivative: np.ndarray, y: np.ndarray, C: float, rate: float = 0.25, buffer: float = 2.0
) -> DecayReport:
    """Check C^-1 e^{-y/4} <= d_y u <= C e^{-y/4} on nodes with y <= y_max - 2."""
    if C <= 1:
        raise ParameterError(f"decay constant must exceed 1, got {C}")
    d, yy = _decay_window(derivative, y, buffer)
    envelope = np.exp(-rate * yy)
    with np.errstate(divide="ignore"):
        excess = np.maximum(d / (C * envelope), (envelope / C) / np.where(d > 0, d, 0.0))
    worst = int(np.argmax(excess))
    return DecayReport(
        passed=bool(np.all(excess <= 1.0)),
        worst_y=float(yy[worst]),
        worst_ratio=float(excess[worst]),
        constant=C,
    )
