"""Self-similar boundary-layer profiles by shooting on the wall shear.

Blasius in the form f''' + f f'' = 0 (wall shear ~0.4696; the value 0.33206
belongs to the f''' + f f''/2 convention and is reported alongside as
``wall_shear_classical``), and the power-law MHD layer
|f''|^{n-1} f''' + f f'' + beta (1 - f'^2) + N (1 - f') = 0.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from prandtl_lab.core.errors import BracketError, ConvergenceError, ParameterError

logger = logging.getLogger(__name__)

FAR_FIELD_TOL = 1e-8
DEFAULT_ETA_INF = 12.0
SHEAR_FLOOR = 1e-10
# f' beyond this is treated as a runaway trial
RUNAWAY = 10.0
GRID_STEP = 0.005


@dataclass(frozen=True, eq=False)
class SelfSimilarSolution:
    eta: np.ndarray
    f: np.ndarray
    fp: np.ndarray
    fpp: np.ndarray
    wall_shear: float
    residual: float
    far_field_error: float
    floor_hits: int = 0

    @property
    def eta_inf(self) -> float:
        return float(self.eta[-1])

    @property
    def wall_shear_classical(self) -> float:
        """Wall shear rescaled to the f''' + f f''/2 convention."""
        return self.wall_shear / math.sqrt(2.0)

    def table(self) -> np.ndarray:
        return np.column_stack((self.eta, self.f, self.fp, self.fpp))


def series_eval(alpha: float, eta) -> np.ndarray:
    """Three-term small-eta series of the Blasius solution with f''(0) = alpha.

    Accurate to ~1e-8 for eta <= 0.5 at Blasius-sized alpha; the series is
    not meant for eta beyond ~1.
    """
    eta = np.asarray(eta, dtype=float)
    return 0.5 * alpha * eta**2 - alpha**2 * eta**5 / math.factorial(5) + 11.0 * alpha**3 * eta**8 / math.factorial(8)


class _PowerLaw:
    def __init__(self, n: float, beta: float, N: float):
        self.n = n
        self.beta = beta
        self.N = N
        self.floor_hits = 0

    def __call__(self, eta: float, state: np.ndarray) -> np.ndarray:
        f, fp, fpp = state
        forcing = f * fpp + self.beta * (1.0 - fp * fp) + self.N * (1.0 - fp)
        if self.n == 1.0:
            fppp = -forcing
        else:
            mag = abs(fpp)
            if mag < SHEAR_FLOOR:
                self.floor_hits += 1
                mag = SHEAR_FLOOR
            fppp = -forcing * mag ** (1.0 - self.n)
        return np.array([fp, fpp, fppp])


def _runaway(eta: float, state: np.ndarray) -> float:
    return RUNAWAY - abs(state[1])


_runaway.terminal = True


def _shoot(rhs: _PowerLaw, alpha: float, eta_inf: float, dense: bool = False):
    return solve_ivp(
        rhs,
        (0.0, eta_inf),
        [0.0, 0.0, alpha],
        method="RK45",
        rtol=1e-11,
        atol=1e-12,
        events=_runaway,
        dense_output=dense,
    )


def _far_field_miss(rhs: _PowerLaw, eta_inf: float) -> Callable[[float], float]:
    def miss(alpha: float) -> float:
        sol = _shoot(rhs, alpha, eta_inf)
        return float(sol.y[1, -1] - 1.0)

    return miss


def _bracket(miss: Callable[[float], float]) -> Tuple[float, float]:
    trials = np.geomspace(1e-3, 50.0, 40)
    previous = None
    for alpha in trials:
        value = miss(alpha)
        if not math.isfinite(value):
            continue
        if previous is not None and previous[1] < 0.0 <= value:
            return previous[0], alpha
        previous = (alpha, value)
    raise BracketError("no sign change of f'(eta_inf) - 1 for wall shear in [1e-3, 50]")


def powerlaw_mhd_solve(
    n: float = 1.0,
    beta: float = 0.0,
    N_param: float = 0.0,
    eta_inf: float = DEFAULT_ETA_INF,
    tol: float = FAR_FIELD_TOL,
) -> SelfSimilarSolution:
    if not n > 0:
        raise ParameterError(f"power-law exponent must be positive, got {n}")
    if eta_inf < 8:
        raise ParameterError(f"eta_inf must be at least 8, got {eta_inf}")
    rhs = _PowerLaw(float(n), float(beta), float(N_param))
    miss = _far_field_miss(rhs, eta_inf)
    lo, hi = _bracket(miss)
    try:
        alpha, info = brentq(miss, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200, full_output=True)
    except RuntimeError as e:
        raise ConvergenceError(f"wall-shear iteration failed: {e}") from e
    if not info.converged:
        raise ConvergenceError(f"wall-shear iteration did not converge after {info.iterations} steps")

    rhs.floor_hits = 0
    sol = _shoot(rhs, alpha, eta_inf, dense=True)
    if sol.status != 0:
        raise ConvergenceError(f"final integration stopped early at eta={sol.t[-1]:.4g}: {sol.message}")
    eta = np.linspace(0.0, eta_inf, int(round(eta_inf / GRID_STEP)) + 1)
    f, fp, fpp = sol.sol(eta)
    f[0] = fp[0] = 0.0
    far_error = abs(fp[-1] - 1.0)
    if far_error > tol:
        raise ConvergenceError(f"|f'(eta_inf) - 1| = {far_error:.3g} exceeds tolerance {tol:.3g}")

    fppp = CubicSpline(eta, fpp).derivative()(eta)
    lhs = np.abs(fpp) ** (n - 1.0) * fppp if n != 1.0 else fppp
    residual_field = lhs + f * fpp + beta * (1.0 - fp**2) + N_param * (1.0 - fp)
    resolved = np.abs(fpp) >= 1e-4 if n != 1.0 else np.ones_like(eta, dtype=bool)
    residual = float(np.max(np.abs(residual_field[resolved]))) if resolved.any() else 0.0

    logger.info(
        "self-similar n=%g beta=%g N=%g eta_inf=%g: f''(0)=%.10f residual=%.2e floor_hits=%d",
        n, beta, N_param, eta_inf, alpha, residual, rhs.floor_hits,
    )
    return SelfSimilarSolution(
        eta=eta,
        f=f,
        fp=fp,
        fpp=fpp,
        wall_shear=float(alpha),
        residual=residual,
        far_field_error=float(far_error),
        floor_hits=rhs.floor_hits,
    )


def blasius_solve(eta_inf: float = DEFAULT_ETA_INF, tol: float = FAR_FIELD_TOL) -> SelfSimilarSolution:
    return powerlaw_mhd_solve(1.0, 0.0, 0.0, eta_inf, tol)
