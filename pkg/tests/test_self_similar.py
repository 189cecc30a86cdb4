import math

import numpy as np
import pytest
from scipy.integrate import solve_bvp

from prandtl_lab.core.errors import ParameterError
from prandtl_lab.numerics.self_similar import blasius_solve, powerlaw_mhd_solve, series_eval


def _rk4_far_speed(alpha: float, eta_inf: float = 10.0, h: float = 0.01) -> float:
    f, fp, fpp = 0.0, 0.0, alpha

    def rhs(f, fp, fpp):
        return fp, fpp, -f * fpp

    for _ in range(int(round(eta_inf / h))):
        k1 = rhs(f, fp, fpp)
        k2 = rhs(f + 0.5 * h * k1[0], fp + 0.5 * h * k1[1], fpp + 0.5 * h * k1[2])
        k3 = rhs(f + 0.5 * h * k2[0], fp + 0.5 * h * k2[1], fpp + 0.5 * h * k2[2])
        k4 = rhs(f + h * k3[0], fp + h * k3[1], fpp + h * k3[2])
        f += h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        fp += h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        fpp += h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    return fp


@pytest.fixture(scope="module")
def blasius():
    return blasius_solve()


def test_blasius_wall_shear(blasius):
    assert abs(blasius.wall_shear_classical - 0.33206) < 1e-4
    assert math.isclose(blasius.wall_shear_classical, blasius.wall_shear / math.sqrt(2.0))


def test_blasius_against_fixed_step_bisection(blasius):
    lo, hi = 0.3, 0.6
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if _rk4_far_speed(mid) < 1.0:
            lo = mid
        else:
            hi = mid
    assert abs(0.5 * (lo + hi) - blasius.wall_shear) < 1e-6


def test_blasius_matches_series_near_wall(blasius):
    near = blasius.eta <= 0.5
    series = series_eval(blasius.wall_shear, blasius.eta[near])
    assert np.max(np.abs(blasius.f[near] - series)) < 1e-8


def test_blasius_residual_and_far_field(blasius):
    assert blasius.residual < 1e-6
    assert blasius.far_field_error < 1e-8
    assert blasius.f[0] == 0.0 and blasius.fp[0] == 0.0
    assert blasius.table().shape == (blasius.eta.size, 4)


@pytest.mark.slow
def test_wall_shear_insensitive_to_truncation(blasius):
    for eta_inf in (10.0, 15.0, 20.0):
        assert abs(blasius_solve(eta_inf).wall_shear - blasius.wall_shear) < 1e-6


def test_tail_is_monotone(blasius):
    tail = blasius.eta > 3.0
    assert np.all(np.diff(blasius.fp[tail]) >= -1e-10)


def test_newtonian_powerlaw_reduces_to_blasius(blasius):
    sol = powerlaw_mhd_solve(1.0, 0.0, 0.0)
    assert abs(sol.wall_shear - blasius.wall_shear) < 1e-8


def test_magnetic_parameter_against_collocation():
    N = 1.0
    sol = powerlaw_mhd_solve(1.0, 0.0, N)

    def fun(eta, y):
        return np.vstack((y[1], y[2], -(y[0] * y[2] + N * (1.0 - y[1]))))

    def bc(ya, yb):
        return np.array([ya[0], ya[1], yb[1] - 1.0])

    eta = np.linspace(0.0, 12.0, 400)
    guess = np.vstack((eta - 1.0 + np.exp(-eta), 1.0 - np.exp(-eta), np.exp(-eta)))
    oracle = solve_bvp(fun, bc, eta, guess, tol=1e-9, max_nodes=200000)
    assert oracle.status == 0
    assert abs(sol.wall_shear - oracle.sol(0.0)[2]) < 1e-5
    assert sol.wall_shear > 0.4696
    tail = sol.eta > 3.0
    assert np.all(np.diff(sol.fp[tail]) >= -1e-10)


def test_series_arithmetic():
    assert series_eval(0.47, 0.0) == 0.0
    assert math.isclose(series_eval(1.0, 1.0), 0.5 - 1 / 120 + 11 / 40320, rel_tol=1e-15)
    h = 1e-6
    assert abs((series_eval(0.47, h) - series_eval(0.47, -h)) / (2 * h)) < 1e-9


@pytest.mark.parametrize("kwargs", [dict(n=0.0), dict(n=-1.0), dict(eta_inf=5.0)])
def test_invalid_parameters(kwargs):
    with pytest.raises(ParameterError):
        powerlaw_mhd_solve(**kwargs)
