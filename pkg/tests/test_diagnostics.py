import math

import numpy as np
import pytest

from prandtl_lab.core.errors import DecayError, ParameterError
from prandtl_lab.numerics.diagnostics import (
    backflow_detect,
    bernoulli_residual,
    blowup_monitor,
    ee_energy,
    ee_run,
    ee_step,
    extremum_principle_check,
    monotonicity_monitor,
)
from prandtl_lab.numerics.grid import Field, NormalAxis, Role, build_grid
from prandtl_lab.numerics.solver2d import (
    FlowState,
    OuterFlow,
    Variant,
    constant_outer,
    integrate,
    traveling_wave,
    vorticity_of,
)
from prandtl_lab.schemas import VerdictStatus


@pytest.fixture
def normal():
    return NormalAxis(201, 20.0)


def _state(u: Field) -> FlowState:
    return FlowState(0.0, u, Variant.CLASSICAL, constant_outer(1.0))


def test_ee_energy_closed_forms():
    y = np.linspace(0.0, 30.0, 3001)
    assert ee_energy(np.zeros_like(y), y) == 0.0
    c7 = ee_energy(7.0 * y * np.exp(-y), y)
    assert c7 == pytest.approx(49 / 8 - 343 / 54, abs=1e-3)
    assert c7 < 0
    assert ee_energy(y * np.exp(-y), y) == pytest.approx(1 / 8 - 1 / 54, abs=1e-4)
    assert ee_energy(y * np.exp(-y), y, "plus") == pytest.approx(1 / 8 + 1 / 54, abs=1e-4)


def test_ee_energy_errors():
    y = np.linspace(0.0, 10.0, 101)
    with pytest.raises(DecayError):
        ee_energy(y, y)
    with pytest.raises(ParameterError):
        ee_energy(y * np.exp(-y) * 0.0, y, "neutral")


def test_ee_energy_variant_checked_before_profile():
    y = np.linspace(0.0, 10.0, 101)
    with pytest.raises(ParameterError, match="neutral"):
        ee_energy(y, y, "neutral")


def test_ee_step_preserves_zero(normal):
    a = np.zeros(normal.n)
    assert np.all(ee_step(a, normal, 0.01) == 0.0)


def test_small_ee_data_decays(normal):
    y = normal.nodes
    run = ee_run(0.01 * y * np.exp(-y), normal, 5.0, sample_every=50)
    assert run.verdict.status is VerdictStatus.COMPLETED_HORIZON
    assert run.sup[-1] < run.sup[0]
    assert run.t[-1] == pytest.approx(5.0)


def test_negative_energy_data_blows_up(normal):
    y = normal.nodes
    run = ee_run(7.0 * y * np.exp(-y), normal, 5.0, sample_every=10)
    assert run.energy[0] < 0
    assert run.verdict.status is VerdictStatus.BLOWUP
    assert 0.0 < run.verdict.t_star < 5.0
    assert run.sup[-1] > 1e3 * run.sup[0]


@pytest.mark.slow
def test_blowup_time_stable_and_ordered_in_amplitude():
    coarse, fine = NormalAxis(201, 20.0), NormalAxis(401, 20.0)
    t7 = ee_run(7.0 * coarse.nodes * np.exp(-coarse.nodes), coarse, 5.0).verdict.t_star
    t7_fine = ee_run(7.0 * fine.nodes * np.exp(-fine.nodes), fine, 5.0).verdict.t_star
    assert abs(t7_fine - t7) <= 0.1 * t7_fine
    times = [ee_run(c * coarse.nodes * np.exp(-coarse.nodes), coarse, 5.0).verdict.t_star for c in (7.0, 8.0, 10.0)]
    assert times[0] >= times[1] >= times[2]


def test_blowup_monitor_cases():
    flat = blowup_monitor([(0.0, 1.0), (1.0, 1.0), (2.0, 1.0)], 1e3)
    assert flat.status is VerdictStatus.COMPLETED_HORIZON

    crossing = blowup_monitor([(0.0, 1.0), (1.0, 1.0), (2.0, 3001.0)], 1e3)
    assert crossing.status is VerdictStatus.BLOWUP
    assert crossing.t_star == pytest.approx(1.0 + 999.0 / 3000.0)

    broken = blowup_monitor([(0.0, 1.0), (0.5, math.nan)], 1e3)
    assert broken.status is VerdictStatus.SCHEME_BREAKDOWN
    assert broken.t_star == 0.5


def test_backflow_at_time_zero(grid):
    X, Y = grid.mesh()
    u = Field(grid, Role.U, (1.0 - np.cos(X)) * (1.0 - np.exp(-Y)))
    report = backflow_detect([_state(u)])
    assert report.detected
    assert report.t_star == 0.0
    assert report.x_star == 0.0


def test_backflow_not_detected_for_empty_or_monotone(hartmann_field):
    assert not backflow_detect([]).detected
    assert not backflow_detect([_state(hartmann_field)]).detected


def test_adverse_pressure_backflow_starts_at_the_wall():
    grid = build_grid(4, 2 * math.pi, 61, 12.0)
    _, Y = grid.mesh()
    values = 1.0 - np.exp(-Y)
    values[:, -1] = 1.0
    state = FlowState(0.0, Field(grid, Role.U, values), Variant.CLASSICAL, constant_outer(1.0, 0.5))
    traj = integrate(state, 3.0, dt=0.05, sample_every=1, stop_on_backflow=True)
    report = backflow_detect(traj.samples)
    assert report.detected and report.boundary_first
    flagged = [s.t for s in traj.samples if monotonicity_monitor(s).flagged]
    assert flagged and abs(flagged[0] - report.t_star) <= 0.05 + 1e-12
    assert monotonicity_monitor(traj.samples[-1]).at_wall


def test_extremum_principle_sequences():
    ok = extremum_principle_check([0.0, 1.0, 2.0], [1.0, 0.9, 0.8], [0.0, 0.0, 0.0])
    assert ok.passed
    spike = extremum_principle_check([0.0, 1.0, 2.0], [1.0, 2.0, 0.9], [0.0, 0.0, 0.0])
    assert not spike.passed and spike.worst_index == 1
    grown = extremum_principle_check([0.0, 1.0], [1.0, math.e], [0.0, 0.0], lam=1.0)
    assert grown.passed
    with pytest.raises(ParameterError):
        extremum_principle_check([0.0, 1.0], [1.0], [0.0, 0.0])


def test_extremum_principle_on_heat_run():
    grid = build_grid(4, 2 * math.pi, 121, 12.0)
    _, Y = grid.mesh()
    values = 1.0 - np.exp(-Y)
    values[:, -1] = 1.0
    traj = integrate(_state(Field(grid, Role.U, values)), 1.0, dt=0.01, sample_every=10)
    H = [vorticity_of(s).values for s in traj.samples]
    report = extremum_principle_check(
        [s.t for s in traj.samples],
        [float(np.max(np.abs(h))) for h in H],
        [float(np.max(np.abs(h[:, 0]))) for h in H],
    )
    assert report.passed


def test_monotonicity_monitor(hartmann_field):
    report = monotonicity_monitor(_state(hartmann_field))
    assert not report.flagged
    assert report.minimum == pytest.approx(math.exp(-12.0), rel=1e-2)
    reversed_profile = hartmann_field.with_values(np.exp(-np.broadcast_to(hartmann_field.grid.y, hartmann_field.grid.shape)))
    assert monotonicity_monitor(_state(reversed_profile)).flagged


def test_bernoulli_residuals():
    times = np.linspace(0.0, 2.0, 9)
    x = np.linspace(0.0, 2 * math.pi, 33)
    assert bernoulli_residual(constant_outer(1.0), times, x) == 0.0
    assert bernoulli_residual(traveling_wave(amplitude=0.3), times, x) <= 1e-12

    wave = lambda t, x: np.cos(x - t)
    matched = OuterFlow(U=wave, P_x=lambda t, x: -np.sin(x - t) + np.cos(x - t) * np.sin(x - t))
    assert bernoulli_residual(matched, times, x) <= 1e-8

    unmatched = OuterFlow(U=wave, P_x=lambda t, x: np.zeros_like(x))
    T, Xs = np.meshgrid(times, x, indexing="ij")
    expected = np.max(np.abs(np.sin(Xs - T) * (1.0 - np.cos(Xs - T))))
    assert bernoulli_residual(unmatched, times, x) == pytest.approx(expected, rel=1e-6)
