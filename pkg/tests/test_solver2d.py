import math

import numpy as np
import pytest
import sympy as sp
from scipy.integrate import trapezoid

from prandtl_lab.core.errors import CFLViolation, DecayError, GridMismatchError, ParameterError
from prandtl_lab.numerics.diagnostics import monotonicity_monitor
from prandtl_lab.numerics.grid import Field, Role, build_grid, normal_derivative
from prandtl_lab.numerics.shear import erf_self_similar, hartmann, heat_kernel
from prandtl_lab.numerics.solver2d import (
    CompatStatus,
    FlowState,
    Variant,
    compat_check,
    constant_outer,
    discrete_hartmann_profile,
    epsilon_study,
    initial_state,
    integrate,
    MMS_AMPLITUDE,
    mms_exact,
    mms_source,
    mms_study,
    perturbation_split,
    run,
    shear_refinement_study,
    solve_b,
    stable_dt,
    step,
    vorticity_of,
)
from prandtl_lab.schemas import VerdictStatus
from prandtl_lab.services.runner import parse_config


def _shear_state(n_x=4, n_y=61, y_max=12.0, variant=Variant.CLASSICAL, outer=None, extra=None):
    grid = build_grid(n_x, 2 * math.pi, n_y, y_max)
    X, Y = grid.mesh()
    values = 1.0 - np.exp(-Y)
    if extra is not None:
        values = values + extra(X, Y)
    values[:, -1] = 1.0
    return FlowState(0.0, Field(grid, Role.U, values), variant, outer or constant_outer(1.0))


def test_hartmann_catalog_is_steady(hartmann_yaml):
    traj = run(parse_config(hartmann_yaml))
    start = traj.samples[0].u.values
    for sample in traj.samples[1:]:
        assert np.max(np.abs(sample.u.values - start)) <= 1e-12
    assert traj.verdict.status is VerdictStatus.COMPLETED_HORIZON
    assert traj.final.t == pytest.approx(0.05)


def test_boundary_values_hold_after_step():
    state = _shear_state(n_x=16, extra=lambda X, Y: 0.05 * np.cos(X) * Y * np.exp(-Y))
    out = step(state, 0.01)
    assert np.all(out.u.values[:, 0] == 0.0)
    assert np.all(out.u.values[:, -1] == 1.0)
    assert out.t == pytest.approx(0.01)


def test_step_rejects_bad_time_steps():
    state = _shear_state(n_x=16, extra=lambda X, Y: 0.05 * np.cos(X) * Y * np.exp(-Y))
    with pytest.raises(ParameterError):
        step(state, 0.0)
    with pytest.raises(CFLViolation):
        step(state, 10.0 * stable_dt(state))


def test_shercliff_needs_far_b():
    grid = build_grid(8, 2 * math.pi, 21, 10.0)
    u = Field(grid, Role.U, np.zeros(grid.shape))
    with pytest.raises(ParameterError):
        FlowState(0.0, u, Variant.SHERCLIFF, constant_outer(1.0))


def test_x_independent_classical_run_matches_heat_kernel():
    # dy = 0.25 and dt = dy^2 divide the horizon exactly at every level
    rows = shear_refinement_study(levels=3, base_n_y=49, y_max=12.0, t_end=1.0)
    assert rows[0]["order"] is None
    errors = [r["error"] for r in rows]
    assert errors[0] < 5e-2
    for coarse, fine in zip(errors, errors[1:]):
        assert 3.2 <= coarse / fine <= 4.8


@pytest.mark.slow
def test_manufactured_solution_converges():
    rows = mms_study(levels=3)
    assert rows[2]["error"] < rows[1]["error"] < rows[0]["error"]
    assert rows[2]["order"] >= 1.8


def test_magnetic_variant_relaxes_to_exponential_profile():
    state = _shear_state(n_y=201, y_max=20.0, variant=Variant.MAGNETIC_PH,
                         extra=lambda X, Y: 0.05 * Y * np.exp(-Y))
    final = integrate(state, 20.0, dt=0.1, sample_every=10**9).final.u.values
    steady = discrete_hartmann_profile(state.grid.normal, 1.0)
    assert np.max(np.abs(final - steady[None, :])) <= 1e-6
    assert np.max(np.abs(final[0] - (1.0 - np.exp(-state.grid.y)))) <= 2e-3


def test_adverse_pressure_reports_backflow():
    t_stars = []
    for n_y, dt in ((61, 0.05), (121, 0.025)):
        state = _shear_state(n_y=n_y, outer=constant_outer(1.0, pressure_gradient=0.5))
        traj = integrate(state, 3.0, dt=dt, sample_every=1, stop_on_backflow=True)
        assert traj.verdict.status is VerdictStatus.BACKFLOW
        t_stars.append(traj.verdict.t_star)
    assert 0.3 < t_stars[0] < 1.5
    assert abs(t_stars[1] - t_stars[0]) <= 0.1 * t_stars[1]


def test_monotone_data_stays_monotone_without_pressure_gradient():
    traj = integrate(_shear_state(), 1.0, dt=0.05, sample_every=5)
    assert traj.verdict.status is VerdictStatus.COMPLETED_HORIZON
    assert all(not monotonicity_monitor(s).flagged for s in traj.samples)


def test_vorticity_field():
    state = _shear_state(n_y=201, y_max=20.0)
    w = vorticity_of(state)
    assert w.role is Role.VORTICITY
    assert abs(w.values[0, 0] - 1.0) < 1e-2


def test_solve_b_vanishes_for_x_independent_u():
    state = _shear_state(n_x=16)
    b = solve_b(state.u)
    assert b.role is Role.B
    assert np.max(np.abs(b.values)) <= 1e-12


def test_solve_b_closed_form():
    grid = build_grid(16, 2 * math.pi, 401, 20.0)
    X, Y = grid.mesh()
    b = solve_b(Field(grid, Role.U, np.sin(X) * np.exp(-Y)))
    assert np.all(b.values[:, 0] == 0.0)
    assert np.max(np.abs(b.values - np.cos(X) * (1.0 - np.exp(-Y)))) <= 1e-3


def _x_antiderivative(values, period):
    n = values.shape[0]
    k = 2.0 * np.pi * np.fft.rfftfreq(n, d=period / n)
    coeffs = np.fft.rfft(values, axis=0)
    coeffs[0] = 0.0
    coeffs[1:] /= 1j * k[1:, None]
    if n % 2 == 0:
        coeffs[-1] = 0.0
    return np.fft.irfft(coeffs, n=n, axis=0)


def test_shercliff_potential_round_trips_to_velocity_defect():
    # d_y of the x-antiderivative of d_y b is (x-mean of u) - u, the damping defect of the magnetic variant
    errors = []
    for n_y in (201, 401):
        grid = build_grid(16, 2 * math.pi, n_y, 20.0)
        X, Y = grid.mesh()
        u = 1.0 - np.exp(-Y) + 0.1 * np.sin(X) * Y * np.exp(-Y)
        b = solve_b(Field(grid, Role.U, u), far_b=0.0)
        by = normal_derivative(b.values, grid.normal, 1, axis=1)
        defect = normal_derivative(_x_antiderivative(by, grid.x_period), grid.normal, 1, axis=1)
        expected = u.mean(axis=0)[None, :] - u
        errors.append(float(np.max(np.abs(defect - expected))))
    assert errors[0] <= 1e-2
    assert 3.0 <= errors[0] / errors[1] <= 5.0


def test_shercliff_run_stays_finite_with_boundary_values():
    state = _shear_state(n_x=16, n_y=201, y_max=20.0, variant=Variant.SHERCLIFF,
                         outer=constant_outer(1.0, far_b=0.0),
                         extra=lambda X, Y: 0.05 * np.cos(X) * Y * np.exp(-Y))
    traj = integrate(state, 0.5, dt=0.01, sample_every=10)
    final = traj.final
    assert traj.verdict.status is VerdictStatus.COMPLETED_HORIZON
    assert final.t == pytest.approx(0.5)
    assert np.all(np.isfinite(final.u.values))
    assert np.all(final.u.values[:, 0] == 0.0)
    assert np.allclose(final.u.values[:, -1], 1.0)
    assert np.max(np.abs(final.u.values - state.u.values)) > 0.0


def test_solve_b_needs_decaying_data():
    grid = build_grid(16, 2 * math.pi, 41, 10.0)
    X, Y = grid.mesh()
    with pytest.raises(DecayError):
        solve_b(Field(grid, Role.U, np.sin(X) * Y))


def test_perturbation_split_recovers_perturbation():
    delta = 1e-3
    state = _shear_state(n_x=16, n_y=201, y_max=20.0, extra=lambda X, Y: delta * np.cos(X) * np.exp(-Y))
    split = perturbation_split(state, hartmann(1.0))
    X, Y = state.grid.mesh()
    expected = delta * np.cos(X) * np.exp(-Y)
    expected[:, -1] = 0.0
    assert np.max(np.abs(split.perturbation.values[:, :-1] - expected[:, :-1])) <= 1e-15
    assert np.max(np.abs(split.recombine().values - state.u.values)) <= 1e-15
    assert split.passed


def test_perturbation_split_of_background_is_zero():
    state = _shear_state(n_x=8, n_y=201, y_max=20.0)
    split = perturbation_split(state, hartmann(1.0))
    assert np.max(np.abs(split.perturbation.values[:, :-1])) <= 1e-15


def test_perturbation_split_grid_mismatch():
    state = _shear_state(n_x=8)
    other = build_grid(8, 2 * math.pi, 31, 12.0)
    background = heat_kernel(other.y, 1.0 - np.exp(-other.y), grid=other)
    with pytest.raises(GridMismatchError):
        perturbation_split(state, background)


def test_compat_zero_perturbation_passes_every_order(grid):
    report = compat_check(Field(grid, Role.GENERIC, np.zeros(grid.shape)), hartmann(1.0), 6, Variant.HARTMANN_DAMPED)
    assert [e.order for e in report.entries] == [0, 2, 4, 6]
    assert report.passed and not report.violated
    assert all(e.status is CompatStatus.SATISFIED for e in report.entries)


def test_compat_detects_quadratic_wall_perturbation(grid):
    c = 0.1
    X, Y = grid.mesh()
    report = compat_check(Field(grid, Role.GENERIC, c * np.sin(X) * Y**2), hartmann(1.0), 2, Variant.HARTMANN_DAMPED)
    entry = report.entry(2)
    assert entry.status is CompatStatus.VIOLATED
    assert np.max(np.abs(entry.residual - 2 * c * np.sin(grid.x))) <= 1e-3
    assert report.entry(0).passed


def test_compat_order_four_identity_rejects_odd_wall_layer(grid):
    # even wall derivatives of y exp(-y^2/4) vanish, so only d_y^4 u = d_y u d_x d_y u + d_y^2 u fails
    c = 0.5
    X, Y = grid.mesh()
    u0 = Field(grid, Role.GENERIC, c * np.sin(X) * Y * np.exp(-(Y**2) / 4.0))
    report = compat_check(u0, hartmann(1.0), 4, Variant.HARTMANN_DAMPED)
    assert report.entry(2).status is CompatStatus.SATISFIED
    entry = report.entry(4)
    assert entry.status is CompatStatus.VIOLATED
    x = grid.x
    predicted = -(1.0 + c * np.sin(x)) * c * np.cos(x)
    assert np.max(np.abs(entry.residual - predicted)) <= 1e-2


def test_compat_order_six_identity_rejects_sixth_power_layer(grid):
    c = 0.01
    X, Y = grid.mesh()
    u0 = Field(grid, Role.GENERIC, c * np.sin(X) * Y**6 * np.exp(-Y / 4.0))
    report = compat_check(u0, hartmann(1.0), 6, Variant.HARTMANN_DAMPED)
    assert [report.entry(k).status for k in (0, 2, 4)] == [CompatStatus.SATISFIED] * 3
    entry = report.entry(6)
    assert entry.status is CompatStatus.VIOLATED
    assert np.max(np.abs(entry.residual - 720.0 * c * np.sin(grid.x))) <= 1e-2


def _flat_wall_layer(grid, c):
    # (y/4)^7 exp(-(y/4)^2): every wall derivative up to order 6 vanishes
    X, Y = grid.mesh()
    s = Y / 4.0
    return Field(grid, Role.GENERIC, c * np.sin(X) * s**7 * np.exp(-(s**2)))


def test_compat_order_six_accepts_wall_flat_layer():
    grid = build_grid(32, 2 * math.pi, 401, 40.0)
    report = compat_check(_flat_wall_layer(grid, 0.2), erf_self_similar(1.0), 6, Variant.CLASSICAL)
    assert report.passed
    assert report.entry(6).max_residual <= 1e-3


def test_compat_shercliff_identity_sees_magnetic_coupling():
    # the wall-flat layer passes the classical identities, but d_y u d_x^2 d_y b does not vanish:
    # d_y b(0) = c cos x * int (y/4)^7 exp(-(y/4)^2) dy = 12 c cos x
    c = 0.2
    grid = build_grid(32, 2 * math.pi, 401, 40.0)
    u0 = _flat_wall_layer(grid, c)
    report = compat_check(u0, erf_self_similar(1.0), 6, Variant.SHERCLIFF)
    assert [report.entry(k).status for k in (0, 2, 4)] == [CompatStatus.SATISFIED] * 3
    entry = report.entry(6)
    assert entry.status is CompatStatus.VIOLATED
    predicted = 12.0 * c * np.cos(grid.x) / math.sqrt(math.pi)
    assert np.max(np.abs(entry.residual - predicted)) <= 5e-3

    background = erf_self_similar(1.0).values(0.0, grid.y)
    b = solve_b(Field(grid, Role.U, u0.values + background[None, :]))
    by0 = (-3.0 * b.values[:, 0] + 4.0 * b.values[:, 1] - b.values[:, 2]) / (2.0 * grid.y[1])
    assert np.max(np.abs(by0 - 12.0 * c * np.cos(grid.x))) <= 1e-3


def test_compat_rejects_unknown_order(grid):
    with pytest.raises(ParameterError):
        compat_check(Field(grid, Role.GENERIC, np.zeros(grid.shape)), hartmann(1.0), 3)


def test_epsilon_regularization_converges():
    state = _shear_state(n_x=16, extra=lambda X, Y: 0.1 * np.cos(X) * Y * np.exp(-Y))
    rows = epsilon_study(state, 0.2, 0.02, [0.1, 0.05, 0.025, 0.0])
    diffs = [r["l2_difference"] for r in rows]
    assert diffs[3] == 0.0
    assert diffs[0] > diffs[1] > diffs[2] > 0.0


def test_perturbed_catalog_initial_state(hartmann_yaml):
    config = parse_config(hartmann_yaml.replace("catalog: hartmann", "catalog: perturbed_hartmann\n  amplitude: 0.1"))
    state, background = initial_state(config)
    assert np.all(state.u.values[:, 0] == 0.0)
    assert np.all(state.u.values[:, -1] == 1.0)
    assert np.max(np.abs(state.u.values - background(0.0)[None, :])) > 0.0


def test_manufactured_source_matches_symbolic_residual():
    t, x, y, s = sp.symbols("t x y s", real=True)
    u = (1 - sp.exp(-y)) * (1 + MMS_AMPLITUDE * sp.sin(x - t))
    v = -sp.integrate(sp.diff(u, x).subs(y, s), (s, 0, y))
    residual = sp.lambdify((t, x, y), sp.diff(u, t) + u * sp.diff(u, x) + v * sp.diff(u, y) - sp.diff(u, y, 2), "numpy")
    grid = build_grid(16, 2 * math.pi, 41, 10.0)
    X, Y = grid.mesh()
    for time in (0.0, 0.3):
        assert np.max(np.abs(mms_source(time, X, Y) - residual(time, X, Y))) <= 1e-12
    assert np.max(np.abs(mms_exact(0.0, X, Y)[:, 0])) == 0.0


def _damped_perturbation(grid, shape):
    steady = discrete_hartmann_profile(grid.normal, 1.0)
    X, Y = grid.mesh()
    bump = shape(X, Y)
    bump[:, 0] = 0.0
    bump[:, -1] = 0.0
    values = steady[None, :] + bump
    state = FlowState(0.0, Field(grid, Role.U, values), Variant.HARTMANN_DAMPED, constant_outer(1.0), ubar=1.0)
    return state, steady


def test_hartmann_perturbation_decays_at_unit_rate():
    grid = build_grid(32, 2 * math.pi, 301, 60.0)
    delta = 1e-4
    state, steady = _damped_perturbation(grid, lambda X, Y: delta * np.cos(X) * Y * np.exp(-Y / 4.0))
    traj = integrate(state, 1.0, dt=0.01, sample_every=25)

    def size(s):
        defect = s.u.values - steady[None, :]
        return math.sqrt(trapezoid(np.sum(defect**2, axis=0) * grid.dx, grid.y))

    start = size(traj.samples[0])
    assert len(traj.samples) == 5
    for sample in traj.samples[1:]:
        ratio = size(sample) / start
        assert math.exp(-1.2 * sample.t) <= ratio <= math.exp(-0.8 * sample.t)


def test_exponential_perturbation_is_steady_away_from_the_wall():
    # for cos x e^{-y} damping balances d_y^2 and the two advection terms cancel, so only the
    # wall layer left by u(x, 0) = 0 evolves
    grid = build_grid(32, 2 * math.pi, 241, 24.0)
    delta = 1e-4
    state, steady = _damped_perturbation(grid, lambda X, Y: delta * np.cos(X) * np.exp(-Y))
    final = integrate(state, 0.2, dt=0.01, sample_every=10**9).final
    X, Y = grid.mesh()
    away = (grid.y >= 5.0) & (grid.y <= 10.0)
    drift = np.abs(final.u.values - steady[None, :] - delta * np.cos(X) * np.exp(-Y))[:, away]
    assert np.all(drift <= 0.02 * delta * np.exp(-grid.y[away])[None, :])
    assert np.max(np.abs(final.u.values[:, 1] - state.u.values[:, 1])) > 0.1 * delta


def test_favorable_pressure_twin_has_no_backflow():
    traj = integrate(_shear_state(outer=constant_outer(1.0, pressure_gradient=-0.5)), 3.0, dt=0.05,
                     sample_every=1, stop_on_backflow=True)
    assert traj.verdict.status is VerdictStatus.COMPLETED_HORIZON
    assert traj.final.t == pytest.approx(3.0)
