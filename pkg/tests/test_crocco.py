import numpy as np
import pytest

from prandtl_lab.core.errors import (
    DiscriminantError,
    DominanceError,
    MonotonicityError,
    ParameterError,
    StabilityGateError,
)
from prandtl_lab.numerics.crocco import (
    CroccoState,
    convergence_study,
    fd_explicit_step,
    fd_implicit_step,
    from_crocco,
    march,
    scenario_state,
    stability_check,
    to_crocco,
    to_von_mises,
    unsteady_gate_check,
    von_mises_residual,
    wall_root,
)
from prandtl_lab.numerics.grid import Field, Role, build_grid
from prandtl_lab.schemas import CroccoSpec


@pytest.fixture
def fine_grid():
    return build_grid(4, 2 * np.pi, 801, 20.0)


def _hartmann(grid):
    _, Y = grid.mesh()
    return Field(grid, Role.U, 1.0 - np.exp(-Y))


def test_hartmann_profile_maps_to_linear_w(fine_grid):
    c = to_crocco(_hartmann(fine_grid), 1.0, n_eta=129)
    assert c.n_xi == 4
    assert np.max(np.abs(c.w - (1.0 - c.eta)[None, :])) <= 1e-3
    assert np.all(c.w[:, -1] == 0.0)


def test_non_monotone_profile_rejected():
    grid = build_grid(4, 2 * np.pi, 101, 10.0)
    _, Y = grid.mesh()
    with pytest.raises(MonotonicityError):
        to_crocco(Field(grid, Role.U, Y * np.exp(-Y)), 1.0)


def test_crocco_needs_positive_outer_speed(fine_grid):
    with pytest.raises(ParameterError):
        to_crocco(_hartmann(fine_grid), 0.0)


def test_linear_w_reconstructs_exponential_profile(fine_grid):
    eta = np.linspace(0.0, 1.0, 513)
    c = CroccoState(w=np.tile(1.0 - eta, (4, 1)))
    u = from_crocco(c, 1.0, fine_grid)
    assert np.max(np.abs(u.values - (1.0 - np.exp(-fine_grid.y))[None, :])) <= 1e-3
    assert np.all(u.values[:, 0] == 0.0)


def test_round_trip_on_hartmann_profile(fine_grid):
    u = _hartmann(fine_grid)
    back = from_crocco(to_crocco(u, 1.0, n_eta=513), 1.0, fine_grid)
    assert np.max(np.abs(back.values - u.values)) <= 2e-3


def test_interior_zero_of_w_rejected(fine_grid):
    eta = np.linspace(0.0, 1.0, 65)
    w = np.abs(1.0 - 2.0 * eta) * (1.0 - eta)
    with pytest.raises(MonotonicityError):
        from_crocco(CroccoState(w=np.tile(w, (4, 1))), 1.0, fine_grid)


def test_state_rejects_negative_w():
    with pytest.raises(ParameterError):
        CroccoState(w=np.array([1.0, -0.5, 0.0]))


def test_uniform_flow_in_von_mises_variables():
    grid = build_grid(8, 2 * np.pi, 41, 10.0)
    state = to_von_mises(Field(grid, Role.U, np.full(grid.shape, 2.0)))
    assert np.allclose(state.w, 4.0, atol=1e-12)
    assert np.allclose(state.psi[-1], 20.0)
    assert np.max(np.abs(von_mises_residual(state))) <= 1e-9


def test_von_mises_rejects_sign_change():
    grid = build_grid(8, 2 * np.pi, 41, 10.0)
    _, Y = grid.mesh()
    with pytest.raises(MonotonicityError):
        to_von_mises(Field(grid, Role.U, np.cos(Y)))


def test_stability_gate_arithmetic():
    ok = stability_check(0.01, 0.4, 1.0, 2.0)
    assert ok.passed and ok.value == pytest.approx(0.0625) and ok.gate == pytest.approx(0.125)
    bad = stability_check(0.05, 0.4, 1.0, 2.0)
    assert not bad.passed and bad.value == pytest.approx(0.3125)
    assert stability_check(10.0, 0.01, 0.0, 2.0).passed
    assert unsteady_gate_check(1e-4, 0.05, 1.0, 1.0, 1.0).passed
    assert not unsteady_gate_check(1e-2, 0.05, 1.0, 1.0, 1.0).passed


def test_wall_root_cases():
    w1 = np.array([0.0, 0.3, 1.2])
    zeros = np.zeros(3)
    assert np.allclose(wall_root(w1, 0.1, 1.0, zeros, zeros), w1)
    rng = np.random.default_rng(5)
    roots = wall_root(rng.uniform(0, 2, 50), 0.05, 1.0, rng.uniform(-1, 1, 50), rng.uniform(0, 3, 50))
    assert np.all(np.isfinite(roots)) and np.all(roots >= 0.0)
    with pytest.raises(DiscriminantError):
        wall_root(np.array([0.1]), 0.1, 1.0, np.zeros(1), np.array([-1.0]))


@pytest.mark.parametrize(
    "scheme,h",
    [("explicit", 1e-4), ("implicit", 1e-2), ("unsteady", 1e-4)],
)
def test_compatible_linear_datum_is_a_fixed_point(scheme, h):
    # w_etaeta = 0 and p_x = 0 in the interior; nu w w_eta = v0 w closes the wall
    c = scenario_state(CroccoSpec(n_eta=21, initial="linear", v0=-1.0))
    out = march(c, scheme, h, 20)
    assert np.max(np.abs(out.w - c.w)) <= 1e-12
    assert out.tau == pytest.approx(20 * h)


def test_explicit_step_gate_violation():
    c = scenario_state(CroccoSpec(n_eta=21))
    with pytest.raises(StabilityGateError):
        fd_explicit_step(c, 0.05)


def test_explicit_step_needs_regularizer_above_pressure_gradient():
    c = scenario_state(CroccoSpec(n_eta=21, p_x=2.0))
    with pytest.raises(ParameterError, match="p_x"):
        fd_explicit_step(c, 1e-4, M=1.0)


def test_explicit_step_accepts_large_upwinded_advection():
    c = scenario_state(CroccoSpec(n_eta=21, initial="quadratic", A=3.0))
    out = fd_explicit_step(c, 1e-4, M=1.0)
    assert np.all(np.isfinite(out.w)) and out.w.min() >= 0.0


def test_explicit_interior_carries_pressure_transport():
    h = 1e-4
    base = scenario_state(CroccoSpec(n_eta=41, initial="quadratic"))
    pushed = scenario_state(CroccoSpec(n_eta=41, initial="quadratic", p_x=-0.5))
    a = fd_explicit_step(base, h).w
    b = fd_explicit_step(pushed, h).w
    w = base.w
    expected = h * -0.5 * (w[:, 1:-1] - w[:, :-2]) / base.sigma
    assert np.max(np.abs((b - a)[:, 1:-1] - expected)) <= 1e-14
    assert np.max(np.abs(expected)) > 1e-6


def test_explicit_wall_closure_is_linear_in_new_level():
    c = scenario_state(CroccoSpec(n_eta=41, initial="quadratic", p_x=-0.5, v0=0.3))
    out = fd_explicit_step(c, 1e-4)
    w0 = c.w[:, 0]
    residual = c.nu * w0 * (out.w[:, 1] - out.w[:, 0]) / c.sigma - (-0.5) - 0.3 * w0
    assert np.max(np.abs(residual)) <= 1e-12


def test_implicit_interior_carries_pressure_transport():
    # w = 1 - eta/2 - eta^2/2 meets the wall relation for p_x = -1/2, v0 = 0
    c = scenario_state(CroccoSpec(n_eta=41, initial="quadratic", p_x=-0.5))
    out = fd_implicit_step(c, 1e-3)
    eta = c.eta
    w = c.w[0]
    rate = (out.w[0] - w) / 1e-3
    continuum = w**2 * -1.0 + -0.5 * (-0.5 - eta)
    # rows away from the wall; the transport term alone is at least 0.25 there
    assert np.max(np.abs(rate[8:30] - continuum[8:30])) <= 0.05


def test_explicit_step_creates_no_new_maximum():
    c = scenario_state(CroccoSpec(n_eta=41, initial="quadratic", p_x=-0.5))
    h = 1e-4
    for _ in range(50):
        out = fd_explicit_step(c, h)
        assert out.w.max() <= c.w.max() + h * 0.5 + 1e-12
        c = out


def test_implicit_step_dominance_failure():
    # diag vanishes on the middle row when B = 1/h + 2 nu w^2 / sigma^2 there
    h = 1e-3
    c = scenario_state(CroccoSpec(n_eta=21, B=1.0 / h + 2.0 * 0.25 / 0.05**2))
    with pytest.raises(DominanceError):
        fd_implicit_step(c, h)


def test_unknown_scheme():
    with pytest.raises(ParameterError):
        march(scenario_state(CroccoSpec(n_eta=11)), "leapfrog", 1e-3, 1)


def test_convergence_study_needs_three_levels():
    with pytest.raises(ParameterError):
        convergence_study("implicit", CroccoSpec(), levels=2)


def test_convergence_study_on_fixed_point():
    spec = CroccoSpec(n_eta=11, initial="linear", v0=-1.0, h=1e-2)
    table = convergence_study("implicit", spec, levels=3, horizon=0.05)
    assert len(table.rows) == 3
    assert all(row["error"] <= 1e-9 for row in table.rows)
    assert [row["n_eta"] for row in table.rows] == [11, 21, 41]


@pytest.mark.slow
def test_implicit_scheme_errors_shrink_under_refinement():
    spec = CroccoSpec(n_eta=21, initial="quadratic", p_x=-0.5, h=1e-2)
    table = convergence_study("implicit", spec, levels=3, horizon=0.1)
    errors = [row["error"] for row in table.rows]
    assert errors[0] > errors[1] > errors[2]
