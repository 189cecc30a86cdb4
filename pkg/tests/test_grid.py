import math

import numpy as np
import pytest

from prandtl_lab.core.errors import FieldRoleError, GridError, NonFiniteError
from prandtl_lab.numerics.grid import (
    Field,
    NormalAxis,
    Role,
    apply_derivative,
    build_grid,
    cumulative_integral_y,
    finite_difference_weights,
    recover_v,
    solve_implicit_diffusion,
    spectral_derivative,
    upwind_periodic,
)


def test_three_point_second_difference_weights():
    w = finite_difference_weights(np.array([-1.0, 0.0, 1.0]), 2)
    assert np.allclose(w, [1.0, -2.0, 1.0])


def test_too_few_points_for_order():
    with pytest.raises(GridError):
        finite_difference_weights(np.array([0.0, 1.0]), 2)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n_x=3, x_period=1.0, n_y=10, y_max=1.0),
        dict(n_x=8, x_period=1.0, n_y=3, y_max=1.0),
        dict(n_x=8, x_period=-1.0, n_y=10, y_max=1.0),
        dict(n_x=8, x_period=1.0, n_y=10, y_max=math.inf),
        dict(n_x=8, x_period=1.0, n_y=10, y_max=1.0, y_stretch=0.9),
    ],
)
def test_bad_grids_rejected(kwargs):
    with pytest.raises(GridError):
        build_grid(**kwargs)


def test_stretched_axis_spans_extent():
    axis = NormalAxis(41, 20.0, 1.05)
    assert axis.nodes[0] == 0.0
    assert axis.nodes[-1] == 20.0
    assert np.all(np.diff(axis.spacings) > 0)
    assert math.isclose(axis.spacings.sum(), 20.0, rel_tol=1e-12)


def test_field_rejects_nonfinite_and_bad_shape(grid):
    values = np.zeros(grid.shape)
    values[3, 7] = np.nan
    with pytest.raises(NonFiniteError) as info:
        Field(grid, Role.U, values)
    assert info.value.node == (3, 7)
    with pytest.raises(GridError):
        Field(grid, Role.U, np.zeros((grid.n_x, grid.n_y + 1)))


def test_field_values_are_read_only(hartmann_field):
    with pytest.raises(ValueError):
        hartmann_field.values[0, 0] = 1.0


def test_x_derivative_of_x_constant_field_is_exactly_zero(hartmann_field):
    assert np.all(apply_derivative(hartmann_field, "x", 1).values == 0.0)
    assert np.all(apply_derivative(hartmann_field, "x", 2).values == 0.0)


def test_x_derivative_second_order():
    errors = []
    for n_x in (32, 64):
        g = build_grid(n_x, 2 * math.pi, 5, 1.0)
        X, _ = g.mesh()
        d = apply_derivative(Field(g, Role.GENERIC, np.sin(X)), "x", 1).values
        errors.append(np.max(np.abs(d - np.cos(X))))
    assert 3.8 < errors[0] / errors[1] < 4.2


def test_bad_axis_name(hartmann_field):
    with pytest.raises(GridError):
        apply_derivative(hartmann_field, "z", 1)


def test_spectral_derivative_exact_for_resolved_mode():
    g = build_grid(32, 2 * math.pi, 5, 1.0)
    X, _ = g.mesh()
    d = spectral_derivative(np.sin(3 * X), g.x_period, 1, axis=0)
    assert np.max(np.abs(d - 3 * np.cos(3 * X))) < 1e-12


def test_upwind_periodic_converges():
    x = np.arange(256) * 2 * math.pi / 256
    f = np.sin(x)
    d = upwind_periodic(f, np.ones_like(x), x[1] - x[0])
    assert np.max(np.abs(d - np.cos(x))) < 1e-2


def test_cumulative_integral_of_one_is_y(grid):
    f = Field(grid, Role.GENERIC, np.ones(grid.shape))
    out = cumulative_integral_y(f).values
    assert np.allclose(out, np.broadcast_to(grid.y, grid.shape), atol=1e-12)
    assert np.all(out[:, 0] == 0.0)


def test_cumulative_integral_of_exponential():
    g = build_grid(4, 1.0, 201, 20.0)
    _, Y = g.mesh()
    out = cumulative_integral_y(Field(g, Role.GENERIC, np.exp(-Y))).values
    assert np.max(np.abs(out - (1.0 - np.exp(-Y)))) < 1e-3


def test_integral_of_derivative_reproduces_field():
    g = build_grid(4, 1.0, 401, 20.0)
    _, Y = g.mesh()
    f = Field(g, Role.GENERIC, 1.0 - np.exp(-Y))
    back = cumulative_integral_y(apply_derivative(f, "y", 1)).values
    assert np.max(np.abs(back - (f.values - f.values[:, :1]))) < 2e-3


def test_recover_v_vanishes_for_x_independent_u(hartmann_field):
    assert np.all(recover_v(hartmann_field).values == 0.0)


def test_recover_v_closed_form_and_order():
    errors = []
    for n_x in (64, 128):
        g = build_grid(n_x, 2 * math.pi, 41, 2.0)
        X, Y = g.mesh()
        v = recover_v(Field(g, Role.U, np.sin(X) * Y))
        assert np.all(v.values[:, 0] == 0.0)
        assert v.role is Role.V
        errors.append(np.max(np.abs(v.values + np.cos(X) * Y**2 / 2)))
    assert errors[0] < 1e-2
    assert 3.8 < errors[0] / errors[1] < 4.2


def test_recover_v_needs_u_role(hartmann_field):
    with pytest.raises(FieldRoleError):
        recover_v(hartmann_field.with_values(hartmann_field.values, Role.B))


def test_implicit_diffusion_keeps_linear_profile():
    axis = NormalAxis(21, 4.0)
    y = np.array(axis.nodes)
    out = solve_implicit_diffusion(axis, y.copy(), 0.3, wall=0.0, far=4.0)
    assert np.allclose(out, y, atol=1e-12)


def test_implicit_diffusion_maximum_principle():
    axis = NormalAxis(41, 8.0, 1.02)
    rng = np.random.default_rng(3)
    rhs = rng.uniform(0.2, 0.9, axis.n)
    out = solve_implicit_diffusion(axis, rhs, 0.5, wall=0.0, far=1.0)
    assert out.min() >= 0.0 - 1e-14
    assert out.max() <= 1.0 + 1e-14
