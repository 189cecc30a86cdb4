"""Grids, discrete calculus and velocity recovery.

The tangential direction is periodic and uniform; the wall-normal direction is
a truncated half-line with optional geometric stretching. Everything here is
pure: grids and fields are immutable once built.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import solve_banded

from prandtl_lab.core.errors import FieldRoleError, GridError, NonFiniteError

logger = logging.getLogger(__name__)


def finite_difference_weights(offsets: np.ndarray, order: int) -> np.ndarray:
    """Weights c_j with sum c_j f(x0 + offsets_j) ~ f^(order)(x0)."""
    offsets = np.asarray(offsets, dtype=float)
    n = offsets.size
    if order >= n:
        raise GridError(f"{n} points cannot resolve derivative of order {order}")
    scale = np.max(np.abs(offsets)) or 1.0
    z = offsets / scale
    vander = np.vander(z, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(vander, rhs) / scale**order


@dataclass(frozen=True)
class NormalAxis:
    """Truncated half-line [0, length] with geometric node spacing."""

    n: int
    length: float
    stretch: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 4:
            raise GridError(f"need at least 4 normal nodes, got {self.n}")
        if not (math.isfinite(self.length) and self.length > 0):
            raise GridError(f"normal extent must be positive and finite, got {self.length}")
        if not (math.isfinite(self.stretch) and self.stretch >= 1.0):
            raise GridError(f"stretch ratio must be >= 1, got {self.stretch}")

    @cached_property
    def spacings(self) -> np.ndarray:
        cells = self.n - 1
        if self.stretch == 1.0:
            h = np.full(cells, self.length / cells)
        else:
            r = self.stretch
            h0 = self.length * (r - 1.0) / (r**cells - 1.0)
            h = h0 * r ** np.arange(cells)
        h.setflags(write=False)
        return h

    @cached_property
    def nodes(self) -> np.ndarray:
        y = np.concatenate(([0.0], np.cumsum(self.spacings)))
        y[-1] = self.length
        y.setflags(write=False)
        return y

    def _stencil_rows(self, order: int) -> sparse.csr_matrix:
        y = self.nodes
        n = self.n
        rows, cols, vals = [], [], []
        edge = 3 if order == 1 else 4
        for i in range(n):
            if i == 0:
                idx = np.arange(edge)
            elif i == n - 1:
                idx = np.arange(n - edge, n)
            else:
                idx = np.array([i - 1, i, i + 1])
            w = finite_difference_weights(y[idx] - y[i], order)
            rows.extend([i] * idx.size)
            cols.extend(idx.tolist())
            vals.extend(w.tolist())
        return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))

    @cached_property
    def first_derivative(self) -> sparse.csr_matrix:
        return self._stencil_rows(1)

    @cached_property
    def second_derivative(self) -> sparse.csr_matrix:
        return self._stencil_rows(2)

    @cached_property
    def diffusion_bands(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Interior three-point weights (sub, diag, super) of d^2/dy^2."""
        h = self.spacings
        hm, hp = h[:-1], h[1:]
        sub = 2.0 / (hm * (hm + hp))
        sup = 2.0 / (hp * (hm + hp))
        return sub, -(sub + sup), sup


def _along(values: np.ndarray, matrix: sparse.spmatrix, axis: int) -> np.ndarray:
    moved = np.moveaxis(values, axis, 0)
    shape = moved.shape
    out = matrix @ moved.reshape(shape[0], -1)
    return np.moveaxis(np.asarray(out).reshape(shape), 0, axis)


def normal_derivative(values: np.ndarray, normal: NormalAxis, order: int, axis: int = -1) -> np.ndarray:
    """Stencil derivative along the normal axis, orders 0..4 (higher by composition)."""
    if order == 0:
        return np.array(values, dtype=float)
    if order == 1:
        return _along(values, normal.first_derivative, axis)
    if order == 2:
        return _along(values, normal.second_derivative, axis)
    return normal_derivative(normal_derivative(values, normal, 2, axis), normal, order - 2, axis)


def cumulative_normal(values: np.ndarray, normal: NormalAxis, axis: int = -1) -> np.ndarray:
    return cumulative_trapezoid(values, x=normal.nodes, axis=axis, initial=0.0)


def periodic_derivative(values: np.ndarray, spacing: float, order: int, axis: int = 0) -> np.ndarray:
    """Second-order central differences with periodic wrap."""
    fp = np.roll(values, -1, axis=axis)
    fm = np.roll(values, 1, axis=axis)
    if order == 1:
        return (fp - fm) / (2.0 * spacing)
    if order == 2:
        return (fp - 2.0 * values + fm) / spacing**2
    raise GridError(f"periodic stencil supports order 1 or 2, got {order}")


def spectral_derivative(values: np.ndarray, period: float, order: int, axis: int = 0) -> np.ndarray:
    """d^m/dx^m in the discrete Fourier representation of a periodic direction."""
    if order == 0:
        return np.array(values, dtype=float)
    n = values.shape[axis]
    k = 2.0 * np.pi * np.fft.rfftfreq(n, d=period / n)
    symbol = (1j * k) ** order
    if n % 2 == 0 and order % 2 == 1:
        symbol[-1] = 0.0
    shape = [1] * values.ndim
    shape[axis] = symbol.size
    coeffs = np.fft.rfft(values, axis=axis) * symbol.reshape(shape)
    return np.fft.irfft(coeffs, n=n, axis=axis)


def _minmod(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.where(a * b > 0.0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def upwind_periodic(values: np.ndarray, speed: np.ndarray, spacing: float, axis: int = 0) -> np.ndarray:
    """Minmod-limited second-order upwind derivative along a periodic axis."""
    f = values
    back = (f - np.roll(f, 1, axis)) / spacing
    back2 = np.roll(back, 1, axis)
    fwd = np.roll(back, -1, axis)
    fwd2 = np.roll(back, -2, axis)
    plus = back + 0.5 * _minmod(back - back2, fwd - back)
    minus = fwd - 0.5 * _minmod(fwd - back, fwd2 - fwd)
    return np.where(speed > 0.0, plus, minus)


def upwind_normal(values: np.ndarray, speed: np.ndarray, normal: NormalAxis, axis: int = -1) -> np.ndarray:
    """Minmod-limited upwind derivative along the normal axis.

    Falls back to first order next to the truncation boundaries.
    """
    f = np.moveaxis(values, axis, -1)
    c = np.moveaxis(np.broadcast_to(speed, values.shape), axis, -1)
    d = np.diff(f, axis=-1) / normal.spacings
    nan = np.full(f.shape[:-1] + (1,), np.nan)
    back = np.concatenate((nan, d), axis=-1)
    back2 = np.concatenate((nan, nan, d[..., :-1]), axis=-1)
    fwd = np.concatenate((d, nan), axis=-1)
    fwd2 = np.concatenate((d[..., 1:], nan, nan), axis=-1)
    with np.errstate(invalid="ignore"):
        plus = back + 0.5 * np.nan_to_num(_minmod(back - back2, fwd - back))
        minus = fwd - 0.5 * np.nan_to_num(_minmod(fwd - back, fwd2 - fwd))
    plus = np.where(np.isnan(back), fwd, plus)
    minus = np.where(np.isnan(fwd), back, minus)
    out = np.where(c > 0.0, plus, minus)
    return np.moveaxis(out, -1, axis)


def solve_implicit_diffusion(
    normal: NormalAxis,
    rhs: np.ndarray,
    dt: float,
    damping: float = 0.0,
    wall: float = 0.0,
    far=0.0,
    identity: float = 1.0,
) -> np.ndarray:
    """Solve (identity + dt*damping - dt*d^2/dy^2) u = rhs column-wise with Dirichlet ends.

    ``rhs`` has the normal direction first; every trailing column shares the
    same operator, so one banded factorisation serves the whole batch.
    """
    n = normal.n
    sub, diag, sup = normal.diffusion_bands
    ab = np.zeros((3, n))
    ab[1, 1:-1] = identity + dt * damping - dt * diag
    ab[0, 2:] = -dt * sup
    ab[2, :-2] = -dt * sub
    ab[1, 0] = 1.0
    ab[1, -1] = 1.0
    b = np.array(rhs, dtype=float, copy=True)
    b[0] = wall
    b[-1] = far
    return solve_banded((1, 1), ab, b)


@dataclass(frozen=True)
class Grid2D:
    n_x: int
    x_period: float
    n_y: int
    y_max: float
    y_stretch: float = 1.0

    def __post_init__(self):
        if int(self.n_x) != self.n_x or self.n_x < 4:
            raise GridError(f"need at least 4 tangential nodes, got {self.n_x}")
        if not (math.isfinite(self.x_period) and self.x_period > 0):
            raise GridError(f"x_period must be positive and finite, got {self.x_period}")
        # validates n_y, y_max, y_stretch
        NormalAxis(self.n_y, self.y_max, self.y_stretch)

    @cached_property
    def normal(self) -> NormalAxis:
        return NormalAxis(self.n_y, self.y_max, self.y_stretch)

    @property
    def dx(self) -> float:
        return self.x_period / self.n_x

    @cached_property
    def x(self) -> np.ndarray:
        x = np.arange(self.n_x) * self.dx
        x.setflags(write=False)
        return x

    @property
    def y(self) -> np.ndarray:
        return self.normal.nodes

    @property
    def dy(self) -> np.ndarray:
        return self.normal.spacings

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_x, self.n_y)

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")


def build_grid(n_x: int, x_period: float, n_y: int, y_max: float, y_stretch: float = 1.0) -> Grid2D:
    for name, value in (("x_period", x_period), ("y_max", y_max), ("y_stretch", y_stretch)):
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            raise GridError(f"{name} must be a finite number, got {value!r}")
    return Grid2D(int(n_x), float(x_period), int(n_y), float(y_max), float(y_stretch))


class Role(str, Enum):
    U = "u"
    V = "v"
    VORTICITY = "vorticity"
    B = "b"
    A = "a"
    K = "K"
    GENERIC = "generic"


def first_bad_node(values: np.ndarray) -> Optional[Tuple[int, ...]]:
    bad = np.argwhere(~np.isfinite(values))
    if bad.size == 0:
        return None
    return tuple(int(i) for i in bad[0])


@dataclass(frozen=True, eq=False)
class Field:
    grid: Grid2D
    role: Role
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.array(self.values, dtype=float, copy=True)
        if arr.shape != self.grid.shape:
            raise GridError(f"values shaped {arr.shape}, grid expects {self.grid.shape}")
        node = first_bad_node(arr)
        if node is not None:
            raise NonFiniteError(node, what=Role(self.role).value)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "role", Role(self.role))

    def with_values(self, values: np.ndarray, role: Optional[Role] = None) -> "Field":
        return Field(self.grid, role or self.role, values)

    @property
    def wall(self) -> np.ndarray:
        return self.values[:, 0]


def apply_derivative(f: Field, axis: str, order: int) -> Field:
    if order not in (1, 2):
        raise GridError(f"order must be 1 or 2, got {order}")
    if axis == "x":
        out = periodic_derivative(f.values, f.grid.dx, order, axis=0)
    elif axis == "y":
        out = normal_derivative(f.values, f.grid.normal, order, axis=1)
    else:
        raise GridError(f"axis must be 'x' or 'y', got {axis!r}")
    return Field(f.grid, Role.GENERIC, out)


def cumulative_integral_y(f: Field) -> Field:
    return Field(f.grid, Role.GENERIC, cumulative_normal(f.values, f.grid.normal, axis=1))


def recover_v_values(u: np.ndarray, grid: Grid2D) -> np.ndarray:
    ux = periodic_derivative(u, grid.dx, 1, axis=0)
    return -cumulative_normal(ux, grid.normal, axis=1)


def recover_v(u: Field) -> Field:
    """Normal velocity from continuity, v = -int_0^y u_x dy'."""
    if u.role is not Role.U:
        raise FieldRoleError(f"recover_v expects a u field, got role {u.role.value}")
    return Field(u.grid, Role.V, recover_v_values(u.values, u.grid))
