"""Piecewise-linear function space on [-l, l] with zero boundary values.

A uniform mesh carries three kinds of data: grid functions (nodal values at
interior nodes, implicitly zero at the endpoints), nodal fields (values at
every node, no boundary condition), and functionals (load vectors, i.e.
pairings with the interior hat basis).  All norms are exact for the
piecewise-linear interpolant:

    ||u||_L2^2   = sum over cells of h/3 * (a^2 + a*b + b^2)
    ||u||_H1^2   = ||u||_L2^2 + ||Du||_L2^2       (Du piecewise constant)
    ||F||_H-1    = sqrt(loads . u),  (K + M) u = loads

where K and M are the stiffness and mass matrices of the hat basis.  The
dual norm is therefore the exact supremum of pairing(theta, F) over grid
functions with ||theta||_H1 <= 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded


@dataclass(frozen=True)
class Grid:
    """Uniform mesh of [-half_length, half_length] with ``cells`` elements.

    Nodes are x_j = -half_length + j*h for j = 0..cells, h = 2*half_length/cells.
    Interior nodes are j = 1..cells-1.
    """

    half_length: float
    cells: int

    def __post_init__(self):
        if self.half_length <= 0:
            raise ValueError(f"half_length must be positive, got {self.half_length}")
        if self.cells < 2 or int(self.cells) != self.cells:
            raise ValueError(f"cells must be an integer >= 2, got {self.cells}")

    @property
    def h(self) -> float:
        return 2.0 * self.half_length / self.cells

    @property
    def n_interior(self) -> int:
        return self.cells - 1

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.linspace(-self.half_length, self.half_length, self.cells + 1)

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        return self.nodes[1:-1]


def build_grid(half_length: float, cells: int) -> Grid:
    """Construct a uniform grid; rejects cells < 2 or half_length <= 0."""
    return Grid(half_length=float(half_length), cells=int(cells))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Piecewise-linear function vanishing at both endpoints.

    ``values`` holds the interior nodal values; the boundary values are
    implicitly zero.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_interior,):
            raise ValueError(
                f"expected {self.grid.n_interior} interior values, got shape {v.shape}"
            )
        object.__setattr__(self, "values", v)

    def full(self) -> np.ndarray:
        """Nodal values including the zero endpoints."""
        out = np.zeros(self.grid.cells + 1)
        out[1:-1] = self.values
        return out

    def __add__(self, other: "GridFunction") -> "GridFunction":
        _check_same_grid(self.grid, other.grid)
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        _check_same_grid(self.grid, other.grid)
        return GridFunction(self.grid, self.values - other.values)

    def __rmul__(self, scalar: float) -> "GridFunction":
        return GridFunction(self.grid, float(scalar) * self.values)


@dataclass(frozen=True, eq=False)
class NodalField:
    """Values at every node of the grid, endpoints included."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.cells + 1,):
            raise ValueError(
                f"expected {self.grid.cells + 1} nodal values, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("nodal field values must be finite")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class Functional:
    """Bounded linear functional stored as pairings with the interior hats."""

    grid: Grid
    loads: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.loads, dtype=float)
        if v.shape != (self.grid.n_interior,):
            raise ValueError(
                f"expected {self.grid.n_interior} loads, got shape {v.shape}"
            )
        object.__setattr__(self, "loads", v)

    def __add__(self, other: "Functional") -> "Functional":
        _check_same_grid(self.grid, other.grid)
        return Functional(self.grid, self.loads + other.loads)

    def __sub__(self, other: "Functional") -> "Functional":
        _check_same_grid(self.grid, other.grid)
        return Functional(self.grid, self.loads - other.loads)

    def __rmul__(self, scalar: float) -> "Functional":
        return Functional(self.grid, float(scalar) * self.loads)


def _check_same_grid(a: Grid, b: Grid) -> None:
    if a != b:
        raise ValueError(f"grid mismatch: {a} vs {b}")


# --- matrix assembly --------------------------------------------------------

def stiffness_bands(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """(diagonal, off-diagonal) of the interior stiffness matrix int phi_i' phi_j'."""
    n = grid.n_interior
    h = grid.h
    return np.full(n, 2.0 / h), np.full(n - 1, -1.0 / h)


def mass_bands(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """(diagonal, off-diagonal) of the interior mass matrix int phi_i phi_j."""
    n = grid.n_interior
    h = grid.h
    return np.full(n, 2.0 * h / 3.0), np.full(n - 1, h / 6.0)


def riesz_cholesky(grid: Grid) -> np.ndarray:
    """Banded Cholesky factor of K + M, for repeated dual-norm solves."""
    kd, ko = stiffness_bands(grid)
    md, mo = mass_bands(grid)
    ab = np.zeros((2, grid.n_interior))
    ab[0, 1:] = ko + mo
    ab[1, :] = kd + md
    return cholesky_banded(ab, lower=False)


def riesz_solve(cb: np.ndarray, loads: np.ndarray) -> np.ndarray:
    """Solve (K + M) u = loads given the factor from :func:`riesz_cholesky`."""
    return cho_solve_banded((cb, False), loads)


# --- norms and pairings -----------------------------------------------------

def l2_norm(u: GridFunction) -> float:
    """Exact L2 norm of the piecewise-linear interpolant."""
    f = u.full()
    a, b = f[:-1], f[1:]
    return float(np.sqrt(u.grid.h / 3.0 * np.sum(a * a + a * b + b * b)))


def h10_norm(u: GridFunction) -> float:
    """Exact full Sobolev norm sqrt(||u||_L2^2 + ||Du||_L2^2)."""
    f = u.full()
    a, b = f[:-1], f[1:]
    h = u.grid.h
    l2sq = h / 3.0 * np.sum(a * a + a * b + b * b)
    dsq = np.sum((b - a) ** 2) / h
    return float(np.sqrt(l2sq + dsq))


def hminus1_norm(F: Functional) -> float:
    """Dual norm via the Riesz solve (K + M) u = loads; returns sqrt(loads . u)."""
    cb = riesz_cholesky(F.grid)
    u = riesz_solve(cb, F.loads)
    val = float(F.loads @ u)
    return float(np.sqrt(max(val, 0.0)))


def hminus1_norm_factored(cb: np.ndarray, loads: np.ndarray) -> float:
    """Dual norm from a precomputed Cholesky factor (hot path for sweeps)."""
    u = cho_solve_banded((cb, False), loads)
    return float(np.sqrt(max(float(loads @ u), 0.0)))


def pairing(phi: GridFunction, F: Functional) -> float:
    """Evaluate the functional on a grid function: sum_j phi_j * loads_j."""
    _check_same_grid(phi.grid, F.grid)
    return float(phi.values @ F.loads)


def eval_at(u: GridFunction, x: float) -> float:
    """Linear interpolation of u at x; zero at the endpoints."""
    g = u.grid
    if x < -g.half_length or x > g.half_length:
        raise ValueError(f"x={x} outside [{-g.half_length}, {g.half_length}]")
    return float(np.interp(x, g.nodes, u.full()))


def hat_weights(grid: Grid, y: float | np.ndarray):
    """Interior hat-function values at position(s) y strictly inside the interval.

    Returns (index, w_left, w_right) where ``index`` is the cell number c so
    that y lies in [x_c, x_{c+1}]; w_left belongs to global node c and
    w_right to global node c+1.  Weights on the two boundary nodes are
    dropped by the callers (the hats there do not exist).
    """
    g = grid
    y = np.asarray(y, dtype=float)
    cell = np.floor((y + g.half_length) / g.h).astype(int)
    cell = np.clip(cell, 0, g.cells - 1)
    frac = (y - (-g.half_length + cell * g.h)) / g.h
    return cell, 1.0 - frac, frac


def delta_functional(y: float, grid: Grid) -> Functional:
    """Dirac mass at a point strictly inside the interval, as hat loads."""
    if not (-grid.half_length < y < grid.half_length):
        raise ValueError(f"delta position {y} not strictly inside the interval")
    loads = np.zeros(grid.n_interior)
    cell, wl, wr = hat_weights(grid, y)
    c = int(cell)
    if c >= 1:
        loads[c - 1] += wl
    if c + 1 <= grid.cells - 1:
        loads[c] += wr
    return Functional(grid, loads)


def density_functional(f: NodalField) -> Functional:
    """Indefinite-integral measure of a nodal density against the hat basis.

    loads_j = int phi_j f dx with f the piecewise-linear interpolant, so
    loads_j = h/6 * (f_{j-1} + 4 f_j + f_{j+1}) at interior nodes.
    """
    v = f.values
    h = f.grid.h
    loads = h / 6.0 * (v[:-2] + 4.0 * v[1:-1] + v[2:])
    return Functional(f.grid, loads)
