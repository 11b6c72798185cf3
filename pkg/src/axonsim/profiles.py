"""Initial-condition library: voltage profiles and proportion families.

Voltage profiles vanish at the endpoints; proportion families are
nonnegative and sum to one at every node exactly (the last state absorbs
the rounding residual).
"""

from __future__ import annotations

import numpy as np

from .grid import Grid, GridFunction, NodalField
from .kinetics import ChannelKinetics


def fundamental_mode(grid: Grid, mode: int = 1, amplitude: float = 1.0) -> GridFunction:
    """Scaled Dirichlet eigenfunction A sin(m pi (x + l) / 2l)."""
    l = grid.half_length
    x = grid.interior_nodes
    return GridFunction(grid, amplitude * np.sin(mode * np.pi * (x + l) / (2 * l)))


def gaussian_bump(grid: Grid, center: float, width: float, amplitude: float) -> GridFunction:
    """Gaussian bump with the linear ramp through its endpoint values removed."""
    if width <= 0:
        raise ValueError("width must be positive")
    l = grid.half_length
    x = grid.nodes
    g = amplitude * np.exp(-((x - center) ** 2) / (2.0 * width**2))
    ramp = g[0] + (g[-1] - g[0]) * (x + l) / (2 * l)
    return GridFunction(grid, (g - ramp)[1:-1])


def build_v0(grid: Grid, spec: dict) -> GridFunction:
    form = spec.get("form")
    params = spec.get("params", {})
    if form == "eigenfunction":
        return fundamental_mode(
            grid, int(params.get("mode", 1)), float(params.get("amplitude", 1.0))
        )
    if form == "gaussian_bump":
        return gaussian_bump(
            grid,
            float(params.get("center", 0.0)),
            float(params["width"]),
            float(params.get("amplitude", 1.0)),
        )
    raise ValueError(f"unknown v0 form {form!r}")


def _exact_simplex(weights: np.ndarray) -> np.ndarray:
    """Normalize rows (state axis) so each nodal column sums to one exactly."""
    total = weights.sum(axis=0)
    if np.any(total <= 0):
        raise ValueError("proportion weights must have positive nodal totals")
    p = weights / total
    p[-1] = 1.0 - p[:-1].sum(axis=0)
    return p


def uniform_proportions(grid: Grid, k: ChannelKinetics, weights: dict) -> list[NodalField]:
    """Spatially constant proportions from per-state weights."""
    w = np.array([[float(weights[name])] for name in k.states])
    if np.any(w < 0):
        raise ValueError("proportion weights must be nonnegative")
    p = _exact_simplex(np.repeat(w, grid.cells + 1, axis=1))
    return [NodalField(grid, p[i]) for i in range(k.n_states)]


def logistic_proportions(grid: Grid, k: ChannelKinetics, profiles: dict) -> list[NodalField]:
    """Per-state logistic weight profiles, normalized nodewise.

    Each state maps to {"base": b, "amp": a, "k": slope, "x0": midpoint}
    giving the unnormalized weight b + a / (1 + exp(-slope (x - x0))).
    """
    x = grid.nodes
    rows = []
    for name in k.states:
        prof = profiles[name]
        base = float(prof.get("base", 0.0))
        amp = float(prof.get("amp", 0.0))
        slope = float(prof.get("k", 1.0))
        x0 = float(prof.get("x0", 0.0))
        rows.append(base + amp / (1.0 + np.exp(-slope * (x - x0))))
    w = np.asarray(rows)
    if np.any(w < 0):
        raise ValueError("logistic weight profiles must be nonnegative")
    p = _exact_simplex(w)
    return [NodalField(grid, p[i]) for i in range(k.n_states)]


def build_p0(grid: Grid, k: ChannelKinetics, spec: dict) -> list[NodalField]:
    form = spec.get("form")
    params = spec.get("params", {})
    if form == "uniform":
        return uniform_proportions(grid, k, params["weights"])
    if form == "logistic":
        return logistic_proportions(grid, k, params["profiles"])
    raise ValueError(f"unknown p0 form {form!r}")
