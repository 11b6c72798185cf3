"""Fluid-model integrator: reaction-diffusion voltage PDE + proportion ODEs.

The voltage solves dv/dt = Laplacian(v) - a v + b with zero boundary values,
where a = sum_xi c_xi p_xi >= 0 and b = sum_xi c_xi p_xi v_xi come from the
nodal proportion fields.  The proportions solve, at every node, the linear
system dp/dt = G(v) p with G the clamped-rate generator.

Time stepping is Strang splitting: an RK4 half-step of the proportions with
the voltage frozen, a Crank-Nicolson step of the PDE with the reaction
coefficients frozen at the proportion midpoint (one symmetric tridiagonal
solve), then a second proportion half-step.  RK4 on the linear proportion
system preserves the nodal total sum(p) exactly up to roundoff.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import InvariantViolation
from .grid import (
    Grid,
    GridFunction,
    NodalField,
    density_functional,
    mass_bands,
    stiffness_bands,
)
from .kinetics import ChannelKinetics, rate

PROP_SUM_TOL = 1e-9
PROP_RANGE_TOL = 1e-9
PROP_CLIP = 1e-9
VOLTAGE_TOL = 1e-8


@dataclass(eq=False)
class DeterministicState:
    """Instantaneous fluid-model state: time, voltage, per-state proportions.

    ``p`` has shape (n_states, n_nodes); row order follows the kinetics
    states.  At every node the proportions are in [0, 1] and sum to one.
    """

    t: float
    v: GridFunction
    p: np.ndarray

    def validate(self, k: ChannelKinetics) -> None:
        n_nodes = self.v.grid.cells + 1
        if self.p.shape != (k.n_states, n_nodes):
            raise ValueError(
                f"proportions shape {self.p.shape} != ({k.n_states}, {n_nodes})"
            )
        sums = self.p.sum(axis=0)
        if np.max(np.abs(sums - 1.0)) > PROP_SUM_TOL:
            raise InvariantViolation(
                f"proportions sum off by {np.max(np.abs(sums - 1.0)):.3e} at t={self.t}"
            )
        if self.p.min() < -PROP_RANGE_TOL or self.p.max() > 1.0 + PROP_RANGE_TOL:
            raise InvariantViolation(
                f"proportions outside [0,1]: min={self.p.min():.3e}, "
                f"max={self.p.max():.3e} at t={self.t}"
            )


@dataclass(eq=False)
class DetTrajectory:
    """Sampled fluid-model run: times, snapshots, accumulated dissipation."""

    grid: Grid
    state_names: tuple[str, ...]
    times: np.ndarray              # (n_times,)
    v: np.ndarray                  # (n_times, n_interior)
    p: np.ndarray                  # (n_times, n_states, n_nodes)
    dissipation: np.ndarray        # (n_times,)  running int ||Dv||_L2^2 ds
    sup_v_inf: float
    max_prop_sum_error: float

    @property
    def n_times(self) -> int:
        return self.times.size

    def v_at(self, idx: int) -> GridFunction:
        return GridFunction(self.grid, self.v[idx])

    def p_at(self, idx: int, state_idx: int) -> NodalField:
        return NodalField(self.grid, self.p[idx, state_idx])

    def state_at(self, idx: int) -> DeterministicState:
        return DeterministicState(
            t=float(self.times[idx]), v=self.v_at(idx), p=self.p[idx].copy()
        )


def reaction_coefficients(p: np.ndarray, k: ChannelKinetics, grid: Grid):
    """Absorption a = sum c_xi p_xi and source b = sum c_xi p_xi v_xi."""
    a = k.conductance @ p
    b = (k.conductance * k.driving) @ p
    return NodalField(grid, a), NodalField(grid, b)


def nodal_rate_table(k: ChannelKinetics, v_full: np.ndarray) -> dict:
    """Clamped rate vectors over the nodes for every ordered state pair."""
    return {
        pair: rate(k, pair[0], pair[1], v_full) for pair in k.forms
    }


def _prop_derivative(p: np.ndarray, table: dict) -> np.ndarray:
    dp = np.zeros_like(p)
    for (i, j), r in table.items():
        flow = r * p[i]
        dp[i] -= flow
        dp[j] += flow
    return dp


def _rk4_prop(p: np.ndarray, table: dict, dt: float) -> np.ndarray:
    k1 = _prop_derivative(p, table)
    k2 = _prop_derivative(p + 0.5 * dt * k1, table)
    k3 = _prop_derivative(p + 0.5 * dt * k2, table)
    k4 = _prop_derivative(p + dt * k3, table)
    return p + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _clip_proportions(p: np.ndarray, t: float) -> np.ndarray:
    lo = p.min()
    if lo >= 0.0:
        return p
    if lo < -PROP_CLIP:
        raise InvariantViolation(f"proportion {lo:.3e} below -{PROP_CLIP} at t={t}")
    p = np.clip(p, 0.0, None)
    return p / p.sum(axis=0)


def _weighted_mass_bands(a: np.ndarray, h: float):
    """Bands of the matrix int a phi_i phi_j with a piecewise linear."""
    diag = h / 12.0 * (a[:-2] + 6.0 * a[1:-1] + a[2:])
    off = h / 12.0 * (a[1:-2] + a[2:-1])
    return diag, off


def _tridiag_matvec(diag: np.ndarray, off: np.ndarray, x: np.ndarray) -> np.ndarray:
    y = diag * x
    y[:-1] += off * x[1:]
    y[1:] += off * x[:-1]
    return y


def _solve_tridiag(diag: np.ndarray, off: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = off
    ab[1] = diag
    ab[2, :-1] = off
    return solve_banded((1, 1), ab, rhs)


def step_guard(dt: float, k: ChannelKinetics, limit: float = 0.5) -> None:
    if dt <= 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if dt * k.alpha_max * (k.n_states - 1) > limit:
        raise ValueError(
            f"dt={dt} violates the kinetics stability guard "
            f"dt * alpha_max * (|E|-1) <= {limit}"
        )


def step_det(state: DeterministicState, dt: float, k: ChannelKinetics) -> DeterministicState:
    """One Strang step of the coupled fluid model."""
    step_guard(dt, k, limit=0.5)
    grid = state.v.grid
    h = grid.h
    kd, ko = stiffness_bands(grid)
    md, mo = mass_bands(grid)

    v_full = state.v.full()
    table = nodal_rate_table(k, v_full)
    p_mid = _rk4_prop(state.p, table, 0.5 * dt)
    p_mid = _clip_proportions(p_mid, state.t)

    a, b = reaction_coefficients(p_mid, k, grid)
    ad, ao = _weighted_mass_bands(a.values, h)
    lhs_d = md + 0.5 * dt * (kd + ad)
    lhs_o = mo + 0.5 * dt * (ko + ao)
    rhs_d = md - 0.5 * dt * (kd + ad)
    rhs_o = mo - 0.5 * dt * (ko + ao)
    rhs = _tridiag_matvec(rhs_d, rhs_o, state.v.values)
    rhs += dt * density_functional(b).loads
    v_new = _solve_tridiag(lhs_d, lhs_o, rhs)

    v_new_fn = GridFunction(grid, v_new)
    table2 = nodal_rate_table(k, v_new_fn.full())
    p_new = _rk4_prop(p_mid, table2, 0.5 * dt)
    p_new = _clip_proportions(p_new, state.t + dt)
    return DeterministicState(t=state.t + dt, v=v_new_fn, p=p_new)


def dissipation_budget(
    s0_l2: float, sup_inf: float, t: float, k: ChannelKinetics, half_length: float
) -> float:
    """Explicit cap on the accumulated gradient dissipation up to time t."""
    cmax = float(np.max(k.conductance))
    vmax = float(np.max(np.abs(k.driving)))
    return s0_l2**2 + half_length * t * cmax * sup_inf * (sup_inf + vmax)


def run_det(
    init: DeterministicState, t_horizon: float, dt: float, k: ChannelKinetics
) -> DetTrajectory:
    """Integrate the fluid model to the horizon, sampling every step.

    Aborts with :class:`InvariantViolation` if the proportion simplex, the
    voltage bounds, or the dissipation budget is violated beyond tolerance.
    """
    if t_horizon < 0:
        raise ValueError("time horizon must be nonnegative")
    init.validate(k)
    grid = init.v.grid
    kd, ko = stiffness_bands(grid)

    n_steps = int(round(t_horizon / dt)) if t_horizon > 0 else 0
    if t_horizon > 0:
        if abs(n_steps * dt - t_horizon) > 1e-9 * max(1.0, t_horizon):
            raise ValueError(f"horizon {t_horizon} is not a multiple of dt={dt}")
        step_guard(dt, k, limit=0.5)

    v0_full = init.v.full()
    v_lo = min(k.v_minus, float(v0_full.min()))
    v_hi = max(k.v_plus, float(v0_full.max()))
    s0 = np.sqrt(grid.h / 3.0 * np.sum(
        v0_full[:-1] ** 2 + v0_full[:-1] * v0_full[1:] + v0_full[1:] ** 2
    ))

    times = np.empty(n_steps + 1)
    v_snaps = np.empty((n_steps + 1, grid.n_interior))
    p_snaps = np.empty((n_steps + 1, k.n_states, grid.cells + 1))
    diss = np.zeros(n_steps + 1)

    state = init
    times[0] = init.t
    v_snaps[0] = init.v.values
    p_snaps[0] = init.p
    sup_inf = float(np.max(np.abs(v0_full)))
    grad_sq = float(state.v.values @ _tridiag_matvec(kd, ko, state.v.values))
    max_sum_err = float(np.max(np.abs(init.p.sum(axis=0) - 1.0)))

    for step in range(1, n_steps + 1):
        state = step_det(state, dt, k)
        times[step] = state.t
        v_snaps[step] = state.v.values
        p_snaps[step] = state.p

        sum_err = float(np.max(np.abs(state.p.sum(axis=0) - 1.0)))
        max_sum_err = max(max_sum_err, sum_err)
        if sum_err > PROP_SUM_TOL:
            raise InvariantViolation(
                f"proportion total off by {sum_err:.3e} at t={state.t}"
            )
        vmin, vmax = float(state.v.values.min()), float(state.v.values.max())
        vmin, vmax = min(vmin, 0.0), max(vmax, 0.0)
        if vmin < v_lo - VOLTAGE_TOL or vmax > v_hi + VOLTAGE_TOL:
            raise InvariantViolation(
                f"voltage [{vmin:.6f}, {vmax:.6f}] escaped "
                f"[{v_lo}, {v_hi}] at t={state.t}"
            )
        sup_inf = max(sup_inf, abs(vmin), abs(vmax))

        g = float(state.v.values @ _tridiag_matvec(kd, ko, state.v.values))
        diss[step] = diss[step - 1] + 0.5 * dt * (grad_sq + g)
        grad_sq = g
        budget = dissipation_budget(s0, sup_inf, state.t, k, grid.half_length)
        if diss[step] > budget:
            raise InvariantViolation(
                f"dissipation {diss[step]:.6f} exceeds budget {budget:.6f} at t={state.t}"
            )

    return DetTrajectory(
        grid=grid,
        state_names=k.states,
        times=times,
        v=v_snaps,
        p=p_snaps,
        dissipation=diss,
        sup_v_inf=sup_inf,
        max_prop_sum_error=max_sum_err,
    )


def proportion_drift(
    traj: DetTrajectory, idx: int, k: ChannelKinetics, state_idx: int
) -> NodalField:
    """Time derivative of one proportion field along the trajectory."""
    v_full = np.zeros(traj.grid.cells + 1)
    v_full[1:-1] = traj.v[idx]
    table = nodal_rate_table(k, v_full)
    dp = _prop_derivative(traj.p[idx], table)
    return NodalField(traj.grid, dp[state_idx])


def write_trajectory_csv(traj: DetTrajectory, path, stride: int = 1) -> None:
    """Long-format nodal snapshots: (t, node index, x, v, p_<state>...)."""
    nodes = traj.grid.nodes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "node", "x", "v"] + [f"p_{s}" for s in traj.state_names])
        for i in range(0, traj.n_times, stride):
            v_full = np.zeros(nodes.size)
            v_full[1:-1] = traj.v[i]
            for j in range(nodes.size):
                w.writerow(
                    [repr(float(traj.times[i])), j, repr(float(nodes[j])),
                     repr(float(v_full[j]))]
                    + [repr(float(traj.p[i, s, j])) for s in range(len(traj.state_names))]
                )


def write_summary_csv(traj: DetTrajectory, path, stride: int = 1) -> None:
    """Per-time norms: (t, l2, h10, dissipation)."""
    from .grid import h10_norm, l2_norm

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "l2", "h10", "dissipation"])
        for i in range(0, traj.n_times, stride):
            vf = traj.v_at(i)
            w.writerow([
                repr(float(traj.times[i])), repr(l2_norm(vf)), repr(h10_norm(vf)),
                repr(float(traj.dissipation[i])),
            ])
