import csv

import numpy as np
import pytest

from axonsim.deterministic import (
    DeterministicState,
    dissipation_budget,
    proportion_drift,
    reaction_coefficients,
    run_det,
    step_det,
    write_summary_csv,
    write_trajectory_csv,
)
from axonsim.grid import GridFunction, build_grid, l2_norm
from axonsim.heat import KernelParams, apply_semigroup
from axonsim.kinetics import make_kinetics
from axonsim.profiles import fundamental_mode, gaussian_bump


def kinetics(c_open=1.0, up=0.5, down=0.5, form="constant"):
    if form == "constant":
        rates = [
            {"from": "closed", "to": "open", "form": "constant", "params": {"a": up}},
            {"from": "open", "to": "closed", "form": "constant", "params": {"a": down}},
        ]
    else:
        rates = [
            {"from": "closed", "to": "open", "form": "sigmoid",
             "params": {"a": 0.2, "b": 1.8, "k": 4.0, "v0": 0.5}},
            {"from": "open", "to": "closed", "form": "sigmoid",
             "params": {"a": 0.2, "b": 1.8, "k": -4.0, "v0": 0.5}},
        ]
    return make_kinetics({
        "states": [
            {"name": "closed", "c": 0.0, "v": -0.2},
            {"name": "open", "c": c_open, "v": 1.0},
        ],
        "rates": rates,
        "clamp": [0.05, 5.0],
    })


def uniform_state(grid, v0, p_open):
    n = grid.cells + 1
    p = np.stack([(1 - p_open) * np.ones(n), p_open * np.ones(n)])
    return DeterministicState(t=0.0, v=v0, p=p)


class TestReactionCoefficients:
    def test_zero_conductance(self):
        g = build_grid(1.0, 10)
        k = kinetics(c_open=0.0)
        a, b = reaction_coefficients(np.stack([np.ones(11), np.zeros(11)]), k, g)
        assert np.all(a.values == 0) and np.all(b.values == 0)

    def test_all_open(self):
        g = build_grid(1.0, 10)
        k = kinetics()
        a, b = reaction_coefficients(np.stack([np.zeros(11), np.ones(11)]), k, g)
        assert np.allclose(a.values, 1.0) and np.allclose(b.values, 1.0)

    def test_half_open(self):
        g = build_grid(1.0, 10)
        k = kinetics()
        a, b = reaction_coefficients(np.stack([0.5 * np.ones(11), 0.5 * np.ones(11)]), k, g)
        assert np.allclose(a.values, 0.5) and np.allclose(b.values, 0.5)


class TestStepDet:
    def test_guard_rejects_large_step(self):
        g = build_grid(1.0, 20)
        state = uniform_state(g, fundamental_mode(g, amplitude=0.5), 0.3)
        with pytest.raises(ValueError):
            step_det(state, 0.2, kinetics(up=5.0, down=5.0))

    def test_pure_heat_decay(self):
        g = build_grid(1.0, 400)
        k = kinetics(c_open=0.0)
        state = uniform_state(g, fundamental_mode(g), 0.5)
        traj = run_det(state, 0.5, 1e-3, k)
        target = np.exp(-((np.pi / 2) ** 2) * 0.5) * fundamental_mode(g).values
        err = l2_norm(GridFunction(g, traj.v[-1] - target))
        assert err / l2_norm(GridFunction(g, target)) < 1e-3

    def test_pure_heat_matches_kernel_oracle(self):
        g = build_grid(1.0, 200)
        k = kinetics(c_open=0.0)
        bump = gaussian_bump(g, center=0.2, width=0.3, amplitude=0.4)
        traj = run_det(uniform_state(g, bump, 0.5), 0.2, 1e-3, k)
        oracle = apply_semigroup(0.2, bump, KernelParams(1.0))
        assert np.max(np.abs(traj.v[-1] - oracle.values)) < 2e-4

    def test_constant_rate_relaxation(self):
        alpha, beta = 0.8, 0.4
        g = build_grid(1.0, 50)
        k = kinetics(up=alpha, down=beta)
        traj = run_det(uniform_state(g, fundamental_mode(g, amplitude=0.3), 0.1),
                       1.0, 1e-3, k)
        pi_open = alpha / (alpha + beta)
        expected = pi_open + (0.1 - pi_open) * np.exp(-(alpha + beta))
        assert np.max(np.abs(traj.p[-1, 1] - expected)) < 1e-10


class TestRunDet:
    def test_zero_horizon_returns_initial(self):
        g = build_grid(1.0, 20)
        state = uniform_state(g, fundamental_mode(g, amplitude=0.5), 0.3)
        traj = run_det(state, 0.0, 1e-3, kinetics())
        assert traj.n_times == 1
        assert np.array_equal(traj.v[0], state.v.values)

    def test_simplex_preserved_to_roundoff(self):
        g = build_grid(1.0, 100)
        traj = run_det(uniform_state(g, fundamental_mode(g, amplitude=0.5), 0.3),
                       0.5, 1e-3, kinetics(form="sigmoid"))
        assert traj.max_prop_sum_error < 1e-12
        assert traj.p.min() >= -1e-9 and traj.p.max() <= 1 + 1e-9

    def test_voltage_stays_in_band(self):
        g = build_grid(1.0, 100)
        traj = run_det(uniform_state(g, fundamental_mode(g, amplitude=0.5), 0.3),
                       1.0, 1e-3, kinetics(form="sigmoid"))
        assert traj.v.min() >= -0.2 - 1e-8
        assert traj.v.max() <= 1.0 + 1e-8

    def test_dissipation_monotone_and_budgeted(self):
        g = build_grid(1.0, 100)
        k = kinetics(form="sigmoid")
        traj = run_det(uniform_state(g, fundamental_mode(g, amplitude=0.5), 0.3),
                       1.0, 1e-3, k)
        assert np.all(np.diff(traj.dissipation) >= 0)
        v0 = fundamental_mode(g, amplitude=0.5)
        s0 = l2_norm(v0)
        for idx in range(traj.n_times):
            budget = dissipation_budget(s0, traj.sup_v_inf, float(traj.times[idx]),
                                        k, 1.0)
            assert traj.dissipation[idx] <= budget

    def test_self_convergence_ratio(self):
        k = kinetics(form="sigmoid")
        finals = {}
        for cells, dt in ((100, 2e-3), (200, 1e-3), (400, 5e-4)):
            g = build_grid(1.0, cells)
            traj = run_det(uniform_state(g, fundamental_mode(g, amplitude=0.5), 0.3),
                           0.4, dt, k)
            finals[cells] = traj.v[-1]
        coarse = np.max(np.abs(finals[200][1::2] - finals[100]))
        fine = np.max(np.abs(finals[400][1::2] - finals[200]))
        assert 3.0 <= coarse / fine <= 5.0

    def test_gradient_sup_stable_under_refinement(self):
        k = kinetics(form="sigmoid")
        sups = []
        for cells, dt in ((100, 2e-3), (200, 1e-3)):
            g = build_grid(1.0, cells)
            traj = run_det(uniform_state(g, fundamental_mode(g, amplitude=0.5), 0.3),
                           0.4, dt, k)
            full = np.zeros((traj.n_times, cells + 1))
            full[:, 1:-1] = traj.v
            sups.append(float(np.max(np.abs(np.diff(full, axis=1))) / g.h))
        assert sups[0] > 0
        assert 0.8 <= sups[1] / sups[0] <= 1.25

    def test_drift_matches_generator(self):
        g = build_grid(1.0, 30)
        k = kinetics(form="sigmoid")
        traj = run_det(uniform_state(g, fundamental_mode(g, amplitude=0.5), 0.3),
                       0.1, 1e-3, k)
        drift_open = proportion_drift(traj, 50, k, 1)
        drift_closed = proportion_drift(traj, 50, k, 0)
        assert np.allclose(drift_open.values + drift_closed.values, 0.0, atol=1e-15)


class TestExports:
    def test_trajectory_csv(self, tmp_path):
        g = build_grid(1.0, 10)
        traj = run_det(uniform_state(g, fundamental_mode(g, amplitude=0.5), 0.3),
                       0.02, 1e-2, kinetics())
        path = tmp_path / "traj.csv"
        write_trajectory_csv(traj, path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t", "node", "x", "v", "p_closed", "p_open"]
        assert len(rows) == 1 + traj.n_times * (g.cells + 1)
        assert float(rows[1][3]) == 0.0  # boundary node voltage

    def test_summary_csv(self, tmp_path):
        g = build_grid(1.0, 10)
        traj = run_det(uniform_state(g, fundamental_mode(g, amplitude=0.5), 0.3),
                       0.02, 1e-2, kinetics())
        path = tmp_path / "summary.csv"
        write_summary_csv(traj, path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t", "l2", "h10", "dissipation"]
        assert len(rows) == 1 + traj.n_times
