import json
import os

import numpy as np
import pytest

from axonsim.grid import build_grid
from axonsim.harness import (
    RunConfig,
    _sup_voltage_deviation,
    deviation_metrics,
    fit_rate,
    read_results,
    run_reference,
    run_replicate,
    run_sweep,
    strip_wall_clock,
)
from axonsim.profiles import fundamental_mode

SMALL = {
    "time_horizon": 0.2,
    "cells": 60,
    "dt": 2e-3,
    "sweep_n": [25, 50],
    "replicates": 2,
    "seed": 7,
}


class TestRunConfig:
    def test_defaults_fill_in(self):
        cfg = RunConfig.from_dict({})
        assert cfg.cells == 200 and cfg.sweep_n[-1] == 800

    def test_digest_stable_and_sensitive(self):
        a = RunConfig.from_dict(SMALL)
        b = RunConfig.from_dict(SMALL)
        c = RunConfig.from_dict({**SMALL, "seed": 8})
        assert a.digest() == b.digest()
        assert a.digest() != c.digest()

    def test_rejects_unsorted_sweep(self):
        with pytest.raises(ValueError):
            RunConfig.from_dict({**SMALL, "sweep_n": [50, 25]})

    def test_rejects_voltage_outside_band(self):
        with pytest.raises(ValueError, match="escapes"):
            RunConfig.from_dict({**SMALL, "v0": {
                "form": "eigenfunction", "params": {"mode": 1, "amplitude": 2.0}}})

    def test_refined_doubles_resolution(self):
        cfg = RunConfig.from_dict(SMALL).refined()
        assert cfg.cells == 120 and cfg.dt == 1e-3

    def test_json_roundtrip(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(SMALL))
        cfg = RunConfig.from_json(path)
        assert cfg.cells == 60


class TestDeviationMetrics:
    def test_identical_voltages_give_zero(self):
        g = build_grid(1.0, 40)
        v = np.vstack([fundamental_mode(g, amplitude=0.5).values] * 5)
        l2, h10 = _sup_voltage_deviation(np.arange(5.0), v, v, g)
        assert l2 == 0.0 and h10 == 0.0

    def test_constant_offset(self):
        from axonsim.grid import GridFunction, h10_norm, l2_norm

        g = build_grid(1.0, 40)
        base = np.vstack([fundamental_mode(g, amplitude=0.5).values] * 5)
        off = fundamental_mode(g, mode=2, amplitude=0.1)
        shifted = base + off.values
        l2, h10 = _sup_voltage_deviation(np.arange(5.0), shifted, base, g)
        assert l2 == pytest.approx(l2_norm(off), rel=1e-12)
        assert h10 == pytest.approx(h10_norm(off), rel=1e-12)

    def test_metrics_monotone_in_time_window(self):
        cfg = RunConfig.from_dict(SMALL)
        grid, kin, _, _ = cfg.build()
        det = run_reference(cfg)
        traj = run_replicate(cfg, 25, 0)
        full = deviation_metrics(traj, det, grid, kin)
        # restrict both trajectories to the first half of the window
        import dataclasses

        half = det.n_times // 2
        det_half = dataclasses.replace(
            det, times=det.times[:half], v=det.v[:half], p=det.p[:half],
            dissipation=det.dissipation[:half])
        traj_half = dataclasses.replace(
            traj, times=traj.times[:half], v=traj.v[:half],
            v_chan_frozen=traj.v_chan_frozen[:half - 1])
        part = deviation_metrics(traj_half, det_half, grid, kin)
        assert part.sup_l2 <= full.sup_l2 + 1e-15
        assert part.sup_h10 <= full.sup_h10 + 1e-15
        for name in kin.states:
            assert part.sup_hm1[name] <= full.sup_hm1[name] + 1e-15

    def test_time_grid_mismatch_rejected(self):
        cfg = RunConfig.from_dict(SMALL)
        grid, kin, _, _ = cfg.build()
        det = run_reference(RunConfig.from_dict({**SMALL, "time_horizon": 0.1}))
        traj = run_replicate(cfg, 25, 0)
        with pytest.raises(ValueError):
            deviation_metrics(traj, det, grid, kin)


class TestSweep:
    def test_empty_sweep_writes_manifest_only(self, tmp_path):
        cfg = RunConfig.from_dict({**SMALL, "sweep_n": []})
        rows = run_sweep(cfg, tmp_path)
        assert rows == []
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["per_n_medians"] == {}
        body = (tmp_path / "results.csv").read_text()
        assert body.count("\n") == 1  # header only

    def test_byte_identical_bodies(self, tmp_path):
        cfg = RunConfig.from_dict(SMALL)
        run_sweep(cfg, tmp_path / "a")
        run_sweep(cfg, tmp_path / "b")
        a = strip_wall_clock((tmp_path / "a" / "results.csv").read_text())
        b = strip_wall_clock((tmp_path / "b" / "results.csv").read_text())
        assert a == b

    def test_worker_pool_matches_serial(self, tmp_path):
        cfg = RunConfig.from_dict(SMALL)
        run_sweep(cfg, tmp_path / "serial", workers=1)
        run_sweep(cfg, tmp_path / "pool", workers=2)
        a = strip_wall_clock((tmp_path / "serial" / "results.csv").read_text())
        b = strip_wall_clock((tmp_path / "pool" / "results.csv").read_text())
        assert a == b

    def test_rows_sorted_and_readable(self, tmp_path):
        cfg = RunConfig.from_dict(SMALL)
        run_sweep(cfg, tmp_path)
        rows = read_results(tmp_path / "results.csv")
        keys = [(r["N"], r["replicate"]) for r in rows]
        assert keys == sorted(keys)
        assert all(r["status"] == "ok" for r in rows)
        assert all(r["dev_l2"] > 0 for r in rows)

    def test_optional_trajectory_csvs(self, tmp_path):
        cfg = RunConfig.from_dict({**SMALL, "sweep_n": [25], "replicates": 2})
        run_sweep(cfg, tmp_path, save_trajectories=True)
        saved = sorted(os.listdir(tmp_path / "trajectories"))
        assert saved == ["n25_r0_voltage.csv", "n25_r1_voltage.csv"]

    def test_replicate_failure_is_isolated(self, tmp_path, monkeypatch):
        import axonsim.harness as harness
        from axonsim.errors import InvariantViolation

        real = harness.run_replicate

        def flaky(cfg, n_scale, replicate, store_history=True):
            if (n_scale, replicate) == (25, 1):
                raise InvariantViolation("forced failure at t=0.1")
            return real(cfg, n_scale, replicate, store_history=store_history)

        monkeypatch.setattr(harness, "run_replicate", flaky)
        cfg = RunConfig.from_dict(SMALL)
        rows = run_sweep(cfg, tmp_path, workers=1)
        flagged = [r for r in rows if r["status"] != "ok"]
        assert len(flagged) == 1
        assert flagged[0]["N"] == 25 and flagged[0]["replicate"] == 1
        assert "forced failure" in flagged[0]["status"]
        # the healthy rows match an unperturbed sweep exactly
        monkeypatch.setattr(harness, "run_replicate", real)
        clean = run_sweep(cfg, tmp_path / "clean", workers=1)
        for row, ref in zip(rows, clean):
            if row["status"] == "ok":
                assert row["dev_l2"] == ref["dev_l2"]


class TestFitRate:
    def _rows(self, values):
        return [
            {"N": n, "replicate": 0, "status": "ok", "dev_l2": v}
            for n, v in values
        ]

    def test_exact_half_power(self):
        rows = self._rows([(n, 3.0 * n**-0.5) for n in (25, 50, 100, 200)])
        slope, intercept, resid = fit_rate(rows, "dev_l2")
        assert slope == pytest.approx(-0.5, abs=1e-10)
        assert resid == pytest.approx(0.0, abs=1e-10)

    def test_constants_fit_flat(self):
        rows = self._rows([(n, 0.7) for n in (25, 50, 100)])
        slope, _, _ = fit_rate(rows, "dev_l2")
        assert slope == pytest.approx(0.0, abs=1e-12)

    def test_insufficient_data(self):
        rows = self._rows([(25, 1.0), (50, 0.5)])
        with pytest.raises(ValueError):
            fit_rate(rows, "dev_l2")


class TestCli:
    def test_det_and_fit(self, tmp_path):
        from axonsim.cli import main

        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({**SMALL, "sweep_n": [25, 50, 100],
                                        "replicates": 1, "time_horizon": 0.1}))
        assert main(["det", "--config", str(cfg_path), "--out",
                     str(tmp_path / "det"), "--stride", "10"]) == 0
        assert (tmp_path / "det" / "det_summary.csv").exists()
        assert main(["sweep", "--config", str(cfg_path), "--out",
                     str(tmp_path / "sw")]) == 0
        assert main(["fit", "--results", str(tmp_path / "sw" / "results.csv"),
                     "--metric", "dev_l2"]) == 0

    def test_stoch_outputs(self, tmp_path):
        from axonsim.cli import main

        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({**SMALL, "time_horizon": 0.05}))
        assert main(["stoch", "--config", str(cfg_path), "--n", "25",
                     "--out", str(tmp_path / "st"), "--stride", "5",
                     "--diagnostics"]) == 0
        assert (tmp_path / "st" / "stoch_jumps.csv").exists()
        assert (tmp_path / "st" / "stoch_mart_norms.csv").exists()
        manifest = json.loads((tmp_path / "st" / "stoch_manifest.json").read_text())
        assert manifest["n_scale"] == 25

    def test_validate_martingale_report(self, tmp_path):
        from axonsim.validate import martingale_suite

        report = tmp_path / "mart.json"
        checks = martingale_suite(n_scale=50, t_horizon=0.2, replicates=60,
                                  dt=5e-3, workers=1, report_path=report)
        payload = json.loads(report.read_text())
        assert set(payload["per_state"]) == {"closed", "open"}
        assert "predicted_variance" in payload["per_state"]["open"]
        assert len(payload["checks"]) == len(checks)

    def test_validate_norms(self, capsys):
        from axonsim.cli import main

        assert main(["validate", "--suite", "norms"]) == 0
        out = capsys.readouterr().out
        assert "[PASS]" in out and "[FAIL]" not in out
