"""CRB, association and the seeded studies."""
import json
import math

import numpy as np
import pandas as pd
import pytest

from src.core.time_utils import format_elapsed
from src.core.types import Detection, DetectionSet, GridConfig, ResourceSet, TargetTruth
from src.metrics.association import associate, pod, rmse
from src.metrics.crb import CrbParams, crb, crb_exact
from src.metrics.experiments import ExperimentConfig, run_experiment
from src.recovery.detectors import DetectorConfig
from src.scene.resources import full_resource_set, select_resources
from tests.conftest import grid


class TestCrb:
    def test_full_grid_matches_closed_form(self, grid16):
        rs = full_resource_set(grid16)
        snr = 100.0
        range_var, velocity_var = crb(CrbParams.from_grid(grid16, rs, snr))
        exact = crb_exact(grid16, rs, snr)
        # closed form reads range as c·τ/2, the exact bound as c·τ
        assert exact.range_var == pytest.approx(4.0 * range_var, rel=1e-6)
        assert exact.velocity_var == pytest.approx(velocity_var, rel=1e-6)

    def test_scales_with_snr(self, grid16):
        rs = full_resource_set(grid16)
        low = crb(CrbParams.from_grid(grid16, rs, 10.0))
        high = crb(CrbParams.from_grid(grid16, rs, 100.0))
        assert high[0] == pytest.approx(low[0] / 10.0)
        assert high[1] == pytest.approx(low[1] / 10.0)

    def test_needs_two_occupied(self, grid16):
        params = CrbParams(10.0, 1, 4, 16, 16, 5e6, 64e-6, 5.9e9)
        with pytest.raises(ValueError, match="n >= 2"):
            crb(params)

    def test_invalid_params(self):
        with pytest.raises(ValueError, match="snr"):
            CrbParams(0.0, 4, 4, 16, 16, 5e6, 64e-6, 5.9e9)

    def test_single_symbol_is_singular(self, grid8):
        rs = ResourceSet(np.array([[0, 0], [1, 0], [2, 0]]), 8, 8)
        result = crb_exact(grid8, rs, 10.0)
        assert math.isinf(result.range_var) and math.isinf(result.velocity_var)

    def test_finite_on_wideband_numerology(self):
        config = GridConfig(1560, 280, 30e3, 35.68e-6, 5.9e9)
        rs = select_resources(config, "structured", n_sub_used=78, n_sym_used=56, seed=0)
        result = crb_exact(config, rs, 10.0)
        assert all(math.isfinite(v) and v > 0 for v in result)
        assert result.range_var == pytest.approx(config.light_speed ** 2 * result.delay_var)
        assert result.velocity_var == pytest.approx((config.wavelength / 2.0) ** 2 * result.doppler_var)

    def test_finite_at_30khz_spacing(self):
        config = GridConfig(64, 64, 30e3, 35.68e-6, 5.9e9)
        rs = full_resource_set(config)
        result = crb_exact(config, rs, 100.0)
        assert all(math.isfinite(v) and v > 0 for v in result)
        printed = crb(CrbParams.from_grid(config, rs, 100.0))
        assert result.range_var == pytest.approx(4.0 * printed[0], rel=1e-6)
        assert result.velocity_var == pytest.approx(printed[1], rel=1e-6)

    def test_fewer_resources_raise_the_bound(self, grid32):
        full = crb_exact(grid32, full_resource_set(grid32), 100.0)
        half = crb_exact(grid32, select_resources(grid32, "elementwise", 0.5, seed=4), 100.0)
        assert math.isfinite(half.range_var) and math.isfinite(half.velocity_var)
        assert half.range_var >= full.range_var
        assert half.velocity_var >= full.velocity_var


class TestAssociation:
    def _det(self, config, u, w):
        return Detection(u * config.delay_cell, w * config.doppler_cell, 1.0)

    def _truth(self, config, u, w):
        return TargetTruth(u * config.delay_cell, w * config.doppler_cell, 1.0)

    def test_pairs_and_signed_errors(self, grid16):
        truths = [self._truth(grid16, 3.0, 2.0), self._truth(grid16, 9.0, -4.0)]
        dets = DetectionSet((self._det(grid16, 9.2, -4.1), self._det(grid16, 2.9, 2.3)))
        m = associate(dets, truths, grid16)
        assert sorted(m.pairs) == [(0, 1), (1, 0)]
        assert m.pod == 1.0
        delay_err, doppler_err = m.error_of(0)
        assert delay_err / grid16.delay_cell == pytest.approx(-0.1)
        assert doppler_err / grid16.doppler_cell == pytest.approx(0.3)

    def test_gate_rejects(self, grid16):
        truths = [self._truth(grid16, 3.0, 2.0)]
        m = associate([self._det(grid16, 3.6, 2.0)], truths, grid16)
        assert m.pairs == ()
        assert m.misses == (0,)
        assert m.false_alarms == (0,)
        assert m.pod == 0.0
        with pytest.raises(KeyError):
            m.error_of(0)

    def test_circular_distance(self, grid16):
        truths = [self._truth(grid16, 0.1, 7.9)]
        m = associate([self._det(grid16, 15.8, -7.9)], truths, grid16)
        assert m.pairs == ((0, 0),)
        delay_err, doppler_err = m.error_of(0)
        assert delay_err / grid16.delay_cell == pytest.approx(-0.3)
        assert doppler_err / grid16.doppler_cell == pytest.approx(0.2)

    def test_nearest_pair_wins(self, grid16):
        truths = [self._truth(grid16, 5.0, 0.0), self._truth(grid16, 5.6, 0.0)]
        m = associate([self._det(grid16, 5.35, 0.0)], truths, grid16)
        assert m.pairs == ((1, 0),)
        assert m.misses == (0,)

    def test_empty_inputs(self, grid16):
        assert associate([], [], grid16).pod == 1.0
        m = associate([self._det(grid16, 1.0, 1.0)], [], grid16)
        assert m.false_alarms == (0,)

    def test_bad_gates(self, grid16):
        with pytest.raises(ValueError, match="gates"):
            associate([], [], grid16, gates=(0.5, 0.0))

    def test_rmse_and_pod(self, grid16):
        assert rmse([3.0, -4.0]) == pytest.approx(math.sqrt(12.5))
        assert math.isnan(rmse([]))
        truths = [self._truth(grid16, 3.0, 2.0), self._truth(grid16, 9.0, -4.0)]
        hit = associate([self._det(grid16, 3.0, 2.0)], truths, grid16)
        both = associate([self._det(grid16, 3.0, 2.0), self._det(grid16, 9.0, -4.0)], truths, grid16)
        assert pod([hit, both]) == pytest.approx(0.75)
        assert pod([hit, both], truth_index=1) == pytest.approx(0.5)
        assert math.isnan(pod([]))


def _study(**kwargs):
    defaults = dict(grid=grid(32, 32), occupancy=0.3, detector=DetectorConfig(oversampling=4))
    defaults.update(kwargs)
    return ExperimentConfig(**defaults)


class TestExperiments:
    def test_oracle_rmse_is_zero(self):
        cfg = _study(grid=grid(16, 16), detectors=("oracle",), sweep=(0.0, 30.0))
        report = run_experiment("rmse_vs_snr", cfg, trials=3, seed=1)
        assert report.axis == "snr_db"
        assert list(report.series("oracle", "rmse_range_m")) == [0.0, 0.0]
        assert list(report.series("oracle", "rmse_velocity_mps")) == [0.0, 0.0]

    def test_seeded_and_thread_independent(self):
        cfg = _study(grid=grid(16, 16), occupancy=0.5, sweep=(10.0,))
        one = run_experiment("pod_vs_swpr", cfg, trials=3, seed=5)
        again = run_experiment("pod_vs_swpr", cfg, trials=3, seed=5)
        threaded = run_experiment("pod_vs_swpr", _study(grid=grid(16, 16), occupancy=0.5, sweep=(10.0,), threads=3),
                                  trials=3, seed=5)
        assert one.records == again.records
        assert one.records == threaded.records
        assert {r["detector"] for r in one.records} == {"nomp", "omp", "fft2d"}
        for r in one.records:
            assert 0.0 <= r["pod_weak"] <= 1.0

    def test_nomp_beats_grid_omp_at_high_snr(self):
        cfg = _study(detectors=("nomp", "omp"), sweep=(30.0,), refinement_sweep=(5,))
        report = run_experiment("rmse_vs_snr", cfg, trials=10, seed=2)
        nomp = report.series("nomp_rs5", "rmse_range_m")[0]
        omp = report.series("omp", "rmse_range_m")[0]
        assert nomp < 0.5 * omp
        assert nomp <= 3.0 * report.series("nomp_rs5", "crb_exact_range_m")[0]

    def test_nomp_tracks_the_bound_and_omp_floors(self):
        cfg = _study(detectors=("nomp", "omp"), sweep=(30.0, 40.0), refinement_sweep=(5,))
        report = run_experiment("rmse_vs_snr", cfg, trials=20, seed=6)
        for column, bound in (("rmse_range_m", "crb_exact_range_m"), ("rmse_velocity_mps", "crb_exact_velocity_mps")):
            nomp = report.series("nomp_rs5", column)
            crb_std = report.series("nomp_rs5", bound)
            assert np.all(np.isfinite(crb_std))
            assert np.all(nomp <= 2.0 * crb_std)
            omp = report.series("omp", column)
            # grid-limited: ten times the SNR barely moves the error
            assert omp[1] >= 0.5 * omp[0]
            assert omp[1] > 10.0 * crb_std[1]

    def test_refinement_sweep_labels(self):
        cfg = _study(grid=grid(16, 16), detectors=("nomp",), sweep=(20.0,), refinement_sweep=(0, 3))
        report = run_experiment("rmse_vs_snr", cfg, trials=1)
        assert [r["detector"] for r in report.records] == ["nomp_rs0", "nomp_rs3"]

    def test_close_pair_is_resolved_by_nomp(self):
        cfg = _study(occupancy=0.5, detectors=("nomp", "fft2d"), sweep=(0.5,), snr_db=30.0)
        report = run_experiment("resolution_pair", cfg, trials=20, seed=3)
        nomp = report.series("nomp", "p_resolved")[0]
        assert nomp >= 0.8
        assert report.series("fft2d", "p_resolved")[0] < nomp
        assert report.series("nomp", "mean_detections")[0] == pytest.approx(2.0)

    def test_resolved_needs_both_within_gate(self):
        cfg = _study(grid=grid(16, 16), occupancy=0.5, detectors=("omp",), sweep=(0.5,), snr_db=30.0,
                     detector=DetectorConfig(oversampling=1))
        report = run_experiment("resolution_pair", cfg, trials=5, seed=8)
        # estimates on the γ = 1 grid are at least 0.05 cell off one of a half-cell pair
        assert report.series("omp", "p_resolved")[0] == 0.0

    def test_swpr_records_name_the_stop_rule(self):
        cfg = _study(grid=grid(16, 16), occupancy=0.5, sweep=(10.0,))
        report = run_experiment("pod_vs_swpr", cfg, trials=2, seed=1)
        stops = {r["detector"]: r["stop"] for r in report.records}
        assert stops == {"nomp": "cfar", "omp": "k_known=2", "fft2d": "k_known=2"}

    def test_convergence_traces(self):
        cfg = _study(grid=grid(32, 32), occupancy=1.0, snr_db=30.0, n_targets=3, detectors=("nomp",))
        report = run_experiment("convergence", cfg, trials=2, seed=4)
        assert set(report.traces) == {"nomp@1", "nomp@4"}
        for trace in report.traces.values():
            assert trace[0] == pytest.approx(1.0)
            assert trace[-1] < 0.1

    def test_timing_labels(self):
        cfg = _study(sweep=(16, 32), timing_repeats=1, occupancy=0.5)
        report = run_experiment("timing", cfg, trials=1)
        assert {r["detector"] for r in report.records} == {"nomp_fft", "nomp_direct"}
        assert all(r["wall_time_s"] > 0 for r in report.records)

    def test_exports(self, tmp_path):
        cfg = _study(grid=grid(16, 16), detectors=("oracle",), sweep=(10.0,))
        report = run_experiment("rmse_vs_snr", cfg, trials=2)
        data = json.loads(report.export_json(tmp_path / "report.json").read_text())
        assert data["scenario"] == "rmse_vs_snr"
        assert data["series"][0]["detector"] == "oracle"
        frame = pd.read_csv(report.export_csv(tmp_path / "report.csv"))
        assert "rmse_range_m" in frame.columns

    def test_invalid_requests(self):
        cfg = _study(grid=grid(16, 16))
        with pytest.raises(ValueError, match="scenario"):
            run_experiment("pod", cfg, trials=1)
        with pytest.raises(ValueError, match="trials"):
            run_experiment("timing", cfg, trials=0)
        with pytest.raises(ValueError, match="unknown detectors"):
            _study(detectors=("music",))


class TestFormatElapsed:
    @pytest.mark.parametrize("seconds, text", [
        (0.0, "0.0us"),
        (48.2e-6, "48.2us"),
        (3.15e-3, "3.15ms"),
        (12.4, "12.4s"),
        (423.0, "7m 03s"),
        (3600.0, "60m 00s"),
    ])
    def test_units(self, seconds, text):
        assert format_elapsed(seconds) == text

    def test_negative_rejected(self):
        with pytest.raises(ValueError, match="seconds"):
            format_elapsed(-1.0)
