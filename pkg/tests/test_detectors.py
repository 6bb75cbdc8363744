"""CFAR stopping, NOMP and grid OMP."""
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.core.types import ChannelVector, DetectionFlag, Provenance, ResourceSet, Scene, TargetTruth
from src.core.utils import circular_difference
from src.recovery.detectors import (
    DetectorConfig,
    cfar_threshold,
    coarse_detect,
    effective_cells,
    estimate_noise_power,
    ls_gains,
    nomp_detect,
    omp_detect,
    stop_level,
)
from src.recovery.dictionary import DictionarySpec
from src.scene.channel import atom, atom_matrix, synthesize_channel
from src.scene.resources import full_resource_set, select_resources


def _errors_cells(config, est, truth):
    du = circular_difference(est.delay / config.delay_cell, truth.delay / config.delay_cell, config.n_subcarriers)
    dw = circular_difference(est.doppler / config.doppler_cell, truth.doppler / config.doppler_cell, config.n_symbols)
    return abs(float(du)), abs(float(dw))


def _closest(config, detections, truth):
    return min(detections, key=lambda d: sum(_errors_cells(config, d, truth)))


class TestCfar:
    def test_threshold_formula(self):
        assert cfar_threshold(100, 0.01) == pytest.approx(math.log(100) - math.log(-math.log(0.99)))

    @pytest.mark.parametrize("n, p", [(0, 0.01), (10, 0.0), (10, 1.0)])
    def test_threshold_rejects(self, n, p):
        with pytest.raises(ValueError):
            cfar_threshold(n, p)

    def test_noise_estimate(self, rng):
        z = np.sqrt(1.5) * (rng.standard_normal(20000) + 1j * rng.standard_normal(20000))
        assert estimate_noise_power(z) == pytest.approx(3.0, rel=0.05)

    def test_false_alarm_rate(self, grid16, rng):
        rs = full_resource_set(grid16)
        det = DetectorConfig(oversampling=1, false_alarm_prob=0.01, noise_power=1.0)
        alarms = 0
        for _ in range(1000):
            h = synthesize_channel(Scene((), 1.0), rs, grid16, seed=rng)
            alarms += len(nomp_detect(h, rs, grid16, det)) > 0
        assert alarms / 1000 <= 0.03

    def test_false_alarm_rate_oversampled_sparse_median(self, grid64, sparse_rs64, rng):
        # default detector: γ = 4, σ² estimated from the median
        det = DetectorConfig()
        assert det.oversampling == 4 and det.noise_power is None
        trials = 1000
        alarms = 0
        for _ in range(trials):
            h = synthesize_channel(Scene((), 1.0), sparse_rs64, grid64, seed=rng)
            alarms += len(nomp_detect(h, sparse_rs64, grid64, det)) > 0
        assert alarms / trials <= 0.03

    def test_uncalibrated_count_is_too_low(self, grid64, sparse_rs64):
        det = DetectorConfig()
        calibrated = stop_level(sparse_rs64, det.dictionary(grid64), det)
        assert calibrated > cfar_threshold(len(sparse_rs64), det.false_alarm_prob) + 2.0

    def test_threshold_cells_overrides(self, grid16):
        rs = full_resource_set(grid16)
        det = DetectorConfig(threshold_cells=500)
        assert stop_level(rs, det.dictionary(grid16), det) == pytest.approx(cfar_threshold(500, 0.01))


class TestEffectiveCells:
    def test_at_least_searched_area(self, grid32, rng):
        for eta in (0.05, 0.3, 1.0):
            rs = select_resources(grid32, "elementwise", eta, seed=rng)
            for gamma in (1, 2, 4):
                d = DictionarySpec.build(grid32, gamma)
                assert effective_cells(rs, d, 0.01) >= 32 * 32

    def test_is_fixed_point(self, grid64, sparse_rs64):
        d = DictionarySpec.build(grid64, 4)
        n = effective_cells(sparse_rs64, d, 0.01)
        slopes = 2.0 * np.pi * sparse_rs64.indices / 64.0
        density = np.sqrt(np.linalg.det(np.cov(slopes, rowvar=False, bias=True))) / (2.0 * np.pi)
        # near-uniform slopes: √det Λ / 2π ≈ 2π/12
        assert density == pytest.approx(2.0 * np.pi / 12.0, rel=0.2)
        expected = 64 * 64 * density * (2.0 * cfar_threshold(n, 0.01) - 1.0)
        assert n == pytest.approx(expected, rel=1e-3)

    def test_single_symbol_falls_back_to_area(self, grid16):
        rs = ResourceSet(np.array([[n, 0] for n in range(16)]), 16, 16)
        d = DictionarySpec.build(grid16, 2)
        assert effective_cells(rs, d, 0.01) == pytest.approx(16 * 16)

    def test_truncated_dictionary_counts_fewer(self, grid32):
        rs = full_resource_set(grid32)
        full = DictionarySpec.build(grid32, 4)
        short = DictionarySpec.build(grid32, 4, max_range=0.25 * grid32.light_speed * grid32.delay_span)
        assert short.shape[0] < full.shape[0]
        assert effective_cells(rs, short, 0.01) < effective_cells(rs, full, 0.01)

    def test_stricter_probability_counts_more(self, grid32):
        rs = full_resource_set(grid32)
        d = DictionarySpec.build(grid32, 4)
        assert effective_cells(rs, d, 1e-4) > effective_cells(rs, d, 1e-2)


class TestDetectorConfig:
    def test_errors_are_collected(self):
        with pytest.raises(ValueError) as err:
            DetectorConfig(refinement_steps=-1, false_alarm_prob=1.5, oversampling=0)
        message = str(err.value)
        assert "refinement_steps" in message and "false_alarm_prob" in message and "oversampling" in message

    def test_max_detections_bounded_by_resources(self, grid8):
        rs = select_resources(grid8, "elementwise", 0.1, seed=0)
        h = ChannelVector(np.ones(len(rs)), rs)
        with pytest.raises(ValueError, match="max_detections"):
            nomp_detect(h, rs, grid8, DetectorConfig(max_detections=16))


class TestCoarseAndGains:
    def test_coarse_picks_on_grid_cell(self, grid16, cell_target):
        rs = full_resource_set(grid16)
        t = cell_target(grid16, 5.0, -3.0, 0.5 - 0.25j)
        h = ChannelVector(t.gain * atom(grid16, rs, t.delay, t.doppler).values, rs)
        d = DictionarySpec.build(grid16, 1)
        coarse = coarse_detect(h, grid16, d)
        assert coarse.cell == (5, 5)
        assert coarse.delay == pytest.approx(t.delay)
        assert coarse.doppler == pytest.approx(t.doppler)
        assert abs(coarse.gain - t.gain) < 1e-12

    def test_coarse_cell_ignores_scaling(self, grid32, rng):
        rs = select_resources(grid32, "elementwise", 0.3, seed=rng)
        d = DictionarySpec.build(grid32, 4)
        for _ in range(10):
            h = ChannelVector(rng.standard_normal(len(rs)) + 1j * rng.standard_normal(len(rs)), rs)
            base = coarse_detect(h, grid32, d)
            for scale in (1e-3, 7.5j, 2e4 * np.exp(0.3j)):
                scaled = coarse_detect(h.with_values(scale * h.values), grid32, d)
                assert scaled.cell == base.cell
                assert scaled.peak_metric == pytest.approx(base.peak_metric, rel=1e-9)

    def test_ls_gains_match_pseudo_inverse(self, grid16, rng, cell_target):
        rs = select_resources(grid16, "elementwise", 0.4, seed=rng)
        for _ in range(20):
            K = int(rng.integers(1, 5))
            truths = [cell_target(grid16, rng.uniform(0, 16), rng.uniform(-8, 8)) for _ in range(K)]
            h = ChannelVector(rng.standard_normal(len(rs)) + 1j * rng.standard_normal(len(rs)), rs)
            fit = ls_gains(truths, h, grid16)
            A = atom_matrix(grid16, rs, [t.delay for t in truths], [t.doppler for t in truths])
            expected = np.linalg.pinv(A) @ h.values
            assert_allclose(fit.gains, expected, rtol=1e-8, atol=1e-10)
            assert not fit.rank_deficient

    def test_duplicate_atoms_are_rank_deficient(self, grid16, cell_target):
        rs = full_resource_set(grid16)
        t = cell_target(grid16, 2.5, 1.5)
        h = ChannelVector(atom(grid16, rs, t.delay, t.doppler).values, rs)
        fit = ls_gains([t, t], h, grid16)
        assert fit.rank_deficient
        assert fit.rank == 1
        assert_allclose(fit.gains, [0.5, 0.5], atol=1e-10)


class TestExactRecovery:
    @pytest.mark.parametrize("detect", [nomp_detect, omp_detect])
    def test_on_grid_target(self, grid64, sparse_rs64, cell_target, detect):
        det = DetectorConfig(oversampling=1)
        t = cell_target(grid64, 17.0, -9.0, 0.8 + 0.6j)
        h = ChannelVector(t.gain * atom(grid64, sparse_rs64, t.delay, t.doppler).values, sparse_rs64)
        result = detect(h, sparse_rs64, grid64, det)
        assert len(result) == 1
        du, dw = _errors_cells(grid64, result[0], t)
        assert du < 1e-9 and dw < 1e-9
        assert abs(result[0].gain - t.gain) < 1e-9

    def test_off_grid_gap(self, grid64, sparse_rs64, cell_target):
        det = DetectorConfig(oversampling=1, refinement_steps=5)
        t = cell_target(grid64, 23.37, 14.37, 1.0)
        h = ChannelVector(atom(grid64, sparse_rs64, t.delay, t.doppler).values, sparse_rs64)

        nomp = nomp_detect(h, sparse_rs64, grid64, det, k_known=1)
        omp = omp_detect(h, sparse_rs64, grid64, det, k_known=1)
        nomp_err = max(_errors_cells(grid64, nomp[0], t))
        omp_err = max(_errors_cells(grid64, omp[0], t))
        assert nomp_err < 1e-3
        assert omp_err > 0.2
        assert omp_err >= 100 * nomp_err

    def test_half_cell_offset_lands_on_adjacent_point(self, grid16, cell_target):
        rs = full_resource_set(grid16)
        t = cell_target(grid16, 6.5, 2.0)
        h = ChannelVector(atom(grid16, rs, t.delay, t.doppler).values, rs)
        result = omp_detect(h, rs, grid16, DetectorConfig(oversampling=1), k_known=1)
        du, dw = _errors_cells(grid16, result[0], t)
        assert du == pytest.approx(0.5)
        assert dw == pytest.approx(0.0, abs=1e-9)


class TestNomp:
    def test_three_targets_sparse_grid(self, grid64, sparse_rs64, cell_target, rng):
        truths = (
            cell_target(grid64, 10.3, -20.6, 1.0),
            cell_target(grid64, 30.7, 5.2, 0.8 * np.exp(1j)),
            cell_target(grid64, 50.45, 18.8, 0.9 * np.exp(-2j)),
        )
        scene = Scene(truths, 1.0 / 10 ** 2.5)
        h = synthesize_channel(scene, sparse_rs64, grid64, seed=rng)
        det = DetectorConfig(noise_power=scene.noise_power)
        result = nomp_detect(h, sparse_rs64, grid64, det)
        assert len(result) == 3
        for truth in truths:
            du, dw = _errors_cells(grid64, _closest(grid64, result, truth), truth)
            assert du < 0.05 and dw < 0.05
        assert all(d.provenance is Provenance.GLOBALLY_REFINED for d in result)

    def test_convergence_in_k_iterations(self, grid32, cell_target, rng):
        cells = [(3.3, -12.6), (9.7, -4.2), (15.45, 3.9), (21.2, 10.35), (27.8, -9.1), (5.6, 12.7)]
        truths = tuple(cell_target(grid32, u, w, np.exp(1j * rng.uniform(0, 2 * np.pi))) for u, w in cells)
        rs = full_resource_set(grid32)
        h = synthesize_channel(Scene(truths, 1e-3), rs, grid32, seed=rng)
        det = DetectorConfig(oversampling=4, false_alarm_prob=1e-3, noise_power=1e-3)
        result = nomp_detect(h, rs, grid32, det)
        assert result.iterations == 6
        assert len(result) == 6
        assert len(result.residual_trace) == 7
        assert np.all(np.diff(result.residual_trace) < 0)
        assert not result.flags

    def test_half_cell_pair_is_split(self, grid32, cell_target, rng):
        truths = (cell_target(grid32, 10.2, 3.3, 1.0), cell_target(grid32, 10.7, 3.3, 0.8 * np.exp(1.2j)))
        rs = full_resource_set(grid32)
        h = synthesize_channel(Scene(truths, 1e-4), rs, grid32, seed=rng)
        result = nomp_detect(h, rs, grid32, DetectorConfig(noise_power=1e-4), k_known=2)
        assert len(result) == 2
        for truth in truths:
            du, dw = _errors_cells(grid32, _closest(grid32, result, truth), truth)
            assert du < 0.05 and dw < 0.05
        assert _closest(grid32, result, truths[0]) is not _closest(grid32, result, truths[1])

    def test_refinement_beats_coarse_grid(self, grid32, rng):
        rs = select_resources(grid32, "elementwise", 0.5, seed=rng)
        det = DetectorConfig(oversampling=4, noise_power=0.01)
        nomp_errors, grid_errors = [], []
        for _ in range(30):
            truth = TargetTruth(
                rng.uniform(0, 32) * grid32.delay_cell,
                rng.uniform(-15, 15) * grid32.doppler_cell,
                np.exp(2j * np.pi * rng.uniform()),
            )
            h = synthesize_channel(Scene((truth,), 0.01), rs, grid32, seed=rng)
            nomp_errors.append(max(_errors_cells(grid32, nomp_detect(h, rs, grid32, det, k_known=1)[0], truth)))
            grid_errors.append(max(_errors_cells(grid32, omp_detect(h, rs, grid32, det, k_known=1)[0], truth)))
        assert np.mean(nomp_errors) < 0.25 * np.mean(grid_errors)
        assert np.mean(np.array(nomp_errors) < np.array(grid_errors)) >= 0.9

    def test_k_known_zero(self, grid16):
        rs = full_resource_set(grid16)
        h = ChannelVector(atom(grid16, rs, 1e-8, 0.0).values, rs)
        result = nomp_detect(h, rs, grid16, DetectorConfig(), k_known=0)
        assert len(result) == 0
        assert result.iterations == 0

    def test_negative_k_known(self, grid16):
        rs = full_resource_set(grid16)
        with pytest.raises(ValueError, match="k_known"):
            nomp_detect(ChannelVector(np.ones(len(rs)), rs), rs, grid16, DetectorConfig(), k_known=-1)

    def test_mismatched_resource_set(self, grid16):
        rs = full_resource_set(grid16)
        other = select_resources(grid16, "elementwise", 0.5, seed=1)
        with pytest.raises(ValueError, match="ordered"):
            nomp_detect(ChannelVector(np.ones(len(rs)), rs), other, grid16, DetectorConfig())

    def test_noise_only_returns_nothing(self, grid32, rng):
        rs = full_resource_set(grid32)
        h = synthesize_channel(Scene((), 1.0), rs, grid32, seed=rng)
        result = nomp_detect(h, rs, grid32, DetectorConfig(false_alarm_prob=1e-4, noise_power=1.0))
        assert len(result) == 0
        assert result.residual_trace == (pytest.approx(h.energy),)


class TestOmp:
    def test_truncation_is_flagged(self, grid16, rng):
        rs = full_resource_set(grid16)
        h = synthesize_channel(Scene((), 1.0), rs, grid16, seed=rng)
        det = DetectorConfig(oversampling=1, false_alarm_prob=0.999999, noise_power=1.0, max_detections=2)
        result = omp_detect(h, rs, grid16, det)
        assert len(result) == 2
        assert result.has(DetectionFlag.TRUNCATED)

    def test_estimates_stay_on_grid(self, grid32, cell_target):
        rs = full_resource_set(grid32)
        truths = [cell_target(grid32, 4.3, 2.8), cell_target(grid32, 20.6, -7.4, 0.7)]
        A = atom_matrix(grid32, rs, [t.delay for t in truths], [t.doppler for t in truths])
        h = ChannelVector(A @ np.array([t.gain for t in truths]), rs)
        d = DictionarySpec.build(grid32, 4)
        result = omp_detect(h, rs, grid32, DetectorConfig(oversampling=4), k_known=2)
        for est in result:
            assert est.delay / d.delay_step == pytest.approx(round(est.delay / d.delay_step), abs=1e-6)
            assert est.provenance is Provenance.COARSE
        assert result.iterations == 2
