"""2D-FFT periodogram baseline."""
import numpy as np
import pytest

from src.baseline.periodogram import RangeDopplerMap, extract_peaks, fft2d_detect, periodogram
from src.core.types import ChannelVector, DetectionFlag, Provenance, Scene
from src.recovery.detectors import DetectorConfig
from src.scene.channel import atom, atom_matrix, synthesize_channel
from src.scene.resources import full_resource_set, select_resources


def _measurement(config, rs, truths):
    A = atom_matrix(config, rs, [t.delay for t in truths], [t.doppler for t in truths])
    return ChannelVector(A @ np.array([t.gain for t in truths]), rs)


class TestPeriodogram:
    def test_on_grid_peak_height(self, grid16, cell_target):
        rs = full_resource_set(grid16)
        t = cell_target(grid16, 4.0, -6.0, 0.5)
        rd = periodogram(_measurement(grid16, rs, [t]), rs, grid16)
        assert rd.shape == (16, 16)
        p, q = np.unravel_index(np.argmax(rd.magnitudes), rd.shape)
        assert (p, q) == (4, 2)
        assert rd.magnitudes[p, q] == pytest.approx(0.25 * 256 ** 2)

    def test_oversampled_axes(self, grid16):
        rs = full_resource_set(grid16)
        rd = periodogram(ChannelVector(np.ones(len(rs)), rs), rs, grid16, oversampling=2)
        assert rd.shape == (32, 32)
        assert rd.delays[1] == pytest.approx(grid16.delay_cell / 2)

    def test_frame_and_csv(self, grid8, tmp_path):
        rs = full_resource_set(grid8)
        rd = periodogram(atom(grid8, rs, 0.0, 0.0), rs, grid8)
        frame = rd.to_frame()
        assert list(frame.columns) == ["delay_bin", "doppler_bin", "delay_s", "doppler_hz", "magnitude"]
        assert len(frame) == 64
        path = rd.export_csv(tmp_path / "rd.csv")
        assert path.exists()

    def test_map_validation(self):
        with pytest.raises(ValueError, match="shape"):
            RangeDopplerMap(np.zeros((2, 3)), np.arange(2.0), np.arange(2.0), 4)
        with pytest.raises(ValueError, match=">= 0"):
            RangeDopplerMap(-np.ones((2, 2)), np.arange(2.0), np.arange(2.0), 4)


class TestExtractPeaks:
    def test_two_targets(self, grid16, cell_target):
        rs = full_resource_set(grid16)
        truths = [cell_target(grid16, 3.0, 2.0, 1.0), cell_target(grid16, 11.0, -5.0, 0.6j)]
        rd = periodogram(_measurement(grid16, rs, truths), rs, grid16)
        found = extract_peaks(rd, k=2)
        assert len(found) == 2
        assert found[0].delay == pytest.approx(truths[0].delay)
        assert found[1].doppler == pytest.approx(truths[1].doppler)
        assert found[0].gain == pytest.approx(1.0)
        assert found[1].gain == pytest.approx(0.6j)
        assert all(d.provenance is Provenance.COARSE for d in found)

    def test_gain_phase_is_kept(self, grid16, cell_target):
        rs = select_resources(grid16, "elementwise", 0.5, seed=2)
        for phase in (0.4, 2.0, -2.9):
            t = cell_target(grid16, 6.0, -3.0, 0.8 * np.exp(1j * phase))
            found = extract_peaks(periodogram(_measurement(grid16, rs, [t]), rs, grid16), k=1)
            assert found[0].gain == pytest.approx(t.gain)

    def test_map_without_correlation_gives_magnitude(self, grid16, cell_target):
        rs = full_resource_set(grid16)
        t = cell_target(grid16, 5.0, 1.0, -0.5j)
        rd = periodogram(_measurement(grid16, rs, [t]), rs, grid16)
        bare = RangeDopplerMap(rd.magnitudes, rd.delays, rd.dopplers, rd.n_resources)
        assert extract_peaks(bare, k=1)[0].gain == pytest.approx(0.5)

    def test_half_cell_pair_merges(self, grid16, cell_target):
        rs = full_resource_set(grid16)
        truths = [cell_target(grid16, 7.25, 3.0), cell_target(grid16, 7.75, 3.0)]
        rd = periodogram(_measurement(grid16, rs, truths), rs, grid16)
        found = extract_peaks(rd, threshold=0.5 * rd.magnitudes.max())
        assert len(found) == 1

    def test_short_flag(self, grid16, cell_target):
        rs = full_resource_set(grid16)
        rd = periodogram(_measurement(grid16, rs, [cell_target(grid16, 3.0, 2.0)]), rs, grid16)
        found = extract_peaks(rd, k=3, threshold=1.0)
        assert len(found) == 1
        assert found.has(DetectionFlag.SHORT)

    def test_needs_k_or_threshold(self, grid8):
        rs = full_resource_set(grid8)
        rd = periodogram(atom(grid8, rs, 0.0, 0.0), rs, grid8)
        with pytest.raises(ValueError):
            extract_peaks(rd)
        with pytest.raises(ValueError):
            extract_peaks(rd, k=0)


class TestFft2dDetect:
    def test_k_known(self, grid32, cell_target):
        rs = select_resources(grid32, "elementwise", 0.5, seed=2)
        truths = [cell_target(grid32, 5.0, 4.0), cell_target(grid32, 20.0, -9.0, 0.8)]
        result = fft2d_detect(_measurement(grid32, rs, truths), rs, grid32, DetectorConfig(oversampling=1), k_known=2)
        assert sorted(round(d.delay / grid32.delay_cell) for d in result) == [5, 20]

    def test_k_known_zero(self, grid16):
        rs = full_resource_set(grid16)
        assert len(fft2d_detect(atom(grid16, rs, 0.0, 0.0), rs, grid16, DetectorConfig(), k_known=0)) == 0

    def test_cfar_threshold_rejects_noise(self, grid32, cell_target, rng):
        rs = full_resource_set(grid32)
        scene = Scene((cell_target(grid32, 9.0, 6.0),), 0.01)
        h = synthesize_channel(scene, rs, grid32, seed=rng)
        det = DetectorConfig(oversampling=1, false_alarm_prob=1e-4, noise_power=0.01)
        result = fft2d_detect(h, rs, grid32, det)
        assert len(result) == 1
        assert round(result[0].delay / grid32.delay_cell) == 9
