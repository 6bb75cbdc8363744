"""Recordings, background subtraction, blocks and the rotating-target emulator."""
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.metrics.association import associate
from src.pipeline.carousel import (
    PRESETS,
    CarouselSetup,
    block_truth,
    carousel_truth,
    preset,
    synthesize_carousel_recording,
)
from src.pipeline.processing import BackgroundState, BlockStream, background_subtract, process_recording
from src.pipeline.recording import (
    HEADER,
    MAGIC,
    ChannelRecording,
    RecordingFormatError,
    RecordingMetadata,
    load_recording,
    load_resource_set,
    save_recording,
    save_resource_set,
)
from src.core.types import DetectionSet, TargetTruth
from src.recovery.detectors import DetectorConfig
from src.scene.resources import full_resource_set, select_resources
from tests.conftest import DF, FC, TO, grid


@pytest.fixture
def metadata():
    return RecordingMetadata(DF, TO, FC, start_time=1.5, description="bench")


def _random_recording(rng, n, m, metadata=None):
    return ChannelRecording(rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m)), metadata)


class TestRecordingFiles:
    @pytest.mark.parametrize("name", ["rec.bin", "rec.csv"])
    def test_round_trip(self, tmp_path, rng, metadata, name):
        rec = _random_recording(rng, 5, 7, metadata)
        path = save_recording(rec, tmp_path / name)
        loaded = load_recording(path)
        assert_array_equal(loaded.matrix, rec.matrix)
        assert loaded.metadata == metadata

    def test_missing_sidecar_leaves_metadata_empty(self, tmp_path, rng):
        path = save_recording(_random_recording(rng, 3, 3), tmp_path / "rec.bin")
        assert load_recording(path).metadata is None

    def test_raw_layout_is_symbol_major(self, tmp_path):
        H = np.arange(6, dtype=float).reshape(2, 3) + 0j
        path = save_recording(ChannelRecording(H), tmp_path / "rec.bin")
        data = path.read_bytes()
        assert data[:8] == MAGIC
        values = np.frombuffer(data, dtype="<c16", offset=HEADER.size)
        assert_array_equal(values.real, [0, 3, 1, 4, 2, 5])

    @pytest.mark.parametrize("payload, offset", [
        (b"BADMAGIC" + HEADER.pack(MAGIC, 1, 1)[8:] + bytes(16), 0),
        (MAGIC + b"\x01", 9),
        (HEADER.pack(MAGIC, 0, 4), 8),
        (HEADER.pack(MAGIC, 4, 0), 12),
        (HEADER.pack(MAGIC, 2, 2) + bytes(48), 64),
    ])
    def test_raw_format_errors(self, tmp_path, payload, offset):
        path = tmp_path / "bad.bin"
        path.write_bytes(payload)
        with pytest.raises(RecordingFormatError) as err:
            load_recording(path)
        assert err.value.offset == offset

    def test_csv_bad_value_reports_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("n,m,re,im\n0,0,1.0,0.0\n1,0,abc,0.0\n")
        with pytest.raises(RecordingFormatError, match="'re'") as err:
            load_recording(path)
        assert err.value.offset == 2

    def test_csv_duplicate_cell(self, tmp_path):
        path = tmp_path / "dup.csv"
        path.write_text("n,m,re,im\n0,0,1.0,0.0\n0,0,2.0,0.0\n")
        with pytest.raises(RecordingFormatError, match="duplicate"):
            load_recording(path)

    def test_unknown_format(self, tmp_path, rng):
        with pytest.raises(ValueError, match="Unknown recording format"):
            save_recording(_random_recording(rng, 2, 2), tmp_path / "rec.bin", fmt="hdf5")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_recording(tmp_path / "absent.bin")


class TestRecordingTypes:
    def test_metadata_validation(self):
        with pytest.raises(ValueError, match="symbol_duration"):
            RecordingMetadata(DF, 0.0, FC)

    def test_from_frames_and_timestamps(self, rng, metadata):
        frames = [rng.standard_normal((4, 3)), rng.standard_normal((4, 2))]
        rec = ChannelRecording.from_frames(frames, metadata)
        assert (rec.n_subcarriers, rec.n_symbols) == (4, 5)
        assert_allclose(rec.timestamps, 1.5 + np.arange(5) * TO)
        with pytest.raises(ValueError, match="subcarrier count"):
            ChannelRecording.from_frames([np.zeros((4, 2)), np.zeros((3, 2))])

    def test_resource_set_round_trip(self, tmp_path, grid16):
        rs = select_resources(grid16, "structured", n_sub_used=5, n_sym_used=3, seed=4)
        path = save_resource_set(rs, tmp_path / "resources.csv")
        loaded = load_resource_set(path)
        assert loaded.same_as(rs)
        assert loaded.mode is rs.mode
        assert loaded.per_symbol_subcarriers == 5

    def test_resource_set_without_sidecar(self, tmp_path, grid16):
        rs = full_resource_set(grid16)
        path = save_resource_set(rs, tmp_path / "resources.csv")
        path.with_name(path.name + ".json").unlink()
        with pytest.raises(ValueError, match="grid dimensions"):
            load_resource_set(path)
        assert load_resource_set(path, 16, 16).same_as(rs)


class TestBackground:
    def test_static_clutter_is_removed(self):
        column = np.exp(1j * np.linspace(0, 3, 8)) * 2.0
        rec = ChannelRecording(np.tile(column[:, None], (1, 40)))
        cleaned, state = background_subtract(rec, 0.9)
        assert_allclose(cleaned.matrix, 0.0, atol=1e-12)
        assert_allclose(state.average, column, atol=1e-12)

    def test_fast_tone_passes(self):
        # α = 1/(2 T_o): gain 1 + 0.1/1.9 once the seed transient has decayed
        tone = (-1.0) ** np.arange(200)
        rec = ChannelRecording(np.tile(tone, (4, 1)))
        cleaned, _ = background_subtract(rec, 0.9)
        assert_allclose(cleaned.matrix[:, 150:] / rec.matrix[:, 150:], 1.0 + 0.1 / 1.9, rtol=1e-4)

    def test_chunks_match_single_pass(self, rng):
        rec = _random_recording(rng, 6, 50)
        whole, _ = background_subtract(rec, 0.8)
        first, state = background_subtract(rec.with_matrix(rec.matrix[:, :20]), 0.8)
        second, _ = background_subtract(rec.with_matrix(rec.matrix[:, 20:]), state=state)
        assert_allclose(np.hstack([first.matrix, second.matrix]), whole.matrix, atol=1e-12)

    def test_linear_in_the_recording(self, rng):
        x = _random_recording(rng, 6, 40)
        y = _random_recording(rng, 6, 40)
        a, b = 0.7 - 1.3j, -2.1
        combined, state = background_subtract(x.with_matrix(a * x.matrix + b * y.matrix), 0.85)
        cleaned_x, state_x = background_subtract(x, 0.85)
        cleaned_y, state_y = background_subtract(y, 0.85)
        assert_allclose(combined.matrix, a * cleaned_x.matrix + b * cleaned_y.matrix, atol=1e-12)
        assert_allclose(state.average, a * state_x.average + b * state_y.average, atol=1e-12)

    def test_invalid_state(self, rng):
        with pytest.raises(ValueError, match="forgetting"):
            BackgroundState.zeros(4, 1.0)
        with pytest.raises(ValueError, match="subcarriers"):
            background_subtract(_random_recording(rng, 6, 5), state=BackgroundState.zeros(4))


class TestBlocks:
    def test_blocks_follow_template(self, rng):
        rec = _random_recording(rng, 8, 25)
        rs = select_resources(grid(8, 10), "elementwise", 0.3, seed=rng)
        stream = BlockStream(rec, 10, rs)
        assert len(stream) == 2
        blocks = list(stream)
        assert [k for _, k in blocks] == [0, 1]
        assert_array_equal(blocks[1][0].values, rec.matrix[:, 10:20][rs.subcarriers, rs.symbols])
        with pytest.raises(IndexError):
            stream.block_matrix(2)

    def test_short_recording_is_insufficient(self, rng):
        stream = BlockStream(_random_recording(rng, 8, 5), 10, full_resource_set(grid(8, 10)))
        assert stream.insufficient
        assert list(stream) == []

    def test_template_must_match_block_grid(self, rng):
        with pytest.raises(ValueError, match="does not match"):
            BlockStream(_random_recording(rng, 8, 30), 10, full_resource_set(grid(8, 12)))

    def test_process_calls_detector_per_block(self, rng, metadata):
        rec = _random_recording(rng, 8, 35, metadata)
        rs = full_resource_set(grid(8, 10))
        calls = []

        def detector(vector, rs_, config, det, k_known=None):
            calls.append((config.shape, k_known))
            return DetectionSet(())

        results = process_recording(rec, rs, DetectorConfig(), forgetting=None, k_known=3, detector=detector)
        assert [r.index for r in results] == [0, 1, 2]
        assert calls == [((8, 10), 3)] * 3
        assert results[2].start_time == pytest.approx(1.5 + 20 * TO)

    def test_process_needs_metadata(self, rng):
        with pytest.raises(ValueError, match="metadata"):
            process_recording(_random_recording(rng, 8, 20), full_resource_set(grid(8, 10)), DetectorConfig())


class TestCarousel:
    def test_truth_geometry(self):
        setup = preset("setup3", radius=1.0)
        config = grid(64, 200)
        delays, dopplers = carousel_truth(setup, config, [0.0, 0.1])
        assert delays.shape == (2, 2)
        assert_allclose(delays.sum(axis=1), 2.0 * setup.base_path / config.light_speed)
        assert_allclose(dopplers[:, 0], -dopplers[:, 1])
        expected = 2.0 * setup.radius * setup.angular_rate * math.sin(setup.initial_angle) / config.wavelength
        assert dopplers[0, 0] == pytest.approx(expected)

    def test_presets(self):
        assert set(PRESETS) == {"setup1", "setup2", "setup3", "setup4"}
        assert PRESETS["setup1"].gain == pytest.approx(0.5)
        assert PRESETS["setup4"].angular_rate == pytest.approx(2.0 * math.pi)
        with pytest.raises(ValueError, match="Unknown carousel preset"):
            preset("setup9")
        with pytest.raises(ValueError, match="base_path"):
            CarouselSetup("tight", 0.1, 30.0, radius=2.0, base_path=4.0)

    def test_noiseless_first_symbol(self, metadata):
        setup = PRESETS["setup2"]
        rec = synthesize_carousel_recording(setup, metadata, 16, 4, noise_power=0.0, clutter=())
        config = metadata.grid_config(16, 4)
        delays, _ = carousel_truth(setup, config, [metadata.start_time])
        freqs = FC + np.arange(16) * DF
        expected = setup.gain * np.exp(-2j * np.pi * freqs[:, None] * delays[0][None, :]).sum(axis=1)
        assert_allclose(rec.matrix[:, 0], expected, atol=1e-12)

    def test_pipeline_tracks_both_spheres(self):
        setup = preset("setup3", radius=1.0)
        meta = RecordingMetadata(DF, TO, FC)
        n, block_len, n_blocks = 64, 200, 20
        rec = synthesize_carousel_recording(setup, meta, n, block_len * n_blocks, noise_power=0.01, seed=11)
        rs = select_resources(grid(n, block_len), "elementwise", 0.01, seed=3)
        results = process_recording(rec, rs, DetectorConfig(), forgetting=0.9, k_known=2)
        assert len(results) == n_blocks

        config = meta.grid_config(n, block_len)
        delays, dopplers = block_truth(setup, meta, n, block_len, n_blocks)
        tracked = 0
        for result in results:
            truths = [TargetTruth(delays[result.index, i], dopplers[result.index, i]) for i in range(2)]
            tracked += associate(result.detections, truths, config, gates=(0.1, 0.1)).pod == 1.0
        assert tracked >= 0.9 * n_blocks
