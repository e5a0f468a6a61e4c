import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hapticsynth.errors import InvalidArgumentError
from hapticsynth.phase import (
    SpsiState,
    StreamSynthesizer,
    find_peaks,
    griffin_lim,
    interpolated_peak_hz,
    spsi_step,
    synthesize_stream,
    wrap_phase,
)
from hapticsynth.spectral import (
    FrameGeometry,
    spectral_consistency_error,
    stft_magnitudes,
)

GEOM_500 = FrameGeometry.create(500.0, 500.0)
GEOM_1K = FrameGeometry.create(1000.0, 500.0)


def tone_frames(geom, freqs_amps, n_frames, phase0=0.3):
    """Magnitude frames of a stationary multi-tone, via a long reference signal."""
    total = (n_frames - 1) * geom.hop + geom.frame_len
    t = np.arange(total) / geom.sample_rate_hz
    sig = sum(a * np.cos(2 * np.pi * f * t + phase0) for f, a in freqs_amps)
    return stft_magnitudes(sig, geom, n_frames)


def covered_consistency(frames, signal, geom):
    """Consistency over the frames fully covered by the emitted samples."""
    k = frames.shape[0] - geom.frame_len // geom.hop + 1
    return spectral_consistency_error(
        frames[:k], signal[: (k - 1) * geom.hop + geom.frame_len], geom
    )


class TestFindPeaks:
    def test_basic(self):
        assert find_peaks([0, 1, 0, 2, 0]) == [1, 3]

    def test_monotone_has_none(self):
        assert find_peaks(np.arange(10.0)) == []

    def test_plateau_tie_rule(self):
        assert find_peaks(np.full(8, 3.0)) == []
        # strict-left / non-strict-right picks the leftmost plateau sample
        assert find_peaks([0, 2, 2, 0]) == [1]

    def test_too_short_rejected(self):
        with pytest.raises(InvalidArgumentError):
            find_peaks([1, 2])


class TestSpsiStep:
    def test_zero_frame_carries_phase(self):
        state = SpsiState.initial(GEOM_500)
        state.prev_phase[:] = wrap_phase(np.linspace(-2, 2, GEOM_500.n_bins))
        before = state.prev_phase.copy()
        spectrum, after = spsi_step(state, np.zeros(GEOM_500.n_bins))
        np.testing.assert_allclose(spectrum, 0.0)
        np.testing.assert_allclose(after.prev_phase, before)
        assert after.frame_index == 1

    def test_magnitude_preserved(self):
        rng = np.random.default_rng(5)
        frame = rng.uniform(0, 3, GEOM_500.n_bins)
        spectrum, _ = spsi_step(SpsiState.initial(GEOM_500), frame)
        np.testing.assert_allclose(np.abs(spectrum), frame, rtol=1e-12)

    def test_phase_stays_wrapped(self):
        state = SpsiState.initial(GEOM_500)
        frame = tone_frames(GEOM_500, [(100.0, 1.0)], 1)[0]
        for _ in range(200):
            _, state = spsi_step(state, frame)
        assert np.all(state.prev_phase > -np.pi)
        assert np.all(state.prev_phase <= np.pi)

    def test_invalid_magnitudes_rejected(self):
        state = SpsiState.initial(GEOM_500)
        bad = np.zeros(GEOM_500.n_bins)
        bad[2] = np.nan
        with pytest.raises(InvalidArgumentError):
            spsi_step(state, bad)
        bad[2] = -1.0
        with pytest.raises(InvalidArgumentError):
            spsi_step(state, bad)

    def test_wrong_length_rejected(self):
        with pytest.raises(InvalidArgumentError):
            spsi_step(SpsiState.initial(GEOM_500), np.zeros(10))

    def test_bin_centered_tone_dominant_frequency(self):
        # fs=1000, frame 100, hop 2: constant 100 Hz magnitude stream.
        frames = tone_frames(GEOM_1K, [(100.0, 1.0)], 200)
        out = synthesize_stream(frames, GEOM_1K)
        steady = out[20 * GEOM_1K.hop :]
        spectrum = np.abs(np.fft.rfft(steady))
        freqs = np.fft.rfftfreq(len(steady), 1.0 / GEOM_1K.sample_rate_hz)
        dominant = freqs[np.argmax(spectrum)]
        assert abs(dominant - 100.0) <= GEOM_1K.bin_spacing_hz / 2

    def test_between_bin_frequency_estimate(self):
        frames = tone_frames(GEOM_1K, [(97.0, 1.0)], 60)
        estimates = interpolated_peak_hz(frames[40], GEOM_1K)
        dominant = max(estimates, key=lambda e: frames[40][e[0]])
        assert abs(dominant[1] - 97.0) < 1.0


class TestSynthesizeStream:
    def test_zero_frames_zero_signal(self):
        out = synthesize_stream(np.zeros((20, GEOM_500.n_bins)), GEOM_500)
        np.testing.assert_allclose(out, 0.0)
        assert out.shape == (20 * GEOM_500.hop,)

    def test_empty_stream_rejected(self):
        with pytest.raises(InvalidArgumentError):
            synthesize_stream(np.zeros((0, GEOM_500.n_bins)), GEOM_500)

    def test_stationary_amplitude_recovered(self):
        amp = 2.0
        frames = tone_frames(GEOM_500, [(100.0, amp)], 400)
        out = synthesize_stream(frames, GEOM_500)
        steady = out[200:380]
        measured = np.sqrt(2.0) * np.sqrt(np.mean(steady**2))
        assert abs(measured - amp) < 0.1 * amp

    def test_causal_prefix_bit_exact(self):
        rng = np.random.default_rng(17)
        frames = rng.uniform(0, 1, (120, GEOM_500.n_bins))
        modified = frames.copy()
        modified[60:] = rng.uniform(0, 1, (60, GEOM_500.n_bins))
        full = synthesize_stream(frames, GEOM_500)
        tampered = synthesize_stream(modified, GEOM_500)
        k = 60 * GEOM_500.hop
        assert np.array_equal(full[:k], tampered[:k])

    def test_deterministic(self):
        rng = np.random.default_rng(23)
        frames = rng.uniform(0, 1, (80, GEOM_500.n_bins))
        a = synthesize_stream(frames, GEOM_500)
        b = synthesize_stream(frames, GEOM_500)
        assert np.array_equal(a, b)

    def test_streaming_matches_batch(self):
        rng = np.random.default_rng(29)
        frames = rng.uniform(0, 1, (50, GEOM_500.n_bins))
        synth = StreamSynthesizer(GEOM_500)
        streamed = np.concatenate([synth.step(f) for f in frames])
        assert np.array_equal(streamed, synthesize_stream(frames, GEOM_500))

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=15, deadline=None)
    def test_causality_property(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(10, 40))
        frames = rng.uniform(0, 2, (n + 10, GEOM_500.n_bins))
        prefix = synthesize_stream(frames[:n], GEOM_500)
        full = synthesize_stream(frames, GEOM_500)
        assert np.array_equal(full[: n * GEOM_500.hop], prefix)


class TestGriffinLim:
    def test_real_signal_frames_converge(self):
        frames = tone_frames(GEOM_500, [(100.0, 1.0)], 300)
        out = griffin_lim(frames, GEOM_500, 100)
        err = spectral_consistency_error(frames, out, GEOM_500)
        assert err < 0.05

    def test_monotone_consistency(self):
        frames = tone_frames(GEOM_500, [(97.0, 1.0)], 200)
        e1 = spectral_consistency_error(frames, griffin_lim(frames, GEOM_500, 1), GEOM_500)
        e100 = spectral_consistency_error(frames, griffin_lim(frames, GEOM_500, 100), GEOM_500)
        assert e100 <= e1 + 1e-6

    def test_zero_frames_zero_signal(self):
        frames = np.zeros((30, GEOM_500.n_bins))
        out = griffin_lim(frames, GEOM_500, 5)
        np.testing.assert_allclose(out, 0.0)
        assert spectral_consistency_error(frames, out, GEOM_500) == 0.0

    def test_empty_rejected(self):
        with pytest.raises(InvalidArgumentError):
            griffin_lim(np.zeros((0, GEOM_500.n_bins)), GEOM_500, 5)

    def test_bad_iterations_rejected(self):
        with pytest.raises(InvalidArgumentError):
            griffin_lim(np.zeros((3, GEOM_500.n_bins)), GEOM_500, 0)


class TestOracleBound:
    def test_spsi_within_2x_of_griffin_lim(self):
        # Smoke subset; the full 10-stream suite runs in the acceptance tests.
        for tones in ([(100.0, 1.0)], [(97.0, 1.0)], [(60.0, 1.0), (150.0, 0.8)]):
            frames = tone_frames(GEOM_500, tones, 400)
            spsi_err = covered_consistency(frames, synthesize_stream(frames, GEOM_500), GEOM_500)
            gl = griffin_lim(frames, GEOM_500, 100)
            gl_err = covered_consistency(frames, gl, GEOM_500)
            assert spsi_err <= 2.0 * gl_err + 1e-12
            assert spsi_err < 0.2
            assert gl_err < 0.2


class TestWrapPhase:
    @given(st.floats(min_value=-50.0, max_value=50.0, allow_nan=False))
    @settings(max_examples=100, deadline=None)
    def test_range(self, angle):
        w = float(wrap_phase(angle))
        assert -np.pi < w <= np.pi
        assert abs(np.exp(1j * w) - np.exp(1j * angle)) < 1e-9

    def test_boundary(self):
        assert float(wrap_phase(np.pi)) == pytest.approx(np.pi)
        assert float(wrap_phase(-np.pi)) == pytest.approx(np.pi)
