"""Causal single-pass spectrogram inversion and an offline oracle.

The streaming path reconstructs a time signal from magnitude-only DFT
frames using only past frames: each step finds spectral peaks, advances
each peak's phase by its interpolated instantaneous frequency times the
hop, and locks the remaining bins to their governing peak. Locked bins
alternate sign with bin distance from the peak, matching the mainlobe
structure of a Hann-windowed sinusoid referenced to the frame start; a
plain copy of the peak phase would cancel roughly two thirds of a
bin-centered tone's amplitude under overlap-add.

The iterative offline inverter (`griffin_lim`) is test equipment only:
it sees all frames at once and is never used in the render path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hapticsynth.errors import InvalidArgumentError
from hapticsynth.spectral import (
    FrameGeometry,
    inverse_frame,
    make_hann_window,
    overlap_weight_sum,
)


def wrap_phase(phase: np.ndarray | float):
    """Wrap angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(phase, dtype=np.float64), 2.0 * np.pi)


@dataclass
class SpsiState:
    """Per-session causal phase-retrieval state."""

    prev_phase: np.ndarray
    geometry: FrameGeometry
    frame_index: int = 0

    @classmethod
    def initial(cls, geometry: FrameGeometry, init: str = "zeros", seed: int = 0) -> "SpsiState":
        """Fresh state; phases start at zero unless init='random'."""
        if init == "zeros":
            phase = np.zeros(geometry.n_bins)
        elif init == "random":
            rng = np.random.default_rng(seed)
            phase = wrap_phase(rng.uniform(-np.pi, np.pi, geometry.n_bins))
        else:
            raise InvalidArgumentError(f"unknown phase init '{init}'")
        return cls(prev_phase=phase, geometry=geometry, frame_index=0)


def find_peaks(magnitude: np.ndarray) -> list[int]:
    """Interior local maxima: strict rise on the left, non-strict on the right.

    The strict left inequality picks the leftmost sample of a plateau and
    rejects all-equal sequences.
    """
    magnitude = np.asarray(magnitude, dtype=np.float64)
    if magnitude.shape[0] < 3:
        raise InvalidArgumentError("need at least 3 bins to find interior peaks")
    mid = magnitude[1:-1]
    mask = (mid > magnitude[:-2]) & (mid >= magnitude[2:])
    return [int(i) + 1 for i in np.flatnonzero(mask)]


def _peak_fractional_offset(alpha: float, beta: float, gamma: float) -> float:
    """Parabolic vertex offset in bins from the center sample, in [-0.5, 0.5]."""
    denom = alpha - 2.0 * beta + gamma
    if denom == 0.0:
        return 0.0
    p = 0.5 * (alpha - gamma) / denom
    return float(np.clip(p, -0.5, 0.5))


def spsi_step(state: SpsiState, frame: np.ndarray) -> tuple[np.ndarray, SpsiState]:
    """Assign phases to one magnitude frame using only past information.

    For each peak bin m the instantaneous frequency is estimated by
    parabolic interpolation of the magnitudes at m-1, m, m+1, and the
    stored phase advances by 2*pi*f*hop/sample_rate. Non-peak bins take
    the phase of the peak governing their region of influence (bounded
    by the magnitude minima between peaks, ties toward the lower peak),
    offset by pi per bin of distance. Returns the complex spectrum
    frame * exp(i*phase) and the updated state; magnitudes pass through
    untouched.
    """
    geometry = state.geometry
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (geometry.n_bins,):
        raise InvalidArgumentError(
            f"expected {geometry.n_bins} magnitude bins, got {frame.shape}"
        )
    if np.any(np.isnan(frame)) or np.any(frame < 0):
        raise InvalidArgumentError("magnitudes must be non-negative and not NaN")

    n_bins = geometry.n_bins
    peaks = find_peaks(frame) if n_bins >= 3 else []
    new_phase = state.prev_phase.copy()

    if peaks:
        hop_phase = 2.0 * np.pi * geometry.hop / geometry.frame_len
        for m in peaks:
            p = _peak_fractional_offset(frame[m - 1], frame[m], frame[m + 1])
            new_phase[m] = state.prev_phase[m] + hop_phase * (m + p)

        # Region boundaries: minimum-magnitude bin between adjacent peaks
        # belongs to the lower-index peak's region.
        starts = [0]
        for left, right in zip(peaks[:-1], peaks[1:]):
            trough = left + 1 + int(np.argmin(frame[left + 1 : right]))
            starts.append(trough + 1)
        ends = starts[1:] + [n_bins]

        for m, start, end in zip(peaks, starts, ends):
            k = np.arange(start, end)
            region = new_phase[m] + np.pi * (k - m)
            region[m - start] = new_phase[m]
            new_phase[start:end] = region

    new_phase = wrap_phase(new_phase)
    spectrum = frame * np.exp(1j * new_phase)
    next_state = SpsiState(
        prev_phase=new_phase, geometry=geometry, frame_index=state.frame_index + 1
    )
    return spectrum, next_state


class StreamSynthesizer:
    """Streaming synthesis: one magnitude frame in, `hop` samples out.

    Each step runs spsi_step, inverse-transforms the spectrum, applies
    the Hann synthesis window, and overlap-adds into an output buffer. A
    parallel buffer accumulates the squared synthesis window, so emitted
    samples are normalized by exactly the overlap weight they have
    received; once the buffer is full this equals the constant
    steady-state sum of squared windows.
    """

    def __init__(self, geometry: FrameGeometry, phase_init: str = "zeros", seed: int = 0):
        self.geometry = geometry
        self.window = make_hann_window(geometry.frame_len)
        self.state = SpsiState.initial(geometry, init=phase_init, seed=seed)
        self._ola = np.zeros(geometry.frame_len)
        self._weights = np.zeros(geometry.frame_len)
        self._wsq = self.window**2
        self.steady_weight = overlap_weight_sum(self.window, geometry.hop)

    def step(self, frame: np.ndarray) -> np.ndarray:
        """Consume one magnitude frame, emit `hop` new output samples."""
        spectrum, self.state = spsi_step(self.state, frame)
        segment = inverse_frame(spectrum, self.geometry)
        self._ola += segment * self.window
        self._weights += self._wsq

        hop = self.geometry.hop
        head = self._ola[:hop]
        weight = self._weights[:hop]
        out = np.where(weight > 0.0, head / np.where(weight > 0.0, weight, 1.0), 0.0)

        self._ola[:-hop] = self._ola[hop:]
        self._ola[-hop:] = 0.0
        self._weights[:-hop] = self._weights[hop:]
        self._weights[-hop:] = 0.0
        return out


def synthesize_stream(
    frames: np.ndarray, geometry: FrameGeometry, phase_init: str = "zeros", seed: int = 0
) -> np.ndarray:
    """Reconstruct a signal from a stream of magnitude frames.

    Emits hop samples per frame (len(frames) * hop total). Output is
    strictly causal: the first k*hop samples depend only on frames[:k].
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if frames.size == 0:
        raise InvalidArgumentError("frame stream is empty")
    synth = StreamSynthesizer(geometry, phase_init=phase_init, seed=seed)
    out = np.empty(frames.shape[0] * geometry.hop)
    for k in range(frames.shape[0]):
        out[k * geometry.hop : (k + 1) * geometry.hop] = synth.step(frames[k])
    return out


def interpolated_peak_hz(frame: np.ndarray, geometry: FrameGeometry) -> list[tuple[int, float]]:
    """Peak bins with their parabolically interpolated frequencies in Hz."""
    frame = np.asarray(frame, dtype=np.float64)
    out = []
    for m in find_peaks(frame):
        p = _peak_fractional_offset(frame[m - 1], frame[m], frame[m + 1])
        out.append((m, (m + p) * geometry.bin_spacing_hz))
    return out


def _istft_least_squares(
    spectra: np.ndarray, geometry: FrameGeometry, window: np.ndarray
) -> np.ndarray:
    """Weighted overlap-add inverse STFT with per-sample normalization."""
    n_frames = spectra.shape[0]
    hop, frame_len = geometry.hop, geometry.frame_len
    length = (n_frames - 1) * hop + frame_len
    segs = np.fft.irfft(spectra, n=frame_len, axis=1) * window
    signal = np.zeros(length)
    weight = np.zeros(length)
    wsq = window**2
    # Chunked overlap-add: chunk j of segment k lands at offset (k + j) * hop.
    chunks = frame_len // hop
    seg_chunks = segs.reshape(n_frames, chunks, hop)
    wsq_chunks = wsq.reshape(chunks, hop)
    sig_chunks = signal.reshape(-1, hop)
    wgt_chunks = weight.reshape(-1, hop)
    for j in range(chunks):
        sig_chunks[j : j + n_frames] += seg_chunks[:, j, :]
        wgt_chunks[j : j + n_frames] += wsq_chunks[j]
    good = weight > 0
    signal[good] /= weight[good]
    return signal


def _stft(signal: np.ndarray, geometry: FrameGeometry, window: np.ndarray, n_frames: int):
    frames = np.lib.stride_tricks.sliding_window_view(signal, geometry.frame_len)
    frames = frames[:: geometry.hop][:n_frames]
    return np.fft.rfft(frames * window, axis=1)


def griffin_lim(
    frames: np.ndarray,
    geometry: FrameGeometry,
    iterations: int,
    phase_init: str = "zeros",
    seed: int = 0,
) -> np.ndarray:
    """Iterative offline phase retrieval (alternating projections).

    Starts from zero (or seeded random) phases and alternates between the
    time domain and the magnitude constraint. Consistency error is
    non-increasing across iterations. Offline only: every output sample
    depends on all frames.
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if frames.size == 0:
        raise InvalidArgumentError("frame stream is empty")
    if iterations < 1:
        raise InvalidArgumentError("iterations must be >= 1")
    n_frames, n_bins = frames.shape
    if n_bins != geometry.n_bins:
        raise InvalidArgumentError(
            f"expected {geometry.n_bins} bins per frame, got {n_bins}"
        )
    window = make_hann_window(geometry.frame_len)
    if phase_init == "zeros":
        phase = np.zeros_like(frames)
    elif phase_init == "random":
        rng = np.random.default_rng(seed)
        phase = rng.uniform(-np.pi, np.pi, frames.shape)
    else:
        raise InvalidArgumentError(f"unknown phase init '{phase_init}'")

    spectra = frames * np.exp(1j * phase)
    signal = _istft_least_squares(spectra, geometry, window)
    for _ in range(iterations):
        spectra = _stft(signal, geometry, window, n_frames)
        mag = np.abs(spectra)
        unit = np.where(mag > 0, spectra / np.where(mag > 0, mag, 1.0), 1.0 + 0j)
        spectra = frames * unit
        signal = _istft_least_squares(spectra, geometry, window)
    return signal
