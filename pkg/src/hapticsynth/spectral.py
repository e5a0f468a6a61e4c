"""Window functions, frame geometry, and DFT utilities.

Every frame in the pipeline covers exactly 0.1 s of signal, so bins are
spaced 10 Hz apart regardless of sample rate. The DFT convention used
throughout is numpy's: forward transform unnormalized, inverse scaled by
1/frame_len. Analysis and synthesis both use the periodic (DFT-even)
Hann window, which keeps the squared-window overlap-add sum constant
whenever the hop divides the frame length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hapticsynth.errors import InvalidArgumentError

# Model output contract: 100 magnitude bins at 10 Hz spacing (0..990 Hz),
# independent of the synthesis sample rate.
MODEL_BINS = 100
BIN_SPACING_HZ = 10.0
FRAME_HORIZON_S = 0.1


@dataclass(frozen=True)
class FrameGeometry:
    """Frame/hop layout tying a sample rate to the control-loop rate.

    frame_len always corresponds to 0.1 s of signal; hop is the number of
    new samples produced per control loop.
    """

    sample_rate_hz: float
    frame_len: int
    hop: int

    @classmethod
    def create(cls, sample_rate_hz: float, loop_rate_hz: float) -> "FrameGeometry":
        if sample_rate_hz <= 0 or loop_rate_hz <= 0:
            raise InvalidArgumentError("sample and loop rates must be positive")
        frame_len = int(round(FRAME_HORIZON_S * sample_rate_hz))
        if frame_len < 2 or frame_len % 2 != 0:
            raise InvalidArgumentError(
                f"sample rate {sample_rate_hz} Hz gives frame length {frame_len}; "
                "an even frame length >= 2 is required"
            )
        hop_f = sample_rate_hz / loop_rate_hz
        hop = int(round(hop_f))
        if abs(hop_f - hop) > 1e-9 or hop < 1:
            raise InvalidArgumentError(
                f"loop rate {loop_rate_hz} Hz must divide sample rate {sample_rate_hz} Hz"
            )
        if hop > frame_len:
            raise InvalidArgumentError(f"hop {hop} exceeds frame length {frame_len}")
        if frame_len % hop != 0:
            raise InvalidArgumentError(
                f"hop {hop} must divide frame length {frame_len} "
                "(constant overlap-add requirement)"
            )
        return cls(sample_rate_hz=float(sample_rate_hz), frame_len=frame_len, hop=hop)

    @property
    def bin_spacing_hz(self) -> float:
        return self.sample_rate_hz / self.frame_len

    @property
    def n_bins(self) -> int:
        """Number of non-negative-frequency bins (frame_len/2 + 1)."""
        return self.frame_len // 2 + 1

    @property
    def loop_rate_hz(self) -> float:
        return self.sample_rate_hz / self.hop


@dataclass
class MagnitudeFrame:
    """One 0.1 s-horizon magnitude DFT prediction: 100 bins, 10 Hz apart."""

    bins: np.ndarray
    timestamp_s: float = 0.0

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.float64)
        if self.bins.shape != (MODEL_BINS,):
            raise InvalidArgumentError(
                f"magnitude frame must have exactly {MODEL_BINS} bins, got {self.bins.shape}"
            )
        if np.any(self.bins < 0) or not np.all(np.isfinite(self.bins)):
            raise InvalidArgumentError("magnitude bins must be finite and non-negative")


def make_hann_window(length: int) -> np.ndarray:
    """Periodic Hann window: w[n] = 0.5 * (1 - cos(2 pi n / length)).

    w[0] = 0 and the maximum sits at length/2; the periodic form (rather
    than the symmetric one) is what keeps overlap-add sums constant.
    """
    if length < 2:
        raise InvalidArgumentError(f"window length must be >= 2, got {length}")
    n = np.arange(length, dtype=np.float64)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * n / length))


def windowed_magnitude_dft(frame: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Magnitude of the real-input DFT of an element-wise windowed frame."""
    frame = np.asarray(frame, dtype=np.float64)
    window = np.asarray(window, dtype=np.float64)
    if frame.shape != window.shape:
        raise InvalidArgumentError(
            f"frame length {frame.shape} does not match window length {window.shape}"
        )
    return np.abs(np.fft.rfft(frame * window))


def inverse_frame(spectrum: np.ndarray, geometry: FrameGeometry) -> np.ndarray:
    """Real inverse DFT of a non-negative-frequency spectrum.

    The spectrum is Hermitian-extended internally; output has length
    frame_len and satisfies rfft(inverse_frame(S)) == S to rounding error.
    """
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    if spectrum.shape != (geometry.n_bins,):
        raise InvalidArgumentError(
            f"expected {geometry.n_bins} spectrum bins, got {spectrum.shape}"
        )
    return np.fft.irfft(spectrum, n=geometry.frame_len)


def stft_magnitudes(signal: np.ndarray, geometry: FrameGeometry, n_frames: int) -> np.ndarray:
    """Hann-windowed magnitude STFT of `signal`, frame k starting at k*hop."""
    window = make_hann_window(geometry.frame_len)
    out = np.empty((n_frames, geometry.n_bins))
    for k in range(n_frames):
        seg = signal[k * geometry.hop : k * geometry.hop + geometry.frame_len]
        out[k] = np.abs(np.fft.rfft(seg * window))
    return out


def spectral_consistency_error(
    mag_frames: np.ndarray, signal: np.ndarray, geometry: FrameGeometry
) -> float:
    """Normalized L2 distance between magnitude frames and the signal's STFT.

    Frames and the re-analysis are compared over their shared bins (the
    frames may carry more bins than the signal's Nyquist supports). The
    distance is divided by the total input magnitude energy, so 0 means
    exact consistency and a zero signal scores 1.0.
    """
    mag_frames = np.atleast_2d(np.asarray(mag_frames, dtype=np.float64))
    if mag_frames.shape[0] == 0 or mag_frames.size == 0:
        raise InvalidArgumentError("frame stream is empty")
    signal = np.asarray(signal, dtype=np.float64)
    n_frames = mag_frames.shape[0]
    needed = (n_frames - 1) * geometry.hop + geometry.frame_len
    if signal.shape[0] < needed:
        raise InvalidArgumentError(
            f"signal has {signal.shape[0]} samples but {needed} are needed "
            f"to cover {n_frames} frames"
        )
    n_shared = min(mag_frames.shape[1], geometry.n_bins)
    reference = mag_frames[:, :n_shared]
    analyzed = stft_magnitudes(signal, geometry, n_frames)[:, :n_shared]
    norm = np.linalg.norm(reference)
    if norm == 0.0:
        return 0.0 if np.linalg.norm(analyzed) == 0.0 else float("inf")
    return float(np.linalg.norm(reference - analyzed) / norm)


def overlap_weight_sum(window: np.ndarray, hop: int) -> np.ndarray:
    """Steady-state squared-window overlap sum per hop position.

    Entry i is sum_j window[i + j*hop]^2; constant across i for the
    periodic Hann window when hop divides the window length with a
    quotient of at least 3 (always true at the pipeline's rates, where
    frame_len/hop = loop_rate/10).
    """
    wsq = window.astype(np.float64) ** 2
    out = np.zeros(hop)
    for i in range(hop):
        out[i] = wsq[i::hop].sum()
    return out
