"""Real-time rendering loop: probe physics to acceleration samples.

Per control loop (500 Hz by default): Hooke-law feedback force from the
probe's penetration of the virtual floor, low-pass filtered planar
velocity, action-window update, one magnitude-frame prediction, one
causal phase-retrieval step, and `hop` new output samples. Output is
hard-gated to zero while the filtered speed is below threshold; the
model and phase state keep advancing so re-contact stays coherent.

The model predicts bins up to 990 Hz; synthesis keeps only the bins at
or below the output Nyquist (bins 0..frame_len/2), which line up
exactly because both grids are 10 Hz.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from hapticsynth.errors import InvalidArgumentError
from hapticsynth.model import (
    ActionWindow,
    TextureEmbedding,
    WeightSet,
    predict_acceleration_dft,
)
from hapticsynth.spectral import MODEL_BINS, FrameGeometry
from hapticsynth.phase import StreamSynthesizer


@dataclass(frozen=True)
class RenderConfig:
    loop_rate_hz: float = 500.0
    synthesis_rate_hz: float = 500.0
    stiffness_n_per_mm: float = 0.5
    speed_threshold_mm_s: float = 5.0
    force_clamp_n: float = 3.3
    velocity_lpf_cutoff_hz: float = 20.0

    def __post_init__(self):
        for name in (
            "loop_rate_hz",
            "synthesis_rate_hz",
            "stiffness_n_per_mm",
            "speed_threshold_mm_s",
            "force_clamp_n",
            "velocity_lpf_cutoff_hz",
        ):
            if getattr(self, name) <= 0:
                raise InvalidArgumentError(f"{name} must be positive")
        ratio = self.synthesis_rate_hz / self.loop_rate_hz
        if abs(ratio - round(ratio)) > 1e-9:
            raise InvalidArgumentError(
                "synthesis rate must be an integer multiple of the loop rate"
            )

    @property
    def samples_per_loop(self) -> int:
        return int(round(self.synthesis_rate_hz / self.loop_rate_hz))

    def geometry(self) -> FrameGeometry:
        return FrameGeometry.create(self.synthesis_rate_hz, self.loop_rate_hz)


@dataclass(frozen=True)
class ProbeSample:
    """Probe position in mm (z up, virtual floor at z = 0) at time t_s."""

    t_s: float
    position: tuple[float, float, float]


def compute_feedback_force(
    penetration_mm: np.ndarray, config: RenderConfig
) -> tuple[np.ndarray, float]:
    """Hooke-law feedback force and clamped normal-force magnitude.

    No penetration (z >= 0) gives zero force. Otherwise the force is
    stiffness times penetration depth along z, lateral components zero
    (constant-friction rendering is out of scope), and the normal
    magnitude is clamped to the device limit.
    """
    z = float(penetration_mm[2])
    if z >= 0.0:
        return np.zeros(3), 0.0
    magnitude = min(abs(config.stiffness_n_per_mm * z), config.force_clamp_n)
    return np.array([0.0, 0.0, magnitude]), magnitude


class VelocityFilter:
    """First-order low-pass (bilinear transform, prewarped) per axis.

    DC gain is exactly 1 and the -3 dB point lands exactly on the
    configured cutoff. Coefficients are cached per time step.
    """

    def __init__(self, cutoff_hz: float):
        self.cutoff_hz = cutoff_hz
        self._x_prev = np.zeros(2)
        self._y_prev = np.zeros(2)
        self._dt: float | None = None
        self._a = 0.0

    def _coeff(self, dt: float) -> float:
        if dt != self._dt:
            self._a = float(np.tan(np.pi * self.cutoff_hz * dt))
            self._dt = dt
        return self._a

    def step(self, raw_mm_s: np.ndarray, dt_s: float) -> np.ndarray:
        if dt_s <= 0:
            raise InvalidArgumentError("dt must be positive")
        a = self._coeff(dt_s)
        x = np.asarray(raw_mm_s, dtype=np.float64)
        y = (a * (x + self._x_prev) + (1.0 - a) * self._y_prev) / (1.0 + a)
        self._x_prev = x
        self._y_prev = y
        return y


def filter_velocity(
    state: VelocityFilter, raw_velocity_mm_s: np.ndarray, dt_s: float
) -> np.ndarray:
    """Functional wrapper over VelocityFilter.step."""
    return state.step(raw_velocity_mm_s, dt_s)


def derive_velocity(prev: ProbeSample, curr: ProbeSample) -> np.ndarray:
    """Planar finite-difference velocity in mm/s."""
    dt = curr.t_s - prev.t_s
    if dt <= 0:
        raise InvalidArgumentError(
            f"timestamps must increase (dt = {dt})"
        )
    return np.array(
        [
            (curr.position[0] - prev.position[0]) / dt,
            (curr.position[1] - prev.position[1]) / dt,
        ]
    )


class ActuatorCompensator:
    """Feed-forward linear difference equation for actuator dynamics.

    Identity coefficients pass samples through untouched. Stability
    (denominator roots strictly inside the unit circle) is checked at
    construction; hardware-specific coefficient sets are supplied by the
    integrator.
    """

    def __init__(self, numerator=(1.0,), denominator=(1.0,)):
        self.b = np.asarray(numerator, dtype=np.float64)
        self.a = np.asarray(denominator, dtype=np.float64)
        if self.a.size == 0 or self.a[0] == 0.0:
            raise InvalidArgumentError("denominator must start with a nonzero term")
        if self.a.size > 1:
            roots = np.roots(self.a)
            if np.any(np.abs(roots) >= 1.0):
                raise InvalidArgumentError(
                    "unstable compensator: denominator roots must lie inside "
                    "the unit circle"
                )
        self._zi = np.zeros(max(self.b.size, self.a.size) - 1)

    @property
    def is_identity(self) -> bool:
        return self.b.tolist() == [1.0] and self.a.tolist() == [1.0]

    def process(self, samples: np.ndarray) -> np.ndarray:
        if self.is_identity:
            return samples
        from scipy.signal import lfilter

        out, self._zi = lfilter(self.b, self.a, samples, zi=self._zi)
        return out


class RenderSession:
    """Full streaming state for one texture-rendering stream.

    All buffers start zeroed. One session is one logical execution
    stream; render_step must not be re-entered concurrently. Sessions
    share only the immutable WeightSet.
    """

    def __init__(
        self,
        config: RenderConfig,
        texture: TextureEmbedding,
        weights: WeightSet,
        compensator: ActuatorCompensator | None = None,
    ):
        self.config = config
        self.texture = texture
        self.weights = weights
        self.geometry = config.geometry()
        self.action = ActionWindow()
        self.velocity_filter = VelocityFilter(config.velocity_lpf_cutoff_hz)
        self.synthesizer = StreamSynthesizer(self.geometry)
        self.compensator = compensator or ActuatorCompensator()
        self.loop_durations_s: list[float] = []
        self.prev_probe: ProbeSample | None = None
        self.last_frame: np.ndarray | None = None  # truncated bins fed to synthesis
        self._n_keep = self.geometry.n_bins  # model bins kept at this Nyquist
        if self._n_keep > MODEL_BINS:
            raise InvalidArgumentError(
                "synthesis rate exceeds the model's 990 Hz band"
            )

    def loop_dt(self) -> float:
        return 1.0 / self.config.loop_rate_hz


def render_step(session: RenderSession, probe: ProbeSample) -> tuple[np.ndarray, float]:
    """One control loop: probe sample in, `hop` acceleration samples out."""
    t0 = time.perf_counter()
    config = session.config

    # 1. Feedback force from penetration.
    _, normal_n = compute_feedback_force(np.asarray(probe.position), config)

    # 2. Raw planar velocity, low-pass filtered.
    if session.prev_probe is None:
        raw_velocity = np.zeros(2)
        dt = session.loop_dt()
    else:
        raw_velocity = derive_velocity(session.prev_probe, probe)
        dt = probe.t_s - session.prev_probe.t_s
    session.prev_probe = probe
    velocity = session.velocity_filter.step(raw_velocity, dt)

    # 3-4. Action window and prediction.
    session.action.push(normal_n, velocity)
    predicted = predict_acceleration_dft(
        session.texture, session.action, session.weights, timestamp_s=probe.t_s
    )

    # 5. Truncate the 100-bin frame to the synthesis Nyquist.
    frame = predicted.bins[: session._n_keep]
    session.last_frame = frame

    # 6-7. Causal phase retrieval and overlap-add; emit hop samples.
    samples = session.synthesizer.step(frame)

    # 8. Gate: below the speed threshold the user feels nothing.
    if float(np.hypot(velocity[0], velocity[1])) < config.speed_threshold_mm_s:
        samples = np.zeros_like(samples)

    # 9. Actuator compensation (identity by default).
    samples = session.compensator.process(samples)

    duration = time.perf_counter() - t0
    session.loop_durations_s.append(duration)
    return samples, duration


def resample_trajectory(
    samples: list[ProbeSample], loop_rate_hz: float
) -> list[ProbeSample]:
    """Zero-order-hold resampling onto the control-loop grid.

    Grid point i sits at t0 + i/loop_rate and takes the latest recorded
    sample at or before it; the grid spans the recording's duration.
    """
    if len(samples) < 2:
        raise InvalidArgumentError("trajectory needs at least 2 samples")
    t0 = samples[0].t_s
    duration = samples[-1].t_s - t0
    n_loops = max(1, int(round(duration * loop_rate_hz)))
    out = []
    src = 0
    for i in range(n_loops):
        t = t0 + i / loop_rate_hz
        while src + 1 < len(samples) and samples[src + 1].t_s <= t + 1e-12:
            src += 1
        out.append(ProbeSample(t_s=t, position=samples[src].position))
    return out


@dataclass
class TrajectoryResult:
    waveform: np.ndarray  # float32 acceleration, m/s^2
    force_trace: np.ndarray  # normal force per loop, N
    loop_durations_s: np.ndarray

    def timing_stats(self) -> dict:
        d = np.sort(self.loop_durations_s)
        return {
            "loops": int(d.size),
            "median_ms": float(np.median(d) * 1e3),
            "p95_ms": float(d[int(0.95 * (d.size - 1))] * 1e3),
            "p99_ms": float(d[int(0.99 * (d.size - 1))] * 1e3),
            "max_ms": float(d[-1] * 1e3),
        }


def run_trajectory(
    config: RenderConfig,
    texture: TextureEmbedding,
    weights: WeightSet,
    trajectory: list[ProbeSample],
    compensator: ActuatorCompensator | None = None,
) -> TrajectoryResult:
    """Batch replay: resample to the loop grid and render sequentially."""
    grid = resample_trajectory(trajectory, config.loop_rate_hz)
    session = RenderSession(config, texture, weights, compensator=compensator)
    hop = session.geometry.hop
    waveform = np.empty(len(grid) * hop, dtype=np.float32)
    forces = np.empty(len(grid))
    for i, probe in enumerate(grid):
        samples, _ = render_step(session, probe)
        waveform[i * hop : (i + 1) * hop] = samples
        forces[i] = min(
            abs(config.stiffness_n_per_mm * min(probe.position[2], 0.0)),
            config.force_clamp_n,
        )
    return TrajectoryResult(
        waveform=waveform,
        force_trace=forces,
        loop_durations_s=np.asarray(session.loop_durations_s),
    )
