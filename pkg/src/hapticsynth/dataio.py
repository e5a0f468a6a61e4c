"""File formats, synthetic dataset generation, and waveform export.

The synthetic ground-truth oracle stands in for recorded probe data at
desk scale: each texture is a resonant second-order autoregressive
filter driven by white noise whose standard deviation follows
c * sqrt(force * speed). The mapping is action-dependent and learnable,
which is all the training pipeline needs; the resonance frequency and
gain give every texture a distinct, recognizable spectrum.

Height maps are procedural (oriented grating plus band noise) and are
stored as 8-bit grayscale PNGs; image features are always computed from
the stored file so that library entries and later queries agree bit for
bit.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.io import wavfile
from scipy.signal import lfilter

from hapticsynth.engine import (
    ProbeSample,
    RenderConfig,
    VelocityFilter,
    compute_feedback_force,
    derive_velocity,
    resample_trajectory,
)
from hapticsynth.errors import DataFormatError, InvalidArgumentError
from hapticsynth.spectral import (
    MODEL_BINS,
    FrameGeometry,
    stft_magnitudes,
)
from hapticsynth.training import Stage1Dataset, Stage2Dataset

TRAJECTORY_HEADER = ["t_s", "x_mm", "y_mm", "z_mm"]
RECORDING_RATE_HZ = 2000.0  # covers the model's 990 Hz band


@dataclass
class Trajectory:
    samples: list[ProbeSample]
    name: str = ""

    def __post_init__(self):
        for a, b in zip(self.samples[:-1], self.samples[1:]):
            if b.t_s <= a.t_s:
                raise InvalidArgumentError(
                    f"trajectory '{self.name}': timestamps must strictly increase"
                )


@dataclass(frozen=True)
class SyntheticTexture:
    """Resonant AR(2) texture plus its procedural height-map parameters."""

    id: str
    name: str
    resonance_hz: float
    pole_radius: float
    gain: float  # m/s^2 per sqrt(N * mm/s)
    grating_cycles: float  # cycles across the height map
    grating_angle_rad: float
    roughness: float

    def __post_init__(self):
        if not 0.0 < self.pole_radius < 1.0:
            raise InvalidArgumentError(
                f"texture '{self.id}': AR poles must lie inside the unit circle"
            )

    def ar_coefficients(self, sample_rate_hz: float) -> tuple[float, float]:
        """Denominator coefficients a1, a2 of 1/(1 + a1 z^-1 + a2 z^-2)."""
        theta = 2.0 * np.pi * self.resonance_hz / sample_rate_hz
        return -2.0 * self.pole_radius * np.cos(theta), self.pole_radius**2


@dataclass
class Recording:
    """Aligned acceleration/force/velocity channels at one sample rate."""

    sample_rate_hz: float
    acceleration: np.ndarray
    force: np.ndarray
    velocity: np.ndarray  # (n, 2)

    def __post_init__(self):
        n = len(self.acceleration)
        if len(self.force) != n or len(self.velocity) != n:
            raise InvalidArgumentError("recording channels must have equal length")


# ---------------------------------------------------------------------------
# Trajectory CSV
# ---------------------------------------------------------------------------


def load_trajectory(path) -> Trajectory:
    """Parse a `t_s,x_mm,y_mm,z_mm` CSV with strict validation."""
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("empty trajectory file", line=1) from None
        if [h.strip() for h in header] != TRAJECTORY_HEADER:
            raise DataFormatError(
                f"expected header {','.join(TRAJECTORY_HEADER)}, got {','.join(header)}",
                line=1,
            )
        samples = []
        prev_t = None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataFormatError(f"expected 4 columns, got {len(row)}", line=lineno)
            try:
                t, x, y, z = (float(v) for v in row)
            except ValueError as exc:
                raise DataFormatError(f"unparsable value ({exc})", line=lineno) from None
            if prev_t is not None and t <= prev_t:
                raise DataFormatError(
                    f"non-increasing timestamp {t} after {prev_t}", line=lineno
                )
            prev_t = t
            samples.append(ProbeSample(t_s=t, position=(x, y, z)))
    if len(samples) < 2:
        raise DataFormatError("trajectory needs at least 2 samples")
    return Trajectory(samples=samples, name=path.stem)


def save_trajectory(trajectory: Trajectory, path) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRAJECTORY_HEADER)
        for s in trajectory.samples:
            writer.writerow([repr(s.t_s), repr(s.position[0]), repr(s.position[1]),
                             repr(s.position[2])])
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Ground-truth synthesis
# ---------------------------------------------------------------------------


def synthesize_ground_truth(
    texture: SyntheticTexture,
    force: np.ndarray,
    velocity: np.ndarray,
    sample_rate_hz: float,
    seed: int = 0,
) -> Recording:
    """Resonator output for aligned force/velocity traces, seeded.

    Excitation is white noise with per-sample standard deviation
    gain * sqrt(force * speed), so zero force or zero speed excites
    nothing (the resonator's ring-out decays within tens of
    milliseconds after motion stops).
    """
    force = np.asarray(force, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)
    if velocity.ndim != 2 or velocity.shape != (len(force), 2):
        raise InvalidArgumentError("force and velocity traces must align")
    if sample_rate_hz <= 2.0 * texture.resonance_hz:
        raise InvalidArgumentError(
            f"sample rate {sample_rate_hz} must exceed twice the resonance "
            f"{texture.resonance_hz}"
        )
    speed = np.hypot(velocity[:, 0], velocity[:, 1])
    std = texture.gain * np.sqrt(np.maximum(force, 0.0) * speed)
    rng = np.random.default_rng(seed)
    excitation = rng.standard_normal(len(force)) * std
    a1, a2 = texture.ar_coefficients(sample_rate_hz)
    accel = lfilter([1.0], [1.0, a1, a2], excitation)
    return Recording(
        sample_rate_hz=sample_rate_hz,
        acceleration=accel,
        force=force,
        velocity=velocity,
    )


# ---------------------------------------------------------------------------
# Procedural height maps
# ---------------------------------------------------------------------------

HEIGHT_MAP_SIZE = 128


def render_height_map(texture: SyntheticTexture, variant_seed: int = 0) -> np.ndarray:
    """Oriented grating plus band-limited noise, values in [0, 1]."""
    n = HEIGHT_MAP_SIZE
    yy, xx = np.mgrid[0:n, 0:n] / n
    u = xx * np.cos(texture.grating_angle_rad) + yy * np.sin(texture.grating_angle_rad)
    surface = 0.5 + 0.3 * np.sin(2.0 * np.pi * texture.grating_cycles * u)
    rng = np.random.default_rng(variant_seed)
    noise = rng.standard_normal((n, n))
    # crude band-limit: average over a small kernel scaled with coarseness
    k = max(1, int(round(8.0 / max(texture.grating_cycles / 4.0, 1.0))))
    if k > 1:
        kernel = np.ones((k, k)) / (k * k)
        from scipy.signal import convolve2d

        noise = convolve2d(noise, kernel, mode="same", boundary="symm")
    surface = surface + texture.roughness * noise
    return np.clip(surface, 0.0, 1.0)


def save_height_map(height_map: np.ndarray, path) -> None:
    img = Image.fromarray(np.round(height_map * 255.0).astype(np.uint8), mode="L")
    img.save(path)


def load_height_map(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0


# ---------------------------------------------------------------------------
# Bundled dataset
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.json"


def default_textures(n_textures: int, seed: int) -> list[SyntheticTexture]:
    """Evenly spread resonances with strongly varied gains and bandwidths.

    The spread is deliberately wide: distinct per-texture spectra are
    what give the texture-conditional model its edge over a global-mean
    predictor, mirroring how real surfaces differ.
    """
    if n_textures < 2:
        raise InvalidArgumentError("need at least 2 textures")
    rng = np.random.default_rng(seed)
    resonances = np.linspace(50.0, 235.0, n_textures)
    gains = np.geomspace(0.012, 0.10, n_textures)
    radii = np.linspace(0.90, 0.975, n_textures)
    textures = []
    for i, f0 in enumerate(resonances):
        textures.append(
            SyntheticTexture(
                id=f"tex{i:02d}",
                name=f"synthetic texture {i} ({f0:.0f} Hz)",
                resonance_hz=float(f0),
                pole_radius=float(radii[(i * 3) % n_textures]),
                gain=float(gains[(i * 5 + 2) % n_textures]),
                grating_cycles=float(6.0 + 6.0 * i),
                grating_angle_rad=float(np.pi * i / max(n_textures, 1)),
                roughness=float(rng.uniform(0.05, 0.20)),
            )
        )
    return textures


def default_trajectories(n_trajectories: int, duration_s: float = 1.6,
                         rate_hz: float = 500.0) -> list[Trajectory]:
    """Scripted exploration profiles: sweeps, circles, speed ramps."""
    trajectories = []
    n = int(duration_s * rate_hz) + 1
    t = np.arange(n) / rate_hz
    profiles = [
        ("sweep_slow", 45.0 * t, np.zeros(n), np.full(n, -1.5)),
        (
            "ramp",
            np.cumsum(np.linspace(20.0, 230.0, n)) / rate_hz,
            10.0 * np.sin(2.0 * np.pi * 2.0 * t),
            np.full(n, -3.0),
        ),
        ("sweep_fast", 160.0 * t, 20.0 * t, -2.5 + 0.8 * np.sin(2.0 * np.pi * 1.1 * t)),
        (
            # held out by default: speeds and forces interior to the
            # ranges the first three profiles cover
            "circle",
            20.0 * np.cos(2.0 * np.pi * 1.2 * t),
            20.0 * np.sin(2.0 * np.pi * 1.2 * t),
            -2.0 + 1.0 * np.sin(2.0 * np.pi * 0.8 * t),
        ),
        (
            "zigzag",
            120.0 * t,
            15.0 * np.abs((2.0 * t * 2.0) % 2.0 - 1.0),
            np.full(n, -1.0),
        ),
        (
            "spiral",
            (5.0 + 10.0 * t) * np.cos(2.0 * np.pi * 1.5 * t),
            (5.0 + 10.0 * t) * np.sin(2.0 * np.pi * 1.5 * t),
            np.full(n, -2.0),
        ),
    ]
    for name, x, y, z in profiles[:n_trajectories]:
        samples = [
            ProbeSample(t_s=float(t[i]), position=(float(x[i]), float(y[i]), float(z[i])))
            for i in range(n)
        ]
        trajectories.append(Trajectory(samples=samples, name=name))
    return trajectories


def generate_dataset(
    out_dir,
    n_textures: int = 6,
    n_trajectories: int = 4,
    images_per_texture: int = 6,
    seed: int = 0,
) -> Path:
    """Materialize a full training dataset directory with a manifest."""
    if n_trajectories < 2:
        raise InvalidArgumentError("need at least 2 trajectories (1 is held out)")
    if n_trajectories > 6:
        raise InvalidArgumentError("at most 6 scripted trajectory profiles exist")
    out = Path(out_dir)
    (out / "maps").mkdir(parents=True, exist_ok=True)
    (out / "traj").mkdir(parents=True, exist_ok=True)

    textures = default_textures(n_textures, seed)
    trajectories = default_trajectories(n_trajectories)

    manifest = {
        "version": 1,
        "seed": seed,
        "recording_rate_hz": RECORDING_RATE_HZ,
        "loop_rate_hz": 500.0,
        "images_per_texture": images_per_texture,
        "holdout_trajectory": trajectories[-1].name,
        "textures": [],
        "trajectories": [],
    }
    for texture in textures:
        maps = []
        for v in range(images_per_texture):
            variant_seed = seed * 100003 + hash_stable(texture.id) % 9973 + v
            height = render_height_map(texture, variant_seed=variant_seed)
            rel = f"maps/{texture.id}_{v:02d}.png"
            save_height_map(height, out / rel)
            maps.append(rel)
        manifest["textures"].append(
            {
                "id": texture.id,
                "name": texture.name,
                "resonance_hz": texture.resonance_hz,
                "pole_radius": texture.pole_radius,
                "gain": texture.gain,
                "grating_cycles": texture.grating_cycles,
                "grating_angle_rad": texture.grating_angle_rad,
                "roughness": texture.roughness,
                "height_maps": maps,
            }
        )
    for trajectory in trajectories:
        rel = f"traj/{trajectory.name}.csv"
        save_trajectory(trajectory, out / rel)
        manifest["trajectories"].append(rel)

    tmp = out / (MANIFEST_NAME + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2))
    os.replace(tmp, out / MANIFEST_NAME)
    return out


def hash_stable(text: str) -> int:
    """Deterministic small hash (Python's hash() is salted per process)."""
    import hashlib

    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "little")


def recording_seed(manifest_seed: int, texture_id: str, trajectory_name: str) -> int:
    """Seed for one (texture, trajectory) ground-truth recording."""
    return manifest_seed * 1000003 + hash_stable(texture_id + ":" + trajectory_name) % 999983


def load_manifest(dataset_dir) -> dict:
    path = Path(dataset_dir) / MANIFEST_NAME
    if not path.exists():
        raise DataFormatError(f"no {MANIFEST_NAME} in {dataset_dir}")
    manifest = json.loads(path.read_text())
    if manifest.get("version") != 1:
        raise DataFormatError(f"unsupported manifest version {manifest.get('version')}")
    return manifest


def texture_from_manifest(entry: dict) -> SyntheticTexture:
    return SyntheticTexture(
        id=entry["id"],
        name=entry["name"],
        resonance_hz=entry["resonance_hz"],
        pole_radius=entry["pole_radius"],
        gain=entry["gain"],
        grating_cycles=entry["grating_cycles"],
        grating_angle_rad=entry["grating_angle_rad"],
        roughness=entry["roughness"],
    )


# ---------------------------------------------------------------------------
# Training dataset assembly
# ---------------------------------------------------------------------------


def action_traces(
    trajectory: Trajectory, config: RenderConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Per-loop (normal force, filtered velocity) traces on the loop grid.

    Mirrors the render loop's first two stages exactly, so training
    inputs match what the engine feeds the model at run time.
    """
    grid = resample_trajectory(trajectory.samples, config.loop_rate_hz)
    forces = np.zeros(len(grid))
    velocities = np.zeros((len(grid), 2))
    vf = VelocityFilter(config.velocity_lpf_cutoff_hz)
    prev = None
    dt = 1.0 / config.loop_rate_hz
    for i, probe in enumerate(grid):
        _, forces[i] = compute_feedback_force(np.asarray(probe.position), config)
        raw = derive_velocity(prev, probe) if prev is not None else np.zeros(2)
        velocities[i] = vf.step(raw, dt)
        prev = probe
    return forces, velocities


def magnitude_targets(recording: Recording, loop_rate_hz: float) -> np.ndarray:
    """Hann-windowed 0.1 s magnitude frames, padded/truncated to 100 bins.

    Frame i starts at loop i's first recording sample, so it covers the
    0.1 s the model is asked to predict at that loop.
    """
    geometry = FrameGeometry.create(recording.sample_rate_hz, loop_rate_hz)
    n_frames = (len(recording.acceleration) - geometry.frame_len) // geometry.hop + 1
    mags = stft_magnitudes(recording.acceleration, geometry, n_frames)
    out = np.zeros((n_frames, MODEL_BINS), dtype=np.float32)
    shared = min(MODEL_BINS, geometry.n_bins)
    out[:, :shared] = mags[:, :shared]
    return out


def build_training_dataset(dataset_dir) -> tuple[Stage1Dataset, Stage2Dataset]:
    """Assemble stage-1 and stage-2 datasets from a manifest directory."""
    from hapticsynth.model import toy_image_features

    root = Path(dataset_dir)
    manifest = load_manifest(root)
    texture_entries = manifest["textures"]
    if len(texture_entries) < 2:
        raise InvalidArgumentError("dataset needs at least 2 textures")
    config = RenderConfig(loop_rate_hz=manifest["loop_rate_hz"])
    recording_rate = manifest["recording_rate_hz"]
    upsample = int(round(recording_rate / config.loop_rate_hz))

    # Stage 1: every height-map variant is a labeled example.
    features1, labels1 = [], []
    canonical_features = []
    for label, entry in enumerate(texture_entries):
        for v, rel in enumerate(entry["height_maps"]):
            feat = toy_image_features(load_height_map(root / rel))
            features1.append(feat)
            labels1.append(label)
            if v == 0:
                canonical_features.append(feat)
    stage1 = Stage1Dataset(
        features=np.stack(features1).astype(np.float32),
        labels=np.array(labels1),
        class_ids=[e["id"] for e in texture_entries],
    )

    # Stage 2: slice every (texture, trajectory) pair at every hop.
    trajectories = [load_trajectory(root / rel) for rel in manifest["trajectories"]]
    holdout_name = manifest["holdout_trajectory"]
    sample_texture, forces_all, velocities_all, targets_all, holdout = [], [], [], [], []
    for t_index, entry in enumerate(texture_entries):
        texture = texture_from_manifest(entry)
        for trajectory in trajectories:
            forces, velocities = action_traces(trajectory, config)
            rec_force = np.repeat(forces, upsample)
            rec_velocity = np.repeat(velocities, upsample, axis=0)
            recording = synthesize_ground_truth(
                texture,
                rec_force,
                rec_velocity,
                recording_rate,
                seed=recording_seed(manifest["seed"], texture.id, trajectory.name),
            )
            targets = magnitude_targets(recording, config.loop_rate_hz)
            n_loops = min(len(forces), len(targets))
            is_holdout = trajectory.name == holdout_name
            window = np.zeros((10, 3), dtype=np.float32)  # force, vx, vy
            for i in range(n_loops):
                window[:-1] = window[1:]
                window[-1, 0] = forces[i]
                window[-1, 1:] = velocities[i]
                sample_texture.append(t_index)
                forces_all.append(window[:, 0].copy())
                velocities_all.append(window[:, 1:].copy())
                targets_all.append(targets[i])
                holdout.append(is_holdout)

    stage2 = Stage2Dataset(
        texture_ids=[e["id"] for e in texture_entries],
        features=np.stack(canonical_features).astype(np.float32),
        sample_texture=np.array(sample_texture),
        forces=np.stack(forces_all).astype(np.float32),
        velocities=np.stack(velocities_all).astype(np.float32),
        targets=np.stack(targets_all).astype(np.float32),
        holdout_mask=np.array(holdout, dtype=bool),
    )
    return stage1, stage2


def save_datasets(stage1: Stage1Dataset, stage2: Stage2Dataset, path) -> None:
    """Bit-exact dataset cache (round trip reproduces identical arrays)."""
    np.savez(
        path,
        s1_features=stage1.features,
        s1_labels=stage1.labels,
        s1_class_ids=np.array(stage1.class_ids),
        s2_texture_ids=np.array(stage2.texture_ids),
        s2_features=stage2.features,
        s2_sample_texture=stage2.sample_texture,
        s2_forces=stage2.forces,
        s2_velocities=stage2.velocities,
        s2_targets=stage2.targets,
        s2_holdout=stage2.holdout_mask,
    )


def load_datasets(path) -> tuple[Stage1Dataset, Stage2Dataset]:
    with np.load(path, allow_pickle=False) as data:
        stage1 = Stage1Dataset(
            features=data["s1_features"],
            labels=data["s1_labels"],
            class_ids=[str(x) for x in data["s1_class_ids"]],
        )
        stage2 = Stage2Dataset(
            texture_ids=[str(x) for x in data["s2_texture_ids"]],
            features=data["s2_features"],
            sample_texture=data["s2_sample_texture"],
            forces=data["s2_forces"],
            velocities=data["s2_velocities"],
            targets=data["s2_targets"],
            holdout_mask=data["s2_holdout"],
        )
    return stage1, stage2


# ---------------------------------------------------------------------------
# Waveform export
# ---------------------------------------------------------------------------


def export_wav(waveform: np.ndarray, sample_rate_hz: float, path) -> None:
    """Mono 32-bit IEEE-float PCM, little-endian."""
    waveform = np.asarray(waveform, dtype="<f4")
    if waveform.size == 0:
        raise InvalidArgumentError("refusing to write an empty waveform")
    tmp = str(path) + ".tmp"
    wavfile.write(tmp, int(round(sample_rate_hz)), waveform)
    os.replace(tmp, path)


def import_wav(path) -> tuple[float, np.ndarray]:
    rate, data = wavfile.read(path)
    return float(rate), np.asarray(data, dtype=np.float32)


def export_csv(waveform: np.ndarray, sample_rate_hz: float, path) -> None:
    """`t_s,accel_m_s2` rows at full float precision."""
    waveform = np.asarray(waveform)
    if waveform.size == 0:
        raise InvalidArgumentError("refusing to write an empty waveform")
    tmp = str(path) + ".tmp"
    with open(tmp, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t_s", "accel_m_s2"])
        for i, v in enumerate(waveform):
            writer.writerow([repr(i / sample_rate_hz), repr(float(v))])
    os.replace(tmp, path)
