"""Action-conditional generative model and texture representation.

The acceleration predictor consumes a 256-dim texture embedding plus a
100-dim action code and emits a 100-bin magnitude DFT frame. The action
code is built from the last 10 control-loop samples of normal force and
planar velocity through three small encoders. All networks are plain
fully connected stacks with rectified-linear activations between hidden
layers and a linear output layer.

Fixed input conventions the weights depend on:
  - velocity components are flattened time-major (x0, y0, x1, y1, ...)
  - velocities are scaled by VELOCITY_INPUT_SCALE before the speed
    encoder (raw mm/s values would dwarf the force channel)
  - forces are fed raw, in newtons
"""

from __future__ import annotations

import hashlib
import io as _io
from dataclasses import dataclass, field

import numpy as np

from hapticsynth.errors import (
    CorruptWeightsError,
    DataFormatError,
    InvalidArgumentError,
    UnsupportedVersionError,
)
from hapticsynth.spectral import MagnitudeFrame

ACTION_STEPS = 10
FEATURE_DIM = 8960
EMBEDDING_DIM = 256
DEFAULT_CLASSES = 93
VELOCITY_INPUT_SCALE = 0.01  # mm/s -> model units

_WEIGHTS_MAGIC = "HSWEIGHTS"
_WEIGHTS_VERSION = 1
_LIBRARY_MAGIC = "HSLIBRARY"
_LIBRARY_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    """Layer-size contract for one fully connected network."""

    name: str
    layer_sizes: tuple[int, ...]

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1


def network_specs(n_classes: int = DEFAULT_CLASSES) -> dict[str, MlpSpec]:
    """The full network family; only the classifier head width is configurable."""
    if n_classes < 2:
        raise InvalidArgumentError("classifier needs at least 2 classes")
    specs = {
        "force_encoder": MlpSpec("force_encoder", (10, 10, 10, 10)),
        "speed_encoder": MlpSpec("speed_encoder", (20, 20, 20, 20, 10)),
        "action_encoder": MlpSpec("action_encoder", (20, 400, 300, 200, 100)),
        "texture_encoder": MlpSpec("texture_encoder", (8960, 4096, 512, 256)),
        "classifier": MlpSpec("classifier", (8960, 4096, 512, n_classes)),
        "predictor": MlpSpec("predictor", (356, 300, 300, 200, 100, 100)),
    }
    # Dimension algebra the wiring relies on.
    assert specs["force_encoder"].output_dim + specs["speed_encoder"].output_dim == 20
    assert specs["action_encoder"].input_dim == 20
    assert (
        specs["texture_encoder"].output_dim + specs["action_encoder"].output_dim
        == specs["predictor"].input_dim
    )
    return specs


Layers = list[tuple[np.ndarray, np.ndarray]]


@dataclass
class WeightSet:
    """All network parameters plus format/provenance metadata.

    Immutable by convention after load; shapes are validated against the
    spec family on construction and all values must be finite.
    """

    networks: dict[str, Layers]
    n_classes: int = DEFAULT_CLASSES
    provenance: str = "-"
    version: int = _WEIGHTS_VERSION

    def __post_init__(self):
        self.validate()

    def validate(self):
        specs = network_specs(self.n_classes)
        if set(self.networks) != set(specs):
            missing = set(specs) - set(self.networks)
            extra = set(self.networks) - set(specs)
            raise CorruptWeightsError(
                f"network set mismatch (missing {sorted(missing)}, extra {sorted(extra)})"
            )
        for name, spec in specs.items():
            layers = self.networks[name]
            if len(layers) != spec.n_layers:
                raise CorruptWeightsError(
                    f"{name}: expected {spec.n_layers} layers, got {len(layers)}"
                )
            for i, (w, b) in enumerate(layers):
                want = (spec.layer_sizes[i], spec.layer_sizes[i + 1])
                if w.shape != want:
                    raise CorruptWeightsError(
                        f"{name} layer {i}: weight shape {w.shape} != expected {want}"
                    )
                if b.shape != (spec.layer_sizes[i + 1],):
                    raise CorruptWeightsError(
                        f"{name} layer {i}: bias shape {b.shape} != expected "
                        f"({spec.layer_sizes[i + 1]},)"
                    )
                if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                    raise CorruptWeightsError(f"{name} layer {i}: non-finite values")

    def content_hash(self) -> str:
        """SHA-256 over all parameter bytes in declaration order."""
        h = hashlib.sha256()
        for name in sorted(self.networks):
            for w, b in self.networks[name]:
                h.update(np.ascontiguousarray(w, dtype=np.float32).tobytes())
                h.update(np.ascontiguousarray(b, dtype=np.float32).tobytes())
        return h.hexdigest()


def init_weights(n_classes: int = DEFAULT_CLASSES, seed: int = 0) -> WeightSet:
    """He-initialized float32 parameters for every network, seeded.

    The texture encoder's final layer is a fixed random projection (it
    keeps its initialization through both training stages), so it is
    scaled well below He to keep embedding magnitudes of order one for
    the downstream predictor.
    """
    rng = np.random.default_rng(seed)
    networks: dict[str, Layers] = {}
    for name, spec in network_specs(n_classes).items():
        layers: Layers = []
        n_layers = spec.n_layers
        for i, (d_in, d_out) in enumerate(zip(spec.layer_sizes[:-1], spec.layer_sizes[1:])):
            scale = np.sqrt(2.0 / d_in)
            if name == "texture_encoder" and i == n_layers - 1:
                scale *= 0.05
            w = (rng.standard_normal((d_in, d_out)) * scale).astype(np.float32)
            b = np.zeros(d_out, dtype=np.float32)
            layers.append((w, b))
        networks[name] = layers
    return WeightSet(networks=networks, n_classes=n_classes)


def mlp_forward(layers: Layers, x: np.ndarray) -> np.ndarray:
    """Affine stacks with ReLU between hidden layers, linear output.

    Accepts a single vector or a (batch, dim) matrix. Output is checked
    finite so weight corruption surfaces as an error rather than NaNs
    propagating downstream.
    """
    x = np.asarray(x, dtype=np.float32)
    if x.shape[-1] != layers[0][0].shape[0]:
        raise InvalidArgumentError(
            f"input dim {x.shape[-1]} != expected {layers[0][0].shape[0]}"
        )
    n = len(layers)
    for i, (w, b) in enumerate(layers):
        x = x @ w + b
        if i < n - 1:
            np.maximum(x, 0.0, out=x)
    if not np.all(np.isfinite(x)):
        raise CorruptWeightsError("non-finite network output")
    return x


class ActionWindow:
    """Ring buffer of the 10 most recent (force, velocity) samples.

    Most recent sample last; starts all-zero at session creation.
    """

    def __init__(self):
        self.forces = np.zeros(ACTION_STEPS, dtype=np.float32)
        self.velocities = np.zeros((ACTION_STEPS, 2), dtype=np.float32)

    def push(self, force_n: float, velocity_mm_s: np.ndarray):
        self.forces[:-1] = self.forces[1:]
        self.forces[-1] = force_n
        self.velocities[:-1] = self.velocities[1:]
        self.velocities[-1] = velocity_mm_s

    def copy(self) -> "ActionWindow":
        other = ActionWindow()
        other.forces[:] = self.forces
        other.velocities[:] = self.velocities
        return other


@dataclass
class TextureEmbedding:
    """256-dim texture representation with library identity."""

    vector: np.ndarray
    id: str
    name: str = ""

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float32)
        if self.vector.shape != (EMBEDDING_DIM,):
            raise InvalidArgumentError(
                f"embedding must have dimension {EMBEDDING_DIM}, got {self.vector.shape}"
            )


@dataclass
class TextureLibrary:
    """Texture embeddings (plus optional raw image features) keyed by id."""

    entries: list[TextureEmbedding] = field(default_factory=list)
    features: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError("texture ids must be unique")
        for tid, feat in self.features.items():
            if feat.shape != (FEATURE_DIM,):
                raise InvalidArgumentError(
                    f"feature for '{tid}' must have dimension {FEATURE_DIM}"
                )

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, texture_id: str) -> TextureEmbedding:
        for entry in self.entries:
            if entry.id == texture_id:
                return entry
        raise KeyError(f"texture not found: {texture_id}")


def encode_texture(feature: np.ndarray, weights: WeightSet, texture_id: str = "",
                   name: str = "") -> TextureEmbedding:
    """Map an 8960-dim image feature to a 256-dim embedding."""
    feature = np.asarray(feature, dtype=np.float32)
    if feature.shape != (FEATURE_DIM,):
        raise InvalidArgumentError(
            f"feature must have dimension {FEATURE_DIM}, got {feature.shape}"
        )
    vec = mlp_forward(weights.networks["texture_encoder"], feature)
    return TextureEmbedding(vector=vec, id=texture_id, name=name)


def action_model_inputs(action: ActionWindow) -> tuple[np.ndarray, np.ndarray]:
    """Force and (scaled, time-major-flattened) velocity inputs."""
    return (
        action.forces,
        (action.velocities * VELOCITY_INPUT_SCALE).reshape(-1),
    )


def predict_acceleration_dft(
    texture: TextureEmbedding, action: ActionWindow, weights: WeightSet,
    timestamp_s: float = 0.0,
) -> MagnitudeFrame:
    """Predict the magnitude DFT of acceleration for the next 0.1 s.

    Force path (10) and speed path (20) encode to 10 each; their
    concatenation encodes to a 100-dim action code; the predictor maps
    [embedding(256), action(100)] to 100 bins. Negative outputs are
    clamped to zero to satisfy the magnitude-frame invariant.
    """
    nets = weights.networks
    force_in, speed_in = action_model_inputs(action)
    force_code = mlp_forward(nets["force_encoder"], force_in)
    speed_code = mlp_forward(nets["speed_encoder"], speed_in)
    action_code = mlp_forward(
        nets["action_encoder"], np.concatenate([force_code, speed_code])
    )
    raw = mlp_forward(
        nets["predictor"], np.concatenate([texture.vector, action_code])
    )
    return MagnitudeFrame(np.maximum(raw, 0.0), timestamp_s=timestamp_s)


def nearest_neighbor(
    query: TextureEmbedding, library: TextureLibrary
) -> tuple[TextureEmbedding, float]:
    """Library member with minimum Euclidean distance to the query.

    Exhaustive scan; ties broken by lowest id. The returned member (not
    the query) is what feeds the predictor for unseen textures.
    """
    if len(library) == 0:
        raise InvalidArgumentError("texture library is empty")
    q = query.vector.astype(np.float64)
    best: tuple[float, str, TextureEmbedding] | None = None
    for entry in library.entries:
        d = float(np.linalg.norm(entry.vector.astype(np.float64) - q))
        if best is None or (d, entry.id) < (best[0], best[1]):
            best = (d, entry.id, entry)
    return best[2], best[0]


# ---------------------------------------------------------------------------
# Toy image features: a fixed Gabor bank standing in for a learned image
# encoder. Deterministic, no trained parameters; the 8960 output is the
# contract boundary, so any other provider could replace this.
# ---------------------------------------------------------------------------

_GABOR_WAVELENGTHS = (2.5, 3.5, 5.0, 7.0, 10.0, 13.0, 16.0)
_GABOR_ORIENTATIONS = 5
_GABOR_KERNEL = 17
_FEATURE_GRID = 8
_FEATURE_GAIN = 4.0
_FEATURE_IMAGE_SIZE = 64


def _gabor_bank() -> np.ndarray:
    """(n_kernels, K, K) even+odd Gabor kernels, zero-mean."""
    half = _GABOR_KERNEL // 2
    yy, xx = np.mgrid[-half : half + 1, -half : half + 1].astype(np.float64)
    kernels = []
    for wavelength in _GABOR_WAVELENGTHS:
        sigma = min(max(0.45 * wavelength, 1.2), 4.5)
        for j in range(_GABOR_ORIENTATIONS):
            theta = np.pi * j / _GABOR_ORIENTATIONS
            u = xx * np.cos(theta) + yy * np.sin(theta)
            envelope = np.exp(-(xx**2 + yy**2) / (2.0 * sigma**2))
            for carrier in (np.cos, np.sin):
                k = envelope * carrier(2.0 * np.pi * u / wavelength)
                k -= k.mean()
                norm = np.linalg.norm(k)
                kernels.append(k / norm if norm > 0 else k)
    return np.stack(kernels).astype(np.float32)


_BANK: np.ndarray | None = None


def _bilinear_resize(image: np.ndarray, size: int) -> np.ndarray:
    """Separable bilinear resample to size x size."""
    h, w = image.shape
    ys = np.linspace(0.0, h - 1.0, size)
    xs = np.linspace(0.0, w - 1.0, size)
    rows = np.empty((size, w))
    y0 = np.floor(ys).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    fy = (ys - y0)[:, None]
    rows = image[y0] * (1.0 - fy) + image[y1] * fy
    x0 = np.floor(xs).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    fx = xs - x0
    return rows[:, x0] * (1.0 - fx) + rows[:, x1] * fx


def toy_image_features(image: np.ndarray) -> np.ndarray:
    """Deterministic 8960-dim feature vector from a grayscale height map.

    The image (H >= 32, W >= 32) is resampled to 64x64, convolved with a
    fixed bank of 70 Gabor kernels, and each response map is summarized
    on an 8x8 block grid by mean absolute response and RMS response:
    70 kernels * 64 blocks * 2 statistics = 8960.
    """
    global _BANK
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] < 32 or image.shape[1] < 32:
        raise InvalidArgumentError(
            f"height map must be 2-D with both sides >= 32, got {image.shape}"
        )
    if _BANK is None:
        _BANK = _gabor_bank()
    img = _bilinear_resize(image, _FEATURE_IMAGE_SIZE).astype(np.float32)

    k = _GABOR_KERNEL
    out_side = _FEATURE_IMAGE_SIZE - k + 1  # 48
    patches = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    patches = patches.reshape(out_side * out_side, k * k)
    responses = patches @ _BANK.reshape(len(_BANK), k * k).T  # (2304, 70)
    responses = responses.reshape(out_side, out_side, len(_BANK))

    block = out_side // _FEATURE_GRID  # 6
    blocks = responses.reshape(
        _FEATURE_GRID, block, _FEATURE_GRID, block, len(_BANK)
    )
    mean_abs = np.abs(blocks).mean(axis=(1, 3))
    rms = np.sqrt((blocks**2).mean(axis=(1, 3)))
    feature = np.stack([mean_abs, rms], axis=-1).reshape(-1) * _FEATURE_GAIN
    assert feature.shape == (FEATURE_DIM,)
    return feature.astype(np.float32)


# ---------------------------------------------------------------------------
# Weight persistence: text manifest followed by raw little-endian float32
# blobs at the declared offsets.
# ---------------------------------------------------------------------------


def save_weights(weights: WeightSet, path) -> None:
    """Write a versioned manifest plus raw float32 parameter blobs."""
    header = _io.StringIO()
    header.write(f"{_WEIGHTS_MAGIC} {_WEIGHTS_VERSION}\n")
    header.write(f"classes {weights.n_classes}\n")
    header.write(f"provenance {weights.provenance}\n")
    blobs = []
    offset = 0
    for name in sorted(weights.networks):
        for i, (w, b) in enumerate(weights.networks[name]):
            for kind, arr in (("W", w), ("b", b)):
                arr32 = np.ascontiguousarray(arr, dtype="<f4")
                shape = " ".join(str(s) for s in arr32.shape)
                header.write(f"tensor {name} {i} {kind} {shape} @ {offset}\n")
                blobs.append(arr32.tobytes())
                offset += arr32.nbytes
    header.write("END\n")
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(header.getvalue().encode("ascii"))
        for blob in blobs:
            f.write(blob)
    import os

    os.replace(tmp, path)


def load_weights(path) -> WeightSet:
    """Read and validate a weight file; rejects any shape or value defect."""
    with open(path, "rb") as f:
        data = f.read()
    end = data.find(b"END\n")
    if end < 0:
        raise CorruptWeightsError("missing manifest terminator")
    try:
        header_lines = data[:end].decode("ascii").splitlines()
    except UnicodeDecodeError as exc:
        raise CorruptWeightsError(f"undecodable manifest: {exc}") from exc
    blob = data[end + 4 :]

    if not header_lines:
        raise CorruptWeightsError("empty manifest")
    magic = header_lines[0].split()
    if len(magic) != 2 or magic[0] != _WEIGHTS_MAGIC:
        raise CorruptWeightsError("not a weight file")
    if magic[1] != str(_WEIGHTS_VERSION):
        raise UnsupportedVersionError(f"unsupported weight format version {magic[1]}")

    n_classes = DEFAULT_CLASSES
    provenance = "-"
    networks: dict[str, dict[int, list]] = {}
    for line in header_lines[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "classes":
            n_classes = int(parts[1])
        elif parts[0] == "provenance":
            provenance = parts[1] if len(parts) > 1 else "-"
        elif parts[0] == "tensor":
            name, layer, kind = parts[1], int(parts[2]), parts[3]
            at = parts.index("@")
            shape = tuple(int(s) for s in parts[4:at])
            offset = int(parts[at + 1])
            count = int(np.prod(shape)) if shape else 1
            nbytes = count * 4
            if offset + nbytes > len(blob):
                raise CorruptWeightsError(
                    f"{name} layer {layer} {kind}: blob truncated "
                    f"(need {offset + nbytes} bytes, have {len(blob)})"
                )
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            networks.setdefault(name, {}).setdefault(layer, [None, None])
            networks[name][layer][0 if kind == "W" else 1] = arr.reshape(shape).copy()
        else:
            raise CorruptWeightsError(f"unknown manifest entry: {line}")

    assembled: dict[str, Layers] = {}
    for name, by_layer in networks.items():
        layers: Layers = []
        for i in range(len(by_layer)):
            if i not in by_layer or by_layer[i][0] is None or by_layer[i][1] is None:
                raise CorruptWeightsError(f"{name}: missing tensors for layer {i}")
            layers.append((by_layer[i][0], by_layer[i][1]))
        assembled[name] = layers

    return WeightSet(networks=assembled, n_classes=n_classes, provenance=provenance)


# ---------------------------------------------------------------------------
# Texture library persistence: line-oriented text, tab-delimited so names
# may contain spaces. Floats are stored in full precision.
# ---------------------------------------------------------------------------


def _format_floats(values: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in values)


def save_library(library: TextureLibrary, path) -> None:
    lines = [f"{_LIBRARY_MAGIC} {_LIBRARY_VERSION}", f"count {len(library)}"]
    for entry in library.entries:
        lines.append(f"texture\t{entry.id}\t{entry.name}")
        lines.append(f"embedding\t{_format_floats(entry.vector)}")
        if entry.id in library.features:
            lines.append(f"feature\t{_format_floats(library.features[entry.id])}")
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as f:
        f.write("\n".join(lines) + "\n")
    import os

    os.replace(tmp, path)


def load_library(path) -> TextureLibrary:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise DataFormatError("empty library file", line=1)
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != _LIBRARY_MAGIC:
        raise DataFormatError("not a texture library file", line=1)
    if magic[1] != str(_LIBRARY_VERSION):
        raise UnsupportedVersionError(f"unsupported library version {magic[1]}")

    entries: list[TextureEmbedding] = []
    features: dict[str, np.ndarray] = {}
    declared = None
    current_id: str | None = None
    current_name = ""
    pending_embedding: np.ndarray | None = None

    def flush(lineno):
        nonlocal current_id, pending_embedding
        if current_id is not None:
            if pending_embedding is None:
                raise DataFormatError(
                    f"texture '{current_id}' has no embedding", line=lineno
                )
            entries.append(
                TextureEmbedding(vector=pending_embedding, id=current_id, name=current_name)
            )
        current_id, pending_embedding = None, None

    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("count "):
            declared = int(line.split()[1])
            continue
        tag, _, rest = line.partition("\t")
        if tag == "texture":
            flush(lineno)
            tid, _, name = rest.partition("\t")
            if not tid:
                raise DataFormatError("texture line missing id", line=lineno)
            current_id, current_name = tid, name
        elif tag == "embedding":
            vec = np.array([float(v) for v in rest.split()], dtype=np.float32)
            if vec.shape != (EMBEDDING_DIM,):
                raise DataFormatError(
                    f"embedding has {vec.shape[0]} values, expected {EMBEDDING_DIM}",
                    line=lineno,
                )
            pending_embedding = vec
        elif tag == "feature":
            if current_id is None:
                raise DataFormatError("feature line before any texture", line=lineno)
            feat = np.array([float(v) for v in rest.split()], dtype=np.float32)
            if feat.shape != (FEATURE_DIM,):
                raise DataFormatError(
                    f"feature has {feat.shape[0]} values, expected {FEATURE_DIM}",
                    line=lineno,
                )
            features[current_id] = feat
        else:
            raise DataFormatError(f"unknown line tag '{tag}'", line=lineno)
    flush(len(lines) + 1)

    if declared is not None and declared != len(entries):
        raise DataFormatError(
            f"library declares {declared} textures but contains {len(entries)}"
        )
    return TextureLibrary(entries=entries, features=features)
