"""Two-stage training: texture classification, then DFT prediction.

Stage 1 trains the classifier (8960, 4096, 512, n_classes) with softmax
cross-entropy; its trunk (the first two layers) is copied into the
texture encoder, whose final embedding layer keeps its seeded
initialization. Stage 2 freezes the texture encoder entirely and trains
the force/speed/action encoders and the predictor to minimize the mean
Euclidean distance between predicted and target magnitude frames.

Optimization is plain mini-batch gradient descent with momentum and a
fixed seed; runs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hapticsynth.errors import InvalidArgumentError
from hapticsynth.model import (
    VELOCITY_INPUT_SCALE,
    Layers,
    WeightSet,
)

_EPS = 1e-12


@dataclass
class TrainConfig:
    seed: int = 0
    momentum: float = 0.9
    stage1_epochs: int = 15
    stage1_lr: float = 0.005
    stage1_batch: int = 16
    stage2_epochs: int = 35
    stage2_lr: float = 0.003
    stage2_batch: int = 256


@dataclass
class Stage1Dataset:
    """Labeled image features for the texture classification task."""

    features: np.ndarray  # (n, 8960) float32
    labels: np.ndarray  # (n,) int
    class_ids: list[str]

    def __post_init__(self):
        if len(self.class_ids) < 2:
            raise InvalidArgumentError("need at least 2 classes")
        counts = np.bincount(self.labels, minlength=len(self.class_ids))
        if np.any(counts < 4):
            raise InvalidArgumentError(
                f"every class needs at least 4 examples, got counts {counts.tolist()}"
            )


@dataclass
class Stage2Dataset:
    """(texture feature, action window, target magnitude frame) triples.

    Features are stored once per texture; samples reference them by
    index. holdout_mask marks evaluation-only samples.
    """

    texture_ids: list[str]
    features: np.ndarray  # (t, 8960) float32
    sample_texture: np.ndarray  # (n,) int
    forces: np.ndarray  # (n, 10) float32
    velocities: np.ndarray  # (n, 10, 2) float32 raw mm/s
    targets: np.ndarray  # (n, 100) float32
    holdout_mask: np.ndarray  # (n,) bool

    def __post_init__(self):
        n = self.forces.shape[0]
        if not (
            self.sample_texture.shape[0] == n
            and self.velocities.shape == (n, 10, 2)
            and self.targets.shape == (n, 100)
            and self.holdout_mask.shape == (n,)
        ):
            raise InvalidArgumentError("stage-2 dataset arrays are inconsistent")


# ---------------------------------------------------------------------------
# Forward/backward passes
# ---------------------------------------------------------------------------


def forward_cached(layers: Layers, x: np.ndarray) -> list[np.ndarray]:
    """Forward pass keeping every (post-activation) layer input."""
    acts = [x]
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        z = acts[-1] @ w + b
        if i < last:
            z = np.maximum(z, 0.0)
        acts.append(z)
    return acts


def backward(
    layers: Layers, acts: list[np.ndarray], grad_out: np.ndarray
) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Gradients of every layer plus the gradient at the network input."""
    grads: list = [None] * len(layers)
    g = grad_out
    for i in reversed(range(len(layers))):
        w, _ = layers[i]
        if i < len(layers) - 1:
            g = g * (acts[i + 1] > 0)
        grads[i] = (acts[i].T @ g, g.sum(axis=0))
        g = g @ w.T
    return grads, g


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient with respect to the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    loss = float(-np.log(probs[np.arange(n), labels] + _EPS).mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def stage1_loss_and_grads(layers: Layers, features: np.ndarray, labels: np.ndarray):
    """Classification loss and per-layer gradients (gradient-check surface)."""
    acts = forward_cached(layers, features)
    loss, g = softmax_cross_entropy(acts[-1], labels)
    grads, _ = backward(layers, acts, g)
    return loss, grads


def euclidean_frame_loss(pred: np.ndarray, target: np.ndarray):
    """Mean per-sample Euclidean distance over the 100 bins, plus gradient."""
    diff = pred - target
    dist = np.sqrt((diff**2).sum(axis=1))
    loss = float(dist.mean())
    grad = diff / (np.maximum(dist, _EPS)[:, None] * pred.shape[0])
    return loss, grad


_ACTION_NETS = ("force_encoder", "speed_encoder", "action_encoder", "predictor")


def stage2_forward(
    nets: dict[str, Layers],
    embeddings: np.ndarray,
    forces: np.ndarray,
    velocities: np.ndarray,
):
    """Batched action-path forward; velocities are raw mm/s.

    Mirrors the single-sample inference path exactly: velocities scaled
    and flattened time-major, force/speed codes concatenated, embedding
    prepended to the action code.
    """
    speed_in = (velocities * VELOCITY_INPUT_SCALE).reshape(len(forces), -1)
    acts_f = forward_cached(nets["force_encoder"], forces)
    acts_s = forward_cached(nets["speed_encoder"], speed_in)
    acts_a = forward_cached(
        nets["action_encoder"], np.hstack([acts_f[-1], acts_s[-1]])
    )
    acts_p = forward_cached(
        nets["predictor"], np.hstack([embeddings, acts_a[-1]])
    )
    return acts_f, acts_s, acts_a, acts_p


def stage2_loss_and_grads(
    nets: dict[str, Layers],
    embeddings: np.ndarray,
    forces: np.ndarray,
    velocities: np.ndarray,
    targets: np.ndarray,
):
    """Stage-2 loss and gradients for every action-path network."""
    acts_f, acts_s, acts_a, acts_p = stage2_forward(nets, embeddings, forces, velocities)
    loss, g = euclidean_frame_loss(acts_p[-1], targets)

    grads_p, g_in_p = backward(nets["predictor"], acts_p, g)
    emb_dim = embeddings.shape[1]
    g_action = g_in_p[:, emb_dim:]  # embedding branch is frozen input

    grads_a, g_in_a = backward(nets["action_encoder"], acts_a, g_action)
    force_dim = acts_f[-1].shape[1]
    grads_f, _ = backward(nets["force_encoder"], acts_f, g_in_a[:, :force_dim])
    grads_s, _ = backward(nets["speed_encoder"], acts_s, g_in_a[:, force_dim:])

    return loss, {
        "force_encoder": grads_f,
        "speed_encoder": grads_s,
        "action_encoder": grads_a,
        "predictor": grads_p,
    }


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------


class _Momentum:
    def __init__(self, layers_map: dict[str, Layers], lr: float, momentum: float):
        self.lr = lr
        self.momentum = momentum
        self.velocity = {
            name: [(np.zeros_like(w), np.zeros_like(b)) for w, b in layers]
            for name, layers in layers_map.items()
        }

    def step(self, layers_map: dict[str, Layers], grads_map: dict):
        for name, layers in layers_map.items():
            for i, (w, b) in enumerate(layers):
                vw, vb = self.velocity[name][i]
                gw, gb = grads_map[name][i]
                vw *= self.momentum
                vw -= self.lr * gw
                vb *= self.momentum
                vb -= self.lr * gb
                w += vw
                b += vb


def _encoder_hash(weights: WeightSet) -> bytes:
    import hashlib

    h = hashlib.sha256()
    for w, b in weights.networks["texture_encoder"]:
        h.update(np.ascontiguousarray(w).tobytes())
        h.update(np.ascontiguousarray(b).tobytes())
    return h.digest()


def train_stage1(
    dataset: Stage1Dataset, weights: WeightSet, config: TrainConfig
) -> dict:
    """Train the classifier; copy its trunk into the texture encoder.

    Returns metrics: per-epoch loss, final training accuracy. The
    encoder's final embedding layer keeps its seeded initialization (a
    fixed projection of the classification trunk's representation).
    """
    if len(dataset.class_ids) != weights.n_classes:
        raise InvalidArgumentError(
            f"dataset has {len(dataset.class_ids)} classes but weights expect "
            f"{weights.n_classes}"
        )
    layers = weights.networks["classifier"]
    features = dataset.features.astype(np.float32)
    labels = dataset.labels.astype(np.int64)
    n = len(labels)
    rng = np.random.default_rng(config.seed)
    opt = _Momentum({"classifier": layers}, config.stage1_lr, config.momentum)

    init_loss, _ = softmax_cross_entropy(
        forward_cached(layers, features)[-1], labels
    )
    epoch_losses = []
    for _ in range(config.stage1_epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.stage1_batch):
            idx = order[start : start + config.stage1_batch]
            loss, grads = stage1_loss_and_grads(layers, features[idx], labels[idx])
            opt.step({"classifier": layers}, {"classifier": grads})
            total += loss * len(idx)
        epoch_losses.append(total / n)

    logits = forward_cached(layers, features)[-1]
    accuracy = float((logits.argmax(axis=1) == labels).mean())

    # Texture encoder shares the trained trunk.
    encoder = weights.networks["texture_encoder"]
    for i in range(2):
        encoder[i] = (layers[i][0].copy(), layers[i][1].copy())
    weights.validate()

    return {
        "initial_loss": float(init_loss),
        "epoch_losses": [float(x) for x in epoch_losses],
        "train_accuracy": accuracy,
    }


def train_stage2(
    dataset: Stage2Dataset, weights: WeightSet, config: TrainConfig
) -> dict:
    """Train the action path and predictor against magnitude targets.

    The texture encoder is frozen: per-texture embeddings are computed
    once up front and the encoder bytes are checked unchanged afterward.
    Returns metrics including the held-out loss and the predict-global-
    mean baseline loss.
    """
    from hapticsynth.model import mlp_forward

    encoder_before = _encoder_hash(weights)
    embeddings_by_texture = mlp_forward(
        weights.networks["texture_encoder"], dataset.features
    ).astype(np.float32)

    nets = {name: weights.networks[name] for name in _ACTION_NETS}
    train_idx = np.flatnonzero(~dataset.holdout_mask)
    hold_idx = np.flatnonzero(dataset.holdout_mask)
    if len(train_idx) == 0:
        raise InvalidArgumentError("stage-2 dataset has no training samples")

    emb_all = embeddings_by_texture[dataset.sample_texture]
    rng = np.random.default_rng(config.seed + 1)
    opt = _Momentum(nets, config.stage2_lr, config.momentum)

    def eval_loss(idx) -> float:
        total, count = 0.0, 0
        for start in range(0, len(idx), 4096):
            sl = idx[start : start + 4096]
            *_, acts_p = stage2_forward(
                nets, emb_all[sl], dataset.forces[sl], dataset.velocities[sl]
            )
            loss, _ = euclidean_frame_loss(acts_p[-1], dataset.targets[sl])
            total += loss * len(sl)
            count += len(sl)
        return total / max(count, 1)

    epoch_losses = []
    for _ in range(config.stage2_epochs):
        order = rng.permutation(train_idx)
        total = 0.0
        for start in range(0, len(order), config.stage2_batch):
            idx = order[start : start + config.stage2_batch]
            loss, grads = stage2_loss_and_grads(
                nets,
                emb_all[idx],
                dataset.forces[idx],
                dataset.velocities[idx],
                dataset.targets[idx],
            )
            opt.step(nets, grads)
            total += loss * len(idx)
        epoch_losses.append(total / len(order))

    if _encoder_hash(weights) != encoder_before:
        raise RuntimeError("internal invariant violation: texture encoder changed")

    metrics = {
        "epoch_losses": [float(x) for x in epoch_losses],
        "train_loss": float(eval_loss(train_idx)),
    }
    if len(hold_idx):
        mean_target = dataset.targets[train_idx].mean(axis=0)
        diff = dataset.targets[hold_idx] - mean_target
        metrics["holdout_loss"] = float(eval_loss(hold_idx))
        metrics["baseline_holdout_loss"] = float(
            np.sqrt((diff**2).sum(axis=1)).mean()
        )
    return metrics
