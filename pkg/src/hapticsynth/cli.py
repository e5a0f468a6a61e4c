"""Command-line front end: synth, train, eval, bench, serve, make-dataset.

Exit codes: 0 success, 1 acceptance failure (bench over budget), 2 usage
or validation error. All machine-readable reports are JSON; wall-clock
measurements live under clearly named timing keys so everything else is
deterministic given the seed and inputs. No subcommand leaves partial
output files behind on failure: outputs are written only after all
computation has succeeded.
"""

from __future__ import annotations

import argparse
import gc
import json
import sys
import time
from pathlib import Path

import numpy as np

from hapticsynth import __version__
from hapticsynth.errors import (
    CorruptWeightsError,
    DataFormatError,
    InvalidArgumentError,
    UnsupportedVersionError,
)

EXIT_OK = 0
EXIT_ACCEPTANCE = 1
EXIT_USAGE = 2

BUDGET_MEDIAN_MS = 2.0
BUDGET_P99_MS = 4.0


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_USAGE


def _render_config(args) -> "RenderConfig":
    from hapticsynth.engine import RenderConfig

    return RenderConfig(
        loop_rate_hz=args.loop_rate,
        synthesis_rate_hz=args.fs,
        stiffness_n_per_mm=args.stiffness,
        speed_threshold_mm_s=args.threshold,
    )


def cmd_synth(args) -> int:
    from hapticsynth.dataio import export_csv, export_wav, load_height_map, load_trajectory
    from hapticsynth.engine import run_trajectory
    from hapticsynth.model import (
        encode_texture,
        load_library,
        load_weights,
        nearest_neighbor,
        toy_image_features,
    )

    try:
        config = _render_config(args)
        weights = load_weights(args.weights)
        library_path = args.library or str(Path(args.weights).parent / "library.hsl")
        library = load_library(library_path)
        trajectory = load_trajectory(args.trajectory)
    except (OSError, InvalidArgumentError, DataFormatError, CorruptWeightsError,
            UnsupportedVersionError) as exc:
        return _fail(str(exc))

    nn_distance = None
    if args.texture_id is not None:
        try:
            texture = library.get(args.texture_id)
        except KeyError:
            return _fail(f"texture not found: {args.texture_id}")
    else:
        try:
            height = load_height_map(args.image)
            query = encode_texture(toy_image_features(height), weights, texture_id="query")
        except (OSError, InvalidArgumentError) as exc:
            return _fail(str(exc))
        texture, nn_distance = nearest_neighbor(query, library)

    result = run_trajectory(config, texture, weights, trajectory.samples)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    export_wav(result.waveform, config.synthesis_rate_hz, out_dir / "waveform.wav")
    export_csv(result.waveform, config.synthesis_rate_hz, out_dir / "waveform.csv")
    report = {
        "schema_version": 1,
        "texture_id": texture.id,
        "nearest_neighbor_distance": nn_distance,
        "samples": int(result.waveform.size),
        "synthesis_rate_hz": config.synthesis_rate_hz,
        "timing": result.timing_stats(),
    }
    (out_dir / "timing.json").write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_train(args) -> int:
    from hapticsynth.dataio import (
        build_training_dataset,
        load_height_map,
        load_manifest,
        save_datasets,
    )
    from hapticsynth.model import (
        TextureLibrary,
        encode_texture,
        init_weights,
        load_weights,
        save_library,
        save_weights,
        toy_image_features,
    )
    from hapticsynth.training import TrainConfig, train_stage1, train_stage2

    stages = sorted(args.stages.split(","))
    if stages not in (["1"], ["2"], ["1", "2"]):
        return _fail(f"--stages must be 1, 2, or 1,2 (got {args.stages})")

    try:
        manifest = load_manifest(args.data)
        stage1_data, stage2_data = build_training_dataset(args.data)
    except (OSError, DataFormatError, InvalidArgumentError) as exc:
        return _fail(str(exc))

    out_dir = Path(args.out)
    weights_path = out_dir / "weights.hsw"
    n_classes = len(stage1_data.class_ids)
    config = TrainConfig(seed=args.seed)
    if args.epochs1 is not None:
        config.stage1_epochs = args.epochs1
    if args.epochs2 is not None:
        config.stage2_epochs = args.epochs2

    t_start = time.perf_counter()
    if "1" in stages:
        weights = init_weights(n_classes=n_classes, seed=args.seed)
    else:
        if not weights_path.exists():
            return _fail(
                "stage 2 alone needs encoder weights from a previous stage-1 run; "
                f"no weights file at {weights_path}"
            )
        try:
            weights = load_weights(weights_path)
        except (CorruptWeightsError, UnsupportedVersionError) as exc:
            return _fail(str(exc))
        if weights.n_classes != n_classes:
            return _fail(
                f"existing weights expect {weights.n_classes} classes, dataset has {n_classes}"
            )

    metrics = {"schema_version": 1, "dataset": {
        "textures": n_classes,
        "stage1_examples": int(len(stage1_data.labels)),
        "stage2_samples": int(len(stage2_data.forces)),
        "stage2_holdout": int(stage2_data.holdout_mask.sum()),
    }}
    if "1" in stages:
        metrics["stage1"] = train_stage1(stage1_data, weights, config)
    if "2" in stages:
        metrics["stage2"] = train_stage2(stage2_data, weights, config)
    metrics["timing"] = {"train_wall_s": time.perf_counter() - t_start}

    # Library: canonical height-map embedding per texture, plus features.
    entries, features = [], {}
    for entry in manifest["textures"]:
        feat = toy_image_features(load_height_map(Path(args.data) / entry["height_maps"][0]))
        emb = encode_texture(feat, weights, texture_id=entry["id"], name=entry["name"])
        entries.append(emb)
        features[entry["id"]] = feat
    library = TextureLibrary(entries=entries, features=features)

    weights.provenance = f"seed{args.seed}-data{manifest['seed']}"
    out_dir.mkdir(parents=True, exist_ok=True)
    save_weights(weights, weights_path)
    save_library(library, out_dir / "library.hsl")
    save_datasets(stage1_data, stage2_data, out_dir / "datasets.npz")
    (out_dir / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
    print(json.dumps({k: v for k, v in metrics.items() if k != "timing"}, indent=2))
    return EXIT_OK


def cmd_eval(args) -> int:
    from hapticsynth.dataio import build_training_dataset, load_manifest, load_trajectory
    from hapticsynth.engine import RenderConfig, RenderSession, render_step, resample_trajectory
    from hapticsynth.model import load_weights, mlp_forward
    from hapticsynth.spectral import spectral_consistency_error
    from hapticsynth.training import euclidean_frame_loss, stage2_forward

    try:
        weights = load_weights(args.weights)
        manifest = load_manifest(args.data)
        _, stage2 = build_training_dataset(args.data)
    except (OSError, DataFormatError, InvalidArgumentError, CorruptWeightsError,
            UnsupportedVersionError) as exc:
        return _fail(str(exc))

    hold = np.flatnonzero(stage2.holdout_mask)
    train = np.flatnonzero(~stage2.holdout_mask)
    if hold.size == 0:
        return _fail("dataset has no held-out split")

    nets = {k: weights.networks[k] for k in
            ("force_encoder", "speed_encoder", "action_encoder", "predictor")}
    embeddings = mlp_forward(weights.networks["texture_encoder"], stage2.features)
    mean_target = stage2.targets[train].mean(axis=0)

    per_texture = {}
    for t_index, texture_id in enumerate(stage2.texture_ids):
        idx = hold[stage2.sample_texture[hold] == t_index]
        if idx.size == 0:
            continue
        *_, acts_p = stage2_forward(
            nets,
            embeddings[stage2.sample_texture[idx]],
            stage2.forces[idx],
            stage2.velocities[idx],
        )
        pred = np.maximum(acts_p[-1], 0.0)
        model_l2, _ = euclidean_frame_loss(pred, stage2.targets[idx])
        base_l2 = float(
            np.sqrt(((stage2.targets[idx] - mean_target) ** 2).sum(axis=1)).mean()
        )
        per_texture[texture_id] = {"model_l2": model_l2, "baseline_l2": base_l2}

    # Waveform reconstruction consistency on the held-out trajectory.
    from hapticsynth.model import TextureEmbedding

    holdout_rel = next(
        rel for rel in manifest["trajectories"]
        if Path(rel).stem == manifest["holdout_trajectory"]
    )
    trajectory = load_trajectory(Path(args.data) / holdout_rel)
    config = RenderConfig(loop_rate_hz=manifest["loop_rate_hz"])
    geometry = config.geometry()
    consistency = {}
    for t_index, texture_id in enumerate(stage2.texture_ids):
        texture = TextureEmbedding(embeddings[t_index], id=texture_id)
        session = RenderSession(config, texture, weights)
        frames, chunks = [], []
        for probe in resample_trajectory(trajectory.samples, config.loop_rate_hz):
            samples, _ = render_step(session, probe)
            frames.append(session.last_frame)
            chunks.append(samples)
        frames = np.asarray(frames)
        signal = np.concatenate(chunks).astype(np.float64)
        covered = frames.shape[0] - geometry.frame_len // geometry.hop + 1
        consistency[texture_id] = spectral_consistency_error(
            frames[:covered],
            signal[: (covered - 1) * geometry.hop + geometry.frame_len],
            geometry,
        )

    model_mean = float(np.mean([v["model_l2"] for v in per_texture.values()]))
    base_mean = float(np.mean([v["baseline_l2"] for v in per_texture.values()]))
    report = {
        "schema_version": 1,
        "per_texture": per_texture,
        "mean_model_l2": model_mean,
        "mean_baseline_l2": base_mean,
        "model_to_baseline_ratio": model_mean / base_mean if base_mean else None,
        "reconstruction_consistency": consistency,
    }
    print(json.dumps(report, indent=2))
    return EXIT_OK


def bench_trajectory_probe(i: int, loop_rate_hz: float):
    """Deterministic circular motion at ~100 mm/s, 1.5 mm deep."""
    from hapticsynth.engine import ProbeSample

    t = i / loop_rate_hz
    radius, angular_hz = 15.0, 1.06
    return ProbeSample(
        t_s=t,
        position=(
            radius * np.cos(2.0 * np.pi * angular_hz * t),
            radius * np.sin(2.0 * np.pi * angular_hz * t),
            -1.5,
        ),
    )


def cmd_bench(args) -> int:
    from hapticsynth.engine import RenderConfig, RenderSession, render_step
    from hapticsynth.model import TextureEmbedding, load_weights

    try:
        weights = load_weights(args.weights)
    except (OSError, CorruptWeightsError, UnsupportedVersionError) as exc:
        return _fail(str(exc))
    if args.duration_s <= 0:
        return _fail("--duration-s must be positive")

    config = RenderConfig()
    rng = np.random.default_rng(0)
    texture = TextureEmbedding(
        rng.standard_normal(256).astype(np.float32), id="bench"
    )
    session = RenderSession(config, texture, weights)
    n_loops = int(round(args.duration_s * config.loop_rate_hz))

    # Warm up caches and BLAS threads outside the measured window.
    for i in range(min(500, n_loops)):
        render_step(session, bench_trajectory_probe(i, config.loop_rate_hz))
    session.loop_durations_s.clear()

    gc_was_enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        for i in range(n_loops):
            render_step(session, bench_trajectory_probe(i + 500, config.loop_rate_hz))
    finally:
        if gc_was_enabled:
            gc.enable()

    d = np.sort(np.asarray(session.loop_durations_s))
    report = {
        "schema_version": 1,
        "loops": int(d.size),
        "duration_s": args.duration_s,
        "timing": {
            "median_ms": float(np.median(d) * 1e3),
            "p95_ms": float(d[int(0.95 * (d.size - 1))] * 1e3),
            "p99_ms": float(d[int(0.99 * (d.size - 1))] * 1e3),
            "max_ms": float(d[-1] * 1e3),
        },
        "budget": {"median_ms": BUDGET_MEDIAN_MS, "p99_ms": BUDGET_P99_MS},
    }
    report["pass"] = report["timing"]["median_ms"] <= BUDGET_MEDIAN_MS
    print(json.dumps(report, indent=2))
    return EXIT_OK if report["pass"] else EXIT_ACCEPTANCE


def cmd_serve(args) -> int:
    import uvicorn

    from hapticsynth.model import load_library, load_weights
    from hapticsynth.service import create_app

    host, _, port_text = args.bind.rpartition(":")
    if not host or not port_text.isdigit():
        return _fail(f"--bind must look like host:port, got '{args.bind}'")
    try:
        weights = load_weights(args.weights)
        library = load_library(args.library)
    except (OSError, CorruptWeightsError, UnsupportedVersionError, DataFormatError) as exc:
        return _fail(str(exc))
    if args.ui_dir is not None and not Path(args.ui_dir).is_dir():
        return _fail(f"--ui-dir is not a directory: {args.ui_dir}")

    app = create_app(weights, library, ui_dir=args.ui_dir)
    uvicorn.run(app, host=host, port=int(port_text), log_level="warning")
    return EXIT_OK


def cmd_make_dataset(args) -> int:
    from hapticsynth.dataio import generate_dataset

    try:
        out = generate_dataset(
            args.out,
            n_textures=args.textures,
            n_trajectories=args.trajectories,
            seed=args.seed,
        )
    except InvalidArgumentError as exc:
        return _fail(str(exc))
    print(json.dumps({"dataset_dir": str(out), "textures": args.textures,
                      "trajectories": args.trajectories, "seed": args.seed}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hapticsynth",
        description="Streaming vibrotactile texture synthesis toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a trajectory to a waveform")
    p.add_argument("--weights", required=True)
    p.add_argument("--library", default=None,
                   help="texture library (default: library.hsl next to weights)")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--texture-id")
    group.add_argument("--image", help="height-map PNG for the unseen-texture route")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--fs", type=float, default=500.0)
    p.add_argument("--loop-rate", type=float, default=500.0)
    p.add_argument("--stiffness", type=float, default=0.5)
    p.add_argument("--threshold", type=float, default=5.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="two-stage training on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stages", default="1,2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs1", type=int, default=None)
    p.add_argument("--epochs2", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="held-out metrics for trained weights")
    p.add_argument("--weights", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="render-loop latency benchmark")
    p.add_argument("--weights", required=True)
    p.add_argument("--duration-s", type=float, default=30.0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="websocket streaming service")
    p.add_argument("--weights", required=True)
    p.add_argument("--library", required=True)
    p.add_argument("--bind", default="127.0.0.1:8765")
    p.add_argument("--ui-dir", default=None,
                   help="serve the browser probe pad from this directory")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("make-dataset", help="generate the bundled synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--textures", type=int, default=6)
    p.add_argument("--trajectories", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_dataset)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvalidArgumentError as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
