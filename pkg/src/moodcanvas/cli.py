"""Command-line entry point.

Subcommands cover the full workflow: feature extraction, audio estimator
training, generator-space sampling, view construction, translator
training, palette assembly, story generation, artifact inspection and the
instability diagnostic.  Exit codes: 0 success, 2 config error, 3 backend
error, 4 data error.
"""

from __future__ import annotations

import argparse
import json
import shlex
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .attribute_view import (
    build_attribute_view,
    instability_histogram,
    load_view,
    save_view,
)
from .audio_features import (
    FeatureConfig,
    extract_feature_sequence,
    load_audio,
    load_feature_matrix,
    save_feature_matrix,
)
from .bridge_client import (
    BridgeBackend,
    BridgeClient,
    BridgeStylizer,
    BridgeVisualEstimator,
)
from .core_types import AttributeVector, ImageHandle
from .errors import (
    BackendError,
    ConfigError,
    DataError,
    FileIOError,
    MoodCanvasError,
    StageError,
    TrainingDivergedError,
)
from .estimators import (
    TrainingConfig,
    compute_zscore_stats,
    load_mlp_regressor,
    load_training_set,
    read_json_artifact,
    save_mlp_regressor,
    train_mlp_regressor,
)
from .generator_backend import (
    SyntheticBackend,
    SyntheticBackendSpec,
    SyntheticVisualEstimator,
    load_pairs,
    sample_generator_space,
    save_pairs,
)
from .stylizer import (
    BandThresholds,
    StyleEntry,
    StylePalette,
    build_style_palette,
    load_palette,
    save_palette,
)
from .translator import (
    TranslatorConfig,
    load_translator,
    save_translator,
    train_translator,
)

DEFAULT_NUM_CLASSES = 1000
DEFAULT_LATENT_DIM = 128
DEFAULT_N_ATTRIBUTES = 2


class _BackendHandle:
    """Lazily-built backend plus its companions; closes the bridge on exit."""

    def __init__(self, spec: str, config: dict):
        self.spec = spec
        self.config = config.get("backend", {})
        self._client = None
        self._backend = None

    @property
    def backend(self):
        if self._backend is None:
            if self.spec == "synthetic":
                table = SyntheticBackendSpec(
                    num_classes=self.config.get("classes", DEFAULT_NUM_CLASSES),
                    latent_dim=self.config.get("latent_dim", DEFAULT_LATENT_DIM),
                    n_attributes=self.config.get("attributes", DEFAULT_N_ATTRIBUTES),
                    seed=self.config.get("seed", 0),
                )
                self._backend = SyntheticBackend(table)
            elif self.spec.startswith("bridge:"):
                command = shlex.split(self.spec[len("bridge:"):])
                if not command:
                    raise ConfigError("--backend bridge: requires a launch command")
                self._client = BridgeClient(command)
                self._backend = BridgeBackend(self._client)
            else:
                raise ConfigError(
                    f"unknown backend '{self.spec}' (expected 'synthetic' or 'bridge:<cmd>')"
                )
        return self._backend

    @property
    def estimator(self):
        backend = self.backend
        if self._client is not None:
            return BridgeVisualEstimator(self._client)
        return SyntheticVisualEstimator(backend.spec)

    @property
    def stylizer(self):
        backend = self.backend
        if self._client is not None and self._client.supports_stylize:
            return BridgeStylizer(self._client)
        return None

    def close(self):
        if self._client is not None:
            self._client.close()
            self._client = None


def _feature_config(config: dict) -> FeatureConfig:
    return FeatureConfig(**config.get("features", {}))


def _seed(args, config: dict, section: str, fallback: int = 0) -> int:
    """Seed precedence: explicit --seed flag, then config section, then fallback."""
    if args.seed is not None:
        return args.seed
    return config.get(section, {}).get("seed", fallback)


# ---------------------------------------------------------------------------
# Subcommand implementations


def _cmd_features(args, config, handle):
    cfg = _feature_config(config)
    segment = load_audio(args.song, cfg.sample_rate)
    sequence = extract_feature_sequence(segment, cfg, song_id=Path(args.song).stem)
    save_feature_matrix(sequence.windows, args.output)
    print(f"wrote {sequence.windows.shape[0]} x {sequence.windows.shape[1]} features to {args.output}")
    return 0


def _cmd_train_audio(args, config, handle):
    features, targets, song_ids = load_training_set(args.annotations, args.features_dir)
    section = config.get("train_audio", {})
    hidden = args.hidden if args.hidden is not None else section.get("hidden", 64)
    phases = section.get("epochs_schedule")
    kwargs = {}
    if phases is not None:
        kwargs["phases"] = tuple((int(n), float(lr)) for n, lr in phases)
    if "batch_size" in section:
        kwargs["batch_size"] = section["batch_size"]
    cfg = TrainingConfig(seed=_seed(args, config, "train_audio"), **kwargs)
    model, trace = train_mlp_regressor(
        features,
        targets,
        layer_sizes=[features.shape[1], hidden, targets.shape[1]],
        activations=["sigmoid", "identity"],
        cfg=cfg,
    )
    stats = compute_zscore_stats(targets, "dataset_level")
    meta = {
        "songs": sorted(set(song_ids)),
        "windows": int(features.shape[0]),
        "final_loss": float(trace[-1]),
        "attribute_stats": {
            "mean": [float(v) for v in stats.mean],
            "std": [float(v) for v in stats.std],
        },
    }
    save_mlp_regressor(model, args.output, training_meta=meta)
    print(f"trained on {features.shape[0]} windows, final loss {trace[-1]:.6f}; wrote {args.output}")
    return 0


def _cmd_sample(args, config, handle):
    seed = _seed(args, config, "sample")
    count = args.count if args.count is not None else config.get("sample", {}).get("count", 1000)
    pairs = sample_generator_space(handle.backend, handle.estimator, count, seed)
    save_pairs(pairs, args.output)
    print(f"sampled {len(pairs)} generator/attribute pairs to {args.output}")
    return 0


def _parse_class_list(text: str):
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"--classes must be a comma-separated list of ints: {text!r}") from exc


def _cmd_build_view(args, config, handle):
    pairs = load_pairs(args.pairs)
    section = config.get("view", {})
    nk = args.nk if args.nk is not None else section.get("clusters", 20)
    ns = args.ns if args.ns is not None else section.get("subclusters", 16)
    categories = None
    if args.classes is not None:
        categories = _parse_class_list(args.classes)
    elif "classes" in section:
        categories = [int(c) for c in section["classes"]]
    view = build_attribute_view(
        pairs,
        n_clusters=nk,
        n_subclusters=ns,
        seed=_seed(args, config, "view"),
        user_categories=categories,
    )
    save_view(view, args.output)
    print(
        f"view: {len(view.retained_categories)} retained categories, "
        f"{view.attribute_targets.shape[0]} smoothed pairs; wrote {args.output}"
    )
    return 0


def _cmd_train_translator(args, config, handle):
    view = load_view(args.view)
    section = dict(config.get("translator", {}))
    for key in ("epochs", "learning_rate", "latent_loss_weight", "noise_sigma", "batch_size"):
        flag = getattr(args, key, None)
        if flag is not None:
            section[key] = flag
    section["seed"] = _seed(args, config, "translator", section.get("seed", 0))
    cfg = TranslatorConfig(**section)
    backend_cfg = config.get("backend", {})
    num_classes = backend_cfg.get("classes", DEFAULT_NUM_CLASSES)
    latent_dim = backend_cfg.get("latent_dim", DEFAULT_LATENT_DIM)
    model, trace = train_translator(view, cfg, num_classes=num_classes, latent_dim=latent_dim)
    save_translator(model, args.output, training_meta={"final_loss": float(trace[-1])})
    print(f"trained translator, final loss {trace[-1]:.6f}; wrote {args.output}")
    return 0


def _parse_attribute_lists(text: str):
    vectors = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            vectors.append([float(tok) for tok in chunk.split(",")])
        except ValueError as exc:
            raise ConfigError(
                f"--attributes expects 'v,a;v,a;...' with numeric entries: {chunk!r}"
            ) from exc
    if not vectors:
        raise ConfigError("--attributes given but empty")
    return vectors


def _cmd_palette(args, config, handle):
    section = config.get("palette", {})
    blend = args.blend if args.blend is not None else section.get("blend", 0.1)
    thresholds = BandThresholds(
        negative_below=section.get("negative_below", -0.5),
        positive_above=section.get("positive_above", 0.5),
    )
    if args.attributes is not None:
        vectors = _parse_attribute_lists(args.attributes)
        if len(vectors) != len(args.images):
            raise ConfigError(
                f"{len(args.images)} images but {len(vectors)} attribute vectors"
            )
        entries = tuple(
            StyleEntry(style_id=i, attribute=AttributeVector(np.asarray(v, dtype=np.float64)),
                       image_ref=str(path))
            for i, (path, v) in enumerate(zip(args.images, vectors))
        )
        palette = StylePalette(entries=entries, thresholds=thresholds, blend=blend)
    else:
        if handle.spec == "synthetic":
            raise ConfigError(
                "the synthetic backend cannot estimate attributes of arbitrary images; "
                "pass --attributes or use a bridge backend"
            )
        backend = handle.backend
        size = getattr(backend, "image_size", 1)
        items = []
        for i, path in enumerate(args.images):
            try:
                with open(path, "rb") as fh:
                    payload = fh.read()
            except OSError as exc:
                raise DataError(f"could not read style image {path}: {exc}") from exc
            items.append((i, ImageHandle(payload=payload, width=size, height=size,
                                         channels=3, ref=str(path)), str(path)))
        palette = build_style_palette(items, handle.estimator, thresholds=thresholds, blend=blend)
    save_palette(palette, args.output)
    print(f"palette with {len(palette.entries)} styles (blend {palette.blend}); wrote {args.output}")
    return 0


def _cmd_story(args, config, handle):
    overrides = {
        "estimator_path": args.estimator,
        "translator_path": args.translator,
        "palette_path": args.palette,
        "view_path": args.view,
        "output_dir": args.output,
        "interval_seconds": args.interval,
        "alignment": args.alignment,
        "aggregation": args.aggregation,
        "noise_sigma": args.noise_sigma,
        "style_mode": args.style_mode,
    }
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = pipeline.story_config_from(config, **overrides)
    manifest = pipeline.generate_story(args.song, cfg, handle.backend, stylizer=handle.stylizer)
    print(f"story: {len(manifest)} frames; manifest at {Path(cfg.output_dir) / 'manifest.json'}")
    return 0


def _inspect_doc(path: Path):
    try:
        with open(path, "rb") as fh:
            head = fh.read(4)
    except OSError as exc:
        raise FileIOError(f"artifact file not readable: {path}: {exc}") from exc
    if head == b"DSFT":
        matrix = load_feature_matrix(path)
        return {"kind": "feature_matrix", "rows": matrix.shape[0], "cols": matrix.shape[1]}
    if path.suffix == ".jsonl":
        pairs = load_pairs(path)
        classes = sorted({p.generator.class_id for p in pairs})
        return {"kind": "pair_corpus", "pairs": len(pairs), "distinct_classes": len(classes)}
    doc = read_json_artifact(path, expected_kind=None)
    kind = doc.get("kind", "unknown")
    summary = {"kind": kind, "version": doc.get("version")}
    if kind == "mlp_regressor":
        model = load_mlp_regressor(path)
        summary["layer_sizes"] = list(model.sizes)
        summary["parameters"] = int(model.parameters.size)
    elif kind == "translation_model":
        model = load_translator(path)
        summary["retained_categories"] = len(model.retained_categories)
        summary["num_classes"] = model.num_classes
        summary["latent_dim"] = model.latent_dim
    elif kind == "attribute_view":
        view = load_view(path)
        summary["retained_categories"] = len(view.retained_categories)
        summary["smoothed_pairs"] = int(view.attribute_targets.shape[0])
    elif kind == "style_palette":
        palette = load_palette(path)
        summary["styles"] = len(palette.entries)
        summary["blend"] = palette.blend
    elif kind == "frame_manifest":
        manifest = pipeline.load_manifest(path)
        summary["frames"] = len(manifest)
        summary["interval_seconds"] = manifest.interval_seconds
    return summary


def _cmd_inspect(args, config, handle):
    summary = _inspect_doc(Path(args.artifact))
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_instability(args, config, handle):
    pairs = load_pairs(args.pairs)
    counts = instability_histogram(pairs, n_clusters=args.nk, seed=_seed(args, config, "view"))
    print(f"clusters: {counts.size}")
    print(f"distinct classes per cluster: min {counts.min()}, "
          f"median {float(np.median(counts)):g}, max {counts.max()}")
    print("histogram: " + " ".join(str(int(c)) for c in counts))
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moodcanvas",
        description="Music-driven generator control: audio sentiment to image-generator inputs.",
    )
    parser.add_argument("--seed", type=int, default=None, help="seed override for this command")
    parser.add_argument("--config", default=None, help="TOML config file")
    parser.add_argument(
        "--backend", default="synthetic",
        help="'synthetic' or 'bridge:<launch command>'",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="extract the per-window feature matrix from a WAV file")
    p.add_argument("song")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("train-audio", help="train the audio/attribute regressor")
    p.add_argument("--annotations", required=True, help="CSV of id,valence,arousal")
    p.add_argument("--features-dir", required=True, help="directory of <id>.dsft matrices")
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_train_audio)

    p = sub.add_parser("sample", help="sample (generator, attribute) pairs from the backend")
    p.add_argument("--count", type=int, default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("build-view", help="cluster the pair corpus into a stable view")
    p.add_argument("--pairs", required=True)
    p.add_argument("--nk", type=int, default=None, help="attribute clusters")
    p.add_argument("--ns", type=int, default=None, help="sub-clusters per retained class")
    p.add_argument("--classes", default=None, help="comma-separated class ids to retain")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_build_view)

    p = sub.add_parser("train-translator", help="train the attribute-to-generator translator")
    p.add_argument("--view", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--latent-loss-weight", dest="latent_loss_weight", type=float, default=None)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_train_translator)

    p = sub.add_parser("palette", help="assemble a style palette from style images")
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--attributes", default=None,
                   help="explicit 'v,a;v,a;...' attribute vectors (required for synthetic)")
    p.add_argument("--blend", type=float, default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_palette)

    p = sub.add_parser("story", help="turn a song into a frame manifest (and images)")
    p.add_argument("song")
    p.add_argument("--estimator", required=True)
    p.add_argument("--translator", required=True)
    p.add_argument("--palette", default=None)
    p.add_argument("--view", default=None)
    p.add_argument("--interval", type=float, default=None)
    p.add_argument("--alignment", choices=["song_level", "dataset_level", "none"], default=None)
    p.add_argument("--aggregation", choices=["mean", "median"], default=None)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=None)
    p.add_argument("--style-mode", dest="style_mode", choices=["nearest", "band_gated"],
                   default=None)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=_cmd_story)

    p = sub.add_parser("inspect", help="summarize any saved artifact")
    p.add_argument("artifact")
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("instability", help="distinct-class histogram over attribute clusters")
    p.add_argument("--pairs", required=True)
    p.add_argument("--nk", type=int, default=20)
    p.set_defaults(func=_cmd_instability)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = pipeline.load_config(args.config) if args.config else {}
        handle = _BackendHandle(args.backend, config)
        try:
            return args.func(args, config, handle)
        finally:
            handle.close()
    except MoodCanvasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


def _exit_code(exc: MoodCanvasError) -> int:
    if isinstance(exc, StageError) and exc.cause is not None:
        inner = exc.cause
        if isinstance(inner, MoodCanvasError):
            return _exit_code(inner)
    if isinstance(exc, ConfigError):
        return 2
    if isinstance(exc, BackendError):
        return 3
    if isinstance(exc, (DataError, TrainingDivergedError)):
        return 4
    return 4


if __name__ == "__main__":
    sys.exit(main())
