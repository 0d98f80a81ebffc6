"""End-to-end orchestration: song -> features -> attributes -> alignment ->
interval aggregation -> translation -> generation -> style selection ->
frame manifest.

The manifest (one frame per music interval) is the primary deliverable;
pixel frames are only written when the attached backend actually carries
pixels.  With fixed seeds the whole chain is deterministic and the
manifest serializes byte-identically across runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib as _toml
except ModuleNotFoundError:  # Python 3.10
    import tomli as _toml

from .audio_features import FeatureConfig, extract_feature_sequence, load_audio
from .core_types import AttributeVector, GeneratorVector
from .errors import (
    ConfigError,
    DataError,
    FileIOError,
    FormatError,
    MoodCanvasError,
    ParseError,
    StageError,
)
from .estimators import (
    MLPRegressor,
    ZScoreStats,
    compute_zscore_stats,
    load_mlp_regressor,
    predict_attributes,
    read_json_artifact,
    save_mlp_regressor,
    zscore_align,
)
from .attribute_view import AttributeView, load_view, save_view
from .generator_backend import GeneratorBackend
from .stylizer import StylePalette, load_palette, save_palette, select_style
from .translator import TranslationModel, load_translator, save_translator, translate

MANIFEST_FORMAT_VERSION = 1

BUNDLE_FORMAT_VERSION = 1

AGGREGATIONS = ("mean", "median")

WINDOW_SECONDS = 0.5


@dataclass(frozen=True)
class StoryConfig:
    """Everything a story run needs: artifact refs plus knobs."""

    estimator_path: str
    translator_path: str
    output_dir: str
    palette_path: str | None = None
    view_path: str | None = None
    interval_seconds: float = 5.0
    alignment: str = "song_level"
    aggregation: str = "mean"
    noise_sigma: float | None = None
    style_mode: str = "nearest"
    seed: int = 0
    feature_config: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self):
        ratio = self.interval_seconds / WINDOW_SECONDS
        if self.interval_seconds <= 0 or abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError(
                f"interval_seconds must be a positive multiple of {WINDOW_SECONDS}, "
                f"got {self.interval_seconds}"
            )
        if self.alignment not in ("song_level", "dataset_level", "none"):
            raise ConfigError(f"unknown alignment scope '{self.alignment}'")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}")
        if self.noise_sigma is not None and self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")

    @property
    def windows_per_interval(self) -> int:
        return int(round(self.interval_seconds / WINDOW_SECONDS))


@dataclass(frozen=True)
class FrameRecord:
    index: int
    start_time: float
    attribute: AttributeVector
    generator: GeneratorVector
    style_id: int | None = None
    image: str | None = None


@dataclass(frozen=True)
class FrameManifest:
    frames: tuple
    interval_seconds: float
    song: str = ""

    def __post_init__(self):
        frames = tuple(self.frames)
        for i, frame in enumerate(frames):
            if frame.index != i:
                raise DataError(f"manifest frames out of order at position {i}")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)


def _f32(value: float) -> float:
    return float(np.float32(value))


def manifest_to_doc(manifest: FrameManifest) -> dict:
    return {
        "version": MANIFEST_FORMAT_VERSION,
        "kind": "frame_manifest",
        "song": manifest.song,
        "interval_seconds": manifest.interval_seconds,
        "frames": [
            {
                "index": f.index,
                "start_time": _f32(f.start_time),
                "attribute": [_f32(v) for v in f.attribute.values],
                "generator": {
                    "class_id": f.generator.class_id,
                    "latent": [_f32(v) for v in f.generator.latent],
                },
                "style_id": f.style_id,
                "image": f.image,
            }
            for f in manifest.frames
        ],
    }


def save_manifest(manifest: FrameManifest, path) -> None:
    doc = manifest_to_doc(manifest)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def load_manifest(path) -> FrameManifest:
    doc = read_json_artifact(path, "frame_manifest", MANIFEST_FORMAT_VERSION)
    try:
        frames = tuple(
            FrameRecord(
                index=int(f["index"]),
                start_time=float(f["start_time"]),
                attribute=AttributeVector(np.asarray(f["attribute"], dtype=np.float64)),
                generator=GeneratorVector(
                    class_id=int(f["generator"]["class_id"]),
                    latent=np.asarray(f["generator"]["latent"], dtype=np.float64),
                ),
                style_id=f.get("style_id"),
                image=f.get("image"),
            )
            for f in doc["frames"]
        )
        return FrameManifest(
            frames=frames,
            interval_seconds=float(doc["interval_seconds"]),
            song=str(doc.get("song", "")),
        )
    except KeyError as exc:
        raise FormatError(f"manifest file {path} is missing field {exc}") from exc


# ---------------------------------------------------------------------------
# Interval aggregation


def interval_attributes(window_attrs, interval_seconds: float, aggregation: str = "mean"):
    """Aggregate per-window attributes into per-interval attributes.

    Consecutive blocks of interval_seconds / 0.5 windows are averaged; a
    trailing partial block is aggregated as-is.
    """
    if aggregation not in AGGREGATIONS:
        raise DataError(f"aggregation must be one of {AGGREGATIONS}")
    ratio = interval_seconds / WINDOW_SECONDS
    if interval_seconds <= 0 or abs(ratio - round(ratio)) > 1e-9:
        raise DataError(
            f"interval_seconds must be a positive multiple of {WINDOW_SECONDS}"
        )
    rows = [
        a.values if isinstance(a, AttributeVector) else np.asarray(a, dtype=np.float64)
        for a in window_attrs
    ]
    if not rows:
        raise DataError("need at least one window attribute vector")
    mat = np.stack(rows)
    block = int(round(ratio))
    reduce = np.mean if aggregation == "mean" else np.median
    out = []
    for start in range(0, mat.shape[0], block):
        out.append(AttributeVector(reduce(mat[start : start + block], axis=0)))
    return out


# ---------------------------------------------------------------------------
# Story generation


def _alignment_stats(cfg: StoryConfig, window_attrs, estimator_meta: dict) -> ZScoreStats | None:
    if cfg.alignment == "none":
        return None
    if cfg.alignment == "song_level":
        return compute_zscore_stats(window_attrs, "song_level")
    stats = (estimator_meta or {}).get("attribute_stats")
    if not stats:
        raise DataError(
            "dataset_level alignment needs attribute_stats in the audio estimator's "
            "training_meta (train with stats or use song_level)"
        )
    return ZScoreStats(
        mean=np.asarray(stats["mean"], dtype=np.float64),
        std=np.asarray(stats["std"], dtype=np.float64),
        scope="dataset_level",
    )


def generate_story(
    song_path,
    cfg: StoryConfig,
    backend: GeneratorBackend,
    stylizer=None,
) -> FrameManifest:
    """Run the full chain on one song; returns (and writes) the manifest.

    Frame images are written only for backends that carry pixels.  On a
    stage failure the manifest accumulated so far is still written, then a
    stage-named error is raised.
    """
    output_dir = Path(cfg.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = output_dir / "manifest.json"
    frames: list = []

    def fail(stage: str, exc: Exception):
        partial = FrameManifest(
            frames=tuple(frames), interval_seconds=cfg.interval_seconds,
            song=str(song_path),
        )
        save_manifest(partial, manifest_path)
        raise StageError(stage, exc) from exc

    stage = "load-artifacts"
    try:
        audio_doc = read_json_artifact(cfg.estimator_path, "mlp_regressor")
        audio_model = load_mlp_regressor(cfg.estimator_path)
        translator_model = load_translator(cfg.translator_path)
        palette = load_palette(cfg.palette_path) if cfg.palette_path else None
        view = load_view(cfg.view_path) if cfg.view_path else None
        if view is not None and tuple(view.retained_categories) != tuple(
            translator_model.retained_categories
        ):
            raise DataError(
                "translator's retained categories do not match the referenced view"
            )
        if translator_model.num_classes != backend.num_classes:
            raise DataError(
                f"translator expects {translator_model.num_classes} classes, backend "
                f"has {backend.num_classes}"
            )
        if translator_model.latent_dim != backend.latent_dim:
            raise DataError(
                f"translator expects latent dim {translator_model.latent_dim}, backend "
                f"has {backend.latent_dim}"
            )
    except MoodCanvasError as exc:
        fail(stage, exc)

    stage = "load-audio"
    try:
        segment = load_audio(song_path, cfg.feature_config.sample_rate)
    except MoodCanvasError as exc:
        fail(stage, exc)

    stage = "features"
    try:
        sequence = extract_feature_sequence(segment, cfg.feature_config,
                                            song_id=Path(str(song_path)).stem)
    except MoodCanvasError as exc:
        fail(stage, exc)

    stage = "estimate-attributes"
    try:
        window_attrs = predict_attributes(audio_model, sequence)
    except MoodCanvasError as exc:
        fail(stage, exc)

    stage = "align"
    try:
        stats = _alignment_stats(cfg, window_attrs, audio_doc.get("training_meta"))
        aligned = zscore_align(window_attrs, stats) if stats is not None else window_attrs
    except MoodCanvasError as exc:
        fail(stage, exc)

    stage = "aggregate"
    try:
        intervals = interval_attributes(aligned, cfg.interval_seconds, cfg.aggregation)
    except MoodCanvasError as exc:
        fail(stage, exc)

    rng = np.random.default_rng(cfg.seed)
    sigma = translator_model.noise_sigma if cfg.noise_sigma is None else cfg.noise_sigma
    style_images: dict = {}
    for index, attr in enumerate(intervals):
        stage = f"frame-{index}"
        try:
            gv = translate(translator_model, attr, rng, noise_sigma=sigma)
            style_id = select_style(palette, attr, mode=cfg.style_mode) if palette else None
            image_name = None
            if getattr(backend, "has_pixels", False):
                image = backend.generate(gv)
                if palette is not None and stylizer is not None and backend.supports_stylize:
                    style_image = _style_image(palette, style_id, backend, style_images)
                    image = stylizer.stylize(image, style_image, palette.blend)
                image_name = f"frame_{index:04d}.png"
                with open(output_dir / image_name, "wb") as fh:
                    fh.write(image.payload)
            frames.append(
                FrameRecord(
                    index=index,
                    start_time=index * cfg.interval_seconds,
                    attribute=attr,
                    generator=gv,
                    style_id=style_id,
                    image=image_name,
                )
            )
        except MoodCanvasError as exc:
            fail(stage, exc)

    manifest = FrameManifest(
        frames=tuple(frames), interval_seconds=cfg.interval_seconds, song=str(song_path)
    )
    save_manifest(manifest, manifest_path)
    return manifest


def _style_image(palette: StylePalette, style_id: int, backend, cache: dict):
    """Fetch (and cache) the style image bytes behind a palette entry."""
    from .core_types import ImageHandle

    if style_id in cache:
        return cache[style_id]
    entry = next(e for e in palette.entries if e.style_id == style_id)
    if not entry.image_ref:
        raise DataError(f"palette entry {style_id} has no image reference to stylize with")
    try:
        with open(entry.image_ref, "rb") as fh:
            payload = fh.read()
    except OSError as exc:
        raise FileIOError(f"could not read style image {entry.image_ref}: {exc}") from exc
    size = getattr(backend, "image_size", None) or 1
    handle = ImageHandle(payload=payload, width=size, height=size, channels=3,
                         ref=entry.image_ref)
    cache[style_id] = handle
    return handle


def expected_frame_count(song_seconds: float, interval_seconds: float) -> int:
    """ceil(song_seconds / interval_seconds) under the trailing-window rules."""
    return int(math.ceil(song_seconds / interval_seconds - 1e-9))


# ---------------------------------------------------------------------------
# Bundles


_BUNDLE_FILES = {
    "estimator": ("estimator.json", load_mlp_regressor, save_mlp_regressor),
    "translator": ("translator.json", load_translator, save_translator),
    "view": ("view.json", load_view, save_view),
    "palette": ("palette.json", load_palette, save_palette),
}


def save_bundle(directory, estimator=None, translator=None, view=None, palette=None) -> None:
    """Write the given artifacts under canonical names plus a bundle index."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    artifacts = {}
    objects = {"estimator": estimator, "translator": translator, "view": view,
               "palette": palette}
    for name, obj in objects.items():
        if obj is None:
            continue
        filename, _load, save = _BUNDLE_FILES[name]
        save(obj, directory / filename)
        artifacts[name] = filename
    if not artifacts:
        raise DataError("save_bundle called with no artifacts")
    index = {"version": BUNDLE_FORMAT_VERSION, "kind": "bundle", "artifacts": artifacts}
    with open(directory / "bundle.json", "w", encoding="utf-8") as fh:
        json.dump(index, fh, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class Bundle:
    estimator: MLPRegressor | None = None
    translator: TranslationModel | None = None
    view: AttributeView | None = None
    palette: StylePalette | None = None


def load_bundle(directory) -> Bundle:
    directory = Path(directory)
    index_path = directory / "bundle.json"
    if not index_path.exists():
        raise FileIOError(f"bundle index not found: {index_path}")
    index = read_json_artifact(index_path, "bundle", BUNDLE_FORMAT_VERSION)
    loaded = {}
    for name, filename in index.get("artifacts", {}).items():
        if name not in _BUNDLE_FILES:
            raise FormatError(f"bundle lists unknown artifact kind '{name}'")
        path = directory / filename
        if not path.exists():
            raise FileIOError(f"bundle artifact '{name}' missing: {path}")
        loaded[name] = _BUNDLE_FILES[name][1](path)
    return Bundle(**loaded)


# ---------------------------------------------------------------------------
# Strict TOML configuration


_CONFIG_SCHEMA = {
    "backend": {
        "kind": str, "command": str, "classes": int, "latent_dim": int,
        "seed": int, "attributes": int,
    },
    "features": {
        "sample_rate": int, "fft_size": int, "hop_length": int, "mel_bands": int,
        "mfcc_count": int, "chroma_bins": int, "cens_smoothing_window": int,
        "cens_downsample": int, "tempogram_window": int, "window_ms": int,
    },
    "sample": {"count": int, "seed": int},
    "view": {"clusters": int, "subclusters": int, "seed": int, "classes": list},
    "train_audio": {"epochs_schedule": list, "batch_size": int, "seed": int,
                    "hidden": int},
    "translator": {
        "epochs": int, "learning_rate": float, "latent_loss_weight": float,
        "noise_sigma": float, "batch_size": int, "seed": int,
    },
    "story": {
        "interval_seconds": float, "alignment": str, "aggregation": str,
        "noise_sigma": float, "style_mode": str, "seed": int,
    },
    "palette": {"blend": float, "negative_below": float, "positive_above": float},
}


def load_config(path) -> dict:
    """Parse a TOML config file, rejecting unknown sections and keys."""
    try:
        with open(path, "rb") as fh:
            raw = _toml.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc
    return validate_config(raw, source=str(path))


def validate_config(raw: dict, source: str = "<config>") -> dict:
    for section, values in raw.items():
        if section not in _CONFIG_SCHEMA:
            raise ConfigError(f"{source}: unknown config section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"{source}: section [{section}] must be a table")
        schema = _CONFIG_SCHEMA[section]
        for key, value in values.items():
            if key not in schema:
                raise ConfigError(f"{source}: unknown key '{key}' in section [{section}]")
            expected = schema[key]
            if expected is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
                raw[section][key] = value
            if not isinstance(value, expected) or isinstance(value, bool) and expected is not bool:
                raise ConfigError(
                    f"{source}: key '{key}' in [{section}] must be {expected.__name__}, "
                    f"got {type(value).__name__}"
                )
    return raw


def story_config_from(config: dict, **overrides) -> StoryConfig:
    """Merge a validated config's [features]/[story] sections with overrides."""
    feature_kwargs = dict(config.get("features", {}))
    story_kwargs = dict(config.get("story", {}))
    story_kwargs.update({k: v for k, v in overrides.items() if v is not None})
    feature_config = FeatureConfig(**feature_kwargs)
    return StoryConfig(feature_config=feature_config, **story_kwargs)
