"""Trainable MLP attribute regressors, z-score alignment and gradient checks.

The MLP core here (flat parameter buffer, explicit backprop, Adam) is also
reused by the attribute-to-generator translation model.  Training is
single-threaded and bit-deterministic for a fixed seed; trained models are
immutable in practice (nothing mutates them after training) and prediction
is thread-safe.
"""

from __future__ import annotations

import base64
import csv
import json
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_features import FeatureSequence, load_feature_matrix
from .core_types import AttributeVector, ImageHandle
from .errors import (
    DataError,
    DimensionError,
    FileIOError,
    FormatError,
    InsufficientDataError,
    ParseError,
    TrainingDivergedError,
    VersionedFormatError,
)

ACTIVATIONS = ("sigmoid", "identity", "softmax")

ZSCORE_STD_FLOOR = 1e-8

MODEL_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# Layer primitives


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))
    if name == "identity":
        return z
    if name == "softmax":
        shifted = z - z.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)
    raise DataError(f"unknown activation '{name}' (expected one of {ACTIVATIONS})")


def activation_vjp(name: str, a: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Gradient through an activation given its output ``a`` and the upstream grad."""
    if name == "sigmoid":
        return upstream * a * (1.0 - a)
    if name == "identity":
        return upstream
    if name == "softmax":
        return a * (upstream - (upstream * a).sum(axis=1, keepdims=True))
    raise DataError(f"unknown activation '{name}' (expected one of {ACTIVATIONS})")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, (fan_in, fan_out))


class AdamState:
    """Adam optimizer state over a flat parameter vector."""

    def __init__(self, n_params: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)

    def step(self, params: np.ndarray, grads: np.ndarray, lr: float) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads * grads
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        params -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# Sequential MLP


class MLPRegressor:
    """A sequential MLP over a flat float64 parameter buffer.

    ``sizes`` lists every layer width including input and output;
    ``activations`` has one entry per weight layer.  The flat buffer makes
    the optimizer and finite-difference checks uniform across models.
    """

    def __init__(self, sizes, activations, params: np.ndarray | None = None):
        sizes = tuple(int(s) for s in sizes)
        activations = tuple(str(a) for a in activations)
        if len(sizes) < 2:
            raise DataError("an MLP needs at least an input and an output layer")
        if any(s < 1 for s in sizes):
            raise DataError(f"layer sizes must be positive, got {sizes}")
        if len(activations) != len(sizes) - 1:
            raise DataError(
                f"need {len(sizes) - 1} activations for {len(sizes)} layer sizes, "
                f"got {len(activations)}"
            )
        for a in activations:
            if a not in ACTIVATIONS:
                raise DataError(f"unknown activation '{a}' (expected one of {ACTIVATIONS})")
        self.sizes = sizes
        self.activations = activations
        n = sum(fi * fo + fo for fi, fo in zip(sizes[:-1], sizes[1:]))
        if params is None:
            self.parameters = np.zeros(n)
        else:
            params = np.asarray(params, dtype=np.float64)
            if params.shape != (n,):
                raise DimensionError(f"expected {n} parameters, got shape {params.shape}")
            self.parameters = params.copy()
        self._views = []
        offset = 0
        for fi, fo in zip(sizes[:-1], sizes[1:]):
            w = self.parameters[offset : offset + fi * fo].reshape(fi, fo)
            offset += fi * fo
            b = self.parameters[offset : offset + fo]
            offset += fo
            self._views.append((w, b))

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def output_dim(self) -> int:
        return self.sizes[-1]

    @property
    def layers(self):
        """List of (weights, bias, activation) triples (views into the buffer)."""
        return [(w, b, act) for (w, b), act in zip(self._views, self.activations)]

    @classmethod
    def initialize(cls, sizes, activations, rng: np.random.Generator) -> "MLPRegressor":
        """Seeded init: uniform Glorot weights, zero biases, layer by layer."""
        model = cls(sizes, activations)
        for w, _b in model._views:
            w[...] = glorot_uniform(rng, w.shape[0], w.shape[1])
        return model

    def forward(self, x: np.ndarray) -> list:
        """Return the activation of every layer, input first."""
        a = np.asarray(x, dtype=np.float64)
        if a.ndim == 1:
            a = a[None, :]
        if a.shape[1] != self.input_dim:
            raise DimensionError(
                f"input width {a.shape[1]} does not match model input dim {self.input_dim}"
            )
        acts = [a]
        for (w, b), name in zip(self._views, self.activations):
            a = activate(name, a @ w + b)
            acts.append(a)
        return acts

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[-1]

    def backward(self, acts: list, upstream: np.ndarray) -> np.ndarray:
        """Backpropagate d(loss)/d(final activation); returns the flat gradient."""
        grads = np.zeros_like(self.parameters)
        offset = 0
        g_views = []
        for fi, fo in zip(self.sizes[:-1], self.sizes[1:]):
            g_views.append(
                (grads[offset : offset + fi * fo].reshape(fi, fo),
                 grads[offset + fi * fo : offset + fi * fo + fo])
            )
            offset += fi * fo + fo
        da = upstream
        for idx in range(len(self._views) - 1, -1, -1):
            w, _b = self._views[idx]
            dz = activation_vjp(self.activations[idx], acts[idx + 1], da)
            g_views[idx][0][...] = acts[idx].T @ dz
            g_views[idx][1][...] = dz.sum(axis=0)
            da = dz @ w.T
        return grads

    # -- mean-squared-error training interface

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        pred = self.predict(x)
        y = np.asarray(y, dtype=np.float64).reshape(pred.shape)
        return float(np.mean((pred - y) ** 2))

    def loss_and_gradient(self, x: np.ndarray, y: np.ndarray):
        acts = self.forward(x)
        pred = acts[-1]
        y = np.asarray(y, dtype=np.float64).reshape(pred.shape)
        diff = pred - y
        loss = float(np.mean(diff ** 2))
        grads = self.backward(acts, 2.0 * diff / diff.size)
        return loss, grads


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class TrainingConfig:
    """Adam training schedule: one or more (epochs, learning-rate) phases."""

    phases: tuple = ((30, 1e-4), (20, 1e-5))
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        phases = tuple((int(e), float(lr)) for e, lr in self.phases)
        if not phases:
            raise DataError("training schedule needs at least one phase")
        for e, lr in phases:
            if e <= 0:
                raise DataError(f"phase epochs must be positive, got {e}")
            if lr <= 0:
                raise DataError(f"learning rate must be positive, got {lr}")
        object.__setattr__(self, "phases", phases)
        if self.batch_size < 1:
            raise DataError(f"batch_size must be >= 1, got {self.batch_size}")

    @property
    def total_epochs(self) -> int:
        return sum(e for e, _ in self.phases)


def train_mlp_regressor(features, targets, layer_sizes, activations, cfg: TrainingConfig):
    """Fit an MLP to minimize mean squared error with Adam.

    Returns (model, per-epoch loss trace).  Deterministic for a fixed seed:
    one generator drives initialization and every epoch's shuffle.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise DimensionError("features and targets must be 2-D matrices")
    if x.shape[0] != y.shape[0]:
        raise DimensionError(
            f"features and targets row counts differ: {x.shape[0]} vs {y.shape[0]}"
        )
    if x.shape[0] < cfg.batch_size:
        raise InsufficientDataError(
            f"need at least batch_size={cfg.batch_size} rows, got {x.shape[0]}"
        )
    sizes = tuple(layer_sizes)
    if sizes[0] != x.shape[1] or sizes[-1] != y.shape[1]:
        raise DimensionError(
            f"architecture {sizes} does not match data widths {x.shape[1]} -> {y.shape[1]}"
        )

    rng = np.random.default_rng(cfg.seed)
    model = MLPRegressor.initialize(sizes, activations, rng)
    adam = AdamState(model.parameters.size, cfg.beta1, cfg.beta2, cfg.eps)
    n = x.shape[0]
    trace = []
    epoch_index = 0
    for epochs, lr in cfg.phases:
        for _ in range(epochs):
            order = rng.permutation(n)
            epoch_loss = 0.0
            for start in range(0, n, cfg.batch_size):
                sel = order[start : start + cfg.batch_size]
                loss, grads = model.loss_and_gradient(x[sel], y[sel])
                if not np.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch_index}", epoch=epoch_index
                    )
                adam.step(model.parameters, grads, lr)
                epoch_loss += loss * sel.size
            trace.append(epoch_loss / n)
            epoch_index += 1
    return model, np.asarray(trace)


def predict_attributes(model: MLPRegressor, features) -> list:
    """Forward the model over per-window features; one AttributeVector per window."""
    if isinstance(features, FeatureSequence):
        mat = features.windows
    else:
        mat = np.asarray(features, dtype=np.float64)
        if mat.ndim == 1:
            mat = mat[None, :]
    if mat.shape[1] != model.input_dim:
        raise DimensionError(
            f"feature width {mat.shape[1]} does not match model input dim {model.input_dim}"
        )
    out = model.predict(mat)
    return [AttributeVector(row) for row in out]


# ---------------------------------------------------------------------------
# Attribute-space alignment


ZSCORE_SCOPES = ("dataset_level", "song_level")


@dataclass(frozen=True)
class ZScoreStats:
    """Per-dimension mean and (floored) population standard deviation."""

    mean: np.ndarray
    std: np.ndarray
    scope: str

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).copy()
        std = np.asarray(self.std, dtype=np.float64).copy()
        if mean.shape != std.shape or mean.ndim != 1:
            raise DimensionError("mean and std must be 1-D vectors of equal length")
        if np.any(std <= 0):
            raise DataError("std entries must be positive (floor the estimate first)")
        if self.scope not in ZSCORE_SCOPES:
            raise DataError(f"scope must be one of {ZSCORE_SCOPES}, got '{self.scope}'")
        mean.flags.writeable = False
        std.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)


def _attribute_matrix(vectors) -> np.ndarray:
    if isinstance(vectors, np.ndarray):
        mat = np.asarray(vectors, dtype=np.float64)
        if mat.ndim == 1:
            mat = mat[None, :]
        return mat
    rows = [v.values if isinstance(v, AttributeVector) else np.asarray(v, float) for v in vectors]
    if not rows:
        return np.zeros((0, 0))
    return np.stack(rows)


def compute_zscore_stats(vectors, scope: str) -> ZScoreStats:
    """Population mean/std per dimension; std floored at 1e-8."""
    mat = _attribute_matrix(vectors)
    if mat.shape[0] < 2:
        raise InsufficientDataError(
            f"need at least 2 vectors to compute z-score stats, got {mat.shape[0]}"
        )
    mean = mat.mean(axis=0)
    std = np.maximum(mat.std(axis=0), ZSCORE_STD_FLOOR)
    return ZScoreStats(mean=mean, std=std, scope=scope)


def zscore_align(vectors, stats: ZScoreStats):
    """(v - mean) / std per dimension. Preserves list-of-AttributeVector shape."""
    mat = _attribute_matrix(vectors)
    if mat.shape[1] != stats.mean.size:
        raise DimensionError(
            f"vector width {mat.shape[1]} does not match stats width {stats.mean.size}"
        )
    aligned = (mat - stats.mean) / stats.std
    if isinstance(vectors, np.ndarray):
        return aligned
    return [AttributeVector(row) for row in aligned]


def zscore_restore(vectors, stats: ZScoreStats):
    """Inverse of :func:`zscore_align`."""
    mat = _attribute_matrix(vectors)
    if mat.shape[1] != stats.mean.size:
        raise DimensionError(
            f"vector width {mat.shape[1]} does not match stats width {stats.mean.size}"
        )
    restored = mat * stats.std + stats.mean
    if isinstance(vectors, np.ndarray):
        return restored
    return [AttributeVector(row) for row in restored]


# ---------------------------------------------------------------------------
# Gradient verification


def gradient_check(model, sample, h: float = 1e-5) -> float:
    """Max relative error between backprop and central finite differences.

    ``model`` must expose a flat ``parameters`` buffer plus ``loss`` and
    ``loss_and_gradient``; ``sample`` is the (inputs, targets) pair to
    evaluate at.  The relative error for each parameter is
    |g_a - g_fd| / max(1, |g_a| + |g_fd|).
    """
    x, y = sample
    _, analytic = model.loss_and_gradient(x, y)
    params = model.parameters
    fd = np.empty_like(analytic)
    for i in range(params.size):
        original = params[i]
        params[i] = original + h
        loss_plus = model.loss(x, y)
        params[i] = original - h
        loss_minus = model.loss(x, y)
        params[i] = original
        fd[i] = (loss_plus - loss_minus) / (2.0 * h)
    denom = np.maximum(1.0, np.abs(analytic) + np.abs(fd))
    return float(np.max(np.abs(analytic - fd) / denom))


# ---------------------------------------------------------------------------
# Visual estimator interface


class VisualAttributeEstimator(ABC):
    """Maps an image to the shared attribute space (same N_a as audio)."""

    implementation: str = "synthetic"  # or "external_backend"

    @property
    @abstractmethod
    def n_attributes(self) -> int: ...

    @abstractmethod
    def estimate(self, image: ImageHandle) -> AttributeVector: ...


# ---------------------------------------------------------------------------
# Persistence (JSON; weights as base64 little-endian float32, row-major)


def _encode_f32(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def _decode_f32(text: str, shape) -> np.ndarray:
    raw = base64.b64decode(text.encode("ascii"))
    arr = np.frombuffer(raw, dtype="<f4")
    expected = int(np.prod(shape))
    if arr.size != expected:
        raise FormatError(f"weight blob has {arr.size} values, expected {expected}")
    return arr.reshape(shape).astype(np.float64)


def _layers_to_json(model: MLPRegressor) -> list:
    return [
        {"weights": _encode_f32(w), "bias": _encode_f32(b)}
        for (w, b, _act) in model.layers
    ]


def _layers_from_json(sizes, entries) -> np.ndarray:
    if len(entries) != len(sizes) - 1:
        raise FormatError(
            f"model file has {len(entries)} weight layers, architecture needs {len(sizes) - 1}"
        )
    parts = []
    for (fi, fo), entry in zip(zip(sizes[:-1], sizes[1:]), entries):
        parts.append(_decode_f32(entry["weights"], (fi, fo)).ravel())
        parts.append(_decode_f32(entry["bias"], (fo,)))
    return np.concatenate(parts)


def save_mlp_regressor(model: MLPRegressor, path, training_meta: dict | None = None) -> None:
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "kind": "mlp_regressor",
        "arch": {"sizes": list(model.sizes), "activations": list(model.activations)},
        "weights": _layers_to_json(model),
        "training_meta": training_meta or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def read_json_artifact(
    path, expected_kind: str | None, expected_version: int = MODEL_FORMAT_VERSION
) -> dict:
    """Load + validate a JSON artifact envelope (version and kind checks).

    ``expected_kind=None`` accepts any kind (used by artifact sniffing).
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError as exc:
        raise FileIOError(f"artifact file not found: {path}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in {path}: {exc.msg}", byte_offset=exc.pos) from exc
    if not isinstance(doc, dict):
        raise FormatError(f"artifact {path} is not a JSON object")
    version = doc.get("version")
    if version != expected_version:
        raise VersionedFormatError(
            f"artifact {path} has format version {version!r}, expected {expected_version}",
            found=version,
            expected=expected_version,
        )
    kind = doc.get("kind")
    if expected_kind is not None and kind != expected_kind:
        raise FormatError(f"artifact {path} is a '{kind}', expected '{expected_kind}'")
    return doc


def load_mlp_regressor(path) -> MLPRegressor:
    doc = read_json_artifact(path, "mlp_regressor")
    sizes = tuple(int(s) for s in doc["arch"]["sizes"])
    activations = tuple(doc["arch"]["activations"])
    params = _layers_from_json(sizes, doc["weights"])
    return MLPRegressor(sizes, activations, params)


# ---------------------------------------------------------------------------
# Annotation ingestion (id,valence,arousal CSV + a directory of feature files)


ANNOTATION_HEADER = ["id", "valence", "arousal"]


def load_annotations(csv_path) -> list:
    """Read per-song (id, valence, arousal) rows from a CSV file."""
    try:
        fh = open(csv_path, "r", encoding="utf-8", newline="")
    except FileNotFoundError as exc:
        raise FileIOError(f"annotation file not found: {csv_path}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"annotation file is empty: {csv_path}") from None
        if [h.strip() for h in header] != ANNOTATION_HEADER:
            raise FormatError(
                f"annotation header must be {','.join(ANNOTATION_HEADER)}, got {','.join(header)}"
            )
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"annotation line {line_no} has {len(row)} fields, expected 3")
            try:
                rows.append((row[0].strip(), float(row[1]), float(row[2])))
            except ValueError as exc:
                raise FormatError(f"annotation line {line_no}: {exc}") from exc
    if not rows:
        raise InsufficientDataError(f"annotation file has no data rows: {csv_path}")
    return rows


def load_training_set(csv_path, features_dir, suffix: str = ".dsft"):
    """Assemble (features, targets, song_ids) from annotations + feature files.

    Every window of a song inherits that song's (valence, arousal) target.
    """
    annotations = load_annotations(csv_path)
    features_dir = Path(features_dir)
    xs, ys, ids = [], [], []
    for song_id, valence, arousal in annotations:
        feature_path = features_dir / f"{song_id}{suffix}"
        if not feature_path.exists():
            raise FileIOError(f"feature file for song '{song_id}' not found: {feature_path}")
        mat = load_feature_matrix(feature_path)
        xs.append(mat)
        ys.append(np.tile([valence, arousal], (mat.shape[0], 1)))
        ids.extend([song_id] * mat.shape[0])
    return np.concatenate(xs), np.concatenate(ys), ids
