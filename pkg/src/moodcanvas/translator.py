"""The attribute-to-generator translation model.

A shared trunk (attribute dim -> 64 -> 256, sigmoid) branches into a
softmax class head (over the backend's classes) and a linear latent head.
Training minimizes, over an attribute view's smoothed pairs,

    mean cross-entropy(class head, category)
    + latent_loss_weight * mean ||latent head - latent target||^2

with Adam; the default is full-batch (``batch_size=None``), and a small
``batch_size`` (e.g. 4) trades determinism-friendly simplicity for many
more gradient steps per epoch, which measurably tightens the latent fit.
Inference restricts the class argmax to the view's retained categories
and optionally adds Gaussian noise to the latent output.
"""

from __future__ import annotations

import json

from dataclasses import dataclass

import numpy as np

from .core_types import AttributeVector, GeneratorVector, divergence
from .errors import (
    DataError,
    DimensionError,
    DomainError,
    FormatError,
    TrainingDivergedError,
)
from .estimators import (
    AdamState,
    MLPRegressor,
    _encode_f32,
    _layers_from_json,
    _layers_to_json,
    read_json_artifact,
)
from .attribute_view import AttributeView
from .generator_backend import GeneratorBackend
from .estimators import VisualAttributeEstimator

TRUNK_HIDDEN = (64, 256)

TRANSLATOR_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TranslatorConfig:
    epochs: int = 200
    learning_rate: float = 0.001
    latent_loss_weight: float = 1.0
    noise_sigma: float = 0.1
    batch_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs <= 0:
            raise DataError(f"epochs must be positive, got {self.epochs}")
        if self.learning_rate <= 0:
            raise DataError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.latent_loss_weight < 0:
            raise DataError("latent_loss_weight must be >= 0")
        if self.noise_sigma < 0:
            raise DataError("noise_sigma must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise DataError("batch_size must be >= 1 (or None for full batch)")


class TranslationModel:
    """Two-headed MLP mapping attribute vectors to generator controls.

    The trunk and both heads share one flat parameter buffer (trunk layers
    first, then class head, then latent head) so the optimizer and the
    finite-difference gradient check treat the model uniformly.
    """

    def __init__(
        self,
        n_attributes: int,
        num_classes: int,
        latent_dim: int,
        retained_categories,
        params: np.ndarray | None = None,
        latent_loss_weight: float = 1.0,
        noise_sigma: float = 0.1,
        trunk_hidden=TRUNK_HIDDEN,
    ):
        if n_attributes < 1 or num_classes < 1 or latent_dim < 1:
            raise DataError("n_attributes, num_classes and latent_dim must be >= 1")
        self.n_attributes = int(n_attributes)
        self.num_classes = int(num_classes)
        self.latent_dim = int(latent_dim)
        self.latent_loss_weight = float(latent_loss_weight)
        self.noise_sigma = float(noise_sigma)
        self.trunk_hidden = tuple(int(h) for h in trunk_hidden)

        retained = sorted(set(int(c) for c in retained_categories))
        if not retained:
            raise DataError("translator needs at least one retained category")
        if retained[0] < 0 or retained[-1] >= num_classes:
            raise DomainError(
                f"retained categories must lie in [0, {num_classes}), got "
                f"{retained[0]}..{retained[-1]}"
            )
        self.retained_categories = tuple(retained)
        mask = np.full(num_classes, -np.inf)
        mask[list(retained)] = 0.0
        mask.flags.writeable = False
        self._class_mask = mask

        trunk_sizes = (self.n_attributes, *self.trunk_hidden)
        trunk_params = sum(
            fi * fo + fo for fi, fo in zip(trunk_sizes[:-1], trunk_sizes[1:])
        )
        width = self.trunk_hidden[-1]
        head_params = (width * num_classes + num_classes) + (width * latent_dim + latent_dim)
        n = trunk_params + head_params
        if params is None:
            self.parameters = np.zeros(n)
        else:
            params = np.asarray(params, dtype=np.float64)
            if params.shape != (n,):
                raise DimensionError(f"expected {n} parameters, got shape {params.shape}")
            self.parameters = params.copy()

        # the trunk is an MLPRegressor whose views get re-pointed into the
        # shared flat buffer
        self._trunk = MLPRegressor(trunk_sizes, ("sigmoid",) * len(self.trunk_hidden))
        self._rebind(trunk_params)

    def _rebind(self, trunk_params: int) -> None:
        """Point trunk/head views into the shared flat buffer."""
        width = self.trunk_hidden[-1]
        trunk_sizes = (self.n_attributes, *self.trunk_hidden)
        offset = 0
        views = []
        for fi, fo in zip(trunk_sizes[:-1], trunk_sizes[1:]):
            w = self.parameters[offset : offset + fi * fo].reshape(fi, fo)
            offset += fi * fo
            b = self.parameters[offset : offset + fo]
            offset += fo
            views.append((w, b))
        self._trunk._views = views
        self._trunk.parameters = self.parameters[:trunk_params]
        k, d = self.num_classes, self.latent_dim
        self._class_w = self.parameters[offset : offset + width * k].reshape(width, k)
        offset += width * k
        self._class_b = self.parameters[offset : offset + k]
        offset += k
        self._latent_w = self.parameters[offset : offset + width * d].reshape(width, d)
        offset += width * d
        self._latent_b = self.parameters[offset : offset + d]

    @classmethod
    def initialize(
        cls,
        n_attributes: int,
        num_classes: int,
        latent_dim: int,
        retained_categories,
        rng: np.random.Generator,
        latent_loss_weight: float = 1.0,
        noise_sigma: float = 0.1,
    ) -> "TranslationModel":
        """Seeded Glorot init, drawing trunk layers then heads in order."""
        from .estimators import glorot_uniform

        model = cls(
            n_attributes, num_classes, latent_dim, retained_categories,
            latent_loss_weight=latent_loss_weight, noise_sigma=noise_sigma,
        )
        for w, _b in model._trunk._views:
            w[...] = glorot_uniform(rng, w.shape[0], w.shape[1])
        model._class_w[...] = glorot_uniform(rng, *model._class_w.shape)
        model._latent_w[...] = glorot_uniform(rng, *model._latent_w.shape)
        return model

    # -- forward / loss

    def forward(self, x: np.ndarray):
        """Return (trunk activations, class probabilities, latent outputs)."""
        from .estimators import activate

        trunk_acts = self._trunk.forward(x)
        h = trunk_acts[-1]
        probs = activate("softmax", h @ self._class_w + self._class_b)
        latent = h @ self._latent_w + self._latent_b
        return trunk_acts, probs, latent

    def class_probabilities(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[1]

    def latent_output(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[2]

    def _composite_parts(self, probs, latent, class_targets, latent_targets):
        n = probs.shape[0]
        picked = np.clip(probs[np.arange(n), class_targets], 1e-300, None)
        ce = float(-np.mean(np.log(picked)))
        sq = float(np.mean(np.sum((latent - latent_targets) ** 2, axis=1)))
        return ce, sq

    def loss(self, x, targets) -> float:
        class_targets, latent_targets = _coerce_targets(targets)
        _, probs, latent = self.forward(x)
        ce, sq = self._composite_parts(probs, latent, class_targets, latent_targets)
        return ce + self.latent_loss_weight * sq

    def loss_and_gradient(self, x, targets):
        """Composite loss and its flat-parameter gradient."""
        from .estimators import activation_vjp

        class_targets, latent_targets = _coerce_targets(targets)
        trunk_acts, probs, latent = self.forward(x)
        n = probs.shape[0]
        ce, sq = self._composite_parts(probs, latent, class_targets, latent_targets)
        loss = ce + self.latent_loss_weight * sq

        one_hot = np.zeros_like(probs)
        one_hot[np.arange(n), class_targets] = 1.0
        d_logits = (probs - one_hot) / n
        d_latent = self.latent_loss_weight * 2.0 * (latent - latent_targets) / n

        h = trunk_acts[-1]
        g_class_w = h.T @ d_logits
        g_class_b = d_logits.sum(axis=0)
        g_latent_w = h.T @ d_latent
        g_latent_b = d_latent.sum(axis=0)
        d_h = d_logits @ self._class_w.T + d_latent @ self._latent_w.T
        trunk_grads = self._trunk.backward(trunk_acts, d_h)

        grads = np.concatenate([
            trunk_grads,
            g_class_w.ravel(), g_class_b,
            g_latent_w.ravel(), g_latent_b,
        ])
        return loss, grads


def _coerce_targets(targets):
    class_targets, latent_targets = targets
    class_targets = np.asarray(class_targets, dtype=np.int64)
    latent_targets = np.asarray(latent_targets, dtype=np.float64)
    if class_targets.ndim != 1 or latent_targets.ndim != 2:
        raise DimensionError("targets must be (class ids vector, latent matrix)")
    if class_targets.size != latent_targets.shape[0]:
        raise DimensionError("class and latent target counts differ")
    return class_targets, latent_targets


# ---------------------------------------------------------------------------
# Training


def train_translator(view: AttributeView, cfg: TranslatorConfig, num_classes: int, latent_dim: int):
    """Fit a translation model to a view's smoothed pairs.

    Returns (model, per-epoch loss trace).  One seeded generator drives
    initialization and every epoch's shuffle, so training is bit-
    deterministic for a fixed seed.
    """
    x = view.attribute_targets
    latent_targets = view.latent_targets
    class_targets = view.class_targets
    if x.shape[0] < 1:
        raise DataError("attribute view has no smoothed pairs")
    if class_targets.max() >= num_classes:
        raise DomainError(
            f"view retains class {int(class_targets.max())} but backend has "
            f"{num_classes} classes"
        )
    if latent_targets.shape[1] != latent_dim:
        raise DimensionError(
            f"view latent dim {latent_targets.shape[1]} does not match backend "
            f"latent dim {latent_dim}"
        )

    rng = np.random.default_rng(cfg.seed)
    model = TranslationModel.initialize(
        x.shape[1], num_classes, latent_dim, view.retained_categories, rng,
        latent_loss_weight=cfg.latent_loss_weight, noise_sigma=cfg.noise_sigma,
    )
    adam = AdamState(model.parameters.size)
    n = x.shape[0]
    batch = n if cfg.batch_size is None else min(cfg.batch_size, n)
    trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            sel = order[start : start + batch]
            loss, grads = model.loss_and_gradient(
                x[sel], (class_targets[sel], latent_targets[sel])
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}", epoch=epoch)
            adam.step(model.parameters, grads, cfg.learning_rate)
            epoch_loss += loss * sel.size
        trace.append(epoch_loss / n)
    return model, np.asarray(trace)


# ---------------------------------------------------------------------------
# Inference


def translate(
    model: TranslationModel,
    attr: AttributeVector,
    rng: np.random.Generator | None = None,
    noise_sigma: float | None = None,
) -> GeneratorVector:
    """Map attributes to a generator control point.

    The class is the argmax of the class head restricted to the retained
    categories (ties resolve to the lowest class id).  Gaussian noise of
    the configured sigma is added to the latent output; pass 0 to disable.
    """
    sigma = model.noise_sigma if noise_sigma is None else float(noise_sigma)
    if sigma < 0:
        raise DataError("noise_sigma must be >= 0")
    if sigma > 0 and rng is None:
        raise DataError("an rng is required when noise_sigma > 0")
    x = attr.values if isinstance(attr, AttributeVector) else np.asarray(attr, dtype=np.float64)
    if x.size != model.n_attributes:
        raise DimensionError(
            f"attribute length {x.size} does not match model input dim {model.n_attributes}"
        )
    trunk_acts, probs, latent = model.forward(x[None, :])
    masked = np.log(np.clip(probs[0], 1e-300, None)) + model._class_mask
    class_id = int(np.argmax(masked))
    z = latent[0]
    if sigma > 0:
        z = z + sigma * rng.standard_normal(model.latent_dim)
    return GeneratorVector(class_id=class_id, latent=z)


def roundtrip_divergence(
    model: TranslationModel,
    backend: GeneratorBackend,
    estimator: VisualAttributeEstimator,
    attrs,
):
    """Mean and max of D(attr, estimate(generate(translate(attr)))), noise-free."""
    divergences = []
    for attr in attrs:
        if not isinstance(attr, AttributeVector):
            attr = AttributeVector(attr)
        gv = translate(model, attr, noise_sigma=0.0)
        image = backend.generate(gv)
        estimated = estimator.estimate(image)
        divergences.append(divergence(attr, estimated))
    divergences = np.asarray(divergences)
    return float(divergences.mean()), float(divergences.max())


def intrinsic_divergence(view: AttributeView, pairs):
    """Brute-force floor: for each view attribute target, the divergence to
    the nearest raw pair of a retained class; returns (mean, per-target).

    This is the best a class-masked nearest-neighbour oracle over the
    sampled corpus could achieve, the calibration bound for round-trips.
    """
    from .generator_backend import pairs_to_arrays

    class_ids, _latents, attrs = pairs_to_arrays(pairs)
    keep = np.isin(class_ids, view.retained_categories)
    if not keep.any():
        raise DataError("no corpus pairs belong to the view's retained categories")
    candidates = attrs[keep]
    targets = view.attribute_targets
    d2 = (
        np.sum(targets ** 2, axis=1, keepdims=True)
        + np.sum(candidates ** 2, axis=1)
        - 2.0 * targets @ candidates.T
    )
    best = np.sqrt(np.maximum(d2, 0.0).min(axis=1))
    return float(best.mean()), best


# ---------------------------------------------------------------------------
# Persistence


def save_translator(model: TranslationModel, path, training_meta: dict | None = None) -> None:
    doc = {
        "version": TRANSLATOR_FORMAT_VERSION,
        "kind": "translation_model",
        "arch": {
            "n_attributes": model.n_attributes,
            "trunk_hidden": list(model.trunk_hidden),
            "num_classes": model.num_classes,
            "latent_dim": model.latent_dim,
        },
        "trunk": _layers_to_json(model._trunk),
        "heads": {
            "class": {
                "weights": _encode_f32(model._class_w),
                "bias": _encode_f32(model._class_b),
            },
            "latent": {
                "weights": _encode_f32(model._latent_w),
                "bias": _encode_f32(model._latent_b),
            },
        },
        "retained_categories": list(model.retained_categories),
        "latent_loss_weight": model.latent_loss_weight,
        "noise_sigma": model.noise_sigma,
        "training_meta": training_meta or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def load_translator(path) -> TranslationModel:
    doc = read_json_artifact(path, "translation_model", TRANSLATOR_FORMAT_VERSION)
    from .estimators import _decode_f32

    try:
        arch = doc["arch"]
        n_attr = int(arch["n_attributes"])
        trunk_hidden = tuple(int(h) for h in arch["trunk_hidden"])
        num_classes = int(arch["num_classes"])
        latent_dim = int(arch["latent_dim"])
        trunk_sizes = (n_attr, *trunk_hidden)
        trunk_flat = _layers_from_json(trunk_sizes, doc["trunk"])
        width = trunk_hidden[-1]
        heads = doc["heads"]
        parts = [
            trunk_flat,
            _decode_f32(heads["class"]["weights"], (width, num_classes)).ravel(),
            _decode_f32(heads["class"]["bias"], (num_classes,)),
            _decode_f32(heads["latent"]["weights"], (width, latent_dim)).ravel(),
            _decode_f32(heads["latent"]["bias"], (latent_dim,)),
        ]
        return TranslationModel(
            n_attr,
            num_classes,
            latent_dim,
            doc["retained_categories"],
            params=np.concatenate(parts),
            latent_loss_weight=float(doc.get("latent_loss_weight", 1.0)),
            noise_sigma=float(doc.get("noise_sigma", 0.1)),
            trunk_hidden=trunk_hidden,
        )
    except KeyError as exc:
        raise FormatError(f"translator file {path} is missing field {exc}") from exc
