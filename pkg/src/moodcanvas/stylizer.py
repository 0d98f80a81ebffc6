"""Attribute-aware style selection and sentiment banding.

A style palette maps user-supplied style images into the attribute space
(via whatever visual estimator is in play).  Per generated frame the
engine picks the entry nearest to the frame's attributes — optionally
gated so only entries in the frame's sentiment band are eligible.  The
pixel-level stylization itself always runs in a backend; here a style is
an id, an image reference and an attribute vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core_types import AttributeVector, ImageHandle, divergence
from .errors import DataError, FormatError
from .estimators import VisualAttributeEstimator, read_json_artifact

DEFAULT_NEGATIVE_BELOW = -0.5
DEFAULT_POSITIVE_ABOVE = 0.5
DEFAULT_BLEND = 0.1

SELECTION_MODES = ("nearest", "band_gated")

PALETTE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class BandThresholds:
    negative_below: float = DEFAULT_NEGATIVE_BELOW
    positive_above: float = DEFAULT_POSITIVE_ABOVE

    def __post_init__(self):
        if not self.negative_below < self.positive_above:
            raise DataError(
                f"negative_below ({self.negative_below}) must be less than "
                f"positive_above ({self.positive_above})"
            )


@dataclass(frozen=True)
class StyleEntry:
    style_id: int
    attribute: AttributeVector
    image_ref: str = ""

    def __post_init__(self):
        if self.style_id < 0:
            raise DataError(f"style_id must be non-negative, got {self.style_id}")
        if not isinstance(self.attribute, AttributeVector):
            object.__setattr__(self, "attribute", AttributeVector(self.attribute))


@dataclass(frozen=True)
class StylePalette:
    entries: tuple
    thresholds: BandThresholds = field(default_factory=BandThresholds)
    blend: float = DEFAULT_BLEND

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise DataError("a style palette needs at least one entry")
        ids = [e.style_id for e in entries]
        if len(set(ids)) != len(ids):
            raise DataError("style ids must be unique")
        if not 0.0 <= self.blend <= 1.0:
            raise DataError(f"blend must lie in [0, 1], got {self.blend}")
        object.__setattr__(self, "entries", entries)


def sentiment_band(attr, thresholds: BandThresholds | None = None) -> str:
    """Classify mean sentiment: strictly below/above the thresholds is
    negative/positive; everything else — including the boundaries — neutral."""
    if thresholds is None:
        thresholds = BandThresholds()
    values = attr.values if isinstance(attr, AttributeVector) else np.asarray(attr, float)
    mean = float(np.mean(values))
    if mean < thresholds.negative_below:
        return "negative"
    if mean > thresholds.positive_above:
        return "positive"
    return "neutral"


def build_style_palette(
    style_images,
    estimator: VisualAttributeEstimator,
    thresholds: BandThresholds | None = None,
    blend: float = DEFAULT_BLEND,
) -> StylePalette:
    """Estimate each style image's attributes and assemble a palette.

    ``style_images`` is a sequence of (style_id, ImageHandle[, image_ref])
    tuples or bare ImageHandles (ids then run 0, 1, ...).
    """
    if not style_images:
        raise DataError("need at least one style image")
    entries = []
    for idx, item in enumerate(style_images):
        ref = ""
        if isinstance(item, ImageHandle):
            style_id, image = idx, item
        elif len(item) == 2:
            style_id, image = item
        else:
            style_id, image, ref = item
        attr = estimator.estimate(image)
        entries.append(StyleEntry(style_id=int(style_id), attribute=attr, image_ref=str(ref)))
    return StylePalette(
        entries=tuple(entries),
        thresholds=thresholds or BandThresholds(),
        blend=blend,
    )


def select_style(palette: StylePalette, attr, mode: str = "nearest") -> int:
    """Pick the palette entry for the given attributes; returns its style_id.

    ``nearest``: entry with minimum attribute divergence (ties -> lowest id).
    ``band_gated``: restrict to entries whose own sentiment band matches the
    query's band first (all entries when none match), then nearest.
    """
    if mode not in SELECTION_MODES:
        raise DataError(f"selection mode must be one of {SELECTION_MODES}, got '{mode}'")
    if not isinstance(attr, AttributeVector):
        attr = AttributeVector(attr)
    candidates = palette.entries
    if mode == "band_gated":
        band = sentiment_band(attr, palette.thresholds)
        gated = tuple(
            e for e in candidates if sentiment_band(e.attribute, palette.thresholds) == band
        )
        if gated:
            candidates = gated
    best_id = None
    best_div = None
    for entry in sorted(candidates, key=lambda e: e.style_id):
        d = divergence(attr, entry.attribute)
        if best_div is None or d < best_div:
            best_id, best_div = entry.style_id, d
    return best_id


# ---------------------------------------------------------------------------
# Persistence


def save_palette(palette: StylePalette, path) -> None:
    doc = {
        "version": PALETTE_FORMAT_VERSION,
        "kind": "style_palette",
        "styles": [
            {
                "id": e.style_id,
                "path": e.image_ref,
                "attributes": [float(np.float32(v)) for v in e.attribute.values],
            }
            for e in palette.entries
        ],
        "thresholds": {
            "negative_below": palette.thresholds.negative_below,
            "positive_above": palette.thresholds.positive_above,
        },
        "blend": palette.blend,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def load_palette(path) -> StylePalette:
    doc = read_json_artifact(path, "style_palette", PALETTE_FORMAT_VERSION)
    try:
        entries = tuple(
            StyleEntry(
                style_id=int(s["id"]),
                attribute=AttributeVector(np.asarray(s["attributes"], dtype=np.float64)),
                image_ref=str(s.get("path", "")),
            )
            for s in doc["styles"]
        )
        thresholds = BandThresholds(
            negative_below=float(doc["thresholds"]["negative_below"]),
            positive_above=float(doc["thresholds"]["positive_above"]),
        )
        return StylePalette(entries=entries, thresholds=thresholds, blend=float(doc["blend"]))
    except KeyError as exc:
        raise FormatError(f"palette file {path} is missing field {exc}") from exc
