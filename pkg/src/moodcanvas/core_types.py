"""Shared value types and the divergence metric.

Attribute vectors live in an aligned affect space (reference layout:
valence, arousal — dimension 2, but the dimension is data-driven, not a
compile-time constant).  Generator vectors are (class id, latent) controls
for a class-conditional generator.  All types are immutable after
construction, compare element-wise and validate their invariants on
construction.  Arrays are stored as float64; file interchange elsewhere in
the package rounds to float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DataError


def _frozen_array(values, name: str, dtype=np.float64) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite entries")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class AttributeVector:
    """A point in the aligned attribute space (e.g. valence/arousal)."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values, "attribute vector"))
        if self.values.size < 1:
            raise DimensionError("attribute vector must have at least one entry")

    def __len__(self) -> int:
        return int(self.values.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, AttributeVector):
            return NotImplemented
        return bool(np.array_equal(self.values, other.values))

    def __repr__(self) -> str:
        return f"AttributeVector({np.array2string(self.values, precision=4)})"


@dataclass(frozen=True, eq=False)
class GeneratorVector:
    """A (class id, latent vector) control point for a conditional generator."""

    class_id: int
    latent: np.ndarray

    def __post_init__(self):
        if not isinstance(self.class_id, (int, np.integer)) or isinstance(self.class_id, bool):
            raise DataError(f"class_id must be an integer, got {type(self.class_id).__name__}")
        if self.class_id < 0:
            raise DataError(f"class_id must be non-negative, got {self.class_id}")
        object.__setattr__(self, "class_id", int(self.class_id))
        object.__setattr__(self, "latent", _frozen_array(self.latent, "latent vector"))
        if self.latent.size < 1:
            raise DimensionError("latent vector must have at least one entry")

    def __eq__(self, other) -> bool:
        if not isinstance(other, GeneratorVector):
            return NotImplemented
        return self.class_id == other.class_id and bool(np.array_equal(self.latent, other.latent))

    def __repr__(self) -> str:
        return f"GeneratorVector(class_id={self.class_id}, latent[{self.latent.size}])"


@dataclass(frozen=True, eq=False)
class SamplePair:
    """A generator-space point together with its estimated attributes."""

    generator: GeneratorVector
    attributes: AttributeVector

    def __post_init__(self):
        if not isinstance(self.generator, GeneratorVector):
            raise DataError("generator must be a GeneratorVector")
        if not isinstance(self.attributes, AttributeVector):
            raise DataError("attributes must be an AttributeVector")

    def __eq__(self, other) -> bool:
        if not isinstance(other, SamplePair):
            return NotImplemented
        return self.generator == other.generator and self.attributes == other.attributes


@dataclass(frozen=True, eq=False)
class AudioSegment:
    """Mono audio. ``samples`` are float64 in [-1, 1] at ``sample_rate`` Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen_array(self.samples, "audio samples"))
        if self.samples.size < 1:
            raise DataError("audio segment must contain at least one sample")
        if self.sample_rate <= 0:
            raise DataError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "sample_rate", int(self.sample_rate))
        peak = float(np.max(np.abs(self.samples)))
        if peak > 1.0 + 1e-9:
            raise DataError(f"samples must lie in [-1, 1], found peak {peak:.6f}")

    @property
    def duration_seconds(self) -> float:
        return self.samples.size / self.sample_rate

    def __len__(self) -> int:
        return int(self.samples.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, AudioSegment):
            return NotImplemented
        return self.sample_rate == other.sample_rate and bool(
            np.array_equal(self.samples, other.samples)
        )


@dataclass(frozen=True, eq=False)
class ImageHandle:
    """An opaque image reference: payload bytes plus declared dimensions.

    Synthetic backends encode their (class id, latent) input losslessly in
    the payload and carry no pixels; bridge backends carry encoded image
    bytes (or a file path reference) at the declared size.
    """

    payload: bytes
    width: int
    height: int
    channels: int
    ref: str | None = field(default=None)

    def __post_init__(self):
        if not isinstance(self.payload, (bytes, bytearray)):
            raise DataError("image payload must be bytes")
        object.__setattr__(self, "payload", bytes(self.payload))
        for name in ("width", "height", "channels"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v <= 0:
                raise DataError(f"image {name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImageHandle):
            return NotImplemented
        return (
            self.payload == other.payload
            and self.width == other.width
            and self.height == other.height
            and self.channels == other.channels
            and self.ref == other.ref
        )


def divergence(t1, t2) -> float:
    """Dissimilarity between two attribute vectors: the Euclidean distance.

    Symmetric, non-negative, zero exactly when the vectors are equal.
    Accepts :class:`AttributeVector` or plain 1-D arrays/sequences.
    """
    a = t1.values if isinstance(t1, AttributeVector) else np.asarray(t1, dtype=np.float64)
    b = t2.values if isinstance(t2, AttributeVector) else np.asarray(t2, dtype=np.float64)
    if a.size != b.size:
        raise DimensionError(
            f"attribute vectors differ in length: {a.size} vs {b.size}"
        )
    return float(np.linalg.norm(a - b))
