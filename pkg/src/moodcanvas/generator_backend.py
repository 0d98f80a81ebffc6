"""Generator abstraction, generator-space sampling and the synthetic oracle.

The synthetic backend is fully determined by (num_classes, latent_dim,
seed): each class k gets a base attribute vector b_k drawn uniformly from
[-1, 1]^N_a and a mixing matrix A_k whose entries are zero-mean normal
with variance 0.1/sqrt(d), i.e. std sqrt(0.1/sqrt(d))
(b before A, one seeded generator — pinned so fixtures reproduce).  Its
"images" carry no pixels: the payload losslessly encodes (class_id,
latent) as float64, and the paired estimator returns

    clamp(b_k + A_k . latent, -3, 3)

which is analytic, deterministic, and differentiable almost everywhere —
the ground-truth oracle for every round-trip property in this package.
"""

from __future__ import annotations

import hashlib
import json
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .core_types import AttributeVector, GeneratorVector, ImageHandle, SamplePair
from .errors import (
    DataError,
    DimensionError,
    DomainError,
    FileIOError,
    FormatError,
    ParseError,
    PartialFailureError,
)
from .estimators import VisualAttributeEstimator

SYNTHETIC_PAYLOAD_MAGIC = b"SYNG"

ATTRIBUTE_CLAMP = 3.0


class GeneratorBackend(ABC):
    """A class-conditional, latent-driven image generator."""

    @property
    @abstractmethod
    def num_classes(self) -> int: ...

    @property
    @abstractmethod
    def latent_dim(self) -> int: ...

    @property
    def supports_stylize(self) -> bool:
        return False

    @property
    def has_pixels(self) -> bool:
        """Whether generated images carry real pixel data worth writing out."""
        return False

    @property
    def max_concurrent_requests(self) -> int:
        return 1

    @abstractmethod
    def generate(self, gv: GeneratorVector) -> ImageHandle: ...

    def validate_control(self, gv: GeneratorVector) -> None:
        if gv.class_id >= self.num_classes:
            raise DomainError(
                f"class_id {gv.class_id} out of range for backend with "
                f"{self.num_classes} classes"
            )
        if gv.latent.size != self.latent_dim:
            raise DimensionError(
                f"latent length {gv.latent.size} does not match backend latent dim "
                f"{self.latent_dim}"
            )


@dataclass(frozen=True)
class SyntheticBackendSpec:
    """Parameters that fully determine the synthetic backend and estimator."""

    num_classes: int = 1000
    latent_dim: int = 128
    seed: int = 0
    n_attributes: int = 2

    def __post_init__(self):
        if self.num_classes < 1 or self.latent_dim < 1 or self.n_attributes < 1:
            raise DataError("num_classes, latent_dim and n_attributes must be >= 1")

    @cached_property
    def _tables(self):
        rng = np.random.default_rng(self.seed)
        base = rng.uniform(-1.0, 1.0, (self.num_classes, self.n_attributes))
        mixing = rng.normal(
            0.0, np.sqrt(0.1 / np.sqrt(self.latent_dim)),
            (self.num_classes, self.n_attributes, self.latent_dim),
        )
        base.flags.writeable = False
        mixing.flags.writeable = False
        return base, mixing

    @property
    def base_attributes(self) -> np.ndarray:
        """Per-class attribute centres, shape (num_classes, n_attributes)."""
        return self._tables[0]

    @property
    def mixing(self) -> np.ndarray:
        """Per-class latent mixing matrices, shape (num_classes, n_attributes, latent_dim)."""
        return self._tables[1]

    def attributes_for(self, class_ids: np.ndarray, latents: np.ndarray) -> np.ndarray:
        """Vectorized clamp(b_k + A_k . z) over many (class, latent) rows."""
        base, mixing = self._tables
        raw = base[class_ids] + np.einsum("nij,nj->ni", mixing[class_ids], latents)
        return np.clip(raw, -ATTRIBUTE_CLAMP, ATTRIBUTE_CLAMP)


def encode_synthetic_payload(gv: GeneratorVector) -> bytes:
    header = SYNTHETIC_PAYLOAD_MAGIC + struct.pack("<II", gv.class_id, gv.latent.size)
    return header + gv.latent.astype("<f8").tobytes()


def decode_synthetic_payload(payload: bytes) -> GeneratorVector:
    if len(payload) < 12 or payload[:4] != SYNTHETIC_PAYLOAD_MAGIC:
        raise FormatError("image payload was not produced by the synthetic backend")
    class_id, dim = struct.unpack("<II", payload[4:12])
    expected = 12 + dim * 8
    if len(payload) != expected:
        raise FormatError(
            f"synthetic payload truncated: {len(payload)} bytes, expected {expected}"
        )
    latent = np.frombuffer(payload, dtype="<f8", offset=12)
    return GeneratorVector(class_id=int(class_id), latent=latent)


class SyntheticBackend(GeneratorBackend):
    """Pixel-free backend: the image handle encodes its own control point.

    Handles report 1x1x3 dimensions as a placeholder; there is no pixel
    content to size.
    """

    def __init__(self, spec: SyntheticBackendSpec):
        self.spec = spec

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    @property
    def latent_dim(self) -> int:
        return self.spec.latent_dim

    def generate(self, gv: GeneratorVector) -> ImageHandle:
        self.validate_control(gv)
        return ImageHandle(payload=encode_synthetic_payload(gv), width=1, height=1, channels=3)


class SyntheticVisualEstimator(VisualAttributeEstimator):
    """The analytic attribute map matching a synthetic backend's spec."""

    implementation = "synthetic"

    def __init__(self, spec: SyntheticBackendSpec):
        self.spec = spec

    @property
    def n_attributes(self) -> int:
        return self.spec.n_attributes

    def estimate(self, image: ImageHandle) -> AttributeVector:
        gv = decode_synthetic_payload(image.payload)
        if gv.class_id >= self.spec.num_classes:
            raise FormatError(
                f"payload class {gv.class_id} exceeds spec num_classes "
                f"{self.spec.num_classes} (foreign payload?)"
            )
        if gv.latent.size != self.spec.latent_dim:
            raise FormatError(
                f"payload latent dim {gv.latent.size} does not match spec latent dim "
                f"{self.spec.latent_dim} (foreign payload?)"
            )
        values = self.spec.attributes_for(
            np.array([gv.class_id]), gv.latent[None, :]
        )[0]
        return AttributeVector(values)


def synthetic_estimate(spec: SyntheticBackendSpec, image: ImageHandle) -> AttributeVector:
    """Functional form of :class:`SyntheticVisualEstimator`."""
    return SyntheticVisualEstimator(spec).estimate(image)


# ---------------------------------------------------------------------------
# Generator-space sampling


def sample_generator_space(
    backend: GeneratorBackend,
    estimator: VisualAttributeEstimator,
    n: int,
    seed: int,
) -> list:
    """Draw n (generator, attributes) pairs by sampling the generator space.

    Classes are uniform over the backend's classes; latents are i.i.d.
    standard Normal.  Each draw runs generate -> estimate, so the pair's
    attributes are exactly the estimator's view of the generated image.
    Draw order is pinned: all classes first, then all latents, from one
    seeded generator.  A backend failure raises a partial-failure error
    carrying the pairs completed so far.
    """
    if n < 1:
        raise DataError(f"need at least one draw, got n={n}")
    rng = np.random.default_rng(seed)
    class_ids = rng.integers(0, backend.num_classes, n)
    latents = rng.standard_normal((n, backend.latent_dim))
    pairs = []
    for k, z in zip(class_ids, latents):
        gv = GeneratorVector(class_id=int(k), latent=z)
        try:
            image = backend.generate(gv)
            attrs = estimator.estimate(image)
        except Exception as exc:
            raise PartialFailureError(
                f"backend failed after {len(pairs)} of {n} draws: {exc}", completed=pairs
            ) from exc
        pairs.append(SamplePair(generator=gv, attributes=attrs))
    return pairs


# ---------------------------------------------------------------------------
# Corpus array helpers and persistence (JSON Lines, float32 on disk)


def pairs_to_arrays(pairs):
    """(class_ids int64, latents (n,d), attributes (n,N_a)) from a pair list."""
    if not pairs:
        raise DataError("empty pair list")
    class_ids = np.array([p.generator.class_id for p in pairs], dtype=np.int64)
    latents = np.stack([p.generator.latent for p in pairs])
    attrs = np.stack([p.attributes.values for p in pairs])
    return class_ids, latents, attrs


def arrays_to_pairs(class_ids, latents, attrs):
    return [
        SamplePair(
            generator=GeneratorVector(class_id=int(k), latent=z),
            attributes=AttributeVector(a),
        )
        for k, z, a in zip(class_ids, latents, attrs)
    ]


def corpus_digest(pairs) -> str:
    """Stable hex digest of a pair corpus (float32-rounded, order-sensitive)."""
    class_ids, latents, attrs = pairs_to_arrays(pairs)
    h = hashlib.sha256()
    h.update(class_ids.astype("<i8").tobytes())
    h.update(latents.astype("<f4").tobytes())
    h.update(attrs.astype("<f4").tobytes())
    return h.hexdigest()


def _f32_list(arr) -> list:
    return [float(v) for v in np.asarray(arr, dtype=np.float32)]


def save_pairs(pairs, path) -> None:
    """Write one JSON object per pair: {class_id, latent, attributes}."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            doc = {
                "class_id": p.generator.class_id,
                "latent": _f32_list(p.generator.latent),
                "attributes": _f32_list(p.attributes.values),
            }
            fh.write(json.dumps(doc, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def load_pairs(path) -> list:
    try:
        fh = open(path, "r", encoding="utf-8")
    except FileNotFoundError as exc:
        raise FileIOError(f"pair corpus not found: {path}") from exc
    pairs = []
    offset = 0
    with fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if stripped:
                try:
                    doc = json.loads(stripped)
                except json.JSONDecodeError as exc:
                    raise ParseError(
                        f"invalid JSON on line {line_no} of {path}: {exc.msg}",
                        byte_offset=offset + exc.pos,
                    ) from exc
                try:
                    pairs.append(
                        SamplePair(
                            generator=GeneratorVector(
                                class_id=int(doc["class_id"]),
                                latent=np.asarray(doc["latent"], dtype=np.float64),
                            ),
                            attributes=AttributeVector(
                                np.asarray(doc["attributes"], dtype=np.float64)
                            ),
                        )
                    )
                except KeyError as exc:
                    raise FormatError(
                        f"pair on line {line_no} of {path} is missing field {exc}"
                    ) from exc
            offset += len(line.encode("utf-8"))
    if not pairs:
        raise FormatError(f"pair corpus contains no pairs: {path}")
    return pairs
