"""Pixel models behind the bridge: generator, sentiment estimator, stylizer.

The three models are procedural and fully deterministic — every output is
a pure function of the request inputs, so a bridge session can declare
determinism and byte-identical re-runs hold across processes:

* :class:`TextureGenerator` renders a class-conditional texture.  The
  class picks the palette and spatial frequency; the latent vector steers
  brightness, contrast, orientation, phase, and fine detail.
* :class:`PixelSentimentEstimator` reads valence (warm/bright vs
  cold/dark) and arousal (contrast, saturation, edge energy) from global
  pixel statistics.
* :class:`CovarianceStylizer` re-colors the content image with the style
  image's channel mean and covariance (a whiten-and-color transform over
  RGB), blended with the original by the blend factor; blend 0 returns
  the content pixels untouched.
"""

from __future__ import annotations

import colorsys
import hashlib
import io

import numpy as np
from PIL import Image, UnidentifiedImageError

GOLDEN_RATIO = 0.618033988749895

# Estimator output statistics measured over the generator's own output
# distribution (1000 renders, uniform classes, standard-normal latents),
# declared at handshake so callers can z-score align against them.
ATTRIBUTE_STATS = {
    "mean": [-0.05, -0.04],
    "std": [0.39, 0.41],
}


# ---------------------------------------------------------------------------
# PNG transport


def encode_png(pixels: np.ndarray) -> bytes:
    """uint8 (H, W, 3) array -> PNG bytes (lossless)."""
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) pixel array, got shape {pixels.shape}")
    buffer = io.BytesIO()
    Image.fromarray(pixels, mode="RGB").save(buffer, format="PNG")
    return buffer.getvalue()


def decode_png(payload: bytes) -> np.ndarray:
    """Image bytes -> uint8 (H, W, 3) array; raises ValueError if undecodable."""
    try:
        with Image.open(io.BytesIO(payload)) as image:
            return np.asarray(image.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ValueError(f"payload is not a decodable image: {exc}") from exc


def to_unit(pixels: np.ndarray) -> np.ndarray:
    return np.asarray(pixels, dtype=np.float64) / 255.0


def from_unit(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(pixels, dtype=np.float64) * 255.0 + 0.5, 0.0, 255.0).astype(
        np.uint8
    )


# ---------------------------------------------------------------------------
# Generator


def _render_seed(class_id: int, latent: np.ndarray) -> int:
    digest = hashlib.sha256()
    digest.update(int(class_id).to_bytes(4, "big"))
    digest.update(np.ascontiguousarray(latent, dtype=np.float64).tobytes())
    return int.from_bytes(digest.digest()[:8], "big")


class TextureGenerator:
    """Class-conditional procedural image renderer."""

    def __init__(self, num_classes: int = 1000, latent_dim: int = 128,
                 image_size: int = 512):
        if num_classes < 1 or latent_dim < 1 or image_size < 1:
            raise ValueError("num_classes, latent_dim, image_size must be positive")
        self.num_classes = num_classes
        self.latent_dim = latent_dim
        self.image_size = image_size

    def render(self, class_id: int, latent) -> np.ndarray:
        """(class, latent) -> uint8 (S, S, 3) pixels; deterministic."""
        class_id = int(class_id)
        if not 0 <= class_id < self.num_classes:
            raise ValueError(
                f"class_id {class_id} out of range [0, {self.num_classes})"
            )
        latent = np.asarray(latent, dtype=np.float64)
        if latent.shape != (self.latent_dim,):
            raise ValueError(
                f"latent must have shape ({self.latent_dim},), got {latent.shape}"
            )
        if not np.all(np.isfinite(latent)):
            raise ValueError("latent contains non-finite values")

        size = self.image_size
        a = np.tanh(latent)
        if a.size < 12:
            a = np.concatenate([a, np.zeros(12 - a.size)])

        hue = (class_id * GOLDEN_RATIO) % 1.0
        base_freq = 3.0 + (class_id % 13)
        brightness = 0.55 + 0.25 * a[0]
        contrast = 1.0 + 0.8 * a[1]
        theta = np.pi * a[2]
        phase = np.pi * a[3]
        detail = 0.35 + 0.25 * float(np.mean(np.abs(a[4:12])))

        coords = np.arange(size, dtype=np.float64) / size
        u, v = np.meshgrid(coords, coords, indexing="xy")
        wave = np.sin(
            2.0 * np.pi * base_freq * (u * np.cos(theta) + v * np.sin(theta)) + phase
        )
        theta2 = theta + 1.1
        wave += 0.6 * np.sin(
            2.0 * np.pi * (1.7 * base_freq)
            * (u * np.cos(theta2) - v * np.sin(theta2))
            - 2.3 * phase
        )

        rng = np.random.default_rng(_render_seed(class_id, latent))
        tile = 16
        coarse = rng.standard_normal((size // tile + 1, size // tile + 1))
        grain = np.kron(coarse, np.ones((tile, tile)))[:size, :size]

        mix = 0.5 + 0.5 * np.tanh(contrast * (0.8 * wave + detail * grain))

        anchor_a = np.array(
            colorsys.hsv_to_rgb(hue, 0.75, float(np.clip(1.15 * brightness, 0.0, 1.0)))
        )
        anchor_b = np.array(
            colorsys.hsv_to_rgb(
                (hue + 0.45 + 0.1 * a[5]) % 1.0,
                0.55,
                float(np.clip(0.75 * brightness, 0.0, 1.0)),
            )
        )
        rgb = mix[..., None] * anchor_a + (1.0 - mix)[..., None] * anchor_b
        return from_unit(rgb)


# ---------------------------------------------------------------------------
# Sentiment estimator


class PixelSentimentEstimator:
    """Valence/arousal regressor over global pixel statistics.

    Valence rises with brightness and red-over-blue warmth; arousal rises
    with luminance contrast, saturation, and edge energy.  Both are
    squashed into (-1, 1) and roughly standardized over the generator's
    output distribution (see ATTRIBUTE_STATS).
    """

    n_attributes = 2

    def estimate(self, pixels: np.ndarray) -> np.ndarray:
        """uint8 (H, W, 3) pixels -> [valence, arousal], each in (-1, 1)."""
        unit = to_unit(pixels)
        if unit.ndim != 3 or unit.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixels, got shape {unit.shape}")
        red, green, blue = unit[..., 0], unit[..., 1], unit[..., 2]
        luminance = 0.299 * red + 0.587 * green + 0.114 * blue

        brightness = float(np.mean(luminance))
        warmth = float(np.mean(red - blue))
        contrast = float(np.std(luminance))
        saturation = float(np.mean(unit.max(axis=2) - unit.min(axis=2)))
        edge = float(
            np.mean(np.abs(np.diff(luminance, axis=0)))
            + np.mean(np.abs(np.diff(luminance, axis=1)))
        ) if min(luminance.shape) > 1 else 0.0

        # centering constants calibrated on the generator's output
        # distribution (see ATTRIBUTE_STATS)
        valence = np.tanh(2.2 * (brightness - 0.38) + 3.0 * warmth)
        arousal = np.tanh(4.0 * contrast + 5.0 * saturation + 10.0 * edge - 1.32)
        return np.array([valence, arousal], dtype=np.float64)


# ---------------------------------------------------------------------------
# Stylizer


class CovarianceStylizer:
    """Channel-statistics style transfer with linear blending.

    The content pixels are whitened against their own RGB covariance and
    re-colored with the style image's covariance and mean; the result is
    mixed with the original as blend * transferred + (1 - blend) * content.
    Style statistics are resolution-independent, so the style image may be
    any size.
    """

    def __init__(self, regularization: float = 1e-6):
        self.regularization = float(regularization)

    @staticmethod
    def _matrix_power(cov: np.ndarray, exponent: float, floor: float) -> np.ndarray:
        values, vectors = np.linalg.eigh(cov)
        values = np.maximum(values, floor)
        return (vectors * values**exponent) @ vectors.T

    def stylize(self, content: np.ndarray, style: np.ndarray, blend: float) -> np.ndarray:
        """Unit-range float pixels in and out; content dimensions preserved."""
        blend = float(blend)
        if not 0.0 <= blend <= 1.0:
            raise ValueError(f"blend must be in [0, 1], got {blend}")
        if content.ndim != 3 or content.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) content pixels, got {content.shape}")
        if blend == 0.0:
            return np.array(content, dtype=np.float64, copy=True)
        if style.ndim != 3 or style.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) style pixels, got {style.shape}")

        flat_content = content.reshape(-1, 3)
        flat_style = style.reshape(-1, 3)
        mean_c = flat_content.mean(axis=0)
        mean_s = flat_style.mean(axis=0)
        eye = self.regularization * np.eye(3)
        cov_c = np.cov(flat_content, rowvar=False) + eye
        cov_s = np.cov(flat_style, rowvar=False) + eye

        whiten = self._matrix_power(cov_c, -0.5, self.regularization)
        color = self._matrix_power(cov_s, 0.5, self.regularization)
        transform = color @ whiten
        transferred = (flat_content - mean_c) @ transform.T + mean_s

        mixed = blend * transferred + (1.0 - blend) * flat_content
        return np.clip(mixed.reshape(content.shape), 0.0, 1.0)
