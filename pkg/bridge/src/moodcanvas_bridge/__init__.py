"""External image backend for moodcanvas.

Runs as a child process speaking newline-delimited JSON on its standard
streams (launch with ``moodcanvas --backend "bridge:moodcanvas-bridge"``
or ``bridge:python -m moodcanvas_bridge``).  It renders 512x512
class-conditional frames from (class, latent) control vectors, estimates
valence/arousal from pixels, and blends a style image's color statistics
into a content frame.
"""

from .models import (
    ATTRIBUTE_STATS,
    CovarianceStylizer,
    PixelSentimentEstimator,
    TextureGenerator,
    decode_png,
    encode_png,
)
from .server import (
    DEFAULT_IMAGE_SIZE,
    LATENT_DIM,
    NUM_CLASSES,
    PROTOCOL_VERSION,
    BridgeServer,
    main,
)

__all__ = [
    "ATTRIBUTE_STATS",
    "BridgeServer",
    "CovarianceStylizer",
    "DEFAULT_IMAGE_SIZE",
    "LATENT_DIM",
    "NUM_CLASSES",
    "PROTOCOL_VERSION",
    "PixelSentimentEstimator",
    "TextureGenerator",
    "decode_png",
    "encode_png",
    "main",
]
