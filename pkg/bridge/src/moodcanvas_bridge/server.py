"""Stdio JSON server exposing the pixel models to a parent process.

Protocol (version 1): newline-delimited JSON on stdin/stdout.  Requests
are ``{"id", "op", "params"}``; every request is answered exactly once
with ``{"id", "ok": true, "result"}`` or ``{"id", "ok": false, "error":
{"message"}}``.  Requests after the handshake are served by a worker
pool, so responses may return out of order up to the declared
``max_concurrent``.  A malformed request line gets an ``id: null`` error
response and the session continues; an operation failure fails only that
request.

Image payloads travel base64-inline or as temp-file paths.  The client
offers its supported modes at handshake and the server picks one —
file paths by default (payloads are half-megabyte PNGs), base64 when the
client cannot share a filesystem.

Ops:

* ``handshake`` -> capabilities: ``{protocol_version, num_classes,
  latent_dim, image_size, supports_stylize, max_concurrent,
  payload_mode, attribute_stats}``
* ``generate_image {class_id, latent}`` -> PNG payload + dimensions
* ``estimate_attributes {image}`` -> ``{attributes: [valence, arousal]}``
* ``stylize_image {image, style, blend}`` -> PNG payload, content-sized;
  blend 0 reproduces the content pixels exactly
"""

from __future__ import annotations

import argparse
import base64
import binascii
import json
import os
import shutil
import sys
import tempfile
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .models import (
    ATTRIBUTE_STATS,
    CovarianceStylizer,
    PixelSentimentEstimator,
    TextureGenerator,
    decode_png,
    encode_png,
    from_unit,
    to_unit,
)

PROTOCOL_VERSION = 1

NUM_CLASSES = 1000
LATENT_DIM = 128
DEFAULT_IMAGE_SIZE = 512
DEFAULT_MAX_CONCURRENT = 4

PAYLOAD_MODES = ("auto", "base64", "file")


class BridgeServer:
    """One protocol session over a pair of text streams."""

    def __init__(
        self,
        image_size: int = DEFAULT_IMAGE_SIZE,
        max_concurrent: int = DEFAULT_MAX_CONCURRENT,
        payload_mode: str = "auto",
        stdin=None,
        stdout=None,
    ):
        if payload_mode not in PAYLOAD_MODES:
            raise ValueError(f"payload_mode must be one of {PAYLOAD_MODES}")
        self.max_concurrent = max(1, int(max_concurrent))
        self.payload_preference = payload_mode
        self.generator = TextureGenerator(NUM_CLASSES, LATENT_DIM, image_size)
        self.estimator = PixelSentimentEstimator()
        self.stylizer = CovarianceStylizer()
        self._stdin = stdin if stdin is not None else sys.stdin
        self._stdout = stdout if stdout is not None else sys.stdout
        self._write_lock = threading.Lock()
        self._tmpdir: str | None = None
        self._tmpdir_lock = threading.Lock()
        self._mode = "base64"  # until negotiated at handshake

    # -- transport

    def _respond(self, msg_id, result=None, error: str | None = None) -> None:
        if error is None:
            frame = {"id": msg_id, "ok": True, "result": result}
        else:
            frame = {"id": msg_id, "ok": False, "error": {"message": error}}
        line = json.dumps(frame, separators=(",", ":"))
        try:
            with self._write_lock:
                self._stdout.write(line + "\n")
                self._stdout.flush()
        except (OSError, ValueError):
            pass  # parent went away; the read loop will hit EOF and stop

    def _read_image(self, descriptor) -> bytes:
        if not isinstance(descriptor, dict):
            raise ValueError(f"image descriptor must be an object, got {descriptor!r}")
        if "b64" in descriptor:
            try:
                return base64.b64decode(descriptor["b64"], validate=True)
            except (binascii.Error, TypeError) as exc:
                raise ValueError(f"invalid base64 image payload: {exc}") from exc
        if "path" in descriptor:
            try:
                with open(descriptor["path"], "rb") as fh:
                    return fh.read()
            except OSError as exc:
                raise ValueError(f"could not read image file: {exc}") from exc
        raise ValueError("image descriptor carries neither b64 nor path")

    def _image_result(self, payload: bytes, width: int, height: int) -> dict:
        if self._mode == "file":
            with self._tmpdir_lock:
                if self._tmpdir is None:
                    self._tmpdir = tempfile.mkdtemp(prefix="moodcanvas-bridge-")
            path = os.path.join(self._tmpdir, f"{uuid.uuid4().hex}.png")
            with open(path, "wb") as fh:
                fh.write(payload)
            descriptor = {"path": path}
        else:
            descriptor = {"b64": base64.b64encode(payload).decode("ascii")}
        return {"image": descriptor, "width": width, "height": height, "channels": 3}

    # -- operations

    def _op_handshake(self, params: dict) -> dict:
        offered = params.get("payload_modes")
        if not isinstance(offered, (list, tuple)) or not offered:
            offered = ["base64"]
        if self.payload_preference == "auto":
            self._mode = "file" if "file" in offered else "base64"
        elif self.payload_preference in offered:
            self._mode = self.payload_preference
        else:
            self._mode = "base64"
        return {
            "protocol_version": PROTOCOL_VERSION,
            "num_classes": self.generator.num_classes,
            "latent_dim": self.generator.latent_dim,
            "image_size": self.generator.image_size,
            "supports_stylize": True,
            "max_concurrent": self.max_concurrent,
            "payload_mode": self._mode,
            "attribute_stats": {
                "mean": list(ATTRIBUTE_STATS["mean"]),
                "std": list(ATTRIBUTE_STATS["std"]),
            },
        }

    def _op_generate_image(self, params: dict) -> dict:
        pixels = self.generator.render(params["class_id"], params["latent"])
        size = self.generator.image_size
        return self._image_result(encode_png(pixels), size, size)

    def _op_estimate_attributes(self, params: dict) -> dict:
        pixels = decode_png(self._read_image(params["image"]))
        attributes = self.estimator.estimate(pixels)
        return {"attributes": [float(v) for v in attributes]}

    def _op_stylize_image(self, params: dict) -> dict:
        content = decode_png(self._read_image(params["image"]))
        style = decode_png(self._read_image(params["style"]))
        blend = float(params.get("blend", 0.1))
        styled = self.stylizer.stylize(to_unit(content), to_unit(style), blend)
        payload = encode_png(from_unit(styled))
        return self._image_result(payload, content.shape[1], content.shape[0])

    _OPS = {
        "generate_image": _op_generate_image,
        "estimate_attributes": _op_estimate_attributes,
        "stylize_image": _op_stylize_image,
    }

    def _serve_one(self, msg_id, op, params) -> None:
        handler = self._OPS.get(op)
        if handler is None:
            self._respond(msg_id, error=f"unknown op '{op}'")
            return
        try:
            result = handler(self, params)
        except Exception as exc:  # any model/decode failure fails only this request
            self._respond(msg_id, error=f"{op} failed: {exc}")
            return
        self._respond(msg_id, result=result)

    # -- main loop

    def serve(self) -> int:
        pool = ThreadPoolExecutor(max_workers=self.max_concurrent)
        try:
            for line in self._stdin:
                line = line.strip()
                if not line:
                    continue
                try:
                    message = json.loads(line)
                    if not isinstance(message, dict):
                        raise ValueError("request frame must be a JSON object")
                except ValueError as exc:
                    self._respond(None, error=f"malformed request frame: {exc}")
                    continue
                msg_id = message.get("id")
                op = message.get("op")
                params = message.get("params")
                if params is None:
                    params = {}
                if not isinstance(params, dict):
                    self._respond(msg_id, error="params must be a JSON object")
                    continue
                if op == "handshake":
                    # answered inline: capabilities and payload mode must be
                    # fixed before any image op runs
                    self._respond(msg_id, result=self._op_handshake(params))
                else:
                    pool.submit(self._serve_one, msg_id, op, params)
        finally:
            pool.shutdown(wait=True)
            if self._tmpdir is not None:
                shutil.rmtree(self._tmpdir, ignore_errors=True)
                self._tmpdir = None
        return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="moodcanvas-bridge",
        description="Image-generation bridge speaking newline-delimited JSON on stdio.",
    )
    parser.add_argument(
        "--image-size", type=int, default=DEFAULT_IMAGE_SIZE,
        help=f"rendered frame edge in pixels (default {DEFAULT_IMAGE_SIZE})",
    )
    parser.add_argument(
        "--max-concurrent", type=int, default=DEFAULT_MAX_CONCURRENT,
        help=f"declared request concurrency (default {DEFAULT_MAX_CONCURRENT})",
    )
    parser.add_argument(
        "--payload-mode", choices=PAYLOAD_MODES, default="auto",
        help="force an image transport instead of negotiating (default: auto)",
    )
    args = parser.parse_args(argv)
    if args.image_size < 1:
        parser.error("--image-size must be positive")
    server = BridgeServer(
        image_size=args.image_size,
        max_concurrent=args.max_concurrent,
        payload_mode=args.payload_mode,
    )
    return server.serve()


if __name__ == "__main__":
    raise SystemExit(main())
