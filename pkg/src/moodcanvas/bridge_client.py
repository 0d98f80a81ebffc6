"""Client for external generator/estimator/stylizer processes.

The bridge is a child process speaking newline-delimited JSON on its
standard streams: requests are ``{"id", "op", "params"}`` and every
request id is answered exactly once with ``{"id", "ok", "result"}`` or
``{"id", "ok": false, "error": {"message": ...}}``.  Responses may arrive
out of order up to the concurrency the bridge declares at handshake.
Image payloads travel base64-inline or as temp-file paths; the mode is
negotiated at handshake.  Protocol version: 1.
"""

from __future__ import annotations

import base64
import json
import os
import shlex
import subprocess
import sys
import tempfile
import threading
import uuid

import numpy as np

from .core_types import AttributeVector, GeneratorVector, ImageHandle
from .errors import BackendError, CapabilityError, ProtocolError
from .estimators import VisualAttributeEstimator
from .generator_backend import GeneratorBackend

PROTOCOL_VERSION = 1

PAYLOAD_MODES = ("base64", "file")

DEFAULT_HANDSHAKE_TIMEOUT = 30.0


class BridgeClient:
    """Owns a bridge child process and multiplexes requests onto it."""

    def __init__(
        self,
        command,
        handshake_timeout: float = DEFAULT_HANDSHAKE_TIMEOUT,
        request_timeout: float = DEFAULT_HANDSHAKE_TIMEOUT,
    ):
        if isinstance(command, str):
            command = shlex.split(command)
        self._request_timeout = request_timeout
        self._lock = threading.Lock()
        self._write_lock = threading.Lock()
        self._pending = {}
        self._next_id = 0
        self._closed = False
        self._fatal: Exception | None = None
        self._tmpdir = None
        try:
            self._proc = subprocess.Popen(
                command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=sys.stderr.fileno() if hasattr(sys.stderr, "fileno") else None,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BackendError(f"could not start bridge process {command!r}: {exc}") from exc
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

        result = self.request(
            "handshake",
            {"protocol_version": PROTOCOL_VERSION, "payload_modes": list(PAYLOAD_MODES)},
            timeout=handshake_timeout,
        )
        try:
            declared = int(result.get("protocol_version", PROTOCOL_VERSION))
            if declared != PROTOCOL_VERSION:
                raise ProtocolError(
                    f"bridge speaks protocol version {declared}, client speaks "
                    f"{PROTOCOL_VERSION}"
                )
            self.num_classes = int(result["num_classes"])
            self.latent_dim = int(result["latent_dim"])
            self.image_size = int(result["image_size"])
            self.supports_stylize = bool(result["supports_stylize"])
            self.max_concurrent = max(1, int(result["max_concurrent"]))
        except (KeyError, TypeError, ValueError) as exc:
            self.close()
            raise ProtocolError(f"malformed handshake result: {result!r}") from exc
        self.payload_mode = result.get("payload_mode", "base64")
        if self.payload_mode not in PAYLOAD_MODES:
            self.close()
            raise ProtocolError(f"bridge chose unknown payload mode '{self.payload_mode}'")
        stats = result.get("attribute_stats")
        self.attribute_stats = stats if isinstance(stats, dict) else None
        self._slots = threading.Semaphore(self.max_concurrent)

    # -- low-level plumbing

    def _read_loop(self):
        stream = self._proc.stdout
        while True:
            line = stream.readline()
            if not line:
                self._abort(ProtocolError("bridge process closed its output stream"))
                return
            line = line.strip()
            if not line:
                continue
            try:
                message = json.loads(line)
                msg_id = message["id"]
            except (json.JSONDecodeError, TypeError, KeyError) as exc:
                self._abort(ProtocolError(f"malformed bridge frame: {line[:200]!r} ({exc})"))
                return
            with self._lock:
                waiter = self._pending.get(msg_id)
                if waiter is not None and not waiter["event"].is_set():
                    waiter["message"] = message
                    waiter["event"].set()
            # unsolicited/duplicate ids are dropped; the id space is
            # client-owned and collection happens in wait()

    def _abort(self, error: Exception):
        with self._lock:
            if self._fatal is None:
                self._fatal = error
            pending = list(self._pending.values())
            self._pending.clear()
        for waiter in pending:
            waiter["message"] = None
            waiter["event"].set()
        try:
            self._proc.stdin.close()
        except OSError:
            pass

    def submit(self, op: str, params: dict) -> int:
        """Send a request; returns its id.  Bounded by the declared concurrency."""
        if self._fatal is not None:
            raise self._fatal
        if self._closed:
            raise BackendError("bridge client is closed")
        slots = getattr(self, "_slots", None)
        if slots is not None:
            slots.acquire()
        event = threading.Event()
        with self._lock:
            msg_id = self._next_id
            self._next_id += 1
            self._pending[msg_id] = {"event": event, "message": None}
        frame = json.dumps({"id": msg_id, "op": op, "params": params}, separators=(",", ":"))
        try:
            with self._write_lock:
                self._proc.stdin.write(frame + "\n")
                self._proc.stdin.flush()
        except (OSError, ValueError) as exc:
            if slots is not None:
                slots.release()
            self._abort(ProtocolError(f"could not write to bridge: {exc}"))
            raise self._fatal from exc
        return msg_id

    def wait(self, msg_id: int, timeout: float | None = None) -> dict:
        """Collect the response to ``msg_id`` (each id collectable once)."""
        with self._lock:
            waiter = self._pending.get(msg_id)
        if waiter is None:
            if self._fatal is not None:
                raise self._fatal
            raise BackendError(f"unknown or already-collected request id {msg_id}")
        timeout = self._request_timeout if timeout is None else timeout
        ok = waiter["event"].wait(timeout)
        with self._lock:
            self._pending.pop(msg_id, None)
        slots = getattr(self, "_slots", None)
        if slots is not None:
            slots.release()
        if not ok:
            raise BackendError(f"bridge request {msg_id} timed out after {timeout} s")
        message = waiter["message"]
        if message is None:
            raise self._fatal or ProtocolError("bridge session aborted")
        if message.get("ok"):
            return message.get("result", {})
        error = message.get("error") or {}
        raise BackendError(f"bridge error: {error.get('message', 'unspecified failure')}")

    def request(self, op: str, params: dict, timeout: float | None = None) -> dict:
        return self.wait(self.submit(op, params), timeout=timeout)

    def close(self):
        if self._closed:
            return
        self._closed = True
        try:
            self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()
        if self._tmpdir is not None:
            self._tmpdir.cleanup()
            self._tmpdir = None

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()

    # -- payload transport

    def encode_image(self, image: ImageHandle) -> dict:
        """Wrap an image payload for the wire in the negotiated mode."""
        if self.payload_mode == "base64":
            return {"b64": base64.b64encode(image.payload).decode("ascii")}
        if self._tmpdir is None:
            self._tmpdir = tempfile.TemporaryDirectory(prefix="bridge-out-")
        path = os.path.join(self._tmpdir.name, f"{uuid.uuid4().hex}.bin")
        with open(path, "wb") as fh:
            fh.write(image.payload)
        return {"path": path}

    def decode_image(self, descriptor: dict, width: int, height: int, channels: int) -> ImageHandle:
        if not isinstance(descriptor, dict):
            raise ProtocolError(f"malformed image descriptor: {descriptor!r}")
        if "b64" in descriptor:
            payload = base64.b64decode(descriptor["b64"])
            ref = None
        elif "path" in descriptor:
            ref = descriptor["path"]
            try:
                with open(ref, "rb") as fh:
                    payload = fh.read()
            except OSError as exc:
                raise BackendError(f"could not read bridge image file {ref}: {exc}") from exc
        else:
            raise ProtocolError(f"image descriptor carries neither b64 nor path: {descriptor!r}")
        return ImageHandle(
            payload=payload, width=width, height=height, channels=channels, ref=ref
        )

    def result_image(self, result: dict) -> ImageHandle:
        try:
            return self.decode_image(
                result["image"],
                int(result["width"]),
                int(result["height"]),
                int(result["channels"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed image result: {result!r}") from exc


class BridgeBackend(GeneratorBackend):
    """GeneratorBackend adapter over a :class:`BridgeClient`."""

    def __init__(self, client: BridgeClient):
        self.client = client

    @property
    def num_classes(self) -> int:
        return self.client.num_classes

    @property
    def latent_dim(self) -> int:
        return self.client.latent_dim

    @property
    def supports_stylize(self) -> bool:
        return self.client.supports_stylize

    @property
    def has_pixels(self) -> bool:
        return True

    @property
    def image_size(self) -> int:
        return self.client.image_size

    @property
    def max_concurrent_requests(self) -> int:
        return self.client.max_concurrent

    def generate(self, gv: GeneratorVector) -> ImageHandle:
        self.validate_control(gv)
        result = self.client.request(
            "generate_image",
            {"class_id": gv.class_id, "latent": [float(v) for v in gv.latent]},
        )
        return self.client.result_image(result)


class BridgeVisualEstimator(VisualAttributeEstimator):
    implementation = "external_backend"

    def __init__(self, client: BridgeClient, n_attributes: int = 2):
        self.client = client
        self._n_attributes = n_attributes

    @property
    def n_attributes(self) -> int:
        return self._n_attributes

    def estimate(self, image: ImageHandle) -> AttributeVector:
        result = self.client.request(
            "estimate_attributes", {"image": self.client.encode_image(image)}
        )
        try:
            values = np.asarray(result["attributes"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed attribute result: {result!r}") from exc
        if values.size != self._n_attributes:
            raise ProtocolError(
                f"bridge returned {values.size} attributes, expected {self._n_attributes}"
            )
        return AttributeVector(values)


class BridgeStylizer:
    """Pixel stylization executed in the bridge."""

    def __init__(self, client: BridgeClient):
        self.client = client

    def stylize(self, image: ImageHandle, style: ImageHandle, blend: float) -> ImageHandle:
        if not self.client.supports_stylize:
            raise CapabilityError("bridge does not support stylization")
        result = self.client.request(
            "stylize_image",
            {
                "image": self.client.encode_image(image),
                "style": self.client.encode_image(style),
                "blend": float(blend),
            },
        )
        return self.client.result_image(result)
