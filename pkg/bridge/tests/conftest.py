"""Shared helpers: a minimal wire-protocol driver plus image/audio fixtures.

The driver speaks the stdio JSON protocol directly over a subprocess so
the server is exercised exactly the way a parent process sees it; nothing
here imports the server code.
"""

import base64
import io
import json
import queue
import subprocess
import sys
import threading
import wave

import numpy as np
import pytest
from PIL import Image

SERVER_ARGV = [sys.executable, "-m", "moodcanvas_bridge"]

PROTOCOL_VERSION = 1


class WireClient:
    """Drives one bridge server session over its standard streams."""

    def __init__(self, flags=(), payload_modes=("base64", "file"),
                 handshake=True, timeout=30.0):
        self.timeout = timeout
        self.proc = subprocess.Popen(
            [*SERVER_ARGV, *map(str, flags)],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lines: queue.Queue = queue.Queue()
        self._inbox: dict = {}
        self._next_id = 0
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        self.capabilities = None
        if handshake:
            self.capabilities = self.request(
                "handshake",
                {"protocol_version": PROTOCOL_VERSION,
                 "payload_modes": list(payload_modes)},
            )

    def _read_loop(self):
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)  # EOF marker

    # -- frames

    def send(self, op, params) -> int:
        msg_id = self._next_id
        self._next_id += 1
        self.send_raw(json.dumps({"id": msg_id, "op": op, "params": params}))
        return msg_id

    def send_raw(self, text: str) -> None:
        self.proc.stdin.write(text + "\n")
        self.proc.stdin.flush()

    def recv_frame(self) -> dict:
        line = self._lines.get(timeout=self.timeout)
        if line is None:
            raise AssertionError("server closed its output stream")
        return json.loads(line)

    def collect(self, msg_id) -> dict:
        """Response frame for ``msg_id``, stashing any other ids seen."""
        while not self._inbox.get(msg_id):
            frame = self.recv_frame()
            self._inbox.setdefault(frame.get("id"), []).append(frame)
        return self._inbox[msg_id].pop(0)

    def request(self, op, params) -> dict:
        frame = self.collect(self.send(op, params))
        assert frame.get("ok") is True, f"unexpected error: {frame!r}"
        return frame["result"]

    def request_error(self, op, params) -> str:
        frame = self.collect(self.send(op, params))
        assert frame.get("ok") is False, f"expected an error, got: {frame!r}"
        return frame["error"]["message"]

    # -- payloads

    def payload_bytes(self, descriptor: dict) -> bytes:
        if "b64" in descriptor:
            return base64.b64decode(descriptor["b64"])
        with open(descriptor["path"], "rb") as fh:
            return fh.read()

    def result_pixels(self, result: dict) -> np.ndarray:
        return png_pixels(self.payload_bytes(result["image"]))

    def drain_to_eof(self) -> list:
        """Close stdin and return every frame emitted before EOF."""
        self.proc.stdin.close()
        leftovers = [
            frame for frames in self._inbox.values() for frame in frames
        ]
        while True:
            line = self._lines.get(timeout=self.timeout)
            if line is None:
                return leftovers
            leftovers.append(json.loads(line))

    def close(self):
        try:
            self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()


@pytest.fixture
def launch():
    clients = []

    def _launch(*flags, **kwargs) -> WireClient:
        client = WireClient(flags, **kwargs)
        clients.append(client)
        return client

    yield _launch
    for client in clients:
        client.close()


@pytest.fixture(scope="module")
def server():
    """One small-image server shared across a module's wire tests."""
    client = WireClient(["--image-size", "64"])
    yield client
    client.close()


# -- image fixtures


def png_pixels(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as image:
        return np.asarray(image.convert("RGB"), dtype=np.uint8)


def pixels_to_png(pixels: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="RGB").save(
        buffer, format="PNG"
    )
    return buffer.getvalue()


def solid_png(rgb, size=(24, 24)) -> bytes:
    buffer = io.BytesIO()
    Image.new("RGB", size, tuple(rgb)).save(buffer, format="PNG")
    return buffer.getvalue()


def b64desc(payload: bytes) -> dict:
    return {"b64": base64.b64encode(payload).decode("ascii")}


# -- audio fixtures


def write_wav(path, data, sample_rate=22050):
    pcm = (np.clip(np.asarray(data, dtype=np.float64), -1.0, 1.0) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(pcm.tobytes())


def sine(seconds, freq, sample_rate=22050, amplitude=0.4):
    t = np.arange(int(seconds * sample_rate)) / sample_rate
    return amplitude * np.sin(2.0 * np.pi * freq * t)
