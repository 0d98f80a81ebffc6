import sys
import threading
import time
from pathlib import Path

import numpy as np
import pytest

from moodcanvas import (
    AttributeVector,
    BackendError,
    BridgeBackend,
    BridgeClient,
    BridgeStylizer,
    BridgeVisualEstimator,
    CapabilityError,
    DimensionError,
    DomainError,
    GeneratorVector,
    ImageHandle,
    ProtocolError,
)

from mock_bridge import attrs_from_payload, make_image_payload

MOCK = Path(__file__).parent / "mock_bridge.py"


def launch(*flags, **kwargs):
    return BridgeClient([sys.executable, str(MOCK), *map(str, flags)], **kwargs)


def gv(class_id=3, latent=(0.1, -0.2, 0.3, 0.0, 1.5, -1.5, 0.25, 2.0)):
    return GeneratorVector(class_id=class_id, latent=np.asarray(latent, dtype=np.float64))


def handle(payload=b"sample image bytes"):
    return ImageHandle(payload=payload, width=16, height=16, channels=3)


class TestHandshake:
    def test_declared_capabilities_honored(self):
        with launch() as client:
            assert client.num_classes == 32
            assert client.latent_dim == 8
            assert client.image_size == 16
            assert client.supports_stylize is True
            assert client.max_concurrent == 4
            assert client.payload_mode == "base64"
            assert client.attribute_stats is None

    def test_custom_capabilities_honored(self):
        with launch("--classes", 7, "--latent-dim", 3, "--image-size", 64,
                    "--max-concurrent", 2, "--no-stylize") as client:
            assert client.num_classes == 7
            assert client.latent_dim == 3
            assert client.image_size == 64
            assert client.max_concurrent == 2
            assert client.supports_stylize is False

    def test_attribute_stats_passthrough(self):
        with launch("--with-stats") as client:
            assert client.attribute_stats == {"mean": [0.1, -0.1], "std": [0.9, 1.1]}

    def test_protocol_version_mismatch_rejected(self):
        with pytest.raises(ProtocolError, match="protocol version"):
            launch("--protocol-version", 2)

    def test_incomplete_handshake_rejected(self):
        with pytest.raises(ProtocolError, match="handshake"):
            launch("--broken-handshake")

    def test_unknown_payload_mode_rejected(self):
        with pytest.raises(ProtocolError, match="payload mode"):
            launch("--payload-mode", "carrier-pigeon")

    def test_unlaunchable_command_rejected(self):
        with pytest.raises(BackendError, match="could not start"):
            BridgeClient(["/no/such/binary"])

    def test_handshake_timeout(self):
        start = time.monotonic()
        with pytest.raises(BackendError, match="timed out"):
            launch("--silent-op", "handshake", handshake_timeout=0.5)
        assert time.monotonic() - start < 5.0


class TestRequests:
    def test_each_id_answered_exactly_once(self):
        with launch() as client:
            first = client.submit("generate_image", {"class_id": 1, "latent": [0.0] * 8})
            second = client.submit("generate_image", {"class_id": 2, "latent": [0.0] * 8})
            client.wait(second)
            client.wait(first)
            with pytest.raises(BackendError, match="already-collected"):
                client.wait(first)

    def test_unknown_op_fails_but_session_survives(self):
        with launch() as client:
            with pytest.raises(BackendError, match="unknown op"):
                client.request("transmogrify", {})
            result = client.request(
                "generate_image", {"class_id": 1, "latent": [0.0] * 8}
            )
            assert "image" in result

    def test_injected_error_fails_only_that_op(self):
        with launch("--error-op", "estimate_attributes") as client:
            with pytest.raises(BackendError, match="injected failure"):
                client.request("estimate_attributes", {"image": {"b64": ""}})
            assert "image" in client.request(
                "generate_image", {"class_id": 0, "latent": [0.0] * 8}
            )

    def test_swallowed_request_times_out(self):
        with launch("--silent-op", "generate_image", request_timeout=0.4) as client:
            start = time.monotonic()
            with pytest.raises(BackendError, match="timed out"):
                client.request("generate_image", {"class_id": 0, "latent": [0.0] * 8})
            assert time.monotonic() - start < 5.0

    def test_malformed_frame_aborts_session(self):
        client = launch("--garbage-at", 2)
        try:
            with pytest.raises(ProtocolError, match="malformed bridge frame"):
                client.request("generate_image", {"class_id": 0, "latent": [0.0] * 8})
            # the session is now fatal: later submissions fail immediately
            with pytest.raises(ProtocolError):
                client.request("generate_image", {"class_id": 0, "latent": [0.0] * 8})
        finally:
            client.close()

    def test_process_death_aborts_session(self):
        client = launch("--die-at", 2)
        try:
            with pytest.raises(ProtocolError):
                client.request("generate_image", {"class_id": 0, "latent": [0.0] * 8})
        finally:
            client.close()

    def test_closed_client_rejects_requests(self):
        client = launch()
        client.close()
        with pytest.raises(BackendError, match="closed"):
            client.request("generate_image", {"class_id": 0, "latent": [0.0] * 8})


class TestPipelining:
    def test_responses_collected_out_of_order(self):
        with launch("--delay-op", "estimate_attributes", "--delay", "0.5") as client:
            slow = client.submit("estimate_attributes", {"image": {"b64": "aGk="}})
            fast = client.submit("generate_image", {"class_id": 1, "latent": [0.0] * 8})
            start = time.monotonic()
            client.wait(fast)
            assert time.monotonic() - start < 0.35
            result = client.wait(slow)
            assert "attributes" in result

    def test_concurrent_requests_overlap(self):
        with launch("--delay-op", "generate_image", "--delay", "0.4") as client:
            start = time.monotonic()
            ids = [
                client.submit("generate_image", {"class_id": i, "latent": [0.0] * 8})
                for i in range(3)
            ]
            for msg_id in ids:
                client.wait(msg_id)
            elapsed = time.monotonic() - start
            assert elapsed < 0.9  # serial handling would need >= 1.2 s

    def test_declared_concurrency_caps_submissions(self):
        def crowd(client):
            backend = BridgeBackend(client)
            threads = [
                threading.Thread(target=backend.generate, args=(gv(class_id=i),))
                for i in range(2)
            ]
            start = time.monotonic()
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            return time.monotonic() - start

        with launch("--delay-op", "generate_image", "--delay", "0.3",
                    "--max-concurrent", "1") as client:
            assert crowd(client) > 0.55  # the single slot serializes the pair
        with launch("--delay-op", "generate_image", "--delay", "0.3",
                    "--max-concurrent", "4") as client:
            assert crowd(client) < 0.55


class TestBridgeBackend:
    def test_properties_mirror_handshake(self):
        with launch() as client:
            backend = BridgeBackend(client)
            assert backend.num_classes == 32
            assert backend.latent_dim == 8
            assert backend.image_size == 16
            assert backend.has_pixels is True
            assert backend.supports_stylize is True
            assert backend.max_concurrent_requests == 4

    def test_generate_round_trips_control_vector(self):
        with launch() as client:
            backend = BridgeBackend(client)
            control = gv()
            image = backend.generate(control)
            assert image.payload == make_image_payload(
                control.class_id, control.latent
            )
            assert image.width == image.height == 16
            assert image.channels == 3

    def test_generate_is_deterministic(self):
        with launch() as client:
            backend = BridgeBackend(client)
            assert backend.generate(gv()).payload == backend.generate(gv()).payload

    def test_class_out_of_range_rejected_locally(self):
        with launch() as client:
            backend = BridgeBackend(client)
            with pytest.raises(DomainError):
                backend.generate(gv(class_id=32))

    def test_latent_dim_mismatch_rejected_locally(self):
        with launch() as client:
            backend = BridgeBackend(client)
            with pytest.raises(DimensionError):
                backend.generate(gv(latent=(0.0, 1.0)))


class TestBridgeVisualEstimator:
    def test_estimate_matches_payload_hash(self):
        with launch() as client:
            estimator = BridgeVisualEstimator(client)
            assert estimator.n_attributes == 2
            image = handle()
            attrs = estimator.estimate(image)
            assert isinstance(attrs, AttributeVector)
            assert np.allclose(attrs.values, attrs_from_payload(image.payload, 2))
            assert np.all(np.abs(attrs.values) <= 1.0)

    def test_generate_then_estimate_is_deterministic(self):
        with launch() as client:
            backend = BridgeBackend(client)
            estimator = BridgeVisualEstimator(client)
            image = backend.generate(gv())
            first = estimator.estimate(image)
            second = estimator.estimate(backend.generate(gv()))
            assert np.array_equal(first.values, second.values)

    def test_wrong_attribute_count_rejected(self):
        with launch("--attrs-count", 3) as client:
            estimator = BridgeVisualEstimator(client)
            with pytest.raises(ProtocolError, match="attributes"):
                estimator.estimate(handle())


class TestBridgeStylizer:
    def test_zero_blend_returns_content_unchanged(self):
        with launch() as client:
            stylizer = BridgeStylizer(client)
            content = handle(b"content pixels")
            style = handle(b"style pixels")
            out = stylizer.stylize(content, style, 0.0)
            assert out.payload == content.payload

    def test_positive_blend_changes_payload_deterministically(self):
        with launch() as client:
            stylizer = BridgeStylizer(client)
            content = handle(b"content pixels")
            style = handle(b"style pixels")
            once = stylizer.stylize(content, style, 0.5)
            again = stylizer.stylize(content, style, 0.5)
            assert once.payload != content.payload
            assert once.payload == again.payload

    def test_unsupported_stylize_rejected(self):
        with launch("--no-stylize") as client:
            stylizer = BridgeStylizer(client)
            with pytest.raises(CapabilityError):
                stylizer.stylize(handle(), handle(), 0.5)


class TestFilePayloadMode:
    def test_file_mode_negotiated_and_working(self):
        with launch("--payload-mode", "file") as client:
            assert client.payload_mode == "file"
            backend = BridgeBackend(client)
            estimator = BridgeVisualEstimator(client)
            control = gv()
            image = backend.generate(control)
            assert image.payload == make_image_payload(
                control.class_id, control.latent
            )
            assert image.ref is not None  # file mode carries a path reference
            attrs = estimator.estimate(image)
            assert np.allclose(attrs.values, attrs_from_payload(image.payload, 2))
