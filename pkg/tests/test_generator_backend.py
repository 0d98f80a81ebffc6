import numpy as np
import pytest

from moodcanvas import (
    AttributeVector,
    DataError,
    DimensionError,
    DomainError,
    FileIOError,
    FormatError,
    GeneratorVector,
    ImageHandle,
    ParseError,
    PartialFailureError,
    SamplePair,
    SyntheticBackend,
    SyntheticBackendSpec,
    SyntheticVisualEstimator,
    load_pairs,
    sample_generator_space,
    save_pairs,
)
from moodcanvas.generator_backend import (
    corpus_digest,
    decode_synthetic_payload,
    encode_synthetic_payload,
    pairs_to_arrays,
)


class TestSyntheticTables:
    def test_matches_independent_construction(self):
        spec = SyntheticBackendSpec(num_classes=12, latent_dim=6, seed=42)
        rng = np.random.default_rng(42)
        base = rng.uniform(-1.0, 1.0, (12, 2))
        mixing = rng.normal(0.0, np.sqrt(0.1 / np.sqrt(6)), (12, 2, 6))
        assert np.array_equal(spec.base_attributes, base)
        assert np.array_equal(spec.mixing, mixing)

    def test_base_attributes_in_unit_box(self):
        spec = SyntheticBackendSpec(num_classes=100, latent_dim=8, seed=0)
        assert np.all(np.abs(spec.base_attributes) <= 1.0)

    def test_mixing_scale_shrinks_with_dim(self):
        # empirical variance of the mixing entries tracks 0.1 / sqrt(d)
        spec = SyntheticBackendSpec(num_classes=200, latent_dim=64, seed=1)
        assert np.var(spec.mixing) == pytest.approx(0.1 / 8.0, rel=0.05)

    def test_estimate_is_clipped_affine_map(self):
        spec = SyntheticBackendSpec(num_classes=5, latent_dim=4, seed=7)
        rng = np.random.default_rng(0)
        for _ in range(10):
            k = int(rng.integers(0, 5))
            z = rng.standard_normal(4)
            expected = np.clip(
                spec.base_attributes[k] + spec.mixing[k] @ z, -3.0, 3.0
            )
            got = spec.attributes_for(np.array([k]), z[None, :])[0]
            assert np.allclose(got, expected)

    def test_clamp_engages_for_huge_latents(self):
        spec = SyntheticBackendSpec(num_classes=3, latent_dim=4, seed=0)
        z = np.full(4, 1e6)
        out = spec.attributes_for(np.array([0]), z[None, :])[0]
        assert np.all(np.abs(out) <= 3.0)

    def test_validation(self):
        with pytest.raises(DataError):
            SyntheticBackendSpec(num_classes=0, latent_dim=4)


class TestSyntheticPayload:
    def test_round_trip(self):
        gv = GeneratorVector(class_id=17, latent=np.linspace(-1, 1, 9))
        back = decode_synthetic_payload(encode_synthetic_payload(gv))
        assert back.class_id == 17
        assert np.array_equal(back.latent, gv.latent)

    def test_foreign_payload_rejected(self):
        with pytest.raises(FormatError):
            decode_synthetic_payload(b"PNG\x89 pretend image bytes")

    def test_truncated_payload_rejected(self):
        gv = GeneratorVector(class_id=1, latent=np.zeros(4))
        payload = encode_synthetic_payload(gv)
        with pytest.raises(FormatError):
            decode_synthetic_payload(payload[:-3])


class TestSyntheticBackend:
    def test_generate_embeds_control(self, small_backend):
        gv = GeneratorVector(class_id=3, latent=np.arange(16, dtype=float) / 16)
        image = small_backend.generate(gv)
        assert isinstance(image, ImageHandle)
        back = decode_synthetic_payload(image.payload)
        assert back.class_id == 3
        assert np.array_equal(back.latent, gv.latent)

    def test_rejects_out_of_range_class(self, small_backend):
        gv = GeneratorVector(class_id=999, latent=np.zeros(16))
        with pytest.raises(DomainError):
            small_backend.generate(gv)

    def test_rejects_wrong_latent_dim(self, small_backend):
        gv = GeneratorVector(class_id=0, latent=np.zeros(5))
        with pytest.raises(DimensionError):
            small_backend.generate(gv)

    def test_no_pixels(self, small_backend):
        assert small_backend.has_pixels is False
        assert small_backend.supports_stylize is False


class TestSyntheticEstimator:
    def test_inverts_generate(self, small_spec, small_backend, small_estimator):
        gv = GeneratorVector(class_id=7, latent=np.random.default_rng(1).standard_normal(16))
        attrs = small_estimator.estimate(small_backend.generate(gv))
        expected = np.clip(
            small_spec.base_attributes[7] + small_spec.mixing[7] @ gv.latent, -3, 3
        )
        assert np.allclose(attrs.values, expected)

    def test_foreign_payload(self, small_estimator):
        fake = ImageHandle(payload=b"garbage", width=1, height=1, channels=3)
        with pytest.raises(FormatError):
            small_estimator.estimate(fake)

    def test_wrong_latent_dim_payload(self, small_estimator):
        gv = GeneratorVector(class_id=0, latent=np.zeros(4))
        image = ImageHandle(payload=encode_synthetic_payload(gv), width=1, height=1, channels=3)
        with pytest.raises(FormatError):
            small_estimator.estimate(image)


class TestSampling:
    def test_count_and_ranges(self, small_corpus, small_spec):
        assert len(small_corpus) == 600
        for p in small_corpus[:50]:
            assert 0 <= p.generator.class_id < small_spec.num_classes
            assert p.generator.latent.size == small_spec.latent_dim
            assert len(p.attributes) == 2

    def test_attributes_equal_estimator_output(self, small_corpus, small_spec):
        class_ids, latents, attrs = pairs_to_arrays(small_corpus)
        expected = small_spec.attributes_for(class_ids, latents)
        assert np.allclose(attrs, expected)

    def test_draw_order_pinned(self, small_backend, small_estimator, small_spec):
        pairs = sample_generator_space(small_backend, small_estimator, 40, seed=123)
        rng = np.random.default_rng(123)
        classes = rng.integers(0, small_spec.num_classes, 40)
        latents = rng.standard_normal((40, small_spec.latent_dim))
        got_classes, got_latents, _ = pairs_to_arrays(pairs)
        assert np.array_equal(got_classes, classes)
        assert np.array_equal(got_latents, latents)

    def test_deterministic(self, small_backend, small_estimator):
        a = sample_generator_space(small_backend, small_estimator, 30, seed=5)
        b = sample_generator_space(small_backend, small_estimator, 30, seed=5)
        assert corpus_digest(a) == corpus_digest(b)

    def test_seed_changes_draws(self, small_backend, small_estimator):
        a = sample_generator_space(small_backend, small_estimator, 30, seed=5)
        b = sample_generator_space(small_backend, small_estimator, 30, seed=6)
        assert corpus_digest(a) != corpus_digest(b)

    def test_latent_draws_look_standard_normal(self, small_backend, small_estimator):
        pairs = sample_generator_space(small_backend, small_estimator, 2000, seed=0)
        _, latents, _ = pairs_to_arrays(pairs)
        assert abs(latents.mean()) < 0.02
        assert abs(latents.std() - 1.0) < 0.02

    def test_partial_failure_carries_completed(self, small_backend):
        class FlakyEstimator:
            n_attributes = 2
            calls = 0

            def estimate(self, image):
                self.calls += 1
                if self.calls > 7:
                    raise RuntimeError("backend fell over")
                return AttributeVector([0.0, 0.0])

        with pytest.raises(PartialFailureError) as excinfo:
            sample_generator_space(small_backend, FlakyEstimator(), 20, seed=0)
        assert len(excinfo.value.completed) == 7

    def test_rejects_zero_draws(self, small_backend, small_estimator):
        with pytest.raises(DataError):
            sample_generator_space(small_backend, small_estimator, 0, seed=0)


class TestPairPersistence:
    def test_round_trip(self, tmp_path, small_corpus):
        path = tmp_path / "pairs.jsonl"
        save_pairs(small_corpus[:20], path)
        back = load_pairs(path)
        assert len(back) == 20
        for orig, loaded in zip(small_corpus[:20], back):
            assert loaded.generator.class_id == orig.generator.class_id
            # values survive the float32 wire format
            assert np.allclose(loaded.generator.latent, orig.generator.latent, atol=1e-6)
            assert np.allclose(loaded.attributes.values, orig.attributes.values, atol=1e-6)

    def test_one_json_object_per_line(self, tmp_path, small_corpus):
        path = tmp_path / "pairs.jsonl"
        save_pairs(small_corpus[:5], path)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 5
        import json

        doc = json.loads(lines[0])
        assert set(doc) == {"class_id", "latent", "attributes"}

    def test_corrupt_line_reports_byte_offset(self, tmp_path, small_corpus):
        path = tmp_path / "pairs.jsonl"
        save_pairs(small_corpus[:3], path)
        text = path.read_text()
        lines = text.split("\n")
        lines[1] = lines[1][: len(lines[1]) // 2]
        path.write_text("\n".join(lines))
        with pytest.raises(ParseError) as excinfo:
            load_pairs(path)
        assert excinfo.value.byte_offset is not None
        assert excinfo.value.byte_offset >= len(lines[0])

    def test_missing_field(self, tmp_path):
        path = tmp_path / "pairs.jsonl"
        path.write_text('{"class_id": 1, "latent": [0.0]}\n')
        with pytest.raises(FormatError):
            load_pairs(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileIOError):
            load_pairs(tmp_path / "none.jsonl")

    def test_empty_file(self, tmp_path):
        path = tmp_path / "pairs.jsonl"
        path.write_text("")
        with pytest.raises(FormatError):
            load_pairs(path)

    def test_digest_sensitive_to_content(self, small_corpus):
        digest = corpus_digest(small_corpus)
        flipped = list(small_corpus)
        flipped[0] = SamplePair(
            generator=flipped[0].generator,
            attributes=AttributeVector(flipped[0].attributes.values + 0.5),
        )
        assert corpus_digest(flipped) != digest
