import numpy as np
import pytest

from moodcanvas import (
    AttributeVector,
    AudioSegment,
    DataError,
    DimensionError,
    GeneratorVector,
    ImageHandle,
    SamplePair,
    divergence,
)


class TestAttributeVector:
    def test_holds_values(self):
        v = AttributeVector(np.array([0.5, -0.25]))
        assert len(v) == 2
        assert np.array_equal(v.values, [0.5, -0.25])

    def test_accepts_lists(self):
        v = AttributeVector([1.0, 2.0, 3.0])
        assert v.values.dtype == np.float64
        assert len(v) == 3

    def test_values_read_only(self):
        v = AttributeVector([0.0, 1.0])
        with pytest.raises(ValueError):
            v.values[0] = 9.0

    def test_source_copied(self):
        src = np.array([1.0, 2.0])
        v = AttributeVector(src)
        src[0] = 99.0
        assert v.values[0] == 1.0

    def test_equality_by_value(self):
        assert AttributeVector([1.0, 2.0]) == AttributeVector([1.0, 2.0])
        assert AttributeVector([1.0, 2.0]) != AttributeVector([1.0, 2.5])

    def test_rejects_non_finite(self):
        with pytest.raises(DataError):
            AttributeVector([np.nan, 0.0])
        with pytest.raises(DataError):
            AttributeVector([np.inf, 0.0])

    def test_rejects_non_1d(self):
        with pytest.raises(DataError):
            AttributeVector(np.zeros((2, 2)))

    def test_rejects_empty(self):
        with pytest.raises(DataError):
            AttributeVector([])


class TestGeneratorVector:
    def test_holds_class_and_latent(self):
        g = GeneratorVector(class_id=7, latent=np.zeros(4))
        assert g.class_id == 7
        assert g.latent.shape == (4,)

    def test_rejects_negative_class(self):
        with pytest.raises(DataError):
            GeneratorVector(class_id=-1, latent=np.zeros(4))

    def test_rejects_non_integer_class(self):
        with pytest.raises(DataError):
            GeneratorVector(class_id=1.5, latent=np.zeros(4))

    def test_rejects_bool_class(self):
        with pytest.raises(DataError):
            GeneratorVector(class_id=True, latent=np.zeros(4))

    def test_latent_read_only(self):
        g = GeneratorVector(class_id=0, latent=np.ones(3))
        with pytest.raises(ValueError):
            g.latent[0] = 2.0

    def test_rejects_non_finite_latent(self):
        with pytest.raises(DataError):
            GeneratorVector(class_id=0, latent=[np.nan])


class TestDivergence:
    def test_euclidean_distance(self):
        a = AttributeVector([0.0, 0.0])
        b = AttributeVector([3.0, 4.0])
        assert divergence(a, b) == pytest.approx(5.0)

    def test_zero_for_identical(self):
        a = AttributeVector([0.3, -0.7])
        assert divergence(a, a) == 0.0

    def test_symmetric(self):
        a = AttributeVector([1.0, 2.0])
        b = AttributeVector([-0.5, 0.25])
        assert divergence(a, b) == divergence(b, a)

    def test_accepts_raw_arrays(self):
        assert divergence([0.0, 0.0], [1.0, 0.0]) == pytest.approx(1.0)

    def test_mismatched_lengths(self):
        with pytest.raises(DimensionError):
            divergence(AttributeVector([1.0]), AttributeVector([1.0, 2.0]))

    def test_matches_norm_on_random_vectors(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = rng.standard_normal(5)
            b = rng.standard_normal(5)
            assert divergence(a, b) == pytest.approx(np.sqrt(np.sum((a - b) ** 2)))


class TestSamplePair:
    def test_bundles_generator_and_attributes(self):
        g = GeneratorVector(class_id=1, latent=np.zeros(2))
        a = AttributeVector([0.1, 0.2])
        p = SamplePair(generator=g, attributes=a)
        assert p.generator is g
        assert p.attributes is a


class TestAudioSegment:
    def test_holds_samples(self):
        s = AudioSegment(samples=np.zeros(100), sample_rate=50)
        assert s.duration_seconds == pytest.approx(2.0)

    def test_rejects_out_of_range(self):
        with pytest.raises(DataError):
            AudioSegment(samples=np.array([0.0, 1.5]), sample_rate=10)

    def test_rejects_bad_rate(self):
        with pytest.raises(DataError):
            AudioSegment(samples=np.zeros(10), sample_rate=0)

    def test_samples_read_only(self):
        s = AudioSegment(samples=np.zeros(10), sample_rate=10)
        with pytest.raises(ValueError):
            s.samples[0] = 1.0


class TestImageHandle:
    def test_holds_payload(self):
        h = ImageHandle(payload=b"abc", width=2, height=3, channels=3)
        assert h.payload == b"abc"
        assert (h.width, h.height, h.channels) == (2, 3, 3)

    def test_rejects_bad_dims(self):
        with pytest.raises(DataError):
            ImageHandle(payload=b"x", width=0, height=1, channels=3)

    def test_rejects_non_bytes(self):
        with pytest.raises(DataError):
            ImageHandle(payload="not-bytes", width=1, height=1, channels=3)

    def test_optional_ref(self):
        h = ImageHandle(payload=b"x", width=1, height=1, channels=1, ref="/tmp/a.png")
        assert h.ref == "/tmp/a.png"
