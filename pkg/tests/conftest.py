import wave

import numpy as np
import pytest

from moodcanvas import (
    SyntheticBackend,
    SyntheticBackendSpec,
    SyntheticVisualEstimator,
    build_attribute_view,
    sample_generator_space,
)


def write_wav(path, data, sample_rate=22050, sample_width=2, channels=1):
    """Write float samples in [-1, 1] as PCM WAV."""
    data = np.asarray(data, dtype=np.float64)
    if channels > 1 and data.ndim == 2:
        data = data.reshape(-1)
    if sample_width == 2:
        pcm = (np.clip(data, -1, 1) * 32767).astype("<i2").tobytes()
    elif sample_width == 3:
        ints = (np.clip(data, -1, 1) * 8388607).astype(np.int64)
        ints[ints < 0] += 1 << 24
        raw = np.zeros((ints.size, 3), dtype=np.uint8)
        raw[:, 0] = ints & 0xFF
        raw[:, 1] = (ints >> 8) & 0xFF
        raw[:, 2] = (ints >> 16) & 0xFF
        pcm = raw.tobytes()
    else:
        raise ValueError(f"unsupported width {sample_width}")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(channels)
        fh.setsampwidth(sample_width)
        fh.setframerate(sample_rate)
        fh.writeframes(pcm)
    return path


def sine(seconds, freq, sample_rate=22050, amplitude=0.5):
    t = np.arange(int(round(seconds * sample_rate))) / sample_rate
    return amplitude * np.sin(2 * np.pi * freq * t)


@pytest.fixture(scope="session")
def small_spec():
    return SyntheticBackendSpec(num_classes=50, latent_dim=16, seed=3)


@pytest.fixture(scope="session")
def small_backend(small_spec):
    return SyntheticBackend(small_spec)


@pytest.fixture(scope="session")
def small_estimator(small_spec):
    return SyntheticVisualEstimator(small_spec)


@pytest.fixture(scope="session")
def small_corpus(small_backend, small_estimator):
    return sample_generator_space(small_backend, small_estimator, 600, seed=11)


@pytest.fixture(scope="session")
def small_view(small_corpus):
    return build_attribute_view(small_corpus, n_clusters=6, n_subclusters=3, seed=5)
