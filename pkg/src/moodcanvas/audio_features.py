"""Audio feature extraction: MFCC, chroma-energy (CENS) and tempogram.

One 436-dimensional vector is produced per 500 ms window:

    [0:40]    mean MFCC (40 coefficients)
    [40:52]   mean CENS (12 pitch classes)
    [52:436]  mean tempogram (384 autocorrelation lags)

Everything here is deterministic and pure; there is no randomness in this
module.  WAV PCM (16/24-bit) is the supported input codec.  Resampling,
when needed, uses band-limited polyphase (sinc) filtering — declared in
``RESAMPLE_METHOD``.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.signal

from .core_types import AudioSegment
from .errors import (
    DataError,
    FileIOError,
    FormatError,
    InsufficientDataError,
    VersionedFormatError,
)

RESAMPLE_METHOD = "band-limited sinc (polyphase)"

# Binary feature-matrix file: magic + version + shape header, then row-major f32.
FEATURE_FILE_MAGIC = b"DSFT"
FEATURE_FILE_VERSION = 1

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class FeatureConfig:
    """Extraction parameters. The defaults pin the 436-dim layout."""

    sample_rate: int = 22050
    fft_size: int = 2048
    hop_length: int = 512
    mel_bands: int = 128
    mfcc_count: int = 40
    chroma_bins: int = 12
    cens_smoothing_window: int = 41
    cens_downsample: int = 10
    tempogram_window: int = 384
    window_ms: int = 500

    def __post_init__(self):
        for name in (
            "sample_rate", "fft_size", "hop_length", "mel_bands", "mfcc_count",
            "chroma_bins", "cens_smoothing_window", "cens_downsample",
            "tempogram_window", "window_ms",
        ):
            if getattr(self, name) <= 0:
                raise DataError(f"FeatureConfig.{name} must be positive")
        if self.fft_size & (self.fft_size - 1) != 0:
            raise DataError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.mfcc_count > self.mel_bands:
            raise DataError("mfcc_count must not exceed mel_bands")

    @property
    def feature_dim(self) -> int:
        return self.mfcc_count + self.chroma_bins + self.tempogram_window

    @property
    def window_samples(self) -> int:
        return int(round(self.window_ms * self.sample_rate / 1000.0))


@dataclass(frozen=True)
class FeatureSequence:
    """Per-window feature vectors for one piece of audio."""

    windows: np.ndarray  # (n_windows, feature_dim)
    window_duration_ms: int
    song_id: str = field(default="")

    def __post_init__(self):
        arr = np.asarray(self.windows, dtype=np.float64)
        if arr.ndim != 2:
            raise DataError(f"feature windows must be a 2-D matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("feature windows contain non-finite entries")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "windows", arr)

    def __len__(self) -> int:
        return int(self.windows.shape[0])


# ---------------------------------------------------------------------------
# Audio loading


def _decode_pcm(raw: bytes, sample_width: int, n_channels: int) -> np.ndarray:
    if sample_width == 2:
        data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif sample_width == 3:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3)
        # sign-extend 24-bit little-endian into int32
        as32 = (
            b[:, 0].astype(np.uint32)
            | (b[:, 1].astype(np.uint32) << 8)
            | (b[:, 2].astype(np.uint32) << 16)
        )
        signed = as32.astype(np.int32)
        signed[signed >= 1 << 23] -= 1 << 24
        data = signed.astype(np.float64) / 8388608.0
    else:
        raise FormatError(
            f"unsupported WAV sample width {sample_width * 8} bit (16/24-bit PCM supported)"
        )
    if n_channels > 1:
        data = data.reshape(-1, n_channels).mean(axis=1)
    return data


def load_audio(path, target_rate: int) -> AudioSegment:
    """Load a WAV file as mono audio in [-1, 1] at ``target_rate`` Hz.

    Multi-channel input is averaged to mono; rate conversion uses
    band-limited polyphase resampling.
    """
    if target_rate <= 0:
        raise DataError(f"target_rate must be positive, got {target_rate}")
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sample_width = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except FileNotFoundError as exc:
        raise FileIOError(f"audio file not found: {path}") from exc
    except PermissionError as exc:
        raise FileIOError(f"audio file not readable: {path}") from exc
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"not a readable WAV file: {path} ({exc})") from exc

    if n_frames == 0 or len(raw) == 0:
        raise FormatError(f"audio file contains no samples: {path}")
    data = _decode_pcm(raw, sample_width, n_channels)
    if rate != target_rate:
        g = np.gcd(int(target_rate), int(rate))
        data = scipy.signal.resample_poly(data, target_rate // g, rate // g)
    data = np.clip(data, -1.0, 1.0)
    if data.size == 0:
        raise FormatError(f"audio file resampled to zero length: {path}")
    return AudioSegment(samples=data, sample_rate=int(target_rate))


# ---------------------------------------------------------------------------
# Spectral plumbing


def _frame_signal(x: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    if x.size < cfg.fft_size:
        raise InsufficientDataError(
            f"need at least {cfg.fft_size} samples for one analysis frame, got {x.size}"
        )
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.fft_size)[:: cfg.hop_length]
    return np.ascontiguousarray(frames)


def _power_spectrum(segment: AudioSegment, cfg: FeatureConfig) -> np.ndarray:
    """Hann-windowed STFT power spectrum, shape (frames, fft_size // 2 + 1)."""
    frames = _frame_signal(segment.samples, cfg)
    window = np.hanning(cfg.fft_size)
    spectrum = scipy.fft.rfft(frames * window, axis=1)
    return np.abs(spectrum) ** 2


def _hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def _mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """Triangular mel filters over 0..sample_rate/2, shape (mel_bands, bins).

    Triangles are evaluated at the continuous centre frequency of each FFT
    bin, so no filter collapses to zero even at the bottom of the range.
    """
    n_bins = cfg.fft_size // 2 + 1
    bin_hz = np.arange(n_bins) * cfg.sample_rate / cfg.fft_size
    mel_edges = np.linspace(_hz_to_mel(0.0), _hz_to_mel(cfg.sample_rate / 2.0), cfg.mel_bands + 2)
    hz_edges = _mel_to_hz(mel_edges)
    fb = np.zeros((cfg.mel_bands, n_bins))
    for m in range(cfg.mel_bands):
        left, centre, right = hz_edges[m], hz_edges[m + 1], hz_edges[m + 2]
        rising = (bin_hz - left) / (centre - left)
        falling = (right - bin_hz) / (right - centre)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def _log_mel_spectrogram(segment: AudioSegment, cfg: FeatureConfig) -> np.ndarray:
    power = _power_spectrum(segment, cfg)
    mel = power @ mel_filterbank(cfg).T
    return np.log(np.maximum(mel, LOG_FLOOR))


# ---------------------------------------------------------------------------
# Feature matrices


def mfcc(segment: AudioSegment, cfg: FeatureConfig) -> np.ndarray:
    """Mel-frequency cepstral coefficients, shape (frames, mfcc_count).

    Chain: Hann STFT power -> mel filterbank -> natural log (floor 1e-10)
    -> orthonormal DCT-II -> first ``mfcc_count`` coefficients.
    """
    log_mel = _log_mel_spectrogram(segment, cfg)
    cepstrum = scipy.fft.dct(log_mel, type=2, norm="ortho", axis=1)
    return cepstrum[:, : cfg.mfcc_count]


def _chroma_fold(cfg: FeatureConfig) -> np.ndarray:
    """Map FFT bins to 12 pitch classes (A440 reference, A = index 9)."""
    n_bins = cfg.fft_size // 2 + 1
    bin_hz = np.arange(n_bins) * cfg.sample_rate / cfg.fft_size
    fold = np.zeros((cfg.chroma_bins, n_bins))
    positive = bin_hz > 0
    midi = 69.0 + 12.0 * np.log2(bin_hz[positive] / 440.0)
    pitch_class = np.mod(np.round(midi).astype(int), 12)
    cols = np.nonzero(positive)[0]
    fold[pitch_class, cols] = 1.0
    return fold


_CENS_THRESHOLDS = np.array([0.05, 0.1, 0.2, 0.4])
_CENS_VALUES = np.array([0.0, 0.25, 0.5, 0.75, 1.0])


def cens(segment: AudioSegment, cfg: FeatureConfig) -> np.ndarray:
    """Quantized, smoothed, downsampled chroma energy, shape (cens_frames, 12).

    Chain: fold STFT power into pitch classes -> per-frame l1 normalization
    (zero frames stay zero) -> threshold quantization -> Hann smoothing over
    time -> downsample -> per-frame l2 normalization (zero frames stay zero).
    """
    power = _power_spectrum(segment, cfg)
    chroma = power @ _chroma_fold(cfg).T
    totals = chroma.sum(axis=1, keepdims=True)
    nonzero = totals[:, 0] > 0
    chroma[nonzero] /= totals[nonzero]
    quantized = _CENS_VALUES[np.searchsorted(_CENS_THRESHOLDS, chroma, side="right")]
    kernel = np.hanning(cfg.cens_smoothing_window)[:, None]
    smoothed = scipy.signal.convolve(quantized, kernel, mode="same")
    down = smoothed[:: cfg.cens_downsample]
    norms = np.linalg.norm(down, axis=1, keepdims=True)
    out = np.where(norms > 0, down / np.where(norms > 0, norms, 1.0), 0.0)
    return out


def onset_envelope(segment: AudioSegment, cfg: FeatureConfig) -> np.ndarray:
    """Onset strength per frame: rectified spectral flux on the log-mel bands."""
    log_mel = _log_mel_spectrogram(segment, cfg)
    flux = np.maximum(0.0, np.diff(log_mel, axis=0)).mean(axis=1)
    return np.concatenate([[0.0], flux])


def tempogram(segment: AudioSegment, cfg: FeatureConfig) -> np.ndarray:
    """Local autocorrelation of the onset envelope, shape (frames, window).

    Each frame's centred ``tempogram_window`` slice of the (zero-padded)
    envelope is autocorrelated via FFT; lags 0..window-1 are kept and the
    column is normalized by its lag-0 value (left untouched when zero).
    """
    env = onset_envelope(segment, cfg)
    w = cfg.tempogram_window
    padded = np.concatenate([np.zeros(w // 2), env, np.zeros(w - w // 2)])
    slices = np.lib.stride_tricks.sliding_window_view(padded, w)[: env.size]
    n_fft = int(2 ** np.ceil(np.log2(2 * w - 1)))
    spectrum = scipy.fft.rfft(slices, n=n_fft, axis=1)
    ac = scipy.fft.irfft(np.abs(spectrum) ** 2, n=n_fft, axis=1)[:, :w]
    lag0 = ac[:, :1].copy()
    lag0[lag0 == 0.0] = 1.0
    return ac / lag0


# ---------------------------------------------------------------------------
# Windowed pooling


def extract_feature_sequence(
    segment: AudioSegment, cfg: FeatureConfig, song_id: str = ""
) -> FeatureSequence:
    """Pool frame-level features into non-overlapping 500 ms window vectors.

    A trailing remainder of at least half a window is completed by zero-
    padding the signal; a shorter remainder is dropped.  Frame-to-window
    assignment uses the frame's start sample.
    """
    win = cfg.window_samples
    n = segment.samples.size
    if n < win:
        raise InsufficientDataError(
            f"need at least one {cfg.window_ms} ms window ({win} samples), got {n}"
        )
    full, rem = divmod(n, win)
    if rem * 2 >= win:
        n_windows = full + 1
        padded = np.concatenate([segment.samples, np.zeros(n_windows * win - n)])
        segment = AudioSegment(samples=padded, sample_rate=segment.sample_rate)
    else:
        n_windows = full

    mfcc_mat = mfcc(segment, cfg)
    cens_mat = cens(segment, cfg)
    tempo_mat = tempogram(segment, cfg)

    frame_win = (np.arange(mfcc_mat.shape[0]) * cfg.hop_length) // win
    cens_win = (np.arange(cens_mat.shape[0]) * cfg.cens_downsample * cfg.hop_length) // win

    out = np.zeros((n_windows, cfg.feature_dim))
    for w_idx in range(n_windows):
        fsel = frame_win == w_idx
        csel = cens_win == w_idx
        if fsel.any():
            out[w_idx, : cfg.mfcc_count] = mfcc_mat[fsel].mean(axis=0)
            off = cfg.mfcc_count + cfg.chroma_bins
            out[w_idx, off:] = tempo_mat[fsel].mean(axis=0)
        if csel.any():
            out[w_idx, cfg.mfcc_count : cfg.mfcc_count + cfg.chroma_bins] = cens_mat[csel].mean(
                axis=0
            )
    return FeatureSequence(windows=out, window_duration_ms=cfg.window_ms, song_id=song_id)


# ---------------------------------------------------------------------------
# Feature file interchange (binary f32 matrix)


def save_feature_matrix(matrix: np.ndarray, path) -> None:
    """Write a matrix as magic/version/rows/cols header plus row-major f32."""
    arr = np.ascontiguousarray(np.asarray(matrix, dtype=np.float32))
    if arr.ndim != 2:
        raise DataError(f"feature matrix must be 2-D, got shape {arr.shape}")
    header = FEATURE_FILE_MAGIC + struct.pack(
        "<III", FEATURE_FILE_VERSION, arr.shape[0], arr.shape[1]
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes(order="C"))


def load_feature_matrix(path) -> np.ndarray:
    """Read a matrix written by :func:`save_feature_matrix` (as float64)."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError as exc:
        raise FileIOError(f"feature file not found: {path}") from exc
    if len(blob) < 16 or blob[:4] != FEATURE_FILE_MAGIC:
        raise FormatError(f"not a feature matrix file: {path}")
    version, rows, cols = struct.unpack("<III", blob[4:16])
    if version != FEATURE_FILE_VERSION:
        raise VersionedFormatError(
            f"feature file version {version} not supported (expected {FEATURE_FILE_VERSION})",
            found=version,
            expected=FEATURE_FILE_VERSION,
        )
    expected = 16 + rows * cols * 4
    if len(blob) != expected:
        raise FormatError(
            f"feature file truncated or padded: {path} ({len(blob)} bytes, expected {expected})"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=16)
    return data.reshape(rows, cols).astype(np.float64)
