"""Audio ingestion and log-mel feature extraction.

The pipeline is: read a 44.1 kHz WAV, cut it into half-second clips, take a
centered Hann-windowed STFT of each clip, map the power spectrum through a
Slaney-style mel filterbank and compress to decibels.  Gaussian noise can be
added to the resulting features for training augmentation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile


class DspError(ValueError):
    pass


class RateMismatch(DspError):
    pass


class UnsupportedEncoding(DspError):
    pass


class DegenerateFilter(DspError):
    pass


@dataclass(frozen=True)
class DspConfig:
    sample_rate: int = 44100
    clip_seconds: float = 0.5
    n_mels: int = 128
    # 2048/512 rather than the literal 512/2048: only this pair gives 44 frames
    fft_size: int = 2048
    hop_length: int = 512
    f_min: float = 0.0
    f_max: float | None = None
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.fft_size < 2 or self.fft_size & (self.fft_size - 1):
            raise DspError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.hop_length < 1:
            raise DspError("hop_length must be >= 1")
        if self.n_mels < 1:
            raise DspError("n_mels must be >= 1")
        if self.clip_seconds <= 0:
            raise DspError("clip_seconds must be positive")
        if self.log_floor <= 0:
            raise DspError("log_floor must be positive")
        if not 0 <= self.f_min < self.fmax <= self.sample_rate / 2:
            raise DspError(f"need 0 <= f_min < f_max <= {self.sample_rate / 2}")

    @property
    def fmax(self) -> float:
        return self.sample_rate / 2 if self.f_max is None else float(self.f_max)

    @property
    def clip_samples(self) -> int:
        return int(round(self.clip_seconds * self.sample_rate))

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def n_frames(self, n_samples: int | None = None) -> int:
        if n_samples is None:
            n_samples = self.clip_samples
        return 1 + n_samples // self.hop_length


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = 44100

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DspError("AudioClip samples must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise DspError("AudioClip contains non-finite samples")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MelSpectrogram:
    values: np.ndarray
    config: DspConfig = field(default_factory=DspConfig)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


_INT_SCALE = {np.dtype(np.int16): 32768.0, np.dtype(np.int32): 2147483648.0}


def load_wav(path, expected_rate: int = 44100) -> AudioClip:
    """Read a PCM WAV file as a mono clip with samples in [-1, 1].

    16- and 32-bit integer and 32-bit float encodings are accepted. Stereo
    files are averaged across channels.  Files at any rate other than
    ``expected_rate`` raise :class:`RateMismatch`; nothing is resampled.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise UnsupportedEncoding(f"{path}: {exc}") from exc
    if rate != expected_rate:
        raise RateMismatch(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    if data.dtype in _INT_SCALE:
        samples = data.astype(np.float64) / _INT_SCALE[data.dtype]
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedEncoding(f"{path}: unsupported sample type {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return AudioClip(samples, rate)


def write_wav(path, clip: AudioClip, dtype=np.int16):
    """Write ``clip`` as 16-bit PCM (default) or 32-bit float."""
    x = np.clip(clip.samples, -1.0, 1.0)
    if np.dtype(dtype) == np.int16:
        data = np.round(x * 32767).astype(np.int16)
    else:
        data = x.astype(np.float32)
    wavfile.write(path, clip.sample_rate, data)


def slice_clips(audio: AudioClip, clip_seconds: float = 0.5) -> list[AudioClip]:
    if clip_seconds <= 0:
        raise DspError("clip_seconds must be positive")
    size = int(round(clip_seconds * audio.sample_rate))
    n = len(audio) // size
    return [AudioClip(audio.samples[i * size:(i + 1) * size], audio.sample_rate)
            for i in range(n)]


def hann_window(n: int) -> np.ndarray:
    # periodic form, as used for spectral analysis
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def stft(clip: AudioClip, config: DspConfig = DspConfig()) -> np.ndarray:
    """One-sided STFT, shape ``(fft_size // 2 + 1, n_frames)``.

    The signal is reflection-padded by ``fft_size // 2`` on both sides so that
    frame ``t`` is centered on sample ``t * hop_length``.
    """
    x = clip.samples
    if len(x) < 1:
        raise DspError("cannot transform an empty clip")
    n_fft, hop = config.fft_size, config.hop_length
    pad = n_fft // 2
    padded = np.pad(x, pad, mode="reflect") if len(x) > 1 else np.full(len(x) + 2 * pad, x[0])
    n_frames = config.n_frames(len(x))
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = padded[idx] * hann_window(n_fft)
    return np.fft.rfft(frames, axis=1).T


def power_spectrogram(spec: np.ndarray) -> np.ndarray:
    return spec.real ** 2 + spec.imag ** 2


def hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    with np.errstate(divide="ignore"):
        log_part = min_log_mel + np.log(np.maximum(f, min_log_hz) / min_log_hz) / logstep
    return np.where(f >= min_log_hz, log_part, f / f_sp)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(m >= min_log_mel,
                    min_log_hz * np.exp(logstep * (m - min_log_mel)),
                    f_sp * m)


def mel_center_frequencies(config: DspConfig) -> np.ndarray:
    """Band edges in Hz: ``n_mels + 2`` points uniformly spaced in mel."""
    mels = np.linspace(hz_to_mel(config.f_min), hz_to_mel(config.fmax), config.n_mels + 2)
    return mel_to_hz(mels)


def mel_filterbank(config: DspConfig = DspConfig()) -> np.ndarray:
    """Triangular, area-normalized mel filters, shape ``(n_mels, n_bins)``."""
    fft_freqs = np.linspace(0, config.sample_rate / 2, config.n_bins)
    edges = mel_center_frequencies(config)
    widths = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / widths[:-1, None]
    upper = ramps[2:] / widths[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    empty = np.flatnonzero(~np.any(weights > 0, axis=1))
    if empty.size:
        raise DegenerateFilter(
            f"{empty.size} of {config.n_mels} mel filters cover no FFT bin "
            f"(fft_size={config.fft_size}); lower n_mels or raise fft_size")
    return weights


_FILTERBANK_CACHE: dict[DspConfig, np.ndarray] = {}


def _cached_filterbank(config: DspConfig) -> np.ndarray:
    fb = _FILTERBANK_CACHE.get(config)
    if fb is None:
        fb = _FILTERBANK_CACHE[config] = mel_filterbank(config)
    return fb


def log_mel(clip: AudioClip, config: DspConfig = DspConfig()) -> MelSpectrogram:
    power = power_spectrogram(stft(clip, config))
    mel = _cached_filterbank(config) @ power
    return MelSpectrogram(10.0 * np.log10(np.maximum(mel, config.log_floor)), config)


def add_gaussian_noise(mel: MelSpectrogram, sigma: float, rng: np.random.Generator) -> MelSpectrogram:
    """Perturb every entry with independent N(0, sigma^2) noise (dB units)."""
    if sigma < 0:
        raise DspError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return MelSpectrogram(mel.values.copy(), mel.config)
    return MelSpectrogram(mel.values + rng.normal(0.0, sigma, size=mel.values.shape), mel.config)


def extract_song(audio: AudioClip, config: DspConfig = DspConfig()) -> np.ndarray:
    """Log-mel features of every full clip in a song, ``(n_clips, n_mels, n_frames)``."""
    if audio.sample_rate != config.sample_rate:
        raise RateMismatch(f"audio at {audio.sample_rate} Hz, config expects {config.sample_rate} Hz")
    clips = slice_clips(audio, config.clip_seconds)
    out = np.empty((len(clips), config.n_mels, config.n_frames()), dtype=np.float64)
    for i, clip in enumerate(clips):
        out[i] = log_mel(clip, config).values
    return out


# feature file: "MELF", version, n_clips, n_mels, n_frames, then float32 data
MELF_MAGIC = b"MELF"
MELF_VERSION = 1
_MELF_HEADER = struct.Struct("<4sIIII")


def write_features(path, features: np.ndarray):
    features = np.asarray(features)
    if features.ndim != 3:
        raise DspError("features must have shape (n_clips, n_mels, n_frames)")
    n_clips, n_mels, n_frames = features.shape
    with open(path, "wb") as fh:
        fh.write(_MELF_HEADER.pack(MELF_MAGIC, MELF_VERSION, n_clips, n_mels, n_frames))
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _MELF_HEADER.size:
        raise DspError(f"{path}: truncated feature file")
    magic, version, n_clips, n_mels, n_frames = _MELF_HEADER.unpack_from(raw)
    if magic != MELF_MAGIC:
        raise DspError(f"{path}: bad magic {magic!r}")
    if version != MELF_VERSION:
        raise DspError(f"{path}: unsupported feature file version {version}")
    count = n_clips * n_mels * n_frames
    body = raw[_MELF_HEADER.size:]
    if len(body) != 4 * count:
        raise DspError(f"{path}: expected {count} floats, found {len(body) // 4}")
    data = np.frombuffer(body, dtype="<f4").reshape(n_clips, n_mels, n_frames)
    return data.astype(np.float64)
