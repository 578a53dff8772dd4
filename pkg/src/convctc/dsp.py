"""Audio ingestion, augmentation and log-mel front end.

Everything between a WAV file on disk and the matrix fed to the network.
All functions are pure given an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AudioClip",
    "FeatureConfig",
    "MelSpectrogram",
    "WavFormatError",
    "UnsupportedWavError",
    "read_wav",
    "write_wav",
    "resample",
    "mix_noise",
    "random_stretch",
    "hz_to_mel",
    "mel_to_hz",
    "mel_filterbank",
    "frame_count",
    "log_mel",
    "normalize_features",
]


class WavFormatError(ValueError):
    """The file is not a well-formed RIFF/WAVE container."""


class UnsupportedWavError(ValueError):
    """Well-formed WAV whose encoding we do not decode (non-PCM, not 16-bit, >2 channels)."""


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("audio samples must be finite")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz


@dataclass(frozen=True)
class FeatureConfig:
    frame_len_ms: float = 25.0
    frame_hop_ms: float = 10.0
    mel_bins: int = 40
    fft_size: int = 512
    fmin_hz: float = 20.0
    fmax_hz: float = 7600.0
    log_floor: float = 1e-10
    # per-utterance mean/variance normalisation applied before the network
    cmvn: bool = True

    def frame_samples(self, sample_rate_hz: int) -> tuple[int, int]:
        win = int(round(self.frame_len_ms * sample_rate_hz / 1000.0))
        hop = int(round(self.frame_hop_ms * sample_rate_hz / 1000.0))
        return win, hop

    def validate(self, sample_rate_hz: int) -> None:
        if self.frame_hop_ms <= 0 or self.frame_len_ms <= 0:
            raise ValueError("frame length and hop must be positive")
        if self.frame_hop_ms > self.frame_len_ms:
            raise ValueError("frame_hop_ms must not exceed frame_len_ms")
        if self.mel_bins < 1:
            raise ValueError("mel_bins must be >= 1")
        if self.fft_size < 1 or self.fft_size & (self.fft_size - 1):
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")
        if not 0 <= self.fmin_hz < self.fmax_hz <= sample_rate_hz / 2:
            raise ValueError(
                f"need 0 <= fmin < fmax <= {sample_rate_hz / 2}, got [{self.fmin_hz}, {self.fmax_hz}]"
            )
        if not self.log_floor > 0:
            raise ValueError("log_floor must be positive")
        win, hop = self.frame_samples(sample_rate_hz)
        if hop < 1:
            raise ValueError("hop is shorter than one sample")
        if self.fft_size < win:
            raise ValueError(f"fft_size {self.fft_size} is smaller than the frame ({win} samples)")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(**d)


@dataclass(frozen=True)
class MelSpectrogram:
    frames: np.ndarray  # T x M
    config: FeatureConfig = field(default_factory=FeatureConfig)
    source_sample_rate_hz: int = 16000

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


# --------------------------------------------------------------------------
# WAV I/O


def _parse_riff(data: bytes) -> tuple[tuple, bytes]:
    if len(data) < 12:
        raise WavFormatError("file too short for a RIFF header")
    riff, _size, wave = struct.unpack("<4sI4s", data[:12])
    if riff != b"RIFF" or wave != b"WAVE":
        raise WavFormatError("missing RIFF/WAVE magic")
    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid, csize = struct.unpack("<4sI", data[pos:pos + 8])
        body = data[pos + 8:pos + 8 + csize]
        if len(body) < csize:
            raise WavFormatError(f"chunk {cid!r} truncated ({len(body)} of {csize} bytes)")
        if cid == b"fmt ":
            if csize < 16:
                raise WavFormatError("fmt chunk shorter than 16 bytes")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif cid == b"data":
            payload = body
        pos += 8 + csize + (csize & 1)
    if fmt is None:
        raise WavFormatError("no fmt chunk")
    if payload is None:
        raise WavFormatError("no data chunk")
    return fmt, payload


def read_wav(path) -> AudioClip:
    """Decode a 16-bit PCM WAV file (mono or stereo) into a mono clip.

    Stereo is averaged; integers are divided by 32768.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    (codec, channels, rate, _byte_rate, block_align, bits), payload = _parse_riff(data)
    if codec != 1:
        raise UnsupportedWavError(f"unsupported codec tag {codec} (only PCM=1)")
    if bits != 16:
        raise UnsupportedWavError(f"unsupported bit depth {bits} (only 16)")
    if channels not in (1, 2):
        raise UnsupportedWavError(f"unsupported channel count {channels}")
    if rate <= 0:
        raise WavFormatError("sample rate of zero in header")
    if block_align != 2 * channels:
        raise WavFormatError(f"block_align {block_align} inconsistent with {channels} channels")
    n_frames = len(payload) // block_align
    pcm = np.frombuffer(payload[:n_frames * block_align], dtype="<i2").astype(np.float64)
    pcm = pcm.reshape(n_frames, channels).mean(axis=1) / 32768.0
    return AudioClip(pcm, rate)


def write_wav(path, clip: AudioClip) -> None:
    """Write a clip as mono 16-bit PCM (values clipped to the int16 range)."""
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    payload = pcm.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, 1, 1, clip.sample_rate_hz, clip.sample_rate_hz * 2, 2, 16,
        b"data", len(payload),
    )
    with open(path, "wb") as fh:
        fh.write(header + payload)


# --------------------------------------------------------------------------
# time-axis resampling and augmentation


def _interp_at(samples: np.ndarray, positions: np.ndarray) -> np.ndarray:
    if samples.size == 0:
        return np.zeros(positions.shape[0])
    return np.interp(positions, np.arange(samples.size, dtype=np.float64), samples)


def resample(clip: AudioClip, target_hz: int = 16000) -> AudioClip:
    if target_hz <= 0:
        raise ValueError(f"target_hz must be positive, got {target_hz}")
    if clip.sample_rate_hz == target_hz:
        return clip
    n_out = int(round(len(clip) * target_hz / clip.sample_rate_hz))
    positions = np.arange(n_out, dtype=np.float64) * (clip.sample_rate_hz / target_hz)
    return AudioClip(_interp_at(clip.samples, positions), target_hz)


def random_stretch(clip: AudioClip, factor_range=(0.9, 1.1), rng: np.random.Generator | None = None) -> AudioClip:
    """Change the clip's duration by a random factor (plain rate change, pitch moves too)."""
    lo, hi = factor_range
    if lo <= 0 or hi < lo:
        raise ValueError(f"invalid stretch range [{lo}, {hi}]")
    if rng is None:
        rng = np.random.default_rng()
    factor = lo if lo == hi else float(rng.uniform(lo, hi))
    if factor == 1.0:
        return clip
    n_out = int(round(len(clip) * factor))
    positions = np.arange(n_out, dtype=np.float64) / factor
    return AudioClip(_interp_at(clip.samples, positions), clip.sample_rate_hz)


def mix_noise(clip: AudioClip, noise: AudioClip, snr_db: float, rng: np.random.Generator) -> AudioClip:
    """Add ``noise`` at the requested signal-to-noise ratio (dB, mean-square power).

    The noise is looped from a random offset to cover the clip.  ``snr_db=inf``
    adds nothing.
    """
    if clip.sample_rate_hz != noise.sample_rate_hz:
        raise ValueError(
            f"sample-rate mismatch: clip {clip.sample_rate_hz} Hz, noise {noise.sample_rate_hz} Hz"
        )
    noise_power = float(np.mean(noise.samples ** 2)) if len(noise) else 0.0
    if noise_power == 0.0:
        raise ValueError("noise clip has zero power")
    if math.isinf(snr_db) and snr_db > 0:
        return clip
    n = len(clip)
    offset = int(rng.integers(len(noise)))
    idx = (offset + np.arange(n)) % len(noise)
    segment = noise.samples[idx]
    seg_power = float(np.mean(segment ** 2)) if n else 0.0
    if seg_power == 0.0:
        return clip
    signal_power = float(np.mean(clip.samples ** 2))
    gain = math.sqrt(signal_power / (seg_power * 10.0 ** (snr_db / 10.0)))
    return AudioClip(np.clip(clip.samples + gain * segment, -1.0, 1.0), clip.sample_rate_hz)


# --------------------------------------------------------------------------
# log-mel features


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: FeatureConfig, sample_rate_hz: int) -> tuple[np.ndarray, np.ndarray]:
    """Triangular HTK-mel filters, shape (mel_bins, fft_size // 2 + 1), and their centre frequencies."""
    edges = mel_to_hz(np.linspace(hz_to_mel(config.fmin_hz), hz_to_mel(config.fmax_hz), config.mel_bins + 2))
    freqs = np.arange(config.fft_size // 2 + 1) * sample_rate_hz / config.fft_size
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (centre - lower)
    falling = (upper - freqs) / (upper - centre)
    return np.maximum(0.0, np.minimum(rising, falling)), edges[1:-1]


def frame_count(n_samples: int, win: int, hop: int) -> int:
    if n_samples < win:
        return 0
    return 1 + (n_samples - win) // hop


def log_mel(clip: AudioClip, config: FeatureConfig = FeatureConfig()) -> MelSpectrogram:
    sr = clip.sample_rate_hz
    config.validate(sr)
    win, hop = config.frame_samples(sr)
    n_frames = frame_count(len(clip), win, hop)
    floor = math.log(config.log_floor)
    if n_frames == 0:
        return MelSpectrogram(np.zeros((0, config.mel_bins)), config, sr)
    starts = np.arange(n_frames) * hop
    frames = clip.samples[starts[:, None] + np.arange(win)[None, :]]
    frames = frames * np.hanning(win)[None, :]
    magnitude = np.abs(np.fft.rfft(frames, n=config.fft_size, axis=1))
    bank, _ = mel_filterbank(config, sr)
    energies = magnitude @ bank.T
    out = np.log(np.maximum(energies, config.log_floor))
    # guard against rounding below the floor
    return MelSpectrogram(np.maximum(out, floor), config, sr)


def normalize_features(mel: MelSpectrogram, eps: float = 1e-5) -> np.ndarray:
    """Network input: transpose to (M, T) and, if configured, z-score each mel bin over time."""
    x = mel.frames.T.copy()
    if mel.config.cmvn and x.shape[1] > 0:
        x -= x.mean(axis=1, keepdims=True)
        x /= np.sqrt(x.var(axis=1, keepdims=True) + eps)
    return x
