"""Radix-2 FFT, STFT framing, mel filterbanks and dB-scaled log-mel features."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .audio_io import AudioClip
from .errors import ClipTooShort, DimensionMismatch, InvalidRange, NonPowerOfTwoLength

EPS_POWER = 1e-10
FLOOR_DB = -100.0


def is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft(buffer, inverse: bool = False) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT over the last axis.

    Leading axes are treated as a batch. The forward transform is unnormalized;
    the inverse divides by n.
    """
    a = np.asarray(buffer, dtype=np.complex128)
    n = a.shape[-1]
    if not is_power_of_two(n):
        raise NonPowerOfTwoLength(f"FFT length must be a power of two, got {n}")
    batch = a.shape[:-1]
    a = a[..., _bit_reverse(n)]
    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(*batch, n // size, size)
        even = blocks[..., :half]
        odd = blocks[..., half:] * tw
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(*batch, n)
        size *= 2
    if inverse:
        a = a / n
    return a


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


@dataclass(frozen=True)
class SpectrogramMatrix:
    values: np.ndarray  # [n_frames, frame_length // 2 + 1] magnitudes
    frame_length: int
    hop: int
    sample_rate: int

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]


def n_frames_for(n_samples: int, frame_length: int, hop: int) -> int:
    return (n_samples - frame_length) // hop + 1


def stft(clip: AudioClip, frame_length: int = 1024, overlap: int = 128) -> SpectrogramMatrix:
    """Hann-windowed magnitude STFT. Consecutive frames share ``overlap`` samples."""
    if not is_power_of_two(frame_length):
        raise NonPowerOfTwoLength(f"frame_length must be a power of two, got {frame_length}")
    if not 0 <= overlap < frame_length:
        raise ValueError(f"overlap must be in [0, {frame_length}), got {overlap}")
    x = np.asarray(clip.samples, dtype=np.float64)
    if len(x) < frame_length:
        raise ClipTooShort(f"clip has {len(x)} samples, need at least {frame_length}")
    hop = frame_length - overlap
    n = n_frames_for(len(x), frame_length, hop)
    idx = np.arange(frame_length)[None, :] + hop * np.arange(n)[:, None]
    frames = x[idx] * hann(frame_length)
    spec = fft(frames)[:, : frame_length // 2 + 1]
    return SpectrogramMatrix(np.abs(spec), frame_length, hop, clip.sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelFilterBank:
    weights: np.ndarray  # [n_mel, n_bins]
    f_min: float
    f_max: float

    @property
    def n_mel(self) -> int:
        return self.weights.shape[0]


def mel_filterbank(n_mel: int = 80, f_min: float = 0.0, f_max: float = 4410.0,
                   frame_length: int = 1024, sample_rate: int = 8820) -> MelFilterBank:
    """Triangular filters with peaks equally spaced on the mel axis.

    Filter ``m`` rises from edge ``m`` to a peak of 1 at edge ``m + 1`` and falls
    back to zero at edge ``m + 2``, where the ``n_mel + 2`` edges span
    ``[mel(f_min), mel(f_max)]`` uniformly.
    """
    if n_mel < 1:
        raise InvalidRange(f"n_mel must be >= 1, got {n_mel}")
    if not 0 <= f_min < f_max <= sample_rate / 2:
        raise InvalidRange(f"need 0 <= f_min < f_max <= {sample_rate / 2}, got [{f_min}, {f_max}]")
    n_bins = frame_length // 2 + 1
    freqs = np.arange(n_bins) * sample_rate / frame_length
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mel + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    weights = np.clip(np.minimum(rising, falling), 0.0, 1.0)
    empty = np.flatnonzero(weights.max(axis=1) <= 0)
    if len(empty):
        raise InvalidRange(
            f"{len(empty)} mel filters fall between FFT bins; lower n_mel or raise frame_length"
        )
    return MelFilterBank(weights, float(f_min), float(f_max))


@dataclass(frozen=True)
class LogMelSpectrogram:
    """dB mel energies, time-major: rows are frames, columns are mel bands."""

    values: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_mel(self) -> int:
        return self.values.shape[1]


def log_mel(spec: SpectrogramMatrix, bank: MelFilterBank, floor_db: float = FLOOR_DB,
            eps: float = EPS_POWER) -> LogMelSpectrogram:
    if bank.weights.shape[1] != spec.n_bins:
        raise DimensionMismatch(
            f"filterbank has {bank.weights.shape[1]} bins, spectrogram has {spec.n_bins}"
        )
    energy = (spec.values ** 2) @ bank.weights.T
    db = 10.0 * np.log10(np.maximum(energy, eps))
    return LogMelSpectrogram(np.maximum(db, floor_db))


def write_matrix(path, matrix: np.ndarray) -> None:
    """Write a 2-D matrix as u32 rows, u32 cols, then row-major little-endian f32."""
    m = np.asarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got shape {m.shape}")
    with open(path, "wb") as f:
        f.write(struct.pack("<II", *m.shape))
        f.write(np.ascontiguousarray(m).tobytes())


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 8:
        raise DimensionMismatch(f"{path}: too short for a matrix header")
    rows, cols = struct.unpack_from("<II", data)
    body = np.frombuffer(data, dtype="<f4", offset=8)
    if body.size != rows * cols:
        raise DimensionMismatch(f"{path}: header says {rows}x{cols}, found {body.size} values")
    return body.reshape(rows, cols).astype(np.float32)
