"""WAV decoding, integer-factor decimation and clip length normalization."""

from __future__ import annotations

import io
import wave
from dataclasses import dataclass

import numpy as np

from .errors import EmptyClip, MalformedContainer, NonIntegerFactor, UnsupportedFormat

PCM16_SCALE = 32768.0
FILTER_TAPS = 127
GUARD_BAND = 0.9


@dataclass(frozen=True)
class AudioClip:
    """Mono audio, samples normalized to [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def parse_wav(data: bytes) -> AudioClip:
    """Decode a 16-bit PCM RIFF/WAVE byte string into a mono clip.

    Multi-channel audio is averaged down to one channel.
    """
    try:
        with wave.open(io.BytesIO(data), "rb") as wf:
            n_channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            if width != 2:
                raise UnsupportedFormat(f"expected 16-bit samples, got {8 * width}-bit")
            raw = wf.readframes(n_frames)
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedFormat(msg) from exc
        raise MalformedContainer(msg) from exc
    except EOFError as exc:
        raise MalformedContainer("truncated RIFF header") from exc

    ints = np.frombuffer(raw, dtype="<i2")
    if n_channels > 1:
        ints = ints[: len(ints) - len(ints) % n_channels].reshape(-1, n_channels)
        samples = ints.astype(np.float64).mean(axis=1) / PCM16_SCALE
    else:
        samples = ints.astype(np.float64) / PCM16_SCALE
    return AudioClip(samples, rate)


def encode_wav(clip: AudioClip) -> bytes:
    """Encode a clip as mono 16-bit PCM. Inverse of :func:`parse_wav` on PCM16 grids."""
    ints = np.clip(np.round(np.asarray(clip.samples) * PCM16_SCALE), -32768, 32767)
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(clip.sample_rate))
        wf.writeframes(ints.astype("<i2").tobytes())
    return buf.getvalue()


def read_wav(path) -> AudioClip:
    with open(path, "rb") as f:
        return parse_wav(f.read())


def write_wav(path, clip: AudioClip) -> None:
    with open(path, "wb") as f:
        f.write(encode_wav(clip))


def lowpass_taps(cutoff: float, sample_rate: int, taps: int = FILTER_TAPS) -> np.ndarray:
    """Hann-windowed sinc low-pass FIR with unit DC gain.

    ``cutoff`` is in Hz. The window is taken from a (taps + 2)-point Hann so that
    no tap is exactly zero.
    """
    fc = cutoff / sample_rate
    n = np.arange(taps) - (taps - 1) / 2
    h = 2 * fc * np.sinc(2 * fc * n) * np.hanning(taps + 2)[1:-1]
    return h / h.sum()


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Decimate ``clip`` to ``target_rate`` by an integer factor.

    A low-pass with cutoff at 90% of the target Nyquist frequency is applied
    before keeping every k-th sample. Output length is ``len(clip) // k``.
    """
    if target_rate <= 0 or clip.sample_rate % target_rate != 0:
        raise NonIntegerFactor(
            f"{clip.sample_rate} Hz is not an integer multiple of {target_rate} Hz"
        )
    k = clip.sample_rate // target_rate
    if k == 1:
        return clip
    h = lowpass_taps(GUARD_BAND * target_rate / 2, clip.sample_rate)
    x = np.asarray(clip.samples, dtype=np.float64)
    if len(x) >= len(h):
        y = np.convolve(x, h, mode="same")
    else:
        # "same" mode centers on the longer operand; keep it centered on x
        full = np.convolve(x, h, mode="full")
        off = (len(h) - 1) // 2
        y = full[off:off + len(x)]
    n_out = len(x) // k
    return AudioClip(np.clip(y[: n_out * k : k], -1.0, 1.0), target_rate)


def normalize_duration(clip: AudioClip, duration_s: float) -> list[AudioClip]:
    """Pad short clips with trailing zeros, slice long clips into whole windows.

    The partial window left at the end of a long clip is dropped.
    """
    if duration_s <= 0:
        raise ValueError(f"duration_s must be positive, got {duration_s}")
    x = np.asarray(clip.samples)
    if len(x) == 0:
        raise EmptyClip("clip has no samples")
    n = int(round(duration_s * clip.sample_rate))
    if len(x) == n:
        return [clip]
    if len(x) < n:
        return [AudioClip(np.concatenate([x, np.zeros(n - len(x), dtype=x.dtype)]), clip.sample_rate)]
    return [AudioClip(x[i * n:(i + 1) * n].copy(), clip.sample_rate) for i in range(len(x) // n)]
