"""Dataset manifests, the synthetic tone-pair corpus and stratified splitting."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .audio_io import AudioClip, write_wav
from .errors import DatasetTooSmall, InvalidConfig, MissingAudioFile, ParseError
from .vocab import KINDS


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    phonemes: str
    kind: str

    @property
    def stratum(self) -> tuple[str, str]:
        return (self.kind, self.phonemes if self.kind == "speech" else "")


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def load_manifest(path, check_paths: bool = True) -> DatasetManifest:
    """Read a JSON Lines manifest. Relative audio paths resolve against its directory."""
    path = Path(path)
    root = path.parent
    entries = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from exc
            if not isinstance(rec, dict):
                raise ParseError("record is not an object", lineno)
            for key in ("path", "phonemes", "kind"):
                if key not in rec:
                    raise ParseError(f"missing field {key!r}", lineno)
            if not isinstance(rec["path"], str) or not isinstance(rec["phonemes"], str):
                raise ParseError("path and phonemes must be strings", lineno)
            if rec["kind"] not in KINDS:
                raise ParseError(f"unknown label kind {rec['kind']!r}", lineno)
            audio = Path(rec["path"])
            if not audio.is_absolute():
                audio = root / audio
            if check_paths and not audio.is_file():
                raise MissingAudioFile(f"line {lineno}: {audio} does not exist")
            entries.append(ManifestEntry(audio, " ".join(rec["phonemes"].split()), rec["kind"]))
    return DatasetManifest(entries)


def write_manifest(path, manifest: DatasetManifest) -> None:
    path = Path(path)
    root = path.parent.resolve()
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for e in manifest:
            p = Path(e.path)
            try:
                p = p.resolve().relative_to(root)
            except ValueError:
                pass
            f.write(json.dumps({"path": p.as_posix(), "phonemes": e.phonemes, "kind": e.kind}) + "\n")


# Synthetic corpus ----------------------------------------------------------

# Four first-formant rows by three second-formant columns give twelve
# distinct tone pairs; the x* symbols are out-of-vocabulary and encode as UNK.
DEFAULT_FORMANTS = {
    **{f"p{4 * j + i}": (f1, f2)
       for j, f2 in enumerate((1100.0, 1650.0, 2250.0))
       for i, f1 in enumerate((300.0, 450.0, 600.0, 750.0))},
    "x0": (380.0, 2900.0),
    "x1": (680.0, 3400.0),
    "x2": (520.0, 1350.0),
}

DEFAULT_PHRASES = (
    "p0 p1 p2",
    "p0 p1 p2 p3",
    "p4 p0 p1 p2",
    "p0 p1 p5",
    "p0 p1 p5 p3",
    "p4 p0 p1 p5",
    "p6 p7 p8",
    "p6 p7 p8 p9",
    "p4 p6 p7 p8",
    "p10 p7 p11",
    "p10 p7 p11 p9",
    "x0 p3 x1 p8",
    "p2 x2 x0 p11 p9",
    "x1 p10 x2 p6 p5 p3",
)


@dataclass(frozen=True)
class SynthConfig:
    n_phonemes: int = 12
    phrases: tuple[str, ...] = DEFAULT_PHRASES
    clips_per_phrase: int = 23
    n_noise: int = 140
    n_silence: int = 60
    sample_rate: int = 44100
    formants: dict = field(default_factory=lambda: dict(DEFAULT_FORMANTS))
    phoneme_ms: tuple[float, float] = (120.0, 200.0)
    pitch_jitter: float = 0.03
    amplitude: float = 0.3
    noise_seconds: tuple[float, float] = (2.0, 3.5)

    def validate(self) -> None:
        if self.n_phonemes < 1 or self.clips_per_phrase < 1:
            raise InvalidConfig("n_phonemes and clips_per_phrase must be >= 1")
        if self.n_noise < 0 or self.n_silence < 0:
            raise InvalidConfig("noise and silence counts must be >= 0")
        if not self.phrases:
            raise InvalidConfig("phrase list is empty")
        if self.sample_rate <= 0:
            raise InvalidConfig("sample_rate must be positive")
        lo, hi = self.phoneme_ms
        if not 0 < lo <= hi:
            raise InvalidConfig(f"bad phoneme duration range {self.phoneme_ms}")
        for phrase in self.phrases:
            for sym in phrase.split():
                if sym not in self.formants:
                    raise InvalidConfig(f"no formants defined for phoneme {sym!r}")
                f1, f2 = self.formants[sym]
                if max(f1, f2) * (1 + self.pitch_jitter) >= self.sample_rate / 2:
                    raise InvalidConfig(f"formants of {sym!r} exceed Nyquist")


def render_phoneme(f1: float, f2: float, n_samples: int, sample_rate: int,
                   amplitude: float = 0.3, fade_ms: float = 10.0) -> np.ndarray:
    """Two equal-weight sinusoids with raised-cosine edges."""
    t = np.arange(n_samples) / sample_rate
    x = 0.5 * amplitude * (np.sin(2 * np.pi * f1 * t) + np.sin(2 * np.pi * f2 * t))
    n_fade = min(int(fade_ms * 1e-3 * sample_rate), n_samples // 2)
    if n_fade > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(n_fade) / n_fade)
        x[:n_fade] *= ramp
        x[n_samples - n_fade:] *= ramp[::-1]
    return x


def _render_phrase(phrase: str, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    sr = cfg.sample_rate
    parts = [np.zeros(int(rng.uniform(0.05, 0.2) * sr))]
    amp = cfg.amplitude * rng.uniform(0.8, 1.0)
    for sym in phrase.split():
        f1, f2 = cfg.formants[sym]
        shift = 1.0 + rng.uniform(-cfg.pitch_jitter, cfg.pitch_jitter)
        n = int(rng.uniform(*cfg.phoneme_ms) * 1e-3 * sr)
        parts.append(render_phoneme(f1 * shift, f2 * shift, n, sr, amp * rng.uniform(0.85, 1.0)))
        parts.append(np.zeros(int(rng.uniform(0.0, 0.02) * sr)))
    return np.concatenate(parts)


def _render_noise(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    n = int(rng.uniform(*cfg.noise_seconds) * cfg.sample_rate)
    white = rng.standard_normal(n)
    # one-pole low-pass: pole 0 is white, poles near 1 approach brown noise
    pole = rng.uniform(0.0, 0.97)
    colored = lfilter([1.0], [1.0, -pole], white)
    colored -= colored.mean()
    colored *= rng.uniform(0.03, 0.2) / (np.sqrt(np.mean(colored ** 2)) + 1e-12)
    return np.clip(colored, -0.99, 0.99)


def _render_silence(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    n = int(rng.uniform(1.0, 2.0) * cfg.sample_rate)
    return 2e-5 * rng.standard_normal(n)


def synth_generate(cfg: SynthConfig, seed: int, out_dir) -> DatasetManifest:
    """Render the synthetic corpus into ``out_dir/wav`` and write ``out_dir/manifest.jsonl``.

    Identical config and seed give byte-identical WAV files and manifest.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []

    def emit(name, samples, phonemes, kind):
        p = wav_dir / name
        write_wav(p, AudioClip(np.clip(samples, -1.0, 1.0), cfg.sample_rate))
        entries.append(ManifestEntry(p, phonemes, kind))

    for pi, phrase in enumerate(cfg.phrases):
        for k in range(cfg.clips_per_phrase):
            emit(f"speech_{pi:02d}_{k:03d}.wav", _render_phrase(phrase, cfg, rng), phrase, "speech")
    for k in range(cfg.n_noise):
        emit(f"noise_{k:03d}.wav", _render_noise(cfg, rng), "", "noise")
    for k in range(cfg.n_silence):
        emit(f"silence_{k:03d}.wav", _render_silence(cfg, rng), "", "silence")

    manifest = DatasetManifest(entries)
    write_manifest(out_dir / "manifest.jsonl", manifest)
    return manifest


# Splitting -------------------------------------------------------------------

def _allocate(sizes: list[int], fraction: float) -> list[int]:
    """Per-stratum test counts summing to round(fraction * N), each in [1, n - 1]."""
    total = round(fraction * sum(sizes))
    quotas = [fraction * n for n in sizes]
    alloc = [min(max(math.floor(q), 1), n - 1) for q, n in zip(quotas, sizes)]
    rema = [q - math.floor(q) for q in quotas]
    diff = total - sum(alloc)
    order_up = sorted(range(len(sizes)), key=lambda i: (-rema[i], i))
    order_down = sorted(range(len(sizes)), key=lambda i: (rema[i], i))
    while diff != 0:
        moved = False
        for i in order_up if diff > 0 else order_down:
            if diff > 0 and alloc[i] < sizes[i] - 1:
                alloc[i] += 1
                diff -= 1
                moved = True
            elif diff < 0 and alloc[i] > 1:
                alloc[i] -= 1
                diff += 1
                moved = True
            if diff == 0:
                break
        if not moved:
            break
    return alloc


def split(manifest: DatasetManifest, test_fraction: float, seed: int):
    """Seeded stratified split into ``(train, test)`` manifests.

    Strata are label kinds, with speech further split by phrase. Every stratum
    contributes at least one entry to each side. Entries keep manifest order.
    """
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    strata: dict[tuple[str, str], list[int]] = {}
    for i, e in enumerate(manifest.entries):
        strata.setdefault(e.stratum, []).append(i)
    keys = sorted(strata)
    for k in keys:
        if len(strata[k]) < 2:
            raise DatasetTooSmall(f"stratum {k} has {len(strata[k])} entry; need at least 2")
    alloc = _allocate([len(strata[k]) for k in keys], test_fraction)
    rng = np.random.default_rng(seed)
    test_idx = set()
    for k, n_test in zip(keys, alloc):
        members = np.array(strata[k])
        rng.shuffle(members)
        test_idx.update(int(i) for i in members[:n_test])
    train = [e for i, e in enumerate(manifest.entries) if i not in test_idx]
    test = [e for i, e in enumerate(manifest.entries) if i in test_idx]
    return DatasetManifest(train), DatasetManifest(test)
