"""Audio-to-model-input pipeline: decimate, fix duration, log-mel, tokenize."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .audio_io import AudioClip, normalize_duration, read_wav, resample
from .config import PipelineConfig
from .dataset import DatasetManifest, ManifestEntry
from .dsp import log_mel, mel_filterbank, stft
from .training import ArrayDataset
from .vocab import encode_tokens, split_phonemes

THREADS_ENV = "PHONEMEDA_THREADS"


def worker_count(default: int | None = None) -> int:
    n = default or os.cpu_count() or 1
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, n)


class FeatureExtractor:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg

    @cached_property
    def bank(self):
        c = self.cfg
        return mel_filterbank(c.n_mel, c.f_min, c.f_max, c.frame_length, c.sample_rate)

    def prepare(self, clip: AudioClip) -> list[AudioClip]:
        if clip.sample_rate != self.cfg.sample_rate:
            clip = resample(clip, self.cfg.sample_rate)
        return normalize_duration(clip, self.cfg.clip_seconds)

    def spectrogram(self, clip: AudioClip) -> np.ndarray:
        spec = stft(clip, self.cfg.frame_length, self.cfg.overlap)
        return log_mel(spec, self.bank, self.cfg.floor_db).values.astype(np.float32)

    def __call__(self, clip: AudioClip) -> list[np.ndarray]:
        return [self.spectrogram(c) for c in self.prepare(clip)]


def default_pad_to(manifest: DatasetManifest) -> int:
    """Longest speech transcription plus BEG and END (at least 3 for non-speech)."""
    longest = max((len(split_phonemes(e.phonemes)) for e in manifest if e.kind == "speech"), default=1)
    return longest + 2


@dataclass
class ProcessedItem:
    source: int           # manifest index
    part: int             # slice index within the source clip
    spec: np.ndarray      # [n_frames, n_mel]
    tokens: np.ndarray    # [pad_to]
    kind: str


@dataclass
class Failure:
    source: int
    path: str
    error: str


def process_entry(i: int, entry: ManifestEntry, extractor: FeatureExtractor, pad_to: int):
    tokens = encode_tokens(entry.phonemes, extractor.cfg.vocab, pad_to, entry.kind)
    specs = extractor(read_wav(entry.path))
    return [ProcessedItem(i, k, s, tokens, entry.kind) for k, s in enumerate(specs)]


def preprocess(manifest: DatasetManifest, cfg: PipelineConfig, pad_to: int | None = None,
               threads: int | None = None):
    """Run every manifest entry through the pipeline.

    Returns ``(items, failures)``; items are ordered by manifest index then
    slice index regardless of worker scheduling.
    """
    pad_to = pad_to or cfg.pad_to or default_pad_to(manifest)
    extractor = FeatureExtractor(cfg)
    extractor.bank  # build once before fanning out
    entries = list(manifest)

    def job(i):
        try:
            return process_entry(i, entries[i], extractor, pad_to), None
        except Exception as exc:  # reported per file
            return None, Failure(i, str(entries[i].path), f"{type(exc).__name__}: {exc}")

    n = worker_count(threads)
    if n > 1 and len(entries) > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(job, range(len(entries))))
    else:
        results = [job(i) for i in range(len(entries))]
    items, failures = [], []
    for res, fail in results:
        if fail is not None:
            failures.append(fail)
        else:
            items.extend(res)
    return items, failures


def to_dataset(items: list[ProcessedItem]) -> ArrayDataset:
    if not items:
        return ArrayDataset(np.zeros((0, 0, 0), np.float32), np.zeros((0, 0), np.int64))
    return ArrayDataset(np.stack([it.spec for it in items]), np.stack([it.tokens for it in items]))
