"""End-to-end workflows shared by the CLI and the acceptance suite."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .audio_io import read_wav
from .config import PipelineConfig, save_config
from .dataset import DatasetManifest, load_manifest, split
from .errors import InvalidConfig, StructuralMismatch
from .features import FeatureExtractor, default_pad_to, preprocess, to_dataset
from .metrics import EvalPair, confusion_matrix, summarize
from .model import forward, greedy_decode
from .modelfile import load_model, save_model
from .training import compute_loss_weights, train, write_history
from .vocab import pad_sequence, strip_tokens

MODEL_FILE = "model.yvxm"


@dataclass
class PreparedData:
    train: object
    test: object
    pad_to: int
    failures: list


def prepare(manifest: DatasetManifest, cfg: PipelineConfig) -> PreparedData:
    """Split the manifest, then featurize both sides."""
    pad_to = cfg.pad_to or default_pad_to(manifest)
    train_m, test_m = split(manifest, cfg.train.test_fraction, cfg.train.seed)
    tr_items, f1 = preprocess(train_m, cfg, pad_to)
    te_items, f2 = preprocess(test_m, cfg, pad_to)
    return PreparedData(to_dataset(tr_items), to_dataset(te_items), pad_to, f1 + f2)


def run_training(manifest_path, cfg: PipelineConfig, out_dir, callback=None):
    """Train on the manifest's train split and write model, history and config.

    Returns ``(params, model_cfg, history, prepared)``.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = prepare(load_manifest(manifest_path), cfg)
    if data.failures:
        names = ", ".join(f.path for f in data.failures[:3])
        raise InvalidConfig(f"{len(data.failures)} manifest entries failed to load: {names}")
    model_cfg = replace(cfg.model, max_decode_len=data.pad_to - 1)
    with threadpool_limits(limits=1):
        params, history, _ = train(data.train, model_cfg, cfg.train, data.test, callback=callback)
    save_model(out_dir / MODEL_FILE, params, model_cfg)
    write_history(out_dir / "history.csv", history)
    save_config(out_dir / "config.json", replace(cfg, pad_to=data.pad_to, model=model_cfg))
    return params, model_cfg, history, data


def evaluate(params, model_cfg, manifest_path, cfg: PipelineConfig, subset: str = "test"):
    """Score free-running predictions; loss weights come from the train split."""
    data = prepare(load_manifest(manifest_path), replace(cfg, pad_to=model_cfg.max_decode_len + 1))
    weights = compute_loss_weights(data.train.y, model_cfg.T)
    ds = {"test": data.test, "train": data.train}[subset]
    pairs = []
    with threadpool_limits(limits=1):
        for lo in range(0, len(ds), 256):
            res = forward(ds.x[lo:lo + 256], params, model_cfg, n_steps=ds.y.shape[1] - 1)
            for row, target in zip(res.predicted, ds.y[lo:lo + 256]):
                pairs.append(EvalPair(target, pad_sequence([model_cfg.beg, *row.tolist()],
                                                           len(target), model_cfg.end)))
    summary = summarize(pairs, weights, model_cfg.beg, model_cfg.end)
    summary["subset"] = subset
    counts = confusion_matrix(pairs, model_cfg.T, model_cfg.beg, model_cfg.end)
    return summary, counts, pairs


@dataclass
class InferResult:
    symbols: list            # decoded symbols per 2 s slice, BEG/END stripped
    timings_ms: dict


def infer(model_path, wav_path, cfg: PipelineConfig) -> InferResult:
    timings = {}
    t0 = time.perf_counter()
    params, model_cfg = load_model(model_path)
    if model_cfg.T != cfg.vocab.size:
        raise StructuralMismatch(f"model has T={model_cfg.T}, config vocabulary has {cfg.vocab.size}")
    timings["load_model"] = (time.perf_counter() - t0) * 1e3
    t0 = time.perf_counter()
    clip = read_wav(wav_path)
    timings["read"] = (time.perf_counter() - t0) * 1e3
    ex = FeatureExtractor(cfg)
    t0 = time.perf_counter()
    parts = ex.prepare(clip)
    timings["resample"] = (time.perf_counter() - t0) * 1e3
    t0 = time.perf_counter()
    specs = np.stack([ex.spectrogram(p) for p in parts])
    timings["spectrogram"] = (time.perf_counter() - t0) * 1e3
    t0 = time.perf_counter()
    decoded = greedy_decode(specs, params, model_cfg)
    timings["forward"] = (time.perf_counter() - t0) * 1e3
    symbols = [cfg.vocab.decode(strip_tokens(seq, model_cfg.beg, model_cfg.end)) for seq in decoded]
    return InferResult(symbols, timings)


@dataclass
class ParityReport:
    max_abs_diff: float
    tol: float
    n_logits: int

    @property
    def passed(self) -> bool:
        return self.max_abs_diff <= self.tol

    def to_dict(self) -> dict:
        return {"max_abs_diff": self.max_abs_diff, "tol": self.tol, "n_logits": self.n_logits,
                "passed": self.passed}


def zero_spectrogram_logits(params, model_cfg, n_frames: int) -> np.ndarray:
    x = np.zeros((1, n_frames, model_cfg.n_mel), dtype=np.float32)
    res = forward(x, params, model_cfg, n_steps=model_cfg.max_decode_len, stop_at_end=False)
    return res.logits.data


def compare_models(a, b, n_frames: int, tol: float = 1e-6) -> ParityReport:
    """Both models forwarded on an all-zero spectrogram; ``a``/``b`` are ``(params, cfg)``."""
    (pa, ca), (pb, cb) = a, b
    if ca != cb:
        diffs = {k: (v, getattr(cb, k)) for k, v in ca.__dict__.items() if getattr(cb, k) != v}
        raise StructuralMismatch(f"model configs differ: {diffs}")
    for name in pa:
        if pa[name].shape != pb[name].shape:
            raise StructuralMismatch(f"{name}: {pa[name].shape} vs {pb[name].shape}")
    la = zero_spectrogram_logits(pa, ca, n_frames)
    lb = zero_spectrogram_logits(pb, cb, n_frames)
    diff = float(np.max(np.abs(la.astype(np.float64) - lb.astype(np.float64))))
    return ParityReport(diff, tol, int(la.size))


def verify(model_a, model_b, n_frames: int, tol: float = 1e-6) -> ParityReport:
    return compare_models(load_model(model_a), load_model(model_b), n_frames, tol)


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
