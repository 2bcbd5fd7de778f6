"""Acceptance criteria 1-9. Each test prints one PASS/FAIL line."""

from __future__ import annotations

import time
from collections import Counter

import numpy as np
import pytest

from phonemeda import autodiff as ad
from phonemeda.audio_io import AudioClip
from phonemeda.config import PipelineConfig
from phonemeda.dataset import DEFAULT_FORMANTS, SynthConfig, load_manifest, render_phoneme
from phonemeda.dsp import fft
from phonemeda.features import FeatureExtractor
from phonemeda.metrics import EvalPair, confusion_matrix, levenshtein, weighted_accuracy
from phonemeda.model import count_parameters, decode_step, encode, init_model
from phonemeda.modelfile import deserialize, serialize
from phonemeda.pipeline import evaluate, zero_spectrogram_logits
from phonemeda.training import LossWeights, wcce_loss
from phonemeda.vocab import strip_tokens

from conftest import DESK_EPOCHS, desk_run, record_acceptance
from gradcases import op_cases, toy_loss_fn, toy_problem
from oracles import brute_edit_distance, naive_dft

GOLDEN_PARAMETER_COUNT = 285476


def test_criterion_1_fft():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_fwd = worst_inv = 0.0
    for n in (8, 64, 1024):
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        worst_fwd = max(worst_fwd, float(np.max(np.abs(fft(x) - naive_dft(x)))))
        worst_inv = max(worst_inv, float(np.max(np.abs(fft(fft(x), inverse=True) - x))))
    seconds = time.perf_counter() - t0
    ok = worst_fwd < 1e-9 and worst_inv < 1e-9 and seconds < 5
    record_acceptance(1, ok, f"max |fft - dft| {worst_fwd:.2e}, roundtrip {worst_inv:.2e}, {seconds:.2f} s")
    assert ok


def test_criterion_2_gradients():
    t0 = time.perf_counter()
    worst = {}
    for name, fn, inputs in op_cases():
        worst[name] = ad.grad_check(fn, inputs, step=1e-5, tol=1e-4).max_rel_error
    params, names, x, teacher = toy_problem()
    assert x.shape[1:] == (2, 4) and params["dense2.bias"].shape == (5,)
    toy = ad.grad_check(toy_loss_fn(params, names, x, teacher), [params[n].data for n in names],
                        step=1e-5, tol=1e-4)
    worst["toy_model"] = toy.max_rel_error
    seconds = time.perf_counter() - t0
    name, err = max(worst.items(), key=lambda kv: kv[1])
    ok = err < 1e-4 and seconds < 60
    record_acceptance(2, ok, f"{len(worst)} checks, worst {name} rel {err:.2e} "
                             f"({toy.n_checked} toy coords), {seconds:.1f} s")
    assert ok


def test_criterion_3_shape_ledger():
    cfg = PipelineConfig()
    assert (cfg.sample_rate, cfg.clip_seconds, cfg.frame_length, cfg.overlap, cfg.n_mel) == (8820, 2.0, 1024, 128, 80)
    f1, f2 = DEFAULT_FORMANTS["p6"]
    clip = AudioClip(render_phoneme(f1, f2, int(1.5 * 44100), 44100), 44100)
    (spec,) = FeatureExtractor(cfg)(clip)
    params = init_model(cfg.model, 0)
    enc = encode(spec, params, cfg.model)
    beg = np.eye(cfg.model.T)[cfg.model.beg]
    step = decode_step(beg, enc.final_states, enc, params, cfg.model)
    shapes = {
        "spectrogram": spec.shape,
        "encoder outputs": enc.outputs.shape[1:],
        "decoder states": [s.shape for s in step.states],
        "logits": step.logits.shape,
    }
    ok = (shapes["spectrogram"] == (19, 80) and shapes["encoder outputs"] == (19, 128)
          and shapes["decoder states"] == [(1, 128), (1, 128)] and shapes["logits"] == (1, 31))
    record_acceptance(3, ok, "; ".join(f"{k} {v}" for k, v in shapes.items()))
    assert ok


def test_criterion_4_parameter_count():
    n = count_parameters(PipelineConfig().model)
    ok = 260_000 <= n <= 340_000 and n == GOLDEN_PARAMETER_COUNT
    record_acceptance(4, ok, f"parameter count {n} (golden {GOLDEN_PARAMETER_COUNT})")
    assert ok


def test_criterion_5_loss_oracles():
    hand = float(wcce_loss(ad.Tensor(np.zeros((1, 2))), np.array([[1, 0]]),
                           LossWeights(np.ones(2), np.ones(2), 1.0)).data)
    rng = np.random.default_rng(5)
    worst_uniform, equivariant = 0.0, True
    for _ in range(50):
        h, t = int(rng.integers(1, 9)), int(rng.integers(2, 32))
        y = rng.standard_normal((h, t)) * 3
        ids = rng.integers(0, t, h)
        c, S = rng.uniform(0.01, 2), rng.uniform(0.5, 50)
        loss = float(wcce_loss(ad.Tensor(y), ids, LossWeights(np.ones(t), np.full(t, c), S)).data)
        m = y.max(axis=1, keepdims=True)
        logp = y - m - np.log(np.exp(y - m).sum(axis=1, keepdims=True))
        cce = -logp[np.arange(h), ids].sum()
        worst_uniform = max(worst_uniform, abs(loss - S * c / t * cce))
        w = rng.uniform(0.01, 2, t)
        perm = rng.permutation(t)
        base = float(wcce_loss(ad.Tensor(y), ids, LossWeights(np.ones(t), w, S)).data)
        moved = float(wcce_loss(ad.Tensor(y[:, perm]), np.argsort(perm)[ids],
                                LossWeights(np.ones(t), w[perm], S)).data)
        equivariant &= base == moved
    ok = abs(hand - 0.34657) <= 1e-5 and worst_uniform <= 1e-12 and equivariant
    record_acceptance(5, ok, f"hand case {hand:.6f}, uniform-weight gap {worst_uniform:.1e}, "
                             f"permutation exact {equivariant}")
    assert ok


def test_criterion_6_metric_oracles(trained):
    rng = np.random.default_rng(6)
    lev_ok = True
    for _ in range(200):
        a = rng.integers(0, 4, rng.integers(0, 8)).tolist()
        b = rng.integers(0, 4, rng.integers(0, 8)).tolist()
        lev_ok &= levenshtein(a, b) == brute_edit_distance(a, b)
    hand = weighted_accuracy(EvalPair([0, 1], [0, 2]), np.array([2.0, 1.0, 7.0]))
    _, counts, pairs = evaluate(trained.params, trained.model_cfg, trained.manifest, trained.cfg, "test")
    beg, end = trained.model_cfg.beg, trained.model_cfg.end
    truth = Counter()
    for p in pairs:
        r, q = strip_tokens(p.r, beg, end), strip_tokens(p.p, beg, end)
        truth.update(r[: min(len(r), len(q))])
    rows_ok = counts.sum(axis=1).tolist() == [truth.get(i, 0) for i in range(trained.model_cfg.T)]
    random_pairs = [EvalPair(rng.integers(0, 5, 6).tolist(), rng.integers(0, 5, rng.integers(0, 8)).tolist())
                    for _ in range(50)]
    m = confusion_matrix(random_pairs, 5)
    rows_ok &= m.sum(axis=1).tolist() == [sum(r[: min(len(r), len(p))].count(i) for r, p in
                                              ((list(x.r), list(x.p)) for x in random_pairs)) for i in range(5)]
    ok = lev_ok and hand == 2 / 3 and rows_ok
    record_acceptance(6, ok, f"levenshtein vs brute force {lev_ok} (200 pairs), weighted accuracy {hand!r}, "
                             f"confusion row sums {rows_ok}")
    assert ok


def test_criterion_7_desk_training(trained):
    corpus = load_manifest(trained.manifest)
    kinds = Counter(e.kind for e in corpus)
    phrases = {e.phonemes for e in corpus if e.kind == "speech"}
    sc = SynthConfig()
    params, model_cfg = deserialize(trained.model.read_bytes())
    summary, _, _ = evaluate(params, model_cfg, trained.manifest, trained.cfg, "test")
    setup_ok = (sc.n_phonemes == 12 and len(phrases) == 14 and 300 <= kinds["speech"] <= 340
                and 180 <= kinds["noise"] + kinds["silence"] <= 220 and trained.cfg.train.batch_size == 32
                and trained.cfg.train.seed == 42 and len(trained.history) == DESK_EPOCHS <= 300)
    ok = (setup_ok and summary["weighted_accuracy"] >= 0.90 and summary["per"] <= 0.10
          and trained.seconds <= 15 * 60)
    record_acceptance(7, ok, f"test wacc {summary['weighted_accuracy']:.4f}, PER {summary['per']:.4f} over "
                             f"{summary['n_pairs']} clips; {kinds['speech']} speech + "
                             f"{kinds['noise'] + kinds['silence']} noise/silence, {DESK_EPOCHS} epochs, "
                             f"{trained.seconds:.0f} s")
    assert ok


def test_criterion_8_deployment_parity(trained):
    blob = serialize(trained.params, trained.model_cfg)
    params, cfg = deserialize(blob)
    a = zero_spectrogram_logits(trained.params, trained.model_cfg, trained.cfg.n_frames)
    b = zero_spectrogram_logits(params, cfg, trained.cfg.n_frames)
    diff = float(np.max(np.abs(a.astype(np.float64) - b.astype(np.float64))))
    same_bytes = serialize(params, cfg) == blob == trained.model.read_bytes()
    ok = diff <= 1e-6 and same_bytes and cfg == trained.model_cfg
    record_acceptance(8, ok, f"max logit diff {diff:.1e} over {a.size} logits, roundtrip bytes identical "
                             f"{same_bytes}, file {len(blob)} bytes")
    assert ok


@pytest.mark.slow
def test_criterion_9_determinism(trained, tmp_path_factory):
    second = desk_run(tmp_path_factory.mktemp("desk_repeat"))
    a, b = trained.model.read_bytes(), second.model.read_bytes()
    ok = a == b
    first_diff = next((i for i, (x, y) in enumerate(zip(a, b)) if x != y), None)
    record_acceptance(9, ok, f"model files {'bit-identical' if ok else f'differ at byte {first_diff}'} "
                             f"({len(a)} bytes, second run {second.seconds:.0f} s)")
    assert ok
