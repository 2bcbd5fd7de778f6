"""Command-line entry point: synth, preprocess, train, eval, infer, verify."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline
from .config import desk_config, load_config, save_config
from .dataset import SynthConfig, load_manifest, synth_generate
from .dsp import write_matrix
from .errors import PhonemedaError
from .features import preprocess
from .metrics import write_confusion_csv, write_summary
from .modelfile import load_model

log = logging.getLogger("phonemeda")


def _config(args):
    cfg = load_config(args.config)
    train = cfg.train
    if getattr(args, "seed", None) is not None:
        train = replace(train, seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        train = replace(train, epochs=args.epochs)
    if getattr(args, "batch_size", None) is not None:
        train = replace(train, batch_size=args.batch_size)
    return replace(cfg, train=train).validate()


def cmd_synth(args) -> int:
    seed = 42 if args.seed is None else args.seed
    sc = SynthConfig(clips_per_phrase=args.clips_per_phrase, n_noise=args.noise, n_silence=args.silence)
    manifest = synth_generate(sc, seed, args.out)
    save_config(Path(args.out) / "config.json", desk_config(sc.n_phonemes, seed=seed, epochs=args.epochs))
    print(f"wrote {len(manifest)} clips and {Path(args.out) / 'manifest.jsonl'}")
    return 0


def cmd_preprocess(args) -> int:
    cfg = _config(args)
    manifest = load_manifest(args.manifest, check_paths=False)
    items, failures = preprocess(manifest, cfg)
    out = Path(args.out)
    (out / "spec").mkdir(parents=True, exist_ok=True)
    with open(out / "index.jsonl", "w", encoding="utf-8", newline="\n") as f:
        for it in items:
            name = f"spec/{it.source:05d}_{it.part:02d}.bin"
            write_matrix(out / name, it.spec)
            rec = {"spec": name, "tokens": it.tokens.tolist(), "kind": it.kind, "source": it.source}
            f.write(json.dumps(rec) + "\n")
    for fail in failures:
        print(f"error: {fail.path}: {fail.error}", file=sys.stderr)
    print(f"{len(items)} spectrograms written, {len(failures)} failed")
    return 1 if failures else 0


def cmd_train(args) -> int:
    cfg = _config(args)

    def report(rec):
        print(f"epoch {rec.epoch:4d}  loss {rec.mean_loss:.5f}  wacc {rec.weighted_accuracy:.4f}  "
              f"per {rec.per:.4f}", flush=True)

    _, model_cfg, history, data = pipeline.run_training(args.manifest, cfg, args.out, callback=report)
    last = history[-1]
    print(f"trained {len(data.train)} clips, held out {len(data.test)}; "
          f"final wacc {last.weighted_accuracy:.4f} per {last.per:.4f}")
    print(f"model written to {Path(args.out) / pipeline.MODEL_FILE}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    params, model_cfg = load_model(args.model)
    summary, counts, _ = pipeline.evaluate(params, model_cfg, args.manifest, cfg, args.subset)
    print(json.dumps(summary, sort_keys=True))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_summary(out / "metrics.json", summary)
        write_confusion_csv(out / "confusion.csv", counts, cfg.vocab.symbols)
    return 0


def cmd_infer(args) -> int:
    cfg = _config(args)
    res = pipeline.infer(args.model, args.wav, cfg)
    for symbols in res.symbols:
        print(" ".join(symbols))
    for stage, ms in res.timings_ms.items():
        print(f"  {stage:<12s} {ms:9.2f} ms", file=sys.stderr)
    return 0


def cmd_verify(args) -> int:
    paths = list(args.models) + list(args.model or [])
    if len(paths) != 2:
        print("error: verify needs exactly two model files", file=sys.stderr)
        return 2
    cfg = load_config(args.config)
    report = pipeline.verify(paths[0], paths[1], cfg.n_frames, args.tol)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phonemeda", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, manifest=False, model=False, out=False, out_required=False):
        p.add_argument("--config", help="JSON pipeline config")
        p.add_argument("--seed", type=int)
        if manifest:
            p.add_argument("--manifest", required=True)
        if model:
            p.add_argument("--model", required=True)
        if out:
            p.add_argument("--out", required=out_required)

    p = sub.add_parser("synth", help="render the synthetic corpus")
    common(p, out=True, out_required=True)
    p.add_argument("--clips-per-phrase", type=int, default=23)
    p.add_argument("--noise", type=int, default=140)
    p.add_argument("--silence", type=int, default=60)
    p.add_argument("--epochs", type=int, default=60, help="epochs recorded in the emitted config")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("preprocess", help="write log-mel spectrograms and token index")
    common(p, manifest=True, out=True, out_required=True)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("train", help="train a model")
    common(p, manifest=True, out=True, out_required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="weighted accuracy, PER and confusion matrix")
    common(p, manifest=True, model=True, out=True)
    p.add_argument("--subset", choices=("test", "train"), default="test")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="decode one WAV file")
    common(p, model=True)
    p.add_argument("wav")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("verify", help="zero-spectrogram parity between two model files")
    p.add_argument("models", nargs="*")
    p.add_argument("--model", action="append")
    p.add_argument("--config")
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except PhonemedaError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
