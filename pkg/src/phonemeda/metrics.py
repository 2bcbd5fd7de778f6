"""Weighted accuracy, phoneme error rate and confusion matrices."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyGroundTruth, TokenOutOfRange
from .vocab import strip_tokens


@dataclass(frozen=True)
class EvalPair:
    r: Sequence[int]  # ground truth
    p: Sequence[int]  # prediction


def _weight_vector(w) -> np.ndarray:
    return np.asarray(getattr(w, "w", w), dtype=np.float64)


def weighted_accuracy(pair: EvalPair, w) -> float:
    """``<w^(r&p), r&p> / <w^r, r>`` over aligned positions.

    Positions past the end of the shorter sequence count as wrong; the
    denominator always covers the whole ground truth.
    """
    w = _weight_vector(w)
    r = np.asarray(pair.r, dtype=np.int64)
    p = np.asarray(pair.p, dtype=np.int64)
    if len(r) == 0:
        raise EmptyGroundTruth("ground-truth sequence is empty")
    n = min(len(r), len(p))
    hit = r[:n] == p[:n]
    return float(w[p[:n][hit]].sum() / w[r].sum())


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Minimum insertions, deletions and substitutions turning ``a`` into ``b``."""
    a, b = list(a), list(b)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def per(pair: EvalPair, beg: int | None = None, end: int | None = None) -> float:
    """Levenshtein distance over ground-truth length.

    When ``beg``/``end`` are given both sequences first lose their leading BEG
    and everything from the first END. The result is not clamped to 1.
    """
    r, p = list(pair.r), list(pair.p)
    if beg is not None and end is not None:
        r, p = strip_tokens(r, beg, end), strip_tokens(p, beg, end)
    if not r:
        raise EmptyGroundTruth("ground-truth sequence is empty after stripping")
    return levenshtein(p, r) / len(r)


def confusion_matrix(pairs: Sequence[EvalPair], T: int, beg: int | None = None,
                     end: int | None = None) -> np.ndarray:
    """``counts[truth, predicted]`` over position-aligned tokens."""
    counts = np.zeros((T, T), dtype=np.int64)
    for pair in pairs:
        r, p = list(pair.r), list(pair.p)
        if beg is not None and end is not None:
            r, p = strip_tokens(r, beg, end), strip_tokens(p, beg, end)
        n = min(len(r), len(p))
        for a, b in zip(r[:n], p[:n]):
            if not (0 <= a < T and 0 <= b < T):
                raise TokenOutOfRange(f"token pair ({a}, {b}) outside [0, {T})")
            counts[a, b] += 1
    return counts


def summarize(pairs: Sequence[EvalPair], w, beg: int, end: int) -> dict:
    """Per-clip means of weighted accuracy and PER."""
    return {
        "weighted_accuracy": float(np.mean([weighted_accuracy(p, w) for p in pairs])),
        "per": float(np.mean([per(p, beg, end) for p in pairs])),
        "n_pairs": len(pairs),
        "reduction": "mean over clips",
    }


def write_confusion_csv(path, counts: np.ndarray, symbols: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["truth\\pred", *symbols])
        for sym, row in zip(symbols, counts):
            writer.writerow([sym, *(int(v) for v in row)])


def write_summary(path, summary: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
