"""Token vocabulary and phoneme-sequence encoding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidConfig, SequenceTooLong

CONTROL_TOKENS = ("UNK", "BEG", "END", "BKG", "NOISE")
KINDS = ("speech", "noise", "silence")


@dataclass(frozen=True)
class Vocabulary:
    """Phoneme symbols take ids ``0..P-1``; the five control tokens follow."""

    phonemes: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "phonemes", tuple(self.phonemes))
        if len(set(self.phonemes)) != len(self.phonemes):
            raise InvalidConfig("duplicate phoneme symbols")
        clash = set(self.phonemes) & set(CONTROL_TOKENS)
        if clash:
            raise InvalidConfig(f"phoneme symbols collide with control tokens: {sorted(clash)}")
        if any(not p or any(c.isspace() for c in p) for p in self.phonemes):
            raise InvalidConfig("phoneme symbols must be non-empty and contain no whitespace")

    @classmethod
    def synthetic(cls, n_phonemes: int = 12) -> "Vocabulary":
        return cls(tuple(f"p{i}" for i in range(n_phonemes)))

    @property
    def symbols(self) -> tuple[str, ...]:
        return self.phonemes + CONTROL_TOKENS

    @property
    def size(self) -> int:
        return len(self.phonemes) + len(CONTROL_TOKENS)

    def id_of(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            return self.unk

    @property
    def _index(self) -> dict[str, int]:
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {s: i for i, s in enumerate(self.symbols)}
            object.__setattr__(self, "_idx", idx)
        return idx

    unk = property(lambda self: len(self.phonemes))
    beg = property(lambda self: len(self.phonemes) + 1)
    end = property(lambda self: len(self.phonemes) + 2)
    bkg = property(lambda self: len(self.phonemes) + 3)
    noise = property(lambda self: len(self.phonemes) + 4)

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.symbols[i] for i in ids]


def control_ids(T: int) -> dict[str, int]:
    """Control-token ids implied by a vocabulary of ``T`` tokens."""
    p = T - len(CONTROL_TOKENS)
    return {name: p + i for i, name in enumerate(CONTROL_TOKENS)}


def split_phonemes(transcription: str | Sequence[str]) -> list[str]:
    if isinstance(transcription, str):
        return transcription.split()
    return list(transcription)


def encode_tokens(transcription: str | Sequence[str], vocab: Vocabulary, pad_to: int,
                  kind: str = "speech") -> np.ndarray:
    """``[BEG, ids..., END]`` padded with END up to ``pad_to``.

    Non-speech clips encode as ``[BEG, NOISE, END]`` or ``[BEG, BKG, END]``
    regardless of the transcription. Unknown symbols become UNK.
    """
    if kind == "speech":
        body = [vocab.id_of(s) for s in split_phonemes(transcription)]
    elif kind == "noise":
        body = [vocab.noise]
    elif kind == "silence":
        body = [vocab.bkg]
    else:
        raise ValueError(f"unknown label kind {kind!r}")
    if len(body) + 2 > pad_to:
        raise SequenceTooLong(f"{len(body)} tokens + BEG/END exceed pad_to={pad_to}")
    seq = [vocab.beg, *body] + [vocab.end] * (pad_to - len(body) - 1)
    return np.asarray(seq, dtype=np.int64)


def strip_tokens(seq: Sequence[int], beg: int, end: int) -> list[int]:
    """Drop a leading BEG and everything from the first END on."""
    out = list(int(t) for t in seq)
    if out and out[0] == beg:
        out = out[1:]
    if end in out:
        out = out[: out.index(end)]
    return out


def pad_sequence(seq: Sequence[int], length: int, end: int) -> np.ndarray:
    """END-pad a predicted sequence after its first END (never truncates)."""
    out = [int(t) for t in seq]
    if end in out:
        out = out[: out.index(end) + 1]
    out += [end] * max(0, length - len(out))
    return np.asarray(out, dtype=np.int64)
