import json
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phonemeda.audio_io import AudioClip, read_wav, resample
from phonemeda.dataset import (
    DEFAULT_PHRASES,
    DatasetManifest,
    ManifestEntry,
    SynthConfig,
    load_manifest,
    render_phoneme,
    split,
    synth_generate,
)
from phonemeda.dsp import stft
from phonemeda.errors import (
    DatasetTooSmall,
    InvalidConfig,
    MissingAudioFile,
    ParseError,
    SequenceTooLong,
)
from phonemeda.training import compute_loss_weights
from phonemeda.vocab import Vocabulary, control_ids, encode_tokens, pad_sequence, strip_tokens

VOCAB = Vocabulary.synthetic(12)
BEG, END, UNK = VOCAB.beg, VOCAB.end, VOCAB.unk


class TestVocabulary:
    def test_ids_contiguous(self):
        assert VOCAB.size == 17
        assert [VOCAB.id_of(s) for s in VOCAB.symbols] == list(range(17))

    def test_full_scale_size(self):
        assert Vocabulary(tuple(f"ph{i}" for i in range(26))).size == 31

    def test_control_ids_agree(self):
        ids = control_ids(17)
        assert (ids["UNK"], ids["BEG"], ids["END"], ids["BKG"], ids["NOISE"]) == (
            VOCAB.unk, VOCAB.beg, VOCAB.end, VOCAB.bkg, VOCAB.noise)

    @pytest.mark.parametrize("phonemes", [("a", "a"), ("a", "END"), ("a b",), ("",)])
    def test_invalid(self, phonemes):
        with pytest.raises(InvalidConfig):
            Vocabulary(phonemes)


class TestEncodeTokens:
    def test_example(self):
        assert encode_tokens("p5 p9 p3", VOCAB, 6).tolist() == [BEG, 5, 9, 3, END, END]

    def test_list_input(self):
        assert encode_tokens(["p1"], VOCAB, 3).tolist() == [BEG, 1, END]

    def test_unknown_symbol(self):
        assert encode_tokens("p1 zz p2", VOCAB, 5).tolist() == [BEG, 1, UNK, 2, END]

    def test_noise_and_silence(self):
        assert encode_tokens("", VOCAB, 5, "noise").tolist() == [BEG, VOCAB.noise, END, END, END]
        assert encode_tokens("", VOCAB, 3, "silence").tolist() == [BEG, VOCAB.bkg, END]

    def test_too_long(self):
        with pytest.raises(SequenceTooLong):
            encode_tokens("p1 p2 p3", VOCAB, 4)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.sampled_from(VOCAB.phonemes), max_size=8), st.integers(0, 4))
    def test_decode_recovers_input(self, symbols, extra):
        seq = encode_tokens(symbols, VOCAB, len(symbols) + 2 + extra)
        assert seq[0] == BEG
        assert np.all(seq[len(symbols) + 1:] == END)
        assert VOCAB.decode(strip_tokens(seq, BEG, END)) == symbols

    def test_pad_sequence(self):
        assert pad_sequence([BEG, 1, END, 4, 4], 6, END).tolist() == [BEG, 1, END, END, END, END]
        assert pad_sequence([BEG, 1, 2, 3], 3, END).tolist() == [BEG, 1, 2, 3]


def write_lines(path: Path, records) -> Path:
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in records))
    return path


class TestManifest:
    @pytest.fixture
    def wavs(self, tmp_path):
        for name in ("a.wav", "b.wav", "c.wav"):
            (tmp_path / name).write_bytes(b"")
        return tmp_path

    def test_three_lines(self, wavs):
        m = load_manifest(write_lines(wavs / "m.jsonl", [
            {"path": "a.wav", "phonemes": "p1 p2", "kind": "speech"},
            {"path": "b.wav", "phonemes": "", "kind": "noise"},
            {"path": str(wavs / "c.wav"), "phonemes": "", "kind": "silence"},
        ]))
        assert len(m) == 3
        assert m.entries[0].path == wavs / "a.wav"
        assert [e.kind for e in m] == ["speech", "noise", "silence"]

    def test_unknown_kind_names_line(self, wavs):
        path = write_lines(wavs / "m.jsonl", [
            {"path": "a.wav", "phonemes": "", "kind": "noise"},
            {"path": "b.wav", "phonemes": "", "kind": "music"},
        ])
        with pytest.raises(ParseError, match="line 2"):
            load_manifest(path)

    @pytest.mark.parametrize("bad", ["{not json", json.dumps({"path": "a.wav", "kind": "noise"}), "[1]"])
    def test_malformed_line(self, wavs, bad):
        with pytest.raises(ParseError, match="line 1"):
            load_manifest(write_lines(wavs / "m.jsonl", [bad]))

    def test_missing_file(self, wavs):
        path = write_lines(wavs / "m.jsonl", [{"path": "nope.wav", "phonemes": "", "kind": "noise"}])
        with pytest.raises(MissingAudioFile):
            load_manifest(path)
        assert len(load_manifest(path, check_paths=False)) == 1


SMALL = SynthConfig(clips_per_phrase=2, n_noise=3, n_silence=2)


class TestSynth:
    def test_deterministic_bytes(self, tmp_path):
        synth_generate(SMALL, 7, tmp_path / "a")
        synth_generate(SMALL, 7, tmp_path / "b")
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert len(files) == 14 * 2 + 3 + 2 + 1
        for rel in files:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel

    def test_seed_changes_output(self, tmp_path):
        a = synth_generate(SMALL, 1, tmp_path / "a")
        b = synth_generate(SMALL, 2, tmp_path / "b")
        assert a.entries[0].path.read_bytes() != b.entries[0].path.read_bytes()

    def test_manifest_contents(self, tmp_path):
        m = synth_generate(SMALL, 0, tmp_path)
        assert Counter(e.kind for e in m) == {"speech": 28, "noise": 3, "silence": 2}
        again = load_manifest(tmp_path / "manifest.jsonl")
        assert [(e.path, e.phonemes, e.kind) for e in again] == [(e.path, e.phonemes, e.kind) for e in m]

    def test_default_corpus_size(self):
        cfg = SynthConfig()
        assert len(cfg.phrases) == 14
        assert cfg.n_phonemes == 12
        assert len(cfg.phrases) * cfg.clips_per_phrase == 322
        assert cfg.n_noise + cfg.n_silence == 200

    def test_phrases_mention_only_known_or_oov_symbols(self):
        syms = {s for p in DEFAULT_PHRASES for s in p.split()}
        assert {f"p{i}" for i in range(12)} <= syms
        assert all(s.startswith("x") or s in VOCAB.phonemes for s in syms)

    def test_formant_peaks(self):
        x = render_phoneme(600.0, 1400.0, int(0.2 * 44100), 44100)
        clip = resample(AudioClip(x, 44100), 8820)
        power = (stft(clip, 1024, 128).values ** 2).sum(axis=0)
        local = [k for k in range(1, len(power) - 1) if power[k] >= power[k - 1] and power[k] >= power[k + 1]]
        top2 = sorted(sorted(local, key=lambda k: -power[k])[:2])
        bin_hz = 8820 / 1024
        assert abs(top2[0] * bin_hz - 600) <= bin_hz
        assert abs(top2[1] * bin_hz - 1400) <= bin_hz

    def test_silence_is_quiet(self, tmp_path):
        m = synth_generate(SMALL, 3, tmp_path)
        for e in m:
            if e.kind == "silence":
                assert np.sqrt(np.mean(read_wav(e.path).samples ** 2)) < 1e-4

    def test_samples_in_range(self, tmp_path):
        for e in synth_generate(SMALL, 4, tmp_path):
            s = read_wav(e.path).samples
            assert len(s) > 0 and np.abs(s).max() <= 1.0

    @pytest.mark.parametrize("change", [{"clips_per_phrase": 0}, {"phrases": ()}, {"n_noise": -1},
                                        {"phrases": ("p0 q9",)}, {"sample_rate": 4000}])
    def test_invalid_config(self, tmp_path, change):
        with pytest.raises(InvalidConfig):
            synth_generate(SynthConfig(**change), 0, tmp_path)


def fake_manifest(counts: dict) -> DatasetManifest:
    entries = []
    for (kind, phrase), n in counts.items():
        entries += [ManifestEntry(Path(f"{kind}_{phrase}_{i}.wav"), phrase, kind) for i in range(n)]
    return DatasetManifest(entries)


class TestSplit:
    def test_full_scale_counts(self):
        counts = {("speech", f"p{i}"): 300 for i in range(10)}
        counts[("noise", "")] = 300
        counts[("silence", "")] = 150
        train, test = split(fake_manifest(counts), 346 / 3450, 42)
        assert (len(train), len(test)) == (3104, 346)

    def test_same_seed_same_split(self):
        m = fake_manifest({("speech", "a"): 20, ("noise", ""): 10})
        assert split(m, 0.2, 5)[1].entries == split(m, 0.2, 5)[1].entries

    def test_disjoint_union(self):
        m = fake_manifest({("speech", "a"): 13, ("speech", "b"): 7, ("noise", ""): 9, ("silence", ""): 2})
        train, test = split(m, 0.25, 1)
        a, b = set(train.entries), set(test.entries)
        assert not a & b
        assert a | b == set(m.entries)

    def test_every_phrase_on_both_sides(self, tmp_path):
        m = synth_generate(SMALL, 0, tmp_path)
        train, test = split(m, 0.1, 42)
        for stratum in {e.stratum for e in m}:
            assert any(e.stratum == stratum for e in train)
            assert any(e.stratum == stratum for e in test)

    def test_too_small(self):
        with pytest.raises(DatasetTooSmall):
            split(fake_manifest({("speech", "a"): 5, ("speech", "b"): 1}), 0.2, 0)

    @pytest.mark.parametrize("fraction", [0.0, 1.0])
    def test_fraction_bounds(self, fraction):
        with pytest.raises(ValueError):
            split(fake_manifest({("noise", ""): 4}), fraction, 0)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(2, 40), min_size=1, max_size=6), st.floats(0.05, 0.5))
    def test_allocation_properties(self, sizes, fraction):
        m = fake_manifest({("speech", f"s{i}"): n for i, n in enumerate(sizes)})
        train, test = split(m, fraction, 0)
        assert len(train) + len(test) == len(m)
        for i in range(len(sizes)):
            assert any(e.phonemes == f"s{i}" for e in test)
            assert any(e.phonemes == f"s{i}" for e in train)


def test_frequency_table_matches_direct_count(tmp_path):
    m = synth_generate(SMALL, 0, tmp_path)
    seqs = [encode_tokens(e.phonemes, VOCAB, 8, e.kind) for e in m]
    weights = compute_loss_weights(seqs, VOCAB.size)
    direct = Counter(int(t) for s in seqs for t in s)
    assert weights.f.tolist() == [float(direct.get(i, 0)) for i in range(VOCAB.size)]
