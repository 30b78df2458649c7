"""Tests for manifests, subsampling, mixing and WAV I/O"""

import json
import os
from collections import Counter

import numpy as np
import pytest
import soundfile as sf

from kwskit.audio_processor import AudioClip
from kwskit.datasets import (
    Manifest,
    UtteranceRecord,
    mix,
    read_manifest,
    read_wav,
    sample_subset,
    sample_utterances,
    write_manifest,
    write_wav,
)
from kwskit.errors import (
    DataError,
    DuplicatePath,
    InsufficientPhrases,
    InsufficientUtterances,
    ParseError,
    UnsupportedFormat,
)


def _corpus(counts, source="real"):
    return Manifest(tuple(
        UtteranceRecord(f"{source}/{phrase}/{k}.wav", phrase, source, speaker_id=f"s{k % 3}")
        for phrase, n in counts.items() for k in range(n)
    ))


def _line(path, phrase="hey there", source="real", speaker_id="a", prosody_id=None):
    return json.dumps({"path": path, "phrase": phrase, "source": source,
                       "speaker_id": speaker_id, "prosody_id": prosody_id})


class TestUtteranceRecord:
    def test_phrase_normalization(self):
        record = UtteranceRecord("x.wav", "  Hey   THERE ")
        assert record.phrase == "hey there"

    def test_unknown_source(self):
        with pytest.raises(DataError):
            UtteranceRecord("x.wav", "hi", source="studio")

    def test_empty_phrase(self):
        with pytest.raises(DataError):
            UtteranceRecord("x.wav", "   ")


class TestManifest:
    def test_duplicate_path(self):
        with pytest.raises(DuplicatePath) as info:
            Manifest((UtteranceRecord("a.wav", "x"), UtteranceRecord("a.wav", "y")))
        assert info.value.path == "a.wav"

    def test_phrase_index(self):
        manifest = _corpus({"b": 2, "a": 3})
        assert manifest.phrase_index() == {"b": [0, 1], "a": [2, 3, 4]}
        assert manifest.phrases() == ["a", "b"]

    def test_summary(self):
        manifest = mix(_corpus({"a": 2, "b": 1}), _corpus({"a": 4}, source="tts"))
        summary = manifest.summary()
        assert int(summary["utterances"].sum()) == 7
        assert set(summary["source"]) == {"real", "tts"}

    def test_round_trip(self, tmp_path):
        manifest = Manifest((
            UtteranceRecord("one.wav", "ok computer", "real", "spk1"),
            UtteranceRecord("two.wav", "ok computer", "tts", "voice3", "fast"),
        ))
        path = str(tmp_path / "sub" / "manifest.jsonl")
        write_manifest(manifest, path)
        loaded = read_manifest(path)
        assert loaded == manifest
        assert loaded.base_dir == str(tmp_path / "sub")
        assert loaded.resolve(loaded[0]) == str(tmp_path / "sub" / "one.wav")

    def test_blank_lines_are_skipped(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(_line("a.wav") + "\n\n" + _line("b.wav") + "\n")
        assert len(read_manifest(str(path))) == 2


class TestManifestParseErrors:
    @pytest.mark.parametrize("bad", [
        "{not json",
        json.dumps(["a.wav", "x"]),
        json.dumps({"path": "c.wav", "phrase": "x", "source": "real", "speaker_id": "a"}),
        _line("c.wav")[:-1] + ', "extra": 1}',
        _line("c.wav", source="studio"),
        _line(""),
    ])
    def test_reports_line_number(self, tmp_path, bad):
        path = tmp_path / "m.jsonl"
        path.write_text("\n".join([_line("a.wav"), _line("b.wav"), bad]) + "\n")
        with pytest.raises(ParseError) as info:
            read_manifest(str(path))
        assert info.value.line == 3

    def test_duplicate_lines(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text("\n".join([_line("a.wav"), _line("a.wav")]) + "\n")
        with pytest.raises(DuplicatePath):
            read_manifest(str(path))


class TestSampleSubset:
    def test_counts(self):
        subset = sample_subset(_corpus({f"p{k}": 12 for k in range(10)}), 4, 5, seed=0)
        assert len(subset) == 20
        assert sorted(Counter(r.phrase for r in subset).values()) == [5] * 4

    def test_zero_counts_give_empty_manifest(self):
        corpus = _corpus({"a": 3})
        assert len(sample_subset(corpus, 0, 3, seed=0)) == 0
        assert len(sample_subset(corpus, 1, 0, seed=0)) == 0

    def test_subset_of_source(self):
        corpus = _corpus({f"p{k}": 8 for k in range(6)})
        subset = sample_subset(corpus, 3, 4, seed=1)
        assert set(subset.records) <= set(corpus.records)

    def test_deterministic(self):
        corpus = _corpus({f"p{k}": 8 for k in range(6)})
        assert sample_subset(corpus, 3, 4, seed=9) == sample_subset(corpus, 3, 4, seed=9)

    def test_too_few_phrases(self):
        with pytest.raises(InsufficientPhrases):
            sample_subset(_corpus({"a": 5, "b": 5}), 3, 2, seed=0)

    def test_too_few_utterances(self):
        with pytest.raises(InsufficientUtterances) as info:
            sample_subset(_corpus({"a": 5, "b": 2}), 2, 3, seed=0)
        assert info.value.phrase == "b"

    def test_short_phrases_are_passed_over(self):
        subset = sample_subset(_corpus({"a": 5, "b": 2, "c": 6}), 2, 4, seed=0)
        assert set(r.phrase for r in subset) == {"a", "c"}

    def test_sample_utterances(self):
        corpus = _corpus({"a": 5, "b": 5})
        assert len(sample_utterances(corpus, 7, seed=0)) == 7
        with pytest.raises(InsufficientUtterances):
            sample_utterances(corpus, 11, seed=0)


class TestMix:
    def test_counts(self):
        real, tts = _corpus({"a": 3, "b": 2}), _corpus({"a": 4}, source="tts")
        mixed = mix(real, tts)
        assert len(mixed) == 9
        assert mixed.source_counts() == {"real": 5, "tts": 4}

    def test_commutative_as_multiset(self):
        real, tts = _corpus({"a": 3}), _corpus({"a": 2, "c": 1}, source="tts")
        assert Counter(mix(real, tts).records) == Counter(mix(tts, real).records)

    def test_overlapping_paths(self):
        with pytest.raises(DuplicatePath):
            mix(_corpus({"a": 2}), _corpus({"a": 2}))

    def test_resolves_relative_paths(self, tmp_path):
        left = Manifest((UtteranceRecord("x.wav", "a"),), base_dir=str(tmp_path / "l"))
        right = Manifest((UtteranceRecord("x.wav", "a", "tts"),), base_dir=str(tmp_path / "r"))
        paths = [r.path for r in mix(left, right)]
        assert paths == [str(tmp_path / "l" / "x.wav"), str(tmp_path / "r" / "x.wav")]


class TestWav:
    def test_read(self, tmp_path):
        path = str(tmp_path / "a.wav")
        pcm = np.zeros(16000, dtype=np.int16)
        pcm[0], pcm[1] = -32768, 16384
        sf.write(path, pcm, 16000, subtype="PCM_16")
        clip = read_wav(path)
        assert clip.samples.size == 16000
        assert clip.samples[0] == -1.0
        assert clip.samples[1] == 0.5

    def test_write_read(self, tmp_path, rng):
        path = str(tmp_path / "nested" / "b.wav")
        samples = rng.uniform(-0.9, 0.9, 800)
        write_wav(path, AudioClip(samples))
        assert np.abs(read_wav(path).samples - samples).max() <= 1 / 32768

    def test_wrong_rate(self, tmp_path):
        path = str(tmp_path / "c.wav")
        sf.write(path, np.zeros(441, dtype=np.int16), 44100, subtype="PCM_16")
        with pytest.raises(UnsupportedFormat):
            read_wav(path)

    def test_stereo(self, tmp_path):
        path = str(tmp_path / "d.wav")
        sf.write(path, np.zeros((100, 2), dtype=np.int16), 16000, subtype="PCM_16")
        with pytest.raises(UnsupportedFormat):
            read_wav(path)

    def test_float_encoding(self, tmp_path):
        path = str(tmp_path / "e.wav")
        sf.write(path, np.zeros(100), 16000, subtype="FLOAT")
        with pytest.raises(UnsupportedFormat):
            read_wav(path)

    def test_not_audio(self, tmp_path):
        path = tmp_path / "f.wav"
        path.write_bytes(b"this is not a wav file")
        with pytest.raises(UnsupportedFormat):
            read_wav(str(path))

    def test_resolve_uses_manifest_dir(self, tmp_path):
        os.makedirs(tmp_path / "audio")
        sf.write(str(tmp_path / "audio" / "g.wav"), np.ones(50, dtype=np.int16), 16000,
                 subtype="PCM_16")
        manifest = Manifest((UtteranceRecord("audio/g.wav", "a"),), base_dir=str(tmp_path))
        assert read_wav(manifest.resolve(manifest[0])).samples.size == 50
