"""Tests for the synthetic tone corpus"""

import os
from collections import Counter

import numpy as np
import pytest

from kwskit.audio_processor import log_mel_features
from kwskit.datasets import read_manifest, read_wav
from kwskit.errors import ConfigError
from kwskit.kws_config import MODEL_PRESETS
from kwskit.kws_model import ModelConfig, embed_many, init_params
from kwskit.toy_corpus import (
    MANIFEST_NAME,
    MIN_RELATIVE_GAP,
    PROSODIES,
    phrase_name,
    tone_signatures,
    toy_generate,
)


def _clip(manifest, k):
    return read_wav(manifest.resolve(manifest[k]))


def _mean_pair_similarity(vectors, labels, same):
    """Mean Pearson correlation over all pairs with equal (or different) labels"""
    total, count = 0.0, 0
    for i in range(len(vectors)):
        for j in range(i + 1, len(vectors)):
            if (labels[i] == labels[j]) == same:
                total += float(np.corrcoef(vectors[i], vectors[j])[0, 1])
                count += 1
    return total / count


class TestToyGenerate:
    def test_counts_and_layout(self, toy_corpus):
        out_dir, manifest = toy_corpus
        assert len(manifest) == 24
        assert Counter(r.phrase for r in manifest) == {phrase_name(k): 6 for k in range(4)}
        assert manifest.source_counts() == {"tts": 24}
        for record in manifest:
            assert os.path.isfile(os.path.join(out_dir, record.path))
            assert record.path.startswith(record.phrase.replace(" ", "_"))
            assert record.prosody_id in PROSODIES
            assert record.speaker_id.startswith("spk")

    def test_manifest_file(self, toy_corpus):
        out_dir, manifest = toy_corpus
        assert read_manifest(os.path.join(out_dir, MANIFEST_NAME)) == manifest

    def test_clips_are_readable(self, toy_corpus):
        _, manifest = toy_corpus
        for k in range(len(manifest)):
            clip = _clip(manifest, k)
            assert 0.8 * 16000 - 1 <= clip.samples.size <= 1.2 * 16000 + 1
            assert np.abs(clip.samples).max() <= 1.0

    def test_bit_identical_for_same_seed(self, tmp_path):
        first = toy_generate(2, 3, str(tmp_path / "a"), seed=11, show_progress=False)
        second = toy_generate(2, 3, str(tmp_path / "b"), seed=11, show_progress=False)
        assert first.records == second.records
        for record in first:
            assert ((tmp_path / "a" / record.path).read_bytes()
                    == (tmp_path / "b" / record.path).read_bytes())

    def test_seed_changes_audio(self, tmp_path):
        first = toy_generate(1, 1, str(tmp_path / "a"), seed=1, show_progress=False)
        toy_generate(1, 1, str(tmp_path / "b"), seed=2, show_progress=False)
        path = first[0].path
        assert not (tmp_path / "b" / path).exists() or (
            (tmp_path / "a" / path).read_bytes() != (tmp_path / "b" / path).read_bytes())

    def test_phrase_offset(self, toy_eval_corpus):
        _, manifest = toy_eval_corpus
        assert manifest.phrases() == [phrase_name(500), phrase_name(501), phrase_name(502)]

    @pytest.mark.parametrize("n_phrases, per_phrase", [(0, 3), (3, 0)])
    def test_rejects_empty(self, tmp_path, n_phrases, per_phrase):
        with pytest.raises(ConfigError):
            toy_generate(n_phrases, per_phrase, str(tmp_path), seed=0, show_progress=False)


class TestToneSignatures:
    def test_distinct_on_some_tone(self):
        phrases = [phrase_name(k) for k in range(200)]
        signatures = tone_signatures(phrases, seed=3)
        values = list(signatures.values())
        for i in range(len(values)):
            for j in range(i):
                gaps = np.abs(values[i] - values[j]) / values[j]
                assert gaps.max() >= MIN_RELATIVE_GAP

    def test_deterministic(self):
        first = tone_signatures([phrase_name(9)], seed=5)
        np.testing.assert_array_equal(first[phrase_name(9)],
                                      tone_signatures([phrase_name(9)], seed=5)[phrase_name(9)])

    def test_range(self):
        for freqs in tone_signatures([phrase_name(k) for k in range(50)], seed=0).values():
            assert np.all((freqs >= 300.0) & (freqs <= 3000.0))


class TestSeparability:
    def test_features_cluster_by_phrase(self, toy_corpus):
        _, manifest = toy_corpus
        vectors = [log_mel_features(_clip(manifest, k)).frames.mean(axis=0)
                   for k in range(len(manifest))]
        labels = [r.phrase for r in manifest]
        assert (_mean_pair_similarity(vectors, labels, same=True)
                > _mean_pair_similarity(vectors, labels, same=False))

    def test_random_model_embeddings_cluster_by_phrase(self, toy_corpus):
        _, manifest = toy_corpus
        params = init_params(ModelConfig(**MODEL_PRESETS["toy"]), seed=0)
        features = [log_mel_features(_clip(manifest, k)) for k in range(len(manifest))]
        embeddings = embed_many(features, params)
        labels = [r.phrase for r in manifest]
        assert (_mean_pair_similarity(embeddings, labels, same=True)
                > _mean_pair_similarity(embeddings, labels, same=False))
