"""Tests for the service registry and the experiment services"""

import json
import math
import os

import numpy as np
import pandas as pd
import pytest

from kwskit.audio_processor import AudioClip, log_mel_features
from kwskit.checkpoint import save_checkpoint
from kwskit.datasets import Manifest, UtteranceRecord, write_manifest
from kwskit.errors import ConfigError, DataError, ParseError, ReportError
from kwskit.experiment_config import SCENARIOS, SweepCell, SweepConfig
from kwskit.interpolation import read_curve_csv
from kwskit.kws_model import init_params
from kwskit.services.evaluation_service import EvaluationService, det_filename
from kwskit.services.feature_service import FeatureService
from kwskit.services.report_service import PROVENANCE, ReportService, classify_table
from kwskit.services.service_manager import ExperimentServiceManager
from kwskit.services.sweep_service import (
    RESULT_COLUMNS,
    SweepService,
    add_relative_improvements,
    cell_manifest,
    curve_points,
)
from kwskit.services.trainer_service import TrainerService
from kwskit.toy_corpus import MANIFEST_NAME, toy_generate


class TestServiceManager:
    def test_available_services(self, make_config):
        manager = ExperimentServiceManager(make_config())
        available = manager.get_available_services()
        for name in ("features", "evaluator", "trainer", "sweep", "report"):
            assert name in available

    def test_services_are_cached(self, make_config):
        manager = ExperimentServiceManager(make_config())
        assert manager.get_service("features") is manager.get_service("features")
        assert manager.get_service("trainer").features is manager.get_service("features")

    def test_unknown_service(self, make_config):
        manager = ExperimentServiceManager(make_config())
        assert not manager.is_available("speech_synthesizer")
        assert manager.get_service("speech_synthesizer") is None
        with pytest.raises(ConfigError):
            manager.require_service("speech_synthesizer")

    def test_invalid_sweep_grid_is_a_config_error(self, make_config):
        manager = ExperimentServiceManager(make_config(sweep={"n_phrases": [], "per_phrase": []}))
        with pytest.raises(ConfigError):
            manager.get_service("sweep")


class TestFeatureService:
    def test_featurize_is_idempotent(self, tmp_path, make_config, toy_corpus):
        _, manifest = toy_corpus
        service = FeatureService(make_config(), num_workers=2)
        first = service.featurize_manifest(manifest, str(tmp_path / "feats"), show_progress=False)
        assert (first.written, first.skipped, first.ok) == (24, 0, True)
        second = service.featurize_manifest(manifest, str(tmp_path / "feats"), show_progress=False)
        assert (second.written, second.skipped) == (0, 24)
        assert len(os.listdir(tmp_path / "feats")) == 24

    def test_corrupt_file_is_reported(self, tmp_path, make_config, toy_corpus):
        _, manifest = toy_corpus
        bad = tmp_path / "broken.wav"
        bad.write_bytes(b"RIFF....not really")
        records = manifest.resolved().records[:3] + (UtteranceRecord(str(bad), "phrase 000"),)
        report = FeatureService(make_config()).featurize_manifest(
            Manifest(records), str(tmp_path / "feats"), show_progress=False)
        assert report.written == 3
        assert not report.ok
        assert report.errors[0][0] == str(bad)

    def test_cache_key_depends_on_feature_settings(self, make_config):
        plain = FeatureService(make_config())
        other = FeatureService(make_config(features={"n_mels": 20}))
        assert plain.cache_path("a.wav", "/c") != other.cache_path("a.wav", "/c")

    def test_features_match_cache(self, make_config, toy_corpus):
        _, manifest = toy_corpus
        service = FeatureService(make_config())
        fresh = service.features_for(manifest, 0)
        cached = FeatureService(make_config()).features_for(manifest, 0)
        np.testing.assert_allclose(cached.frames, fresh.frames, rtol=1e-6)
        assert service.load_many(manifest, [3, 1])[1].num_frames == service.features_for(manifest, 1).num_frames

    def test_cached_features_stay_on_the_floor(self, make_config):
        service = FeatureService(make_config())
        silence = Manifest((UtteranceRecord("silence.wav", "quiet"),))
        service.compute = lambda path: log_mel_features(AudioClip(np.zeros(16000)))
        service.features_for(silence, 0)
        reread = FeatureService(make_config()).features_for(silence, 0)
        assert reread.frames.min() >= math.log(1e-6)
        np.testing.assert_array_equal(reread.frames, math.log(1e-6))

    def test_memory_cache_is_bounded(self, make_config, toy_corpus):
        _, manifest = toy_corpus
        service = FeatureService(make_config(train={"memory_cache_entries": 3}))
        for record_id in range(len(manifest)):
            service.features_for(manifest, record_id)
        assert service.memory_size == 3

    def test_memory_cache_evicts_least_recently_used(self, make_config, toy_corpus):
        _, manifest = toy_corpus
        service = FeatureService(make_config(train={"memory_cache_entries": 2}))
        first = service.features_for(manifest, 0)
        second = service.features_for(manifest, 1)
        assert service.features_for(manifest, 0) is first
        service.features_for(manifest, 2)
        assert service.features_for(manifest, 0) is first
        assert service.features_for(manifest, 1) is not second

    def test_memory_cache_can_be_disabled(self, make_config, toy_corpus):
        _, manifest = toy_corpus
        service = FeatureService(make_config(train={"memory_cache_entries": 0}))
        service.load_many(manifest, [0, 1, 2])
        assert service.memory_size == 0


class TestEvaluationService:
    def test_write_outputs(self, tmp_path, make_config, toy_eval_corpus):
        _, manifest = toy_eval_corpus
        config = make_config()
        evaluator = EvaluationService(config)
        params = init_params(TrainerService(config).model_config, seed=0)
        result = evaluator.evaluate_params(params, manifest)
        written = evaluator.write_outputs(result, str(tmp_path / "eval"))

        metrics = pd.read_csv(written["metrics"])
        assert len(metrics) == 4
        assert sorted(os.listdir(tmp_path / "eval" / "det")) == sorted(
            det_filename(p) for p in manifest.phrases())
        assert len(pd.read_csv(written["mean_det"])) == 101
        hist = pd.read_csv(written["histograms"])
        # 3 phrases x (5 - 2 enrollment) test utterances
        assert hist["positive"].sum() == 9
        assert hist["negative"].sum() == 18

    def test_same_checkpoint_gives_identical_files(self, tmp_path, make_config, toy_eval_corpus):
        _, manifest = toy_eval_corpus
        config = make_config()
        path = str(tmp_path / "model.s4kc")
        save_checkpoint(init_params(TrainerService(config).model_config, seed=3), path)
        outputs = []
        for run in ("a", "b"):
            evaluator = EvaluationService(config)
            written = evaluator.write_outputs(evaluator.evaluate_checkpoint(path, manifest),
                                              str(tmp_path / run))
            with open(written["metrics"], "rb") as f:
                outputs.append(f.read())
        assert outputs[0] == outputs[1]

    def test_det_filename(self):
        assert det_filename("Hey  Computer!") == "hey_computer.csv"


class TestTrainerService:
    def test_short_run(self, tmp_path, make_config, toy_corpus, toy_eval_corpus):
        config = make_config(train={"max_steps": 3, "eval_every": 2})
        trainer = ExperimentServiceManager(config).require_service("trainer")
        result = trainer.train(toy_corpus[1], toy_eval_corpus[1], str(tmp_path / "run"))
        assert len(result.losses) == 3
        assert all(math.isfinite(v) for v in result.losses)
        assert result.evaluations == 2
        assert result.best_step in (2, 3)
        for path in (result.best_path, result.last_path, result.int8_path):
            assert os.path.exists(path)
        log = pd.read_csv(result.log_path)
        assert log["step"].tolist() == [1, 2, 3]
        assert log["auc"].notna().sum() == 2

    def test_without_eval_manifest(self, tmp_path, make_config, toy_corpus):
        trainer = TrainerService(make_config(train={"max_steps": 2}))
        result = trainer.train(toy_corpus[1], None, str(tmp_path / "run"))
        assert result.evaluations == 0
        assert result.best_step == 2
        assert os.path.exists(result.best_path)

    def test_fixed_seed_is_reproducible(self, tmp_path, make_config, toy_corpus):
        config = make_config(train={"max_steps": 3})
        first = TrainerService(config).train(toy_corpus[1], None, str(tmp_path / "a"))
        second = TrainerService(config).train(toy_corpus[1], None, str(tmp_path / "b"))
        assert first.losses == second.losses


class TestSweepHelpers:
    def test_cell_manifest_mixes_sources(self, toy_corpus, toy_eval_corpus):
        cell = SweepCell("custom", 2, 4, 5)
        real = Manifest(tuple(UtteranceRecord(r.path, r.phrase, "real", r.speaker_id)
                              for r in toy_eval_corpus[1].resolved()))
        manifest = cell_manifest(cell, toy_corpus[1], real, seed=0)
        assert len(manifest) == 13
        assert manifest.source_counts() == {"tts": 8, "real": 5}

    def test_cell_without_data(self, toy_corpus):
        with pytest.raises(DataError):
            cell_manifest(SweepCell("custom", 0, 4, 0), toy_corpus[1], None, seed=0)

    def test_cell_needs_real_manifest(self, toy_corpus):
        with pytest.raises(ConfigError):
            cell_manifest(SweepCell("custom", 2, 4, 10), toy_corpus[1], None, seed=0)

    def test_relative_improvements(self):
        frame = pd.DataFrame([
            {"n_phrases": 0, "per_phrase": 0, "real_count": 100, "eer_percent": 10.0,
             "auc_percent": 4.0, "status": "ok"},
            {"n_phrases": 50, "per_phrase": 10, "real_count": 100, "eer_percent": 8.0,
             "auc_percent": 3.0, "status": "ok"},
            {"n_phrases": 50, "per_phrase": 10, "real_count": 0, "eer_percent": 20.0,
             "auc_percent": 9.0, "status": "ok"},
        ])
        result = add_relative_improvements(frame)
        assert result["rel_eer_improvement_percent"].iloc[1] == pytest.approx(20.0)
        assert result["rel_auc_improvement_percent"].iloc[1] == pytest.approx(25.0)
        assert result["rel_eer_improvement_percent"].iloc[0] == 0.0
        assert math.isnan(result["rel_eer_improvement_percent"].iloc[2])

    def test_curve_points(self):
        frame = pd.DataFrame({"real_count": [500, 0, 100], "eer_percent": [3.0, 9.0, 5.0],
                              "auc_percent": [1.0, 4.0, 2.0], "status": ["ok"] * 3})
        assert [p.real_utterance_count for p in curve_points(frame)] == [0, 100, 500]
        assert curve_points(frame.iloc[:1]) == []


@pytest.fixture(scope="module")
def real_manifest(tmp_path_factory):
    """4 phrases x 6 utterances tagged as real recordings, disjoint from the toy corpora"""
    out_dir = tmp_path_factory.mktemp("real_corpus")
    generated = toy_generate(4, 6, str(out_dir), seed=11, phrase_offset=200, show_progress=False)
    real = Manifest(tuple(UtteranceRecord(r.path, r.phrase, "real", r.speaker_id, r.prosody_id)
                          for r in generated.resolved()))
    path = str(out_dir / "real.jsonl")
    write_manifest(real, path)
    return path


class TestSweepConfig:
    def test_scenario_preset_fills_the_grid(self):
        sweep = SweepConfig.from_dict({"scenario": "low_real_diversity"})
        assert sweep.n_phrases == SCENARIOS["low_real_diversity"]["n_phrases"]
        assert sweep.real_counts == [50000]
        cells = sweep.cells()
        assert len(cells) == 5
        assert [c.is_baseline for c in cells] == [True, False, False, False, False]
        assert cells[0].cell_id == "p0_u100_r50000"

    def test_explicit_lists_override_the_preset(self):
        sweep = SweepConfig.from_dict({"scenario": "varying_real", "real_counts": [0, 100],
                                       "n_phrases": []})
        assert sweep.real_counts == [0, 100]
        assert sweep.n_phrases == [38000]
        assert sweep.per_phrase == [100]

    def test_sampling_scenario_has_a_baseline_per_real_count(self):
        cells = SweepConfig.from_dict({"scenario": "low_real_sampling"}).cells()
        assert [c.per_phrase for c in cells] == [0, 10, 25, 50, 75, 100]
        assert sum(c.is_baseline for c in cells) == 1

    def test_no_real_scenarios_have_no_baseline(self):
        for name in ("no_real_diversity", "no_real_sampling"):
            assert not any(c.is_baseline for c in SweepConfig.from_dict({"scenario": name}).cells())

    def test_custom_grid_without_real_counts(self):
        sweep = SweepConfig.from_dict({"n_phrases": [2], "per_phrase": [4], "real_counts": []})
        assert sweep.real_counts == [0]

    def test_unknown_scenario(self):
        with pytest.raises(ConfigError):
            SweepConfig.from_dict({"scenario": "everything"})

    def test_default_config_with_scenario(self, make_config):
        sweep = SweepService(make_config(sweep={"scenario": "varying_real"})).sweep_config
        assert sweep.real_counts == SCENARIOS["varying_real"]["real_counts"]
        assert len(sweep.cells()) == 8


class TestSweepService:
    def test_grid_with_a_failing_cell(self, tmp_path, make_config, toy_corpus, toy_eval_corpus):
        corpus_dir, eval_dir = toy_corpus[0], toy_eval_corpus[0]
        config = make_config(
            train={"max_steps": 2, "eval_every": 2},
            sweep={"scenario": "custom", "n_phrases": [2, 9], "per_phrase": [4], "real_counts": [0],
                   "tts_manifest": str(corpus_dir / MANIFEST_NAME),
                   "eval_manifest": str(eval_dir / MANIFEST_NAME), "max_workers": 1},
        )
        frame = SweepService(config).run(str(tmp_path / "sweep"), show_progress=False)
        assert list(frame.columns) == RESULT_COLUMNS
        assert frame["status"].tolist() == ["ok", "failed"]
        assert "InsufficientPhrases" in frame["error"].iloc[1]
        assert frame["train_utterances"].iloc[0] == 8
        assert 0.0 <= frame["eer_percent"].iloc[0] <= 100.0
        assert os.path.exists(tmp_path / "sweep" / "sweep_results.csv")
        assert os.path.exists(tmp_path / "sweep" / "cells" / "p2_u4_r0" / "eval" / "metrics.csv")

    def test_real_only_baseline_and_mixed_rows(self, tmp_path, make_config, toy_corpus,
                                               toy_eval_corpus, real_manifest):
        config = make_config(
            train={"max_steps": 2, "eval_every": 2},
            sweep={"scenario": "custom", "n_phrases": [0, 2], "per_phrase": [4], "real_counts": [16],
                   "tts_manifest": str(toy_corpus[0] / MANIFEST_NAME), "real_manifest": real_manifest,
                   "eval_manifest": str(toy_eval_corpus[0] / MANIFEST_NAME)},
        )
        frame = SweepService(config).run(str(tmp_path / "sweep"), show_progress=False)
        assert frame["status"].tolist() == ["ok", "ok"]
        assert frame[["n_phrases", "per_phrase", "real_count"]].values.tolist() == [[0, 4, 16], [2, 4, 16]]
        assert frame["train_utterances"].tolist() == [16, 24]
        base, mixed = frame.iloc[0], frame.iloc[1]
        if base["eer_percent"] > 0:
            assert base["rel_eer_improvement_percent"] == 0.0
            expected = 100.0 * (base["eer_percent"] - mixed["eer_percent"]) / base["eer_percent"]
            assert mixed["rel_eer_improvement_percent"] == pytest.approx(expected)
        written = pd.read_csv(tmp_path / "sweep" / "sweep_results.csv")
        assert list(written.columns) == RESULT_COLUMNS
        assert len(written) == 2
        # two rows share real_count 16, so there is no quality-vs-real-data curve
        assert not os.path.exists(tmp_path / "sweep" / "curve.csv")

    def test_varying_real_writes_curve(self, tmp_path, make_config, toy_eval_corpus, real_manifest):
        config = make_config(
            train={"max_steps": 2, "eval_every": 2},
            sweep={"scenario": "custom", "n_phrases": [0], "per_phrase": [0], "real_counts": [24, 16],
                   "real_manifest": real_manifest,
                   "eval_manifest": str(toy_eval_corpus[0] / MANIFEST_NAME)},
        )
        frame = SweepService(config).run(str(tmp_path / "sweep"), show_progress=False)
        assert frame["status"].tolist() == ["ok", "ok"]
        curve = pd.read_csv(tmp_path / "sweep" / "curve.csv")
        assert list(curve.columns) == ["real_count", "eer_percent", "auc_percent"]
        assert curve["real_count"].tolist() == [16, 24]
        points = read_curve_csv(str(tmp_path / "sweep" / "curve.csv"))
        assert [p.real_utterance_count for p in points] == [16, 24]

    def test_missing_manifest_fails_the_cell(self, tmp_path, make_config, toy_eval_corpus):
        config = make_config(
            sweep={"scenario": "custom", "n_phrases": [2, 3], "per_phrase": [4], "real_counts": [0],
                   "tts_manifest": str(tmp_path / "absent.jsonl"),
                   "eval_manifest": str(toy_eval_corpus[0] / MANIFEST_NAME)},
        )
        frame = SweepService(config).run(str(tmp_path / "sweep"), show_progress=False)
        assert frame["status"].tolist() == ["failed", "failed"]
        assert frame["error"].str.contains("absent.jsonl").all()


def _metrics_csv(path, rows):
    pd.DataFrame(rows, columns=["phrase", "eer_percent", "auc_percent", "n_pos", "n_neg"]) \
        .to_csv(path, index=False)


class TestReportService:
    def test_merge_keeps_rows_and_provenance(self, tmp_path):
        os.makedirs(tmp_path / "run_a")
        os.makedirs(tmp_path / "run_b")
        _metrics_csv(tmp_path / "run_a" / "metrics.csv", [("x", 1.0, 0.5, 3, 6), ("mean", 1.0, 0.5, 3, 6)])
        _metrics_csv(tmp_path / "run_b" / "metrics.csv", [("y", 2.0, 1.0, 4, 8)])
        merged = ReportService().merge([str(tmp_path / "run_a" / "metrics.csv"),
                                        str(tmp_path / "run_b" / "metrics.csv")])
        frame = merged["metrics"]
        assert len(frame) == 3
        assert frame[PROVENANCE].tolist() == ["run_a/metrics.csv"] * 2 + ["run_b/metrics.csv"]

    def test_build(self, tmp_path):
        _metrics_csv(tmp_path / "metrics.csv", [("x", 1.0, 0.5, 3, 6)])
        curve = tmp_path / "curve.csv"
        curve.write_text("real_count,eer_percent,auc_percent\n0,9.0,4.0\n100,5.0,2.0\n")
        out_dir = tmp_path / "report"
        summary = ReportService().build([str(tmp_path / "metrics.csv"), str(curve)], str(out_dir))
        assert set(summary["tables"]) == {"metrics", "curve", "trend"}
        with open(out_dir / "report.json") as f:
            assert len(json.load(f)["inputs"]) == 2
        assert len(pd.read_csv(out_dir / "trend.csv")) == 2

    def test_empty_inputs(self, tmp_path):
        with pytest.raises(ReportError):
            ReportService().build([], str(tmp_path))

    def test_unrecognised_table(self, tmp_path):
        path = tmp_path / "other.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ParseError):
            ReportService().merge([str(path)])

    def test_classify(self):
        assert classify_table(pd.DataFrame(columns=["threshold", "far", "frr"])) == "det"
        assert classify_table(pd.DataFrame(columns=RESULT_COLUMNS)) == "sweep"
        assert classify_table(pd.DataFrame(columns=["bin_low", "bin_high", "positive", "negative"])) == "histogram"
