"""
Evaluation Service - scores a model on a held-out manifest and writes metric files
"""

import logging
import os
import re
from typing import Dict, Optional

import numpy as np

from kwskit.checkpoint import load_checkpoint
from kwskit.datasets import Manifest
from kwskit.eval_metrics import (
    EvalSplit,
    EvaluationResult,
    evaluate_embeddings,
    make_eval_split,
    mean_det_curve,
    write_det_csv,
    write_histogram_csv,
    write_metrics_csv,
)
from kwskit.experiment_config import EvalConfig
from kwskit.kws_config import DEFAULT_CONFIG
from kwskit.kws_model import ModelParams, embed_many

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
HISTOGRAM_FILE = "histograms.csv"
DET_DIR = "det"
MEAN_DET_FILE = "mean_det.csv"


def det_filename(phrase: str) -> str:
    return re.sub(r"[^0-9a-z_-]+", "_", phrase.lower()).strip("_") + ".csv"


class EvaluationService:
    """Runs the enrollment-centroid evaluation protocol"""

    def __init__(self, config=None, manager=None, features=None):
        """
        Initialize the evaluation service

        Args:
            config (dict, optional): Effective configuration document
            manager (ExperimentServiceManager, optional): Provides the feature service
            features (FeatureService, optional): Explicit feature service
        """
        self.config = config or DEFAULT_CONFIG
        self.eval_config = EvalConfig.from_dict(self.config.get("eval"))
        if features is None and manager is not None:
            features = manager.get_service("features")
        if features is None:
            from kwskit.services.feature_service import FeatureService
            features = FeatureService(self.config)
        self.features = features

    def make_split(self, manifest: Manifest, seed: Optional[int] = None) -> EvalSplit:
        seed = self.eval_config.seed if seed is None else seed
        return make_eval_split(manifest, self.eval_config.n_enroll, seed)

    def embed_split(self, params: ModelParams, manifest: Manifest, split: EvalSplit,
                    show_progress: bool = False) -> Dict[int, np.ndarray]:
        """Embeddings of every record the split uses, keyed by record id"""
        ids = sorted({i for group in (split.enroll, split.test) for ids in group.values() for i in ids})
        features = self.features.load_many(manifest, ids, show_progress=show_progress,
                                           desc="eval features")
        embeddings = embed_many(features, params)
        return {i: embeddings[k] for k, i in enumerate(ids)}

    def evaluate_params(self, params: ModelParams, manifest: Manifest,
                        split: Optional[EvalSplit] = None,
                        show_progress: bool = False) -> EvaluationResult:
        """
        Evaluate a model on a manifest

        Args:
            params (ModelParams): Model to evaluate
            manifest (Manifest): Held-out utterances
            split (EvalSplit, optional): Precomputed split (training reuses one)
            show_progress (bool): Show progress bars

        Returns:
            EvaluationResult: per-phrase metrics, aggregate, curves and histogram
        """
        split = split or self.make_split(manifest)
        embeddings = self.embed_split(params, manifest, split, show_progress)
        return evaluate_embeddings(embeddings, split, self.eval_config.histogram_bins)

    def evaluate_checkpoint(self, checkpoint_path: str, manifest: Manifest,
                            show_progress: bool = False) -> EvaluationResult:
        params = load_checkpoint(checkpoint_path)
        logger.info(f"Evaluating {checkpoint_path} on {len(manifest)} utterances")
        return self.evaluate_params(params, manifest, show_progress=show_progress)

    def write_outputs(self, result: EvaluationResult, out_dir: str) -> Dict[str, str]:
        """
        metrics.csv, det/<phrase>.csv, mean_det.csv and histograms.csv

        Returns:
            dict: name -> written path
        """
        os.makedirs(os.path.join(out_dir, DET_DIR), exist_ok=True)
        written = {"metrics": os.path.join(out_dir, METRICS_FILE)}
        write_metrics_csv(written["metrics"], result.per_phrase, result.aggregate)

        used = set()
        for phrase, curve in result.curves.items():
            name = det_filename(phrase) or "phrase.csv"
            stem, suffix = os.path.splitext(name)
            k = 1
            while name in used:
                k += 1
                name = f"{stem}_{k}{suffix}"
            used.add(name)
            write_det_csv(os.path.join(out_dir, DET_DIR, name), curve)

        written["mean_det"] = os.path.join(out_dir, MEAN_DET_FILE)
        write_det_csv(written["mean_det"], mean_det_curve(list(result.curves.values())))
        written["histograms"] = os.path.join(out_dir, HISTOGRAM_FILE)
        write_histogram_csv(written["histograms"], result.histogram)
        logger.info(f"Wrote evaluation outputs to {out_dir}")
        return written
