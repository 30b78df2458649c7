"""
Trainer Service - the training loop, periodic evaluation and checkpoint keeping
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from kwskit import autodiff as ad
from kwskit.checkpoint import load_checkpoint, save_checkpoint, save_quantized
from kwskit.datasets import Manifest
from kwskit.errors import NonFinite
from kwskit.experiment_config import OptimizerConfig, TrainConfig
from kwskit.kws_config import DEFAULT_CONFIG
from kwskit.kws_model import ModelConfig, ModelParams, init_params
from kwskit.loss_sampler import BatchIndex, BatchSpec, LossConfig, batch_features, batch_loss, sample_batch
from kwskit.quantization import quantize_int8

logger = logging.getLogger(__name__)

BEST_CHECKPOINT = "best.s4kc"
LAST_CHECKPOINT = "last.s4kc"
BEST_INT8_CHECKPOINT = "best.int8.s4kc"
TRAIN_LOG = "train_log.csv"


@dataclass
class TrainResult:
    checkpoint_dir: str
    losses: List[float] = field(default_factory=list)
    best_step: int = 0
    best_auc: float = math.inf
    best_eer: float = math.nan
    evaluations: int = 0

    @property
    def best_path(self) -> str:
        return os.path.join(self.checkpoint_dir, BEST_CHECKPOINT)

    @property
    def last_path(self) -> str:
        return os.path.join(self.checkpoint_dir, LAST_CHECKPOINT)

    @property
    def int8_path(self) -> str:
        return os.path.join(self.checkpoint_dir, BEST_INT8_CHECKPOINT)

    @property
    def log_path(self) -> str:
        return os.path.join(self.checkpoint_dir, TRAIN_LOG)


class TrainerService:
    """Trains an embedding model from scratch on one data mixture"""

    def __init__(self, config=None, manager=None, features=None, evaluator=None):
        """
        Initialize the trainer

        Args:
            config (dict, optional): Effective configuration document
            manager (ExperimentServiceManager, optional): Provides features and evaluator
            features (FeatureService, optional): Explicit feature service
            evaluator (EvaluationService, optional): Explicit evaluation service
        """
        self.config = config or DEFAULT_CONFIG
        self.train_config = TrainConfig.from_dict(self.config.get("train"))
        self.model_config = ModelConfig.from_dict(self.config.get("model"))
        self.batch_spec = BatchSpec.from_dict(self.config.get("batch"))
        self.loss_config = LossConfig.from_dict(self.config.get("loss"))
        self.optimizer_config = OptimizerConfig.from_dict(self.config.get("optimizer"))

        if manager is not None:
            features = features or manager.get_service("features")
            evaluator = evaluator or manager.get_service("evaluator")
        if features is None:
            from kwskit.services.feature_service import FeatureService
            features = FeatureService(self.config)
        if evaluator is None:
            from kwskit.services.evaluation_service import EvaluationService
            evaluator = EvaluationService(self.config, features=features)
        self.features = features
        self.evaluator = evaluator

    def init_model(self) -> ModelParams:
        return init_params(self.model_config, self.train_config.seed,
                           w_init=self.loss_config.w_init, b_init=self.loss_config.b_init)

    def train(self, train_manifest: Manifest, eval_manifest: Optional[Manifest] = None,
              checkpoint_dir: Optional[str] = None, params: Optional[ModelParams] = None,
              show_progress: bool = False) -> TrainResult:
        """
        Run the training loop

        Every step: sample a batch, embed enrollment and test utterances, compute
        the loss, backpropagate, clip, take an Adam step and clamp the scale.
        Every eval_every steps the model is evaluated on eval_manifest and the
        best checkpoint by mean AUC is kept (ties keep the earlier step).

        Args:
            train_manifest (Manifest): Training utterances
            eval_manifest (Manifest, optional): Held-out utterances for checkpoint ranking
            checkpoint_dir (str, optional): Overrides train.checkpoint_dir
            params (ModelParams, optional): Starting parameters (fresh init otherwise)
            show_progress (bool): Show a progress bar over steps

        Returns:
            TrainResult: loss trace, best step and checkpoint locations
        """
        tc = self.train_config
        checkpoint_dir = checkpoint_dir or tc.checkpoint_dir
        os.makedirs(checkpoint_dir, exist_ok=True)
        result = TrainResult(checkpoint_dir=checkpoint_dir)

        index = BatchIndex.from_manifest(train_manifest)
        index.check(self.batch_spec)
        params = params or self.init_model()
        opt = self.optimizer_config
        optimizer = ad.AdamOptimizer(params.parameters(), lr=opt.lr, beta1=opt.beta1,
                                     beta2=opt.beta2, eps=opt.eps, clip_norm=opt.clip_norm)
        # batch stream is independent of the initialisation stream
        rng = np.random.default_rng([tc.seed, 1])
        eval_split = self.evaluator.make_split(eval_manifest) if eval_manifest is not None else None

        def load(batch):
            return batch_features(batch, lambda i: self.features.features_for(train_manifest, i))

        log_rows = []
        prefetch = ThreadPoolExecutor(max_workers=1) if tc.num_workers > 0 else None
        logger.info(f"Training {self.model_config} on {len(train_manifest)} utterances "
                    f"for {tc.max_steps} steps (X={self.batch_spec.num_phrases}, "
                    f"Y={self.batch_spec.utts_per_phrase})")
        try:
            batch = sample_batch(index, self.batch_spec, rng)
            pending = prefetch.submit(load, batch) if prefetch else None
            for step in tqdm(range(1, tc.max_steps + 1), desc="train", unit="step",
                             disable=not show_progress):
                enroll, test = pending.result() if prefetch else load(batch)
                labels = batch.test_labels()
                if step < tc.max_steps:
                    batch = sample_batch(index, self.batch_spec, rng)
                    if prefetch:
                        pending = prefetch.submit(load, batch)

                try:
                    with ad.Tape():
                        out = batch_loss(enroll, test, labels, self.batch_spec.num_phrases,
                                         params, self.loss_config)
                        loss_value = out.value
                        ad.backward(out.loss)
                    grad_norm = optimizer.step()
                    optimizer.zero_grad()
                    params.clamp_w_scale()
                except NonFinite as e:
                    logger.error(f"Non-finite value at step {step} (last loss "
                                 f"{result.losses[-1] if result.losses else float('nan')}): {e}")
                    self._write_log(log_rows, result.log_path)
                    raise

                result.losses.append(loss_value)
                row = {"step": step, "loss": loss_value, "eer": math.nan, "auc": math.nan}
                if step % tc.log_every == 0 or step == 1:
                    logger.info(f"step {step}/{tc.max_steps} loss {loss_value:.4f} "
                                f"grad_norm {grad_norm:.3f} w {params.w_scale.item():.3f} "
                                f"b {params.b_shift.item():.3f}")

                if eval_split is not None and (step % tc.eval_every == 0 or step == tc.max_steps):
                    evaluation = self.evaluator.evaluate_params(params, eval_manifest, eval_split)
                    eer_value = evaluation.aggregate.eer_percent
                    auc_value = evaluation.aggregate.auc_percent
                    row.update(eer=eer_value, auc=auc_value)
                    result.evaluations += 1
                    logger.info(f"step {step}: eval EER {eer_value:.2f}% AUC {auc_value:.2f}%")
                    if auc_value < result.best_auc:
                        result.best_step, result.best_auc, result.best_eer = step, auc_value, eer_value
                        save_checkpoint(params, result.best_path)
                log_rows.append(row)
        finally:
            if prefetch:
                prefetch.shutdown(wait=True)

        save_checkpoint(params, result.last_path)
        if eval_split is None:
            # nothing to rank by: the final model is the best one
            result.best_step = tc.max_steps
            save_checkpoint(params, result.best_path)
        save_quantized(quantize_int8(load_checkpoint(result.best_path)), result.int8_path)
        self._write_log(log_rows, result.log_path)
        logger.info(f"Training finished: loss {result.losses[0]:.4f} -> {result.losses[-1]:.4f}, "
                    f"best step {result.best_step}")
        return result

    @staticmethod
    def _write_log(rows, path: str) -> None:
        frame = pd.DataFrame(rows, columns=["step", "loss", "eer", "auc"])
        frame.to_csv(path, index=False, float_format="%.6f")
