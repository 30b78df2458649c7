"""
Sweep Service - trains and evaluates one model per data-resource grid cell
"""

import copy
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from kwskit.datasets import Manifest, mix, read_manifest, sample_subset, sample_utterances, write_manifest
from kwskit.debug_utils import log_exception
from kwskit.errors import ConfigError, DataError, KwsError
from kwskit.experiment_config import SweepCell, SweepConfig
from kwskit.interpolation import CurvePoint, write_curve_csv
from kwskit.kws_config import DEFAULT_CONFIG, save_config

logger = logging.getLogger(__name__)

RESULTS_FILE = "sweep_results.csv"
CURVE_FILE = "curve.csv"
RESULT_COLUMNS = [
    "scenario", "n_phrases", "per_phrase", "real_count", "train_utterances",
    "eer_percent", "auc_percent", "best_step", "status", "error",
    "rel_eer_improvement_percent", "rel_auc_improvement_percent",
]


def cell_manifest(cell: SweepCell, tts: Optional[Manifest], real: Optional[Manifest],
                  seed: int) -> Manifest:
    """Synthetic subset mixed with a fixed number of real utterances for one grid cell"""
    parts = []
    if cell.n_phrases > 0 and cell.per_phrase > 0:
        if tts is None:
            raise ConfigError(f"Cell {cell.cell_id} needs sweep.tts_manifest")
        parts.append(sample_subset(tts, cell.n_phrases, cell.per_phrase, seed))
    if cell.real_count > 0:
        if real is None:
            raise ConfigError(f"Cell {cell.cell_id} needs sweep.real_manifest")
        parts.append(sample_utterances(real, cell.real_count, seed))
    if not parts:
        raise DataError(f"Cell {cell.cell_id} has no training data")
    if len(parts) == 1:
        return parts[0].resolved()
    return mix(parts[1], parts[0])


def run_cell(cell: SweepCell, config: Dict[str, Any], out_dir: str) -> Dict[str, Any]:
    """
    Sample, mix, train and evaluate one cell; never raises for config, data, numerical or I/O errors

    Runs in a worker process when sweep.max_workers > 1, so it builds its own services.
    """
    from kwskit.services.service_manager import ExperimentServiceManager

    sweep = SweepConfig.from_dict(config["sweep"])
    row: Dict[str, Any] = {**cell.to_dict(), "train_utterances": 0, "eer_percent": math.nan,
                           "auc_percent": math.nan, "best_step": -1, "status": "ok", "error": ""}
    cell_dir = os.path.join(out_dir, "cells", cell.cell_id)
    try:
        tts = read_manifest(sweep.tts_manifest) if sweep.tts_manifest else None
        real = read_manifest(sweep.real_manifest) if sweep.real_manifest else None
        if not sweep.eval_manifest:
            raise ConfigError("sweep.eval_manifest is required")
        eval_manifest = read_manifest(sweep.eval_manifest)

        train_manifest = cell_manifest(cell, tts, real, sweep.seed)
        row["train_utterances"] = len(train_manifest)
        write_manifest(train_manifest, os.path.join(cell_dir, "train_manifest.jsonl"))

        manager = ExperimentServiceManager(config)
        trainer = manager.require_service("trainer")
        result = trainer.train(train_manifest, eval_manifest, checkpoint_dir=cell_dir)
        evaluator = manager.require_service("evaluator")
        evaluation = evaluator.evaluate_checkpoint(result.best_path, eval_manifest)
        evaluator.write_outputs(evaluation, os.path.join(cell_dir, "eval"))
        row.update(eer_percent=evaluation.aggregate.eer_percent,
                   auc_percent=evaluation.aggregate.auc_percent,
                   best_step=result.best_step)
    except (KwsError, OSError) as e:
        log_exception(e, f"Sweep cell {cell.cell_id}")
        row.update(status="failed", error=f"{type(e).__name__}: {e}")
    return row


def add_relative_improvements(frame: pd.DataFrame) -> pd.DataFrame:
    """Relative EER/AUC improvement over the real-only baseline row with the same real_count"""
    frame = frame.copy()
    frame["rel_eer_improvement_percent"] = np.nan
    frame["rel_auc_improvement_percent"] = np.nan
    ok = frame["status"] == "ok"
    baseline_mask = ok & (frame["real_count"] > 0) & ((frame["n_phrases"] == 0) | (frame["per_phrase"] == 0))
    for real_count, base in frame[baseline_mask].groupby("real_count"):
        base_eer = float(base["eer_percent"].iloc[0])
        base_auc = float(base["auc_percent"].iloc[0])
        rows = ok & (frame["real_count"] == real_count)
        if base_eer > 0:
            frame.loc[rows, "rel_eer_improvement_percent"] = \
                100.0 * (base_eer - frame.loc[rows, "eer_percent"]) / base_eer
        if base_auc > 0:
            frame.loc[rows, "rel_auc_improvement_percent"] = \
                100.0 * (base_auc - frame.loc[rows, "auc_percent"]) / base_auc
    return frame


def curve_points(frame: pd.DataFrame) -> List[CurvePoint]:
    """Quality vs real-utterance count, when the sweep varied only the real count"""
    ok = frame[frame["status"] == "ok"]
    if ok["real_count"].nunique() < 2 or ok["real_count"].duplicated().any():
        return []
    ok = ok.sort_values("real_count")
    return [CurvePoint(int(r.real_count), float(r.eer_percent), float(r.auc_percent))
            for r in ok.itertuples(index=False)]


class SweepService:
    """Runs a scenario grid, one independent training run per cell"""

    def __init__(self, config=None, manager=None):
        """
        Initialize the sweep service

        Args:
            config (dict, optional): Effective configuration document
            manager (ExperimentServiceManager, optional): Unused; cells build their own
        """
        self.config = copy.deepcopy(config or DEFAULT_CONFIG)
        self.sweep_config = SweepConfig.from_dict(self.config.get("sweep"))

    def run(self, out_dir: str, show_progress: bool = True) -> pd.DataFrame:
        """
        Run every cell and write sweep_results.csv (and curve.csv when applicable)

        Returns:
            pd.DataFrame: one row per cell, failed cells included
        """
        os.makedirs(out_dir, exist_ok=True)
        save_config(self.config, os.path.join(out_dir, "config.json"))
        cells = self.sweep_config.cells()
        logger.info(f"Sweep '{self.sweep_config.scenario}': {len(cells)} cells")

        rows: Dict[str, Dict[str, Any]] = {}
        if self.sweep_config.max_workers > 1:
            with ProcessPoolExecutor(max_workers=self.sweep_config.max_workers) as pool:
                futures = {pool.submit(run_cell, cell, self.config, out_dir): cell for cell in cells}
                for future in tqdm(as_completed(futures), total=len(futures), desc="sweep",
                                   unit="cell", disable=not show_progress):
                    cell = futures[future]
                    try:
                        rows[cell.cell_id] = future.result()
                    except Exception as e:
                        log_exception(e, f"Sweep cell {cell.cell_id}")
                        rows[cell.cell_id] = {**cell.to_dict(), "status": "failed",
                                              "error": f"{type(e).__name__}: {e}"}
        else:
            for cell in tqdm(cells, desc="sweep", unit="cell", disable=not show_progress):
                rows[cell.cell_id] = run_cell(cell, self.config, out_dir)

        frame = pd.DataFrame([rows[c.cell_id] for c in cells])
        frame = add_relative_improvements(frame).reindex(columns=RESULT_COLUMNS)
        frame.to_csv(os.path.join(out_dir, RESULTS_FILE), index=False, float_format="%.6f")

        points = curve_points(frame)
        if points:
            write_curve_csv(points, os.path.join(out_dir, CURVE_FILE))
        failed = int((frame["status"] != "ok").sum())
        logger.info(f"Sweep finished: {len(frame) - failed} ok, {failed} failed")
        return frame
