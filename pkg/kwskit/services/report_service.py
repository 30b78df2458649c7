"""
Report Service - merges result tables into plot-ready CSVs, a JSON summary and
(optionally) PNG figures
"""

import json
import logging
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from kwskit.errors import ParseError, ReportError
from kwskit.interpolation import CURVE_COLUMNS

logger = logging.getLogger(__name__)

PROVENANCE = "provenance"
DET_COLUMNS = ["threshold", "far", "frr"]
HISTOGRAM_COLUMNS = ["bin_low", "bin_high", "positive", "negative"]
SWEEP_KEYS = ["n_phrases", "per_phrase", "eer_percent", "auc_percent"]
METRIC_COLUMNS = ["phrase", "eer_percent", "auc_percent", "n_pos", "n_neg"]

OUTPUT_FILES = {
    "sweep": "merged_sweeps.csv",
    "curve": "trend_curve.csv",
    "det": "det_curves.csv",
    "metrics": "merged_metrics.csv",
    "histogram": "merged_histograms.csv",
}


def classify_table(frame: pd.DataFrame) -> Optional[str]:
    """Which kind of result table a CSV holds, judged by its header"""
    columns = set(frame.columns)
    if set(DET_COLUMNS) <= columns:
        return "det"
    if set(HISTOGRAM_COLUMNS) <= columns:
        return "histogram"
    if set(SWEEP_KEYS) <= columns:
        return "sweep"
    if set(CURVE_COLUMNS) <= columns:
        return "curve"
    if set(METRIC_COLUMNS) <= columns:
        return "metrics"
    return None


def read_table(path: str) -> Tuple[str, pd.DataFrame]:
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError as e:
        raise ParseError(0, str(e), path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ParseError(1, str(e), path)
    kind = classify_table(frame)
    if kind is None:
        raise ParseError(1, f"unrecognised columns {list(frame.columns)}", path)
    return kind, frame


class ReportService:
    """Consolidates sweep, curve, DET, metric and histogram CSVs"""

    def __init__(self, config=None, manager=None):
        """
        Initialize the report service

        Args:
            config (dict, optional): Effective configuration document (unused)
            manager (ExperimentServiceManager, optional): Provides the figure renderer
        """
        self.config = config
        self.manager = manager

    def merge(self, paths: Sequence[str]) -> Dict[str, pd.DataFrame]:
        """
        Group input tables by kind and concatenate each group with a provenance column

        Raises:
            ReportError: if no inputs are given
            ParseError: if an input cannot be read or recognised
        """
        if not paths:
            raise ReportError("No result files given; refusing to write an empty report")
        groups: Dict[str, List[pd.DataFrame]] = {}
        for path in paths:
            kind, frame = read_table(path)
            frame.insert(0, PROVENANCE, os.path.basename(os.path.dirname(os.path.abspath(path)))
                         + "/" + os.path.basename(path))
            groups.setdefault(kind, []).append(frame)
            logger.debug(f"{path}: {kind} table with {len(frame)} rows")
        return {kind: pd.concat(frames, ignore_index=True, sort=False)
                for kind, frames in groups.items()}

    @staticmethod
    def trend_curve(merged: Dict[str, pd.DataFrame]) -> Optional[pd.DataFrame]:
        """(real_count, eer_percent, auc_percent) points from curve tables and sweep rows"""
        parts = []
        if "curve" in merged:
            parts.append(merged["curve"][[PROVENANCE] + CURVE_COLUMNS])
        if "sweep" in merged and "real_count" in merged["sweep"].columns:
            sweep = merged["sweep"]
            if "status" in sweep.columns:
                sweep = sweep[sweep["status"] == "ok"]
            parts.append(sweep[[PROVENANCE] + CURVE_COLUMNS])
        if not parts:
            return None
        return (pd.concat(parts, ignore_index=True)
                .sort_values([PROVENANCE, "real_count"], kind="stable")
                .reset_index(drop=True))

    def build(self, paths: Sequence[str], out_dir: str, plots: bool = False) -> Dict[str, Any]:
        """
        Write the merged tables, report.json and (optionally) figures

        Args:
            paths: Result CSVs (sweep, curve, DET, metrics or histogram tables)
            out_dir (str): Output directory
            plots (bool): Render PNG figures when matplotlib is available

        Returns:
            dict: The JSON summary that was written
        """
        merged = self.merge(paths)
        os.makedirs(out_dir, exist_ok=True)
        summary: Dict[str, Any] = {"inputs": [], "tables": {}, "figures": []}
        for path in paths:
            kind, frame = read_table(path)
            summary["inputs"].append({"path": path, "kind": kind, "rows": int(len(frame))})

        for kind, frame in merged.items():
            target = os.path.join(out_dir, OUTPUT_FILES[kind])
            frame.to_csv(target, index=False, float_format="%.6f")
            summary["tables"][kind] = {"path": target, "rows": int(len(frame))}

        trend = self.trend_curve(merged)
        if trend is not None:
            target = os.path.join(out_dir, "trend.csv")
            trend.to_csv(target, index=False, float_format="%.6f")
            summary["tables"]["trend"] = {"path": target, "rows": int(len(trend))}

        if "sweep" in merged:
            sweep = merged["sweep"]
            if "status" in sweep.columns:
                sweep = sweep[sweep["status"] == "ok"]
            if not sweep.empty:
                best = sweep.sort_values(["auc_percent", "eer_percent"], kind="stable").iloc[0]
                summary["best_by_auc"] = {k: (v.item() if hasattr(v, "item") else v)
                                          for k, v in best.to_dict().items()}

        if plots:
            renderer = self.manager.get_service("figures") if self.manager else None
            if renderer is None:
                logger.warning("Figure rendering unavailable (matplotlib missing); CSV outputs only")
            else:
                summary["figures"] = renderer.render(merged, trend, out_dir)

        with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2, sort_keys=True, default=str)
            f.write("\n")
        logger.info(f"Report written to {out_dir} from {len(paths)} inputs")
        return summary


class FigureRenderer:
    """PNG figures on the DET, histogram and quality-vs-real-count axes"""

    def __init__(self, config=None, manager=None):
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        self.plt = plt

    def render(self, merged: Dict[str, pd.DataFrame], trend: Optional[pd.DataFrame],
               out_dir: str) -> List[str]:
        written = []
        if "det" in merged:
            fig, ax = self.plt.subplots(figsize=(6, 5))
            for name, curve in merged["det"].groupby(PROVENANCE, sort=True):
                ax.plot(100 * curve["far"], 100 * curve["frr"], label=name)
            ax.set_xlabel("False accept rate (%)")
            ax.set_ylabel("False reject rate (%)")
            ax.set_xlim(0, 100)
            ax.set_ylim(0, 100)
            ax.grid(True, alpha=0.3)
            ax.legend(fontsize="small")
            written.append(self._save(fig, out_dir, "det_curves.png"))
        if "histogram" in merged:
            fig, ax = self.plt.subplots(figsize=(6, 4))
            for name, hist in merged["histogram"].groupby(PROVENANCE, sort=True):
                centers = (hist["bin_low"] + hist["bin_high"]) / 2
                width = float((hist["bin_high"] - hist["bin_low"]).iloc[0])
                ax.bar(centers, hist["negative"], width=width, alpha=0.5, label=f"{name} negative")
                ax.bar(centers, hist["positive"], width=width, alpha=0.5, label=f"{name} positive")
            ax.set_xlabel("Cosine similarity")
            ax.set_ylabel("Count")
            ax.legend(fontsize="small")
            written.append(self._save(fig, out_dir, "score_histogram.png"))
        if trend is not None and not trend.empty:
            fig, ax = self.plt.subplots(figsize=(6, 4))
            for name, points in trend.groupby(PROVENANCE, sort=True):
                ax.plot(points["real_count"], points["eer_percent"], marker="o", label=f"{name} EER")
                ax.plot(points["real_count"], points["auc_percent"], marker="s", label=f"{name} AUC")
            ax.set_xlabel("Real utterances")
            ax.set_ylabel("Percent")
            ax.grid(True, alpha=0.3)
            ax.legend(fontsize="small")
            written.append(self._save(fig, out_dir, "trend.png"))
        return written

    def _save(self, fig, out_dir: str, name: str) -> str:
        path = os.path.join(out_dir, name)
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        self.plt.close(fig)
        return path
