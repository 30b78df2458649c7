"""
How much real data does a target quality need? Piecewise-linear reading of
a quality-vs-real-utterance-count curve.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import pandas as pd

from kwskit.errors import ConfigError, DataError, NonMonotone, ParseError, Unreachable, Unsorted

logger = logging.getLogger(__name__)

METRICS = ("eer", "auc")
MODES = ("raw", "log")
CURVE_COLUMNS = ["real_count", "eer_percent", "auc_percent"]


@dataclass(frozen=True)
class CurvePoint:
    real_utterance_count: int
    eer_percent: float
    auc_percent: float

    def __post_init__(self):
        if self.real_utterance_count < 0:
            raise DataError(f"real_utterance_count must be >= 0, got {self.real_utterance_count}")
        for name in ("eer_percent", "auc_percent"):
            value = getattr(self, name)
            if not 0.0 <= value <= 100.0:
                raise DataError(f"{name} must lie in [0, 100], got {value}")

    def metric(self, metric: str) -> float:
        return self.eer_percent if metric == "eer" else self.auc_percent


def interpolate_requirement(points: Sequence[CurvePoint], metric: str, target: float,
                            mode: str = "raw") -> int:
    """
    Smallest real-utterance count at which the metric reaches the target

    Args:
        points: Curve points sorted by strictly increasing count
        metric (str): "eer" or "auc"
        target (float): Target value in percent
        mode (str): "raw" interpolates in count, "log" in log1p(count)

    Returns:
        int: Required count, rounded up

    Raises:
        Unsorted: counts not strictly increasing
        NonMonotone: metric increases somewhere along the curve
        Unreachable: target below the last point's value
    """
    if metric not in METRICS:
        raise ConfigError(f"metric must be one of {METRICS}, got '{metric}'")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got '{mode}'")
    if len(points) < 2:
        raise DataError(f"Interpolation needs at least 2 points, got {len(points)}")

    counts = np.array([p.real_utterance_count for p in points], dtype=np.float64)
    values = np.array([p.metric(metric) for p in points], dtype=np.float64)
    for k in range(1, len(counts)):
        if counts[k] <= counts[k - 1]:
            raise Unsorted(k)
    rising = [k for k in range(1, len(values)) if values[k] > values[k - 1]]
    if rising:
        raise NonMonotone(rising)

    if target >= values[0]:
        return int(counts[0])
    if target < values[-1]:
        raise Unreachable(target, float(values[-1]))

    # first segment whose far end reaches the target
    k = int(np.flatnonzero(values <= target)[0])
    v0, v1 = values[k - 1], values[k]
    fraction = (v0 - target) / (v0 - v1)
    if mode == "raw":
        c0, c1 = counts[k - 1], counts[k]
        required = c0 + fraction * (c1 - c0)
    else:
        x0, x1 = np.log1p(counts[k - 1]), np.log1p(counts[k])
        required = np.expm1(x0 + fraction * (x1 - x0))
    # guard against float noise pushing an exact hit to the next integer
    return int(math.ceil(round(float(required), 6)))


def read_curve_csv(path: str) -> List[CurvePoint]:
    """Load (real_count, eer_percent, auc_percent) rows in file order; interpolation checks the order"""
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(0, str(e), path)
    missing = [c for c in CURVE_COLUMNS if c not in frame.columns]
    if missing:
        raise ParseError(1, f"missing columns {missing}", path)
    frame = frame.dropna(subset=CURVE_COLUMNS)
    return [CurvePoint(int(row.real_count), float(row.eer_percent), float(row.auc_percent))
            for row in frame.itertuples(index=False)]


def write_curve_csv(points: Sequence[CurvePoint], path: str) -> None:
    frame = pd.DataFrame([(p.real_utterance_count, p.eer_percent, p.auc_percent) for p in points],
                         columns=CURVE_COLUMNS)
    frame.to_csv(path, index=False, float_format="%.6f")
