"""
Keyword-matching evaluation: per-phrase enrollment centroids, cosine scoring,
threshold-swept DET curves, EER, AUC and cross-phrase averaging.

Every phrase p is scored as its own keyword: the positives are p's test
utterances against p's centroid, the negatives are the test utterances of
every other phrase against the same centroid.
"""

import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from kwskit.errors import Empty, EmptyScores, NumericalError, TooFewUtterances
from kwskit.loss_sampler import centroids, similarity_matrix

logger = logging.getLogger(__name__)

# 0.00, 0.01, ..., 1.00
THRESHOLDS = np.arange(101) / 100.0
AGGREGATE_LABEL = "mean"

Embeddings = Union[np.ndarray, Mapping[int, np.ndarray]]


@dataclass
class EvalSplit:
    enroll: Dict[str, List[int]]
    test: Dict[str, List[int]]
    seed: int

    @property
    def phrases(self) -> List[str]:
        return list(self.enroll)

    def test_counts(self) -> Dict[str, int]:
        return {p: len(ids) for p, ids in self.test.items()}


@dataclass
class DetCurve:
    thresholds: np.ndarray
    far: np.ndarray
    frr: np.ndarray

    def points(self) -> List[Tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.far.tolist(), self.frr.tolist()))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"threshold": self.thresholds, "far": self.far, "frr": self.frr})


@dataclass
class PhraseMetrics:
    phrase: str
    eer_percent: float
    auc_percent: float
    n_pos: int
    n_neg: int


@dataclass
class PhraseScores:
    positive: np.ndarray
    negative: np.ndarray


@dataclass
class EvaluationResult:
    per_phrase: List[PhraseMetrics]
    aggregate: PhraseMetrics
    curves: Dict[str, DetCurve]
    # pooled over phrases, as in a single similarity histogram
    histogram: Tuple[np.ndarray, np.ndarray, np.ndarray]
    scores: Dict[str, PhraseScores] = field(repr=False, default_factory=dict)

    def metrics_frame(self) -> pd.DataFrame:
        return metrics_frame(self.per_phrase, self.aggregate)


def make_eval_split(manifest, n_enroll: int = 10, seed: int = 0) -> EvalSplit:
    """
    Random enrollment/test partition of every phrase

    Args:
        manifest: Manifest (or anything with ``phrase_index()``)
        n_enroll (int): Enrollment utterances per phrase
        seed (int): Split seed; phrases are visited in sorted order

    Returns:
        EvalSplit: n_enroll enrollment ids per phrase, the rest for testing
    """
    index = manifest.phrase_index()
    rng = np.random.default_rng(seed)
    enroll, test = {}, {}
    for phrase in sorted(index):
        ids = np.asarray(index[phrase])
        if len(ids) <= n_enroll:
            raise TooFewUtterances(phrase, len(ids), n_enroll)
        shuffled = rng.permutation(ids)
        enroll[phrase] = [int(i) for i in shuffled[:n_enroll]]
        test[phrase] = [int(i) for i in shuffled[n_enroll:]]
    logger.debug(f"Eval split: {len(enroll)} phrases, {sum(map(len, test.values()))} test utterances")
    return EvalSplit(enroll=enroll, test=test, seed=seed)


def _rows(embeddings: Embeddings, ids: Sequence[int]) -> np.ndarray:
    return np.asarray([embeddings[i] for i in ids], dtype=np.float64)


def score_all(embeddings: Embeddings, split: EvalSplit) -> Dict[str, PhraseScores]:
    """
    Cosine scores of every test utterance against every phrase centroid

    Args:
        embeddings: Unit embeddings indexed by record id
        split (EvalSplit): Enrollment/test partition

    Returns:
        dict: phrase -> positive and negative scores against that phrase's centroid
    """
    phrases = split.phrases
    centroid_rows = centroids([_rows(embeddings, split.enroll[p]) for p in phrases])
    test_ids = [i for p in phrases for i in split.test[p]]
    labels = np.repeat(np.arange(len(phrases)), [len(split.test[p]) for p in phrases])
    S = similarity_matrix(_rows(embeddings, test_ids), centroid_rows)

    scores = {}
    for j, phrase in enumerate(phrases):
        column = S[:, j]
        scores[phrase] = PhraseScores(positive=column[labels == j], negative=column[labels != j])
    return scores


def _rejected_fraction(sorted_scores: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Share of scores <= t at every threshold"""
    return np.searchsorted(sorted_scores, thresholds, side="right") / sorted_scores.size


def det_curve(pos_scores: Sequence[float], neg_scores: Sequence[float],
              thresholds: np.ndarray = THRESHOLDS) -> DetCurve:
    """
    FAR and FRR at every threshold; a score is accepted iff score > t

    Raises:
        EmptyScores: if either score set is empty
    """
    pos = np.sort(np.asarray(pos_scores, dtype=np.float64))
    neg = np.sort(np.asarray(neg_scores, dtype=np.float64))
    if pos.size == 0 or neg.size == 0:
        raise EmptyScores(f"det_curve needs positive and negative scores "
                          f"(got {pos.size} / {neg.size})")
    far = (neg.size - np.searchsorted(neg, thresholds, side="right")) / neg.size
    frr = _rejected_fraction(pos, thresholds)
    return DetCurve(thresholds=np.asarray(thresholds, dtype=np.float64).copy(), far=far, frr=frr)


def eer(curve: DetCurve) -> float:
    """
    Equal error rate in percent

    Finds the first threshold where FAR - FRR stops being positive and
    linearly interpolates the crossing with the previous grid point.
    """
    d = curve.far - curve.frr
    crossed = np.flatnonzero(d <= 0)
    if crossed.size == 0:
        # FRR never catches up (scores above 1.0); report the last grid point
        return 100.0 * float(curve.far[-1] + curve.frr[-1]) / 2.0
    k = int(crossed[0])
    if d[k] == 0:
        return 100.0 * float(curve.far[k])
    if k == 0:
        # already FRR > FAR at the lowest threshold
        return 100.0 * float(curve.far[0] + curve.frr[0]) / 2.0
    alpha = d[k - 1] / (d[k - 1] - d[k])
    rate = curve.far[k - 1] + alpha * (curve.far[k] - curve.far[k - 1])
    return 100.0 * float(rate)


def auc(curve: DetCurve) -> float:
    """Area under FRR(FAR) over the full [0, 1] FAR range, in percent"""
    far = np.asarray(curve.far, dtype=np.float64)
    frr = np.asarray(curve.frr, dtype=np.float64)
    order = np.lexsort((-frr, far))
    far, frr = far[order], frr[order]
    at_zero = frr[far == 0]
    start = float(at_zero.max()) if at_zero.size else 1.0
    x = np.concatenate([[0.0], far, [1.0]])
    y = np.concatenate([[start], frr, [0.0]])
    return 100.0 * float(trapezoid(y, x))


def phrase_metrics(phrase: str, scores: PhraseScores,
                   thresholds: np.ndarray = THRESHOLDS) -> Tuple[PhraseMetrics, DetCurve]:
    """
    DET curve, EER and AUC of one phrase

    A phrase without impostor trials (the only phrase of its manifest) can never
    false-accept: its curve has FAR 0 at every threshold, and both EER and AUC
    equal the miss rate at the lowest threshold, the best point on the grid for
    every FAR budget.
    """
    n_pos, n_neg = int(scores.positive.size), int(scores.negative.size)
    if n_neg == 0 and n_pos > 0:
        logger.warning(f"Phrase '{phrase}' has no impostor trials; scoring misses only")
        thresholds = np.asarray(thresholds, dtype=np.float64)
        frr = _rejected_fraction(np.sort(np.asarray(scores.positive, dtype=np.float64)), thresholds)
        curve = DetCurve(thresholds=thresholds.copy(), far=np.zeros_like(frr), frr=frr)
        miss_percent = 100.0 * float(frr[0])
        return PhraseMetrics(phrase, miss_percent, miss_percent, n_pos, n_neg), curve
    curve = det_curve(scores.positive, scores.negative, thresholds)
    metrics = PhraseMetrics(phrase=phrase, eer_percent=eer(curve), auc_percent=auc(curve),
                            n_pos=n_pos, n_neg=n_neg)
    return metrics, curve


def aggregate(per_phrase: Sequence[PhraseMetrics]) -> PhraseMetrics:
    """Unweighted mean EER and AUC across phrases; pair counts are summed"""
    if not per_phrase:
        raise Empty("Cannot aggregate zero phrases")
    eers = np.array([m.eer_percent for m in per_phrase], dtype=np.float64)
    aucs = np.array([m.auc_percent for m in per_phrase], dtype=np.float64)
    return PhraseMetrics(
        phrase=AGGREGATE_LABEL,
        eer_percent=float(np.sum(eers) / eers.size),
        auc_percent=float(np.sum(aucs) / aucs.size),
        n_pos=int(sum(m.n_pos for m in per_phrase)),
        n_neg=int(sum(m.n_neg for m in per_phrase)),
    )


def score_histogram(pos_scores: Sequence[float], neg_scores: Sequence[float],
                    bins: int = 100) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Histograms of positive and negative scores over [0, 1]

    Scores below 0 fall in the first bin; 1.0 falls in the last.

    Returns:
        tuple: (positive counts, negative counts, bin edges)
    """
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise EmptyScores("score_histogram needs positive and negative scores")
    pos_counts, edges = np.histogram(np.clip(pos, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
    neg_counts, _ = np.histogram(np.clip(neg, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
    return pos_counts, neg_counts, edges


def mean_det_curve(curves: Sequence[DetCurve]) -> DetCurve:
    """Phrase-averaged FAR/FRR at every shared threshold"""
    if not curves:
        raise Empty("Cannot average zero DET curves")
    thresholds = curves[0].thresholds
    for curve in curves[1:]:
        if curve.thresholds.shape != thresholds.shape or not np.array_equal(curve.thresholds, thresholds):
            raise NumericalError("DET curves were computed on different threshold grids")
    far = np.mean([c.far for c in curves], axis=0)
    frr = np.mean([c.frr for c in curves], axis=0)
    return DetCurve(thresholds=thresholds.copy(), far=far, frr=frr)


def evaluate_embeddings(embeddings: Embeddings, split: EvalSplit,
                        histogram_bins: int = 100) -> EvaluationResult:
    """
    Full scoring pipeline once embeddings are known

    Args:
        embeddings: Unit embeddings indexed by record id
        split (EvalSplit): Enrollment/test partition
        histogram_bins (int): Bins of the pooled score histogram

    Returns:
        EvaluationResult: per-phrase metrics, aggregate, DET curves, histogram
    """
    scores = score_all(embeddings, split)
    per_phrase, curves = [], {}
    for phrase, phrase_scores in scores.items():
        metrics, curve = phrase_metrics(phrase, phrase_scores)
        per_phrase.append(metrics)
        curves[phrase] = curve
    summary = aggregate(per_phrase)
    positives = np.concatenate([s.positive for s in scores.values()])
    negatives = np.concatenate([s.negative for s in scores.values()])
    if negatives.size:
        histogram = score_histogram(positives, negatives, bins=histogram_bins)
    else:
        pos_counts, _, edges = score_histogram(positives, positives, bins=histogram_bins)
        histogram = (pos_counts, np.zeros_like(pos_counts), edges)
    logger.info(f"Evaluated {len(per_phrase)} phrases: mean EER {summary.eer_percent:.2f}%, "
                f"mean AUC {summary.auc_percent:.2f}%")
    return EvaluationResult(per_phrase=per_phrase, aggregate=summary, curves=curves,
                            histogram=histogram, scores=scores)


# --- CSV output --------------------------------------------------------------

CSV_FLOAT_FORMAT = "%.6f"


def metrics_frame(per_phrase: Sequence[PhraseMetrics],
                  summary: Optional[PhraseMetrics] = None) -> pd.DataFrame:
    rows = [asdict(m) for m in per_phrase]
    if summary is not None:
        rows.append(asdict(summary))
    return pd.DataFrame(rows, columns=["phrase", "eer_percent", "auc_percent", "n_pos", "n_neg"])


def _ensure_parent(path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def write_metrics_csv(path: str, per_phrase: Sequence[PhraseMetrics],
                      summary: Optional[PhraseMetrics] = None) -> None:
    """One row per phrase followed by the aggregate row"""
    _ensure_parent(path)
    metrics_frame(per_phrase, summary).to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)


def write_det_csv(path: str, curve: DetCurve) -> None:
    _ensure_parent(path)
    curve.to_frame().to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)


def write_histogram_csv(path: str, histogram: Tuple[np.ndarray, np.ndarray, np.ndarray]) -> None:
    pos_counts, neg_counts, edges = histogram
    _ensure_parent(path)
    frame = pd.DataFrame({
        "bin_low": edges[:-1],
        "bin_high": edges[1:],
        "positive": pos_counts.astype(np.int64),
        "negative": neg_counts.astype(np.int64),
    })
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)

