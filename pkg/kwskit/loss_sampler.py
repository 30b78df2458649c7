"""
Batch construction and the centroid-based, negative-downweighted pair loss.

A batch holds X phrases with Y utterances each. The first Y/2 of every
phrase are enrollment utterances, averaged into a unit centroid; each of the
remaining X*Y/2 test utterances is scored against all X centroids. That gives
X*Y/2 positive and X(X-1)*Y/2 negative pairs; negatives are weighted by gamma.
"""

import logging
from dataclasses import dataclass, fields
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from kwskit import autodiff as ad
from kwskit.audio_processor import FeatureMatrix
from kwskit.autodiff import Value
from kwskit.errors import (
    ConfigError,
    DegenerateCentroid,
    InsufficientPhrases,
    InsufficientUtterances,
    ShapeMismatch,
)
from kwskit.kws_model import ModelParams, embed_batch

logger = logging.getLogger(__name__)

CENTROID_MIN_NORM = 1e-8


@dataclass(frozen=True)
class BatchSpec:
    num_phrases: int = 8
    utts_per_phrase: int = 10

    def __post_init__(self):
        if self.num_phrases < 2:
            raise ConfigError(f"A batch needs at least 2 phrases, got {self.num_phrases}")
        if self.utts_per_phrase < 2 or self.utts_per_phrase % 2:
            raise ConfigError(f"utts_per_phrase must be even and >= 2, got {self.utts_per_phrase}")

    @property
    def enroll_per_phrase(self) -> int:
        return self.utts_per_phrase // 2

    @classmethod
    def from_dict(cls, values: Optional[Dict[str, Any]]) -> "BatchSpec":
        known = {f.name for f in fields(cls)}
        return cls(**{k: int(v) for k, v in (values or {}).items() if k in known})


@dataclass(frozen=True)
class LossConfig:
    # None means 1 / (X - 1), which balances total positive and negative weight
    gamma: Optional[float] = None
    w_init: float = 10.0
    b_init: float = -5.0

    def __post_init__(self):
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if not self.w_init > 0:
            raise ConfigError(f"w_init must be > 0, got {self.w_init}")

    def resolve_gamma(self, num_phrases: int) -> float:
        if self.gamma is not None:
            return float(self.gamma)
        return 1.0 / (num_phrases - 1)

    @classmethod
    def from_dict(cls, values: Optional[Dict[str, Any]]) -> "LossConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in (values or {}).items() if k in known})


@dataclass
class Batch:
    phrases: List[str]
    enrollment_ids: List[List[int]]
    test_ids: List[List[int]]

    @property
    def num_phrases(self) -> int:
        return len(self.phrases)

    @property
    def enroll_per_phrase(self) -> int:
        return len(self.enrollment_ids[0])

    def flat_enrollment(self) -> List[int]:
        return [i for ids in self.enrollment_ids for i in ids]

    def flat_test(self) -> List[int]:
        return [i for ids in self.test_ids for i in ids]

    def test_labels(self) -> np.ndarray:
        """Column index of the matching centroid for every flattened test row"""
        return np.repeat(np.arange(self.num_phrases), [len(ids) for ids in self.test_ids])


class BatchIndex:
    """phrase -> record ids, built once per training manifest"""

    def __init__(self, phrase_to_ids: Dict[str, Sequence[int]]):
        self.phrase_to_ids = {p: list(ids) for p, ids in sorted(phrase_to_ids.items())}
        self.phrases = list(self.phrase_to_ids)

    @classmethod
    def from_manifest(cls, manifest) -> "BatchIndex":
        return cls(manifest.phrase_index())

    def eligible(self, min_utts: int) -> List[str]:
        return [p for p in self.phrases if len(self.phrase_to_ids[p]) >= min_utts]

    def check(self, spec: BatchSpec) -> List[str]:
        """Phrases a batch may use; raises when fewer than X qualify"""
        eligible = self.eligible(spec.utts_per_phrase)
        if len(eligible) >= spec.num_phrases:
            if len(eligible) < len(self.phrases):
                logger.debug(f"{len(self.phrases) - len(eligible)} phrases have fewer than "
                             f"{spec.utts_per_phrase} utterances and are never sampled")
            return eligible
        if len(self.phrases) < spec.num_phrases:
            raise InsufficientPhrases(len(self.phrases), spec.num_phrases)
        short = next(p for p in self.phrases if len(self.phrase_to_ids[p]) < spec.utts_per_phrase)
        raise InsufficientUtterances(short, len(self.phrase_to_ids[short]), spec.utts_per_phrase)


def sample_batch(index: BatchIndex, spec: BatchSpec, rng: np.random.Generator) -> Batch:
    """
    Draw X distinct phrases and Y utterances of each, without replacement

    Args:
        index (BatchIndex): Phrase index of the training manifest
        spec (BatchSpec): X and Y
        rng (np.random.Generator): Exclusively owned RNG stream

    Returns:
        Batch: First Y/2 picks of each phrase enrol, the rest are test utterances
    """
    eligible = index.check(spec)
    chosen = rng.choice(len(eligible), size=spec.num_phrases, replace=False)
    half = spec.enroll_per_phrase
    phrases, enroll, test = [], [], []
    for k in chosen:
        phrase = eligible[int(k)]
        picks = rng.choice(index.phrase_to_ids[phrase], size=spec.utts_per_phrase, replace=False)
        phrases.append(phrase)
        enroll.append([int(i) for i in picks[:half]])
        test.append([int(i) for i in picks[half:]])
    return Batch(phrases=phrases, enrollment_ids=enroll, test_ids=test)


def centroids(enrollment: np.ndarray) -> np.ndarray:
    """
    L2-normalised mean of each phrase's enrollment embeddings

    Args:
        enrollment (np.ndarray): (X, K, E) unit embeddings, or a list of (K_j, E) arrays

    Returns:
        np.ndarray: (X, E) unit rows
    """
    rows = []
    for j, group in enumerate(enrollment):
        mean = np.asarray(group, dtype=np.float64).mean(axis=0)
        norm = float(np.linalg.norm(mean))
        if norm < CENTROID_MIN_NORM:
            raise DegenerateCentroid(j, norm)
        rows.append(mean / norm)
    return np.stack(rows)


def centroids_value(enrollment: Value, num_phrases: int) -> Value:
    """Differentiable centroids of phrase-major (X*K, E) enrollment rows"""
    rows = enrollment.shape[0]
    if rows % num_phrases:
        raise ShapeMismatch("centroids", enrollment.shape, (num_phrases,))
    per_phrase = rows // num_phrases
    averaging = np.kron(np.eye(num_phrases), np.full((1, per_phrase), 1.0 / per_phrase))
    mean = ad.matmul(ad.constant(averaging, enrollment), enrollment)
    norms = np.linalg.norm(mean.data, axis=1)
    if (norms < CENTROID_MIN_NORM).any():
        j = int(np.argmin(norms))
        raise DegenerateCentroid(j, float(norms[j]))
    return ad.l2_normalize_rows(mean)


def similarity_matrix(test: np.ndarray, centroid_rows: np.ndarray) -> np.ndarray:
    """S[i, j] = <test_i, centroid_j>, the cosine for unit rows"""
    test = np.asarray(test, dtype=np.float64)
    centroid_rows = np.asarray(centroid_rows, dtype=np.float64)
    if test.ndim != 2 or centroid_rows.ndim != 2 or test.shape[1] != centroid_rows.shape[1]:
        raise ShapeMismatch("similarity_matrix", test.shape, centroid_rows.shape)
    return np.clip(test @ centroid_rows.T, -1.0, 1.0)


def similarity_value(test: Value, centroid_rows: Value) -> Value:
    if test.shape[1] != centroid_rows.shape[1]:
        raise ShapeMismatch("similarity_matrix", test.shape, centroid_rows.shape)
    return ad.matmul(test, ad.transpose(centroid_rows))


def count_pairs(num_phrases: int, utts_per_phrase: int) -> Tuple[int, int]:
    """(N_pos, N_neg) = (X*Y/2, X(X-1)*Y/2)"""
    tests = num_phrases * utts_per_phrase // 2
    return tests, tests * (num_phrases - 1)


@dataclass
class LossOutput:
    loss: Value
    n_pos: int
    n_neg: int
    gamma: float

    @property
    def value(self) -> float:
        return self.loss.item()


def pair_targets(labels: np.ndarray, num_phrases: int) -> np.ndarray:
    labels = np.asarray(labels)
    targets = np.zeros((labels.size, num_phrases))
    targets[np.arange(labels.size), labels] = 1.0
    return targets


def ge2e_triplet_loss(S: Value, labels: Sequence[int], config: LossConfig,
                      w_scale: Value, b_shift: Value) -> LossOutput:
    """
    Weighted per-pair BCE over affine-scaled similarities

    logit[i, j] = w * S[i, j] + b; target 1 iff labels[i] == j;
    loss = (sum_pos bce + gamma * sum_neg bce) / (N_pos + gamma * N_neg)

    Args:
        S (Value): (R, X) similarities of test rows against centroids
        labels: Matching centroid column of every row
        config (LossConfig): gamma (None -> 1 / (X - 1))
        w_scale, b_shift (Value): 1x1 learnable scale and shift

    Returns:
        LossOutput: scalar loss plus the pair counts it was built from
    """
    labels = np.asarray(labels, dtype=np.int64)
    rows, num_phrases = S.shape
    if labels.shape != (rows,) or num_phrases < 2:
        raise ShapeMismatch("ge2e_triplet_loss", S.shape, labels.shape)
    if labels.min() < 0 or labels.max() >= num_phrases:
        raise ShapeMismatch("ge2e_triplet_loss (label out of range)", S.shape, (int(labels.max()),))
    gamma = config.resolve_gamma(num_phrases)

    targets = pair_targets(labels, num_phrases)
    weights = np.where(targets > 0, 1.0, gamma)
    logits = ad.scalar_affine(S, w_scale, b_shift)
    loss = ad.weighted_bce_with_logits(logits, targets, weights)

    n_pos = int(targets.sum())
    return LossOutput(loss=loss, n_pos=n_pos, n_neg=int(targets.size - n_pos), gamma=gamma)


def batch_loss(enrollment: Sequence[FeatureMatrix], test: Sequence[FeatureMatrix],
               labels: Sequence[int], num_phrases: int, params: ModelParams,
               config: LossConfig) -> LossOutput:
    """
    Full forward pass for one batch: embed, centroid, score, loss

    Args:
        enrollment: Phrase-major enrollment features (X * K)
        test: Test features, aligned with labels
        labels: Phrase column of every test utterance
        num_phrases: X
        params: Model (its loss-head scalars are used)
        config: Loss configuration
    """
    enroll_emb = embed_batch(enrollment, params)
    test_emb = embed_batch(test, params)
    centroid_rows = centroids_value(enroll_emb, num_phrases)
    S = similarity_value(test_emb, centroid_rows)
    return ge2e_triplet_loss(S, labels, config, params.w_scale, params.b_shift)


def batch_features(batch: Batch, load: Callable[[int], FeatureMatrix]
                   ) -> Tuple[List[FeatureMatrix], List[FeatureMatrix]]:
    """Fetch the enrollment and test features of a batch, phrase-major"""
    return ([load(i) for i in batch.flat_enrollment()],
            [load(i) for i in batch.flat_test()])
