"""
Typed views over the configuration document, plus the sweep scenario presets
"""

from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

from kwskit.errors import ConfigError


def _known(cls, values: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    names = {f.name for f in fields(cls)}
    return {k: v for k, v in (values or {}).items() if k in names}


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: Optional[float] = 1.0

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"optimizer.lr must be > 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"Adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}")

    @classmethod
    def from_dict(cls, values) -> "OptimizerConfig":
        return cls(**_known(cls, values))


@dataclass(frozen=True)
class TrainConfig:
    preset: str = "full"
    max_steps: int = 2000
    eval_every: int = 200
    log_every: int = 50
    seed: int = 0
    real_manifest: Optional[str] = None
    tts_manifest: Optional[str] = None
    eval_manifest: Optional[str] = None
    checkpoint_dir: str = "runs/train"
    feature_cache: Optional[str] = None
    num_workers: int = 2
    memory_cache_entries: int = 4096

    def __post_init__(self):
        for name in ("max_steps", "eval_every", "log_every"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"train.{name} must be > 0, got {getattr(self, name)}")
        if self.num_workers < 0:
            raise ConfigError(f"train.num_workers must be >= 0, got {self.num_workers}")
        if self.memory_cache_entries < 0:
            raise ConfigError(f"train.memory_cache_entries must be >= 0, got {self.memory_cache_entries}")

    @classmethod
    def from_dict(cls, values) -> "TrainConfig":
        return cls(**_known(cls, values))


@dataclass(frozen=True)
class EvalConfig:
    n_enroll: int = 10
    seed: int = 0
    histogram_bins: int = 100

    def __post_init__(self):
        if self.n_enroll < 1:
            raise ConfigError(f"eval.n_enroll must be >= 1, got {self.n_enroll}")
        if self.histogram_bins < 1:
            raise ConfigError(f"eval.histogram_bins must be >= 1, got {self.histogram_bins}")

    @classmethod
    def from_dict(cls, values) -> "EvalConfig":
        return cls(**_known(cls, values))


# Research grids; counts are utterances for real data, phrases/utterances-per-phrase for TTS.
# 0 TTS phrases (or 0 per phrase) is the real-only baseline cell.
SCENARIOS: Dict[str, Dict[str, List[int]]] = {
    "no_real_diversity": {
        "n_phrases": [500, 1000, 10000, 38000],
        "per_phrase": [100],
        "real_counts": [0],
    },
    "no_real_sampling": {
        "n_phrases": [38000],
        "per_phrase": [10, 25, 50, 75, 100],
        "real_counts": [0],
    },
    "low_real_diversity": {
        "n_phrases": [0, 500, 1000, 10000, 38000],
        "per_phrase": [100],
        "real_counts": [50000],
    },
    "low_real_sampling": {
        "n_phrases": [38000],
        "per_phrase": [0, 10, 25, 50, 75, 100],
        "real_counts": [50000],
    },
    "varying_real": {
        "n_phrases": [38000],
        "per_phrase": [100],
        "real_counts": [0, 50000, 150000, 250000, 500000, 1000000, 3000000, 5000000],
    },
}


@dataclass(frozen=True)
class SweepCell:
    scenario: str
    n_phrases: int
    per_phrase: int
    real_count: int

    @property
    def is_baseline(self) -> bool:
        """Real data only, no synthetic utterances"""
        return self.real_count > 0 and (self.n_phrases == 0 or self.per_phrase == 0)

    @property
    def cell_id(self) -> str:
        return f"p{self.n_phrases}_u{self.per_phrase}_r{self.real_count}"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class SweepConfig:
    scenario: str = "custom"
    n_phrases: List[int] = field(default_factory=list)
    per_phrase: List[int] = field(default_factory=list)
    real_counts: List[int] = field(default_factory=lambda: [0])
    tts_manifest: Optional[str] = None
    real_manifest: Optional[str] = None
    eval_manifest: Optional[str] = None
    seed: int = 0
    max_workers: int = 1

    @classmethod
    def from_dict(cls, values) -> "SweepConfig":
        """Scenario preset first, then any non-empty grid list given explicitly"""
        values = _known(cls, values)
        scenario = values.get("scenario", "custom")
        if scenario != "custom" and scenario not in SCENARIOS:
            raise ConfigError(f"Unknown sweep scenario '{scenario}'; choose from "
                              f"{['custom'] + sorted(SCENARIOS)}")
        merged = dict(SCENARIOS.get(scenario, {}))
        for key in ("n_phrases", "per_phrase", "real_counts"):
            if values.get(key):
                merged[key] = values[key]
        merged.setdefault("real_counts", [0])
        values.update(merged)
        for key in ("n_phrases", "per_phrase", "real_counts"):
            values[key] = [int(v) for v in values.get(key) or []]
        return cls(**values)

    def __post_init__(self):
        if not self.n_phrases or not self.per_phrase or not self.real_counts:
            raise ConfigError("sweep needs non-empty n_phrases, per_phrase and real_counts grids")
        if any(v < 0 for v in self.n_phrases + self.per_phrase + self.real_counts):
            raise ConfigError("sweep grid values must be >= 0")
        if self.max_workers < 1:
            raise ConfigError(f"sweep.max_workers must be >= 1, got {self.max_workers}")

    def cells(self) -> List[SweepCell]:
        return [SweepCell(self.scenario, n, u, r)
                for r in self.real_counts
                for n in self.n_phrases
                for u in self.per_phrase]
