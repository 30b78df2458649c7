"""
Feature Service - featurizes manifests and serves cached feature matrices
"""

import hashlib
import json
import logging
import os
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import List, Optional, Sequence, Tuple

from tqdm import tqdm

from kwskit.audio_processor import (
    AudioProcessor,
    FeatureConfig,
    FeatureMatrix,
    read_feature_cache,
    write_feature_cache,
)
from kwskit.datasets import Manifest, read_wav
from kwskit.debug_utils import debug_log, log_exception
from kwskit.errors import DataError, FeatureCacheError
from kwskit.kws_config import DEFAULT_CONFIG

logger = logging.getLogger(__name__)

CACHE_SUFFIX = ".s4kf"


@dataclass
class FeaturizeReport:
    written: int = 0
    skipped: int = 0
    errors: List[Tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


class FeatureService:
    """Audio -> log-mel features with an on-disk and in-memory cache"""

    def __init__(self, config=None, manager=None, cache_dir: Optional[str] = None,
                 num_workers: Optional[int] = None):
        """
        Initialize the feature service

        Args:
            config (dict, optional): Effective configuration document
            manager (ExperimentServiceManager, optional): Owning registry (unused here)
            cache_dir (str, optional): Overrides train.feature_cache
            num_workers (int, optional): Overrides train.num_workers
        """
        config = config or DEFAULT_CONFIG
        self.feature_config = FeatureConfig.from_dict(config.get("features"))
        self.processor = AudioProcessor(self.feature_config)
        train = config.get("train", {})
        self.cache_dir = cache_dir if cache_dir is not None else train.get("feature_cache")
        workers = num_workers if num_workers is not None else train.get("num_workers", 1)
        self.num_workers = max(1, int(workers or 1))
        self.memory_cache_entries = max(0, int(train.get("memory_cache_entries", 4096)))
        self._memory: "OrderedDict[str, FeatureMatrix]" = OrderedDict()
        self._lock = threading.Lock()
        # feature settings take part in the cache key so caches never mix configs
        self._config_key = json.dumps(asdict(self.feature_config), sort_keys=True)

    def cache_path(self, audio_path: str, cache_dir: Optional[str] = None) -> str:
        cache_dir = cache_dir or self.cache_dir
        key = f"{os.path.abspath(audio_path)}|{self._config_key}"
        return os.path.join(cache_dir, hashlib.sha1(key.encode("utf-8")).hexdigest() + CACHE_SUFFIX)

    def compute(self, audio_path: str) -> FeatureMatrix:
        return self.processor.extract(read_wav(audio_path))

    def _valid_cache(self, path: str) -> bool:
        if not os.path.exists(path):
            return False
        try:
            read_feature_cache(path)
            return True
        except FeatureCacheError:
            return False

    def _featurize_one(self, audio_path: str, cache_dir: str) -> bool:
        """Returns True if a cache file was written, False if a valid one existed"""
        target = self.cache_path(audio_path, cache_dir)
        if self._valid_cache(target):
            return False
        write_feature_cache(target, self.compute(audio_path))
        return True

    def featurize_manifest(self, manifest: Manifest, cache_dir: Optional[str] = None,
                           show_progress: bool = True) -> FeaturizeReport:
        """
        Write one cache file per utterance, skipping valid existing ones

        Args:
            manifest (Manifest): Utterances to featurize
            cache_dir (str, optional): Target directory (defaults to the service's)
            show_progress (bool): Show a progress bar

        Returns:
            FeaturizeReport: counts plus (path, message) for every failed file
        """
        cache_dir = cache_dir or self.cache_dir
        if not cache_dir:
            raise DataError("No feature cache directory configured")
        os.makedirs(cache_dir, exist_ok=True)
        report = FeaturizeReport()
        paths = [manifest.resolve(r) for r in manifest]
        with ThreadPoolExecutor(max_workers=self.num_workers) as pool:
            futures = {pool.submit(self._featurize_one, p, cache_dir): p for p in paths}
            for future in tqdm(as_completed(futures), total=len(futures), desc="featurize",
                               unit="utt", disable=not show_progress):
                path = futures[future]
                try:
                    if future.result():
                        report.written += 1
                    else:
                        report.skipped += 1
                except (DataError, OSError) as e:
                    log_exception(e, f"Featurizing {path}")
                    report.errors.append((path, str(e)))
        report.errors.sort()
        logger.info(f"Featurized {len(paths)} utterances: {report.written} written, "
                    f"{report.skipped} cached, {len(report.errors)} failed")
        return report

    def features_for(self, manifest: Manifest, record_id: int) -> FeatureMatrix:
        """Memory cache, then disk cache, then the audio itself"""
        path = manifest.resolve(manifest[record_id])
        with self._lock:
            cached = self._memory.get(path)
            if cached is not None:
                self._memory.move_to_end(path)
        if cached is not None:
            return cached
        features = None
        if self.cache_dir:
            target = self.cache_path(path)
            if os.path.exists(target):
                try:
                    features = read_feature_cache(target, self.feature_config.log_floor)
                except FeatureCacheError as e:
                    debug_log(f"Ignoring bad cache {target}: {e}", level="WARNING")
            if features is None:
                features = self.compute(path)
                write_feature_cache(target, features)
        else:
            features = self.compute(path)
        self._remember(path, features)
        return features

    def _remember(self, path: str, features: FeatureMatrix) -> None:
        """Bounded LRU; a size of 0 disables the memory cache"""
        if self.memory_cache_entries == 0:
            return
        with self._lock:
            self._memory[path] = features
            self._memory.move_to_end(path)
            while len(self._memory) > self.memory_cache_entries:
                self._memory.popitem(last=False)

    @property
    def memory_size(self) -> int:
        return len(self._memory)

    def load_many(self, manifest: Manifest, record_ids: Sequence[int],
                  show_progress: bool = False, desc: str = "features") -> List[FeatureMatrix]:
        """Features for many records, in the order given"""
        loader = partial(self.features_for, manifest)
        if self.num_workers <= 1 or len(record_ids) < 2:
            return [loader(i) for i in tqdm(record_ids, desc=desc, unit="utt",
                                            disable=not show_progress)]
        with ThreadPoolExecutor(max_workers=self.num_workers) as pool:
            return list(tqdm(pool.map(loader, record_ids), total=len(record_ids), desc=desc,
                             unit="utt", disable=not show_progress))
