"""
Manifest-based dataset layer.

A manifest is line-delimited JSON, one utterance per line:

    {"path": "...", "phrase": "...", "source": "real|tts", "speaker_id": "...", "prosody_id": null}

Relative paths are resolved against the directory of the manifest file.
"""

import json
import logging
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd
import soundfile as sf

from kwskit.audio_processor import SAMPLE_RATE_HZ, AudioClip
from kwskit.errors import (
    DataError,
    DuplicatePath,
    InsufficientPhrases,
    InsufficientUtterances,
    ParseError,
    UnsupportedFormat,
)

logger = logging.getLogger(__name__)

SOURCES = ("real", "tts")
RECORD_FIELDS = ("path", "phrase", "source", "speaker_id", "prosody_id")
PCM16_SCALE = 32768.0


def normalize_phrase(phrase: str) -> str:
    return " ".join(str(phrase).split()).lower()


@dataclass(frozen=True)
class UtteranceRecord:
    path: str
    phrase: str
    source: str = "real"
    speaker_id: str = ""
    prosody_id: Optional[str] = None

    def __post_init__(self):
        phrase = normalize_phrase(self.phrase)
        if not phrase:
            raise DataError(f"Empty phrase for {self.path}")
        if self.source not in SOURCES:
            raise DataError(f"Unknown source '{self.source}' for {self.path}; expected one of {SOURCES}")
        object.__setattr__(self, "phrase", phrase)
        object.__setattr__(self, "speaker_id", str(self.speaker_id))

    def to_json(self) -> str:
        return json.dumps({k: getattr(self, k) for k in RECORD_FIELDS}, ensure_ascii=False)


@dataclass(frozen=True)
class Manifest:
    records: Tuple[UtteranceRecord, ...] = ()
    base_dir: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        seen = set()
        for record in records:
            if record.path in seen:
                raise DuplicatePath(record.path)
            seen.add(record.path)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[UtteranceRecord]:
        return iter(self.records)

    def __getitem__(self, index: int) -> UtteranceRecord:
        return self.records[index]

    def phrase_index(self) -> Dict[str, List[int]]:
        """phrase -> record ids (positions in this manifest), phrases in first-seen order"""
        index: Dict[str, List[int]] = {}
        for i, record in enumerate(self.records):
            index.setdefault(record.phrase, []).append(i)
        return index

    def phrases(self) -> List[str]:
        return sorted(self.phrase_index())

    def source_counts(self) -> Dict[str, int]:
        return dict(Counter(r.source for r in self.records))

    def resolve(self, record: UtteranceRecord) -> str:
        if self.base_dir and not os.path.isabs(record.path):
            return os.path.normpath(os.path.join(self.base_dir, record.path))
        return record.path

    def resolved(self) -> "Manifest":
        """Same records with paths made independent of the manifest location"""
        if not self.base_dir:
            return self
        return Manifest(tuple(
            UtteranceRecord(self.resolve(r), r.phrase, r.source, r.speaker_id, r.prosody_id)
            for r in self.records
        ))

    def select(self, ids: Iterable[int]) -> "Manifest":
        return Manifest(tuple(self.records[i] for i in ids), base_dir=self.base_dir)

    def summary(self) -> pd.DataFrame:
        """Utterance count per phrase and source"""
        frame = pd.DataFrame([asdict(r) for r in self.records], columns=list(RECORD_FIELDS))
        if frame.empty:
            return pd.DataFrame(columns=["phrase", "source", "utterances"])
        return (frame.groupby(["phrase", "source"]).size()
                .rename("utterances").reset_index())


# --- manifest I/O ------------------------------------------------------------

def _parse_record(line: str, line_no: int, source: str) -> UtteranceRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(line_no, f"invalid JSON ({e.msg})", source)
    if not isinstance(obj, dict):
        raise ParseError(line_no, "expected a JSON object", source)
    missing = [k for k in RECORD_FIELDS if k not in obj]
    extra = [k for k in obj if k not in RECORD_FIELDS]
    if missing or extra:
        raise ParseError(line_no, f"missing fields {missing}, unexpected fields {extra}", source)
    if not isinstance(obj["path"], str) or not obj["path"]:
        raise ParseError(line_no, "path must be a non-empty string", source)
    try:
        return UtteranceRecord(**obj)
    except DataError as e:
        raise ParseError(line_no, str(e), source)


def read_manifest(path: str) -> Manifest:
    """
    Load a JSONL manifest

    Raises:
        ParseError: with the 1-based line number of the first bad line
        DuplicatePath: if two lines name the same audio file
    """
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            records.append(_parse_record(line, line_no, path))
    manifest = Manifest(tuple(records), base_dir=os.path.dirname(os.path.abspath(path)))
    logger.debug(f"Read {len(manifest)} records from {path}")
    return manifest


def write_manifest(manifest: Manifest, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    tmp_path = f"{path}.tmp{os.getpid()}"
    with open(tmp_path, "w", encoding="utf-8") as f:
        for record in manifest.records:
            f.write(record.to_json())
            f.write("\n")
    os.replace(tmp_path, path)
    logger.debug(f"Wrote {len(manifest)} records to {path}")


# --- subsets and mixing ------------------------------------------------------

def sample_subset(manifest: Manifest, n_phrases: int, per_phrase: int, seed: int) -> Manifest:
    """
    Phrase-diversity / utterances-per-phrase subsample

    Args:
        manifest (Manifest): Source corpus
        n_phrases (int): Distinct phrases to keep
        per_phrase (int): Utterances to keep per phrase
        seed (int): Sampling seed

    Returns:
        Manifest: n_phrases * per_phrase records, in source order
    """
    if n_phrases < 0 or per_phrase < 0:
        raise DataError(f"n_phrases and per_phrase must be >= 0, got {n_phrases}, {per_phrase}")
    if n_phrases == 0 or per_phrase == 0:
        return Manifest((), base_dir=manifest.base_dir)

    index = manifest.phrase_index()
    phrases = sorted(index)
    eligible = [p for p in phrases if len(index[p]) >= per_phrase]
    if len(eligible) < n_phrases:
        if len(phrases) < n_phrases:
            raise InsufficientPhrases(len(phrases), n_phrases)
        short = next(p for p in phrases if len(index[p]) < per_phrase)
        raise InsufficientUtterances(short, len(index[short]), per_phrase)

    rng = np.random.default_rng(seed)
    chosen = sorted(int(k) for k in rng.choice(len(eligible), size=n_phrases, replace=False))
    keep: List[int] = []
    for k in chosen:
        ids = index[eligible[k]]
        keep.extend(int(i) for i in rng.choice(ids, size=per_phrase, replace=False))
    subset = manifest.select(sorted(keep))
    logger.info(f"Sampled {n_phrases} phrases x {per_phrase} utterances = {len(subset)} records")
    return subset


def sample_utterances(manifest: Manifest, n: int, seed: int) -> Manifest:
    """n records drawn uniformly without replacement, in source order"""
    if n < 0:
        raise DataError(f"n must be >= 0, got {n}")
    if n > len(manifest):
        raise InsufficientUtterances("(any phrase)", len(manifest), n)
    rng = np.random.default_rng(seed)
    keep = sorted(int(i) for i in rng.choice(len(manifest), size=n, replace=False))
    return manifest.select(keep)


def mix(real: Manifest, synthetic: Manifest) -> Manifest:
    """Concatenate two manifests, keeping source tags; paths must be disjoint"""
    real, synthetic = real.resolved(), synthetic.resolved()
    merged = Manifest(real.records + synthetic.records)
    logger.info(f"Mixed {len(real)} real-side and {len(synthetic)} synthetic-side records")
    return merged


# --- audio -------------------------------------------------------------------

def read_wav(path: str) -> AudioClip:
    """
    Read a 16 kHz mono PCM16 WAV file

    Raises:
        UnsupportedFormat: for anything else, including unreadable files
    """
    try:
        info = sf.info(path)
    except Exception as e:
        raise UnsupportedFormat(f"{path}: cannot open ({e})")
    if info.format != "WAV":
        raise UnsupportedFormat(f"{path}: container {info.format}, expected WAV")
    if info.subtype != "PCM_16":
        raise UnsupportedFormat(f"{path}: encoding {info.subtype}, expected PCM_16")
    if info.channels != 1:
        raise UnsupportedFormat(f"{path}: {info.channels} channels, expected mono")
    if info.samplerate != SAMPLE_RATE_HZ:
        raise UnsupportedFormat(f"{path}: {info.samplerate} Hz, expected {SAMPLE_RATE_HZ} Hz")
    try:
        data, _ = sf.read(path, dtype="int16", always_2d=False)
    except Exception as e:
        raise UnsupportedFormat(f"{path}: unreadable audio data ({e})")
    if data.size == 0:
        raise UnsupportedFormat(f"{path}: no samples")
    return AudioClip(samples=data.astype(np.float64) / PCM16_SCALE, sample_rate_hz=info.samplerate)


def write_wav(path: str, clip: AudioClip) -> None:
    """Write a clip as 16-bit PCM, clipping to the representable range"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    pcm = np.clip(np.rint(clip.samples * PCM16_SCALE), -32768, 32767).astype(np.int16)
    sf.write(path, pcm, clip.sample_rate_hz, subtype="PCM_16", format="WAV")
