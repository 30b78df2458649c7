"""
Importer for the Speech Commands folder layout:

    <root>/<word>/<speaker>_nohash_<k>.wav
    <root>/testing_list.txt      word/file.wav per line
    <root>/validation_list.txt
"""

import logging
import os
from typing import List, Set

from kwskit.datasets import Manifest, UtteranceRecord
from kwskit.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

SUBSETS = ("testing", "validation", "training", "all")
BACKGROUND_DIR = "_background_noise_"
NOHASH = "_nohash_"


def _read_list(root: str, name: str) -> Set[str]:
    path = os.path.join(root, name)
    if not os.path.exists(path):
        return set()
    with open(path, "r", encoding="utf-8") as f:
        return {os.path.normpath(line.strip()) for line in f if line.strip()}


def speaker_of(filename: str) -> str:
    """Speaker hash is everything before "_nohash_" in the file name"""
    stem = os.path.splitext(os.path.basename(filename))[0]
    return stem.split(NOHASH, 1)[0] if NOHASH in stem else stem


def import_speech_commands(root: str, subset: str = "testing") -> Manifest:
    """
    Build a manifest from a Speech Commands directory

    Args:
        root (str): Dataset root holding one folder per word
        subset (str): testing, validation, training (neither list) or all

    Returns:
        Manifest: source=real records, paths relative to root
    """
    if subset not in SUBSETS:
        raise ConfigError(f"Unknown subset '{subset}'; choose from {SUBSETS}")
    if not os.path.isdir(root):
        raise DataError(f"Speech Commands root not found: {root}")

    testing = _read_list(root, "testing_list.txt")
    validation = _read_list(root, "validation_list.txt")
    if subset == "testing" and not testing:
        raise DataError(f"{root} has no testing_list.txt")
    if subset == "validation" and not validation:
        raise DataError(f"{root} has no validation_list.txt")

    records: List[UtteranceRecord] = []
    for word in sorted(os.listdir(root)):
        word_dir = os.path.join(root, word)
        if word == BACKGROUND_DIR or word.startswith(".") or not os.path.isdir(word_dir):
            continue
        for filename in sorted(os.listdir(word_dir)):
            if not filename.lower().endswith(".wav"):
                continue
            rel_path = os.path.normpath(os.path.join(word, filename))
            if subset == "testing" and rel_path not in testing:
                continue
            if subset == "validation" and rel_path not in validation:
                continue
            if subset == "training" and (rel_path in testing or rel_path in validation):
                continue
            records.append(UtteranceRecord(path=rel_path, phrase=word, source="real",
                                           speaker_id=speaker_of(filename)))

    manifest = Manifest(tuple(records), base_dir=os.path.abspath(root))
    logger.info(f"Imported {len(manifest)} {subset} utterances over "
                f"{len(manifest.phrase_index())} words from {root}")
    return manifest
