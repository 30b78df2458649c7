"""
Deterministic toy corpus: each "phrase" is a sequence of three tones.

Phrases get a tone signature from a seeded hash of their name; every
utterance perturbs it per speaker (frequency), per take (amplitude,
duration) and per prosody (relative segment lengths), then adds white
noise at a fixed SNR. Output is PCM16 WAV plus a manifest tagged as tts.
"""

import hashlib
import logging
import os
from typing import Dict, List, Tuple

import numpy as np
from tqdm import tqdm

from kwskit.audio_processor import SAMPLE_RATE_HZ, AudioClip
from kwskit.datasets import Manifest, UtteranceRecord, write_manifest, write_wav
from kwskit.errors import ConfigError

logger = logging.getLogger(__name__)

TONE_RANGE_HZ = (300.0, 3000.0)
MIN_RELATIVE_GAP = 0.08
SPEAKER_SPREAD = 0.03
AMPLITUDE_SPREAD = 0.20
BASE_AMPLITUDE = 0.3
DURATION_RANGE_S = (0.8, 1.2)
SNR_DB = 20.0
FADE_S = 0.01

# share of the utterance spent on each of the three tones
PROSODIES: Dict[str, Tuple[float, float, float]] = {
    "even": (1 / 3, 1 / 3, 1 / 3),
    "lead": (0.50, 0.25, 0.25),
    "middle": (0.25, 0.50, 0.25),
    "trail": (0.25, 0.25, 0.50),
    "clipped": (0.40, 0.20, 0.40),
}

MANIFEST_NAME = "manifest.jsonl"


def phrase_name(k: int) -> str:
    return f"phrase {k:03d}"


def _hash_rng(seed: int, text: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{text}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _distinct(candidate: np.ndarray, others: List[np.ndarray]) -> bool:
    """True unless some existing signature is within the relative gap on every tone"""
    for other in others:
        if np.all(np.abs(candidate - other) / other < MIN_RELATIVE_GAP):
            return False
    return True


def tone_signatures(phrases: List[str], seed: int) -> Dict[str, np.ndarray]:
    """
    Three tone frequencies per phrase, re-drawn on collision

    Returns:
        dict: phrase -> (3,) frequencies in Hz
    """
    low, high = TONE_RANGE_HZ
    signatures: Dict[str, np.ndarray] = {}
    for phrase in phrases:
        rng = _hash_rng(seed, phrase)
        candidate = rng.uniform(low, high, size=3)
        while not _distinct(candidate, list(signatures.values())):
            candidate = rng.uniform(low, high, size=3)
        signatures[phrase] = candidate
    return signatures


def synthesize(signature: np.ndarray, proportions: Tuple[float, float, float], duration_s: float,
               amplitude: float, snr_db: float, rng: np.random.Generator,
               sample_rate: int = SAMPLE_RATE_HZ) -> np.ndarray:
    """Render one tone sequence with faded segment edges and additive noise"""
    total = int(round(duration_s * sample_rate))
    bounds = np.rint(np.cumsum([0.0, *proportions]) * total).astype(int)
    bounds[-1] = total
    fade = int(FADE_S * sample_rate)
    signal = np.zeros(total)
    phase = 0.0
    for freq, start, stop in zip(signature, bounds[:-1], bounds[1:]):
        n = stop - start
        if n <= 0:
            continue
        t = np.arange(n) / sample_rate
        segment = np.sin(phase + 2 * np.pi * freq * t)
        phase = float((phase + 2 * np.pi * freq * n / sample_rate) % (2 * np.pi))
        ramp = min(fade, n // 2)
        if ramp > 0:
            window = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
            segment[:ramp] *= window
            segment[n - ramp:] *= window[::-1]
        signal[start:stop] = segment
    signal *= amplitude
    power = float(np.mean(signal * signal))
    noise_std = np.sqrt(power / (10.0 ** (snr_db / 10.0)))
    signal = signal + rng.normal(0.0, noise_std, size=total)
    peak = float(np.max(np.abs(signal)))
    if peak > 0.99:
        signal *= 0.99 / peak
    return signal


def toy_generate(n_phrases: int, per_phrase: int, out_dir: str, seed: int,
                 n_speakers: int = 12, snr_db: float = SNR_DB, phrase_offset: int = 0,
                 show_progress: bool = True) -> Manifest:
    """
    Generate a toy tone corpus and its manifest

    Args:
        n_phrases (int): Number of phrases
        per_phrase (int): Utterances per phrase
        out_dir (str): Output directory (WAVs under one folder per phrase)
        seed (int): Corpus seed; the same seed gives a bit-identical corpus
        n_speakers (int): Size of the simulated speaker pool
        snr_db (float): Signal-to-noise ratio of the additive noise
        phrase_offset (int): First phrase number, for disjoint corpora

    Returns:
        Manifest: The written manifest (paths relative to out_dir)
    """
    if n_phrases < 1:
        raise ConfigError(f"n_phrases must be >= 1, got {n_phrases}")
    if per_phrase < 1:
        raise ConfigError(f"per_phrase must be >= 1, got {per_phrase}")

    phrases = [phrase_name(phrase_offset + k) for k in range(n_phrases)]
    signatures = tone_signatures(phrases, seed)
    rng = np.random.default_rng(seed)
    speaker_factors = rng.uniform(1 - SPEAKER_SPREAD, 1 + SPEAKER_SPREAD, size=n_speakers)
    prosody_ids = list(PROSODIES)

    os.makedirs(out_dir, exist_ok=True)
    records: List[UtteranceRecord] = []
    total = n_phrases * per_phrase
    with tqdm(total=total, desc="toy corpus", unit="utt", disable=not show_progress) as bar:
        for phrase in phrases:
            folder = phrase.replace(" ", "_")
            for u in range(per_phrase):
                speaker = int(rng.integers(n_speakers))
                prosody = prosody_ids[int(rng.integers(len(prosody_ids)))]
                amplitude = BASE_AMPLITUDE * rng.uniform(1 - AMPLITUDE_SPREAD, 1 + AMPLITUDE_SPREAD)
                duration = rng.uniform(*DURATION_RANGE_S)
                samples = synthesize(signatures[phrase] * speaker_factors[speaker],
                                     PROSODIES[prosody], duration, amplitude, snr_db, rng)
                rel_path = os.path.join(folder, f"spk{speaker:02d}_{u:04d}.wav")
                write_wav(os.path.join(out_dir, rel_path), AudioClip(samples))
                records.append(UtteranceRecord(path=rel_path, phrase=phrase, source="tts",
                                               speaker_id=f"spk{speaker:02d}", prosody_id=prosody))
                bar.update(1)

    manifest = Manifest(tuple(records), base_dir=os.path.abspath(out_dir))
    write_manifest(manifest, os.path.join(out_dir, MANIFEST_NAME))
    logger.info(f"Generated toy corpus: {n_phrases} phrases x {per_phrase} utterances in {out_dir}")
    return manifest

