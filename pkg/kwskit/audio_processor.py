"""
Audio front end: 16 kHz PCM -> framed log-mel energies
"""

import logging
import os
import struct
from dataclasses import dataclass, fields
from functools import lru_cache
from typing import Any, Dict, Optional

import librosa
import numpy as np
from scipy.signal import get_window

from kwskit.errors import (
    EmptyInput,
    FeatureCacheError,
    TooShort,
    UnsupportedFormat,
)

logger = logging.getLogger(__name__)

SAMPLE_RATE_HZ = 16000

CACHE_MAGIC = b"S4KF"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform with samples in [-1, 1]"""

    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE_HZ

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "samples", samples)
        if samples.size == 0:
            raise EmptyInput("Audio clip has no samples")
        if self.sample_rate_hz != SAMPLE_RATE_HZ:
            raise UnsupportedFormat(
                f"sample rate {self.sample_rate_hz} Hz (only {SAMPLE_RATE_HZ} Hz is supported)"
            )

    @property
    def num_samples(self) -> int:
        return int(self.samples.size)

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate_hz


@dataclass(frozen=True)
class FeatureMatrix:
    """T x D log-mel energies for one utterance"""

    frames: np.ndarray
    frame_len_ms: int = 25
    hop_ms: int = 10

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def dim(self) -> int:
        return int(self.frames.shape[1])


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = SAMPLE_RATE_HZ
    frame_len: int = 400
    hop: int = 160
    n_fft: int = 512
    n_mels: int = 40
    f_min: float = 125.0
    f_max: float = 7500.0
    log_floor: float = 1e-6

    @classmethod
    def from_dict(cls, values: Optional[Dict[str, Any]]) -> "FeatureConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in (values or {}).items() if k in known})


def expected_num_frames(num_samples: int, frame_len: int = 400, hop: int = 160) -> int:
    """floor((N - frame_len) / hop) + 1, or 0 when the clip is too short"""
    if num_samples < frame_len:
        return 0
    return (num_samples - frame_len) // hop + 1


def frame_signal(clip: AudioClip, frame_len: int = 400, hop: int = 160) -> np.ndarray:
    """
    Cut a clip into overlapping frames

    Args:
        clip (AudioClip): Input audio
        frame_len (int): Samples per frame (25 ms at 16 kHz)
        hop (int): Samples between frame starts (10 ms at 16 kHz)

    Returns:
        np.ndarray: (T, frame_len) array; row i covers samples [i*hop, i*hop + frame_len)
    """
    if clip.num_samples < frame_len:
        raise TooShort(clip.num_samples, frame_len)
    windows = np.lib.stride_tricks.sliding_window_view(clip.samples, frame_len)
    return np.ascontiguousarray(windows[::hop])


@lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int = SAMPLE_RATE_HZ, n_fft: int = 512, n_mels: int = 40,
                   f_min: float = 125.0, f_max: float = 7500.0) -> np.ndarray:
    """
    HTK-scale triangular mel filters over the rfft bins, without area normalization

    Returns:
        np.ndarray: (n_mels, n_fft // 2 + 1) weights, read-only
    """
    if not 0 <= f_min < f_max <= sample_rate / 2:
        raise ValueError(f"Invalid mel band [{f_min}, {f_max}] for {sample_rate} Hz")
    weights = librosa.filters.mel(sr=sample_rate, n_fft=n_fft, n_mels=n_mels, fmin=f_min,
                                  fmax=f_max, htk=True, norm=None, dtype=np.float64)
    weights.setflags(write=False)
    return weights


class AudioProcessor:
    """Computes log-mel features with a fixed front-end configuration"""

    def __init__(self, config: Optional[FeatureConfig] = None):
        self.config = config or FeatureConfig()
        cfg = self.config
        if cfg.sample_rate != SAMPLE_RATE_HZ:
            raise UnsupportedFormat(f"front end configured for {cfg.sample_rate} Hz")
        self.window = get_window("hann", cfg.frame_len, fftbins=True)
        self.filterbank = mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels,
                                         cfg.f_min, cfg.f_max)

    def power_spectrum(self, frames: np.ndarray) -> np.ndarray:
        """|rfft(hann * frame, n_fft)|^2 per frame"""
        spectrum = np.fft.rfft(frames * self.window, n=self.config.n_fft, axis=1)
        return spectrum.real ** 2 + spectrum.imag ** 2

    def extract(self, clip: AudioClip) -> FeatureMatrix:
        """
        Compute log-mel energies for one clip

        Args:
            clip (AudioClip): 16 kHz mono audio with at least one full frame

        Returns:
            FeatureMatrix: (T, n_mels) matrix of log(energy + floor)
        """
        cfg = self.config
        frames = frame_signal(clip, cfg.frame_len, cfg.hop)
        energies = self.power_spectrum(frames) @ self.filterbank.T
        log_energies = np.log(energies + cfg.log_floor)
        return FeatureMatrix(
            frames=log_energies,
            frame_len_ms=int(round(1000 * cfg.frame_len / cfg.sample_rate)),
            hop_ms=int(round(1000 * cfg.hop / cfg.sample_rate)),
        )


# Initialize the default front end
audio_processor = AudioProcessor()


def log_mel_features(clip: AudioClip, config: Optional[FeatureConfig] = None) -> FeatureMatrix:
    """Log-mel features with the default front end, or a custom one"""
    if config is None or config == audio_processor.config:
        return audio_processor.extract(clip)
    return AudioProcessor(config).extract(clip)


def write_feature_cache(path: str, features: FeatureMatrix) -> None:
    """
    Store features as "S4KF" | version | T | D | T*D float32 (little endian)

    The file is written to a temporary name first and renamed into place, so
    readers never see a partial cache entry.
    """
    data = np.ascontiguousarray(features.frames, dtype="<f4")
    num_frames, dim = data.shape
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    tmp_path = f"{path}.tmp{os.getpid()}"
    with open(tmp_path, "wb") as f:
        f.write(_CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, num_frames, dim))
        f.write(data.tobytes())
    os.replace(tmp_path, path)


def read_feature_cache(path: str, log_floor: float = 1e-6) -> FeatureMatrix:
    """
    Load a feature cache file written by write_feature_cache

    float32 storage rounds log(log_floor) slightly downward, so entries are
    clamped back onto the floor.
    """
    with open(path, "rb") as f:
        header = f.read(_CACHE_HEADER.size)
        if len(header) != _CACHE_HEADER.size:
            raise FeatureCacheError(f"{path}: truncated header")
        magic, version, num_frames, dim = _CACHE_HEADER.unpack(header)
        if magic != CACHE_MAGIC:
            raise FeatureCacheError(f"{path}: bad magic {magic!r}")
        if version != CACHE_VERSION:
            raise FeatureCacheError(f"{path}: unsupported version {version}")
        payload = f.read()
    expected = num_frames * dim * 4
    if len(payload) != expected or num_frames == 0:
        raise FeatureCacheError(f"{path}: expected {expected} data bytes, found {len(payload)}")
    frames = np.frombuffer(payload, dtype="<f4").reshape(num_frames, dim).astype(np.float64)
    return FeatureMatrix(frames=np.maximum(frames, np.log(log_floor)))
