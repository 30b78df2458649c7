import copy
import json
import os

from dotenv import load_dotenv

from kwskit.errors import ConfigError

# Load environment variables
load_dotenv()

# Logging
LOG_LEVEL = os.getenv("KWS_LOG_LEVEL", "INFO")

# Debug mode - set KWS_DEBUG=1 to enable detailed logging
DEBUG_MODE = os.getenv("KWS_DEBUG", "0").lower() in ("1", "true", "yes")

# Defaults that depend on the machine rather than the experiment
DEFAULT_SEED = int(os.getenv("KWS_SEED", "0"))
NUM_WORKERS = int(os.getenv("KWS_NUM_WORKERS", "2"))
FEATURE_CACHE_DIR = os.getenv("KWS_FEATURE_CACHE")
MEMORY_CACHE_ENTRIES = int(os.getenv("KWS_MEMORY_CACHE_ENTRIES", "4096"))

# Model size presets; "full" is the three-layer 384/128 architecture
MODEL_PRESETS = {
    "full": {
        "input_dim": 40,
        "num_layers": 3,
        "hidden_dim": 384,
        "embedding_dim": 128,
    },
    "toy": {
        "input_dim": 40,
        "num_layers": 2,
        "hidden_dim": 48,
        "embedding_dim": 32,
    },
}

# Experiment configuration dictionary
DEFAULT_CONFIG = {
    "features": {
        "sample_rate": 16000,
        "frame_len": 400,
        "hop": 160,
        "n_fft": 512,
        "n_mels": 40,
        "f_min": 125.0,
        "f_max": 7500.0,
        "log_floor": 1e-6,
    },
    "model": dict(MODEL_PRESETS["full"]),
    "batch": {
        "num_phrases": 8,
        "utts_per_phrase": 10,
    },
    "loss": {
        # None resolves to 1 / (num_phrases - 1)
        "gamma": None,
        "w_init": 10.0,
        "b_init": -5.0,
    },
    "optimizer": {
        "lr": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "clip_norm": 1.0,
    },
    "train": {
        "preset": "full",
        "max_steps": 2000,
        "eval_every": 200,
        "log_every": 50,
        "seed": DEFAULT_SEED,
        "real_manifest": None,
        "tts_manifest": None,
        "eval_manifest": None,
        "checkpoint_dir": "runs/train",
        "feature_cache": FEATURE_CACHE_DIR,
        "num_workers": NUM_WORKERS,
        # feature matrices kept in memory per process (least recently used evicted)
        "memory_cache_entries": MEMORY_CACHE_ENTRIES,
    },
    "eval": {
        "n_enroll": 10,
        "seed": DEFAULT_SEED,
        "histogram_bins": 100,
    },
    "sweep": {
        "scenario": "custom",
        "n_phrases": [],
        "per_phrase": [],
        # empty keeps the scenario preset; a custom grid without real data uses [0]
        "real_counts": [],
        "tts_manifest": None,
        "real_manifest": None,
        "eval_manifest": None,
        "seed": DEFAULT_SEED,
        "max_workers": 1,
    },
}


def _deep_merge(base, update):
    """Recursively merge ``update`` into a copy of ``base``"""
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_config(path=None, overrides=None):
    """
    Build the effective configuration document

    The model section is resolved as defaults <- preset <- explicit model
    fields, so a preset never hides a value the user wrote down.

    Args:
        path (str, optional): JSON document to merge over the defaults
        overrides (dict, optional): Extra nested values (e.g. from CLI flags)

    Returns:
        dict: The merged configuration
    """
    user_doc = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                user_doc = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"Config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}")
        if not isinstance(user_doc, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")

    if overrides:
        user_doc = _deep_merge(user_doc, overrides)

    unknown = set(user_doc) - set(DEFAULT_CONFIG)
    if unknown:
        raise ConfigError(f"Unknown config sections: {sorted(unknown)}")

    config = _deep_merge(DEFAULT_CONFIG, user_doc)

    preset = config["train"].get("preset") or "full"
    if preset not in MODEL_PRESETS:
        raise ConfigError(f"Unknown model preset '{preset}'; choose from {sorted(MODEL_PRESETS)}")
    config["model"] = {
        **DEFAULT_CONFIG["model"],
        **MODEL_PRESETS[preset],
        **user_doc.get("model", {}),
    }
    return config


def save_config(config, path):
    """Echo the effective config next to a run's outputs"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config, f, indent=2, sort_keys=True)
        f.write("\n")
