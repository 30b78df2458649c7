"""Shared fixtures for the kwskit test suite"""

import copy
import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from kwskit.kws_config import DEFAULT_CONFIG, load_config  # noqa: E402
from kwskit.kws_model import ModelConfig  # noqa: E402
from kwskit.toy_corpus import toy_generate  # noqa: E402

RUN_SLOW = os.getenv("KWS_RUN_SLOW", "0").lower() in ("1", "true", "yes")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end training runs (set KWS_RUN_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW:
        return
    skip_slow = pytest.mark.skip(reason="set KWS_RUN_SLOW=1 to run end-to-end training tests")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model_config():
    return ModelConfig(input_dim=40, num_layers=2, hidden_dim=8, embedding_dim=6)


def tiny_config(tmp_path, **sections):
    """Effective config with the toy model, small batches and a private feature cache"""
    overrides = {
        "train": {"preset": "toy", "max_steps": 5, "eval_every": 5, "log_every": 5,
                  "num_workers": 0, "feature_cache": str(tmp_path / "cache"),
                  "checkpoint_dir": str(tmp_path / "run")},
        "model": {"num_layers": 1, "hidden_dim": 8, "embedding_dim": 6},
        "batch": {"num_phrases": 2, "utts_per_phrase": 4},
        "eval": {"n_enroll": 2, "seed": 0},
    }
    for name, values in sections.items():
        overrides.setdefault(name, {}).update(values)
    return load_config(None, overrides)


@pytest.fixture
def default_config():
    return copy.deepcopy(DEFAULT_CONFIG)


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """4 phrases x 6 utterances, shared by the whole session"""
    out_dir = tmp_path_factory.mktemp("toy_corpus")
    manifest = toy_generate(4, 6, str(out_dir), seed=7, show_progress=False)
    return out_dir, manifest


@pytest.fixture(scope="session")
def toy_eval_corpus(tmp_path_factory):
    """3 disjoint phrases x 5 utterances"""
    out_dir = tmp_path_factory.mktemp("toy_eval_corpus")
    manifest = toy_generate(3, 5, str(out_dir), seed=7, phrase_offset=500, show_progress=False)
    return out_dir, manifest


@pytest.fixture
def make_config(tmp_path):
    def _make(**sections):
        return tiny_config(tmp_path, **sections)
    return _make
