"""Two-stage dense pre-training for few-shot medical image segmentation."""

import json

from ._core import (
    ArgumentError,
    ConfigError,
    DataError,
    Encoder,
    NumericalError,
    dice,
    felzenszwalb,
    generate_synthetic,
    synthesize_slice,
)
from . import _core

__all__ = [
    "ArgumentError",
    "ConfigError",
    "DataError",
    "Encoder",
    "NumericalError",
    "config_fingerprint",
    "default_config",
    "dice",
    "felzenszwalb",
    "generate_synthetic",
    "make_encoder",
    "normalize_config",
    "run_all",
    "synthesize_slice",
]


def default_config():
    """Default pipeline configuration as a dict."""
    return json.loads(_core.default_config())


def normalize_config(config):
    """Validate a (partial) configuration dict and return it with defaults filled in."""
    return json.loads(_core.normalize_config(json.dumps(config)))


def config_fingerprint(config):
    return _core.config_fingerprint(json.dumps(config))


def make_encoder(config=None, seed=0):
    return Encoder(json.dumps(config or {}), seed)


def run_all(config, out_dir):
    """Stage 1, Stage 2, fine-tuning and evaluation; returns the evaluation report dict."""
    return json.loads(_core.run_all(json.dumps(config), str(out_dir)))
