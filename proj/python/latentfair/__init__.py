"""Latent-alignment debiasing for facial expression recognition.

Thin wrappers over the C++ core. Configs are plain dicts with the same
layout as the command-line JSON config.
"""

import json
import os

from . import _core
from ._core import (
    DataError,
    MetricsError,
    ShapeError,
    TrainingAborted,
    ValidationError,
    adversarial_latent_loss,
    discriminator_loss,
    fairness_score,
    gram_matrix,
    kl_divergence,
    style_loss,
    symmetric_cross_entropy,
)

__all__ = [
    "DataError",
    "MetricsError",
    "ShapeError",
    "TrainingAborted",
    "ValidationError",
    "ablate",
    "adversarial_latent_loss",
    "audit",
    "discriminator_loss",
    "evaluate",
    "fairness_score",
    "gram_matrix",
    "kl_divergence",
    "style_loss",
    "symmetric_cross_entropy",
    "synth",
    "train",
]


def _dump(config):
    return config if isinstance(config, str) else json.dumps(config)


def synth(config, out_dir):
    """Generate the synthetic biased dataset; returns split sizes."""
    return _core.synth(_dump(config), os.fspath(out_dir))


def train(config, base_dir=""):
    """Run both training phases; relative paths resolve against base_dir."""
    return _core.train(_dump(config), os.fspath(base_dir))


def evaluate(config, checkpoint, manifest="", out="", base_dir=""):
    """Predictions for a manifest (default: the config's test split) as a list of dicts."""
    return _core.evaluate(_dump(config), os.fspath(checkpoint), os.fspath(manifest), os.fspath(out),
                          os.fspath(base_dir))


def audit(predictions, attributes, format="table"):
    """Fairness reports for a predictions table; returns (reports, rendered text)."""
    if isinstance(attributes, str):
        attributes = [attributes]
    return _core.audit(os.fspath(predictions), list(attributes), format)


def ablate(config, base_dir=""):
    """Train and audit the 8-cell ablation grid; returns (cells, rendered table)."""
    return _core.ablate(_dump(config), os.fspath(base_dir))
