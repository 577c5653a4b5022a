"""Python bindings for the fairtune core: synthetic PPG corpora, fine-tuning with bias mitigation,
and fairness metrics."""

import json as _json

from . import _fairtune
from ._fairtune import (
    FairtuneError,
    adversary_entropy,
    dro_weights,
    if_weights,
    mmd2_rbf,
    silhouette,
)

__all__ = [
    "FairtuneError",
    "adversary_entropy",
    "dro_weights",
    "evaluate",
    "generate_corpus",
    "if_weights",
    "mmd2_rbf",
    "run_experiment",
    "silhouette",
    "train",
]


def generate_corpus(profile, n_subjects, windows, seed, path, bias_strength=None, female_fraction=None):
    """Write a JSONL corpus and return the resolved domain profile."""
    return _json.loads(
        _fairtune.generate_corpus(profile, n_subjects, windows, seed, str(path), bias_strength, female_fraction)
    )


def train(source, out_dir, method="none", size="xs", epochs=30, seed=0, batch_size=32, lam=0.1, eta=1.0):
    """Fine-tune on the train split of `source`; writes out_dir/checkpoint and out_dir/log.csv."""
    return _json.loads(
        _fairtune.train(str(source), str(out_dir), method, size, epochs, seed, batch_size, lam, eta)
    )


def evaluate(checkpoint, target, dump=None, seed=0):
    """Metrics of a checkpoint on the test split of `target`; optionally dumps per-window records."""
    return _json.loads(_fairtune.evaluate(str(checkpoint), str(target), None if dump is None else str(dump), seed))


def run_experiment(config, out_root, workers=1, force=False):
    """Runs an experiment config (dict) and returns the aggregated report rows."""
    return _json.loads(_fairtune.run_experiment(_json.dumps(config), str(out_root), workers, force))
