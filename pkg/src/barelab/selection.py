"""Sample-selection strategies: per-class batch-statistics thresholding on
posteriors (the adaptive method), closed-form self-paced weights on losses,
noise-rate-aware small-loss selection, and passthrough.

All functions are pure; weights come back as 0/1 arrays aligned with the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ParameterError, ShapeError


@dataclass
class ClassStats:
    """Posterior statistics of one class inside a batch."""

    count: int
    mean: float
    std: float
    threshold: float


@dataclass
class SelectionResult:
    weights: np.ndarray
    stats: dict[int, ClassStats]
    selected_count: int


def class_stats(probs: np.ndarray, labels, kappa: float) -> dict[int, ClassStats]:
    """Mean/population-std of own-class posteriors per class present in the batch.

    The mean is computed on values centered at the first member so that a
    class whose posteriors are all identical gets an exact mean and zero std
    (its members must never be filtered out).
    """
    labels = np.asarray(labels)
    if labels.shape[0] != probs.shape[0]:
        raise ShapeError(f"labels shape {labels.shape} does not match batch of {probs.shape[0]}")
    out: dict[int, ClassStats] = {}
    for cls in np.unique(labels):
        idx = np.nonzero(labels == cls)[0]
        vals = probs[idx, cls]
        base = vals[0]
        mu = float(base + (vals - base).mean())
        sigma = float(np.sqrt(np.mean((vals - mu) ** 2)))
        out[int(cls)] = ClassStats(count=int(idx.size), mean=mu, std=sigma,
                                   threshold=mu + kappa * sigma)
    return out


def bare_select(probs: np.ndarray, labels, kappa: float = 1.0) -> SelectionResult:
    """Keep sample i iff its own-class posterior reaches mean + kappa*std of
    the posteriors of its class within the batch (inclusive)."""
    labels = np.asarray(labels)
    stats = class_stats(probs, labels, kappa)
    thresholds = np.array([stats[int(c)].threshold for c in labels])
    own = probs[np.arange(labels.shape[0]), labels]
    weights = (own >= thresholds).astype(np.uint8)
    return SelectionResult(weights=weights, stats=stats, selected_count=int(weights.sum()))


def spl_weights(losses, threshold: float) -> np.ndarray:
    """Self-paced weights: 1 for losses strictly below the threshold."""
    if not threshold > 0:
        raise ParameterError(f"threshold must be positive, got {threshold}")
    losses = np.asarray(losses)
    return (losses < threshold).astype(np.uint8)


def spl_weights_classwise(losses, labels, thresholds) -> np.ndarray:
    """Self-paced weights with a per-class threshold.

    thresholds may be a mapping {class: threshold} or an array indexed by
    class; every class present in the batch needs a positive entry.
    """
    losses = np.asarray(losses)
    labels = np.asarray(labels)
    if isinstance(thresholds, Mapping):
        per_sample = np.empty(labels.shape[0])
        for i, cls in enumerate(labels):
            if int(cls) not in thresholds:
                raise ParameterError(f"no threshold given for class {int(cls)}")
            per_sample[i] = thresholds[int(cls)]
    else:
        thresholds = np.asarray(thresholds, dtype=float)
        if labels.max() >= thresholds.shape[0]:
            raise ParameterError("threshold array shorter than the largest class index")
        per_sample = thresholds[labels]
    if np.any(per_sample <= 0):
        raise ParameterError("all per-class thresholds must be positive")
    return (losses < per_sample).astype(np.uint8)


def small_loss_select(losses, keep_fraction: float) -> np.ndarray:
    """Keep the ceil(keep_fraction * m) smallest losses, ties to lower index."""
    if not 0.0 < keep_fraction <= 1.0:
        raise ParameterError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    losses = np.asarray(losses)
    m = losses.shape[0]
    k = int(np.ceil(keep_fraction * m))
    order = np.argsort(losses, kind="stable")
    weights = np.zeros(m, dtype=np.uint8)
    weights[order[:k]] = 1
    return weights
