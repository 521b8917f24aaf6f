"""Training loop: shuffle, batch, compute posteriors, select samples with a
pluggable strategy, update parameters on the selected set, and track per-epoch
selection-quality metrics against the hidden ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import nn, selection
from .data import RawDataset
from .errors import ConfigError, ParameterError
from .noise import NoisyDataset, TrainView

SELECTOR_KINDS = ("bare", "small-loss", "spl", "none")

# sub-stream tags for deriving independent generators from one trial seed
_INIT_STREAM = 0
_SHUFFLE_STREAM = 1


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, *key)))


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    lr: float = 2e-4
    kappa: float = 1.0
    selector: str = "bare"
    keep_fraction: Optional[float] = None
    spl_threshold: Optional[float] = None
    seed: int = 0
    hidden: tuple[int, ...] = (256,)
    patience: int = 5
    factor: float = 0.5
    min_lr: Optional[float] = None
    monitor: str = "train_loss"
    dtype: str = "float64"
    dataset: str = ""

    def validate(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch size must be >= 2")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.selector not in SELECTOR_KINDS:
            raise ConfigError(f"unknown selector {self.selector!r}")
        if self.selector == "small-loss" and self.keep_fraction is None:
            raise ConfigError("small-loss selector needs keep_fraction")
        if self.selector == "spl" and self.spl_threshold is None:
            raise ConfigError("spl selector needs a loss threshold")
        if self.monitor not in ("train_loss", "val_acc"):
            raise ConfigError(f"unknown scheduler monitor {self.monitor!r}")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    test_acc: float
    label_precision: float
    label_recall: float
    sample_fraction: float
    lr: float
    skipped_batches: int


@dataclass
class EpochLog:
    """Raw per-epoch selection record, one (last) decision bit per sample."""

    selected: np.ndarray
    mean_selected_loss: float
    skipped_batches: int


@dataclass
class ExperimentData:
    """Everything one trial trains and evaluates on. The training loop only
    ever sees train.train_view(); clean labels stay on the metrics side."""

    train: NoisyDataset
    val: NoisyDataset
    test: RawDataset


Selector = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def make_selector(kind: str, kappa: float = 1.0, keep_fraction: float | None = None,
                  spl_threshold: float | None = None) -> Selector:
    """Build a (probs, losses, labels) -> 0/1 weights callable."""
    if kind == "bare":
        return lambda probs, losses, labels: selection.bare_select(probs, labels, kappa).weights
    if kind == "small-loss":
        if keep_fraction is None:
            raise ConfigError("small-loss selector needs keep_fraction")
        return lambda probs, losses, labels: selection.small_loss_select(losses, keep_fraction)
    if kind == "spl":
        if spl_threshold is None:
            raise ConfigError("spl selector needs a loss threshold")
        return lambda probs, losses, labels: selection.spl_weights(losses, spl_threshold)
    if kind == "none":
        return lambda probs, losses, labels: np.ones(labels.shape[0], dtype=np.uint8)
    raise ConfigError(f"unknown selector {kind!r}")


def train_epoch(view: TrainView, params: nn.MlpParams, adam: nn.AdamState,
                selector: Selector, batch_size: int, rng: np.random.Generator) -> EpochLog:
    """One pass over the (freshly shuffled) dataset; the final partial batch
    is processed. Batches where nothing is selected are skipped, not fatal."""
    n = len(view)
    if n == 0:
        raise ParameterError("empty training set")
    if batch_size > n:
        raise ParameterError(f"batch size {batch_size} exceeds dataset size {n}")
    order = rng.permutation(n)
    selected = np.zeros(n, dtype=bool)
    loss_sum, loss_count, skipped = 0.0, 0, 0
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        x = view.features[idx]
        y = view.labels[idx]
        probs = nn.forward(x, params)
        losses = nn.cce_loss(probs, y)
        weights = selector(probs, losses, y)
        keep = weights.astype(bool)
        selected[idx] = keep
        if not keep.any():
            skipped += 1
            continue
        loss_sum += float(losses[keep].sum())
        loss_count += int(keep.sum())
        grads = nn.backward(x, y, weights, params)
        nn.adam_step(params, grads, adam)
    mean_loss = loss_sum / loss_count if loss_count else float("nan")
    return EpochLog(selected=selected, mean_selected_loss=mean_loss, skipped_batches=skipped)


def evaluate(params: nn.MlpParams, features: np.ndarray, labels: np.ndarray,
             chunk: int = 4096) -> float:
    """Argmax accuracy; ties resolve to the lowest class index."""
    n = features.shape[0]
    if n == 0:
        raise ParameterError("empty evaluation set")
    correct = 0
    for start in range(0, n, chunk):
        probs = nn.forward(features[start:start + chunk], params)
        correct += int((probs.argmax(axis=1) == labels[start:start + chunk]).sum())
    return correct / n


def selection_metrics(selected, corrupted):
    """(precision, recall, fraction) of clean-sample identification."""
    selected = np.asarray(selected, dtype=bool)
    corrupted = np.asarray(corrupted, dtype=bool)
    if selected.shape != corrupted.shape:
        raise ParameterError("selection and corruption arrays must align")
    clean = ~corrupted
    clean_selected = int((selected & clean).sum())
    n_selected = int(selected.sum())
    precision = clean_selected / n_selected if n_selected else float("nan")
    n_clean = int(clean.sum())
    recall = clean_selected / n_clean if n_clean else float("nan")
    return precision, recall, float(selected.mean())


def run_training(config: TrainConfig, datasets: ExperimentData,
                 progress: Callable[[int], None] | None = None):
    """Full training run; returns (params, per-epoch metrics).

    The LR scheduler watches either the mean training loss on selected
    samples (default) or accuracy on the noisy-labelled validation split;
    the recorded lr is the one the epoch actually trained with.
    """
    config.validate()
    dtype = np.dtype(config.dtype)
    view = datasets.train.train_view()
    view = TrainView(np.ascontiguousarray(view.features, dtype=dtype), view.labels,
                     view.num_classes)
    val_feats = np.ascontiguousarray(datasets.val.features, dtype=dtype)
    test_feats = np.ascontiguousarray(datasets.test.features, dtype=dtype)

    sizes = (view.features.shape[1], *config.hidden, view.num_classes)
    params = nn.init_params(sizes, _stream(config.seed, _INIT_STREAM), dtype=dtype)
    adam = nn.init_adam(params, alpha=config.lr)
    sched = nn.PlateauScheduler(
        current_lr=config.lr, patience=config.patience, factor=config.factor,
        min_lr=config.lr / 100 if config.min_lr is None else config.min_lr,
        mode="min" if config.monitor == "train_loss" else "max")
    selector = make_selector(config.selector, kappa=config.kappa,
                             keep_fraction=config.keep_fraction,
                             spl_threshold=config.spl_threshold)

    history: list[EpochMetrics] = []
    for epoch in range(config.epochs):
        lr_used = adam.alpha
        log = train_epoch(view, params, adam, selector, config.batch_size,
                          _stream(config.seed, _SHUFFLE_STREAM, epoch))
        val_acc = evaluate(params, val_feats, datasets.val.noisy_labels)
        test_acc = evaluate(params, test_feats, datasets.test.labels)
        precision, recall, fraction = selection_metrics(log.selected, datasets.train.corrupted)
        history.append(EpochMetrics(
            epoch=epoch, train_loss=log.mean_selected_loss, test_acc=test_acc,
            label_precision=precision, label_recall=recall, sample_fraction=fraction,
            lr=lr_used, skipped_batches=log.skipped_batches))
        monitored = log.mean_selected_loss if config.monitor == "train_loss" else val_acc
        if np.isfinite(monitored):
            sched.step(monitored)
        adam.alpha = sched.current_lr
        if progress is not None:
            progress(epoch)
    return params, history
