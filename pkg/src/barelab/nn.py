"""Minimal dense softmax classifier: forward pass, exact backprop with
per-sample weights, Adam, and a reduce-on-plateau learning-rate scheduler.

All arrays are plain numpy, batches row-major (one sample per row). The
network family is fixed -- dense layers with ReLU between them and a softmax
head -- which keeps the hand-derived backward pass exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySelectionError, InputError, ParameterError, ShapeError

# Floor applied to the picked-out class probability inside cce_loss so the
# log stays finite. Far below every test tolerance.
PROB_FLOOR = 1e-12


@dataclass
class MlpParams:
    """Per-layer parameters; weights[l] is (fan_in, fan_out), biases[l] is (fan_out,).

    Also used as the container for gradients, which share the same shapes.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_params(layer_sizes, rng: np.random.Generator, dtype=np.float64) -> MlpParams:
    """Scaled-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ParameterError(f"need at least input and output sizes >= 1, got {sizes}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MlpParams(weights, biases)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _check_batch(x: np.ndarray, params: MlpParams) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D batch, got shape {x.shape}")
    fan_in = params.weights[0].shape[0]
    if x.shape[1] != fan_in:
        raise ShapeError(f"batch has {x.shape[1]} features, network expects {fan_in}")
    if not np.all(np.isfinite(x)):
        raise InputError("batch contains NaN or Inf entries")
    return x


def _forward_cached(x: np.ndarray, params: MlpParams):
    """Forward pass keeping hidden pre-activations and activations for backprop."""
    acts = [x]  # acts[l] is the input to layer l
    pre = []  # pre[l] is the pre-activation of hidden layer l
    a = x
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        if l < last:
            pre.append(z)
            a = np.maximum(z, 0.0)
            acts.append(a)
        else:
            probs = softmax(z)
    return acts, pre, probs


def forward(x: np.ndarray, params: MlpParams) -> np.ndarray:
    """Class-posterior probabilities, one simplex row per sample."""
    x = _check_batch(x, params)
    _, _, probs = _forward_cached(x, params)
    return probs


def cce_loss(probs: np.ndarray, labels) -> np.ndarray:
    """Per-sample cross-entropy -ln p[label], with the probability floored."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != probs.shape[0]:
        raise ShapeError(f"labels shape {labels.shape} does not match batch of {probs.shape[0]}")
    if labels.size == 0:
        raise ShapeError("empty batch")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise IndexError(f"labels must lie in [0, {probs.shape[1]})")
    picked = probs[np.arange(labels.shape[0]), labels]
    return -np.log(np.maximum(picked, PROB_FLOOR))


def backward(x: np.ndarray, labels, weights, params: MlpParams) -> MlpParams:
    """Exact gradient of (sum_i w_i * loss_i) / (sum_i w_i) for every parameter.

    weights are per-sample selection weights in [0, 1]; at least one must be
    positive. ReLU derivative at exactly 0 is taken as 0.
    """
    x = _check_batch(x, params)
    labels = np.asarray(labels)
    w = np.asarray(weights, dtype=x.dtype)
    if w.shape != (x.shape[0],):
        raise ShapeError(f"weights shape {w.shape} does not match batch of {x.shape[0]}")
    total = float(w.sum())
    if total <= 0.0:
        raise EmptySelectionError("no sample carries positive weight")

    acts, pre, probs = _forward_cached(x, params)
    m = x.shape[0]
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise IndexError(f"labels must lie in [0, {probs.shape[1]})")

    # d(mean weighted loss)/d(logits): the usual softmax-CCE shortcut scaled
    # by each sample's normalized weight.
    dz = probs.copy()
    dz[np.arange(m), labels] -= 1.0
    dz *= (w / total)[:, None]

    grad_w: list[np.ndarray] = []
    grad_b: list[np.ndarray] = []
    for l in range(len(params.weights) - 1, -1, -1):
        grad_w.insert(0, acts[l].T @ dz)
        grad_b.insert(0, dz.sum(axis=0))
        if l > 0:
            da = dz @ params.weights[l].T
            dz = da * (pre[l - 1] > 0)
    return MlpParams(grad_w, grad_b)


@dataclass
class AdamState:
    """First/second-moment accumulators plus hyperparameters; step counts from 0."""

    m: MlpParams
    v: MlpParams
    step: int = 0
    alpha: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: MlpParams, alpha: float = 2e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    zeros = MlpParams([np.zeros_like(w) for w in params.weights],
                      [np.zeros_like(b) for b in params.biases])
    return AdamState(m=zeros, v=zeros.copy(), alpha=alpha, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState):
    """One bias-corrected Adam update. Mutates params and state in place."""
    for got, want in zip(grads.weights + grads.biases, params.weights + params.biases):
        if got.shape != want.shape:
            raise ShapeError(f"gradient shape {got.shape} does not match parameter {want.shape}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for group, mgrp, vgrp, ggrp in (
        (params.weights, state.m.weights, state.v.weights, grads.weights),
        (params.biases, state.m.biases, state.v.biases, grads.biases),
    ):
        for p, m, v, g in zip(group, mgrp, vgrp, ggrp):
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            m_hat = m / (1.0 - b1 ** t)
            v_hat = v / (1.0 - b2 ** t)
            p -= state.alpha * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


@dataclass
class PlateauScheduler:
    """Halve-style LR decay when the monitored metric stops improving.

    mode "max" treats larger metrics as better, "min" smaller. After
    `patience` consecutive non-improving epochs the rate is multiplied by
    `factor` (floored at `min_lr`) and the bad-epoch count resets.
    """

    current_lr: float
    patience: int = 5
    factor: float = 0.5
    min_lr: float = 0.0
    mode: str = "max"
    best: float = math.nan
    bad_epochs: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in ("max", "min"):
            raise ParameterError(f"mode must be 'max' or 'min', got {self.mode!r}")
        if math.isnan(self.best):
            self.best = -math.inf if self.mode == "max" else math.inf

    def step(self, metric: float) -> float:
        metric = float(metric)
        if not math.isfinite(metric):
            raise InputError("scheduler metric must be finite")
        self.history.append(metric)
        improved = metric > self.best if self.mode == "max" else metric < self.best
        if improved:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs > self.patience:
                self.current_lr = max(self.current_lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.current_lr
