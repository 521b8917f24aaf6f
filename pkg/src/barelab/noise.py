"""Label-corruption models: row-stochastic transition matrices and the
sampling that applies them to clean labels while keeping ground truth around
for selection-quality metrics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ParameterError

ROW_SUM_TOL = 1e-9
FILE_ROW_SUM_TOL = 1e-6


@dataclass
class TransitionMatrix:
    """K x K matrix of flip probabilities; entry (k, k') is P[noisy=k' | clean=k]."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
            raise ParameterError(f"transition matrix must be square with K >= 2, got {m.shape}")
        if np.any(m < 0) or np.any(m > 1):
            raise ParameterError("transition probabilities must lie in [0, 1]")
        sums = m.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
            raise ParameterError(f"rows must sum to 1 within {ROW_SUM_TOL}, got sums {sums}")
        self.matrix = m

    @property
    def num_classes(self) -> int:
        return self.matrix.shape[0]

    @property
    def diagonally_dominant(self) -> bool:
        return is_diagonally_dominant(self)


def is_diagonally_dominant(t: TransitionMatrix) -> bool:
    """True iff every diagonal entry strictly exceeds all others in its row."""
    m = t.matrix
    off = m.copy()
    np.fill_diagonal(off, -np.inf)
    return bool(np.all(np.diag(m) > off.max(axis=1)))


def symmetric_matrix(num_classes: int, eta: float) -> TransitionMatrix:
    """Flip to any other class with total probability eta, split evenly."""
    if not 0.0 <= eta <= 1.0:
        raise ParameterError(f"eta must lie in [0, 1], got {eta}")
    if num_classes < 2:
        raise ParameterError("need at least 2 classes")
    k = num_classes
    m = np.full((k, k), eta / (k - 1))
    np.fill_diagonal(m, 1.0 - eta)
    return TransitionMatrix(m)


def class_conditional_matrix(num_classes: int, flips, eta: float) -> TransitionMatrix:
    """Flip each listed source class to its target with probability eta.

    Classes not named as a source keep their labels. eta >= 0.5 is rejected:
    it would break the diagonal dominance the selection method relies on.
    """
    if not 0.0 <= eta < 0.5:
        raise ParameterError(f"eta must lie in [0, 0.5) for class-conditional noise, got {eta}")
    m = np.eye(num_classes)
    seen = set()
    for src, dst in flips:
        if src == dst:
            raise ParameterError(f"flip {src}->{dst} has identical source and target")
        if not (0 <= src < num_classes and 0 <= dst < num_classes):
            raise ParameterError(f"flip {src}->{dst} is outside [0, {num_classes})")
        if src in seen:
            raise ParameterError(f"class {src} appears as a flip source twice")
        seen.add(src)
        m[src, src] = 1.0 - eta
        m[src, dst] = eta
    return TransitionMatrix(m)


# MNIST class-conditional flip pattern used throughout the experiments:
# 7->1, 2->7, 3->8 and the 5<->6 pair.
MNIST_FLIPS = ((7, 1), (2, 7), (3, 8), (5, 6), (6, 5))


def corrupt_labels(clean, t: TransitionMatrix, seed: int):
    """Resample each label from its transition row; returns (noisy, corrupted).

    Each index consumes one uniform draw from a counter-based (Philox) stream,
    so the outcome for a fixed seed is independent of processing order.
    """
    clean = np.asarray(clean)
    k = t.num_classes
    if clean.size and (clean.min() < 0 or clean.max() >= k):
        raise ParameterError(f"labels must lie in [0, {k})")
    u = np.random.Generator(np.random.Philox(key=seed)).random(clean.shape[0])
    cdf = np.cumsum(t.matrix, axis=1)
    noisy = np.empty_like(clean)
    for cls in np.unique(clean):
        mask = clean == cls
        noisy[mask] = np.searchsorted(cdf[cls], u[mask], side="right")
    np.minimum(noisy, k - 1, out=noisy)  # guard against cumsum rounding below 1.0
    return noisy, noisy != clean


def parse_matrix_text(text: str) -> TransitionMatrix:
    """Parse the plain-text format: first line K, then K rows of K reals."""
    lines = [ln for ln in (s.strip() for s in text.splitlines()) if ln]
    if not lines:
        raise FormatError("empty matrix file")
    try:
        k = int(lines[0])
    except ValueError as exc:
        raise FormatError(f"first line must be the class count, got {lines[0]!r}") from exc
    if len(lines) != k + 1:
        raise FormatError(f"expected {k} matrix rows, found {len(lines) - 1}")
    rows = []
    for i, ln in enumerate(lines[1:]):
        parts = ln.split()
        if len(parts) != k:
            raise FormatError(f"row {i} has {len(parts)} entries, expected {k}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise FormatError(f"row {i} contains a non-numeric entry") from exc
    m = np.array(rows)
    sums = m.sum(axis=1)
    bad = np.nonzero(np.abs(sums - 1.0) > FILE_ROW_SUM_TOL)[0]
    if bad.size:
        raise FormatError(f"row {bad[0]} sums to {sums[bad[0]]!r}, off-stochastic beyond {FILE_ROW_SUM_TOL}")
    # renormalize the residual rounding so the strict constructor accepts it
    m /= sums[:, None]
    return TransitionMatrix(m)


def load_matrix_file(path) -> TransitionMatrix:
    with open(path, "r", encoding="ascii") as fh:
        return parse_matrix_text(fh.read())


def format_matrix_text(t: TransitionMatrix) -> str:
    lines = [str(t.num_classes)]
    lines += [" ".join(repr(float(v)) for v in row) for row in t.matrix]
    return "\n".join(lines) + "\n"


@dataclass
class TrainView:
    """What the training loop is allowed to see: features and noisy labels only."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass
class NoisyDataset:
    """Corrupted dataset plus the hidden ground truth used only for metrics."""

    features: np.ndarray
    noisy_labels: np.ndarray
    clean_labels: np.ndarray
    corrupted: np.ndarray
    num_classes: int

    def __post_init__(self):
        n = self.features.shape[0]
        if not (self.noisy_labels.shape == self.clean_labels.shape == self.corrupted.shape == (n,)):
            raise ParameterError("label and flag arrays must all have one entry per sample")
        if not np.array_equal(self.corrupted, self.noisy_labels != self.clean_labels):
            raise ParameterError("corrupted flags disagree with the label arrays")

    def __len__(self) -> int:
        return self.features.shape[0]

    def train_view(self) -> TrainView:
        return TrainView(self.features, self.noisy_labels, self.num_classes)


def make_noisy_dataset(features, clean_labels, t: TransitionMatrix | None, seed: int,
                       num_classes: int) -> NoisyDataset:
    """Apply a corruption model (or none) and package the result."""
    clean_labels = np.asarray(clean_labels)
    if t is None:
        noisy = clean_labels.copy()
        flags = np.zeros(clean_labels.shape[0], dtype=bool)
    else:
        noisy, flags = corrupt_labels(clean_labels, t, seed)
    return NoisyDataset(np.asarray(features), noisy, clean_labels, flags, num_classes)
