import numpy as np
import pytest

from barelab import data, noise
from barelab.trainer import ExperimentData


def build_blob_experiment(eta=0.0, noise_kind="symmetric", flips=(), seed=0, classes=4,
                          per_class=250, dim=8, separation=5.0, std=1.0,
                          train_fraction=0.8, val_count=100):
    """Small synthetic dataset with injected label noise, for trainer tests."""
    raw = data.make_blobs(classes, per_class, dim, separation, std, seed=seed)
    train_raw, val_raw = data.split(raw, data.SplitSpec(train_fraction, val_count, seed))
    if noise_kind == "symmetric":
        t = noise.symmetric_matrix(classes, eta) if eta > 0 else None
    elif noise_kind == "class_conditional":
        t = noise.class_conditional_matrix(classes, flips, eta)
    else:
        raise ValueError(noise_kind)
    train = noise.make_noisy_dataset(train_raw.features, train_raw.labels, t,
                                     seed=seed * 2 + 1, num_classes=classes)
    val = noise.make_noisy_dataset(val_raw.features, val_raw.labels, t,
                                   seed=seed * 2 + 2, num_classes=classes)
    test = data.make_blobs(classes, max(per_class // 4, 25), dim, separation, std,
                           seed=seed + 10_000)
    return ExperimentData(train=train, val=val, test=test)


@pytest.fixture
def blob_experiment():
    return build_blob_experiment
