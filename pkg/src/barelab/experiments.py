"""Experiment orchestration: run-manifest resolution, dataset preparation,
multi-trial training runs, parameter sweeps, and CSV/JSON output.

The manifest layer owns every default and every cross-field validation so
the HTTP service and the command-line client resolve configurations through
one code path.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import data, noise
from .errors import ConfigError
from .trainer import EpochMetrics, ExperimentData, TrainConfig, run_training

DATASETS = ("mnist", "blobs")
NOISE_KINDS = ("none", "symmetric", "class-conditional", "matrix")
SWEEP_AXES = ("kappa", "batch_size", "eta")

CSV_HEADER = "epoch,train_loss,test_acc,label_precision,label_recall,sample_fraction,lr,skipped_batches"

# split/corruption sub-streams per trial
_NOISE_TRAIN_STREAM = 11
_NOISE_VAL_STREAM = 12
_BLOB_TEST_OFFSET = 10_000

DEFAULTS: dict = {
    "dataset": "mnist",
    "mnist_dir": "data/mnist",
    "blob_classes": 10,
    "blob_per_class": 600,
    "blob_dim": 16,
    "blob_separation": 4.0,
    "blob_std": 1.0,
    "blob_test_per_class": 150,
    "noise": "none",
    "eta": None,
    "matrix_file": None,
    "flips": "7:1,2:7,3:8,5:6,6:5",
    "selector": "bare",
    "kappa": 1.0,
    "keep_fraction": None,
    "spl_lambda": None,
    "epochs": 200,
    "batch_size": 128,
    "lr": 2e-4,
    "hidden": "256",
    "trials": 5,
    "seed": 1,
    "train_fraction": 0.8,
    "val_count": 1000,
    "patience": 5,
    "factor": 0.5,
    "min_lr": None,
    "monitor": "train_loss",
    "dtype": "float32",
}


def parse_flips(text: str) -> tuple[tuple[int, int], ...]:
    """Parse a flip list like '7:1,2:7' into ((7, 1), (2, 7))."""
    if not text.strip():
        return ()
    pairs = []
    for part in text.split(","):
        try:
            src, dst = part.split(":")
            pairs.append((int(src), int(dst)))
        except ValueError as exc:
            raise ConfigError(f"bad flip entry {part!r}; expected 'src:dst'") from exc
    return tuple(pairs)


def parse_hidden(text: str) -> tuple[int, ...]:
    """Parse hidden-layer sizes like '256' or '512,128' ('' means no hidden layer)."""
    text = str(text).strip()
    if not text or text == "none":
        return ()
    try:
        sizes = tuple(int(p) for p in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad hidden spec {text!r}") from exc
    if any(s < 1 for s in sizes):
        raise ConfigError("hidden sizes must be positive")
    return sizes


@dataclass
class RunManifest:
    """Fully resolved configuration of one multi-trial experiment."""

    dataset: str
    mnist_dir: Optional[str]
    blob_classes: int
    blob_per_class: int
    blob_dim: int
    blob_separation: float
    blob_std: float
    blob_test_per_class: int
    noise: str
    eta: Optional[float]
    matrix_file: Optional[str]
    flips: str
    selector: str
    kappa: float
    keep_fraction: Optional[float]
    spl_lambda: Optional[float]
    epochs: int
    batch_size: int
    lr: float
    hidden: str
    trials: int
    seed: int
    train_fraction: float
    val_count: int
    patience: int
    factor: float
    min_lr: Optional[float]
    monitor: str
    dtype: str

    def trial_seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.trials)]

    def to_dict(self) -> dict:
        echo = dataclasses.asdict(self)
        echo["trial_seeds"] = self.trial_seeds()
        return echo

    def train_config(self, trial_seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            kappa=self.kappa, selector=self.selector,
            keep_fraction=self.keep_fraction, spl_threshold=self.spl_lambda,
            seed=trial_seed, hidden=parse_hidden(self.hidden),
            patience=self.patience, factor=self.factor, min_lr=self.min_lr,
            monitor=self.monitor, dtype=self.dtype, dataset=self.dataset)


def resolve_manifest(values: dict, provided: set[str] | None = None) -> RunManifest:
    """Merge user values over the defaults and validate every contract.

    `provided` names the keys the user set explicitly; conflict rules (for
    example keep_fraction alongside a non-small-loss selector) only fire for
    explicit settings, never for defaults.
    """
    provided = set(values) if provided is None else set(provided)
    unknown = set(values) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    merged = {**DEFAULTS, **{k: v for k, v in values.items() if v is not None}}

    if merged["dataset"] not in DATASETS:
        raise ConfigError(f"dataset must be one of {DATASETS}, got {merged['dataset']!r}")
    if merged["noise"] not in NOISE_KINDS:
        raise ConfigError(f"noise must be one of {NOISE_KINDS}, got {merged['noise']!r}")
    if merged["selector"] not in ("bare", "small-loss", "spl", "none"):
        raise ConfigError(f"unknown selector {merged['selector']!r}")

    kind = merged["noise"]
    eta = merged["eta"]
    if kind == "symmetric":
        if eta is None:
            raise ConfigError("symmetric noise needs --eta")
        if not 0.0 <= eta <= 1.0:
            raise ConfigError(f"eta must lie in [0, 1], got {eta}")
    elif kind == "class-conditional":
        if eta is None:
            raise ConfigError("class-conditional noise needs --eta")
        if not 0.0 <= eta < 0.5:
            raise ConfigError(f"eta must lie in [0, 0.5) for class-conditional noise, got {eta}")
    elif "eta" in provided and eta is not None:
        raise ConfigError(f"--eta has no effect with noise={kind}")
    if kind == "matrix":
        if not merged["matrix_file"]:
            raise ConfigError("matrix noise needs --matrix-file")
    elif "matrix_file" in provided and merged["matrix_file"]:
        raise ConfigError(f"--matrix-file has no effect with noise={kind}")

    selector = merged["selector"]
    if selector == "small-loss":
        if merged["keep_fraction"] is None:
            raise ConfigError("selector small-loss needs --keep-fraction")
        if not 0.0 < merged["keep_fraction"] <= 1.0:
            raise ConfigError(f"keep_fraction must lie in (0, 1], got {merged['keep_fraction']}")
    elif "keep_fraction" in provided and merged["keep_fraction"] is not None:
        raise ConfigError("--keep-fraction only applies to selector small-loss")
    if selector == "spl":
        if merged["spl_lambda"] is None:
            raise ConfigError("selector spl needs --lambda")
        if merged["spl_lambda"] <= 0:
            raise ConfigError(f"lambda must be positive, got {merged['spl_lambda']}")
    elif "spl_lambda" in provided and merged["spl_lambda"] is not None:
        raise ConfigError("--lambda only applies to selector spl")
    if selector != "bare" and "kappa" in provided:
        raise ConfigError("--kappa only applies to selector bare")

    if merged["epochs"] < 1:
        raise ConfigError("epochs must be >= 1")
    if merged["batch_size"] < 2:
        raise ConfigError("batch size must be >= 2")
    if merged["lr"] <= 0:
        raise ConfigError("learning rate must be positive")
    if merged["trials"] < 1:
        raise ConfigError("trials must be >= 1")
    if not 0.0 < merged["train_fraction"] < 1.0:
        raise ConfigError("train fraction must lie strictly in (0, 1)")
    if merged["monitor"] not in ("train_loss", "val_acc"):
        raise ConfigError(f"unknown scheduler monitor {merged['monitor']!r}")
    if merged["dtype"] not in ("float32", "float64"):
        raise ConfigError(f"dtype must be float32 or float64, got {merged['dtype']!r}")
    parse_hidden(merged["hidden"])
    parse_flips(merged["flips"])

    manifest = RunManifest(**{f.name: merged[f.name] for f in dataclasses.fields(RunManifest)})
    check_paths(manifest)
    return manifest


def check_paths(manifest: RunManifest) -> None:
    """Every referenced path must exist before any training starts."""
    if manifest.dataset == "mnist":
        directory = Path(manifest.mnist_dir or "")
        if not directory.is_dir():
            raise ConfigError(f"MNIST directory {directory} does not exist")
        for name in data.MNIST_FILES.values():
            if not (directory / name).exists() and not (directory / (name + ".gz")).exists():
                raise ConfigError(f"missing MNIST file {name}[.gz] in {directory}")
    if manifest.noise == "matrix" and not Path(manifest.matrix_file).is_file():
        raise ConfigError(f"matrix file {manifest.matrix_file} does not exist")


def build_transition(manifest: RunManifest) -> noise.TransitionMatrix | None:
    if manifest.noise == "none":
        return None
    if manifest.noise == "symmetric":
        return noise.symmetric_matrix(_num_classes(manifest), manifest.eta)
    if manifest.noise == "class-conditional":
        return noise.class_conditional_matrix(_num_classes(manifest),
                                              parse_flips(manifest.flips), manifest.eta)
    return noise.load_matrix_file(manifest.matrix_file)


def _num_classes(manifest: RunManifest) -> int:
    return 10 if manifest.dataset == "mnist" else manifest.blob_classes


def _derive_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence((seed, stream)).generate_state(1, np.uint64)[0])


def prepare_trial_data(manifest: RunManifest, trial_seed: int,
                       mnist_cache: tuple | None = None) -> ExperimentData:
    """Build the train/validation/test triple for one trial.

    Noise goes into the training and validation splits only; the test set
    keeps clean labels.
    """
    if manifest.dataset == "mnist":
        train_raw, test_raw = mnist_cache if mnist_cache else data.load_mnist(manifest.mnist_dir)
    else:
        train_raw = data.make_blobs(manifest.blob_classes, manifest.blob_per_class,
                                    manifest.blob_dim, manifest.blob_separation,
                                    manifest.blob_std, seed=trial_seed)
        test_raw = data.make_blobs(manifest.blob_classes, manifest.blob_test_per_class,
                                   manifest.blob_dim, manifest.blob_separation,
                                   manifest.blob_std, seed=trial_seed + _BLOB_TEST_OFFSET)
    spec = data.SplitSpec(manifest.train_fraction, manifest.val_count, seed=trial_seed)
    train_split, val_split = data.split(train_raw, spec)
    t = build_transition(manifest)
    k = train_raw.num_classes
    train = noise.make_noisy_dataset(train_split.features, train_split.labels, t,
                                     _derive_seed(trial_seed, _NOISE_TRAIN_STREAM), k)
    val = noise.make_noisy_dataset(val_split.features, val_split.labels, t,
                                   _derive_seed(trial_seed, _NOISE_VAL_STREAM), k)
    return ExperimentData(train=train, val=val, test=test_raw)


@dataclass
class TrialResult:
    seed: int
    history: list[EpochMetrics]


@dataclass
class RunResult:
    manifest: RunManifest
    trials: list[TrialResult] = field(default_factory=list)

    def summary(self) -> dict:
        finals = [t.history[-1] for t in self.trials]
        final_accs = [m.test_acc for m in finals]
        best_accs = [max(e.test_acc for e in t.history) for t in self.trials]
        return {
            "final_acc_mean": float(np.mean(final_accs)),
            "final_acc_std": float(np.std(final_accs)),
            "best_acc_mean": float(np.mean(best_accs)),
            "final_precision_mean": float(np.mean([m.label_precision for m in finals])),
            "final_recall_mean": float(np.mean([m.label_recall for m in finals])),
            "final_fraction_mean": float(np.mean([m.sample_fraction for m in finals])),
            "trials": len(self.trials),
            "epochs": self.manifest.epochs,
            "trial_seeds": [t.seed for t in self.trials],
            "final_accs": [float(a) for a in final_accs],
        }


def execute_run(manifest: RunManifest,
                progress: Callable[[int, int], None] | None = None) -> RunResult:
    """Run every trial of the manifest; trial i uses seed manifest.seed + i."""
    mnist_cache = data.load_mnist(manifest.mnist_dir) if manifest.dataset == "mnist" else None
    result = RunResult(manifest=manifest)
    for i, trial_seed in enumerate(manifest.trial_seeds()):
        datasets = prepare_trial_data(manifest, trial_seed, mnist_cache)
        cb = (lambda epoch, _i=i: progress(_i, epoch)) if progress else None
        _, history = run_training(manifest.train_config(trial_seed), datasets, progress=cb)
        result.trials.append(TrialResult(seed=trial_seed, history=history))
    return result


def _fmt(value: float) -> str:
    return repr(float(value))


def metrics_to_csv(history: list[EpochMetrics]) -> str:
    lines = [CSV_HEADER]
    for m in history:
        lines.append(",".join([
            str(m.epoch), _fmt(m.train_loss), _fmt(m.test_acc), _fmt(m.label_precision),
            _fmt(m.label_recall), _fmt(m.sample_fraction), _fmt(m.lr), str(m.skipped_batches),
        ]))
    return "\n".join(lines) + "\n"


def write_run_outputs(result: RunResult, out_dir) -> list[Path]:
    """trial_<i>.csv per trial plus summary.json and the manifest echo."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i, trial in enumerate(result.trials):
        path = out / f"trial_{i}.csv"
        path.write_text(metrics_to_csv(trial.history), encoding="ascii")
        written.append(path)
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(result.summary(), indent=2) + "\n", encoding="ascii")
    written.append(summary_path)
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(result.manifest.to_dict(), indent=2) + "\n",
                             encoding="ascii")
    written.append(manifest_path)
    return written


@dataclass
class SweepResult:
    axis: str
    values: list
    runs: list[RunResult]

    def table(self) -> list[dict]:
        rows = []
        for value, run in zip(self.values, self.runs):
            row = {"axis": self.axis, "value": value}
            row.update(run.summary())
            rows.append(row)
        return rows

    def table_csv(self) -> str:
        keys = ["value", "final_acc_mean", "final_acc_std", "best_acc_mean",
                "final_precision_mean", "final_recall_mean", "final_fraction_mean"]
        lines = [",".join([self.axis] + keys[1:])]
        for row in self.table():
            lines.append(",".join(
                [_fmt(row["value"]) if self.axis != "batch_size" else str(int(row["value"]))]
                + [_fmt(row[k]) for k in keys[1:]]))
        return "\n".join(lines) + "\n"


def sweep_manifests(manifest: RunManifest, axis: str, values) -> list[RunManifest]:
    """One re-validated manifest per axis value."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    out = []
    for v in values:
        base = dataclasses.asdict(manifest)
        if axis == "batch_size":
            if float(v) != int(v):
                raise ConfigError(f"batch size must be an integer, got {v}")
            base["batch_size"] = int(v)
        else:
            base[axis] = float(v)
        # only the swept key counts as user-provided; the rest are resolved values
        out.append(resolve_manifest(base, provided={axis}))
    return out


def execute_sweep(manifest: RunManifest, axis: str, values,
                  progress: Callable[[int, int, int], None] | None = None) -> SweepResult:
    manifests = sweep_manifests(manifest, axis, values)
    runs = []
    for j, cell in enumerate(manifests):
        cb = (lambda trial, epoch, _j=j: progress(_j, trial, epoch)) if progress else None
        runs.append(execute_run(cell, progress=cb))
    return SweepResult(axis=axis, values=list(values), runs=runs)


def cell_name(axis: str, value) -> str:
    return f"{axis}_{int(value) if axis == 'batch_size' else float(value)}"


def write_sweep_outputs(result: SweepResult, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for value, run in zip(result.values, result.runs):
        written += write_run_outputs(run, out / cell_name(result.axis, value))
    table_path = out / "sweep.csv"
    table_path.write_text(result.table_csv(), encoding="ascii")
    written.append(table_path)
    json_path = out / "sweep.json"
    json_path.write_text(json.dumps(result.table(), indent=2) + "\n", encoding="ascii")
    written.append(json_path)
    return written
