"""Model evaluation and the three-regime cross-validated experiment."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..augment import AugmentConfig
from ..corpus import TEST_SETS, DataError, Manifest, make_folds, read_manifest
from ..segnet.train import TrainConfig, evaluate_arrays, load_arrays, train
from ..segnet.unet import UNetConfig

log = logging.getLogger(__name__)

REGIMES = ("clear", "augmented", "weather")
# regime -> (training dataset, augment?)
REGIME_SOURCES = {"clear": ("D1", False), "augmented": ("D1", True), "weather": ("D2", False)}


@dataclass(frozen=True)
class EvalResult:
    dataset_name: str
    mean_loss: float
    pixel_accuracy: float
    n_images: int


def evaluate(weights, manifest: Manifest, unet_cfg: UNetConfig, ignore_class=None) -> EvalResult:
    """Mean per-image cross-entropy and pixel accuracy over a manifest.

    Images are scored one at a time and losses summed with ``math.fsum``,
    so the result does not depend on record order.
    """
    if len(manifest) == 0:
        raise DataError(f"manifest {manifest.name!r} is empty")
    if manifest.num_classes > unet_cfg.num_classes:
        raise DataError(f"manifest {manifest.name!r} has {manifest.num_classes} classes, "
                        f"model predicts {unet_cfg.num_classes}")
    x, y = load_arrays(manifest, range(len(manifest)), unet_cfg.input_size)
    loss, acc = evaluate_arrays(weights, x, y, unet_cfg, batch_size=1, ignore_class=ignore_class)
    return EvalResult(manifest.name, loss, acc, len(manifest))


@dataclass
class FoldResults:
    regime: str
    test_sets: tuple[str, ...]
    losses: np.ndarray  # (k, len(test_sets))
    accuracies: np.ndarray
    histories: list[list[dict]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.losses.shape != (self.losses.shape[0], len(self.test_sets)):
            raise ValueError(f"loss matrix {self.losses.shape} does not match {len(self.test_sets)} test sets")
        if not np.isfinite(self.losses).all():
            raise ValueError(f"{self.regime}: non-finite entries in loss matrix")

    @property
    def k(self) -> int:
        return self.losses.shape[0]


def load_datasets(datasets_dir, names) -> dict[str, Manifest]:
    out = {}
    for name in names:
        path = Path(datasets_dir) / name / "manifest.jsonl"
        if not path.exists():
            raise DataError(f"missing dataset {name}: {path} not found (run `gen` first)")
        out[name] = read_manifest(path, check_files=True)
    return out


def _fold_task(args):
    (regime, fold, datasets_dir, k, seed, train_cfg, unet_cfg, aug_cfg) = args
    src, augmented = REGIME_SOURCES[regime]
    data = load_datasets(datasets_dir, (src,) + TEST_SETS)
    manifest = data[src]
    spec = make_folds(len(manifest), k)[fold]
    result = train(manifest, train_cfg, unet_cfg, aug_cfg if augmented else None, seed,
                   train_indices=spec.train_indices, val_indices=spec.test_indices, run=fold)
    evals = [evaluate(result.weights, data[t], unet_cfg, train_cfg.ignore_class) for t in TEST_SETS]
    log.info("%s fold %d: %s", regime, fold, " ".join(f"{e.dataset_name}={e.mean_loss:.4f}" for e in evals))
    return evals, result.history


def run_cv_experiment(datasets_dir, k: int, seed: int, train_cfg: TrainConfig, unet_cfg: UNetConfig,
                      aug_cfg: AugmentConfig = AugmentConfig(), jobs: int = 1,
                      regimes=REGIMES) -> dict[str, FoldResults]:
    """Train ``k`` fold models per regime and evaluate each on every test set.

    Fold ``i`` of each regime shares the init/shuffle streams (``run=i``),
    so regimes differ only in their data.  Results do not depend on ``jobs``.
    """
    data = load_datasets(datasets_dir, ("D1", "D2") + TEST_SETS)
    for src in ("D1", "D2"):
        make_folds(len(data[src]), k)  # validates k against the manifest size
        if data[src].num_classes != unet_cfg.num_classes:
            raise DataError(f"{src} has {data[src].num_classes} classes, model {unet_cfg.num_classes}")
    tasks = [(r, f, str(datasets_dir), k, seed, train_cfg, unet_cfg, aug_cfg) for r in regimes for f in range(k)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_fold_task, tasks))
    else:
        outputs = [_fold_task(t) for t in tasks]
    results = {}
    for r in regimes:
        rows = [outputs[i] for i, t in enumerate(tasks) if t[0] == r]
        losses = np.array([[e.mean_loss for e in evals] for evals, _ in rows])
        accs = np.array([[e.pixel_accuracy for e in evals] for evals, _ in rows])
        results[r] = FoldResults(r, TEST_SETS, losses, accs, [h for _, h in rows])
    return results


def eval_rows(results: dict[str, FoldResults]) -> list[tuple[str, str, float, float]]:
    """(model, dataset, loss, accuracy) rows, models named ``<regime>_fold<i>``."""
    rows = []
    for regime, fr in results.items():
        for i in range(fr.k):
            for j, name in enumerate(fr.test_sets):
                rows.append((f"{regime}_fold{i}", name, float(fr.losses[i, j]), float(fr.accuracies[i, j])))
    return rows


def mean_of(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)
