"""Adam training loop for the UNet, with per-epoch re-augmentation."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .. import rng
from ..augment import AugmentConfig, augment_image
from ..corpus import Manifest, resize_pair
from . import layers as L
from .unet import UNetConfig, backward, forward, init_weights, normalize

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "train_acc", "val_acc")


class NumericalError(RuntimeError):
    """Non-finite loss or weights during training."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    batch_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    train_samples: int = 1000
    val_samples: int = 200
    ignore_class: int | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.train_samples < 1 or self.val_samples < 0:
            raise ValueError("train_samples must be >= 1 and val_samples >= 0")


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


@dataclass
class TrainResult:
    weights: dict[str, np.ndarray]
    history: list[dict] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)


def load_arrays(manifest: Manifest, indices, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack (images, masks) for ``indices``, resized to ``size`` x ``size``."""
    imgs, masks = [], []
    for i in indices:
        img, mask = manifest.load_pair(i)
        img, mask = resize_pair(img, mask, size, size)
        imgs.append(img)
        masks.append(mask)
    if not imgs:
        return np.zeros((0, size, size, 3), np.uint8), np.zeros((0, size, size), np.uint8)
    return np.stack(imgs), np.stack(masks)


def split_indices(n: int, n_train: int, n_val: int, seed: int) -> tuple[list[int], list[int]]:
    """Disjoint seeded train/val selection out of ``range(n)``."""
    if n_train + n_val > n:
        raise ValueError(f"train ({n_train}) + val ({n_val}) samples exceed manifest size {n}")
    perm = rng.permutation(rng.derive_stream(seed, [("split", 0)]), n)
    return perm[:n_train], perm[n_train:n_train + n_val]


def _augmented(images, ids, seed, run, tag, epoch, aug_cfg):
    if aug_cfg is None:
        return images
    out = np.empty_like(images)
    for j, (img, idx) in enumerate(zip(images, ids)):
        s = rng.derive_stream(seed, [("run", run), (tag, epoch), ("image", int(idx))])
        out[j] = augment_image(img, s, aug_cfg)
    return out


def evaluate_arrays(weights, images, masks, cfg: UNetConfig, batch_size: int = 8,
                    ignore_class=None) -> tuple[float, float]:
    """Mean per-image loss and pixel accuracy over arrays."""
    if len(images) == 0:
        return float("nan"), float("nan")
    dtype = next(iter(weights.values())).dtype.type
    losses, correct = [], 0
    for start in range(0, len(images), batch_size):
        x = normalize(images[start:start + batch_size], dtype)
        y = masks[start:start + batch_size]
        logits = forward(weights, x, cfg)
        losses.extend(L.per_image_loss(logits, y, ignore_class).tolist())
        correct += int((logits.argmax(axis=-1) == y).sum())
    return math.fsum(losses) / len(losses), correct / masks.size


def train(manifest: Manifest, train_cfg: TrainConfig, unet_cfg: UNetConfig,
          augment_cfg: AugmentConfig | None, seed: int, *, train_indices=None,
          val_indices=None, run: int = 0) -> TrainResult:
    """Train from scratch.

    Without explicit indices, a disjoint seeded split of ``train_samples`` /
    ``val_samples`` records is drawn.  Every image is re-augmented each
    epoch from its own stream; validation uses the same augment policy.
    ``run`` separates the random streams of independent trainings that
    share a seed (e.g. folds).
    """
    if len(manifest) == 0:
        raise ValueError("cannot train on an empty manifest")
    if manifest.num_classes != unet_cfg.num_classes:
        raise ValueError(f"manifest has {manifest.num_classes} classes, model {unet_cfg.num_classes}")
    if train_indices is None:
        train_indices, val_indices = split_indices(
            len(manifest), train_cfg.train_samples, train_cfg.val_samples, seed)
    val_indices = list(val_indices or [])
    train_indices = list(train_indices)
    s = unet_cfg.input_size
    x_train, y_train = load_arrays(manifest, train_indices, s)
    x_val, y_val = load_arrays(manifest, val_indices, s)

    weights = init_weights(unet_cfg, rng.derive_stream(seed, [("run", run), ("init", 0)]))
    opt = Adam(weights, train_cfg.learning_rate, train_cfg.beta1, train_cfg.beta2, train_cfg.eps)
    result = TrainResult(weights)
    bs = train_cfg.batch_size
    ids = np.asarray(train_indices)
    step = 0
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(rng.derive_stream(seed, [("run", run), ("shuffle", epoch)]), len(ids))
        loss_sum, correct, n_img = 0.0, 0, 0
        for start in range(0, len(order), bs):
            sel = order[start:start + bs]
            imgs = _augmented(x_train[sel], ids[sel], seed, run, "augment", epoch, augment_cfg)
            labels = y_train[sel]
            logits, caches = forward(weights, normalize(imgs), unet_cfg, keep_cache=True)
            loss, dlogits = L.sparse_ce_loss(logits, labels, train_cfg.ignore_class)
            step += 1
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite loss {loss} at epoch {epoch}, step {step}")
            grads = backward(dlogits, caches, unet_cfg)
            opt.step(weights, grads)
            if not all(np.isfinite(w).all() for w in weights.values()):
                raise NumericalError(f"non-finite weights after epoch {epoch}, step {step}")
            result.step_losses.append(loss)
            loss_sum += loss * len(sel)
            correct += int((logits.argmax(axis=-1) == labels).sum())
            n_img += len(sel)
        val_loss = val_acc = None
        if len(x_val):
            xv = _augmented(x_val, val_indices, seed, run, "val_augment", epoch, augment_cfg)
            val_loss, val_acc = evaluate_arrays(weights, xv, y_val, unet_cfg, bs, train_cfg.ignore_class)
        row = {
            "epoch": epoch,
            "train_loss": loss_sum / n_img,
            "val_loss": val_loss,
            "train_acc": correct / (n_img * s * s),
            "val_acc": val_acc,
        }
        result.history.append(row)
        log.info("epoch %d: train_loss %.4f val_loss %s", epoch, row["train_loss"], val_loss)
    return result


def history_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for row in history:
        w.writerow(["" if row[c] is None else repr(row[c]) for c in HISTORY_COLUMNS])
    return buf.getvalue()


def write_history(history: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(history_csv(history))


# Small net that memorises a handful of images quickly; used as a convergence check.
OVERFIT_CONFIG = UNetConfig(levels=1, base_channels=16, num_classes=8, input_size=32)
OVERFIT_LR = 3e-3


def overfit(images: np.ndarray, masks: np.ndarray, unet_cfg: UNetConfig = OVERFIT_CONFIG,
            steps: int = 300, learning_rate: float = OVERFIT_LR, seed: int = 42) -> tuple[TrainResult, float]:
    """Full-batch Adam on a fixed set; returns the result and final pixel accuracy."""
    weights = init_weights(unet_cfg, rng.derive_stream(seed, [("overfit", 0)]))
    opt = Adam(weights, learning_rate)
    result = TrainResult(weights)
    x = normalize(images)
    for _ in range(steps):
        logits, caches = forward(weights, x, unet_cfg, keep_cache=True)
        loss, dlogits = L.sparse_ce_loss(logits, masks)
        if not math.isfinite(loss):
            raise NumericalError(f"non-finite loss {loss} after {len(result.step_losses)} steps")
        opt.step(weights, backward(dlogits, caches, unet_cfg))
        result.step_losses.append(loss)
    _, acc = evaluate_arrays(weights, images, masks, unet_cfg)
    return result, acc
