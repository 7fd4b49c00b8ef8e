"""Small from-scratch UNet: config, init, forward, backward, prediction.

Layout for ``levels = L`` and ``base_channels = b``:

* encoder level ``l`` (0..L-1), ``c_l = b * 2**l`` channels:
  conv3x3+ReLU, conv3x3+ReLU (kept as the skip), 2x2 max-pool
* bottleneck, ``b * 2**L`` channels: conv3x3+ReLU twice
* decoder level ``l`` (L-1..0): nearest x2 upsample, conv3x3+ReLU down to
  ``c_l`` channels, concatenate [upsampled, skip], conv3x3+ReLU twice
* 1x1 convolution to ``num_classes`` logits
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import rng
from . import layers as L


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class UNetConfig:
    levels: int = 3
    base_channels: int = 8
    num_classes: int = 8
    input_size: int = 64

    def __post_init__(self):
        for name in ("levels", "base_channels", "num_classes", "input_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"UNetConfig.{name} must be >= 1, got {getattr(self, name)}")
        if self.input_size % (2 ** self.levels):
            raise ConfigError(
                f"input_size {self.input_size} is not divisible by 2**levels = {2 ** self.levels}")

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level


def weight_shapes(cfg: UNetConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes in declaration (= checkpoint) order."""
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name, cin, cout):
        shapes[name + ".w"] = (3, 3, cin, cout)
        shapes[name + ".b"] = (cout,)

    cin = 3
    for lvl in range(cfg.levels):
        c = cfg.channels(lvl)
        conv(f"enc{lvl}.conv1", cin, c)
        conv(f"enc{lvl}.conv2", c, c)
        cin = c
    cb = cfg.channels(cfg.levels)
    conv("bottleneck.conv1", cin, cb)
    conv("bottleneck.conv2", cb, cb)
    cin = cb
    for lvl in reversed(range(cfg.levels)):
        c = cfg.channels(lvl)
        conv(f"dec{lvl}.up", cin, c)
        conv(f"dec{lvl}.conv1", 2 * c, c)
        conv(f"dec{lvl}.conv2", c, c)
        cin = c
    shapes["head.w"] = (cin, cfg.num_classes)
    shapes["head.b"] = (cfg.num_classes,)
    return shapes


def init_weights(cfg: UNetConfig, stream: rng.RngStream, dtype=np.float32) -> dict[str, np.ndarray]:
    """He-uniform 3x3 kernels (bound sqrt(6 / fan_in)), zero biases, zero head.

    Kernels are filled in declaration order from consecutive stream draws.
    """
    weights = {}
    for name, shape in weight_shapes(cfg).items():
        if name.startswith("head.") or name.endswith(".b"):
            weights[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = shape[0] * shape[1] * shape[2]
        bound = math.sqrt(6.0 / fan_in)
        n = int(np.prod(shape))
        weights[name] = stream.uniform_array(n, -bound, bound).reshape(shape).astype(dtype)
    return weights


def _conv_relu(x, weights, name, caches):
    z, c1 = L.conv3x3_forward(x, weights[name + ".w"], weights[name + ".b"])
    a, c2 = L.relu_forward(z)
    caches[name] = (c1, c2)
    return a


def _conv_relu_back(d, grads, name, caches):
    c1, c2 = caches[name]
    dz = L.relu_backward(d, c2)
    dx, grads[name + ".w"], grads[name + ".b"] = L.conv3x3_backward(dz, c1)
    return dx


def forward(weights, x, cfg: UNetConfig, keep_cache: bool = False):
    """Logits for a batch ``x`` of shape (N, S, S, 3) with values in [0, 1]."""
    s = cfg.input_size
    if x.ndim != 4 or x.shape[1:] != (s, s, 3):
        raise ValueError(f"input batch {x.shape} does not match (N, {s}, {s}, 3)")
    caches: dict = {}
    skips = []
    h = x
    for lvl in range(cfg.levels):
        h = _conv_relu(h, weights, f"enc{lvl}.conv1", caches)
        h = _conv_relu(h, weights, f"enc{lvl}.conv2", caches)
        skips.append(h)
        h, caches[f"enc{lvl}.pool"] = L.maxpool2_forward(h)
    h = _conv_relu(h, weights, "bottleneck.conv1", caches)
    h = _conv_relu(h, weights, "bottleneck.conv2", caches)
    for lvl in reversed(range(cfg.levels)):
        h = L.upsample2_forward(h)
        h = _conv_relu(h, weights, f"dec{lvl}.up", caches)
        h = np.concatenate([h, skips[lvl]], axis=-1)
        h = _conv_relu(h, weights, f"dec{lvl}.conv1", caches)
        h = _conv_relu(h, weights, f"dec{lvl}.conv2", caches)
    logits, caches["head"] = L.conv1x1_forward(h, weights["head.w"], weights["head.b"])
    return (logits, caches) if keep_cache else logits


def backward(dlogits, caches, cfg: UNetConfig) -> dict[str, np.ndarray]:
    """Gradients of the loss for every parameter, given d(loss)/d(logits)."""
    grads: dict[str, np.ndarray] = {}
    d, grads["head.w"], grads["head.b"] = L.conv1x1_backward(dlogits, caches["head"])
    dskips = {}
    for lvl in range(cfg.levels):
        c = cfg.channels(lvl)
        d = _conv_relu_back(d, grads, f"dec{lvl}.conv2", caches)
        d = _conv_relu_back(d, grads, f"dec{lvl}.conv1", caches)
        d, dskips[lvl] = d[..., :c], d[..., c:]
        d = _conv_relu_back(d, grads, f"dec{lvl}.up", caches)
        d = L.upsample2_backward(d)
    d = _conv_relu_back(d, grads, "bottleneck.conv2", caches)
    d = _conv_relu_back(d, grads, "bottleneck.conv1", caches)
    for lvl in reversed(range(cfg.levels)):
        d = L.maxpool2_backward(d, caches[f"enc{lvl}.pool"]) + dskips[lvl]
        d = _conv_relu_back(d, grads, f"enc{lvl}.conv2", caches)
        d = _conv_relu_back(d, grads, f"enc{lvl}.conv1", caches)
    return grads


def loss_and_grads(weights, x, labels, cfg: UNetConfig, ignore_class=None):
    logits, caches = forward(weights, x, cfg, keep_cache=True)
    loss, dlogits = L.sparse_ce_loss(logits, labels, ignore_class)
    return loss, backward(dlogits, caches, cfg), logits


def normalize(images: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 (N, H, W, 3) or (H, W, 3) -> channel / 255."""
    x = np.asarray(images).astype(dtype) / dtype(255.0)
    return x[None] if x.ndim == 3 else x


def predict_mask(weights, img: np.ndarray, cfg: UNetConfig) -> np.ndarray:
    """Per-pixel argmax; ties go to the lowest class id."""
    if img.shape[:2] != (cfg.input_size, cfg.input_size):
        raise ValueError(f"image {img.shape[:2]} does not match input size {cfg.input_size}")
    dtype = next(iter(weights.values())).dtype
    logits = forward(weights, normalize(img, dtype.type), cfg)
    return logits[0].argmax(axis=-1).astype(np.uint8)
