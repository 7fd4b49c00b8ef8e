"""Finite-difference verification of the UNet backward pass."""

from __future__ import annotations

import numpy as np

from .. import rng
from . import layers as L
from .unet import UNetConfig, forward, init_weights, loss_and_grads

TINY_CONFIG = UNetConfig(levels=2, base_channels=2, num_classes=3, input_size=8)


def relative_error(ga: float, gn: float) -> float:
    return abs(ga - gn) / max(abs(ga), abs(gn), 1e-8)


def grad_check(cfg: UNetConfig = TINY_CONFIG, seed: int = 42, n_params: int = 240,
               batch: int = 2, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs in float64.  The zero-initialised head is replaced by random values
    and biases are randomised, otherwise most gradients would vanish.
    Parameters are sampled evenly across all tensors, then at random inside
    each tensor.
    """
    if not isinstance(cfg, UNetConfig):
        cfg = UNetConfig(**cfg)
    s = rng.derive_stream(seed, [("gradcheck", 0)])
    w = init_weights(cfg, s, dtype=np.float64)
    for name in w:
        if name.startswith("head.") or name.endswith(".b"):
            w[name] = s.uniform_array(w[name].size, -0.5, 0.5).reshape(w[name].shape)
    x = s.uniform_array(batch * cfg.input_size ** 2 * 3).reshape(batch, cfg.input_size, cfg.input_size, 3)
    labels = (s.u32_array(batch * cfg.input_size ** 2) % cfg.num_classes).reshape(
        batch, cfg.input_size, cfg.input_size)

    def loss_at() -> float:
        return L.sparse_ce_loss(forward(w, x, cfg), labels)[0]

    _, grads, _ = loss_and_grads(w, x, labels, cfg)
    names = list(w)
    per_tensor = max(1, -(-n_params // len(names)))
    worst = 0.0
    for name in names:
        flat = w[name].reshape(-1)
        for _ in range(per_tensor):
            i = rng.randint(s, 0, flat.size)
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_at()
            flat[i] = orig - h
            lm = loss_at()
            flat[i] = orig
            gn = (lp - lm) / (2 * h)
            worst = max(worst, relative_error(float(grads[name].reshape(-1)[i]), gn))
    return worst
