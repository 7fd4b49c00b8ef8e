"""NHWC layer primitives with hand-written backward passes.

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache.  Dtype follows the inputs, so the
same code runs in float32 for training and float64 for gradient checks.
"""

from __future__ import annotations

import numpy as np


def _shift_offsets(width_padded: int):
    return [(dy, dx, (dy - 1) * width_padded + (dx - 1)) for dy in range(3) for dx in range(3)]


def conv3x3_forward(x, w, b):
    """Stride-1 3x3 convolution with zero 'same' padding.

    x: (N, H, W, C), w: (3, 3, C, O), b: (O,).  The padded input is flattened
    to rows of C values; each kernel tap is then a matmul on a contiguous row
    range shifted by the tap offset, so no im2col buffer is built.
    """
    n, h, wd, c = x.shape
    if w.shape[:3] != (3, 3, c):
        raise ValueError(f"conv3x3: kernel {w.shape} does not match input channels {c}")
    wp = wd + 2
    m = n * (h + 2) * wp
    margin = wp + 1
    xf = np.zeros((m + 2 * margin, c), dtype=x.dtype)
    xf[margin:margin + m].reshape(n, h + 2, wp, c)[:, 1:-1, 1:-1, :] = x
    out = np.zeros((m, w.shape[-1]), dtype=np.result_type(x, w))
    for dy, dx, off in _shift_offsets(wp):
        out += xf[margin + off:margin + off + m] @ w[dy, dx]
    out = out.reshape(n, h + 2, wp, -1)[:, 1:-1, 1:-1, :] + b
    return out, (xf, x.shape, w)


def conv3x3_backward(dout, cache):
    xf, xshape, w = cache
    n, h, wd, c = xshape
    o = w.shape[-1]
    wp = wd + 2
    m = n * (h + 2) * wp
    margin = wp + 1
    # gradient on the padded grid; border rows stay zero
    dfull = np.zeros((n, h + 2, wp, o), dtype=dout.dtype)
    dfull[:, 1:-1, 1:-1, :] = dout
    dfull = dfull.reshape(m, o)
    dw = np.empty_like(w)
    dxf = np.zeros_like(xf)
    for dy, dx, off in _shift_offsets(wp):
        sl = slice(margin + off, margin + off + m)
        dw[dy, dx] = xf[sl].T @ dfull
        dxf[sl] += dfull @ w[dy, dx].T
    db = dout.reshape(-1, o).sum(axis=0)
    dx_ = dxf[margin:margin + m].reshape(n, h + 2, wp, c)[:, 1:-1, 1:-1, :]
    return np.ascontiguousarray(dx_), dw, db


def conv1x1_forward(x, w, b):
    """x: (N, H, W, C), w: (C, O), b: (O,)."""
    n, h, wd, c = x.shape
    x2 = x.reshape(-1, c)
    out = x2 @ w + b
    return out.reshape(n, h, wd, -1), (x2, x.shape, w)


def conv1x1_backward(dout, cache):
    x2, xshape, w = cache
    d2 = dout.reshape(-1, w.shape[1])
    return (d2 @ w.T).reshape(xshape), x2.T @ d2, d2.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dout, cache):
    return dout * cache


def maxpool2_forward(x):
    """2x2/2 max-pool; ties go to the first element in row-major window order."""
    n, h, w, c = x.shape
    win = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, (arg, x.shape)


def maxpool2_backward(dout, cache):
    arg, xshape = cache
    n, h, w, c = xshape
    onehot = (arg[..., None] == np.arange(4)).astype(dout.dtype) * dout[..., None]
    dx = onehot.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return dx.reshape(xshape)


def upsample2_forward(x):
    """Nearest-neighbour x2 upsampling."""
    return x.repeat(2, axis=1).repeat(2, axis=2)


def upsample2_backward(dout):
    n, h, w, c = dout.shape
    return dout.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


def log_softmax(logits):
    """Max-subtracted log-softmax over the last axis (computed in float64)."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def sparse_ce_loss(logits, labels, ignore_class: int | None = None):
    """Mean over pixels of -log softmax(logits)[label].

    Returns ``(loss, dlogits)`` where ``dlogits`` has the dtype of ``logits``.
    ``ignore_class`` pixels are dropped from both the mean and the gradient.
    """
    k = logits.shape[-1]
    labels = np.asarray(labels)
    if labels.shape != logits.shape[:-1]:
        raise ValueError(f"labels {labels.shape} do not match logits {logits.shape}")
    if labels.size and int(labels.max()) >= k:
        raise ValueError(f"label {int(labels.max())} out of range for {k} classes")
    lsm = log_softmax(logits)
    lab = labels.astype(np.intp)[..., None]
    nll = -np.take_along_axis(lsm, lab, axis=-1)[..., 0]
    valid = np.ones(labels.shape, dtype=bool) if ignore_class is None else labels != ignore_class
    count = int(valid.sum())
    if count == 0:
        return 0.0, np.zeros_like(logits)
    loss = float(nll[valid].sum() / count)
    grad = np.exp(lsm)
    np.put_along_axis(grad, lab, np.take_along_axis(grad, lab, axis=-1) - 1.0, axis=-1)
    grad *= valid[..., None] / count
    return loss, grad.astype(logits.dtype)


def per_image_loss(logits, labels, ignore_class: int | None = None) -> np.ndarray:
    """Per-image mean cross-entropy, float64, shape (N,)."""
    lsm = log_softmax(logits)
    nll = -np.take_along_axis(lsm, labels.astype(np.intp)[..., None], axis=-1)[..., 0]
    if ignore_class is None:
        return nll.reshape(nll.shape[0], -1).mean(axis=1)
    valid = labels != ignore_class
    cnt = valid.reshape(valid.shape[0], -1).sum(axis=1)
    tot = np.where(valid, nll, 0.0).reshape(nll.shape[0], -1).sum(axis=1)
    return np.where(cnt > 0, tot / np.maximum(cnt, 1), 0.0)
