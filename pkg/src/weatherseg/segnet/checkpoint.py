"""Binary weight checkpoints.

Little-endian layout::

    b"WLAB1"
    u32 levels, u32 base_channels, u32 num_classes, u32 input_size
    u8  dtype code (4 = float32, 8 = float64)
    u32 tensor count
    per tensor, in declaration order:
        u32 ndim, ndim x u32 dims, raw data (row-major)

Tensor names are implied by the config (see ``weight_shapes``).
"""

from __future__ import annotations

import struct

import numpy as np

from .unet import UNetConfig, weight_shapes

MAGIC = b"WLAB1"
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


def save_weights(weights: dict[str, np.ndarray], cfg: UNetConfig, path) -> None:
    shapes = weight_shapes(cfg)
    if list(weights) != list(shapes):
        raise CheckpointError("weights do not match the config's tensor layout")
    itemsize = next(iter(weights.values())).dtype.itemsize
    dt = _DTYPES[itemsize]
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<4I", cfg.levels, cfg.base_channels, cfg.num_classes, cfg.input_size))
        f.write(struct.pack("<BI", itemsize, len(shapes)))
        for name, shape in shapes.items():
            arr = weights[name]
            if arr.shape != shape:
                raise CheckpointError(f"{name}: shape {arr.shape} != expected {shape}")
            f.write(struct.pack(f"<I{len(shape)}I", len(shape), *shape))
            f.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def load_weights(path) -> tuple[dict[str, np.ndarray], UNetConfig]:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic, not a weights checkpoint")
    try:
        off = len(MAGIC)
        levels, base, classes, size = struct.unpack_from("<4I", data, off)
        off += 16
        itemsize, count = struct.unpack_from("<BI", data, off)
        off += 5
        cfg = UNetConfig(levels, base, classes, size)
        dt = _DTYPES[itemsize]
        shapes = weight_shapes(cfg)
        if count != len(shapes):
            raise CheckpointError(f"{path}: {count} tensors, config implies {len(shapes)}")
        weights = {}
        for name, shape in shapes.items():
            (ndim,) = struct.unpack_from("<I", data, off)
            off += 4
            dims = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            if tuple(dims) != shape:
                raise CheckpointError(f"{path}: {name} has dims {dims}, expected {shape}")
            n = int(np.prod(shape))
            weights[name] = np.frombuffer(data, dtype=dt, count=n, offset=off).reshape(shape).astype(dt.newbyteorder("="))
            off += n * itemsize
    except (struct.error, KeyError, ValueError) as e:
        if isinstance(e, CheckpointError):
            raise
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({e})") from e
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    return weights, cfg
