"""Seeded photometric weather augmentations and their gated pipeline.

All transforms take and return ``uint8`` arrays of shape ``(H, W, 3)`` and
round half-up back to 8 bits after every floating-point stage.  None of
them moves pixels, so a paired mask stays valid untouched.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np

from . import rng

REFERENCE_SIZE = 224
TRANSFORM_ORDER = ("rain", "sun_flare", "fog", "rgb_shift", "gamma")


@dataclass(frozen=True)
class AugmentConfig:
    gate_probability: float = 0.5
    gamma_range: tuple[float, float] = (0.8, 1.2)
    rgb_shift_limit: int = 20
    fog_coef_range: tuple[float, float] = (0.3, 1.0)
    fog_alpha: float = 0.5
    fog_color: tuple[int, int, int] = (220, 220, 220)
    rain_slant_range: tuple[float, float] = (-10.0, 10.0)
    rain_drop_length: float = 20.0
    rain_drop_color: tuple[int, int, int] = (200, 200, 200)
    rain_density_range: tuple[float, float] = (50.0, 150.0)
    rain_brightness: float = 0.7
    rain_blur_kernel: int = 3
    flare_radius_frac: float = 0.3
    flare_intensity: float = 0.6

    def __post_init__(self):
        if not 0.0 <= self.gate_probability <= 1.0:
            raise ValueError(f"gate_probability {self.gate_probability} outside [0, 1]")
        for name in ("gamma_range", "fog_coef_range", "rain_slant_range", "rain_density_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is not ordered: {lo} > {hi}")
        if self.gamma_range[0] <= 0:
            raise ValueError("gamma_range must be positive")
        if not (0.0 <= self.fog_coef_range[0] and self.fog_coef_range[1] <= 1.0):
            raise ValueError("fog_coef_range must lie in [0, 1]")
        if self.rain_density_range[0] < 0:
            raise ValueError("rain_density_range must be non-negative")
        if not 0 <= self.rgb_shift_limit <= 255:
            raise ValueError("rgb_shift_limit must be in [0, 255]")
        for name in ("fog_color", "rain_drop_color"):
            c = getattr(self, name)
            if len(c) != 3 or any(not 0 <= v <= 255 for v in c):
                raise ValueError(f"{name} must be three values in [0, 255]")
        if self.rain_blur_kernel < 1:
            raise ValueError("rain_blur_kernel must be >= 1")
        for name in ("fog_alpha", "rain_brightness", "flare_intensity"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.flare_radius_frac < 0 or self.rain_drop_length < 0:
            raise ValueError("flare_radius_frac and rain_drop_length must be non-negative")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def _to_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(_round_half_up(x), 0, 255).astype(np.uint8)


def _check_image(img: np.ndarray) -> None:
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected uint8 (H, W, 3) image, got {img.dtype} {img.shape}")


def apply_gamma(img: np.ndarray, gamma: float) -> np.ndarray:
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    _check_image(img)
    lut = _to_u8(255.0 * (np.arange(256) / 255.0) ** gamma)
    return lut[img]


def apply_rgb_shift(img: np.ndarray, dr: int, dg: int, db: int) -> np.ndarray:
    _check_image(img)
    shift = np.array([dr, dg, db], dtype=np.int16)
    if np.any(np.abs(shift) > 255):
        raise ValueError(f"rgb shift {tuple(shift)} outside [-255, 255]")
    return np.clip(img.astype(np.int16) + shift, 0, 255).astype(np.uint8)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with radius ceil(2*sigma) and edge clamping."""
    if sigma <= 0:
        return img.astype(np.float64)
    radius = int(math.ceil(2.0 * sigma))
    offs = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (offs / sigma) ** 2)
    k /= k.sum()
    return _separable(img.astype(np.float64), k)


def box_blur(img: np.ndarray, size: int) -> np.ndarray:
    if size <= 1:
        return img.astype(np.float64)
    return _separable(img.astype(np.float64), np.full(size, 1.0 / size))


def _separable(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    r_lo = (len(k) - 1) // 2
    r_hi = len(k) - 1 - r_lo
    h, w = x.shape[:2]
    p = np.pad(x, ((r_lo, r_hi), (0, 0), (0, 0)), mode="edge")
    x = sum(k[i] * p[i:i + h] for i in range(len(k)))
    p = np.pad(x, ((0, 0), (r_lo, r_hi), (0, 0)), mode="edge")
    return sum(k[i] * p[:, i:i + w] for i in range(len(k)))


def apply_fog(img: np.ndarray, fog_coef: float, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Blend toward the fog colour, then Gaussian blur with sigma = 2*fog_coef."""
    if not 0.0 <= fog_coef <= 1.0:
        raise ValueError(f"fog_coef {fog_coef} outside [0, 1]")
    _check_image(img)
    if fog_coef == 0:
        return img.copy()
    alpha = cfg.fog_alpha * fog_coef
    blended = _to_u8((1.0 - alpha) * img + alpha * np.array(cfg.fog_color, dtype=np.float64))
    return _to_u8(gaussian_blur(blended, 2.0 * fog_coef))


def rain_streak_mask(h: int, w: int, n_drops: int, slant_deg: float, length: int, stream: rng.RngStream) -> np.ndarray:
    """Pixels covered by ``n_drops`` one-pixel-wide slanted streaks.

    Each drop draws its top point as (x, y) uniform over the image.
    """
    covered = np.zeros((h, w), dtype=bool)
    if n_drops <= 0 or length <= 0:
        return covered
    tops = stream.uniform_array(2 * n_drops).reshape(n_drops, 2)
    x0 = np.floor(tops[:, 0:1] * w)
    y0 = np.floor(tops[:, 1:2] * h)
    theta = math.radians(slant_deg)
    steps = np.arange(length, dtype=np.float64)
    xs = _round_half_up(x0 + steps * math.sin(theta)).astype(np.intp)
    ys = _round_half_up(y0 + steps * math.cos(theta)).astype(np.intp)
    ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    covered[ys[ok], xs[ok]] = True
    return covered


def apply_rain(img: np.ndarray, stream: rng.RngStream, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Rain streaks, box blur, then global dimming.

    Draw order: drop density, slant, then the drop top points.  A pixel hit
    by several streaks is composited once.
    """
    _check_image(img)
    h, w = img.shape[:2]
    density = rng.uniform(stream, *cfg.rain_density_range)
    n_drops = int(_round_half_up(density * h * w / REFERENCE_SIZE**2))
    slant = rng.uniform(stream, *cfg.rain_slant_range)
    length = int(_round_half_up(cfg.rain_drop_length * min(h, w) / REFERENCE_SIZE))
    covered = rain_streak_mask(h, w, n_drops, slant, length, stream)
    out = img.astype(np.float64)
    if covered.any():
        drop = np.array(cfg.rain_drop_color, dtype=np.float64)
        out[covered] = _round_half_up(0.7 * drop + 0.3 * out[covered])
    out = _round_half_up(box_blur(out, cfg.rain_blur_kernel))
    return _to_u8(out * cfg.rain_brightness)


def sun_flare_at(img: np.ndarray, cx: float, cy: float, radius: float, intensity: float) -> np.ndarray:
    """Brighten toward white with linear falloff to zero at ``radius``.

    Distances are measured from integer pixel coordinates (col, row).
    """
    _check_image(img)
    if radius <= 0 or intensity == 0:
        return img.copy()
    h, w = img.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    d = np.hypot(xx - cx, yy - cy)
    weight = np.where(d <= radius, intensity * (1.0 - d / radius), 0.0)
    src = img.astype(np.float64)
    return (src + _round_half_up((255.0 - src) * weight[..., None])).astype(np.uint8)


def apply_sun_flare(img: np.ndarray, stream: rng.RngStream, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    _check_image(img)
    h, w = img.shape[:2]
    cx = rng.uniform(stream, 0.0, float(w))
    cy = rng.uniform(stream, 0.0, h / 3.0)
    return sun_flare_at(img, cx, cy, cfg.flare_radius_frac * min(h, w), cfg.flare_intensity)


def augment_image(img: np.ndarray, stream: rng.RngStream, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Gate and apply rain, sun flare, fog, RGB shift and gamma, in that order.

    One gate is drawn per transform; its parameters are drawn only if the
    gate opens.
    """
    _check_image(img)
    out = img
    p = cfg.gate_probability
    if rng.bernoulli(stream, p):
        out = apply_rain(out, stream, cfg)
    if rng.bernoulli(stream, p):
        out = apply_sun_flare(out, stream, cfg)
    if rng.bernoulli(stream, p):
        out = apply_fog(out, rng.uniform(stream, *cfg.fog_coef_range), cfg)
    if rng.bernoulli(stream, p):
        lim = float(cfg.rgb_shift_limit)
        d = [int(_round_half_up(rng.uniform(stream, -lim, lim))) for _ in range(3)]
        out = apply_rgb_shift(out, *d)
    if rng.bernoulli(stream, p):
        out = apply_gamma(out, rng.uniform(stream, *cfg.gamma_range))
    return out.copy() if out is img else out


def image_stream(seed: int, index: int, tag: str = "augment", epoch: int = 0) -> rng.RngStream:
    return rng.derive_stream(seed, [(tag, epoch), ("image", index)])


def _augment_job(args):
    img, seed, index, tag, epoch, cfg = args
    return augment_image(img, image_stream(seed, index, tag, epoch), cfg)


def augment_many(images, seed: int, cfg: AugmentConfig = AugmentConfig(), tag: str = "augment",
                 epoch: int = 0, jobs: int = 1) -> list[np.ndarray]:
    """Augment a list of images, each with its own derived stream.

    Output is independent of ``jobs``.
    """
    work = [(img, seed, i, tag, epoch, cfg) for i, img in enumerate(images)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_augment_job, work, chunksize=4))
    return [_augment_job(a) for a in work]


def apply_single(name: str, img: np.ndarray, stream: rng.RngStream, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Apply one named transform with parameters drawn from ``stream`` (no gate)."""
    if name == "rain":
        return apply_rain(img, stream, cfg)
    if name == "sun_flare":
        return apply_sun_flare(img, stream, cfg)
    if name == "fog":
        return apply_fog(img, rng.uniform(stream, *cfg.fog_coef_range), cfg)
    if name == "rgb_shift":
        lim = float(cfg.rgb_shift_limit)
        return apply_rgb_shift(img, *[int(_round_half_up(rng.uniform(stream, -lim, lim))) for _ in range(3)])
    if name == "gamma":
        return apply_gamma(img, rng.uniform(stream, *cfg.gamma_range))
    raise ValueError(f"unknown transform {name!r}; expected one of {TRANSFORM_ORDER}")


def contact_sheet(img: np.ndarray, seed: int, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Original, each transform alone, and the full pipeline side by side, labelled."""
    from PIL import Image, ImageDraw

    tiles = [("original", img)]
    for i, name in enumerate(TRANSFORM_ORDER):
        tiles.append((name, apply_single(name, img, rng.derive_stream(seed, [("preview", i)]), cfg)))
    full = augment_image(img, rng.derive_stream(seed, [("preview", len(TRANSFORM_ORDER))]),
                         replace(cfg, gate_probability=1.0))
    tiles.append(("all five", full))
    h, w = img.shape[:2]
    pad, label_h = 4, 14
    sheet = Image.new("RGB", (len(tiles) * (w + pad) + pad, h + label_h + 2 * pad), (255, 255, 255))
    draw = ImageDraw.Draw(sheet)
    for i, (label, tile) in enumerate(tiles):
        x = pad + i * (w + pad)
        sheet.paste(Image.fromarray(tile), (x, pad + label_h))
        draw.text((x, pad), label, fill=(0, 0, 0))
    return np.asarray(sheet)


def _augment_record_job(args):
    src_path, dst_path, seed, index, cfg = args
    from .corpus import read_rgb, write_rgb

    write_rgb(augment_image(read_rgb(src_path), image_stream(seed, index), cfg), dst_path)


def augment_manifest(manifest, out_dir, seed: int, cfg: AugmentConfig = AugmentConfig(), jobs: int = 1):
    """Write an augmented copy of a dataset; masks are copied byte-for-byte.

    Image ``i`` uses the stream derived from ``(seed, i)``, so output files
    do not depend on ``jobs``.
    """
    import shutil
    from pathlib import Path

    from .corpus import Manifest, ensure_dir, write_manifest

    root = ensure_dir(out_dir)
    ensure_dir(root / "rgb")
    ensure_dir(root / "mask")
    work = []
    for i, rec in enumerate(manifest.records):
        work.append((manifest.resolve(rec.rgb_path), root / rec.rgb_path, seed, i, cfg))
        shutil.copyfile(manifest.resolve(rec.mask_path), root / rec.mask_path)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(_augment_record_job, work, chunksize=8))
    else:
        for job in work:
            _augment_record_job(job)
    out = Manifest(Path(out_dir).name, list(manifest.records), manifest.num_classes, root=root)
    write_manifest(out, root / "manifest.jsonl")
    return out
