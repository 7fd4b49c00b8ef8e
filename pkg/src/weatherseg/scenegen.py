"""Procedural road-scene renderer producing paired RGB/mask samples.

Geometry (and therefore the mask) is a pure function of ``SceneSpec``; the
weather only shades the RGB frame.  This keeps a clear and a rainy render of
the same scene pixel-aligned, which is what the augmentation experiment
needs from a data source.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .corpus import (
    DEFAULT_NUM_CLASSES,
    TOWNS,
    Manifest,
    SampleRecord,
    WeatherParams,
    ensure_dir,
    write_manifest,
    write_mask,
    write_rgb,
)

UNLABELED, ROAD, SIDEWALK, BUILDING, VEHICLE, VEGETATION, LANE, SKY = range(8)

DATASET_KINDS = ("D1", "D2", "DC", "DR", "DW", "NC", "NR", "NW", "W")
TRAIN_PER_TOWN = 150
TEST_PER_TOWN = 50
MIN_SIZE = 32

# name -> (sun_altitude_deg, cloudiness, precipitation, fog_density, wetness)
_NOON, _SUNSET, _NIGHT = 75.0, 15.0, -80.0
_PRESET_BODIES = {
    "Clear": (0.05, 0.0, 0.0, 0.0),
    "Cloudy": (0.6, 0.0, 0.0, 0.0),
    "Wet": (0.05, 0.0, 0.0, 0.5),
    "WetCloudy": (0.6, 0.0, 0.0, 0.5),
    "MidRainy": (0.6, 0.6, 0.05, 0.6),
    "HardRain": (0.9, 0.9, 0.1, 1.0),
    "SoftRain": (0.2, 0.3, 0.0, 0.4),
}
PRESETS: dict[str, tuple[float, float, float, float, float]] = {}
for _body, _vals in _PRESET_BODIES.items():
    PRESETS[_body + "Noon"] = (_NOON, *_vals)
    PRESETS[_body + "Sunset"] = (_SUNSET, *_vals)
PRESETS["ClearNight"] = (_NIGHT, *_PRESET_BODIES["Clear"])
PRESETS["HardRainNight"] = (_NIGHT, *_PRESET_BODIES["HardRain"])


def preset_weather(name: str) -> WeatherParams:
    try:
        return WeatherParams(*PRESETS[name])
    except KeyError:
        raise ValueError(f"unknown weather preset {name!r}; known: {', '.join(PRESETS)}") from None


def sample_weather(condition: str, stream: rng.RngStream) -> WeatherParams:
    """Draw weather uniformly inside the box of a condition code.

    Draw order is fixed: altitude, cloudiness, precipitation, fog, wetness.
    """
    u = rng.uniform
    if condition == "CLEAR_NOON":
        return preset_weather("ClearNoon")
    if condition == "W":
        alt = u(stream, -90.0, 90.0)
        return WeatherParams(alt, u(stream, 0, 1), u(stream, 0, 1), u(stream, 0, 1), u(stream, 0, 1))
    if len(condition) != 2 or condition[0] not in "DN" or condition[1] not in "CRW":
        raise ValueError(f"unknown condition code {condition!r}")
    alt = u(stream, 15.0, 90.0) if condition[0] == "D" else u(stream, -90.0, -10.0)
    kind = condition[1]
    if kind == "C":
        cloud, precip, fog, wet = u(stream, 0.0, 0.2), 0.0, u(stream, 0.0, 0.05), 0.0
    elif kind == "R":
        cloud = u(stream, 0.5, 1.0)
        precip = u(stream, 0.5, 1.0)
        fog = u(stream, 0.0, 0.3)
        wet = u(stream, 0.5, 1.0)
    else:
        cloud, precip, fog, wet = u(stream, 0, 1), u(stream, 0, 1), u(stream, 0, 1), u(stream, 0, 1)
    return WeatherParams(alt, cloud, precip, fog, wet)


@dataclass(frozen=True)
class TownStyle:
    road_half: float  # bottom half-width of the road, fraction of image width
    sidewalk: float  # sidewalk width relative to road half-width
    max_buildings: int
    max_vegetation: int
    building_rgb: tuple[int, int, int]
    vegetation_rgb: tuple[int, int, int]
    ground_rgb: tuple[int, int, int]
    road_rgb: tuple[int, int, int]


TOWN_STYLES = {
    1: TownStyle(0.34, 0.25, 3, 3, (150, 110, 90), (60, 120, 50), (110, 100, 80), (95, 95, 100)),
    2: TownStyle(0.30, 0.30, 4, 2, (170, 160, 150), (70, 130, 60), (120, 110, 95), (90, 90, 95)),
    3: TownStyle(0.42, 0.20, 4, 1, (120, 130, 150), (50, 110, 60), (100, 100, 100), (80, 80, 85)),
    4: TownStyle(0.38, 0.15, 1, 4, (160, 130, 100), (90, 140, 40), (130, 120, 70), (100, 100, 100)),
    5: TownStyle(0.36, 0.25, 4, 2, (140, 140, 160), (60, 125, 70), (105, 105, 95), (85, 85, 92)),
    6: TownStyle(0.40, 0.10, 2, 3, (180, 150, 120), (100, 150, 50), (140, 125, 80), (105, 100, 95)),
    7: TownStyle(0.28, 0.10, 1, 4, (130, 100, 80), (70, 115, 40), (125, 110, 70), (100, 95, 85)),
    10: TownStyle(0.36, 0.30, 4, 2, (110, 120, 135), (55, 120, 65), (95, 95, 100), (75, 75, 82)),
}

_CLASS_RGB = {
    SIDEWALK: (170, 165, 155),
    VEHICLE: (40, 60, 170),
    LANE: (235, 235, 220),
    SKY: (120, 170, 235),
}


@dataclass(frozen=True)
class SceneSpec:
    town_style: int
    scene_seed: int

    def __post_init__(self):
        if self.town_style not in TOWN_STYLES:
            raise ValueError(f"town {self.town_style} not in {TOWNS}")


def _round_half_up(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def _layout(spec: SceneSpec, w: int, h: int) -> tuple[np.ndarray, np.ndarray]:
    """Class-id mask and unlit base colours (float, H x W x 3)."""
    style = TOWN_STYLES[spec.town_style]
    g = rng.derive_stream(spec.scene_seed, [("geometry", spec.town_style)])
    u = rng.uniform
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    xc = xx + 0.5

    hz = int(_round_half_up(h * (0.45 + 0.1 * u(g, 0.0, 1.0))))
    vp_x = w * (0.5 + u(g, -0.12, 0.12))
    bottom_half = w * style.road_half * u(g, 0.9, 1.1)
    top_half = 0.02 * w

    mask = np.full((h, w), SKY, dtype=np.uint8)
    color = np.zeros((h, w, 3))
    below = yy >= hz
    t = np.clip((yy - hz) / max(1, h - 1 - hz), 0.0, 1.0)
    centre = vp_x + (w / 2.0 - vp_x) * t
    half = top_half + (bottom_half - top_half) * t
    d = xc - centre

    # ground, sidewalk, road, lane markings
    mask[below] = UNLABELED
    side_edge = half * (1.0 + style.sidewalk) + 1.0
    mask[below & (np.abs(d) <= side_edge)] = SIDEWALK
    road = below & (np.abs(d) <= half)
    mask[road] = ROAD
    depth = 1.0 / (t + 0.15)
    phase = u(g, 0.0, 1.0)
    dash_on = (np.floor(depth * 1.5 + phase) % 2) == 0
    lane_w = np.maximum(0.5, 0.03 * half)
    lane = road & dash_on & (t > 0.05) & (np.abs(np.abs(d) - 0.5 * half) <= lane_w)
    mask[lane] = LANE

    sky_tone = u(g, -15.0, 15.0)
    sky_grad = (yy / max(1, hz))[..., None]
    color[:] = np.array(_CLASS_RGB[SKY]) + sky_tone + 40.0 * sky_grad

    ground = np.array(style.ground_rgb, dtype=np.float64)
    color[mask == UNLABELED] = ground
    color[mask == SIDEWALK] = _CLASS_RGB[SIDEWALK]
    road_shade = (np.array(style.road_rgb) + u(g, -10.0, 10.0))[None, :] * (0.85 + 0.15 * t[road][:, None])
    color[road] = road_shade
    color[lane] = _CLASS_RGB[LANE]

    # buildings: rectangles rising from the horizon on either side
    n_build = rng.randint(g, 0, min(4, style.max_buildings) + 1)
    for _ in range(n_build):
        left = rng.bernoulli(g, 0.5)
        bw = w * u(g, 0.08, 0.25)
        x0 = u(g, 0.0, 0.35 * w - bw * 0.5) if left else u(g, 0.65 * w - bw * 0.5, w - bw * 0.5)
        top = hz - h * u(g, 0.1, 0.4)
        bottom = hz + 1
        tint = np.array([u(g, -25, 25) for _ in range(3)])
        sel = (xc >= x0) & (xc < x0 + bw) & (yy >= top) & (yy < bottom) & (mask == SKY)
        mask[sel] = BUILDING
        window_rows = (np.floor(yy / max(2.0, h / 24.0)) % 2) == 0
        col = np.array(style.building_rgb) + tint
        color[sel] = col
        color[sel & window_rows] = col * 0.8

    # vegetation blobs between sidewalk and buildings
    n_veg = rng.randint(g, 1, style.max_vegetation + 1)
    for _ in range(n_veg):
        left = rng.bernoulli(g, 0.5)
        cx = u(g, 0.0, 0.3 * w) if left else u(g, 0.7 * w, w)
        cy = hz + h * u(g, -0.12, 0.05)
        rx, ry = w * u(g, 0.05, 0.14), h * u(g, 0.04, 0.1)
        shade = u(g, 0.8, 1.2)
        sel = (((xc - cx) / rx) ** 2 + ((yy + 0.5 - cy) / ry) ** 2 <= 1.0) & np.isin(mask, (UNLABELED, SKY, BUILDING))
        mask[sel] = VEGETATION
        color[sel] = np.array(style.vegetation_rgb) * shade

    # vehicles on the road surface
    n_veh = rng.randint(g, 0, 4)
    span = h - 1 - hz
    for _ in range(n_veh):
        tv = u(g, 0.15, 0.7)
        row = hz + tv * span
        hw = top_half + (bottom_half - top_half) * tv
        cx = vp_x + (w / 2.0 - vp_x) * tv + u(g, -0.6, 0.6) * hw
        vw = max(2.0, 0.45 * hw)
        vh = max(2.0, 0.7 * vw)
        body = np.array(_CLASS_RGB[VEHICLE]) + np.array([u(g, -40, 80) for _ in range(3)])
        sel = (np.abs(xc - cx) <= vw / 2) & (yy + 0.5 <= row) & (yy + 0.5 > row - vh)
        mask[sel] = VEHICLE
        color[sel] = body

    noise = rng.derive_stream(spec.scene_seed, [("texture", spec.town_style)]).uniform_array(h * w, -6.0, 6.0)
    color += noise.reshape(h, w, 1)
    return mask, color


def _shade(mask: np.ndarray, color: np.ndarray, weather: WeatherParams, fx: rng.RngStream) -> np.ndarray:
    h, w = mask.shape
    img = color.copy()
    alt = weather.sun_altitude_deg
    if alt >= 0:
        illum = 0.6 + 0.4 * math.sin(math.radians(alt))
        warm = min(1.0, max(0.0, 1.0 - alt / 40.0))
        tint = np.array([1.0 + 0.15 * warm, 1.0, 1.0 - 0.2 * warm])
    else:
        illum = 0.15 + 0.13 * (1.0 + alt / 90.0)
        tint = np.array([0.75, 0.85, 1.2])

    cloud = weather.cloudiness
    lum = img @ np.array([0.299, 0.587, 0.114])
    img = lum[..., None] + (1.0 - 0.6 * cloud) * (img - lum[..., None])
    illum *= 1.0 - 0.35 * cloud
    illum = min(1.0, max(0.15, illum))
    img = img * illum * tint

    wet = max(weather.wetness, weather.precipitation)
    surface = np.isin(mask, (ROAD, SIDEWALK, LANE))
    img[surface] *= 1.0 - 0.35 * wet

    yy = np.arange(h, dtype=np.float64)[:, None]
    ground = (mask != SKY) & (mask != BUILDING)
    horizon = np.where(mask[:, w // 2] != SKY)[0]
    hz = horizon[0] if horizon.size else h // 2
    prox = np.where(yy < hz, 1.0, 1.0 - (yy - hz) / max(1, h - 1 - hz))
    prox = np.broadcast_to(prox, (h, w)).copy()
    prox[~ground & (np.arange(h)[:, None] >= hz)] = 1.0
    alpha = weather.fog_density * (0.35 + 0.6 * prox)
    fog_rgb = 200.0 * illum
    img = img * (1.0 - alpha[..., None]) + fog_rgb * alpha[..., None]

    p = weather.precipitation
    if p > 0:
        img = img * (1.0 - 0.25 * p) + 0.25 * p * img.mean(axis=(0, 1))
        n = int(_round_half_up(p * w * h * 0.02))
        length = max(2, int(_round_half_up(0.08 * h)))
        slant = math.radians(rng.uniform(fx, -15.0, 15.0))
        starts = fx.uniform_array(2 * n).reshape(n, 2) if n else np.zeros((0, 2))
        steps = np.arange(length, dtype=np.float64)
        ys = np.floor(starts[:, 1:2] * h + steps * math.cos(slant)).astype(np.intp)
        xs = np.floor(starts[:, 0:1] * w + steps * math.sin(slant)).astype(np.intp)
        ok = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
        streak = np.zeros((h, w), dtype=bool)
        streak[ys[ok], xs[ok]] = True
        drop = np.array([210.0, 210.0, 220.0]) * max(illum, 0.4)
        img[streak] = 0.5 * img[streak] + 0.5 * drop
    return np.clip(_round_half_up(img), 0, 255).astype(np.uint8)


def render_scene(spec: SceneSpec, weather: WeatherParams, w: int, h: int) -> tuple[np.ndarray, np.ndarray]:
    """Render ``(rgb, mask)``; the mask depends on ``spec`` alone."""
    if w < MIN_SIZE or h < MIN_SIZE:
        raise ValueError(f"render size {w}x{h} below minimum {MIN_SIZE}x{MIN_SIZE}")
    mask, color = _layout(spec, w, h)
    fx = rng.derive_stream(spec.scene_seed, [("weather_fx", 0)])
    return _shade(mask, color, weather, fx), mask


def per_town_count(kind: str, scale: float) -> int:
    base = TRAIN_PER_TOWN if kind in ("D1", "D2") else TEST_PER_TOWN
    return max(1, int(math.floor(base * scale + 0.5)))


def _condition_for(kind: str) -> str:
    if kind == "D1":
        return "CLEAR_NOON"
    if kind == "D2":
        return "W"
    return kind


def plan_dataset(kind: str, global_seed: int, scale: float = 1.0) -> list[tuple[int, int, WeatherParams]]:
    """(town, scene_seed, weather) per sample, in generation order."""
    if kind not in DATASET_KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")
    condition = _condition_for(kind)
    n = per_town_count(kind, scale)
    plan = []
    for town in TOWNS:
        for i in range(n):
            s = rng.derive_stream(global_seed, [("dataset:" + kind, 0), ("town", town), ("sample", i)])
            scene_seed = s.next_u64()
            plan.append((town, scene_seed, sample_weather(condition, s)))
    return plan


def _render_and_write(job) -> None:
    town, scene_seed, weather, size, rgb_path, mask_path = job
    img, mask = render_scene(SceneSpec(town, scene_seed), weather, size, size)
    write_rgb(img, rgb_path)
    write_mask(mask, mask_path)


def generate_dataset(
    kind: str,
    out_dir,
    global_seed: int,
    scale: float = 1.0,
    size: int = 64,
    num_classes: int = DEFAULT_NUM_CLASSES,
    jobs: int = 1,
) -> Manifest:
    """Write ``<out>/<kind>/{rgb,mask}/NNNNNN.png`` plus ``manifest.jsonl``."""
    plan = plan_dataset(kind, global_seed, scale)
    root = ensure_dir(Path(out_dir) / kind)
    ensure_dir(root / "rgb")
    ensure_dir(root / "mask")
    condition = _condition_for(kind)
    records, work = [], []
    for idx, (town, scene_seed, weather) in enumerate(plan):
        rgb_rel, mask_rel = f"rgb/{idx:06d}.png", f"mask/{idx:06d}.png"
        records.append(SampleRecord(rgb_rel, mask_rel, town, condition, scene_seed, weather))
        work.append((town, scene_seed, weather, size, root / rgb_rel, root / mask_rel))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(_render_and_write, work, chunksize=8))
    else:
        for job in work:
            _render_and_write(job)
    manifest = Manifest(kind, records, num_classes, root=root)
    write_manifest(manifest, root / "manifest.jsonl")
    return manifest
