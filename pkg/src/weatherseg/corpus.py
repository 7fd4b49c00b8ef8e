"""Paired RGB/mask samples: PNG I/O, JSON Lines manifests, resizing and folds.

Images are plain numpy arrays: RGB is ``uint8`` of shape ``(H, W, 3)``, masks
are ``uint8`` of shape ``(H, W)`` holding class ids.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

CLASS_NAMES = (
    "unlabeled",
    "road",
    "sidewalk",
    "building",
    "vehicle",
    "vegetation",
    "lane_marking",
    "sky",
)
DEFAULT_NUM_CLASSES = len(CLASS_NAMES)

CONDITIONS = ("DC", "DR", "DW", "NC", "NR", "NW", "W", "CLEAR_NOON")
TEST_SETS = ("DC", "DR", "DW", "NC", "NR", "NW", "W")
TOWNS = (1, 2, 3, 4, 5, 6, 7, 10)


class DataError(Exception):
    """Invalid or unreadable dataset content."""


class ManifestParseError(DataError):
    def __init__(self, path, line_no: int, msg: str):
        super().__init__(f"{path}:{line_no}: {msg}")
        self.line_no = line_no


@dataclass(frozen=True)
class WeatherParams:
    sun_altitude_deg: float
    cloudiness: float
    precipitation: float
    fog_density: float
    wetness: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.sun_altitude_deg <= 90.0:
            raise ValueError(f"sun_altitude_deg {self.sun_altitude_deg} outside [-90, 90]")
        for name in ("cloudiness", "precipitation", "fog_density", "wetness"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} {v} outside [0, 1]")

    @property
    def is_night(self) -> bool:
        return self.sun_altitude_deg < 0


@dataclass
class SampleRecord:
    rgb_path: str
    mask_path: str
    town: int
    condition: str
    scene_seed: int
    weather: WeatherParams

    def to_json(self) -> dict:
        d = asdict(self)
        d["weather"] = asdict(self.weather)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SampleRecord":
        missing = [k for k in ("rgb_path", "mask_path", "town", "condition", "scene_seed", "weather") if k not in d]
        if missing:
            raise KeyError(f"missing field(s) {', '.join(missing)}")
        if d["condition"] not in CONDITIONS:
            raise ValueError(f"unknown condition {d['condition']!r}")
        if int(d["town"]) not in TOWNS:
            raise ValueError(f"town {d['town']} not in {TOWNS}")
        return cls(
            rgb_path=str(d["rgb_path"]),
            mask_path=str(d["mask_path"]),
            town=int(d["town"]),
            condition=d["condition"],
            scene_seed=int(d["scene_seed"]),
            weather=WeatherParams(**d["weather"]),
        )


@dataclass
class Manifest:
    name: str
    records: list[SampleRecord] = field(default_factory=list)
    num_classes: int = DEFAULT_NUM_CLASSES
    # directory the record paths are relative to; not serialized
    root: Path | None = field(default=None, compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.records)

    def subset(self, indices, name: str | None = None) -> "Manifest":
        return Manifest(name or self.name, [self.records[i] for i in indices], self.num_classes, self.root)

    def resolve(self, rel: str) -> Path:
        return (self.root or Path(".")) / rel

    def load_pair(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        rec = self.records[i]
        img = read_rgb(self.resolve(rec.rgb_path))
        mask = read_mask(self.resolve(rec.mask_path), self.num_classes)
        if img.shape[:2] != mask.shape:
            raise DataError(f"record {i}: rgb {img.shape[:2]} and mask {mask.shape} differ")
        return img, mask


# -- PNG ---------------------------------------------------------------------

def write_rgb(img: np.ndarray, path) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected uint8 (H, W, 3) image, got {img.dtype} {img.shape}")
    Image.fromarray(img, mode="RGB").save(path, format="PNG")


def read_rgb(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode != "RGB":
                raise DataError(f"{path}: expected 8-bit RGB PNG, got mode {im.mode}")
            return np.array(im, dtype=np.uint8)
    except OSError as e:
        raise DataError(f"{path}: {e}") from e


def write_mask(mask: np.ndarray, path) -> None:
    mask = np.asarray(mask)
    if mask.dtype != np.uint8 or mask.ndim != 2:
        raise ValueError(f"expected uint8 (H, W) mask, got {mask.dtype} {mask.shape}")
    Image.fromarray(mask, mode="L").save(path, format="PNG")


def read_mask(path, num_classes: int | None = None) -> np.ndarray:
    """Load an 8-bit grayscale mask; reject other PNG modes and out-of-range ids."""
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                raise DataError(f"{path}: mask must be 8-bit single-channel PNG, got mode {im.mode}")
            mask = np.array(im, dtype=np.uint8)
    except OSError as e:
        raise DataError(f"{path}: {e}") from e
    if num_classes is not None:
        validate_mask(mask, num_classes, where=str(path))
    return mask


def validate_mask(mask: np.ndarray, num_classes: int, where: str = "mask") -> None:
    if mask.size and int(mask.max()) >= num_classes:
        raise DataError(f"{where}: class id {int(mask.max())} >= num_classes {num_classes}")


def mask_png_roundtrip(mask: np.ndarray, path, num_classes: int | None = None) -> np.ndarray:
    write_mask(mask, path)
    return read_mask(path, num_classes)


# -- manifests ---------------------------------------------------------------

def write_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"name": manifest.name, "num_classes": manifest.num_classes}) + "\n")
        for rec in manifest.records:
            f.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


def read_manifest(path, check_files: bool = False) -> Manifest:
    """Parse a manifest; record paths resolve against the manifest's directory."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataError(f"{path}: {e}") from e
    if not lines:
        raise ManifestParseError(path, 1, "empty file, expected header line")
    try:
        header = json.loads(lines[0])
        name, num_classes = str(header["name"]), int(header["num_classes"])
    except (ValueError, KeyError, TypeError) as e:
        raise ManifestParseError(path, 1, f"bad header: {e}") from e
    if num_classes < 1:
        raise ManifestParseError(path, 1, f"num_classes must be >= 1, got {num_classes}")
    records = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            records.append(SampleRecord.from_json(json.loads(line)))
        except (ValueError, KeyError, TypeError) as e:
            raise ManifestParseError(path, line_no, str(e)) from e
    m = Manifest(name, records, num_classes, root=path.parent)
    if check_files:
        for i, rec in enumerate(records):
            for rel in (rec.rgb_path, rec.mask_path):
                if not m.resolve(rel).exists():
                    raise DataError(f"{path}: record {i} references missing file {rel}")
    return m


def manifest_roundtrip(manifest: Manifest, path) -> Manifest:
    write_manifest(manifest, path)
    return read_manifest(path)


# -- folds -------------------------------------------------------------------

@dataclass(frozen=True)
class FoldSpec:
    fold_index: int
    train_indices: tuple[int, ...]
    test_indices: tuple[int, ...]


def make_folds(n: int, k: int) -> list[FoldSpec]:
    """Contiguous-block k-fold split: fold i tests ``[i*n/k, (i+1)*n/k)``."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds sample count n={n}")
    if n % k:
        raise ValueError(f"k={k} does not divide n={n}")
    size = n // k
    folds = []
    for i in range(k):
        test = tuple(range(i * size, (i + 1) * size))
        train = tuple(range(0, i * size)) + tuple(range((i + 1) * size, n))
        folds.append(FoldSpec(i, train, test))
    return folds


# -- resizing ----------------------------------------------------------------

def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def _bilinear_axis(n_in: int, n_out: int):
    """Source index pairs and weights for half-pixel-centre bilinear sampling."""
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_rgb(img: np.ndarray, w: int, h: int) -> np.ndarray:
    H, W = img.shape[:2]
    if (H, W) == (h, w):
        return img.copy()
    y0, y1, fy = _bilinear_axis(H, h)
    x0, x1, fx = _bilinear_axis(W, w)
    src = img.astype(np.float64)
    top = src[y0][:, x0] * (1 - fx)[None, :, None] + src[y0][:, x1] * fx[None, :, None]
    bot = src[y1][:, x0] * (1 - fx)[None, :, None] + src[y1][:, x1] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    return np.clip(_round_half_up(out), 0, 255).astype(np.uint8)


def resize_mask(mask: np.ndarray, w: int, h: int) -> np.ndarray:
    H, W = mask.shape
    if (H, W) == (h, w):
        return mask.copy()
    ys = np.minimum(((np.arange(h) + 0.5) * H / h).astype(np.intp), H - 1)
    xs = np.minimum(((np.arange(w) + 0.5) * W / w).astype(np.intp), W - 1)
    return mask[ys][:, xs]


def resize_pair(img: np.ndarray, mask: np.ndarray, w: int, h: int) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear for RGB, nearest-neighbour for the mask so class ids never blend."""
    if w <= 0 or h <= 0:
        raise ValueError(f"target size must be positive, got {w}x{h}")
    if img.shape[:2] != mask.shape:
        raise ValueError(f"rgb {img.shape[:2]} and mask {mask.shape} differ")
    return resize_rgb(img, w, h), resize_mask(mask, w, h)


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
