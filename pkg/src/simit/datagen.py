"""Toy scene simulator, dataset layout on disk, and batch loading.

The toy simulator stands in for a domain-specific rendering pipeline: it
emits label maps together with flat-shaded "simulated" renderings, and an
unpaired set of "real-style" images whose scenes come from a shifted layout
distribution and carry a different global appearance.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image, ImageDraw, UnidentifiedImageError
from scipy import ndimage

from .errors import ConfigError, DataError

DOMAINS = ("simulated", "real", "translated", "reconstructed")
SPLITS = ("train", "val", "test")
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1

# Flat per-class colours of the simulated renderer; index 0 is background.
SIM_PALETTE = np.array(
    [
        [0.15, 0.15, 0.20],
        [0.85, 0.30, 0.25],
        [0.30, 0.75, 0.35],
        [0.30, 0.40, 0.90],
        [0.90, 0.85, 0.30],
        [0.70, 0.35, 0.80],
        [0.35, 0.80, 0.85],
        [0.95, 0.60, 0.20],
    ],
    dtype=np.float64,
)

# Colour remap of the real-style renderer (warm tint, compressed blues).
_REAL_MIX = np.array(
    [
        [0.80, 0.20, 0.05],
        [0.10, 0.60, 0.10],
        [0.05, 0.10, 0.45],
    ]
)
_REAL_OFFSET = np.array([0.08, 0.05, 0.04])
_LUMA = np.array([0.299, 0.587, 0.114])

SHAPE_KINDS = ("ellipse", "rectangle", "polyline")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LabelMap:
    """Integer class image ``[H, W]`` with values in ``0..num_classes-1``."""

    classes: np.ndarray
    num_classes: int

    def __post_init__(self):
        classes = np.asarray(self.classes)
        if classes.ndim != 2:
            raise DataError(f"label map must be 2-D, got shape {classes.shape}")
        if not np.issubdtype(classes.dtype, np.integer):
            raise DataError(f"label map must be integer, got {classes.dtype}")
        if self.num_classes < 2:
            raise DataError(f"num_classes must be >= 2, got {self.num_classes}")
        if classes.size and (classes.min() < 0 or classes.max() >= self.num_classes):
            raise DataError(
                f"class id out of range [0, {self.num_classes}): "
                f"min={classes.min()}, max={classes.max()}"
            )
        object.__setattr__(self, "classes", _readonly(classes.astype(np.int64)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.classes.shape


@dataclass(frozen=True)
class OneHotLabelMap:
    """Binary ``[C, H, W]`` planes with exactly one active class per pixel."""

    planes: np.ndarray

    def __post_init__(self):
        planes = np.asarray(self.planes, dtype=np.float32)
        if planes.ndim != 3:
            raise DataError(f"one-hot planes must be [C,H,W], got {planes.shape}")
        if not np.all((planes == 0) | (planes == 1)) or not np.all(planes.sum(0) == 1):
            raise DataError("one-hot planes must be binary with channel-sum 1")
        object.__setattr__(self, "planes", _readonly(planes))

    @property
    def num_classes(self) -> int:
        return self.planes.shape[0]

    def argmax(self) -> LabelMap:
        return LabelMap(self.planes.argmax(0), self.num_classes)


@dataclass(frozen=True)
class ImageTensor:
    """Float image ``[channels, H, W]`` in ``[0, 1]`` with a domain tag."""

    pixels: np.ndarray
    domain: str = "simulated"

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float32)
        if pixels.ndim != 3 or pixels.shape[0] not in (1, 3):
            raise DataError(f"image must be [1|3,H,W], got {pixels.shape}")
        if not np.all(np.isfinite(pixels)):
            raise DataError("image contains non-finite values")
        if pixels.min() < 0.0 or pixels.max() > 1.0:
            raise DataError("image values outside [0, 1]")
        if self.domain not in DOMAINS:
            raise DataError(f"unknown domain tag {self.domain!r}")
        object.__setattr__(self, "pixels", _readonly(pixels))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape


@dataclass(frozen=True)
class PairedSample:
    label: LabelMap
    sim_image: ImageTensor
    id: str

    def __post_init__(self):
        if self.label.shape != self.sim_image.shape[1:]:
            raise DataError(
                f"sample {self.id}: label {self.label.shape} and image "
                f"{self.sim_image.shape[1:]} differ in size"
            )


@dataclass(frozen=True)
class ToyScene:
    """One simulator draw.

    ``real_label`` is the layout behind ``real``; it is kept only for
    held-out evaluation and never written for the training split.
    """

    paired: PairedSample
    real: ImageTensor
    real_label: LabelMap


@dataclass(frozen=True)
class ToyConfig:
    size: int | tuple[int, int] = 64
    num_classes: int = 3
    min_shapes: int = 3
    max_shapes: int = 6
    color_mode: str = "rgb"

    def __post_init__(self):
        h, w = self.hw
        if min(h, w) < 64:
            raise ConfigError(f"canvas must be at least 64x64, got {h}x{w}")
        if not 3 <= self.num_classes <= 8:
            raise ConfigError(f"num_classes must be in [3, 8], got {self.num_classes}")
        if not 1 <= self.min_shapes <= self.max_shapes:
            raise ConfigError("need 1 <= min_shapes <= max_shapes")
        if self.color_mode not in ("rgb", "gray"):
            raise ConfigError(f"color_mode must be 'rgb' or 'gray', got {self.color_mode!r}")

    @property
    def hw(self) -> tuple[int, int]:
        if isinstance(self.size, int):
            return (self.size, self.size)
        return tuple(self.size)

    @property
    def channels(self) -> int:
        return 3 if self.color_mode == "rgb" else 1


def _draw_layout(rng: np.random.Generator, cfg: ToyConfig, real: bool) -> np.ndarray:
    """Rasterise layered random shapes into a class-id canvas.

    Each foreground class prefers one shape kind, so classes differ in
    geometry as well as colour. The real-style layout draws more and larger
    shapes and strongly over-represents class 1.
    """
    h, w = cfg.hw
    canvas = Image.new("L", (w, h), 0)
    draw = ImageDraw.Draw(canvas)
    fg = np.arange(1, cfg.num_classes)
    weights = np.ones(len(fg))
    if real:
        weights[0] = 3.0
        lo, hi = 0.30, 0.65
        n = rng.integers(cfg.min_shapes + 1, cfg.max_shapes + 2)
    else:
        lo, hi = 0.25, 0.55
        n = rng.integers(cfg.min_shapes, cfg.max_shapes + 1)
    weights /= weights.sum()
    scale = min(h, w)
    for _ in range(n):
        cls = int(rng.choice(fg, p=weights))
        preferred = SHAPE_KINDS[(cls - 1) % len(SHAPE_KINDS)]
        kind = preferred if rng.random() < 0.7 else SHAPE_KINDS[rng.integers(3)]
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        a = rng.uniform(lo, hi) * scale / 2
        b = rng.uniform(lo, hi) * scale / 2
        if kind == "ellipse":
            draw.ellipse([cx - a, cy - b, cx + a, cy + b], fill=cls)
        elif kind == "rectangle":
            t = rng.uniform(0, math.pi)
            c, s = math.cos(t), math.sin(t)
            corners = [(-a, -b), (a, -b), (a, b), (-a, b)]
            draw.polygon([(cx + c * x - s * y, cy + s * x + c * y) for x, y in corners], fill=cls)
        else:
            k = rng.integers(3, 6)
            pts = [(cx, cy)]
            for _ in range(k - 1):
                t = rng.uniform(0, 2 * math.pi)
                r = rng.uniform(0.3, 1.0) * 2 * a
                pts.append((pts[-1][0] + r * math.cos(t), pts[-1][1] + r * math.sin(t)))
            width = max(2, int(round(rng.uniform(0.04, 0.08) * scale)))
            draw.line(pts, fill=cls, width=width, joint="curve")
    return np.asarray(canvas, dtype=np.int64)


def _sim_texture(h: int, w: int, num_classes: int) -> np.ndarray:
    """Fixed low-amplitude stripe texture per class, ``[C, H, W]``."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    out = np.empty((num_classes, h, w))
    for c in range(num_classes):
        angle = c * math.pi / num_classes
        freq = 1.0 / (6.0 + 2.0 * c)
        out[c] = 0.03 * np.sin(2 * math.pi * freq * (xx * math.cos(angle) + yy * math.sin(angle)))
    return out


def _to_mode(rgb: np.ndarray, cfg: ToyConfig) -> np.ndarray:
    if cfg.color_mode == "gray":
        return np.tensordot(_LUMA, rgb, axes=1)[None]
    return rgb


def render_simulated(classes: np.ndarray, cfg: ToyConfig) -> np.ndarray:
    """Flat-shaded rendering of a label map, ``[channels, H, W]`` in [0, 1]."""
    h, w = classes.shape
    rgb = SIM_PALETTE[classes].transpose(2, 0, 1)
    tex = _sim_texture(h, w, cfg.num_classes)
    rgb = rgb + np.take_along_axis(tex, classes[None], 0)
    return np.clip(_to_mode(rgb, cfg), 0.0, 1.0).astype(np.float32)


def render_real(classes: np.ndarray, cfg: ToyConfig, rng: np.random.Generator) -> np.ndarray:
    """Real-style rendering: colour remap, correlated noise, blur, vignette."""
    h, w = classes.shape
    palette = SIM_PALETTE @ _REAL_MIX.T + _REAL_OFFSET
    palette = palette * rng.uniform(0.9, 1.1)
    rgb = palette[classes].transpose(2, 0, 1)
    blotch = ndimage.gaussian_filter(rng.standard_normal((cfg.num_classes, h, w)), (0, 3, 3))
    blotch /= blotch.std(axis=(1, 2), keepdims=True) + 1e-12
    rgb = rgb + 0.05 * np.take_along_axis(blotch, classes[None], 0)
    grain = ndimage.gaussian_filter(rng.standard_normal((h, w)), 1.0)
    rgb = rgb + 0.04 * grain / (grain.std() + 1e-12)
    rgb = ndimage.gaussian_filter(rgb, (0, 0.7, 0.7))
    yy, xx = np.mgrid[0:h, 0:w]
    r2 = ((yy - (h - 1) / 2) / (h / 2)) ** 2 + ((xx - (w - 1) / 2) / (w / 2)) ** 2
    rgb = rgb * (1.0 - 0.18 * r2)
    return np.clip(_to_mode(rgb, cfg), 0.0, 1.0).astype(np.float32)


def generate_toy_scene(seed: int | Sequence[int], cfg: ToyConfig | None = None) -> ToyScene:
    """Draw one paired (label, simulated image) sample plus an unpaired real-style image.

    The output is a pure function of ``(seed, cfg)``.
    """
    cfg = cfg or ToyConfig()
    rng = np.random.default_rng(seed)
    classes = _draw_layout(rng, cfg, real=False)
    real_classes = _draw_layout(rng, cfg, real=True)
    sid = "-".join(str(s) for s in np.atleast_1d(seed))
    label = LabelMap(classes, cfg.num_classes)
    sim = ImageTensor(render_simulated(classes, cfg), "simulated")
    real = ImageTensor(render_real(real_classes, cfg, rng), "real")
    return ToyScene(PairedSample(label, sim, sid), real, LabelMap(real_classes, cfg.num_classes))


def one_hot_encode(label: LabelMap | np.ndarray, num_classes: int | None = None) -> OneHotLabelMap:
    if isinstance(label, LabelMap):
        classes, num_classes = label.classes, label.num_classes
    else:
        classes = np.asarray(label)
        if num_classes is None:
            raise DataError("num_classes required for a raw array")
    if classes.min() < 0 or classes.max() >= num_classes:
        raise DataError(f"class id out of range [0, {num_classes})")
    planes = (classes[None] == np.arange(num_classes)[:, None, None]).astype(np.float32)
    return OneHotLabelMap(planes)


def crop_window(h: int, w: int, size: int, rng: np.random.Generator) -> tuple[int, int]:
    """Uniformly drawn top-left corner of a ``size x size`` window."""
    if size > min(h, w):
        raise DataError(f"crop size {size} exceeds image size {h}x{w}")
    return int(rng.integers(0, h - size + 1)), int(rng.integers(0, w - size + 1))


def random_crop_synced(
    label: OneHotLabelMap, image: ImageTensor, size: int, rng: np.random.Generator
) -> tuple[OneHotLabelMap, ImageTensor]:
    """Crop the same window out of a one-hot label map and its image."""
    h, w = label.planes.shape[1:]
    if image.shape[1:] != (h, w):
        raise DataError(f"label {h}x{w} and image {image.shape[1:]} differ in size")
    top, left = crop_window(h, w, size, rng)
    win = np.s_[:, top : top + size, left : left + size]
    return OneHotLabelMap(label.planes[win]), ImageTensor(image.pixels[win], image.domain)


# --------------------------------------------------------------------------
# On-disk layout


def _write_png(path: Path, arr: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if arr.ndim == 3:
        arr = np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8)
        arr = arr[0] if arr.shape[0] == 1 else arr.transpose(1, 2, 0)
    else:
        arr = arr.astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG", optimize=False)


def read_image(path: Path, channels: int = 3) -> np.ndarray:
    """Read an 8-bit PNG as a float ``[channels, H, W]`` array in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    try:
        with Image.open(path) as im:
            im = im.convert("RGB" if channels == 3 else "L")
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"corrupt image: {path}: {exc}") from exc
    return arr.transpose(2, 0, 1) if arr.ndim == 3 else arr[None]


def read_label(path: Path, num_classes: int) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.int64)
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"corrupt label map: {path}: {exc}") from exc
    if arr.max() >= num_classes:
        raise DataError(f"{path}: class id {arr.max()} >= num_classes {num_classes}")
    return arr


@dataclass
class DatasetManifest:
    """Index of a dataset rooted at ``root``.

    ``splits[split]`` holds id lists under the keys ``paired``, ``real`` and
    optionally ``real_labels`` (evaluation-only labels for real images).
    """

    root: Path
    num_classes: int
    image_size: tuple[int, int]
    color_mode: str = "rgb"
    splits: dict[str, dict[str, list[str]]] = field(default_factory=dict)

    def __post_init__(self):
        self.root = Path(self.root)
        self.image_size = tuple(self.image_size)

    @property
    def channels(self) -> int:
        return 3 if self.color_mode == "rgb" else 1

    def label_path(self, split: str, sid: str) -> Path:
        return self.root / "paired" / "labels" / split / f"{sid}.png"

    def sim_path(self, split: str, sid: str) -> Path:
        return self.root / "paired" / "images" / split / f"{sid}.png"

    def real_path(self, split: str, sid: str) -> Path:
        return self.root / "real" / split / f"{sid}.png"

    def real_label_path(self, split: str, sid: str) -> Path:
        return self.root / "real_labels" / split / f"{sid}.png"

    def ids(self, split: str, kind: str) -> list[str]:
        return list(self.splits.get(split, {}).get(kind, []))

    def validate(self) -> None:
        seen: dict[Path, str] = {}
        for split, kinds in self.splits.items():
            if split not in SPLITS:
                raise DataError(f"unknown split {split!r}")
            paths = [self.label_path(split, s) for s in kinds.get("paired", [])]
            paths += [self.sim_path(split, s) for s in kinds.get("paired", [])]
            paths += [self.real_path(split, s) for s in kinds.get("real", [])]
            paths += [self.real_label_path(split, s) for s in kinds.get("real_labels", [])]
            for p in paths:
                if p in seen:
                    raise DataError(f"{p} listed in splits {seen[p]!r} and {split!r}")
                seen[p] = split
                if not p.is_file():
                    raise DataError(f"missing file: {p}")
            for kind in ("paired", "real"):
                ids = kinds.get(kind, [])
                if len(set(ids)) != len(ids):
                    raise DataError(f"duplicate ids in {split}/{kind}")

    def to_dict(self) -> dict:
        return {
            "format_version": MANIFEST_VERSION,
            "num_classes": self.num_classes,
            "image_size": list(self.image_size),
            "color_mode": self.color_mode,
            "splits": self.splits,
        }

    def save(self, path: Path | None = None) -> Path:
        path = Path(path) if path else self.root / MANIFEST_NAME
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        if not path.is_file():
            raise DataError(f"missing manifest: {path}")
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"corrupt manifest {path}: {exc}") from exc
        if d.get("format_version") != MANIFEST_VERSION:
            raise DataError(f"{path}: unsupported manifest version {d.get('format_version')}")
        m = cls(path.parent, d["num_classes"], d["image_size"], d.get("color_mode", "rgb"), d["splits"])
        m.validate()
        return m


def split_counts(n: int, fractions: Sequence[float] = (0.8, 0.1, 0.1)) -> tuple[int, int, int]:
    n_val = int(round(n * fractions[1]))
    n_test = int(round(n * fractions[2]))
    return n - n_val - n_test, n_val, n_test


def write_toy_dataset(
    out: str | Path,
    seed: int,
    num_scenes: int,
    cfg: ToyConfig | None = None,
    counts: tuple[int, int, int] | None = None,
) -> DatasetManifest:
    """Generate ``num_scenes`` toy scenes and write them in the dataset layout.

    Scene ``i`` is drawn from seed ``(seed, i)``. ``counts`` gives the
    train/val/test split sizes (default 80/10/10). Real-image labels are
    written for val/test only.
    """
    cfg = cfg or ToyConfig()
    counts = counts or split_counts(num_scenes)
    if sum(counts) != num_scenes or min(counts) < 0:
        raise ConfigError(f"split counts {counts} do not sum to {num_scenes}")
    out = Path(out)
    manifest = DatasetManifest(out, cfg.num_classes, cfg.hw, cfg.color_mode)
    bounds = np.cumsum((0,) + tuple(counts))
    for split, lo, hi in zip(SPLITS, bounds[:-1], bounds[1:]):
        ids = []
        for i in range(lo, hi):
            scene = generate_toy_scene((seed, i), cfg)
            sid = f"{i:06d}"
            _write_png(manifest.label_path(split, sid), scene.paired.label.classes)
            _write_png(manifest.sim_path(split, sid), scene.paired.sim_image.pixels)
            _write_png(manifest.real_path(split, sid), scene.real.pixels)
            if split != "train":
                _write_png(manifest.real_label_path(split, sid), scene.real_label.classes)
            ids.append(sid)
        entry = {"paired": ids, "real": list(ids)}
        if split != "train":
            entry["real_labels"] = list(ids)
        manifest.splits[split] = entry
    manifest.save()
    return manifest


# --------------------------------------------------------------------------
# Loading


@dataclass(frozen=True)
class Batch:
    """One training batch: paired one-hot labels + simulated images, unpaired real images."""

    labels: np.ndarray  # [B, C, h, w] float32 one-hot
    sim: np.ndarray  # [B, ch, h, w]
    real: np.ndarray  # [B, ch, h, w]
    epoch: int
    index: int


@dataclass
class SplitArrays:
    labels: np.ndarray  # [N, H, W] int64
    sim: np.ndarray  # [N, ch, H, W] float32
    real: np.ndarray  # [M, ch, H, W] float32
    paired_ids: list[str]
    real_ids: list[str]
    num_classes: int
    real_labels: np.ndarray | None = None


def read_split(manifest: DatasetManifest, split: str = "train") -> SplitArrays:
    paired_ids = manifest.ids(split, "paired")
    real_ids = manifest.ids(split, "real")
    if not paired_ids:
        raise DataError(f"paired split empty: {split}")
    if not real_ids:
        raise DataError("real split empty")
    labels, sims = [], []
    for sid in paired_ids:
        lab = read_label(manifest.label_path(split, sid), manifest.num_classes)
        img = read_image(manifest.sim_path(split, sid), manifest.channels)
        if lab.shape != img.shape[1:]:
            raise DataError(f"size mismatch: {manifest.sim_path(split, sid)} vs its label map")
        if labels and lab.shape != labels[0].shape:
            raise DataError(f"size mismatch: {manifest.label_path(split, sid)}")
        labels.append(lab)
        sims.append(img)
    reals = []
    for sid in real_ids:
        img = read_image(manifest.real_path(split, sid), manifest.channels)
        if reals and img.shape != reals[0].shape:
            raise DataError(f"size mismatch: {manifest.real_path(split, sid)}")
        reals.append(img)
    real_labels = None
    rl_ids = manifest.ids(split, "real_labels")
    if rl_ids:
        real_labels = np.stack(
            [read_label(manifest.real_label_path(split, s), manifest.num_classes) for s in rl_ids]
        )
    return SplitArrays(
        np.stack(labels), np.stack(sims), np.stack(reals), paired_ids, real_ids,
        manifest.num_classes, real_labels,
    )


class BatchLoader:
    """Deterministic, drop-last batch stream over one split.

    Batch ``(epoch, index)`` is a pure function of the seed, so iteration
    can start mid-epoch and background prefetching cannot change the
    sequence. Paired samples and real images are shuffled independently;
    the trailing ``len(paired) % batch_size`` samples of each epoch's
    permutation are dropped.
    """

    def __init__(
        self,
        data: SplitArrays,
        batch_size: int,
        crop: int | None = None,
        seed: int = 0,
        num_workers: int = 0,
    ):
        if batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if len(data.labels) < batch_size:
            raise DataError(f"{len(data.labels)} paired samples < batch size {batch_size}")
        self.data = data
        self.batch_size = batch_size
        h, w = data.labels.shape[1:]
        self.crop = crop or min(h, w)
        if self.crop > min(h, w) or self.crop > min(data.real.shape[2:]):
            raise DataError(f"crop size {self.crop} exceeds image size {h}x{w}")
        self.seed = seed
        self.num_workers = num_workers
        self._eye = np.eye(data.num_classes, dtype=np.float32)

    def __len__(self) -> int:
        return len(self.data.labels) // self.batch_size

    def _crop(self, arr: np.ndarray, rng: np.random.Generator) -> tuple[int, int]:
        return crop_window(arr.shape[-2], arr.shape[-1], self.crop, rng)

    def batch(self, epoch: int, index: int) -> Batch:
        if not 0 <= index < len(self):
            raise IndexError(index)
        b = self.batch_size
        paired_perm = np.random.default_rng([self.seed, epoch, 0]).permutation(len(self.data.labels))
        real_perm = np.random.default_rng([self.seed, epoch, 1]).permutation(len(self.data.real))
        rng = np.random.default_rng([self.seed, epoch, index, 2])
        pi = paired_perm[index * b : (index + 1) * b]
        ri = np.take(real_perm, np.arange(index * b, (index + 1) * b), mode="wrap")
        s = self.crop
        labels, sims, reals = [], [], []
        for i in pi:
            top, left = self._crop(self.data.labels[i], rng)
            lab = self.data.labels[i, top : top + s, left : left + s]
            labels.append(self._eye[lab].transpose(2, 0, 1))
            sims.append(self.data.sim[i, :, top : top + s, left : left + s])
        for i in ri:
            top, left = self._crop(self.data.real[i], rng)
            reals.append(self.data.real[i, :, top : top + s, left : left + s])
        return Batch(np.stack(labels), np.stack(sims), np.stack(reals), epoch, index)

    def epoch(self, epoch: int, start: int = 0) -> Iterator[Batch]:
        indices = range(start, len(self))
        if self.num_workers > 0:
            with ThreadPoolExecutor(self.num_workers) as pool:
                yield from pool.map(lambda i: self.batch(epoch, i), indices)
        else:
            for i in indices:
                yield self.batch(epoch, i)

    def __iter__(self) -> Iterator[Batch]:
        return self.epoch(0)


def load_dataset(
    manifest: DatasetManifest | str | Path,
    split: str = "train",
    batch_size: int = 4,
    crop: int | None = None,
    seed: int = 0,
    num_workers: int = 0,
) -> BatchLoader:
    if not isinstance(manifest, DatasetManifest):
        manifest = DatasetManifest.load(manifest)
    return BatchLoader(read_split(manifest, split), batch_size, crop, seed, num_workers)
