"""Image-folder dataset, deterministic 4:1 split, and preprocessing."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import IngestionError

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".ppm"}
MEAN = np.array([0.485, 0.456, 0.406])
STD = np.array([0.229, 0.224, 0.225])
TRAIN_FRACTION = 0.8


def resize_size(input_size: int) -> int:
    """Pre-crop square size; 256 for the canonical 224 crop."""
    return int(round(input_size * 256 / 224))


@dataclass
class Dataset:
    root: Path
    classes: list[str]
    items: list[tuple[Path, int]]
    split: str
    seed: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.items)

    @property
    def labels(self) -> np.ndarray:
        return np.array([lbl for _, lbl in self.items], dtype=np.int64)

    def load(self, index: int, input_size: int) -> np.ndarray:
        """Decoded, resized and center-cropped uint8 HxWx3 array (cached)."""
        key = (index, input_size)
        if key not in self._cache:
            self._cache[key] = decode_and_crop(self.items[index][0], input_size)
        return self._cache[key]


def scan_classes(root) -> tuple[list[str], dict[str, list[Path]]]:
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"dataset directory not found: {root}")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if len(classes) < 2:
        raise IngestionError(f"{root} must contain at least 2 class directories, found {len(classes)}")
    files = {}
    for name in classes:
        imgs = sorted(p for p in (root / name).iterdir()
                      if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        if not imgs:
            raise IngestionError(f"class directory {root / name} holds no images")
        files[name] = imgs
    return classes, files


def split_indices(n: int, seed: int, class_index: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle of ``range(n)``; first floor(0.8 n) are train."""
    rng = np.random.default_rng([seed, class_index])
    order = rng.permutation(n)
    n_train = int(np.floor(TRAIN_FRACTION * n))
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def load_dataset(root, split: str = "train", seed: int = 0) -> Dataset:
    if split not in ("train", "test", "all"):
        raise ValueError(f"split must be train, test or all, got {split!r}")
    classes, files = scan_classes(root)
    items = []
    for ci, name in enumerate(classes):
        paths = files[name]
        tr, te = split_indices(len(paths), seed, ci)
        chosen = {"train": tr, "test": te, "all": np.arange(len(paths))}[split]
        items.extend((paths[i], ci) for i in chosen)
    return Dataset(Path(root), classes, items, split, seed)


def decode_and_crop(path, input_size: int = 224) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            side = resize_size(input_size)
            im = im.resize((side, side), Image.BILINEAR)
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise IngestionError(f"cannot decode image {path}: {e}") from None
    return center_crop(np.asarray(im, dtype=np.uint8), input_size)


def center_crop(arr: np.ndarray, size: int) -> np.ndarray:
    h, w = arr.shape[:2]
    top, left = (h - size) // 2, (w - size) // 2
    return arr[top:top + size, left:left + size]


def normalize(arr: np.ndarray, flip: bool = False, dtype=np.float32) -> np.ndarray:
    """uint8 HxWx3 -> standardized float [3,H,W]."""
    if flip:
        arr = arr[:, ::-1]
    x = arr.astype(np.float64) / 255.0
    x = (x - MEAN) / STD
    return np.ascontiguousarray(x.transpose(2, 0, 1)).astype(dtype)


def preprocess(image, train_mode: bool = False, rng: np.random.Generator | None = None,
               input_size: int = 224, flip_prob: float = 0.5, dtype=np.float32) -> np.ndarray:
    """Resize, center-crop, (train) random horizontal flip, standardize.

    ``image`` may be a path, a PIL image, or a uint8 HxWx3 array.
    """
    if isinstance(image, (str, Path)):
        arr = decode_and_crop(image, input_size)
    else:
        im = image if isinstance(image, Image.Image) else Image.fromarray(np.asarray(image, np.uint8))
        side = resize_size(input_size)
        im = im.convert("RGB").resize((side, side), Image.BILINEAR)
        arr = center_crop(np.asarray(im, dtype=np.uint8), input_size)
    flip = False
    if train_mode:
        rng = rng if rng is not None else np.random.default_rng()
        flip = bool(rng.random() < flip_prob)
    return normalize(arr, flip, dtype)


def write_synthetic_dataset(root, n_classes: int = 8, per_class: int = 4, size: int = 32,
                            seed: int = 0) -> Path:
    """Class-coloured noise images for smoke tests and overfit runs."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    hues = np.linspace(0, 1, n_classes, endpoint=False)
    for k in range(n_classes):
        d = root / f"class_{k}"
        d.mkdir(parents=True, exist_ok=True)
        base = _hue_to_rgb(hues[k])
        for i in range(per_class):
            noise = rng.normal(0, 25, (size, size, 3))
            img = np.clip(base * 255 + noise, 0, 255).astype(np.uint8)
            Image.fromarray(img).save(d / f"img_{i:03d}.png")
    return root


def _hue_to_rgb(h: float) -> np.ndarray:
    import colorsys
    return np.array(colorsys.hsv_to_rgb(h, 0.9, 0.9))
