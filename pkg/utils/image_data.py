"""
Image sets, the synthetic blobs manifold, and PNG I/O.

Pixels live in [-1, 1] inside the toolkit and as 8-bit [0, 255] in files:
v8 = round((v + 1) * 127.5), clamped.
"""

import glob
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from PIL import Image, UnidentifiedImageError
from sklearn.model_selection import train_test_split

from ml.exceptions import ConfigError, ContractError, ImageIOError
from ml.tensor import Tensor

logger = logging.getLogger(__name__)

GRAY_MODES = ("1", "L", "LA", "I", "I;16", "F", "P")


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round((np.asarray(x, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def from_uint8(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float64) / 127.5 - 1.0


@dataclass
class ImageSet:
    """Uniformly shaped images [N, C, H, W] in [-1, 1] plus provenance metadata."""

    images: np.ndarray
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        images = np.array(self.images, dtype=np.float64)
        if images.ndim != 4:
            raise ContractError(f"ImageSet needs a [N, C, H, W] array, got shape {images.shape}")
        if images.size and (not np.isfinite(images).all() or images.min() < -1.0 or images.max() > 1.0):
            raise ContractError("ImageSet pixels must be finite and within [-1, 1]")
        images.setflags(write=False)
        self.images = images

    def __len__(self):
        return self.images.shape[0]

    def __getitem__(self, i: int) -> Tensor:
        return Tensor.wrap(self.images[i])

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def tensors(self) -> List[Tensor]:
        return [self[i] for i in range(len(self))]

    def batch(self, indices: Sequence[int]) -> Tensor:
        return Tensor.wrap(self.images[np.asarray(indices, dtype=np.int64)])

    def subset(self, indices: Sequence[int], tag: str) -> "ImageSet":
        meta = dict(self.metadata, split_tag=tag, n=len(indices))
        return ImageSet(self.images[np.asarray(indices, dtype=np.int64)], meta)

    def split_indices(self, seed: int, fractions=(0.9, 0.05, 0.05)) -> Dict[str, List[int]]:
        """Seeded train/validation/test split (default 90/5/5)."""
        idx = np.arange(len(self))
        holdout = fractions[1] + fractions[2]
        if len(idx) < 2 or holdout <= 0:
            return {"train": idx.tolist(), "val": [], "test": []}
        train, rest = train_test_split(idx, test_size=holdout, random_state=seed, shuffle=True)
        if len(rest) < 2:
            return {"train": sorted(train.tolist()), "val": [], "test": sorted(rest.tolist())}
        val, test = train_test_split(rest, test_size=fractions[2] / holdout, random_state=seed, shuffle=True)
        return {"train": sorted(train.tolist()), "val": sorted(val.tolist()), "test": sorted(test.tolist())}

    def split(self, seed: int, fractions=(0.9, 0.05, 0.05)) -> Tuple["ImageSet", "ImageSet", "ImageSet"]:
        parts = self.split_indices(seed, fractions)
        return tuple(self.subset(parts[tag], tag) for tag in ("train", "val", "test"))


def gen_blobs_dataset(n: int, size: int, max_blobs: int, seed: int) -> ImageSet:
    """Grayscale images made of 1..max_blobs isotropic Gaussian bumps, mapped to [-1, 1]."""
    if n < 1:
        raise ConfigError(f"need at least one image, got n={n}")
    if size < 2 or max_blobs < 1:
        raise ConfigError(f"invalid blobs parameters size={size}, max_blobs={max_blobs}")

    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    images = np.empty((n, 1, size, size))
    for i in range(n):
        img = np.zeros((size, size))
        for _ in range(int(rng.integers(1, max_blobs + 1))):
            cy, cx = rng.uniform(0, size, size=2)
            width = rng.uniform(size / 10.0, size / 4.0)
            amplitude = rng.uniform(0.4, 1.0)
            img += amplitude * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * width ** 2))
        images[i, 0] = np.clip(img, 0.0, 1.0) * 2.0 - 1.0

    meta = {"source": "blobs", "n": n, "size": size, "max_blobs": max_blobs, "seed": seed, "split_tag": "all"}
    return ImageSet(images, meta)


def save_png(image: Tensor, path: str):
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ContractError(f"PNG export needs a [1|3, H, W] image, got {arr.shape}")
    pixels = to_uint8(arr)
    if arr.shape[0] == 1:
        img = Image.fromarray(pixels[0])
    else:
        img = Image.fromarray(np.ascontiguousarray(pixels.transpose(1, 2, 0)))
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    img.save(path, format="PNG")


def _open_image(path: str) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
        return img
    except (UnidentifiedImageError, OSError) as e:
        raise ImageIOError(f"cannot decode image '{path}': {e}") from e


def _center_square(img: Image.Image, size: Optional[int]) -> Image.Image:
    w, h = img.size
    side = min(w, h)
    left, top = (w - side) // 2, (h - side) // 2
    img = img.crop((left, top, left + side, top + side))
    if size is not None and side != size:
        img = img.resize((size, size), Image.BICUBIC)
    return img


def load_png(path: str, channels: Optional[int] = None) -> Tensor:
    img = _open_image(path)
    gray = img.mode in GRAY_MODES if channels is None else channels == 1
    arr = np.asarray(img.convert("L" if gray else "RGB"))
    arr = arr[None] if gray else arr.transpose(2, 0, 1)
    return Tensor.wrap(from_uint8(arr))


def load_image_dir(path: str, size: Optional[int] = None, jobs: int = 1) -> ImageSet:
    """Decode every PNG in a directory, center-crop to square and resize to ``size``.

    Grayscale sets stay single-channel; if any file is colour, all are read as RGB.
    """
    if not os.path.isdir(path):
        raise ImageIOError(f"image directory not found: {path}")
    files = sorted(glob.glob(os.path.join(path, "**", "*.png"), recursive=True))
    if not files:
        raise ImageIOError(f"no PNG images in {path}")

    opened = Parallel(n_jobs=jobs, prefer="threads")(delayed(_open_image)(f) for f in files)
    gray = all(img.mode in GRAY_MODES for img in opened)
    if size is None:
        size = min(opened[0].size)

    images = []
    for img in opened:
        img = _center_square(img.convert("L" if gray else "RGB"), size)
        arr = np.asarray(img)
        images.append(arr[None] if gray else arr.transpose(2, 0, 1))
    meta = {"source": os.path.abspath(path), "n": len(files), "size": size,
            "channels": 1 if gray else 3, "split_tag": "all"}
    logger.info(f"Loaded {len(files)} images from {path} at {size}x{size}")
    return ImageSet(from_uint8(np.stack(images)), meta)


def save_image_set(images: ImageSet, outdir: str, extra_meta: Optional[Dict] = None) -> str:
    """Write img_00000.png ... plus metadata.json."""
    os.makedirs(os.path.join(outdir, "images"), exist_ok=True)
    for i in range(len(images)):
        save_png(images[i], os.path.join(outdir, "images", f"img_{i:05d}.png"))
    meta = dict(images.metadata)
    if extra_meta:
        meta.update(extra_meta)
    meta_path = os.path.join(outdir, "metadata.json")
    with open(meta_path, "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    return meta_path


def load_image_set(path: str, jobs: int = 1) -> ImageSet:
    """Read a directory written by save_image_set (or any PNG directory)."""
    image_dir = os.path.join(path, "images") if os.path.isdir(os.path.join(path, "images")) else path
    images = load_image_dir(image_dir, jobs=jobs)
    meta_path = os.path.join(path, "metadata.json")
    if os.path.exists(meta_path):
        with open(meta_path, "r", encoding="utf-8") as f:
            images.metadata.update(json.load(f))
    return images


def load_mask_png(path: str, image_shape: Tuple[int, int, int]) -> np.ndarray:
    """Binary [H, W] mask from a PNG: white keeps a pixel, black masks it."""
    img = _open_image(path).convert("L")
    _, H, W = image_shape
    if img.size != (W, H):
        img = img.resize((W, H), Image.NEAREST)
    return (np.asarray(img) >= 128).astype(np.float64)
