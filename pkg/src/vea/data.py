"""Dataset loading, preprocessing and batching.

Datasets keep their pixels compactly (``uint8`` for IDX sources) and apply the
preprocessing pipeline per batch: scale to [0, 1], resize, replicate grayscale
to three channels, normalize. Upsampled OracleMNIST would not fit in memory as
a dense float tensor otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError
from .idx import IdxDtype, read_idx

FASHION_MNIST_CLASSES = (
    "T-shirt/top", "Trouser", "Pullover", "Dress", "Coat",
    "Sandal", "Shirt", "Sneaker", "Bag", "Ankle boot",
)
ORACLE_MNIST_CLASSES = ("big", "sun", "moon", "cattle", "next", "field", "not", "arrow", "time", "wood")
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


@dataclass(frozen=True)
class PreprocessSpec:
    target_size: tuple[int, int] | None = None  # None keeps the native size
    mean: tuple[float, ...] = (0.5, 0.5, 0.5)
    std: tuple[float, ...] = (0.5, 0.5, 0.5)
    replicate_grayscale: bool = True

    def __post_init__(self):
        if any(s <= 0 for s in self.std):
            raise ValueError(f"std components must be > 0, got {self.std}")
        if len(self.mean) != len(self.std):
            raise ValueError("mean and std must have the same length")
        if self.target_size is not None and min(self.target_size) < 1:
            raise ValueError(f"target_size must be positive, got {self.target_size}")


@dataclass
class Dataset:
    """Labelled images.

    ``pixels`` is ``(N, H, W)`` grayscale or ``(N, C, H, W)``; integer pixels
    are taken as 0..255, float pixels as already in [0, 1].
    """

    pixels: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]
    preprocess: PreprocessSpec = field(default_factory=PreprocessSpec)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.class_names = tuple(self.class_names)
        if len(self.pixels) == 0:
            raise DataError("dataset is empty")
        if len(self.pixels) != len(self.labels):
            raise DataError(f"{len(self.pixels)} images but {len(self.labels)} labels")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            bad = int(np.flatnonzero((self.labels < 0) | (self.labels >= self.num_classes))[0])
            raise DataError(
                f"label {self.labels[bad]} at index {bad} outside [0, {self.num_classes})"
            )

    def __len__(self):
        return len(self.labels)

    @property
    def num_classes(self):
        return len(self.class_names)

    @property
    def image_shape(self):
        h, w = self.preprocess.target_size or self.pixels.shape[-2:]
        channels = 1 if self.pixels.ndim == 3 else self.pixels.shape[1]
        if channels == 1 and self.preprocess.replicate_grayscale:
            channels = 3
        return (channels, h, w)

    def batch(self, indices) -> np.ndarray:
        return preprocess(self.pixels[np.asarray(indices)], self.preprocess)

    @property
    def images(self) -> np.ndarray:
        """All samples, preprocessed (materializes the full tensor)."""
        return self.batch(np.arange(len(self)))

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices)
        return Dataset(self.pixels[indices], self.labels[indices], self.class_names, self.preprocess)


def resize_bilinear(img: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of the last two axes with half-pixel centers.

    Source coordinate for output pixel ``i`` is ``(i + 0.5) * in/out - 0.5``,
    clamped to the image; no antialiasing when downsampling.
    """
    out_h, out_w = int(target[0]), int(target[1])
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {target}")
    img = np.asarray(img)
    in_h, in_w = img.shape[-2:]
    if in_h < 1 or in_w < 1:
        raise ValueError(f"input spatial size must be positive, got {img.shape}")
    if not np.issubdtype(img.dtype, np.floating):
        img = img.astype(np.float32)
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()

    def axis_weights(n_in, n_out):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(np.intp)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (src - lo).astype(img.dtype)

    r0, r1, wr = axis_weights(in_h, out_h)
    c0, c1, wc = axis_weights(in_w, out_w)
    top, bottom = img[..., r0, :], img[..., r1, :]
    rows = top + wr[:, None] * (bottom - top)
    left, right = rows[..., c0], rows[..., c1]
    return left + wc * (right - left)


def preprocess(pixels: np.ndarray, spec: PreprocessSpec) -> np.ndarray:
    """Raw batch -> normalized float32 ``(B, C, H, W)``."""
    x = pixels.astype(np.float32)
    if np.issubdtype(pixels.dtype, np.integer):
        x /= 255.0
    if x.ndim == 3:
        x = x[:, None]
    if spec.target_size is not None and tuple(x.shape[-2:]) != tuple(spec.target_size):
        x = resize_bilinear(x, spec.target_size)
    if x.shape[1] == 1 and spec.replicate_grayscale:
        x = np.repeat(x, 3, axis=1)
    c = x.shape[1]
    mean = np.resize(np.asarray(spec.mean, dtype=np.float32), c)[None, :, None, None]
    std = np.resize(np.asarray(spec.std, dtype=np.float32), c)[None, :, None, None]
    return np.ascontiguousarray((x - mean) / std, dtype=np.float32)


def load_idx_dataset(
    images_path,
    labels_path,
    class_names: Sequence[str],
    spec: PreprocessSpec | None = None,
) -> Dataset:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if len(images.dims) != 3:
        raise DataError(f"{images_path}: expected image dims [N, H, W], got {list(images.dims)}")
    if len(labels.dims) != 1:
        raise DataError(f"{labels_path}: expected label dims [N], got {list(labels.dims)}")
    if images.dims[0] != labels.dims[0]:
        raise DataError(
            f"image count {images.dims[0]} ({images_path}) != label count {labels.dims[0]} ({labels_path})"
        )
    if images.dtype is not IdxDtype.U8:
        raise DataError(f"{images_path}: expected unsigned byte pixels, got {images.dtype.name}")
    return Dataset(images.data, labels.data.astype(np.int64), tuple(class_names), spec or PreprocessSpec())


def _decode_image(path: Path) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    return rgb.transpose(2, 0, 1)


def load_image_folder(root_dir, spec: PreprocessSpec) -> Dataset:
    """Load ``root/<class_name>/<image>``; classes are indexed in sorted order."""
    root = Path(root_dir)
    if not root.is_dir():
        raise DataError(f"image folder {root} does not exist")
    if spec.target_size is None:
        raise DataError("image folders need a target_size; images may differ in size")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DataError(f"{root} has no class subdirectories")
    images, labels = [], []
    for label, class_dir in enumerate(class_dirs):
        files = sorted(p for p in class_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise DataError(f"class directory {class_dir} contains no PNG/JPEG images")
        for f in files:
            images.append(resize_bilinear(_decode_image(f), spec.target_size))
            labels.append(label)
    return Dataset(np.stack(images), np.array(labels), tuple(p.name for p in class_dirs), spec)


def make_batches(
    ds: Dataset, batch_size: int, shuffle: bool = False, seed: int = 0
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(images, labels)`` covering every sample once; last batch may be short."""
    for idx in batch_order(len(ds), batch_size, shuffle, seed):
        yield ds.batch(idx), ds.labels[idx]


def batch_order(n: int, batch_size: int, shuffle: bool, seed: int) -> list[np.ndarray]:
    """The index groups :func:`make_batches` would use, without loading pixels."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng(seed).permutation(n) if shuffle else np.arange(n)
    return [order[s : s + batch_size] for s in range(0, n, batch_size)]
