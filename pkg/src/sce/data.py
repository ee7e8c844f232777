"""Dataset ingestion: CIFAR binary files and a synthetic blobs generator
for desk-scale verification runs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Dataset:
    images: np.ndarray                  # N x C x H x W float32 in [0, 1]
    labels: np.ndarray | None = None    # N ints in [0, classes)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        if self.labels is not None and len(self.labels) != len(self.images):
            raise ValueError("label count does not match image count")

    def __len__(self):
        return self.images.shape[0]


_CIFAR10_RECORD = 3073   # 1 label byte + 3 * 32 * 32 pixels
_CIFAR100_RECORD = 3074  # coarse byte + fine byte + pixels


def load_cifar_binary(path: str, cifar100: bool = False) -> Dataset:
    """Read a CIFAR binary batch file (R plane, then G, then B, row-major)."""
    raw = np.fromfile(path, dtype=np.uint8)
    record = _CIFAR100_RECORD if cifar100 else _CIFAR10_RECORD
    if raw.size == 0 or raw.size % record != 0:
        raise ValueError(
            f"{path}: length {raw.size} is not a multiple of the "
            f"{record}-byte record size"
        )
    rows = raw.reshape(-1, record)
    if cifar100:
        labels = rows[:, 1].astype(np.int64)  # fine labels
        pixels = rows[:, 2:]
        n_classes = 100
    else:
        labels = rows[:, 0].astype(np.int64)
        pixels = rows[:, 1:]
        n_classes = 10
    if labels.max() >= n_classes:
        raise ValueError(
            f"{path}: label byte {labels.max()} out of range for "
            f"{n_classes} classes"
        )
    images = pixels.reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return Dataset(images=images, labels=labels,
                   meta={"source": path, "classes": n_classes})


_PALETTE = np.array([
    [0.9, 0.2, 0.2], [0.2, 0.9, 0.2], [0.2, 0.3, 0.9], [0.9, 0.9, 0.2],
    [0.9, 0.2, 0.9], [0.2, 0.9, 0.9], [0.9, 0.6, 0.2], [0.6, 0.2, 0.9],
])


def blob_template(cls: int, image_size: int) -> np.ndarray:
    """Class template: a colored square at a class-specific position on a
    mid-gray background."""
    img = np.full((3, image_size, image_size), 0.45, dtype=np.float32)
    color = _PALETTE[cls % len(_PALETTE)]
    side = image_size // 2
    # walk corners, then offset toward the center for later classes
    corner = cls % 4
    inset = (cls // 4) * max(1, image_size // 8)
    top = inset if corner in (0, 1) else image_size - side - inset
    left = inset if corner in (0, 2) else image_size - side - inset
    img[:, top:top + side, left:left + side] = color[:, None, None]
    return img


def gen_synthetic_blobs(classes: int, per_class: int, image_size: int = 32,
                        noise_sigma: float = 0.1, seed: int = 0) -> Dataset:
    """Colored-square class templates plus Gaussian pixel noise."""
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    rng = np.random.default_rng(seed)
    images = np.empty((classes * per_class, 3, image_size, image_size),
                      dtype=np.float32)
    labels = np.empty(classes * per_class, dtype=np.int64)
    i = 0
    for c in range(classes):
        template = blob_template(c, image_size)
        for _ in range(per_class):
            noisy = template + rng.normal(0.0, noise_sigma,
                                          size=template.shape)
            images[i] = np.clip(noisy, 0.0, 1.0)
            labels[i] = c
            i += 1
    return Dataset(images=images, labels=labels,
                   meta={"source": "synthetic-blobs", "classes": classes})


def split_dataset(ds: Dataset, holdout: int, seed: int = 0):
    """Deterministic shuffle-split into (train, test) with ``holdout`` test
    samples."""
    if not 0 < holdout < len(ds):
        raise ValueError(f"holdout {holdout} out of range for {len(ds)} samples")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5917]))
    order = rng.permutation(len(ds))
    test, train = order[:holdout], order[holdout:]
    lab = ds.labels
    return (
        Dataset(ds.images[train], None if lab is None else lab[train], dict(ds.meta)),
        Dataset(ds.images[test], None if lab is None else lab[test], dict(ds.meta)),
    )
