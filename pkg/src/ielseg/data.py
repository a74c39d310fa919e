"""Synthetic segmentation data, window label noise, and forward-diffusion baselines."""
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from ielseg.diffusion import fel_array
from ielseg.field import Field, LabelMask


@dataclass(frozen=True)
class NoiseSpec:
    window: int = 3
    fraction: float = 0.2
    classes: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("fraction must lie in [0, 1]")
        if self.classes < 2:
            raise ValueError("classes must be >= 2")


@dataclass
class Dataset:
    images: List[Field]
    clean_masks: List[LabelMask]
    noisy_masks: Optional[List[LabelMask]] = None
    split: str = "train"
    classes: int = 2

    def __post_init__(self):
        if self.split not in ("train", "val"):
            raise ValueError(f"split must be 'train' or 'val', got {self.split!r}")
        if len(self.images) != len(self.clean_masks):
            raise ValueError("images and masks must align")
        if self.noisy_masks is not None:
            if self.split != "train":
                raise ValueError("noisy masks are only allowed on the training split")
            if len(self.noisy_masks) != len(self.images):
                raise ValueError("noisy masks must align with images")
        for img, m in zip(self.images, self.clean_masks):
            if (img.rows, img.cols) != m.shape:
                raise ValueError("image and mask shapes differ")

    def __len__(self):
        return len(self.images)

    @property
    def targets(self) -> List[LabelMask]:
        """Training targets: the noisy masks when present, else the clean ones."""
        return self.noisy_masks if self.noisy_masks is not None else self.clean_masks

    def image_batch(self, idx=None) -> np.ndarray:
        idx = range(len(self)) if idx is None else idx
        return np.stack([self.images[i].values for i in idx])

    def mask_batch(self, masks, idx=None) -> np.ndarray:
        idx = range(len(self)) if idx is None else idx
        return np.stack([masks[i].ids for i in idx])

    def take(self, start, stop, split=None) -> "Dataset":
        split = split or self.split
        noisy = self.noisy_masks[start:stop] if self.noisy_masks is not None and split == "train" else None
        return Dataset(self.images[start:stop], self.clean_masks[start:stop], noisy, split, self.classes)

    def with_noisy(self, noisy_masks) -> "Dataset":
        return Dataset(self.images, self.clean_masks, list(noisy_masks), "train", self.classes)


# foreground colours per class id; background is dark grey-blue
_PALETTE = np.array([
    [0.10, 0.10, 0.15],
    [0.75, 0.35, 0.55],
    [0.35, 0.70, 0.40],
    [0.40, 0.45, 0.85],
    [0.85, 0.75, 0.30],
], dtype=np.float64)


def _class_colour(c, rng):
    base = _PALETTE[c % len(_PALETTE)]
    return np.clip(base + rng.uniform(-0.08, 0.08, size=3), 0, 1)


def _draw_sample(rng, size, classes):
    mask = np.zeros((size, size), dtype=np.int64)
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(int(rng.integers(1, 4))):
        cls = int(rng.integers(1, classes))
        cy, cx = rng.uniform(0.15 * size, 0.85 * size, size=2)
        ry, rx = rng.uniform(size / 12, size / 4.5, size=2)
        if rng.random() < 0.5:
            theta = rng.uniform(0, np.pi)
            c, s = np.cos(theta), np.sin(theta)
            u = (yy - cy) * c + (xx - cx) * s
            v = -(yy - cy) * s + (xx - cx) * c
            region = (u / ry) ** 2 + (v / rx) ** 2 <= 1
        else:
            region = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        mask[region] = cls
    image = np.empty((3, size, size))
    image[:] = _class_colour(0, rng)[:, None, None]
    for cls in range(1, classes):
        sel = mask == cls
        if sel.any():
            image[:, sel] = _class_colour(cls, rng)[:, None]
    image += rng.normal(0.0, 0.06, size=image.shape)
    return np.clip(image, 0.0, 1.0), mask


def gen_synthetic(n: int, size: int = 64, classes: int = 2, seed: int = 0, split: str = "train") -> Dataset:
    """Dark background with 1-3 filled ellipses/rectangles per image, plus pixel noise.

    Deterministic in ``seed``; sample ``i`` does not depend on ``n``.
    """
    if size % 4:
        raise ValueError("size must be divisible by 4")
    if classes < 2:
        raise ValueError("classes must be >= 2")
    images, masks = [], []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        img, m = _draw_sample(rng, size, classes)
        images.append(Field(img))
        masks.append(LabelMask(m, classes))
    return Dataset(images, masks, None, split, classes)


def gen_splits(n_train: int, n_val: int, size: int = 64, classes: int = 2, seed: int = 0):
    """Train and validation sets drawn from one seeded stream (val follows train)."""
    full = gen_synthetic(n_train + n_val, size, classes, seed)
    return full.take(0, n_train, "train"), full.take(n_train, n_train + n_val, "val")


def window_count(rows: int, cols: int, spec: NoiseSpec) -> int:
    return int(np.floor(spec.fraction * rows * cols / spec.window**2 + 1e-9))


def inject_window_noise(mask: LabelMask, spec: NoiseSpec) -> LabelMask:
    """Relabel randomly chosen disjoint, grid-aligned k x k windows with a random class.

    The replacement class is uniform over all classes, the original included.
    """
    k = spec.window
    if k > mask.rows or k > mask.cols:
        raise ValueError(f"window {k} larger than mask {mask.shape}")
    gr, gc = mask.rows // k, mask.cols // k
    count = window_count(mask.rows, mask.cols, spec)
    if count > gr * gc:
        raise ValueError(f"fraction {spec.fraction} needs {count} windows but the grid holds {gr * gc}")
    rng = np.random.default_rng(spec.seed)
    chosen = rng.choice(gr * gc, size=count, replace=False)
    labels = rng.integers(0, spec.classes, size=count)
    ids = mask.ids.copy()
    for w, c in zip(chosen, labels):
        r0, c0 = (w // gc) * k, (w % gc) * k
        ids[r0:r0 + k, c0:c0 + k] = c
    return LabelMask(ids, max(mask.classes, spec.classes))


def noisify(ds: Dataset, spec: NoiseSpec) -> Dataset:
    """Noisy training copy of ``ds``; image ``i`` uses seed derived from ``(spec.seed, i)``."""
    noisy = []
    for i, m in enumerate(ds.clean_masks):
        sub_seed = int(np.random.SeedSequence([spec.seed, i]).generate_state(1)[0])
        noisy.append(inject_window_noise(m, NoiseSpec(spec.window, spec.fraction, spec.classes, sub_seed)))
    return ds.with_noisy(noisy)


def preprocess_labels(mask: LabelMask, n: int, dt: float) -> LabelMask:
    """One-hot encode, run ``n`` forward heat steps per class, re-threshold by argmax."""
    if n == 0:
        return mask
    smooth = fel_array(mask.one_hot(), dt, n)
    return LabelMask(np.argmax(smooth, axis=0), mask.classes)


def postprocess_predictions(logits: Field, n: int, dt: float) -> LabelMask:
    """``n`` forward heat steps on the logits, then argmax (ties go to the lowest id)."""
    v = fel_array(logits.values, dt, n, logits.spacing) if n else logits.values
    return LabelMask(np.argmax(v, axis=0), max(2, logits.channels))
