"""Labeled image ingestion and a synthetic two-class shapes dataset."""
from __future__ import annotations

import logging
import os
from pathlib import Path

import numpy as np
import torch
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp", ".tif", ".tiff"}


def center_crop_resize(img: Image.Image, resolution: int) -> np.ndarray:
    img = img.convert("RGB")
    w, h = img.size
    s = min(w, h)
    left, top = (w - s) // 2, (h - s) // 2
    img = img.crop((left, top, left + s, top + s))
    if s != resolution:
        img = img.resize((resolution, resolution), Image.BICUBIC if s < resolution else Image.LANCZOS)
    return np.asarray(img, dtype=np.uint8)


class LabeledImageSource:
    """In-memory labeled images; labels are class-directory ordinals.

    Images are stored once (center-cropped to a square) and resized on
    demand to the active stage resolution.
    """

    def __init__(self, images: list[np.ndarray], labels, class_names=None, seed=0, skipped=0):
        if len(images) == 0:
            raise ValueError("dataset is empty")
        self._images = images
        self.labels = torch.as_tensor(np.asarray(labels), dtype=torch.long)
        self.class_count = int(self.labels.max()) + 1
        self.class_names = class_names or [str(i) for i in range(self.class_count)]
        for c in range(self.class_count):
            if not (self.labels == c).any():
                raise ValueError(f"class {self.class_names[c]!r} has no images")
        self.seed = seed
        self.skipped = skipped
        self._cache: dict[int, torch.Tensor] = {}

    def __len__(self):
        return len(self._images)

    def images_at(self, resolution: int) -> torch.Tensor:
        """All images as a float tensor in [-1, 1], shape [N, 3, r, r]."""
        if resolution not in self._cache:
            arr = np.stack([center_crop_resize(Image.fromarray(im), resolution) for im in self._images])
            t = torch.as_tensor(arr).permute(0, 3, 1, 2).float() / 127.5 - 1
            self._cache[resolution] = t
        return self._cache[resolution]

    def epoch_order(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.seed, epoch]).permutation(len(self))

    def batches(self, batch_size: int, resolution: int, start_epoch=0):
        """Endless stream of (images, labels) batches in seeded epoch order."""
        data = self.images_at(resolution)
        epoch = start_epoch
        while True:
            order = self.epoch_order(epoch)
            for i in range(0, len(order) - batch_size + 1, batch_size):
                idx = torch.as_tensor(order[i:i + batch_size])
                yield data[idx], self.labels[idx]
            epoch += 1


def _load_folder(root: Path):
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ValueError(f"{root} contains no class subdirectories")
    images, labels, skipped = [], [], 0
    for label, d in enumerate(class_dirs):
        files = sorted(f for f in d.iterdir() if f.suffix.lower() in IMAGE_SUFFIXES)
        count = 0
        for f in files:
            try:
                with Image.open(f) as im:
                    arr = np.asarray(im.convert("RGB"))
            except OSError as exc:
                log.warning("skipping unreadable image %s: %s", f, exc)
                skipped += 1
                continue
            s = min(arr.shape[:2])
            images.append(center_crop_resize(Image.fromarray(arr), s))
            labels.append(label)
            count += 1
        if count == 0:
            raise ValueError(f"class {d.name!r} has no readable images")
    if skipped:
        log.warning("skipped %d unreadable images", skipped)
    return images, labels, [d.name for d in class_dirs], skipped


def ingest_dataset(path, seed: int = 0) -> LabeledImageSource:
    """Load a directory of per-class subdirectories, or an ``.npz`` archive
    holding ``images`` (N, H, W, 3 uint8) and ``labels``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset {path} does not exist")
    if path.is_file():
        with np.load(path) as z:
            images = [center_crop_resize(Image.fromarray(im), min(im.shape[:2])) for im in z["images"]]
            labels = z["labels"]
            names = [str(n) for n in z["class_names"]] if "class_names" in z else None
        return LabeledImageSource(images, labels, names, seed)
    images, labels, names, skipped = _load_folder(path)
    return LabeledImageSource(images, labels, names, seed, skipped)


# --- synthetic shapes ------------------------------------------------------------

def make_shapes(n_per_class: int, resolution: int = 64, seed: int = 0, supersample: int = 4):
    """Two classes: warm-colored discs (0) and cool-colored squares (1).

    Returns uint8 images [N, r, r, 3] and labels [N].
    """
    rng = np.random.default_rng(seed)
    big = resolution * supersample
    yy, xx = (np.mgrid[0:big, 0:big] + 0.5) / big
    images, labels = [], []
    for label in (0, 1):
        for _ in range(n_per_class):
            bg = rng.uniform(0.05, 0.2) * np.ones(3)
            size = rng.uniform(0.2, 0.32)
            cx, cy = rng.uniform(0.5 - 0.15, 0.5 + 0.15, size=2)
            if label == 0:
                color = np.array([rng.uniform(0.8, 1.0), rng.uniform(0.3, 0.6), rng.uniform(0.0, 0.2)])
                mask = (xx - cx) ** 2 + (yy - cy) ** 2 < size ** 2
            else:
                color = np.array([rng.uniform(0.0, 0.2), rng.uniform(0.4, 0.7), rng.uniform(0.8, 1.0)])
                mask = (np.abs(xx - cx) < size * 0.85) & (np.abs(yy - cy) < size * 0.85)
            img = np.where(mask[..., None], color, bg)
            img = img.reshape(resolution, supersample, resolution, supersample, 3).mean(axis=(1, 3))
            images.append(np.clip(img * 255 + 0.5, 0, 255).astype(np.uint8))
            labels.append(label)
    return np.stack(images), np.asarray(labels)


def write_image_folder(root, images, labels, class_names=("disc", "square")):
    root = Path(root)
    for i, (im, lab) in enumerate(zip(images, labels)):
        d = root / class_names[int(lab)]
        os.makedirs(d, exist_ok=True)
        Image.fromarray(im).save(d / f"{i:06d}.png")
    return root
