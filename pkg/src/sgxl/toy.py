"""Desk-scale configuration: two-class shapes, 16 -> 32 px, small networks.

Image-count thresholds (blur, path-length start) are scaled down so that a
run of a few tens of thousands of images passes through every phase.
"""
from __future__ import annotations

import copy

import torch

from .classifier import train_classifier
from .config import RunConfig, config_from_dict
from .data import LabeledImageSource, make_shapes
from .training import Trainer

TOY_SETTINGS = {
    "schedule": {"start_resolution": 16, "final_resolution": 32, "batch_divisor": 64,
                 "max_images_per_stage": 25_600},
    "generator": {"channel_base": 256, "channel_max": 16, "margin": 4, "w_dim": 128, "ema_images": 2_000},
    "discriminator": {"width": 32, "blur_cutoff": 2_000},
    "loss": {"pl_threshold": 6_400},
    "projector": {"input_resolution": 64},
    "eval": {"extractor_resolution": 64, "num_samples": 256, "interval_images": 1_600,
             "plateau_patience": 3},
}


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def toy_config(**overrides) -> RunConfig:
    """Toy run config; keyword overrides are merged section by section."""
    return config_from_dict(_merge(TOY_SETTINGS, overrides))


def toy_dataset(n_per_class: int = 256, resolution: int = 32, seed: int = 0) -> LabeledImageSource:
    images, labels = make_shapes(n_per_class, resolution, seed=seed)
    return LabeledImageSource(list(images), labels, ["disc", "square"], seed=seed)


def shapes_tensor(n_per_class: int, resolution: int = 32, seed: int = 0):
    images, labels = make_shapes(n_per_class, resolution, seed=seed)
    return torch.as_tensor(images).permute(0, 3, 1, 2).float() / 127.5 - 1, torch.as_tensor(labels)


def held_out_classifier(n_per_class: int = 200, seed: int = 99, epochs: int = 3):
    """Classifier fit on shapes drawn with a seed the generator never sees."""
    x, y = shapes_tensor(n_per_class, 32, seed)
    return train_classifier(x, y, 2, epochs=epochs, seed=seed)


def train_toy(cfg: RunConfig | None = None, dataset=None, checkpoint=None, log_path=None, on_eval=None) -> Trainer:
    """Run every stage of the toy schedule; optionally save a checkpoint."""
    cfg = cfg or toy_config()
    dataset = dataset or toy_dataset(seed=cfg.seed)
    guide = train_classifier(dataset.images_at(32), dataset.labels, dataset.class_count, epochs=3, seed=cfg.seed)
    trainer = Trainer(cfg, dataset, classifier=guide, log_path=log_path)
    trainer.fit(on_eval=on_eval)
    if checkpoint is not None:
        trainer.save_checkpoint(checkpoint)
    return trainer
