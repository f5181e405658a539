"""Small image classifier used for guidance, class inference and evaluation."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class ToyClassifier(nn.Module):
    """CNN returning class probabilities for images in [-1, 1]."""

    def __init__(self, num_classes: int, width: int = 32, input_resolution: int = 32, seed: int = 0):
        super().__init__()
        self.num_classes = num_classes
        self.input_resolution = input_resolution
        self.width = width
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.body = nn.Sequential(
                nn.Conv2d(3, width, 3, padding=1), nn.SiLU(), nn.AvgPool2d(2),
                nn.Conv2d(width, width * 2, 3, padding=1), nn.SiLU(), nn.AvgPool2d(2),
                nn.Conv2d(width * 2, width * 2, 3, padding=1), nn.SiLU(),
            )
            self.head = nn.Linear(width * 2, num_classes)

    def spec(self) -> dict:
        return {"num_classes": self.num_classes, "width": self.width, "input_resolution": self.input_resolution}

    def logits(self, images):
        x = F.interpolate(images, size=(self.input_resolution,) * 2, mode="bilinear", align_corners=False)
        return self.head(self.body(x).mean(dim=(2, 3)))

    def forward(self, images):
        return self.logits(images).softmax(dim=1)


def train_classifier(images, labels, num_classes=None, epochs=5, batch_size=64, lr=2e-3, seed=0,
                     noise=0.05) -> ToyClassifier:
    """Fit a :class:`ToyClassifier`; returns it frozen in eval mode."""
    labels = torch.as_tensor(labels, dtype=torch.long)
    num_classes = num_classes or int(labels.max()) + 1
    clf = ToyClassifier(num_classes, seed=seed)
    opt = torch.optim.Adam(clf.parameters(), lr=lr)
    gen = torch.Generator().manual_seed(seed)
    n = len(images)
    for _ in range(epochs):
        order = torch.randperm(n, generator=gen)
        for i in range(0, n, batch_size):
            idx = order[i:i + batch_size]
            x = images[idx] + noise * torch.randn(images[idx].shape, generator=gen)
            loss = F.cross_entropy(clf.logits(x), labels[idx])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
    clf.requires_grad_(False)
    return clf.eval()


@torch.no_grad()
def accuracy(clf, images, labels, batch_size=256) -> float:
    labels = torch.as_tensor(labels)
    hits = 0
    for i in range(0, len(images), batch_size):
        hits += int((clf.logits(images[i:i + batch_size]).argmax(1) == labels[i:i + batch_size]).sum())
    return hits / len(images)
