"""Class embeddings pooled from a feature network, plus their linear projection."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .generator import Z_DIM


class ClassEmbeddingTable(nn.Module):
    """One trainable row per class."""

    def __init__(self, embeddings: torch.Tensor, source: str = "unknown"):
        super().__init__()
        embeddings = torch.as_tensor(embeddings, dtype=torch.float32)
        if embeddings.ndim != 2:
            raise ValueError("embedding table must be 2-D [classes, dim]")
        if not torch.isfinite(embeddings).all():
            raise ValueError("embedding table contains non-finite values")
        self.embeddings = nn.Parameter(embeddings.clone())
        self.source = source

    @property
    def class_count(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def forward(self, labels):
        labels = torch.as_tensor(labels, dtype=torch.long)
        if labels.numel() and (labels.min() < 0 or labels.max() >= self.class_count):
            raise IndexError(f"class label outside [0, {self.class_count})")
        return self.embeddings[labels]


class EmbeddingProjector(nn.Module):
    """Affine map from the embedding dimension to the latent dimension."""

    def __init__(self, in_dim: int, out_dim: int = Z_DIM, normalize: bool = True, trainable: bool = True, seed=None):
        super().__init__()
        gen = torch.Generator().manual_seed(seed) if seed is not None else None
        self.weight = nn.Parameter(torch.randn(in_dim, out_dim, generator=gen) / in_dim ** 0.5)
        self.bias = nn.Parameter(torch.zeros(out_dim))
        self.normalize = normalize
        self.trainable = trainable
        self.requires_grad_(trainable)

    def forward(self, emb):
        if self.normalize:
            emb = F.normalize(emb, dim=-1)
        return emb @ self.weight + self.bias


class ClassConditioner(nn.Module):
    """Shared embedding table with one projector per consumer (generator, discriminator)."""

    def __init__(self, table: ClassEmbeddingTable, z_dim: int = Z_DIM, normalize: bool = True, seed: int = 0):
        super().__init__()
        self.table = table
        self.g_proj = EmbeddingProjector(table.dim, z_dim, normalize, seed=seed)
        self.d_proj = EmbeddingProjector(table.dim, z_dim, normalize, seed=seed + 1)

    def for_generator(self, labels):
        return self.g_proj(self.table(labels))

    def for_discriminator(self, labels):
        # Discriminator gradients stop at the shared table.
        return self.d_proj(self.table(labels).detach())

    def sampler(self, classes=None):
        """Class-vector sampler for :func:`compute_mean_style`."""
        def draw(count, gen):
            if classes is None:
                labels = torch.randint(self.table.class_count, (count,), generator=gen)
            else:
                pool = torch.as_tensor(classes).reshape(-1)
                labels = pool[torch.randint(pool.numel(), (count,), generator=gen)]
            with torch.no_grad():
                return self.for_generator(labels)
        return draw


def embed_class(table: ClassEmbeddingTable, projector: EmbeddingProjector, cls: int) -> torch.Tensor:
    """Projected 64-d vector for one class."""
    if not 0 <= int(cls) < table.class_count:
        raise IndexError(f"class {cls} outside [0, {table.class_count})")
    return projector(table.embeddings[int(cls)])


@torch.no_grad()
def pooled_lowest_features(images, extractor, batch_size=64):
    """Spatially averaged deepest tap of ``extractor`` for each image."""
    from .projector import resize_for

    out = []
    for i in range(0, len(images), batch_size):
        x = resize_for(images[i:i + batch_size], extractor)
        out.append(extractor(x)[-1].mean(dim=(2, 3)).double())
    return torch.cat(out)


def compute_class_embeddings(images, labels, extractor, class_count=None, batch_size=64) -> ClassEmbeddingTable:
    """Per-class mean of pooled deepest-tap features."""
    labels = torch.as_tensor(labels, dtype=torch.long)
    class_count = int(labels.max()) + 1 if class_count is None else class_count
    feats = pooled_lowest_features(images, extractor, batch_size)
    rows = []
    for c in range(class_count):
        sel = labels == c
        if not sel.any():
            raise ValueError(f"class {c} has no images")
        rows.append(feats[sel].mean(0))
    return ClassEmbeddingTable(torch.stack(rows).float(), source=getattr(extractor, "name", "unknown"))
