"""Sample-quality metrics: Frechet distances, inception score, k-NN precision/recall,
translation equivariance and PSNR."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import ops

PSNR_CAP = 100.0


@dataclass
class FeatureStatistics:
    mean: np.ndarray
    covariance: np.ndarray
    count: int

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


# --- random inception-style extractor ---------------------------------------------

class _InceptionBlock(nn.Module):
    def __init__(self, cin, branch):
        super().__init__()
        self.b1 = nn.Conv2d(cin, branch, 1)
        self.b3 = nn.Sequential(nn.Conv2d(cin, branch, 1), nn.ReLU(), nn.Conv2d(branch, branch, 3, padding=1))
        self.b5 = nn.Sequential(nn.Conv2d(cin, branch, 1), nn.ReLU(), nn.Conv2d(branch, branch, 3, padding=1),
                                nn.ReLU(), nn.Conv2d(branch, branch, 3, padding=1))
        self.bp = nn.Conv2d(cin, branch, 1)

    def forward(self, x):
        pooled = F.avg_pool2d(x, 3, stride=1, padding=1)
        return F.relu(torch.cat([self.b1(x), self.b3(x), self.b5(x), self.bp(pooled)], dim=1))


class RandomInceptionNet(nn.Module):
    """Randomly initialized inception-style network (fixed by ``seed``).

    Taps: ``pool`` (global average pool of the last block), ``spatial``
    (second-shallowest block, first 7 channels pooled to 8x8 and flattened)
    and ``logits``.
    """

    def __init__(self, seed=0, width=32, input_resolution=299, num_classes=1008):
        super().__init__()
        self.seed = seed
        self.input_resolution = input_resolution
        self.name = f"random-inception(seed={seed},width={width},res={input_resolution})"
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.stem = nn.Sequential(nn.Conv2d(3, width, 3, stride=2), nn.ReLU(),
                                      nn.Conv2d(width, width, 3), nn.ReLU(), nn.MaxPool2d(3, 2))
            chans, blocks = width, []
            for i in range(4):
                blocks.append(_InceptionBlock(chans, width * (i + 1) // 2 + width // 2))
                chans = 4 * (width * (i + 1) // 2 + width // 2)
            self.blocks = nn.ModuleList(blocks)
            self.fc = nn.Linear(chans, num_classes)
            for m in self.modules():
                if isinstance(m, (nn.Conv2d, nn.Linear)):
                    nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
                    nn.init.zeros_(m.bias)
        self.pool_dim = chans
        self.requires_grad_(False)
        self.eval()

    @torch.no_grad()
    def forward(self, images):
        x = F.interpolate(images, size=(self.input_resolution,) * 2, mode="bilinear", align_corners=False)
        x = self.stem(x)
        spatial = None
        for i, block in enumerate(self.blocks):
            if i > 0:
                x = F.max_pool2d(x, 2, ceil_mode=True)
            x = block(x)
            if i == 1:
                spatial = F.adaptive_avg_pool2d(x[:, :7], 8).flatten(1)
        pool = x.mean(dim=(2, 3))
        return {"pool": pool, "spatial": spatial, "logits": self.fc(pool)}


@torch.no_grad()
def extract_features(images, extractor, tap="pool", batch_size=200):
    out = []
    for i in range(0, len(images), batch_size):
        out.append(extractor(images[i:i + batch_size])[tap].double().cpu())
    return torch.cat(out).numpy()


def compute_feature_stats(data, extractor=None, tap="pool") -> FeatureStatistics:
    """Mean and biased (1/n) covariance of features.

    ``data`` is an [n, d] feature array, or images when ``extractor`` is given.
    """
    feats = extract_features(data, extractor, tap) if extractor is not None else np.asarray(data, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise ValueError("need at least one feature vector")
    mu = feats.mean(axis=0)
    centered = feats - mu
    sigma = centered.T @ centered / feats.shape[0]
    return FeatureStatistics(mu, (sigma + sigma.T) / 2, feats.shape[0])


def _sqrt_psd(mat):
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def frechet_distance(a: FeatureStatistics, b: FeatureStatistics) -> float:
    """Frechet distance between Gaussian fits.

    The trace of the cross term uses the symmetric form
    sqrt(sqrt(Sa) Sb sqrt(Sa)), whose eigenvalues are clipped at zero.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    root_a = _sqrt_psd(a.covariance)
    inner = root_a @ b.covariance @ root_a
    eig = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_cross = np.sqrt(np.clip(eig, 0, None)).sum()
    diff = a.mean - b.mean
    d = float(diff @ diff + np.trace(a.covariance) + np.trace(b.covariance) - 2 * tr_cross)
    if not math.isfinite(d):
        raise FloatingPointError("Frechet distance is not finite")
    return max(d, 0.0)


def inception_score(class_probabilities) -> float:
    """exp(E_x KL(p(y|x) || p(y)))."""
    p = np.asarray(class_probabilities, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError("expected an [n, C] probability table")
    if np.any(np.abs(p.sum(axis=1) - 1) > 1e-6) or np.any(p < 0):
        raise ValueError("rows must be probability vectors")
    marginal = p.mean(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(marginal)), 0.0)
    return float(np.exp(terms.sum(axis=1).mean()))


def _kth_radii(feats, k, batch=1024):
    radii = np.empty(len(feats))
    t = torch.as_tensor(feats)
    for i in range(0, len(feats), batch):
        d = torch.cdist(t[i:i + batch], t, compute_mode="donot_use_mm_for_euclid_dist")
        # index k: position 0 is the point itself
        radii[i:i + batch] = d.kthvalue(k + 1, dim=1).values.numpy()
    return radii


def _inside(query, ref, radii, batch=1024):
    q, r = torch.as_tensor(query), torch.as_tensor(ref)
    rad = torch.as_tensor(radii)
    hits = np.empty(len(query), dtype=bool)
    for i in range(0, len(query), batch):
        d = torch.cdist(q[i:i + batch], r, compute_mode="donot_use_mm_for_euclid_dist")
        hits[i:i + batch] = (d <= rad[None, :]).any(dim=1).numpy()
    return hits


def precision_recall(real_features, fake_features, k: int = 3) -> tuple[float, float]:
    """k-NN manifold precision and recall."""
    real = np.asarray(real_features, dtype=np.float64)
    fake = np.asarray(fake_features, dtype=np.float64)
    if k >= min(len(real), len(fake)):
        raise ValueError(f"k={k} must be smaller than both set sizes ({len(real)}, {len(fake)})")
    precision = _inside(fake, real, _kth_radii(real, k)).mean()
    recall = _inside(real, fake, _kth_radii(fake, k)).mean()
    return float(precision), float(recall)


def psnr(a, b, data_range: float = 2.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at ``PSNR_CAP`` for identical inputs."""
    a = torch.as_tensor(a).detach().double()
    b = torch.as_tensor(b).detach().double()
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    mse = float((a - b).square().mean())
    return _psnr_from_mse(mse, data_range)


def _psnr_from_mse(mse, data_range):
    if mse <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10 * math.log10(data_range ** 2 / mse))


@torch.no_grad()
def eq_t(net, n_samples: int = 64, max_offset: float | None = None, seed: int = 0,
         mode: str = "integer", batch_size: int = 16) -> float:
    """Translation equivariance in dB.

    Compares synthesis from a translated input grid against the translated
    output of the untranslated grid, on the pixels where both are defined.
    ``mode='integer'`` rounds offsets to whole output pixels;
    ``mode='fractional'`` uses sub-pixel offsets and Lanczos resampling.
    ``net`` must provide ``resolution``, ``random_styles``, ``default_grid``
    and ``synthesize``.
    """
    from .generator import translate_input_grid

    if mode not in ("integer", "fractional"):
        raise ValueError("mode must be 'integer' or 'fractional'")
    res = net.resolution
    max_offset = res / 8 if max_offset is None else max_offset
    gen = torch.Generator().manual_seed(seed + 1)
    ws_all = net.random_styles(n_samples, seed)
    base = net.default_grid()
    err = 0.0
    count = 0.0
    for i in range(0, n_samples, batch_size):
        ws = ws_all[i:i + batch_size]
        orig = net.synthesize(ws, base)
        for j in range(len(ws)):
            t = (torch.rand(2, generator=gen) * 2 - 1) * max_offset
            if mode == "integer":
                t = t.round()
            tx, ty = float(t[0]), float(t[1])
            out = net.synthesize(ws[j:j + 1], translate_input_grid(base, (tx, ty)))
            if mode == "integer":
                ref, mask = ops.integer_translate(orig[j:j + 1], tx, ty)
            else:
                ref, mask = ops.fractional_translate(orig[j:j + 1], tx, ty)
            err += float(((ref.double() - out.double()).square() * mask).sum())
            count += float(mask.sum())
    if count == 0:
        raise ValueError("offsets leave no overlapping region")
    return _psnr_from_mse(err / count, 2.0)
