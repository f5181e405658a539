"""Spectrally normalized multi-scale discriminator heads with projection conditioning."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import ops
from .generator import Z_DIM
from .projector import augment

SIGMA_FLOOR = 1e-8


def spectral_normalize(weight, u, n_iter: int = 1):
    """Divide ``weight`` by a power-iteration estimate of its top singular value.

    ``u`` (left singular-vector estimate, shape [out]) is updated in place.
    Returns ``(normalized_weight, sigma)``; gradients flow through ``weight`` only.
    """
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    mat = weight.reshape(weight.shape[0], -1)
    with torch.no_grad():
        uu = u
        for _ in range(n_iter):
            v = F.normalize(mat.t() @ uu, dim=0, eps=1e-12)
            uu = F.normalize(mat @ v, dim=0, eps=1e-12)
        u.copy_(uu)
    sigma = torch.dot(uu, mat @ v).clamp_min(SIGMA_FLOOR)
    return weight / sigma, sigma


class SNConv2d(nn.Module):
    def __init__(self, cin, cout, k=3, stride=1, n_iter=1):
        super().__init__()
        self.stride, self.padding, self.n_iter = stride, k // 2, n_iter
        self.weight = nn.Parameter(torch.empty(cout, cin, k, k))
        nn.init.kaiming_normal_(self.weight, a=0.2)
        self.bias = nn.Parameter(torch.zeros(cout))
        self.register_buffer("u", F.normalize(torch.randn(cout), dim=0))

    def forward(self, x):
        if self.training:
            w, _ = spectral_normalize(self.weight, self.u, self.n_iter)
        else:
            mat = self.weight.reshape(self.weight.shape[0], -1)
            with torch.no_grad():
                v = F.normalize(mat.t() @ self.u, dim=0, eps=1e-12)
            w = self.weight / torch.dot(self.u, mat @ v).clamp_min(SIGMA_FLOOR)
        return F.conv2d(x, w, self.bias, stride=self.stride, padding=self.padding)


class DiscriminatorHead(nn.Module):
    """Conv stack on one feature map; spatial logits plus a class-projection term."""

    def __init__(self, in_channels, in_size, depth, c_dim=Z_DIM, width=64, min_size=4):
        super().__init__()
        if depth < 2:
            raise ValueError("head depth must be >= 2")
        self.depth = depth
        layers, cin, size = [], in_channels, in_size
        for _ in range(depth - 1):
            stride = 2 if size > min_size else 1
            layers.append(SNConv2d(cin, width, 3, stride))
            size = (size + stride - 1) // stride
            cin = width
        self.body = nn.ModuleList(layers)
        self.out = SNConv2d(width, 1, 1)
        self.embed = nn.Linear(c_dim, width, bias=False)

    def features(self, x):
        for layer in self.body:
            x = F.leaky_relu(layer(x), 0.2)
        return x

    def forward(self, x, class_vec=None):
        h = self.features(x)
        logits = self.out(h)
        if class_vec is not None:
            proj = self.embed(class_vec)                      # [B, width]
            logits = logits + (h * proj[:, :, None, None]).sum(dim=1, keepdim=True)
        return logits


class MultiScaleDiscriminator(nn.Module):
    """Four independent heads; larger maps get deeper heads (4 to 7 layers)."""

    def __init__(self, shapes, c_dim=Z_DIM, width=64):
        super().__init__()
        if len(shapes) != 4:
            raise ValueError("need four feature map shapes")
        order = sorted(range(4), key=lambda k: shapes[k][-1])
        depth = {k: 4 + rank for rank, k in enumerate(order)}
        self.heads = nn.ModuleList(
            DiscriminatorHead(shapes[k][0], shapes[k][-1], depth[k], c_dim, width) for k in range(4))

    def forward(self, pyramid, class_vec=None):
        if len(pyramid) != len(self.heads):
            raise ValueError(f"pyramid has {len(pyramid)} maps for {len(self.heads)} heads")
        return [head(f, class_vec) for head, f in zip(self.heads, pyramid)]


def discriminate(pyramid, class_vec, disc: MultiScaleDiscriminator):
    return disc(pyramid, class_vec)


def blur_for_warmup(image, images_seen: int, cutoff: int = 200_000, sigma: float = 2.0, ramp: bool = False):
    """Gaussian blur during the first ``cutoff`` images, identity afterwards.

    With ``ramp`` the blur strength decays linearly to zero instead of
    switching off at once.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if images_seen >= cutoff or sigma == 0:
        return image
    s = sigma * (1 - images_seen / cutoff) if ramp else sigma
    return ops.gaussian_blur(image, s)


class ProjectedDiscriminator(nn.Module):
    """Feature projectors (frozen) paired with trainable head sets, one per feature network."""

    def __init__(self, projectors, c_dim=Z_DIM, width=64, seed=0):
        super().__init__()
        self.projectors = nn.ModuleList(projectors)
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.discs = nn.ModuleList(MultiScaleDiscriminator(p.shapes, c_dim, width) for p in projectors)

    def trainable_parameters(self):
        return [p for p in self.discs.parameters() if p.requires_grad]

    def forward(self, images, class_vec, augment_images=False, gen=None, p=0.5):
        """Logits per feature network: a list of lists of four maps."""
        if augment_images:
            # One sampled transform per image, shared by every feature network.
            images = augment(images, gen if gen is not None else torch.Generator().manual_seed(0), p=p)
        out = []
        for proj, disc in zip(self.projectors, self.discs):
            pyramid = proj(images)
            out.append(disc(pyramid, class_vec))
        return out
