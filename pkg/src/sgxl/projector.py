"""Frozen feature networks and fixed random projections feeding the discriminators.

Each feature network exposes four taps at strictly decreasing spatial size.
Its features are mixed across channels (random 1x1 convs) and across scales
(random residual 3x3 convs plus bilinear upsampling); none of these weights
is ever optimized.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


class FeatureNetwork(nn.Module):
    """Base class: ``forward`` returns four maps, largest first."""

    name = "feature-net"
    tap_names: tuple[str, ...] = ()

    def __init__(self, input_resolution=224):
        super().__init__()
        self.input_resolution = input_resolution

    def freeze(self):
        self.requires_grad_(False)
        self.eval()
        return self

    def train(self, mode=True):
        # Feature networks stay in evaluation mode.
        return super().train(False)


def _conv(cin, cout, stride=1, k=3):
    return nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2)


class ConvFeatureNetwork(FeatureNetwork):
    """Small CNN with taps at strides 4, 8, 16 and 32."""

    name = "conv"
    tap_names = ("stage1", "stage2", "stage3", "stage4")

    def __init__(self, widths=(16, 24, 40, 64), input_resolution=224, seed=0):
        super().__init__(input_resolution)
        self.widths = tuple(widths)
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.stem = _conv(3, widths[0], stride=2)
            stages, cin = [], widths[0]
            for w in widths:
                stages.append(nn.Sequential(_conv(cin, w, stride=2), nn.SiLU(), _conv(w, w), nn.SiLU()))
                cin = w
            self.stages = nn.ModuleList(stages)
            for m in self.modules():
                if isinstance(m, nn.Conv2d):
                    nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
                    nn.init.zeros_(m.bias)
        self.freeze()

    def forward(self, x):
        x = F.silu(self.stem(x))
        taps = []
        for stage in self.stages:
            x = stage(x)
            taps.append(x)
        return taps


class _Block(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, dim * 2), nn.GELU(), nn.Linear(dim * 2, dim))

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class ViTFeatureNetwork(FeatureNetwork):
    """Small vision transformer; token grids are reassembled at 4x, 2x, 1x and 1/2x."""

    name = "vit"
    tap_names = ("block1", "block2", "block3", "block4")

    def __init__(self, dim=64, heads=4, patch_size=16, input_resolution=224, seed=0):
        super().__init__(input_resolution)
        if input_resolution % patch_size:
            raise ValueError("input resolution must be a multiple of the patch size")
        self.grid = input_resolution // patch_size
        self.widths = (dim,) * 4
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.patch = nn.Conv2d(3, dim, patch_size, stride=patch_size)
            self.pos = nn.Parameter(torch.randn(1, self.grid ** 2, dim) * 0.02)
            self.blocks = nn.ModuleList(_Block(dim, heads) for _ in range(4))
            self.reassemble = nn.ModuleList([
                nn.ConvTranspose2d(dim, dim, 4, stride=4),
                nn.ConvTranspose2d(dim, dim, 2, stride=2),
                nn.Identity(),
                nn.Conv2d(dim, dim, 3, stride=2, padding=1),
            ])
        self.freeze()

    def forward(self, x):
        B = x.shape[0]
        t = self.patch(x).flatten(2).transpose(1, 2) + self.pos
        taps = []
        for block, post in zip(self.blocks, self.reassemble):
            t = block(t)
            m = t.transpose(1, 2).reshape(B, -1, self.grid, self.grid)
            taps.append(post(m))
        return taps


def make_feature_network(name: str, input_resolution=224, seed=0) -> FeatureNetwork:
    if name == "conv":
        return ConvFeatureNetwork(input_resolution=input_resolution, seed=seed)
    if name == "vit":
        patch = 16 if input_resolution % 16 == 0 and input_resolution >= 112 else 8
        return ViTFeatureNetwork(patch_size=patch, input_resolution=input_resolution, seed=seed)
    raise ValueError(f"unknown feature network {name!r} (expected 'conv' or 'vit')")


# --- differentiable augmentation ---------------------------------------------

def _coin(n, p, gen):
    return (torch.rand(n, generator=gen) < p).float().view(n, 1, 1, 1)


def augment(x, gen: torch.Generator, p=0.5, policy=("color", "translation", "cutout")):
    """Per-image random color jitter, integer translation and cutout.

    Transforms are sampled once per image; every op is differentiable in ``x``.
    """
    n, _, h, w = x.shape
    if "color" in policy:
        on = _coin(n, p, gen)
        bright = (torch.rand(n, 1, 1, 1, generator=gen) - 0.5)
        sat = torch.rand(n, 1, 1, 1, generator=gen) * 2
        con = torch.rand(n, 1, 1, 1, generator=gen) + 0.5
        y = x + bright
        mean_c = y.mean(dim=1, keepdim=True)
        y = (y - mean_c) * sat + mean_c
        mean_all = y.mean(dim=(1, 2, 3), keepdim=True)
        y = (y - mean_all) * con + mean_all
        x = on * y + (1 - on) * x
    if "translation" in policy:
        on = _coin(n, p, gen).view(n)
        sx, sy = int(w * 0.125 + 0.5), int(h * 0.125 + 0.5)
        tx = torch.randint(-sx, sx + 1, (n,), generator=gen) * on.long()
        ty = torch.randint(-sy, sy + 1, (n,), generator=gen) * on.long()
        gy, gx = torch.meshgrid(torch.arange(h), torch.arange(w), indexing="ij")
        src_x = gx.unsqueeze(0) - tx.view(n, 1, 1)
        src_y = gy.unsqueeze(0) - ty.view(n, 1, 1)
        valid = ((src_x >= 0) & (src_x < w) & (src_y >= 0) & (src_y < h)).unsqueeze(1).to(x)
        idx = (src_y.clamp(0, h - 1) * w + src_x.clamp(0, w - 1)).view(n, 1, h * w).expand(-1, x.shape[1], -1)
        x = x.flatten(2).gather(2, idx).view_as(x) * valid
    if "cutout" in policy:
        on = _coin(n, p, gen)
        ch, cw = int(h * 0.5 + 0.5), int(w * 0.5 + 0.5)
        cx = torch.randint(0, w + (1 - cw % 2), (n, 1, 1), generator=gen)
        cy = torch.randint(0, h + (1 - ch % 2), (n, 1, 1), generator=gen)
        gy, gx = torch.meshgrid(torch.arange(h), torch.arange(w), indexing="ij")
        inside = ((gx - cx).abs() < cw // 2 + 1) & ((gy - cy).abs() < ch // 2 + 1)
        mask = 1 - inside.unsqueeze(1).to(x) * on
        x = x * mask
    return x


# --- projection -----------------------------------------------------------------

def resize_for(images, net: FeatureNetwork):
    r = net.input_resolution
    if images.shape[-1] == r and images.shape[-2] == r:
        return images
    return F.interpolate(images, size=(r, r), mode="bilinear", align_corners=False)


def extract_feature_pyramid(image, net: FeatureNetwork, augment_images=False, gen=None, p=0.5):
    """Raw four-tap features for ``image`` (optionally augmented) resized to the net's resolution."""
    if image.shape[1] != 3:
        raise ValueError(f"expected 3 channels, got {image.shape[1]}")
    if augment_images:
        image = augment(image, gen if gen is not None else torch.Generator().manual_seed(0), p=p)
    x = resize_for(image, net)
    try:
        taps = net(x)
    except Exception as exc:  # surface the failing network
        raise RuntimeError(f"feature network {net.name!r} (taps {net.tap_names}) failed: {exc}") from exc
    if len(taps) != 4:
        raise RuntimeError(f"feature network {net.name!r} returned {len(taps)} taps, expected 4")
    sizes = [t.shape[-1] for t in taps]
    if any(a <= b for a, b in zip(sizes, sizes[1:])):
        raise RuntimeError(f"feature network {net.name!r} taps are not strictly decreasing in size: {sizes}")
    return taps


@dataclass
class RandomProjectionParams:
    """Fixed weights of the cross-channel and cross-scale mixing."""

    ccm_kernels: list[torch.Tensor]     # [C_k, C_k, 1, 1]
    csm_blocks: list[torch.Tensor]      # [C_k, C_k, 3, 3] residual convs
    csm_links: list[torch.Tensor]       # [C_k, C_{k+1}, 1, 1] deeper -> shallower channel maps
    seed: int

    def tensors(self):
        return [*self.ccm_kernels, *self.csm_blocks, *self.csm_links]


def init_random_projections(feature_shapes, seed: int) -> RandomProjectionParams:
    """Random, reproducible mixing weights for four feature maps.

    ``feature_shapes`` holds channel counts or (C, H, W) tuples, largest map first.
    """
    chans = [int(s if isinstance(s, int) else s[0]) for s in feature_shapes]
    if len(chans) != 4:
        raise ValueError(f"need four feature shapes, got {len(chans)}")
    gen = torch.Generator().manual_seed(seed)

    def rnd(cout, cin, k):
        return torch.randn(cout, cin, k, k, generator=gen) / math.sqrt(cin * k * k)

    ccm = [rnd(c, c, 1) for c in chans]
    csm = [rnd(c, c, 3) * 0.5 for c in chans]
    links = [rnd(chans[k], chans[k + 1], 1) for k in range(3)]
    return RandomProjectionParams(ccm, csm, links, seed)


def project_pyramid(raw_features, params: RandomProjectionParams):
    """Cross-channel then cross-scale mixing; returns four maps, largest first."""
    if len(raw_features) != 4:
        raise ValueError(f"need four raw feature maps, got {len(raw_features)}")
    for k, (f, w) in enumerate(zip(raw_features, params.ccm_kernels)):
        if f.shape[1] != w.shape[1]:
            raise ValueError(f"tap {k} has {f.shape[1]} channels, projection expects {w.shape[1]}")
    mixed = [F.conv2d(f, w) for f, w in zip(raw_features, params.ccm_kernels)]
    out = [None] * 4
    deeper = None
    for k in range(3, -1, -1):
        x = mixed[k]
        if deeper is not None:
            link = F.conv2d(deeper, params.csm_links[k])
            x = x + F.interpolate(link, size=x.shape[-2:], mode="bilinear", align_corners=False)
        x = x + F.conv2d(x, params.csm_blocks[k], padding=1)
        out[k] = deeper = x
    return out


class FeatureProjector(nn.Module):
    """Frozen feature network plus its random projections."""

    def __init__(self, net: FeatureNetwork, seed=0):
        super().__init__()
        self.net = net.freeze()
        with torch.no_grad():
            probe = net(torch.zeros(1, 3, net.input_resolution, net.input_resolution))
        self.shapes = [tuple(t.shape[1:]) for t in probe]
        params = init_random_projections(self.shapes, seed)
        self.seed = seed
        for kind, ts in (("ccm", params.ccm_kernels), ("csm", params.csm_blocks), ("link", params.csm_links)):
            for i, t in enumerate(ts):
                self.register_buffer(f"{kind}{i}", t)

    @property
    def params(self) -> RandomProjectionParams:
        return RandomProjectionParams([getattr(self, f"ccm{i}") for i in range(4)],
                                      [getattr(self, f"csm{i}") for i in range(4)],
                                      [getattr(self, f"link{i}") for i in range(3)], self.seed)

    def forward(self, images, augment_images=False, gen=None, p=0.5):
        raw = extract_feature_pyramid(images, self.net, augment_images, gen, p)
        return project_pyramid(raw, self.params)
