"""Style-based generator with Fourier-feature input and alias-suppressing layers."""
from __future__ import annotations

import copy
from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import ops
from .layerspec import GrowthStage, LayerSpec

Z_DIM = 64
W_DIM = 512


def normalize_2nd_moment(x, dim=1, eps=1e-8):
    return x * (x.square().mean(dim=dim, keepdim=True) + eps).rsqrt()


class FullyConnected(nn.Module):
    """Linear layer with equalized learning rate."""

    def __init__(self, in_features, out_features, activation="linear", lr_multiplier=1.0,
                 weight_init=1.0, bias_init=0.0):
        super().__init__()
        self.activation = activation
        self.weight = nn.Parameter(torch.randn(out_features, in_features) * (weight_init / lr_multiplier))
        bias = torch.as_tensor(np.broadcast_to(np.asarray(bias_init, dtype=np.float32), [out_features]).copy())
        self.bias = nn.Parameter(bias / lr_multiplier)
        self.weight_gain = lr_multiplier / np.sqrt(in_features)
        self.bias_gain = lr_multiplier

    def forward(self, x):
        x = F.linear(x, self.weight * self.weight_gain, self.bias * self.bias_gain)
        if self.activation == "lrelu":
            x = F.leaky_relu(x, 0.2) * np.sqrt(2)
        return x


class MappingNetwork(nn.Module):
    def __init__(self, z_dim=Z_DIM, c_dim=Z_DIM, w_dim=W_DIM, num_layers=2, lr_multiplier=0.01):
        super().__init__()
        self.z_dim, self.c_dim, self.w_dim = z_dim, c_dim, w_dim
        dims = [z_dim + c_dim] + [w_dim] * num_layers
        self.fcs = nn.ModuleList(
            FullyConnected(a, b, activation="lrelu", lr_multiplier=lr_multiplier)
            for a, b in zip(dims[:-1], dims[1:])
        )

    def forward(self, z, class_vec):
        if z.shape[-1] != self.z_dim:
            raise ValueError(f"latent has dimension {z.shape[-1]}, expected {self.z_dim}")
        if class_vec.shape[-1] != self.c_dim:
            raise ValueError(f"class vector has dimension {class_vec.shape[-1]}, expected {self.c_dim}")
        x = torch.cat([normalize_2nd_moment(z), normalize_2nd_moment(class_vec)], dim=1)
        for fc in self.fcs:
            x = fc(x)
        return x


@dataclass(frozen=True)
class FourierInputGrid:
    """Sinusoidal input of the synthesis network.

    ``translation`` is in output pixels (x right, y down); ``extent`` scales
    the sampled area, so values > 1 extrapolate beyond the canonical canvas.
    """

    frequencies: torch.Tensor   # [C, 2] cycles per unit (the canonical image spans one unit)
    phases: torch.Tensor        # [C] in cycles
    extent: float = 1.0
    translation: tuple[float, float] = (0.0, 0.0)


def translate_input_grid(grid: FourierInputGrid, offset=(0.0, 0.0), scale: float = 1.0) -> FourierInputGrid:
    """Shift the grid by ``offset`` output pixels and enlarge its extent by ``scale``."""
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    tx, ty = grid.translation
    return replace(grid, translation=(tx + float(offset[0]), ty + float(offset[1])), extent=grid.extent * scale)


def _scaled(n: float, extent: float) -> int:
    return int(round(n * extent))


class SynthesisInput(nn.Module):
    def __init__(self, w_dim, channels, sampling_rate, bandwidth, margin):
        super().__init__()
        self.channels = channels
        self.sampling_rate = sampling_rate
        self.bandwidth = bandwidth
        self.margin = margin

        # Random frequencies inside a disc of radius ``bandwidth``.
        freqs = torch.randn(channels, 2)
        radii = freqs.square().sum(dim=1, keepdim=True).sqrt()
        freqs /= radii * radii.square().exp().pow(0.25)
        freqs *= bandwidth
        self.register_buffer("freqs", freqs)
        self.register_buffer("phases", torch.rand(channels) - 0.5)
        self.weight = nn.Parameter(torch.randn(channels, channels))
        # Learned per-sample translation (in units of the canvas), starts at zero.
        self.affine = FullyConnected(w_dim, 2, weight_init=0.0, bias_init=0.0)

    def size(self, extent=1.0):
        return _scaled(self.sampling_rate, extent) + 2 * self.margin

    def forward(self, w, grid: FourierInputGrid, resolution: int):
        size = self.size(grid.extent)
        t = self.affine(w) + torch.tensor(grid.translation, dtype=w.dtype) / resolution  # [B, 2]
        freqs = grid.frequencies.to(w.dtype)
        phases = grid.phases.to(w.dtype).unsqueeze(0) - t @ freqs.t()                    # [B, C]

        coords = (torch.arange(size, dtype=w.dtype) + 0.5 - size / 2) / self.sampling_rate
        gy, gx = torch.meshgrid(coords, coords, indexing="ij")
        xy = torch.stack([gx, gy], dim=-1)                                               # [H, W, 2]
        x = torch.einsum("hwk,ck->hwc", xy, freqs).unsqueeze(0) + phases[:, None, None, :]
        x = torch.sin(x * (2 * np.pi))
        x = x @ (self.weight / np.sqrt(self.channels)).t()
        return x.permute(0, 3, 1, 2).contiguous()


class SynthesisLayer(nn.Module):
    """Modulated convolution followed by an up/downsampled leaky ReLU."""

    def __init__(self, w_dim, in_spec: LayerSpec, out_spec: LayerSpec, in_channels, out_channels,
                 is_torgb=False, crop_margin=False, margin=10, conv_kernel=3, filter_size=6,
                 lrelu_upsampling=2, use_filters=True, conv_clamp=None, magnitude_ema_beta=0.999):
        super().__init__()
        self.in_spec, self.out_spec = in_spec, out_spec
        self.is_torgb = is_torgb
        self.crop_margin = crop_margin
        self.margin = margin
        self.in_channels, self.out_channels = in_channels, out_channels
        self.conv_kernel = 1 if is_torgb else conv_kernel
        self.conv_clamp = conv_clamp
        self.magnitude_ema_beta = magnitude_ema_beta
        self.frozen = False

        self.affine = FullyConnected(w_dim, in_channels, bias_init=1.0)
        self.weight = nn.Parameter(torch.randn(out_channels, in_channels, self.conv_kernel, self.conv_kernel))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        self.register_buffer("magnitude_ema", torch.ones([]))

        in_sr, out_sr = in_spec.sampling_rate, out_spec.sampling_rate
        self.tmp_sampling_rate = max(in_sr, out_sr) * (1 if is_torgb else lrelu_upsampling)
        self.up_factor = int(round(self.tmp_sampling_rate / in_sr))
        self.down_factor = int(round(self.tmp_sampling_rate / out_sr))
        if use_filters:
            self.up_taps = filter_size * self.up_factor if self.up_factor > 1 and not is_torgb else 1
            self.down_taps = filter_size * self.down_factor if self.down_factor > 1 and not is_torgb else 1
            up_f = ops.design_lowpass_filter(self.up_taps, in_spec.cutoff, in_spec.half_width * 2,
                                             self.tmp_sampling_rate)
            down_f = ops.design_lowpass_filter(self.down_taps, out_spec.cutoff, out_spec.half_width * 2,
                                               self.tmp_sampling_rate)
        else:
            # Aliasing baseline: nearest-neighbour upsampling and plain decimation.
            self.up_taps = self.up_factor
            self.down_taps = 1
            up_f, down_f = ops.box_filter(self.up_taps), None
        self.register_buffer("up_filter", up_f if up_f is not None else torch.ones(0))
        self.register_buffer("down_filter", down_f if down_f is not None else torch.ones(0))

    def out_size(self, resolution, extent=1.0):
        if self.crop_margin or self.is_torgb:
            return _scaled(resolution, extent)
        return _scaled(self.out_spec.sampling_rate, extent) + 2 * self.margin

    def _padding(self, in_size, out_size):
        total = (out_size - 1) * self.down_factor + 1
        total -= (in_size + self.conv_kernel - 1) * self.up_factor
        total += self.up_taps + self.down_taps - 2
        lo = (total + self.up_factor) // 2
        hi = total - lo
        return [lo, hi, lo, hi]

    def forward(self, x, w, resolution, extent=1.0, update_emas=False):
        if update_emas and not self.frozen:
            cur = x.detach().float().square().mean()
            self.magnitude_ema.copy_(cur.lerp(self.magnitude_ema, self.magnitude_ema_beta))
        input_gain = self.magnitude_ema.rsqrt()

        styles = self.affine(w)
        weight = self.weight
        if self.is_torgb:
            styles = styles / np.sqrt(self.in_channels * self.conv_kernel ** 2)
        else:
            weight = weight * weight.square().mean([1, 2, 3], keepdim=True).rsqrt()
            styles = normalize_2nd_moment(styles)

        x = x * styles[:, :, None, None]
        x = F.conv2d(x, weight, padding=self.conv_kernel - 1)
        if not self.is_torgb:
            w_mod = weight.unsqueeze(0) * styles[:, None, :, None, None]
            dcoefs = (w_mod.square().sum(dim=[2, 3, 4]) + 1e-8).rsqrt()
            x = x * dcoefs[:, :, None, None]
        x = x * input_gain

        pad = self._padding(x.shape[-1] - (self.conv_kernel - 1), self.out_size(resolution, extent))
        fu = self.up_filter if self.up_filter.numel() else None
        fd = self.down_filter if self.down_filter.numel() else None
        if self.is_torgb:
            return ops.filtered_lrelu(x, None, None, self.bias, padding=pad, gain=1, slope=1, clamp=self.conv_clamp)
        return ops.filtered_lrelu(x, fu, fd, self.bias, up=self.up_factor, down=self.down_factor,
                                  padding=pad, gain=np.sqrt(2), slope=0.2, clamp=self.conv_clamp)


def layer_channels(specs, channel_base, channel_max):
    return [int(np.rint(min((channel_base / 2) / s.cutoff, channel_max))) for s in specs]


class GeneratorNet(nn.Module):
    """Mapping network + synthesis network for one growth stage.

    One style vector per synthesis layer: the Fourier input uses the first
    style and the RGB projection reuses the last.
    """

    def __init__(self, specs: list[LayerSpec], resolution: int, *, z_dim=Z_DIM, c_dim=Z_DIM, w_dim=W_DIM,
                 channel_base=8192, channel_max=256, margin=10, mapping_layers=2, use_filters=True,
                 output_scale=0.25, seed=0, frozen=()):
        super().__init__()
        if len(specs) < 2:
            raise ValueError("a synthesis network needs at least two layers")
        self.config = dict(resolution=int(resolution), z_dim=z_dim, c_dim=c_dim, w_dim=w_dim,
                           channel_base=channel_base, channel_max=channel_max, margin=margin,
                           mapping_layers=mapping_layers, use_filters=use_filters,
                           output_scale=output_scale, seed=seed)
        self.specs = list(specs)
        self.resolution = int(resolution)
        self.z_dim, self.c_dim, self.w_dim = z_dim, c_dim, w_dim
        self.output_scale = output_scale
        channels = layer_channels(self.specs, channel_base, channel_max)

        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.mapping = MappingNetwork(z_dim, c_dim, w_dim, mapping_layers)
            self.input = SynthesisInput(w_dim, channels[0], self.specs[0].sampling_rate, self.specs[0].cutoff, margin)
            self.layers = nn.ModuleList(self._make_layer(i, channels) for i in range(len(self.specs)))
            self.torgb = self._make_torgb(channels)
        self.frozen_modules: set[str] = set()
        for name in frozen:
            self.freeze(name)

    # construction helpers --------------------------------------------------

    def _make_layer(self, i, channels):
        prev = max(i - 1, 0)
        c = self.config
        return SynthesisLayer(c["w_dim"], self.specs[prev], self.specs[i], channels[prev], channels[i],
                              crop_margin=(i == len(self.specs) - 1), margin=c["margin"],
                              use_filters=c["use_filters"])

    def _make_torgb(self, channels):
        return SynthesisLayer(self.config["w_dim"], self.specs[-1], self.specs[-1], channels[-1], 3,
                              is_torgb=True, margin=self.config["margin"])

    def freeze(self, name: str):
        """Exclude a sub-module (``mapping``, ``input`` or ``layers.<i>``) from training."""
        module = self.get_submodule(name)
        module.requires_grad_(False)
        for m in module.modules():
            if isinstance(m, SynthesisLayer):
                m.frozen = True
        self.frozen_modules.add(name)

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    # properties --------------------------------------------------------------

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    @property
    def num_ws(self) -> int:
        return len(self.layers)

    def default_grid(self) -> FourierInputGrid:
        return FourierInputGrid(self.input.freqs, self.input.phases)

    # forward passes ----------------------------------------------------------

    def map_latent(self, z, class_vec):
        return self.mapping(z, class_vec)

    def broadcast(self, w):
        if w.ndim == 2:
            return w.unsqueeze(1).expand(-1, self.num_ws, -1)
        if w.ndim != 3 or w.shape[1] != self.num_ws:
            raise ValueError(f"expected {self.num_ws} styles per sample, got shape {tuple(w.shape)}")
        return w

    def synthesize(self, ws, grid: FourierInputGrid | None = None, update_emas=False, return_features=False):
        """Render images in [-1, 1] from one style per layer (or a broadcast [B, w_dim] style)."""
        ws = self.broadcast(ws)
        grid = grid if grid is not None else self.default_grid()
        x = self.input(ws[:, 0], grid, self.resolution)
        feats = []
        for i, layer in enumerate(self.layers):
            x = layer(x, ws[:, i], self.resolution, grid.extent, update_emas=update_emas)
            feats.append(x)
        x = self.torgb(x, ws[:, -1], self.resolution, grid.extent, update_emas=update_emas)
        img = torch.tanh(x * self.output_scale)
        return (img, feats) if return_features else img

    def forward(self, z, class_vec, psi=1.0, w_avg=None, grid=None):
        w = self.map_latent(z, class_vec)
        if psi != 1:
            if w_avg is None:
                raise ValueError("truncation requires a mean style")
            w = truncate_style(w, w_avg, psi)
        return self.synthesize(w, grid)

    def random_styles(self, n, seed=0, class_vec=None):
        gen = torch.Generator().manual_seed(seed)
        z = torch.randn(n, self.z_dim, generator=gen)
        if class_vec is None:
            class_vec = torch.randn(n, self.c_dim, generator=gen)
        with torch.no_grad():
            return self.map_latent(z, class_vec)

    @torch.no_grad()
    def calibrate_magnitudes(self, n=16, seed=0):
        """Set the input-gain estimate of every trainable layer from one batch."""
        ws = self.broadcast(self.random_styles(n, seed))
        x = self.input(ws[:, 0], self.default_grid(), self.resolution)
        for i, layer in enumerate([*self.layers, self.torgb]):
            if not layer.frozen:
                layer.magnitude_ema.copy_(x.square().mean())
            x = layer(x, ws[:, min(i, self.num_ws - 1)], self.resolution)


def truncate_style(w, w_avg, psi):
    """Pull ``w`` towards ``w_avg``: ``w_avg + psi * (w - w_avg)``.

    ``lerp`` keeps both endpoints exact (psi=1 returns ``w``, psi=0 ``w_avg``).
    """
    w_avg = torch.as_tensor(w_avg, dtype=w.dtype).expand_as(w)
    return torch.lerp(w_avg, w, float(psi))


@torch.no_grad()
def compute_mean_style(net: GeneratorNet, n: int = 10000, class_sampler=None, seed=0, batch_size=1000):
    """Empirical mean of mapped styles over ``n`` random (z, class) draws.

    ``class_sampler(count, generator)`` returns ``[count, c_dim]`` class vectors.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    gen = torch.Generator().manual_seed(seed)
    total = torch.zeros(net.w_dim, dtype=torch.float64)
    done = 0
    while done < n:
        k = min(batch_size, n - done)
        z = torch.randn(k, net.z_dim, generator=gen)
        c = class_sampler(k, gen) if class_sampler is not None else torch.zeros(k, net.c_dim)
        total += net.map_latent(z, c).double().sum(0)
        done += k
    return (total / n).float()


def style_mix(net: GeneratorNet, w_a, w_b, split: int, grid=None):
    """Layers below ``split`` take ``w_a``, the rest ``w_b``."""
    if not 0 <= split <= net.num_ws:
        raise ValueError(f"split {split} outside [0, {net.num_ws}]")
    ws = torch.cat([net.broadcast(w_a)[:, :split], net.broadcast(w_b)[:, split:]], dim=1)
    return net.synthesize(ws, grid)


def grow_generator(net: GeneratorNet, next_stage: GrowthStage, next_specs: list[LayerSpec], seed=None) -> GeneratorNet:
    """Drop the two critical layers, append fresh ones, freeze the stem.

    The returned network shares no tensors with ``net``; kept layers,
    the Fourier input and the mapping network are copied and frozen.
    """
    if next_stage.resolution != 2 * net.resolution:
        raise ValueError(f"next stage resolution {next_stage.resolution} is not 2 x {net.resolution}")
    if len(next_specs) != next_stage.layer_count:
        raise ValueError(f"{len(next_specs)} specs given for a {next_stage.layer_count}-layer stage")
    kept = net.layer_count - next_stage.layers_cut
    if kept + next_stage.layers_added != next_stage.layer_count:
        raise ValueError("stage layer counts do not match the current network")
    if list(next_specs[:kept]) != net.specs[:kept]:
        raise ValueError("specs of kept layers differ from the current network")

    cfg = dict(net.config)
    cfg.pop("resolution")
    cfg["seed"] = cfg["seed"] + 1 if seed is None else seed
    grown = GeneratorNet(next_specs, next_stage.resolution, **cfg)
    grown.mapping = copy.deepcopy(net.mapping)
    grown.input = copy.deepcopy(net.input)
    for i in range(kept):
        grown.layers[i] = copy.deepcopy(net.layers[i])
    for name in ["mapping", "input", *[f"layers.{i}" for i in range(kept)]]:
        grown.freeze(name)
    return grown
