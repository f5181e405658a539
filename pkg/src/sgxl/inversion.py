"""Latent-optimization inversion, pivotal tuning, PCA edit directions and edits."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .generator import GeneratorNet, compute_mean_style, translate_input_grid  # noqa: F401  (re-export)
from .projector import FeatureNetwork, make_feature_network


# --- perceptual distance ------------------------------------------------------------

class PerceptualDistance(nn.Module):
    """Feature-space distance over a frozen network's four taps.

    Each tap is unit-normalized along channels, then squared differences
    are averaged over positions and summed over taps. Images are resized to
    the network's input resolution first (target and reconstruction alike).
    """

    def __init__(self, net: FeatureNetwork | None = None, tap_weights=(1.0, 1.0, 1.0, 1.0), pixel_weight=0.0):
        super().__init__()
        self.net = (net if net is not None else make_feature_network("conv", input_resolution=64)).freeze()
        self.tap_weights = tuple(tap_weights)
        self.pixel_weight = pixel_weight

    def features(self, x):
        r = self.net.input_resolution
        if x.shape[-1] != r:
            x = F.interpolate(x, size=(r, r), mode="bilinear", align_corners=False)
        return [F.normalize(t, dim=1, eps=1e-10) for t in self.net(x)]

    def forward(self, a, b):
        """Per-sample distances, shape [B]."""
        fa, fb = self.features(a), self.features(b)
        d = sum(w * (x - y).square().sum(1).mean(dim=(1, 2)) for w, x, y in zip(self.tap_weights, fa, fb))
        if self.pixel_weight:
            d = d + self.pixel_weight * (a - b).square().mean(dim=(1, 2, 3))
        return d


# --- class inference ---------------------------------------------------------------

@torch.no_grad()
def sample_class_for_image(image, classifier, seed: int = 0) -> int:
    """Draw a label from the classifier's softmax output for one image."""
    if image.ndim == 3:
        image = image[None]
    if hasattr(classifier, "logits"):
        probs = torch.softmax(classifier.logits(image).double(), dim=1)[0]
    else:
        probs = classifier(image).double()[0]
    gen = torch.Generator().manual_seed(seed)
    return int(torch.multinomial(probs, 1, generator=gen))


# --- inversion ---------------------------------------------------------------------

@dataclass
class InversionConfig:
    iterations: int = 1000
    lr_max: float = 0.05
    ramp_up: int = 50
    ramp_down: int = 250
    mean_style_samples: int = 10_000
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if min(self.iterations, self.ramp_up, self.ramp_down) < 0:
            raise ValueError("iteration counts must be non-negative")
        if self.iterations > 0 and self.ramp_up + self.ramp_down > self.iterations:
            raise ValueError("ramp_up + ramp_down exceeds iterations")


def learning_rate(i: int, cfg: InversionConfig) -> float:
    """Linear warm-up from zero, flat, then cosine decay to zero at ``cfg.iterations``."""
    lr = cfg.lr_max
    if cfg.ramp_up > 0:
        lr *= min(1.0, i / cfg.ramp_up)
    start = cfg.iterations - cfg.ramp_down
    if cfg.ramp_down > 0 and i > start:
        t = min(1.0, (i - start) / cfg.ramp_down)
        lr *= 0.5 * (1 + math.cos(math.pi * t))
    return lr


@dataclass
class InversionTrace:
    losses: list = field(default_factory=list)
    best_losses: list = field(default_factory=list)
    learning_rates: list = field(default_factory=list)
    best_w: torch.Tensor | None = None


def mean_style_for_class(net: GeneratorNet, class_vec=None, n=10_000, seed=0):
    sampler = None
    if class_vec is not None:
        cv = torch.as_tensor(class_vec).reshape(1, -1)
        sampler = lambda k, gen: cv.expand(k, -1)  # noqa: E731
    return compute_mean_style(net, n, sampler, seed)


def invert_latent(target, net: GeneratorNet, cfg: InversionConfig | None = None, perceptual=None,
                  w_init=None, class_vec=None, seed: int = 0, return_trace: bool = False):
    """Optimize a single style vector so that its synthesis matches ``target``.

    Starts from ``w_init`` or the mean style (conditioned on ``class_vec``
    when given). Only the style vector is updated; the network is left
    untouched. Returns the final style ``[1, w_dim]`` (and the trace).
    """
    cfg = cfg or InversionConfig()
    perceptual = perceptual if perceptual is not None else PerceptualDistance()
    if target.ndim == 3:
        target = target[None]
    if target.shape[-1] != net.resolution or target.shape[-2] != net.resolution:
        raise ValueError(f"target is {tuple(target.shape[-2:])}, network renders {net.resolution}px")
    if w_init is None:
        w_init = mean_style_for_class(net, class_vec, cfg.mean_style_samples, seed)
    w = w_init.detach().clone().reshape(1, -1).requires_grad_(True)
    trace = InversionTrace(best_w=w.detach().clone())
    if cfg.iterations == 0:
        return (w.detach(), trace) if return_trace else w.detach()

    grad_flags = [p.requires_grad for p in net.parameters()]
    net.requires_grad_(False)
    opt = torch.optim.Adam([w], lr=0.0, betas=tuple(cfg.betas), eps=cfg.eps)
    best = math.inf
    try:
        for i in range(cfg.iterations):
            lr = learning_rate(i, cfg)
            for g in opt.param_groups:
                g["lr"] = lr
            loss = perceptual(net.synthesize(w), target).sum()
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite inversion loss at iteration {i}")
            value = float(loss.detach())
            if value < best:
                best = value
                trace.best_w = w.detach().clone()
            trace.losses.append(value)
            trace.best_losses.append(best)
            trace.learning_rates.append(lr)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
    finally:
        for p, flag in zip(net.parameters(), grad_flags):
            p.requires_grad_(flag)
    with torch.no_grad():
        final = float(perceptual(net.synthesize(w), target).sum())
    if final < best:
        trace.best_w = w.detach().clone()
    trace.losses.append(final)
    trace.best_losses.append(min(best, final))
    trace.learning_rates.append(learning_rate(cfg.iterations, cfg))
    return (w.detach(), trace) if return_trace else w.detach()


# --- pivotal tuning ----------------------------------------------------------------

@dataclass
class TuningReport:
    initial_distance: float
    best_distance: float
    best_step: int
    distances: list
    locality: list


def pivotal_tune(target, pivot, net: GeneratorNet, steps: int = 100, locality_weight: float = 1.0,
                 perceptual=None, lr: float = 3e-4, mse_weight: float = 1.0, w_avg=None,
                 locality_samples: int = 4, locality_eps: float = 0.5, locality_limit: float = 10.0,
                 seed: int = 0, return_report: bool = False):
    """Fine-tune a copy of ``net``'s synthesis layers around a fixed pivot style.

    The loss is perceptual + squared error at the pivot plus ``locality_weight``
    times the squared output change at styles drawn around the mean style.
    The copy with the lowest pivot reconstruction distance (the untouched
    network counts as step 0) is returned.
    """
    perceptual = perceptual if perceptual is not None else PerceptualDistance()
    if target.ndim == 3:
        target = target[None]
    pivot = pivot.detach().reshape(1, -1)
    tuned = copy.deepcopy(net)
    original = copy.deepcopy(net).requires_grad_(False)
    tuned.mapping.requires_grad_(False)
    params = [p for n, p in tuned.named_parameters() if not n.startswith("mapping.")]
    for p in params:
        p.requires_grad_(True)
    opt = torch.optim.Adam(params, lr=lr)
    gen = torch.Generator().manual_seed(seed)
    if w_avg is None:
        w_avg = compute_mean_style(tuned, 1000, seed=seed)

    def recon_terms(model):
        img = model.synthesize(pivot)
        return perceptual(img, target).sum(), F.mse_loss(img, target)

    with torch.no_grad():
        p0, m0 = recon_terms(tuned)
    initial = float(p0 + mse_weight * m0)
    best, best_step, best_state = initial, 0, copy.deepcopy(tuned.state_dict())
    distances, locality = [initial], []
    for step in range(1, steps + 1):
        perc, mse = recon_terms(tuned)
        loss = perc + mse_weight * mse
        if locality_weight > 0 and locality_samples > 0:
            z = torch.randn(locality_samples, tuned.z_dim, generator=gen)
            c = torch.randn(locality_samples, tuned.c_dim, generator=gen)
            with torch.no_grad():
                w_rand = original.map_latent(z, c)
                w_loc = w_avg + locality_eps * (w_rand - w_avg)
                ref = original.synthesize(w_loc)
            loc = F.mse_loss(tuned.synthesize(w_loc), ref)
            loc_value = float(loc.detach())
            if not math.isfinite(loc_value) or loc_value > locality_limit:
                raise FloatingPointError(f"locality term diverged at step {step}: {loc_value:.4g}")
            locality.append(loc_value)
            loss = loss + locality_weight * loc
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        with torch.no_grad():
            p1, m1 = recon_terms(tuned)
        d = float(p1 + mse_weight * m1)
        distances.append(d)
        if d < best:
            best, best_step, best_state = d, step, copy.deepcopy(tuned.state_dict())
    tuned.load_state_dict(best_state)
    for p, q in zip(tuned.parameters(), net.parameters()):
        p.requires_grad_(q.requires_grad)
    report = TuningReport(initial, best, best_step, distances, locality)
    return (tuned, report) if return_report else tuned


# --- edit directions -----------------------------------------------------------------

@dataclass
class EditDirection:
    vector: torch.Tensor
    layer_range: tuple
    source: str = "pca"
    variance: float | None = None

    def __post_init__(self):
        self.vector = torch.as_tensor(self.vector, dtype=torch.float32).reshape(-1)
        n = float(self.vector.double().norm())
        if abs(n - 1) > 1e-4:
            raise ValueError(f"edit direction must be unit norm, got {n:.6f}")
        if self.source not in ("pca", "manual"):
            raise ValueError("source must be 'pca' or 'manual'")
        lo, hi = self.layer_range
        if not 0 <= lo <= hi:
            raise ValueError(f"invalid layer range {self.layer_range}")
        self.layer_range = (int(lo), int(hi))

    @classmethod
    def from_vector(cls, v, layer_range, source="manual"):
        v = torch.as_tensor(v, dtype=torch.float64).reshape(-1)
        return cls((v / v.norm()).float(), layer_range, source)


def principal_components(samples, k: int):
    """Top-``k`` eigenvectors (rows) and eigenvalues of the sample covariance."""
    x = torch.as_tensor(samples, dtype=torch.float64)
    if k >= x.shape[1]:
        raise ValueError(f"k={k} must be below the style dimension {x.shape[1]}")
    if x.shape[0] <= k:
        raise ValueError(f"need more than k={k} samples, got {x.shape[0]}")
    centered = x - x.mean(0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    vals, vecs = torch.linalg.eigh(cov)
    order = torch.argsort(vals, descending=True)[:k]
    comps = vecs[:, order].T
    # deterministic sign: largest-magnitude entry positive
    idx = comps.abs().argmax(dim=1)
    signs = torch.sign(comps[torch.arange(k), idx])
    return comps * signs[:, None], vals[order]


@torch.no_grad()
def pca_directions(net: GeneratorNet, n_samples: int = 10_000, k: int = 10, class_sampler=None,
                   seed: int = 0, batch_size: int = 1000) -> list[EditDirection]:
    """Principal axes of mapped styles, ordered by explained variance."""
    if k >= net.w_dim:
        raise ValueError(f"k={k} must be below the style dimension {net.w_dim}")
    if n_samples <= k:
        raise ValueError("n_samples must exceed k")
    gen = torch.Generator().manual_seed(seed)
    ws = []
    for i in range(0, n_samples, batch_size):
        m = min(batch_size, n_samples - i)
        z = torch.randn(m, net.z_dim, generator=gen)
        c = class_sampler(m, gen) if class_sampler is not None else torch.randn(m, net.c_dim, generator=gen)
        ws.append(net.map_latent(z, c))
    comps, vals = principal_components(torch.cat(ws), k)
    full = (0, net.num_ws - 1)
    return [EditDirection(c.float(), full, "pca", float(v)) for c, v in zip(comps, vals)]


def edit_styles(w, direction: EditDirection, strength: float, num_ws: int):
    """Per-layer styles with ``strength * direction`` added inside its layer range."""
    lo, hi = direction.layer_range
    if hi >= num_ws:
        raise ValueError(f"layer range {direction.layer_range} outside [0, {num_ws - 1}]")
    ws = w.unsqueeze(1).repeat(1, num_ws, 1) if w.ndim == 2 else w.clone()
    ws[:, lo:hi + 1] = ws[:, lo:hi + 1] + strength * direction.vector.to(ws.dtype)
    return ws


def apply_latent_edit(w, direction: EditDirection, strength: float, net: GeneratorNet, grid=None):
    """Synthesize ``w`` edited along ``direction`` within its layer range."""
    return net.synthesize(edit_styles(w, direction, strength, net.num_ws), grid)
