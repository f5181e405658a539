import math

import numpy as np
import pytest
import torch

from conftest import small_net
from sgxl.generator import compute_mean_style
from sgxl.inversion import (
    EditDirection,
    InversionConfig,
    PerceptualDistance,
    apply_latent_edit,
    edit_styles,
    invert_latent,
    learning_rate,
    pca_directions,
    pivotal_tune,
    principal_components,
    sample_class_for_image,
)
from sgxl.projector import ConvFeatureNetwork


@pytest.fixture(scope="module")
def perceptual():
    return PerceptualDistance(ConvFeatureNetwork(widths=(4, 6, 8, 10), input_resolution=32, seed=0))


@pytest.fixture(scope="module")
def net():
    n = small_net(16, w_dim=16)
    n.calibrate_magnitudes()
    return n


def checksum(module):
    return {k: v.clone() for k, v in module.state_dict().items()}


def test_learning_rate_trace():
    cfg = InversionConfig()
    assert learning_rate(0, cfg) == 0
    assert learning_rate(25, cfg) == pytest.approx(0.025)
    assert learning_rate(50, cfg) == pytest.approx(0.05)
    assert learning_rate(750, cfg) == pytest.approx(0.05)
    assert learning_rate(875, cfg) == pytest.approx(0.025)
    assert learning_rate(1000, cfg) == pytest.approx(0, abs=1e-15)
    trace = [learning_rate(i, cfg) for i in range(1001)]
    assert max(trace) == pytest.approx(0.05)


def test_config_validation():
    with pytest.raises(ValueError):
        InversionConfig(iterations=100)
    InversionConfig(iterations=0)


def test_zero_iterations_returns_mean(net, perceptual):
    target = torch.zeros(1, 3, 16, 16)
    w_bar = compute_mean_style(net, 500, seed=1)
    w = invert_latent(target, net, InversionConfig(iterations=0, mean_style_samples=500), perceptual, seed=1)
    assert torch.equal(w[0], w_bar)


def test_inversion_touches_only_w(net, perceptual):
    before = checksum(net)
    flags = [p.requires_grad for p in net.parameters()]
    target = net.synthesize(net.random_styles(1, seed=9)).detach()
    cfg = InversionConfig(iterations=40, ramp_up=5, ramp_down=10, mean_style_samples=200)
    w, trace = invert_latent(target, net, cfg, perceptual, return_trace=True)
    after = checksum(net)
    assert all(torch.equal(before[k], after[k]) for k in before)
    assert flags == [p.requires_grad for p in net.parameters()]
    assert all(b2 <= b1 for b1, b2 in zip(trace.best_losses, trace.best_losses[1:]))
    assert trace.best_losses[-1] < trace.losses[0]
    assert trace.learning_rates[0] == 0


def test_inversion_rejects_wrong_size(net, perceptual):
    with pytest.raises(ValueError):
        invert_latent(torch.zeros(1, 3, 32, 32), net, InversionConfig(iterations=0), perceptual)


def test_perceptual_properties(perceptual):
    g = torch.Generator().manual_seed(0)
    a, b = torch.rand(3, 3, 16, 16, generator=g), torch.rand(3, 3, 16, 16, generator=g)
    assert torch.all(perceptual(a, a) == 0)
    assert torch.allclose(perceptual(a, b), perceptual(b, a))
    assert torch.all(perceptual(a, b) > 0)


def test_pti_zero_steps_and_pivot_untouched(net, perceptual):
    target = torch.zeros(1, 3, 16, 16)
    pivot = net.random_styles(1)
    pivot_copy = pivot.clone()
    tuned = pivotal_tune(target, pivot, net, steps=0, perceptual=perceptual)
    assert all(torch.equal(a, b) for a, b in zip(net.state_dict().values(), tuned.state_dict().values()))
    assert torch.equal(pivot, pivot_copy)


def test_pti_improves_and_stays_local(net, perceptual):
    before = checksum(net)
    target = net.synthesize(net.random_styles(1, seed=3)).detach()
    pivot = net.random_styles(1, seed=4)
    pivot_copy = pivot.clone()
    tuned, rep = pivotal_tune(target, pivot, net, steps=20, perceptual=perceptual, lr=1e-3,
                              return_report=True)
    assert rep.best_distance <= rep.initial_distance
    assert min(rep.distances) == rep.best_distance
    assert torch.equal(pivot, pivot_copy)
    assert all(torch.equal(before[k], v) for k, v in net.state_dict().items())
    # locality: output change at 16 random styles stays small
    ws = net.random_styles(16, seed=11)
    with torch.no_grad():
        change = (tuned.synthesize(ws) - net.synthesize(ws)).square().mean().item()
    assert change < 0.05


def test_class_sampling():
    class Probs(torch.nn.Module):
        def __init__(self, p):
            super().__init__()
            self.p = torch.tensor(p, dtype=torch.float64)

        def forward(self, x):
            return self.p.expand(x.shape[0], -1)

    img = torch.zeros(3, 8, 8)
    assert all(sample_class_for_image(img, Probs([0, 0, 1.0]), seed=s) == 2 for s in range(20))
    assert sample_class_for_image(img, Probs([0.3, 0.7]), 5) == sample_class_for_image(img, Probs([0.3, 0.7]), 5)
    c, n = 4, 10_000
    draws = np.array([sample_class_for_image(img, Probs([0.25] * 4), seed=s) for s in range(n)])
    sd = math.sqrt(n * 0.25 * 0.75)
    for k in range(c):
        assert abs((draws == k).sum() - n / c) < 3 * sd


def test_pca_known_subspace():
    g = torch.Generator().manual_seed(0)
    basis, _ = torch.linalg.qr(torch.randn(20, 2, generator=g, dtype=torch.float64))
    coeffs = torch.randn(500, 2, generator=g, dtype=torch.float64) * torch.tensor([3.0, 2.0], dtype=torch.float64)
    samples = coeffs @ basis.T + 1e-6 * torch.randn(500, 20, generator=g, dtype=torch.float64)
    comps, vals = principal_components(samples, 2)
    # dense eigendecomposition oracle of the sample covariance
    cov = np.cov(samples.numpy(), rowvar=False)
    w, v = np.linalg.eigh(cov)
    top = v[:, np.argsort(w)[::-1][:2]]
    angles = np.degrees(np.arccos(np.clip(np.linalg.svd(top.T @ comps.numpy().T)[1], -1, 1)))
    assert np.all(np.radians(angles) < 1e-3)
    import scipy.linalg
    assert np.all(scipy.linalg.subspace_angles(comps.numpy().T, basis.numpy()) < 1e-3)
    assert vals[0] >= vals[1]


def test_pca_orthogonal_and_isotropic():
    g = torch.Generator().manual_seed(1)
    samples = torch.randn(10_000, 8, generator=g, dtype=torch.float64)
    comps, vals = principal_components(samples, 7)
    gram = comps @ comps.T
    assert torch.allclose(gram, torch.eye(7, dtype=torch.float64), atol=1e-6)
    assert (vals.max() / vals.min()).item() < 1.5


def test_pca_directions_on_net(net):
    dirs = pca_directions(net, n_samples=300, k=4)
    assert len(dirs) == 4
    assert all(abs(d.vector.norm().item() - 1) < 1e-5 for d in dirs)
    assert all(a.variance >= b.variance for a, b in zip(dirs, dirs[1:]))
    with pytest.raises(ValueError):
        pca_directions(net, n_samples=100, k=net.w_dim)


def test_edits(net):
    w = net.random_styles(1, seed=2)
    dirs = pca_directions(net, n_samples=200, k=2)
    assert torch.equal(apply_latent_edit(w, dirs[0], 0.0, net), net.synthesize(w))
    full = apply_latent_edit(w, dirs[0], 1.5, net)
    assert torch.allclose(full, net.synthesize(w + 1.5 * dirs[0].vector), atol=1e-6)
    a = edit_styles(edit_styles(w, dirs[0], 0.7, net.num_ws), dirs[1], -0.3, net.num_ws)
    b = edit_styles(edit_styles(w, dirs[1], -0.3, net.num_ws), dirs[0], 0.7, net.num_ws)
    assert torch.allclose(a, b, atol=1e-6)
    part = EditDirection(dirs[0].vector, (2, 4))
    ws = edit_styles(w, part, 1.0, net.num_ws)
    assert torch.equal(ws[0, 0], w[0]) and torch.equal(ws[0, 5], w[0])
    assert torch.allclose(ws[0, 3], w[0] + part.vector)
    with pytest.raises(ValueError):
        edit_styles(w, EditDirection(dirs[0].vector, (0, net.num_ws)), 1.0, net.num_ws)
    with pytest.raises(ValueError):
        EditDirection(torch.ones(4), (0, 1))
