import numpy as np
import pytest
import torch

from sgxl.projector import (
    ConvFeatureNetwork,
    FeatureProjector,
    ViTFeatureNetwork,
    augment,
    extract_feature_pyramid,
    init_random_projections,
    make_feature_network,
    project_pyramid,
)


@pytest.fixture(scope="module")
def conv():
    return ConvFeatureNetwork(widths=(4, 5, 6, 7), input_resolution=32, seed=0)


def test_four_taps_strictly_decreasing(conv):
    taps = extract_feature_pyramid(torch.rand(2, 3, 16, 16), conv)
    assert len(taps) == 4
    sizes = [t.shape[-1] for t in taps]
    assert sizes == sorted(sizes, reverse=True) and len(set(sizes)) == 4


def test_vit_taps():
    vit = ViTFeatureNetwork(dim=16, heads=2, patch_size=8, input_resolution=32)
    taps = extract_feature_pyramid(torch.rand(1, 3, 16, 16), vit)
    assert [t.shape[-1] for t in taps] == [16, 8, 4, 2]


def test_default_resize_to_224(monkeypatch):
    net = make_feature_network("conv")
    seen = []
    orig = net.forward
    monkeypatch.setattr(net, "forward", lambda x: seen.append(tuple(x.shape[-2:])) or orig(x))
    extract_feature_pyramid(torch.rand(1, 3, 32, 32), net)
    assert seen == [(224, 224)]


def test_rejects_wrong_channels(conv):
    with pytest.raises(ValueError):
        extract_feature_pyramid(torch.rand(1, 1, 16, 16), conv)


def test_extractor_failure_names_taps():
    class Broken(ConvFeatureNetwork):
        def forward(self, x):
            raise KeyError("boom")
    with pytest.raises(RuntimeError, match="stage1"):
        extract_feature_pyramid(torch.rand(1, 3, 8, 8), Broken(input_resolution=32))


def test_unknown_extractor():
    with pytest.raises(ValueError):
        make_feature_network("resnet")


def test_eval_mode_sticks(conv):
    conv.train()
    assert not conv.training
    x = torch.rand(1, 3, 16, 16)
    a, b = conv(x), conv(x)
    assert all(torch.equal(p, q) for p, q in zip(a, b))


def test_projection_seeds():
    shapes = [3, 4, 5, 6]
    a, b, c = init_random_projections(shapes, 1), init_random_projections(shapes, 1), init_random_projections(shapes, 2)
    assert all(torch.equal(x, y) for x, y in zip(a.tensors(), b.tensors()))
    assert not any(torch.equal(x, y) for x, y in zip(a.tensors(), c.tensors()))
    assert [k.shape for k in a.ccm_kernels] == [(c, c, 1, 1) for c in shapes]
    assert [k.shape for k in a.csm_blocks] == [(c, c, 3, 3) for c in shapes]


def test_zero_features_zero_pyramid():
    params = init_random_projections([3, 4, 5, 6], 0)
    raw = [torch.zeros(1, c, s, s) for c, s in zip([3, 4, 5, 6], [8, 4, 2, 1])]
    assert all(torch.equal(m, torch.zeros_like(m)) for m in project_pyramid(raw, params))


def test_single_pixel_dense_oracle():
    chans = [2, 3, 4, 5]
    params = init_random_projections(chans, 3)
    g = torch.Generator().manual_seed(1)
    raw = [torch.randn(1, c, 1, 1, generator=g, dtype=torch.float64) for c in chans]
    params64 = type(params)(*[[t.double() for t in ts] for ts in (params.ccm_kernels, params.csm_blocks, params.csm_links)], 3)
    got = project_pyramid(raw, params64)
    # dense recomputation: on 1x1 maps only the centre tap of each 3x3 kernel sees data
    C = [k[:, :, 0, 0].numpy() for k in params64.ccm_kernels]
    B = [k[:, :, 1, 1].numpy() for k in params64.csm_blocks]
    L = [k[:, :, 0, 0].numpy() for k in params64.csm_links]
    f = [r[0, :, 0, 0].numpy() for r in raw]
    out = [None] * 4
    for k in (3, 2, 1, 0):
        x = C[k] @ f[k]
        if k < 3:
            x = x + L[k] @ out[k + 1]
        out[k] = x + B[k] @ x
    for k in range(4):
        np.testing.assert_allclose(got[k][0, :, 0, 0].numpy(), out[k], atol=1e-6)


def test_projection_shape_mismatch():
    params = init_random_projections([3, 4, 5, 6], 0)
    raw = [torch.zeros(1, c, 2, 2) for c in [3, 4, 5, 7]]
    with pytest.raises(ValueError):
        project_pyramid(raw, params)


def test_projector_buffers_are_not_parameters(conv):
    proj = FeatureProjector(conv, seed=4)
    assert not any(p.requires_grad for p in proj.parameters())
    assert len(list(proj.buffers())) == 11
    out = proj(torch.rand(2, 3, 16, 16))
    sizes = [m.shape[-1] for m in out]
    assert len(out) == 4 and sizes == sorted(sizes, reverse=True)
    assert all(torch.isfinite(m).all() for m in out)


def test_pyramid_gradient_finite_differences():
    net = ConvFeatureNetwork(widths=(2, 3, 3, 4), input_resolution=32, seed=2).double()
    params = init_random_projections([2, 3, 3, 4], 0)
    params = type(params)(*[[t.double() for t in ts] for ts in (params.ccm_kernels, params.csm_blocks, params.csm_links)], 0)
    x = torch.rand(1, 3, 8, 8, dtype=torch.float64, requires_grad=True)

    def total(img):
        return sum(m.sum() for m in project_pyramid(extract_feature_pyramid(img, net), params))

    total(x).backward()
    analytic = x.grad[0, 1, 3, 4].item()
    h = 1e-6
    xp, xm = x.detach().clone(), x.detach().clone()
    xp[0, 1, 3, 4] += h
    xm[0, 1, 3, 4] -= h
    numeric = (total(xp).item() - total(xm).item()) / (2 * h)
    assert abs(numeric) > 1e-8
    assert abs(analytic - numeric) <= 1e-3 * abs(numeric)


def test_augment_reproducible_and_differentiable():
    x = torch.rand(4, 3, 16, 16, requires_grad=True)
    a = augment(x, torch.Generator().manual_seed(3), p=1.0)
    b = augment(x, torch.Generator().manual_seed(3), p=1.0)
    assert torch.equal(a, b)
    a.sum().backward()
    assert x.grad is not None and x.grad.abs().sum() > 0
    assert torch.equal(augment(x, torch.Generator().manual_seed(0), p=0.0), x)
