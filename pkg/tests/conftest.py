import pytest
import torch

from sgxl.generator import GeneratorNet
from sgxl.layerspec import compute_layer_specs

torch.set_num_threads(1)


def small_net(resolution=16, n_layers=None, seed=0, use_filters=True, **kw):
    n_layers = n_layers or {16: 11, 32: 16}.get(resolution, 6)
    specs = compute_layer_specs(resolution, n_layers)
    opts = dict(channel_base=256, channel_max=16, margin=4, w_dim=32, seed=seed, use_filters=use_filters)
    opts.update(kw)
    return GeneratorNet(specs, resolution, **opts)


@pytest.fixture
def net16():
    return small_net(16)


def micro_config(**overrides):
    """Smallest end-to-end run: batch 8, 32 px feature nets, two stages."""
    from sgxl.toy import _merge, toy_config

    base = {
        "schedule": {"batch_divisor": 256, "max_images_per_stage": 16},
        "generator": {"channel_base": 64, "channel_max": 4, "w_dim": 16, "ema_images": 16},
        "discriminator": {"width": 4, "blur_cutoff": 16},
        "loss": {"pl_threshold": 0, "pl_interval": 1},
        "projector": {"input_resolution": 32},
        "eval": {"extractor_resolution": 32, "num_samples": 8, "interval_images": 8},
    }
    return toy_config(**_merge(base, overrides))


@pytest.fixture
def micro_data():
    from sgxl.toy import toy_dataset

    return toy_dataset(n_per_class=6, resolution=32, seed=0)


# --- acceptance reporting -------------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
