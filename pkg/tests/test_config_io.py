import struct

import numpy as np
import pytest
import torch
from PIL import Image

from sgxl import io as sio
from sgxl.config import OUTPUT_DIR_ENV, ConfigError, RunConfig, config_from_dict, dump_config, load_config
from sgxl.data import ingest_dataset, make_shapes, write_image_folder
from sgxl.projector import ConvFeatureNetwork


@pytest.fixture(autouse=True)
def no_env_override(monkeypatch):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)


def test_empty_file_gives_defaults(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("")
    cfg = load_config(f)
    assert cfg == RunConfig()
    assert cfg.loss.guidance_lambda == 8
    assert cfg.loss.guidance_min_resolution == 32
    assert cfg.discriminator.blur_sigma == 2 and cfg.discriminator.blur_cutoff == 200_000
    assert cfg.loss.pl_threshold == 200_000
    assert cfg.generator.z_dim == 64 and cfg.generator.w_dim == 512
    assert (cfg.schedule.start_resolution, cfg.schedule.final_resolution) == (16, 1024)
    assert cfg.schedule.batch_divisor == 16


def test_unknown_key_names_nearest():
    with pytest.raises(ConfigError, match=r"lamda.*guidance_lambda"):
        config_from_dict({"loss": {"lamda": 8}})
    with pytest.raises(ConfigError, match=r"'lamda'.*loss\.guidance_lambda"):
        config_from_dict({"lamda": 8})


def test_type_error_gives_key_path():
    with pytest.raises(ConfigError, match=r"loss\.guidance_lambda"):
        config_from_dict({"loss": {"guidance_lambda": "eight"}})
    with pytest.raises(ConfigError, match=r"projector\.extractors\[1\]"):
        config_from_dict({"projector": {"extractors": ["conv", 3]}})
    with pytest.raises(ConfigError):
        config_from_dict({"loss": {"form": "wasserstein"}})


def test_round_trip(tmp_path):
    cfg = config_from_dict({"loss": {"form": "hinge", "guidance_lambda": 4.0}, "seed": 7,
                            "projector": {"extractors": ["vit"]}})
    f = tmp_path / "c.yaml"
    f.write_text(dump_config(cfg))
    assert load_config(f) == cfg


def test_missing_dataset_and_file(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("data:\n  path: /does/not/exist\n")
    with pytest.raises(ConfigError, match="data.path"):
        load_config(f)
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.yaml")


def test_env_output_override(monkeypatch):
    monkeypatch.setenv(OUTPUT_DIR_ENV, "/tmp/elsewhere")
    assert config_from_dict({"output_dir": "runs/x"}).output_dir == "/tmp/elsewhere"


def test_ingest_two_classes(tmp_path):
    images, labels = make_shapes(4, 24, seed=0)
    write_image_folder(tmp_path / "ds", images, labels)
    ds = ingest_dataset(tmp_path / "ds", seed=3)
    assert len(ds) == 8 and sorted(set(ds.labels.tolist())) == [0, 1]
    assert ds.class_names == ["disc", "square"]
    assert np.array_equal(ds.epoch_order(0), ingest_dataset(tmp_path / "ds", seed=3).epoch_order(0))
    assert not np.array_equal(ds.epoch_order(0), ds.epoch_order(1))
    x = ds.images_at(16)
    assert x.shape == (8, 3, 16, 16) and x.min() >= -1 and x.max() <= 1


def test_non_square_center_crop(tmp_path):
    d = tmp_path / "ds" / "only"
    d.mkdir(parents=True)
    arr = np.zeros((20, 40, 3), np.uint8)
    arr[:, 10:30] = 255  # the centre square is white, the side bands black
    Image.fromarray(arr).save(d / "a.png")
    ds = ingest_dataset(tmp_path / "ds")
    x = ds.images_at(16)
    assert x.shape == (1, 3, 16, 16)
    assert torch.allclose(x, torch.ones_like(x))


def test_unreadable_skipped_and_empty_class(tmp_path):
    images, labels = make_shapes(2, 16, seed=0)
    root = write_image_folder(tmp_path / "ds", images, labels)
    (root / "disc" / "broken.png").write_bytes(b"not an image")
    ds = ingest_dataset(root)
    assert len(ds) == 4 and ds.skipped == 1
    (root / "empty").mkdir()
    with pytest.raises(ValueError, match="empty"):
        ingest_dataset(root)


def test_npz_archive(tmp_path):
    images, labels = make_shapes(3, 16, seed=1)
    np.savez(tmp_path / "d.npz", images=images, labels=labels)
    ds = ingest_dataset(tmp_path / "d.npz")
    assert len(ds) == 6 and ds.class_count == 2


def test_container_layout(tmp_path):
    blobs = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1, 2], dtype=np.int64)}
    p = sio.write_container(tmp_path / "x.sgxl", "thing", {"k": 1}, blobs)
    raw = p.read_bytes()
    assert raw[:4] == b"SGXL"
    version, hlen = struct.unpack("<IQ", raw[4:16])
    assert version == sio.FORMAT_VERSION
    first = np.frombuffer(raw[16 + hlen:16 + hlen + 24], dtype="<f4")
    assert np.array_equal(first, np.arange(6, dtype=np.float32))
    meta, back = sio.read_container(p, "thing")
    assert meta == {"k": 1} and all(np.array_equal(blobs[k], back[k]) for k in blobs)
    with pytest.raises(sio.ContainerError):
        sio.read_container(p, "checkpoint")
    (tmp_path / "bad").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(sio.ContainerError):
        sio.read_container(tmp_path / "bad")


def test_extractor_weights(tmp_path):
    a, b = ConvFeatureNetwork(input_resolution=32, seed=0), ConvFeatureNetwork(input_resolution=32, seed=1)
    sio.save_extractor_weights(a, tmp_path / "w.sgxl")
    sio.load_extractor_weights(b, tmp_path / "w.sgxl")
    assert all(torch.equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))
    from sgxl.projector import ViTFeatureNetwork
    with pytest.raises(sio.ContainerError):
        sio.load_extractor_weights(ViTFeatureNetwork(input_resolution=32, patch_size=8), tmp_path / "w.sgxl")


def test_embedding_sidecar(tmp_path):
    table = np.random.default_rng(0).normal(size=(3, 5)).astype(np.float32)
    p = sio.write_embeddings(tmp_path / "e.bin", table, "conv")
    raw = p.read_bytes()
    assert struct.unpack("<4sIIIH", raw[:18]) == (b"SGXE", 1, 3, 5, 4)
    back, src = sio.read_embeddings(p)
    assert src == "conv" and np.array_equal(back, table)
    (tmp_path / "cut.bin").write_bytes(raw[:-4])
    with pytest.raises(sio.ContainerError):
        sio.read_embeddings(tmp_path / "cut.bin")
