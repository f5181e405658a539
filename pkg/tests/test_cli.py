import json

import numpy as np
import pytest
import yaml

from conftest import micro_config
from sgxl.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from sgxl.config import OUTPUT_DIR_ENV
from sgxl.data import make_shapes, write_image_folder
from sgxl.io import read_embeddings


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    images, labels = make_shapes(6, 32, seed=0)
    data = write_image_folder(root / "data", images, labels)
    cfg = micro_config(data={"path": str(data)}, output_dir=str(root / "run")).to_dict()
    (root / "cfg.yaml").write_text(yaml.safe_dump(cfg))
    assert main(["train", "--config", str(root / "cfg.yaml")]) == EXIT_OK
    return root


def test_layerspec_rows(capsys):
    assert main(["layerspec", "--final", "64", "--rows-only"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "stage,index,sampling_rate,cutoff,stopband,half_width,is_critical"
    assert len(lines) == 1 + 11 + 16 + 21
    last = lines[-1].split(",")
    assert last[0] == "2" and last[-1] == "1"


def test_usage_and_runtime_codes(capsys):
    assert main(["bogus"]) == EXIT_USAGE
    assert main(["layerspec", "--final", "48"]) == EXIT_RUNTIME
    assert main(["train", "--config", "/no/such/file.yaml"]) == EXIT_RUNTIME


def test_train_outputs(run):
    out = run / "run"
    assert (out / "checkpoint.sgxl").exists() and (out / "config.yaml").exists()
    records = [json.loads(line) for line in (out / "log.jsonl").read_text().splitlines()]
    assert {r["event"] for r in records} == {"eval", "grow"}
    assert max(r["stage_resolution"] for r in records) == 32


def test_generate(run, tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "env"))
    ckpt = str(run / "run" / "checkpoint.sgxl")
    assert main(["generate", "--checkpoint", ckpt, "--per-class", "2", "--psi", "0.7"]) == EXIT_OK
    assert sorted(p.name for p in (tmp_path / "env").iterdir()) == ["class0000.png", "class0001.png"]


def test_invert_edit_directions(run, tmp_path):
    ckpt = str(run / "run" / "checkpoint.sgxl")
    image = next((run / "data" / "disc").iterdir())
    out = tmp_path / "inv"
    assert main(["invert", "--checkpoint", ckpt, "--image", str(image), "--out", str(out),
                 "--iterations", "4", "--ramp-up", "1", "--ramp-down", "2", "--mean-samples", "100", "--pti", "--pti-steps", "2"]) == EXIT_OK
    report = json.loads((out / "inversion.json").read_text())
    assert report["psnr_pti"] >= report["psnr"] - 1e-9
    assert (out / "tuned_generator.sgxl").exists()
    dirs = tmp_path / "dirs.npz"
    assert main(["directions", "--checkpoint", ckpt, "--k", "3", "--samples", "64", "--out", str(dirs)]) == EXIT_OK
    assert np.load(dirs)["vectors"].shape[0] == 3
    assert main(["edit", "--checkpoint", ckpt, "--w", str(out / "w.npy"), "--directions", str(dirs),
                 "--index", "1", "--strength", "2", "--layers", "0:5", "--out", str(tmp_path / "e.png")]) == EXIT_OK
    assert (tmp_path / "e.png").exists()
    assert main(["edit", "--checkpoint", ckpt, "--w", str(out / "w.npy"), "--directions", str(dirs),
                 "--index", "7", "--out", str(tmp_path / "f.png")]) == EXIT_USAGE


def test_evaluate(run, tmp_path, capsys):
    ckpt = str(run / "run" / "checkpoint.sgxl")
    common = ["--extractor-resolution", "48", "--num-samples", "12"]
    assert main(["evaluate", "--checkpoint", ckpt, "--dataset", str(run / "data"), *common]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    for key in ("rfid", "sfid", "is", "precision", "recall", "extractor", "extractor_seed"):
        assert key in report
    assert main(["evaluate", "--checkpoint", ckpt, "--dataset", str(run / "data"), "--resolution", "64",
                 *common]) == EXIT_RUNTIME
    assert main(["evaluate", "--real", str(run / "data"), "--fake", str(run / "data"), *common]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["rfid"] < 1e-6
    small = write_image_folder(tmp_path / "small", *make_shapes(2, 16, seed=1))
    assert main(["evaluate", "--real", str(run / "data"), "--fake", str(small), *common]) == EXIT_RUNTIME
    assert main(["evaluate", *common]) == EXIT_USAGE


def test_embed(run, tmp_path):
    out = tmp_path / "emb.bin"
    assert main(["embed", "--dataset", str(run / "data"), "--out", str(out), "--resolution", "32"]) == EXIT_OK
    table, source = read_embeddings(out)
    assert table.shape == (2, 64) and source.startswith("conv")
