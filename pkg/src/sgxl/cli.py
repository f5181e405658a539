"""Command-line entry point: ``sgxl <command> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import io as sio
from . import metrics as M
from .config import OUTPUT_DIR_ENV, ConfigError, dump_config, load_config
from .layerspec import build_growth_schedule, format_schedule

log = logging.getLogger("sgxl")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- image helpers -------------------------------------------------------------------

def to_uint8(images: torch.Tensor) -> np.ndarray:
    return ((images.clamp(-1, 1) + 1) * 127.5 + 0.5).to(torch.uint8).permute(0, 2, 3, 1).numpy()


def save_grid(images: torch.Tensor, path, cols: int):
    arr = to_uint8(images)
    n, h, w, _ = arr.shape
    rows = -(-n // cols)
    canvas = np.zeros((rows * h, cols * w, 3), dtype=np.uint8)
    for i, im in enumerate(arr):
        r, c = divmod(i, cols)
        canvas[r * h:(r + 1) * h, c * w:(c + 1) * w] = im
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(canvas).save(path)


def load_image(path, resolution=None) -> torch.Tensor:
    from .data import center_crop_resize

    with Image.open(path) as im:
        im = im.convert("RGB")
        arr = center_crop_resize(im, resolution or min(im.size))
    return torch.as_tensor(arr.copy()).permute(2, 0, 1).float()[None] / 127.5 - 1


def load_image_dir(path) -> torch.Tensor:
    files = sorted(p for p in Path(path).rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise FileNotFoundError(f"no images under {path}")
    images = [load_image(f) for f in files]
    sizes = {tuple(im.shape[-2:]) for im in images}
    if len(sizes) != 1:
        raise ValueError(f"{path}: images have mixed resolutions {sorted(sizes)}")
    return torch.cat(images)


def _output_dir(arg):
    return Path(arg or os.environ.get(OUTPUT_DIR_ENV) or ".")


# --- commands ------------------------------------------------------------------------

def cmd_layerspec(args):
    sched = build_growth_schedule(args.start, args.final, shortened_final=args.shortened_final,
                                  batch_divisor=args.batch_divisor)
    if not args.rows_only:
        print(format_schedule(sched))
        print()
    print("stage,index,sampling_rate,cutoff,stopband,half_width,is_critical")
    for row in sched.rows():
        print(f"{row['stage']},{row['index']},{row['sampling_rate']},{row['cutoff']!r},{row['stopband']!r},"
              f"{row['half_width']!r},{int(row['is_critical'])}")


def cmd_train(args):
    from .classifier import train_classifier
    from .data import ingest_dataset
    from .training import Trainer

    cfg = load_config(args.config)
    if args.output:
        cfg.output_dir = args.output
    if cfg.data.path is None:
        raise ConfigError("data.path must name a dataset")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg))
    torch.manual_seed(cfg.seed)
    dataset = ingest_dataset(cfg.data.path, seed=cfg.seed)
    if cfg.data.class_count is not None and cfg.data.class_count != dataset.class_count:
        raise ConfigError(f"data.class_count is {cfg.data.class_count}, dataset has {dataset.class_count} classes")
    classifier = None
    if cfg.loss.guidance_lambda > 0 and cfg.schedule.final_resolution > cfg.loss.guidance_min_resolution:
        classifier = train_classifier(dataset.images_at(min(cfg.schedule.final_resolution, 64)), dataset.labels,
                                      dataset.class_count, seed=cfg.seed)
    log_path = out / "log.jsonl"
    if args.resume:
        trainer = Trainer.from_checkpoint(args.resume, dataset, classifier, log_path)
    else:
        trainer = Trainer(cfg, dataset, classifier, log_path)

    def checkpoint(t, record):
        t.save_checkpoint(out / "checkpoint.sgxl")
        log.info("images %d  res %d  fid %.4f", t.state.images_seen, t.resolution, record["fid"])

    trainer.fit(on_eval=checkpoint)
    trainer.save_checkpoint(out / "checkpoint.sgxl")
    print(out / "checkpoint.sgxl")


def cmd_generate(args):
    from .training import generate_images, load_generator

    net, cond, _ = load_generator(args.checkpoint)
    out = _output_dir(args.out)
    classes = args.classes or list(range(cond.table.class_count))
    for c in classes:
        labels = torch.full((args.per_class,), int(c))
        imgs = generate_images(net, cond, labels, seed=args.seed + int(c), psi=args.psi)
        save_grid(imgs, out / f"class{int(c):04d}.png", cols=min(args.per_class, 8))
    print(out)


def cmd_invert(args):
    from .inversion import InversionConfig, invert_latent, mean_style_for_class, pivotal_tune, \
        sample_class_for_image
    from .training import load_generator

    net, cond, snap = load_generator(args.checkpoint)
    target = load_image(args.image, net.resolution)
    if args.class_label is not None:
        label = args.class_label
    elif snap.classifier is not None:
        label = sample_class_for_image(target, snap.classifier, args.seed)
    else:
        label = None
    class_vec = cond.for_generator(torch.tensor([label])).detach() if label is not None else None
    icfg = InversionConfig(iterations=args.iterations, lr_max=args.lr_max, ramp_up=args.ramp_up,
                           ramp_down=args.ramp_down, mean_style_samples=args.mean_samples)
    w_init = mean_style_for_class(net, class_vec, icfg.mean_style_samples, args.seed) if class_vec is not None \
        else None
    w = invert_latent(target, net, icfg, w_init=w_init, class_vec=class_vec, seed=args.seed)
    out = _output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "w.npy", w.numpy())
    with torch.no_grad():
        recon = net.synthesize(w)
    save_grid(torch.cat([target, recon]), out / "reconstruction.png", cols=2)
    report = {"class": label, "psnr": M.psnr(recon, target)}
    if args.pti:
        tuned = pivotal_tune(target, w, net, steps=args.pti_steps, seed=args.seed)
        with torch.no_grad():
            recon_t = tuned.synthesize(w)
        save_grid(torch.cat([target, recon_t]), out / "reconstruction_pti.png", cols=2)
        report["psnr_pti"] = M.psnr(recon_t, target)
        sio.write_container(out / "tuned_generator.sgxl", "generator",
                            {"config": tuned.config, "specs": [s.as_row() for s in tuned.specs],
                             "frozen": sorted(tuned.frozen_modules)},
                            sio.state_dict_blobs(tuned, "G"))
    (out / "inversion.json").write_text(json.dumps(report, indent=2))
    print(json.dumps(report))


def cmd_directions(args):
    from .inversion import pca_directions
    from .training import load_generator

    net, cond, _ = load_generator(args.checkpoint)
    sampler = cond.sampler()
    dirs = pca_directions(net, args.samples, args.k, class_sampler=sampler, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez(out, vectors=np.stack([d.vector.numpy() for d in dirs]),
             variances=np.array([d.variance for d in dirs]),
             layer_range=np.array(dirs[0].layer_range))
    print(out)


def _parse_layers(spec, num_ws):
    if spec is None:
        return (0, num_ws - 1)
    lo, _, hi = spec.partition(":")
    return (int(lo), int(hi) if hi else int(lo))


def cmd_edit(args):
    from .inversion import EditDirection, apply_latent_edit
    from .training import load_generator

    net, _, _ = load_generator(args.checkpoint)
    w = torch.as_tensor(np.load(args.w)).reshape(1, -1).float()
    with np.load(args.directions) as z:
        vectors = z["vectors"]
    if not 0 <= args.index < len(vectors):
        raise UsageError(f"direction index {args.index} outside [0, {len(vectors) - 1}]")
    d = EditDirection.from_vector(vectors[args.index], _parse_layers(args.layers, net.num_ws), "pca")
    with torch.no_grad():
        img = apply_latent_edit(w, d, args.strength, net)
    save_grid(img, args.out, cols=1)
    print(args.out)


def cmd_evaluate(args):
    ext = M.RandomInceptionNet(seed=args.extractor_seed, input_resolution=args.extractor_resolution)
    report = {"extractor": ext.name, "extractor_seed": args.extractor_seed, "seed": args.seed}
    if args.checkpoint:
        from .data import ingest_dataset
        from .training import generate_images, load_generator

        if not args.dataset:
            raise UsageError("--checkpoint requires --dataset")
        net, cond, _ = load_generator(args.checkpoint)
        if args.resolution is not None and args.resolution != net.resolution:
            raise ValueError(f"checkpoint renders {net.resolution}px but --resolution is {args.resolution}")
        data = ingest_dataset(args.dataset, seed=args.seed)
        if data.class_count != cond.table.class_count:
            raise ValueError(f"dataset has {data.class_count} classes, checkpoint {cond.table.class_count}")
        real = data.images_at(net.resolution)
        labels = torch.randint(data.class_count, (args.num_samples,), generator=torch.Generator().manual_seed(args.seed))
        fake = generate_images(net, cond, labels, seed=args.seed, psi=args.psi)
        report["resolution"] = net.resolution
    else:
        if not (args.real and args.fake):
            raise UsageError("give --real and --fake directories, or --checkpoint and --dataset")
        real, fake = load_image_dir(args.real), load_image_dir(args.fake)
        if real.shape[-1] != fake.shape[-1] or real.shape[-2] != fake.shape[-2]:
            raise ValueError(f"resolution mismatch: real {tuple(real.shape[-2:])}, fake {tuple(fake.shape[-2:])}")
        report["resolution"] = real.shape[-1]
    fr, ff = M.extract_features(real, ext), M.extract_features(fake, ext)
    report["rfid"] = M.frechet_distance(M.compute_feature_stats(fr), M.compute_feature_stats(ff))
    sr, sf = M.extract_features(real, ext, "spatial"), M.extract_features(fake, ext, "spatial")
    report["sfid"] = M.frechet_distance(M.compute_feature_stats(sr), M.compute_feature_stats(sf))
    logits = M.extract_features(fake, ext, "logits")
    report["is"] = M.inception_score(torch.softmax(torch.as_tensor(logits), dim=1).numpy())
    k = min(args.k, len(fr) - 1, len(ff) - 1)
    report["precision"], report["recall"] = M.precision_recall(fr, ff, k)
    report["k"] = k
    report["n_real"], report["n_fake"] = len(fr), len(ff)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)


def cmd_embed(args):
    from .conditioning import compute_class_embeddings
    from .data import ingest_dataset
    from .projector import make_feature_network

    data = ingest_dataset(args.dataset, seed=args.seed)
    net = make_feature_network(args.extractor, args.resolution, seed=args.extractor_seed)
    if args.weights:
        sio.load_extractor_weights(net, args.weights)
    table = compute_class_embeddings(data.images_at(args.resolution), data.labels, net, data.class_count)
    source = f"{net.name}:seed={args.extractor_seed}:res={args.resolution}"
    sio.write_embeddings(args.out, table.embeddings.detach(), source)
    print(args.out)


# --- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sgxl", description="Class-conditional progressive style-based GAN toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("layerspec", help="print the growth schedule and per-layer filter specs")
    s.add_argument("--start", type=int, default=16)
    s.add_argument("--final", type=int, default=1024)
    s.add_argument("--batch-divisor", type=int, default=1)
    s.add_argument("--shortened-final", action=argparse.BooleanOptionalAction, default=None)
    s.add_argument("--rows-only", action="store_true")
    s.set_defaults(fn=cmd_layerspec)

    s = sub.add_parser("train", help="train from a YAML config")
    s.add_argument("--config", required=True)
    s.add_argument("--output")
    s.add_argument("--resume")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("generate", help="sample a grid per class")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out")
    s.add_argument("--per-class", type=int, default=8)
    s.add_argument("--classes", type=int, nargs="*")
    s.add_argument("--psi", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_generate)

    s = sub.add_parser("invert", help="invert an image into a style vector")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--out")
    s.add_argument("--iterations", type=int, default=1000)
    s.add_argument("--lr-max", type=float, default=0.05)
    s.add_argument("--ramp-up", type=int, default=50)
    s.add_argument("--ramp-down", type=int, default=250)
    s.add_argument("--mean-samples", type=int, default=10_000)
    s.add_argument("--class-label", type=int)
    s.add_argument("--pti", action="store_true")
    s.add_argument("--pti-steps", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_invert)

    s = sub.add_parser("edit", help="apply an edit direction to a style vector")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--w", required=True)
    s.add_argument("--directions", required=True)
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--strength", type=float, default=1.0)
    s.add_argument("--layers", help="inclusive layer range lo:hi")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_edit)

    s = sub.add_parser("directions", help="principal style-space directions")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--samples", type=int, default=10_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_directions)

    s = sub.add_parser("evaluate", help="JSON metric report")
    s.add_argument("--real")
    s.add_argument("--fake")
    s.add_argument("--checkpoint")
    s.add_argument("--dataset")
    s.add_argument("--resolution", type=int)
    s.add_argument("--num-samples", type=int, default=1000)
    s.add_argument("--psi", type=float, default=1.0)
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--extractor-seed", type=int, default=0)
    s.add_argument("--extractor-resolution", type=int, default=299)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("embed", help="write per-class embeddings to a sidecar file")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--extractor", default="conv", choices=["conv", "vit"])
    s.add_argument("--resolution", type=int, default=224)
    s.add_argument("--extractor-seed", type=int, default=0)
    s.add_argument("--weights")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_embed)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"sgxl: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.fn(args)
    except UsageError as exc:
        print(f"sgxl: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ValueError, FileNotFoundError, OSError, RuntimeError, IndexError) as exc:
        print(f"sgxl: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
