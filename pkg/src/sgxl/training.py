"""Adversarial objectives, classifier guidance, path-length regularization,
the stage controller and checkpointing."""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F

from . import io as sio
from . import metrics as M
from .classifier import ToyClassifier
from .conditioning import ClassConditioner, ClassEmbeddingTable, compute_class_embeddings
from .config import RunConfig, config_from_dict
from .discriminator import ProjectedDiscriminator, blur_for_warmup
from .generator import GeneratorNet, compute_mean_style, grow_generator, truncate_style
from .layerspec import LayerSpec, build_growth_schedule
from .projector import FeatureProjector, make_feature_network

log = logging.getLogger(__name__)

LOSS_FORMS = ("logistic", "hinge", "minimax")
LOG_SCHEMA_VERSION = 1


class DivergenceError(RuntimeError):
    pass


# --- bookkeeping types ------------------------------------------------------------

@dataclass
class LossReport:
    """Per-head adversarial terms plus the regularizers; ``total`` is their sum."""

    adversarial: list[float] = field(default_factory=list)
    guidance: float = 0.0
    path_length: float = 0.0
    form: str = "logistic"

    @property
    def adversarial_total(self) -> float:
        return float(sum(self.adversarial))

    @property
    def total(self) -> float:
        return self.adversarial_total + self.guidance + self.path_length

    def as_dict(self) -> dict:
        return {"adversarial": list(self.adversarial), "adversarial_total": self.adversarial_total,
                "guidance": self.guidance, "path_length": self.path_length, "total": self.total,
                "form": self.form}


@dataclass
class TrainingState:
    images_seen: int = 0
    stage_index: int = 0
    pl_mean: float = 0.0
    stage_images: int = 0
    optimizer_state: dict = field(default_factory=dict)
    ema_params: dict | None = None
    rng_state: dict = field(default_factory=dict)
    fid_history: list = field(default_factory=list)

    def advance(self, n: int):
        if n < 0:
            raise ValueError("image count cannot decrease")
        self.images_seen += n
        self.stage_images += n


# --- adversarial losses ----------------------------------------------------------

def _flatten_heads(logits):
    flat = []
    for item in logits:
        if isinstance(item, (list, tuple)):
            flat.extend(_flatten_heads(item))
        else:
            flat.append(item)
    return flat


def _check_finite(heads, which):
    for i, t in enumerate(heads):
        if not torch.isfinite(t).all():
            raise FloatingPointError(f"non-finite {which} logits in head {i}")


def _check_form(form):
    if form not in LOSS_FORMS:
        raise ValueError(f"unknown loss form {form!r}; choose from {LOSS_FORMS}")


def discriminator_loss(real_logits, fake_logits, form: str = "logistic"):
    """Sum over heads of the per-head discriminator objective.

    ``real_logits``/``fake_logits`` are lists of spatial maps (or lists of
    such lists, one per feature network). Each map is averaged spatially
    and over the batch. Returns ``(loss, LossReport)``.
    """
    _check_form(form)
    real, fake = _flatten_heads(real_logits), _flatten_heads(fake_logits)
    if len(real) != len(fake):
        raise ValueError(f"{len(real)} real heads vs {len(fake)} fake heads")
    _check_finite(real, "real")
    _check_finite(fake, "fake")
    terms = []
    for r, f in zip(real, fake):
        if form == "hinge":
            terms.append(F.relu(1 - r).mean() + F.relu(1 + f).mean())
        else:
            # the minimax and non-saturating forms share the discriminator side
            terms.append(F.softplus(-r).mean() + F.softplus(f).mean())
    loss = torch.stack(terms).sum()
    return loss, LossReport([float(t.detach()) for t in terms], form=form)


def generator_adversarial_loss(fake_logits, form: str = "logistic"):
    """Non-saturating ``softplus(-f)`` by default; ``hinge`` gives ``-f`` and
    ``minimax`` the literal ``log(1 - sigmoid(f)) = -softplus(f)``."""
    _check_form(form)
    fake = _flatten_heads(fake_logits)
    _check_finite(fake, "fake")
    terms = []
    for f in fake:
        if form == "logistic":
            terms.append(F.softplus(-f).mean())
        elif form == "hinge":
            terms.append((-f).mean())
        else:
            terms.append((-F.softplus(f)).mean())
    return torch.stack(terms).sum()


def generator_adversarial_terms(fake_logits, form="logistic") -> list[torch.Tensor]:
    return [generator_adversarial_loss([f], form) for f in _flatten_heads(fake_logits)]


# --- regularizers ----------------------------------------------------------------

def classifier_guidance_loss(image, labels, classifier, resolution: int, lam: float = 8.0,
                             min_resolution: int = 32):
    """``lam`` times the classifier cross-entropy of ``labels``; exactly zero at
    ``resolution <= min_resolution``."""
    if resolution <= min_resolution:
        return image.new_zeros(())
    labels = torch.as_tensor(labels, dtype=torch.long, device=image.device).reshape(-1)
    if hasattr(classifier, "logits"):
        logp = torch.log_softmax(classifier.logits(image), dim=1)
    else:
        logp = torch.log(classifier(image).clamp_min(1e-30))
    n_classes = logp.shape[1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_classes):
        raise IndexError(f"class label outside [0, {n_classes})")
    return lam * -logp.gather(1, labels[:, None]).mean()


def unit_image_directions(shape, gen=None, dtype=torch.float32):
    """Gaussian directions normalized to unit L2 norm per sample."""
    y = torch.randn(shape, generator=gen, dtype=dtype)
    return y / y.flatten(1).norm(dim=1).clamp_min(1e-12).reshape(-1, *[1] * (len(shape) - 1))


def jacobian_vector_norm(fn, w, y, create_graph=False):
    """Per-sample ``||J^T y||`` where ``J`` is the Jacobian of ``fn`` at ``w``."""
    if not w.requires_grad:
        w = w.detach().requires_grad_(True)
    out = fn(w)
    (g,) = torch.autograd.grad((out * y).sum(), w, create_graph=create_graph)
    norms = g.flatten(1).norm(dim=1)
    if not torch.isfinite(norms).all():
        raise FloatingPointError("non-finite Jacobian-vector products")
    return norms


def path_length_penalty(net, w_batch, state: TrainingState, activation_threshold: int = 200_000,
                        decay: float = 0.99, gen=None):
    """Mean of ``(||J^T y|| - a)^2`` once ``state.images_seen`` reaches the threshold, else 0.

    ``a`` (``state.pl_mean``) tracks the norms by exponential averaging and
    is updated in place. ``net`` is a :class:`GeneratorNet` or any callable
    mapping styles to images.
    """
    if w_batch.shape[0] == 0:
        raise ValueError("empty style batch")
    if state.images_seen < activation_threshold:
        return w_batch.new_zeros(())
    render = net.synthesize if hasattr(net, "synthesize") else net
    w = w_batch.detach().requires_grad_(True)
    out = render(w)
    y = unit_image_directions(out.shape, gen, out.dtype)
    (g,) = torch.autograd.grad((out * y).sum(), w, create_graph=True)
    norms = g.flatten(1).norm(dim=1)
    if not torch.isfinite(norms).all():
        raise FloatingPointError("non-finite Jacobian-vector products")
    a = state.pl_mean + (1 - decay) * (float(norms.detach().mean()) - state.pl_mean)
    if not math.isfinite(a):
        raise FloatingPointError("path-length mean is not finite")
    state.pl_mean = a
    return (norms - a).square().mean()


# --- stage controller --------------------------------------------------------------

class PlateauController:
    """Tracks evaluations within one stage and decides when it ends.

    ``update`` returns ``'continue'``, ``'plateau'`` (no relative improvement
    above ``threshold`` for ``patience`` consecutive evaluations) or
    ``'diverged'`` (value above ``divergence_factor`` times the stage minimum).
    """

    def __init__(self, patience: int = 3, threshold: float = 0.01, divergence_factor: float = 5.0):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience, self.threshold, self.divergence_factor = patience, threshold, divergence_factor
        self.reset()

    def reset(self):
        self.best = math.inf
        self.stale = 0
        self.history: list[float] = []

    def update(self, value: float) -> str:
        self.history.append(value)
        if math.isfinite(self.best) and value > self.divergence_factor * self.best:
            return "diverged"
        if value < self.best * (1 - self.threshold) or not math.isfinite(self.best):
            self.best = min(self.best, value)
            self.stale = 0
            return "continue"
        self.best = min(self.best, value)
        self.stale += 1
        return "plateau" if self.stale >= self.patience else "continue"


# --- trainer ---------------------------------------------------------------------

def _specs_to_rows(specs):
    return [s.as_row() for s in specs]


def _rows_to_specs(rows):
    return [LayerSpec(**r) for r in rows]


def _ema_update(ema: torch.nn.Module, live: torch.nn.Module, beta: float):
    with torch.no_grad():
        for pe, p in zip(ema.parameters(), live.parameters()):
            if p.requires_grad:
                pe.lerp_(p, 1 - beta)
            else:
                pe.copy_(p)
        for be, b in zip(ema.buffers(), live.buffers()):
            be.copy_(b)


class Trainer:
    """Owns every piece of mutable training state for one run."""

    def __init__(self, cfg: RunConfig, dataset, classifier=None, log_path=None):
        self.cfg = cfg
        self.dataset = dataset
        self.classifier = classifier
        s = cfg.schedule
        self.schedule = build_growth_schedule(s.start_resolution, s.final_resolution,
                                              shortened_final=s.shortened_final,
                                              batch_divisor=s.batch_divisor)
        self.state = TrainingState()
        self.gen = torch.Generator().manual_seed(cfg.seed)
        self.log_path = Path(log_path) if log_path else None
        self.controller = PlateauController(cfg.eval.plateau_patience, cfg.eval.plateau_threshold,
                                            cfg.eval.divergence_factor)

        projectors = []
        for i, name in enumerate(cfg.projector.extractors):
            net = make_feature_network(name, cfg.projector.input_resolution, seed=cfg.projector.seed + i)
            if name in cfg.projector.weights:
                sio.load_extractor_weights(net, cfg.projector.weights[name])
            projectors.append(FeatureProjector(net, seed=cfg.projector.seed + 100 + i))
        self.D = ProjectedDiscriminator(projectors, c_dim=cfg.generator.z_dim, width=cfg.discriminator.width,
                                        seed=cfg.seed)

        # Class embeddings come from the first feature network's deepest tap.
        imgs = dataset.images_at(cfg.projector.input_resolution)
        table = compute_class_embeddings(imgs, dataset.labels, projectors[0].net, dataset.class_count)
        self.cond = ClassConditioner(table, cfg.generator.z_dim, cfg.conditioning.normalize_embeddings,
                                     seed=cfg.seed)
        self.G = self._make_generator(0)
        self.G_ema = copy.deepcopy(self.G).eval() if cfg.generator.ema else None
        self._make_optimizers(reset_d=True)
        self._extractor = None
        self._real_stats = {}

    # construction ------------------------------------------------------------

    @property
    def stage(self):
        return self.schedule.stages[self.state.stage_index]

    @property
    def resolution(self) -> int:
        return self.stage.resolution

    def _make_generator(self, stage_index):
        g = self.cfg.generator
        stage = self.schedule.stages[stage_index]
        net = GeneratorNet(self.schedule.per_stage_specs[stage_index], stage.resolution,
                           z_dim=g.z_dim, c_dim=g.z_dim, w_dim=g.w_dim, channel_base=g.channel_base,
                           channel_max=g.channel_max, margin=g.margin, mapping_layers=g.mapping_layers,
                           use_filters=g.use_filters, seed=self.cfg.seed)
        net.calibrate_magnitudes(seed=self.cfg.seed)
        return net

    def _make_optimizers(self, reset_d=False):
        g, d = self.cfg.generator, self.cfg.discriminator
        g_params = self.G.trainable_parameters() + list(self.cond.table.parameters()) + list(self.cond.g_proj.parameters())
        self.opt_g = torch.optim.Adam(g_params, lr=g.lr, betas=tuple(g.betas), eps=1e-8)
        if reset_d:
            d_params = self.D.trainable_parameters() + list(self.cond.d_proj.parameters())
            self.opt_d = torch.optim.Adam(d_params, lr=d.lr, betas=tuple(d.betas), eps=1e-8)

    # single steps ------------------------------------------------------------

    def _sample_labels(self, n):
        return torch.randint(self.dataset.class_count, (n,), generator=self.gen)

    def _prep(self, images):
        d = self.cfg.discriminator
        return blur_for_warmup(images, self.state.images_seen, d.blur_cutoff, d.blur_sigma, d.blur_ramp)

    def _disc(self, images, labels):
        p = self.cfg.projector
        return self.D(self._prep(images), self.cond.for_discriminator(labels),
                      augment_images=p.augment, gen=self.gen, p=p.augment_p)

    def d_step(self, real, real_labels) -> LossReport:
        n = real.shape[0]
        with torch.no_grad():
            z = torch.randn(n, self.G.z_dim, generator=self.gen)
            fake_labels = self._sample_labels(n)
            fake = self.G(z, self.cond.for_generator(fake_labels))
        loss, report = discriminator_loss(self._disc(real, real_labels), self._disc(fake, fake_labels),
                                          self.cfg.loss.form)
        self.opt_d.zero_grad(set_to_none=True)
        loss.backward()
        self.opt_d.step()
        return report

    def g_step(self, n, step_index=0) -> LossReport:
        lc = self.cfg.loss
        self.D.discs.requires_grad_(False)
        z = torch.randn(n, self.G.z_dim, generator=self.gen)
        labels = self._sample_labels(n)
        w = self.G.map_latent(z, self.cond.for_generator(labels))
        img = self.G.synthesize(w, update_emas=True)
        terms = generator_adversarial_terms(self._disc(img, labels), lc.form)
        adv = torch.stack(terms).sum()
        guide = img.new_zeros(())
        if self.classifier is not None:
            guide = classifier_guidance_loss(img, labels, self.classifier, self.resolution,
                                             lc.guidance_lambda, lc.guidance_min_resolution)
        pl = img.new_zeros(())
        if lc.pl_weight > 0 and step_index % lc.pl_interval == 0:
            pl_n = max(1, n // 2)
            raw = path_length_penalty(self.G, w[:pl_n], self.state, lc.pl_threshold, lc.pl_decay, self.gen)
            pl = raw * lc.pl_weight * lc.pl_interval
        loss = adv + guide + pl
        self.opt_g.zero_grad(set_to_none=True)
        loss.backward()
        self.opt_g.step()
        self.D.discs.requires_grad_(True)
        return LossReport([float(t.detach()) for t in terms], float(guide.detach()), float(pl.detach()), lc.form)

    def train_images(self, n_images: int, on_step=None):
        """Alternate D and G steps at the stage batch size for ``n_images`` real images."""
        bs = self.stage.batch_size
        if bs > len(self.dataset):
            bs = len(self.dataset)
        stream = self.dataset.batches(bs, self.resolution, start_epoch=self.state.images_seen // len(self.dataset))
        done, step = 0, 0
        g = self.cfg.generator
        d_rep = g_rep = None
        while done < n_images:
            real, labels = next(stream)
            d_rep = self.d_step(real, labels)
            g_rep = self.g_step(bs, step)
            self.state.advance(bs)
            if self.G_ema is not None:
                horizon = g.ema_images
                if g.ema_rampup:
                    horizon = min(horizon, self.state.stage_images * g.ema_rampup)
                _ema_update(self.G_ema, self.G, 0.5 ** (bs / max(horizon, 1e-8)))
            done += bs
            step += 1
            if on_step is not None:
                on_step(self, d_rep, g_rep)
        return d_rep, g_rep

    # evaluation --------------------------------------------------------------

    @property
    def eval_net(self) -> GeneratorNet:
        return self.G_ema if self.G_ema is not None else self.G

    def extractor(self):
        if self._extractor is None:
            e = self.cfg.eval
            self._extractor = M.RandomInceptionNet(seed=e.extractor_seed, input_resolution=e.extractor_resolution)
        return self._extractor

    def generate(self, labels, seed=0, psi=1.0, class_means=None, batch_size=100):
        return generate_images(self.eval_net, self.cond, labels, seed, psi, class_means, batch_size)

    @torch.no_grad()
    def evaluate(self, n=None, seed=12345) -> dict:
        n = n or self.cfg.eval.num_samples
        ext = self.extractor()
        res = self.resolution
        if res not in self._real_stats:
            real = self.dataset.images_at(res)
            self._real_stats[res] = (M.compute_feature_stats(real, ext), M.extract_features(real, ext))
        stats, real_feats = self._real_stats[res]
        labels = torch.randint(self.dataset.class_count, (n,), generator=torch.Generator().manual_seed(seed))
        fake = self.generate(labels, seed=seed + 1)
        fake_feats = M.extract_features(fake, ext)
        fid = M.frechet_distance(stats, M.compute_feature_stats(fake_feats))
        k = min(3, min(len(real_feats), len(fake_feats)) - 1)
        precision, recall = M.precision_recall(real_feats, fake_feats, k)
        record = {"fid": fid, "precision": precision, "recall": recall}
        if self.classifier is not None:
            probs = self.classifier(fake).double().numpy()
            record["is"] = M.inception_score(probs / probs.sum(1, keepdims=True))
        return record

    def _log(self, record: dict):
        if self.log_path is None:
            return
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.log_path, "a") as f:
            f.write(json.dumps({"schema": LOG_SCHEMA_VERSION, **record}) + "\n")

    # stages ------------------------------------------------------------------

    def run_stage(self, max_images=None, eval_interval=None, on_eval=None) -> TrainingState:
        """Train the current stage until FID plateaus (or ``max_images`` is reached)."""
        eval_interval = eval_interval or self.cfg.eval.interval_images
        max_images = max_images or self.cfg.schedule.max_images_per_stage
        self.controller.reset()
        while True:
            d_rep, g_rep = self.train_images(eval_interval)
            record = self.evaluate()
            self.state.fid_history.append((self.state.stage_index, self.state.images_seen, record["fid"]))
            verdict = self.controller.update(record["fid"])
            self._log({"event": "eval", "images_seen": self.state.images_seen,
                       "stage_resolution": self.resolution, **record,
                       "d_loss": d_rep.as_dict(), "g_loss": g_rep.as_dict(), "pl_mean": self.state.pl_mean})
            if on_eval is not None:
                on_eval(self, record)
            if verdict == "diverged":
                raise DivergenceError(f"FID {record['fid']:.3f} exceeds {self.controller.divergence_factor}x "
                                      f"the stage minimum {self.controller.best:.3f}")
            if verdict == "plateau":
                break
            if max_images is not None and self.state.stage_images >= max_images:
                break
        return self.state

    def grow(self):
        """Advance to the next stage, growing from the averaged generator if present."""
        if self.state.stage_index + 1 >= len(self.schedule.stages):
            raise RuntimeError("already at the final stage")
        nxt = self.state.stage_index + 1
        base = self.G_ema if self.G_ema is not None else self.G
        grown = grow_generator(base, self.schedule.stages[nxt], self.schedule.per_stage_specs[nxt])
        grown.calibrate_magnitudes(seed=self.cfg.seed + nxt)
        self.G = grown
        self.G_ema = copy.deepcopy(grown).eval() if self.cfg.generator.ema else None
        self.state.stage_index = nxt
        self.state.stage_images = 0
        self._make_optimizers()
        self._log({"event": "grow", "images_seen": self.state.images_seen, "stage_resolution": self.resolution,
                   "layers": grown.layer_count})

    def fit(self, on_eval=None):
        """Run every stage of the schedule, growing between stages."""
        while True:
            self.run_stage(on_eval=on_eval)
            if self.state.stage_index + 1 >= len(self.schedule.stages):
                return self.state
            self.grow()

    # checkpoints -------------------------------------------------------------

    def save_checkpoint(self, path):
        return save_checkpoint(path, self)

    @classmethod
    def from_checkpoint(cls, path, dataset, classifier=None, log_path=None):
        snap = load_checkpoint(path)
        trainer = cls(snap.config, dataset, classifier if classifier is not None else snap.classifier, log_path)
        trainer._restore(snap)
        return trainer

    def _restore(self, snap: "Snapshot"):
        self.state = snap.state
        self.G = snap.generator
        self.G_ema = snap.generator_ema
        self.cond = snap.conditioner
        self.D.load_state_dict(snap.discriminator_state)
        self._make_optimizers(reset_d=True)
        if snap.optimizer_g is not None:
            self.opt_g.load_state_dict(snap.optimizer_g)
            self.opt_d.load_state_dict(snap.optimizer_d)
        if snap.rng is not None:
            self.gen.set_state(snap.rng)


# --- sampling ----------------------------------------------------------------------

@torch.no_grad()
def class_mean_styles(net: GeneratorNet, cond: ClassConditioner, n: int = 10_000, seed: int = 0):
    """Mean mapped style per class, shape [classes, w_dim]."""
    rows = []
    for c in range(cond.table.class_count):
        vec = cond.for_generator(torch.tensor([c]))
        rows.append(compute_mean_style(net, n, lambda k, gen: vec.expand(k, -1), seed=seed + c))
    return torch.stack(rows)


@torch.no_grad()
def generate_images(net: GeneratorNet, cond: ClassConditioner, labels, seed=0, psi=1.0, class_means=None,
                    batch_size=100):
    """Class-conditional samples; truncation pulls each style towards its class mean."""
    labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    if psi != 1 and class_means is None:
        class_means = class_mean_styles(net, cond, seed=seed)
    gen = torch.Generator().manual_seed(seed)
    out = []
    for i in range(0, len(labels), batch_size):
        lab = labels[i:i + batch_size]
        z = torch.randn(len(lab), net.z_dim, generator=gen)
        w = net.map_latent(z, cond.for_generator(lab))
        if psi != 1:
            w = truncate_style(w, class_means[lab], psi)
        out.append(net.synthesize(w))
    return torch.cat(out) if out else torch.zeros(0, 3, net.resolution, net.resolution)


# --- checkpoint container ----------------------------------------------------------

@dataclass
class Snapshot:
    config: RunConfig
    state: TrainingState
    generator: GeneratorNet
    generator_ema: GeneratorNet | None
    conditioner: ClassConditioner
    classifier: ToyClassifier | None
    discriminator_state: dict
    optimizer_g: dict | None
    optimizer_d: dict | None
    rng: torch.Tensor | None
    meta: dict


def _net_meta(net: GeneratorNet):
    return {"config": net.config, "specs": _specs_to_rows(net.specs), "frozen": sorted(net.frozen_modules)}


def _net_from_meta(meta, blobs, prefix):
    cfg = dict(meta["config"])
    res = cfg.pop("resolution")
    net = GeneratorNet(_rows_to_specs(meta["specs"]), res, **cfg, frozen=meta["frozen"])
    sio.load_state_blobs(net, blobs, prefix)
    return net


def _optimizer_blobs(opt, prefix):
    sd = opt.state_dict()
    blobs = {}
    for pid, st in sd["state"].items():
        for k, v in st.items():
            blobs[f"{prefix}/{pid}/{k}"] = v if torch.is_tensor(v) else torch.tensor(v)
    return {"param_groups": sd["param_groups"]}, blobs


def _optimizer_from_blobs(meta, blobs, prefix):
    state = {}
    for name, arr in blobs.items():
        if not name.startswith(prefix + "/"):
            continue
        _, pid, key = name.split("/", 2)
        state.setdefault(int(pid), {})[key] = torch.from_numpy(arr)
    return {"state": state, "param_groups": meta["param_groups"]}


def save_checkpoint(path, trainer: Trainer):
    """Write generator(s), conditioner, discriminator, optimizers and state to one file."""
    st = trainer.state
    blobs = {}
    blobs.update(sio.state_dict_blobs(trainer.G, "G"))
    if trainer.G_ema is not None:
        blobs.update(sio.state_dict_blobs(trainer.G_ema, "G_ema"))
    blobs.update(sio.state_dict_blobs(trainer.cond, "cond"))
    blobs.update(sio.state_dict_blobs(trainer.D, "D"))
    og_meta, og = _optimizer_blobs(trainer.opt_g, "opt_g")
    od_meta, od = _optimizer_blobs(trainer.opt_d, "opt_d")
    blobs.update(og)
    blobs.update(od)
    blobs["rng"] = trainer.gen.get_state()
    meta = {
        "config": trainer.cfg.to_dict(),
        "schedule": {"layer_counts": trainer.schedule.layer_counts,
                     "stages": [asdict(s) for s in trainer.schedule.stages]},
        "state": {"images_seen": st.images_seen, "stage_index": st.stage_index, "pl_mean": st.pl_mean,
                  "stage_images": st.stage_images, "fid_history": st.fid_history},
        "generator": _net_meta(trainer.G),
        "generator_ema": _net_meta(trainer.G_ema) if trainer.G_ema is not None else None,
        "table": {"source": trainer.cond.table.source, "shape": list(trainer.cond.table.embeddings.shape),
                  "normalize": trainer.cond.g_proj.normalize},
        "opt_g": og_meta, "opt_d": od_meta,
        "class_names": list(getattr(trainer.dataset, "class_names", [])),
        "classifier": None,
    }
    clf = trainer.classifier
    if clf is not None and hasattr(clf, "spec"):
        meta["classifier"] = clf.spec()
        blobs.update(sio.state_dict_blobs(clf, "clf"))
    return sio.write_container(path, "checkpoint", meta, blobs)


def load_checkpoint(path) -> Snapshot:
    meta, blobs = sio.read_container(path, "checkpoint")
    cfg = config_from_dict(meta["config"])
    s = meta["state"]
    state = TrainingState(images_seen=s["images_seen"], stage_index=s["stage_index"], pl_mean=s["pl_mean"],
                          stage_images=s["stage_images"], fid_history=[tuple(x) for x in s["fid_history"]])
    G = _net_from_meta(meta["generator"], blobs, "G")
    G_ema = _net_from_meta(meta["generator_ema"], blobs, "G_ema").eval() if meta["generator_ema"] else None
    t = meta["table"]
    table = ClassEmbeddingTable(torch.zeros(t["shape"]), source=t["source"])
    cond = ClassConditioner(table, cfg.generator.z_dim, t["normalize"])
    sio.load_state_blobs(cond, blobs, "cond")
    d_state = {k[2:]: torch.from_numpy(v) for k, v in blobs.items() if k.startswith("D/")}
    classifier = None
    if meta.get("classifier"):
        classifier = ToyClassifier(**meta["classifier"])
        sio.load_state_blobs(classifier, blobs, "clf")
        classifier.requires_grad_(False).eval()
    return Snapshot(cfg, state, G, G_ema, cond, classifier, d_state,
                    _optimizer_from_blobs(meta["opt_g"], blobs, "opt_g"),
                    _optimizer_from_blobs(meta["opt_d"], blobs, "opt_d"),
                    torch.from_numpy(blobs["rng"]) if "rng" in blobs else None, meta)


def load_generator(path, ema=True):
    """``(generator, conditioner, snapshot)`` from a checkpoint, for sampling."""
    snap = load_checkpoint(path)
    net = snap.generator_ema if (ema and snap.generator_ema is not None) else snap.generator
    return net.eval(), snap.conditioner, snap

