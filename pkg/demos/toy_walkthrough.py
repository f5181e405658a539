"""Train the shapes toy end to end, then sample, truncate, invert and edit.

Training takes about 20 minutes on one CPU core. Pass a checkpoint path
to skip it:  python demos/toy_walkthrough.py run.sgxl
"""
import sys
from pathlib import Path

import torch
from PIL import Image

from sgxl.inversion import InversionConfig, invert_latent, pca_directions, pivotal_tune, apply_latent_edit
from sgxl.metrics import psnr
from sgxl.toy import toy_dataset, train_toy
from sgxl.training import class_mean_styles, generate_images, load_generator

out = Path("toy_walkthrough")
out.mkdir(exist_ok=True)


def save_row(images, name):
    row = torch.cat(list(images.clamp(-1, 1)), dim=2)
    Image.fromarray(((row.permute(1, 2, 0) + 1) * 127.5).byte().numpy()).save(out / name)


ckpt = Path(sys.argv[1]) if len(sys.argv) > 1 else out / "toy.sgxl"
if not ckpt.exists():
    train_toy(checkpoint=ckpt, on_eval=lambda t, r: print(t.state.images_seen, t.resolution, r))
net, cond, _ = load_generator(ckpt)

# conditional samples: even slots are discs, odd slots squares
labels = torch.arange(8) % 2
save_row(generate_images(net, cond, labels, seed=1), "samples.png")

# truncation pulls every style toward its class mean; psi=0 is the mean itself
means = class_mean_styles(net, cond, n=2000)
for psi in (1.0, 0.7, 0.4, 0.0):
    save_row(generate_images(net, cond, labels, seed=1, psi=psi, class_means=means), f"psi_{psi}.png")

# invert a real disc, then tune the synthesis layers around the found style
target = toy_dataset(1, seed=42).images_at(32)[:1]
cv = cond.for_generator(torch.tensor([0]))
w = invert_latent(target, net, InversionConfig(iterations=300, ramp_up=30, ramp_down=100), class_vec=cv)
tuned = pivotal_tune(target, w, net, steps=50)
with torch.no_grad():
    before, after = net.synthesize(w), tuned.synthesize(w)
print(f"reconstruction PSNR: latent only {psnr(before, target):.1f} dB, after tuning {psnr(after, target):.1f} dB")
save_row(torch.cat([target, before, after]), "inversion.png")

# walk along the first principal style direction
d = pca_directions(net, n_samples=2000, k=4)[0]
with torch.no_grad():
    strip = torch.cat([apply_latent_edit(w, d, s, tuned) for s in (-3, -1.5, 0, 1.5, 3)])
save_row(strip, "edit_pc0.png")
print("wrote", sorted(p.name for p in out.iterdir()))
