"""Miniature end-to-end training run on the mirror-sphere scene.

Everything is shrunk (32px images, 900 iterations) so the whole loop —
bootstrap, reflection stage with normal propagation and color sabotage,
densification, specular termination — finishes in well under a minute.
Quality at this scale is rough; the point is to watch the schedule act.
"""

import os
import time

import numpy as np

from specsplat.io import load_dataset, write_png
from specsplat.metrics import eval_metrics
from specsplat.pipeline import render
from specsplat.scenegen import default_scene, make_dataset
from specsplat.train import TrainConfig, train

out_dir = os.path.join(os.path.dirname(__file__), "out", "04")
data_dir = os.path.join(out_dir, "dataset")
os.makedirs(out_dir, exist_ok=True)

scene = default_scene("mirror", seed=0, env_height=16)
make_dataset(scene, n_train=12, n_test=3, out_path=data_dir, res=32)
dataset = load_dataset(data_dir, split="train")

cfg = TrainConfig(
    total_iters=900,
    bootstrap_iters=300,
    propagation_period=100,
    clamp_period=450,
    propagation_offset=30,
    termination_patience_iters=300,
    densify_start=100,
    densify_end=700,
    densify_interval=100,
    densify_grad_threshold=1e-4,
    n_init=400,
    max_gaussians=1200,
    env_height=16,
    domain_center=(0.0, 0.0, 0.0),
    domain_radius=1.2,
)

t0 = time.time()
result = train(dataset, cfg, seed=0, log_interval=100,
               log_fn=lambda msg: print("  " + msg))
print(f"trained {result.state.iteration + 1} iterations "
      f"in {time.time() - t0:.1f}s, {len(result.cloud)} Gaussians")

test = load_dataset(data_dir, split="test")
rows = []
for entry in test.entries:
    pred = render(result.cloud, entry.cam, result.env,
                  background=cfg.background, mode="deferred")
    rows.append(eval_metrics(pred, entry.image, entry.normals, entry.mask,
                             pred_ctx=None))
psnrs = [r["psnr"] for r in rows]
print(f"held-out PSNR {np.mean(psnrs):.2f} dB over {len(rows)} views")

pred = render(result.cloud, test.entries[0].cam, result.env,
              background=cfg.background)
write_png(os.path.join(out_dir, "prediction.png"), pred)
write_png(os.path.join(out_dir, "target.png"), test.entries[0].image)
write_png(os.path.join(out_dir, "env_learned.png"),
          np.clip(result.env.data, 0.0, 1.0))
print(f"wrote prediction/target/env_learned to {out_dir}")
