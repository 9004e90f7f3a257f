"""Ray-trace the analytic mirror-sphere scene and emit a tiny dataset.

The oracle is what training data comes from: a perfect mirror ball under a
procedural environment, cameras on a ring. Every pixel is exact, normals
come from the sphere equation, and the mask marks ray hits. The coverage
map shows which environment texels the test reflections actually sample —
only those texels are scored when judging a recovered environment.
"""

import os

import numpy as np

from specsplat.io import write_png, write_pfm
from specsplat.scenegen import (
    default_scene,
    make_dataset,
    reflection_coverage,
    render_oracle,
    ring_cameras,
)

out_dir = os.path.join(os.path.dirname(__file__), "out", "02")
os.makedirs(out_dir, exist_ok=True)

scene = default_scene("mirror", seed=7)
write_png(os.path.join(out_dir, "env_gt.png"), np.clip(scene.env.data, 0.0, 1.0))

cams = ring_cameras(scene, 6, 128, 128)
for i, cam in enumerate(cams[:3]):
    image, normals, mask = render_oracle(scene, cam)
    write_png(os.path.join(out_dir, f"view_{i}.png"), image)
    write_png(os.path.join(out_dir, f"normal_{i}.png"), 0.5 * (normals + 1.0))
    write_pfm(os.path.join(out_dir, f"normal_{i}.pfm"), normals)
    print(f"view {i}: {mask.sum()} / {mask.size} pixels hit the sphere")

cov = reflection_coverage(scene, cams)
write_png(os.path.join(out_dir, "coverage.png"),
          np.repeat(cov[:, :, None].astype(float), 3, axis=2))
print(f"6 cameras cover {cov.mean() * 100.0:.1f}% of environment texels")

# Full dataset on disk: images, normal maps, masks, camera transforms.
data_dir = os.path.join(out_dir, "dataset")
make_dataset(scene, n_train=8, n_test=2, out_path=data_dir, res=64)
print(f"wrote a small train/test dataset to {data_dir}")
