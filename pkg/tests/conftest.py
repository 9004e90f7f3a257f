import numpy as np
import pytest

from specsplat.core import Camera, GaussianCloud, logit


def random_cloud(rng, n, spread=0.4, scale_range=(0.05, 0.25),
                 opacity_range=(0.2, 0.9), reflective=True):
    cloud = GaussianCloud(
        positions=rng.normal(0.0, spread, (n, 3)),
        rotations=rng.normal(size=(n, 4)),
        log_scales=np.log(rng.uniform(*scale_range, (n, 3))),
        opacity_raw=logit(rng.uniform(*opacity_range, n)),
        sh_coeffs=rng.normal(0.0, 0.15, (n, 3, 16)),
        reflection=rng.uniform(0.0, 1.0, n) if reflective else np.zeros(n),
    )
    cloud.sh_coeffs[:, :, 0] += rng.uniform(0.3, 1.0, (n, 3))
    return cloud


def front_camera(res=32, dist=2.5, fov_x=0.9):
    return Camera.look_at(position=(0.0, -dist, 0.3), target=(0.0, 0.0, 0.0),
                          width=res, height=res, fov_x=fov_x)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
