"""The finite-difference suite itself: scene conditioning and both
shading modes at reduced size (the full-size run is an acceptance test)."""

import numpy as np
import pytest

from specsplat.gradcheck import PARAM_CLASSES, build_scene, run_gradcheck


def test_build_scene_is_deterministic():
    a = build_scene(seed=3, n_gaussians=5, res=14)
    b = build_scene(seed=3, n_gaussians=5, res=14)
    assert np.array_equal(a[0].positions, b[0].positions)
    assert np.array_equal(a[4], b[4])  # target image


def test_build_scene_keeps_depths_staggered():
    cloud, env, cam, bg, target = build_scene(seed=0, n_gaussians=8, res=16)
    depths = np.sort(cloud.positions[:, 1])
    assert np.min(np.diff(depths)) > 10 * 1e-3  # fd bracket can't reorder


@pytest.mark.parametrize("mode", ["deferred", "forward"])
def test_gradcheck_passes_both_modes(mode):
    ok, results = run_gradcheck(seed=0, n_gaussians=4, res=14, env_height=6,
                                mode=mode)
    assert ok, [f"{r.name}: rel {r.worst_rel:.2e}" for r in results if not r.passed]
    assert [r.name for r in results] == list(PARAM_CLASSES)
    assert all(r.n_checked > 0 for r in results)


def test_gradcheck_env_texel_subsampling():
    ok, results = run_gradcheck(seed=1, n_gaussians=3, res=14, env_height=8,
                                max_env_texels=40)
    assert ok
    env_result = next(r for r in results if r.name == "env")
    assert env_result.n_checked <= 48  # stride rounding overshoots a little
