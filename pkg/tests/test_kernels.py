from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpsinpaint import kernels
from cpsinpaint.metrics import gaussian_kernel

needs_numba = pytest.mark.skipif(kernels.NUMBA_KERNELS is None, reason="numba not installed")


def _inputs(seed):
    rng = np.random.default_rng(seed)
    mask = (rng.random((9, 8, 12)) > 0.3).astype(np.uint8)
    return rng, mask


@needs_numba
@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_backends_agree(seed):
    rng, mask = _inputs(seed)
    np_k, nb_k = kernels.NUMPY_KERNELS, kernels.NUMBA_KERNELS
    np.testing.assert_array_equal(np_k.temporal_group_min(mask, 4), nb_k.temporal_group_min(mask, 4))
    np.testing.assert_array_equal(np_k.spatial_block_min(mask, 2, 3), nb_k.spatial_block_min(mask, 2, 3))
    hole = 1 - mask
    for r in (1, 2):
        np.testing.assert_array_equal(np_k.box_dilate(hole, r), nb_k.box_dilate(hole, r))
    video = rng.random((9, 8, 12, 3))
    np.testing.assert_allclose(np_k.causal_pool(video, 4, 2, 3), nb_k.causal_pool(video, 4, 2, 3), atol=1e-14)
    planes = rng.random((2, 7, 13))
    k = gaussian_kernel()
    np.testing.assert_allclose(np_k.gaussian_filter(planes, k), nb_k.gaussian_filter(planes, k), atol=1e-14)


def test_gaussian_filter_matches_scipy_reflect():
    from scipy.ndimage import gaussian_filter as sp_gauss

    planes = np.random.default_rng(0).random((2, 16, 20))
    out = kernels.gaussian_filter(planes, gaussian_kernel())
    ref = np.stack([sp_gauss(p, 1.5, mode="reflect", truncate=3.5) for p in planes])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_causal_pool_values():
    v = np.arange(3 * 2 * 2, dtype=float).reshape(3, 2, 2, 1)
    out = kernels.causal_pool(v, 2, 2, 2)
    assert out[:, 0, 0, 0].tolist() == [1.5, 7.5]


def test_box_dilate_radius_zero_copies():
    hole = np.zeros((1, 2, 2), np.uint8)
    out = kernels.box_dilate(hole, 0)
    assert out is not hole and np.array_equal(out, hole)


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, CPSINPAINT_DISABLE_NUMBA="1")
    code = "from cpsinpaint import kernels; print(kernels.BACKEND, kernels.ACTIVE is kernels.NUMPY_KERNELS)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]
