from __future__ import annotations

import numpy as np
import pytest
from scipy import ndimage

from cpsinpaint.synth import (
    MAX_SLOPE,
    OBJECT_SHAPES,
    SCENE_KINDS,
    SCENE_PROMPTS,
    ObjectSpec,
    SceneSpec,
    gen_background,
    gen_corpus,
    gen_example,
    gen_object_mask,
    object_track,
)


@pytest.mark.parametrize("kind", SCENE_KINDS)
def test_zero_motion_is_static(kind):
    v = gen_background(SceneSpec(3, kind, frames=5, height=16, width=16, motion=0.0))
    assert v.dtype == np.float32 and v.shape == (5, 16, 16, 3)
    assert all(np.array_equal(v[0], v[i]) for i in range(5))


def test_background_reproducible_and_in_range():
    spec = SceneSpec(11, "blobs", frames=4, height=20, width=24, motion=0.4)
    a, b = gen_background(spec), gen_background(spec)
    np.testing.assert_array_equal(a, b)
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_adjacent_frame_change_bounded():
    rng = np.random.default_rng(0)
    for seed in range(100):
        kind = SCENE_KINDS[seed % 4]
        motion = float(rng.uniform(0, 0.5))
        v = gen_background(SceneSpec(seed, kind, frames=6, height=32, width=32, motion=motion)).astype(np.float64)
        mad = np.abs(np.diff(v, axis=0)).mean(axis=(1, 2, 3))
        assert mad.max() <= MAX_SLOPE * motion + 1e-6, (seed, kind)


def test_spatial_slope_bounded():
    for seed in range(40):
        v = gen_background(SceneSpec(seed, SCENE_KINDS[seed % 4], frames=1, height=32, width=32)).astype(np.float64)
        assert np.abs(np.diff(v, axis=1)).max() <= MAX_SLOPE + 1e-6
        assert np.abs(np.diff(v, axis=2)).max() <= MAX_SLOPE + 1e-6


def test_zero_size_object_is_all_known():
    m = gen_object_mask(ObjectSpec(1, min_frac=0.0, max_frac=0.0), 4, 16, 16)
    assert m.all()


def test_stationary_object_is_identical_every_frame():
    m = gen_object_mask(ObjectSpec(2, "polygon-blob", step=0.0, deform=0.0), 6, 32, 32)
    assert all(np.array_equal(m[0], m[i]) for i in range(6))


@pytest.mark.parametrize("shape", OBJECT_SHAPES)
def test_hole_fraction_connected_and_smooth_track(shape):
    for seed in range(34):
        spec = ObjectSpec(seed, shape)
        m = gen_object_mask(spec, 17, 64, 64)
        frac = 1.0 - m.mean(axis=(1, 2))
        assert frac.min() >= spec.min_frac and frac.max() <= spec.max_frac, (seed, frac)
        for f in range(17):
            _, n = ndimage.label(m[f] == 0)
            assert n == 1
        poses = object_track(spec, 17, 64, 64)
        shifts = [np.hypot(b.cy - a.cy, b.cx - a.cx) for a, b in zip(poses, poses[1:])]
        assert max(shifts) <= spec.step + 1e-9


def test_spec_validation():
    with pytest.raises(ValueError):
        SceneSpec(0, "fog")
    with pytest.raises(ValueError):
        ObjectSpec(0, "star")
    with pytest.raises(ValueError):
        ObjectSpec(0, min_frac=0.3, max_frac=0.2)
    with pytest.raises(ValueError):
        ObjectSpec(0, max_frac=0.6)


def test_example_and_corpus():
    ex = gen_example(5, frames=9, height=32, width=32)
    assert ex.video.shape == (9, 32, 32, 3) and ex.mask.shape == (9, 32, 32) and ex.mask.dtype == np.uint8
    assert ex.prompt == SCENE_PROMPTS[ex.scene.kind]
    assert ex.meta()["scene"]["seed"] == 5
    corpus = gen_corpus(3, seed=2, frames=5, height=16, width=16)
    assert [e.id for e in corpus] == ["2000006", "2000007", "2000008"]
    again = gen_corpus(3, seed=2, frames=5, height=16, width=16)
    assert all(np.array_equal(a.video, b.video) and np.array_equal(a.mask, b.mask) for a, b in zip(corpus, again))


def test_frozen_example_statistics():
    ex = gen_example(0)
    assert ex.scene.kind == "stripes" and ex.obj.shape == "ellipse"
    assert float(ex.video.astype(np.float64).mean()) == pytest.approx(0.2639215626, abs=1e-8)
    assert int((ex.mask == 0).sum()) == 11763
