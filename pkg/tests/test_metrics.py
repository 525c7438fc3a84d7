from __future__ import annotations

import json

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from cpsinpaint import metrics
from cpsinpaint.errors import ShapeError


def _sk(a, b, channel_axis=-1):
    return structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                 data_range=1.0, channel_axis=channel_axis)


def test_ssim_matches_skimage():
    rng = np.random.default_rng(0)
    for shape in [(20, 23, 3), (16, 16, 1), (32, 12, 3)]:
        a = rng.random(shape)
        b = np.clip(a + 0.1 * rng.standard_normal(shape), 0, 1)
        assert metrics.ssim(a, b) == pytest.approx(_sk(a, b), abs=1e-12)
    g = rng.random((18, 18))
    h = np.clip(g + 0.2 * rng.standard_normal(g.shape), 0, 1)
    assert metrics.ssim(g, h) == pytest.approx(_sk(g, h, None), abs=1e-12)


def test_ssim_video_is_frame_mean():
    rng = np.random.default_rng(1)
    a, b = rng.random((3, 16, 16, 3)), rng.random((3, 16, 16, 3))
    assert metrics.ssim(a, b) == pytest.approx(np.mean([_sk(a[i], b[i]) for i in range(3)]), abs=1e-12)


def test_ssim_identity_symmetry_constants():
    rng = np.random.default_rng(2)
    a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
    assert metrics.ssim(a, a) == 1.0
    assert metrics.ssim(a, b) == metrics.ssim(b, a)
    c1 = (0.01 * 1.0) ** 2
    zero, one = np.zeros((16, 16, 3)), np.ones((16, 16, 3))
    assert metrics.ssim(zero, one) == pytest.approx(c1 / (1.0 + c1), rel=1e-12)


def test_ssim_degrades_with_noise():
    rng = np.random.default_rng(3)
    a = rng.random((24, 24, 3))
    noise = rng.standard_normal(a.shape)
    scores = [metrics.ssim(a, a + s * noise) for s in (0.0, 0.02, 0.05, 0.1, 0.3)]
    assert all(x > y for x, y in zip(scores, scores[1:]))


def test_ssim_errors():
    with pytest.raises(ShapeError):
        metrics.ssim(np.zeros((16, 16)), np.zeros((16, 17)))
    with pytest.raises(ShapeError):
        metrics.ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_psnr():
    a = np.zeros((4, 4))
    assert metrics.psnr(a, a) == metrics.PSNR_CAP
    assert metrics.psnr(a, a + 0.1) == pytest.approx(20.0)
    rng = np.random.default_rng(4)
    x, y = rng.random((5, 6)), rng.random((5, 6))
    brute = 10 * np.log10(1.0 / (sum((p - q) ** 2 for p, q in zip(x.ravel(), y.ravel())) / 30))
    assert metrics.psnr(x, y) == pytest.approx(brute, rel=1e-12)
    assert metrics.psnr_from_mse(0.01) > metrics.psnr_from_mse(0.02)


def test_region_metrics():
    rng = np.random.default_rng(5)
    gt = rng.random((2, 16, 16, 3))
    out = np.clip(gt + 0.1 * rng.standard_normal(gt.shape), 0, 1)
    mask = np.ones((2, 16, 16), np.uint8)
    mask[:, 4:10, 5:12] = 0
    res = metrics.region_metrics(out, gt, mask)
    n_h, n_k = res["hole"]["pixels"], res["known"]["pixels"]
    assert n_h == 2 * 6 * 7 and n_h + n_k == 2 * 256
    total = metrics.mse(out, gt)
    assert (n_h * res["hole"]["mse"] + n_k * res["known"]["mse"]) / (n_h + n_k) == pytest.approx(total, rel=1e-12)
    comp = np.where(mask[..., None] > 0, gt, out)
    assert metrics.region_metrics(comp, gt, mask)["known"]["mse"] == 0.0
    assert "hole" not in metrics.region_metrics(out, gt, np.ones_like(mask))
    with pytest.raises(ShapeError):
        metrics.region_metrics(out, gt, mask[:, :8])


def test_temporal_consistency():
    static = np.repeat(np.random.default_rng(6).random((1, 8, 8, 3)), 4, axis=0)
    assert metrics.temporal_consistency(static) == 0.0
    flicker = np.zeros((4, 8, 8, 3))
    flicker[1::2] = 1.0
    assert metrics.temporal_consistency(flicker) == 1.0
    rng = np.random.default_rng(7)
    v = rng.random((5, 8, 8, 3))
    mask = (rng.random((5, 8, 8)) > 0.3).astype(np.uint8)
    assert metrics.temporal_consistency(v, mask) == pytest.approx(metrics.temporal_consistency(v[::-1], mask[::-1]))
    assert metrics.temporal_consistency(v, np.ones_like(mask)) == 0.0
    with pytest.raises(ShapeError):
        metrics.temporal_consistency(v[:1])


def test_report(tmp_path):
    rng = np.random.default_rng(8)
    gt = rng.random((3, 16, 16, 3))
    mask = np.ones((3, 16, 16), np.uint8)
    mask[:, 2:6, 2:6] = 0
    metrics.register_metric("zero", lambda o, g: 0.0)
    try:
        rows = [metrics.evaluate(gt, gt, mask, "a"), metrics.evaluate(gt * 0.9, gt, mask, "b")]
    finally:
        metrics.LEARNED_METRICS.pop("zero")
    report = metrics.write_report(tmp_path / "r.json", rows)
    loaded = json.loads((tmp_path / "r.json").read_text())
    assert loaded == report
    assert loaded["aggregate"]["count"] == 2 and rows[0]["zero"] == 0.0
    assert loaded["aggregate"]["hole"]["mae"] == pytest.approx(rows[1]["regions"]["hole"]["mae"] / 2)
