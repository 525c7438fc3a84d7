from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from cpsinpaint.cps import (
    CircularSchedule,
    build_circular,
    circular_pass,
    cps_denoise,
    pad_latents,
    padded_length,
    plan_windows,
    schedule_dump,
    single_pass_denoise,
)
from cpsinpaint.errors import ScheduleError, ShapeError
from cpsinpaint.flow import euler_sample


def _cond(rng, l, h=2, w=2, c=3):
    return rng.standard_normal((l, h, w, c)), (rng.random((l, h, w)) > 0.5).astype(float)


def test_circular_indices():
    s = build_circular(5)
    assert s.indices.tolist() == [0, 1, 2, 3, 4, 3, 2, 1] and s.L == 8
    assert build_circular(2).indices.tolist() == [0, 1]
    assert build_circular(121).L == 240
    with pytest.raises(ScheduleError):
        build_circular(1)


def test_plan_examples():
    s = build_circular(5, 4, alpha=3)
    assert plan_windows(s).position_sets() == [[0, 1, 2, 3], [4, 5, 6, 7]]
    shifted = s.advanced()
    assert shifted.alpha_sigma == 3
    plan = plan_windows(shifted)
    assert plan.frame_lists() == [[3, 4, 3, 2], [1, 0, 1, 2]]
    assert plan.position_sets() == [[3, 4, 5, 6], [7, 0, 1, 2]]
    full_turn = CircularSchedule(l=5, f=4, alpha=3, alpha_sigma=8)
    assert plan_windows(full_turn).position_sets() == plan_windows(s).position_sets()


def test_plan_errors_point_to_padding():
    with pytest.raises(ScheduleError, match="l=6"):
        plan_windows(build_circular(5, 5))
    with pytest.raises(ScheduleError):
        plan_windows(build_circular(5, 9))
    with pytest.raises(ScheduleError):
        build_circular(5, 4, alpha=-1)


@pytest.mark.parametrize("l,f,expect", [(5, 4, 5), (5, 3, 7), (6, 4, 7), (16, 8, 17), (4, 5, 6), (2, 4, 3)])
def test_padded_length(l, f, expect):
    lp = padded_length(l, f)
    assert lp == expect and (2 * lp - 2) % f == 0


def test_pad_latents_repeats_last():
    seq = np.arange(3.0)[:, None]
    assert pad_latents(seq, 5)[:, 0].tolist() == [0, 1, 2, 2, 2]
    assert pad_latents(seq, 2) is seq


@settings(max_examples=60, deadline=None)
@given(l=st.integers(2, 12), data=st.data())
def test_plan_invariants(l, data):
    L = 2 * l - 2
    f = data.draw(st.sampled_from([d for d in range(1, L + 1) if L % d == 0]))
    alpha_sigma = data.draw(st.integers(0, 3 * L))
    sched = CircularSchedule(l=l, f=f, alpha=0, alpha_sigma=alpha_sigma)
    plan = plan_windows(sched)
    base = plan_windows(build_circular(l, f))
    pos = np.concatenate(plan.position_sets())
    assert sorted(pos.tolist()) == list(range(L))  # exactly once
    rotated = [[(p + alpha_sigma) % L for p in w] for w in base.position_sets()]
    assert plan.position_sets() == rotated
    for w in plan.windows:
        assert np.all(np.diff(w.positions) % L == 1)
        steps = np.abs(np.diff(w.frames))
        assert np.all((steps == 1) | ((steps == 0) & (l == 2)))


def test_zero_velocity_keeps_noise():
    rng = np.random.default_rng(0)
    c_mv, c_m = _cond(rng, 5)
    noise = rng.standard_normal((8, 2, 2, 3))
    out = cps_denoise(lambda z, a, b, t: np.zeros_like(z), c_mv, c_m, 2, 4, 3, noise=noise)
    np.testing.assert_array_equal(out, noise[:5])


@pytest.mark.parametrize("l,f,alpha,steps", [(5, 4, 3, 3), (9, 4, 7, 5), (9, 8, 1, 2), (5, 2, 8, 4), (17, 8, 0, 3)])
def test_matches_circular_oracle(l, f, alpha, steps):
    rng = np.random.default_rng(l * 100 + f)
    c_mv, c_m = _cond(rng, l)
    noise = rng.standard_normal((2 * l - 2, 2, 2, 3))
    model = oracles.LinearWindowModel(3, seed=f)
    got = cps_denoise(model, c_mv, c_m, steps, f, alpha, noise=noise)
    ref = oracles.circular_denoise(model, c_mv, c_m, steps, f, alpha, noise)
    assert np.abs(got - ref).max() < 1e-12


def test_circular_pass_with_wide_window():
    # f >= l would normally take the single-pass route; the circular core still matches the oracle
    rng = np.random.default_rng(9)
    c_mv, c_m = _cond(rng, 5)
    noise = rng.standard_normal((8, 2, 2, 3))
    model = oracles.LinearWindowModel(3, seed=1)
    got = circular_pass(model, c_mv, c_m, 3, 8, 3, noise=noise)
    assert np.abs(got - oracles.circular_denoise(model, c_mv, c_m, 3, 8, 3, noise)).max() < 1e-12
    assert not np.allclose(got, cps_denoise(model, c_mv, c_m, 3, 8, 3, noise=noise))


def test_trace_records_progression():
    rng = np.random.default_rng(0)
    c_mv, c_m = _cond(rng, 5)
    trace = []
    cps_denoise(lambda z, a, b, t: np.zeros_like(z), c_mv, c_m, 4, 4, 3, rng=rng, trace=trace)
    assert [r["alpha_sigma"] for r in trace] == [0, 3, 6, 9]
    assert [r["t"] for r in trace] == [1.0, 0.75, 0.5, 0.25]


def test_short_sequence_takes_single_pass():
    rng = np.random.default_rng(2)
    c_mv, c_m = _cond(rng, 4)
    noise = rng.standard_normal(c_mv.shape)
    model = oracles.LinearWindowModel(3)
    a = cps_denoise(model, c_mv, c_m, 5, 8, noise=noise)
    b = single_pass_denoise(model, c_mv, c_m, 5, noise=noise)
    c = euler_sample(lambda z, t: model(z, c_mv, c_m, t), noise, 5)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(b, c)


def test_cps_shape_checks():
    rng = np.random.default_rng(0)
    c_mv, c_m = _cond(rng, 5)
    with pytest.raises(ShapeError):
        cps_denoise(lambda z, a, b, t: z, c_mv, c_m[:4], 2, 4)
    with pytest.raises(ShapeError):
        cps_denoise(lambda z, a, b, t: z, c_mv, c_m, 2, 4, noise=np.zeros((5, 2, 2, 3)))
    with pytest.raises(ValueError):
        cps_denoise(lambda z, a, b, t: z, c_mv, c_m, 0, 4)


def test_schedule_dump_text():
    lines = schedule_dump(5, 4, 3, 2)
    assert lines[1] == "indices=[0, 1, 2, 3, 4, 3, 2, 1]"
    assert lines[-2] == "  window 0: positions=[3, 4, 5, 6] frames=[3, 4, 3, 2]"
    assert lines[-1] == "  window 1: positions=[7, 0, 1, 2] frames=[1, 0, 1, 2]"
