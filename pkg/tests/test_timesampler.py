import numpy as np
import pytest

from noisesphere.timesampler import (
    SamplerConfig,
    TimeVector,
    make_rng,
    sample_times,
    sample_times_anchored,
    sample_times_legacy,
)


def ks_statistic(samples, cdf):
    """Kolmogorov-Smirnov sup-distance between the empirical CDF and cdf."""
    x = np.sort(samples)
    n = len(x)
    ecdf_hi = np.arange(1, n + 1) / n
    ecdf_lo = np.arange(0, n) / n
    c = cdf(x)
    return max(float(np.max(ecdf_hi - c)), float(np.max(c - ecdf_lo)))


def test_anchored_first_frame_is_always_zero():
    cfg = SamplerConfig(frames=16)
    rng = make_rng(0)
    for _ in range(200):
        tv = sample_times_anchored(cfg, rng)
        assert tv.times[0] == 0.0


def test_anchored_with_zero_jitter_is_the_anchor_grid():
    cfg = SamplerConfig(frames=16)

    class ZeroDraw:
        def uniform(self, lo, hi, size=None):
            return np.zeros(size) if size else 0.0

    tv = sample_times_anchored(cfg, ZeroDraw())
    assert np.array_equal(tv.times, np.arange(16) / 16)
    assert np.array_equal(tv.offsets, np.zeros(16))


def test_anchored_times_stay_inside_their_anchor_cells():
    cfg = SamplerConfig(frames=16)
    rng = make_rng(3)
    for _ in range(500):
        tv = sample_times_anchored(cfg, rng)
        assert np.all(tv.times >= np.arange(16) / 16)
        assert np.all(tv.times < np.arange(1, 17) / 16)
        assert np.all(np.diff(tv.times) > 0)
        assert np.all(tv.offsets >= 0) and np.all(tv.offsets < 1 / 16)


def test_anchored_jitter_is_uniform_by_ks():
    # 1e4 draws per frame; 1% critical value for the KS statistic is
    # 1.63 / sqrt(n)
    cfg = SamplerConfig(frames=16)
    rng = make_rng(12)
    draws = np.array([sample_times_anchored(cfg, rng).times for _ in range(10_000)])
    crit = 1.63 / np.sqrt(draws.shape[0])
    for i in range(1, 16):
        lo = i / 16
        stat = ks_statistic(draws[:, i], lambda x: np.clip((x - lo) * 16, 0, 1))
        assert stat < crit, f"frame {i}: KS {stat:.4f} >= {crit:.4f}"


def test_legacy_start_time_mean_matches_uniform_expectation():
    cfg = SamplerConfig(frames=16, mode="legacy")
    rng = make_rng(5)
    t0 = np.array([sample_times_legacy(cfg, rng).times[0] for _ in range(10_000)])
    # mean of U[0, 1/V] is 1/(2V); allow 3 sigma = 3/(V sqrt(12 n))
    v = 16
    assert abs(t0.mean() - 1 / (2 * v)) < 3 / (v * np.sqrt(12 * len(t0)))


def test_legacy_times_are_sorted_for_all_draws():
    cfg = SamplerConfig(frames=16, mode="legacy")
    rng = make_rng(9)
    for _ in range(500):
        tv = sample_times_legacy(cfg, rng)
        assert np.all(np.diff(tv.times) > 0)
        assert tv.times[0] >= 0 and tv.times[-1] <= 1


def test_legacy_degenerate_draws_are_jittered_apart():
    cfg = SamplerConfig(frames=4, mode="legacy")

    class ZeroDraw:
        def uniform(self, lo, hi, size=None):
            return np.full(size, lo) if size else lo

    tv = sample_times_legacy(cfg, ZeroDraw())
    assert np.allclose(tv.times, [0, 1e-6, 2e-6, 3e-6])


def test_legacy_draws_pinned_to_one_are_pushed_back_down():
    cfg = SamplerConfig(frames=4, mode="legacy")

    class OneDraw:
        def uniform(self, lo, hi, size=None):
            return np.full(size, hi) if size else hi

    tv = sample_times_legacy(cfg, OneDraw())
    assert tv.times[-1] == 1.0
    assert np.all(np.diff(tv.times) > 0)


def test_time_vector_validates_monotonicity_and_range():
    with pytest.raises(ValueError):
        TimeVector.from_times([0.0, 0.5, 0.5, 0.9])
    with pytest.raises(ValueError):
        TimeVector.from_times([0.0, 0.5, 1.5])
    tv = TimeVector.from_times([0.0, 0.3, 0.6, 0.9])
    assert tv.frames == 4
    assert np.allclose(tv.anchors, [0.0, 0.25, 0.5, 0.75])
    assert np.allclose(tv.offsets, [0.0, 0.05, 0.1, 0.15])


def test_sampler_dispatch_and_determinism():
    cfg = SamplerConfig(frames=16, mode="anchored", seed=42)
    a = sample_times(cfg)
    b = sample_times(cfg)
    assert np.array_equal(a.times, b.times)
    with pytest.raises(ValueError):
        SamplerConfig(frames=1)
    with pytest.raises(ValueError):
        SamplerConfig(mode="adaptive")
