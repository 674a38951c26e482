import math
import random
import statistics

import pytest
from hypothesis import given, strategies as st

from gpu_tier_bench.errors import InsufficientDataError
from gpu_tier_bench.metrics import (EnergyMetrics, FpsStats, RunRecord,
                                    aggregate_repeats, energy_per_frame,
                                    fps_stats, perf_per_watt)
from gpu_tier_bench.workload import FrameRecord, FrameTrace


def steady_trace(fps_by_second):
    """Build a trace with an exact frame count inside each 1 s bucket."""
    frames = []
    i = 0
    for second, fps in enumerate(fps_by_second):
        for j in range(fps):
            t = second + j / fps
            frames.append(FrameRecord(i, t, 1000.0 / fps))
            i += 1
    # trailing frame so the final bucket counts as complete
    frames.append(FrameRecord(i, float(len(fps_by_second)), 10.0))
    return FrameTrace(tuple(frames))


def brute_force_fps(trace, bucket_s=1.0):
    """Independent bucketing oracle used to cross-check fps_stats."""
    t0, t_end = trace.span
    n = int(math.floor((t_end - t0) / bucket_s + 1e-9))
    counts = [0] * n
    for f in trace.frames:
        b = int((f.t_start_s - t0) // bucket_s)
        if b < n:
            counts[b] += 1
    rates = [c / bucket_s for c in counts]
    return statistics.mean(rates), statistics.pstdev(rates)


def random_trace(rng, min_seconds=3, max_seconds=12):
    seconds = rng.randint(min_seconds, max_seconds)
    frames = []
    t = 0.0
    i = 0
    while t < seconds:
        ft = rng.uniform(2.0, 40.0)  # 25-500 fps instantaneous
        frames.append(FrameRecord(i, t, ft))
        t += ft / 1000.0
        i += 1
    return FrameTrace(tuple(frames))


class TestFpsStats:
    def test_constant_rate(self):
        stats = fps_stats(steady_trace([100, 100, 100]))
        assert stats.mean_fps == pytest.approx(100.0)
        assert stats.sd_fps == pytest.approx(0.0)
        assert stats.bucket_count == 3

    def test_two_phase_trace(self):
        # 5 s at 100 fps then 5 s at 50 fps: mean 75, population SD 25
        stats = fps_stats(steady_trace([100] * 5 + [50] * 5))
        assert stats.mean_fps == pytest.approx(75.0)
        assert stats.sd_fps == pytest.approx(25.0)
        assert stats.bucket_count == 10
        assert stats.total_frames == 750

    def test_partial_trailing_bucket_dropped(self):
        frames = [FrameRecord(i, i * 0.01, 10.0) for i in range(250)]  # 2.5 s
        stats = fps_stats(FrameTrace(tuple(frames)))
        assert stats.bucket_count == 2
        assert stats.mean_fps == pytest.approx(100.0)

    def test_bucketing_relative_to_first_frame(self):
        base = steady_trace([60, 60, 60])
        shifted = FrameTrace(tuple(
            FrameRecord(f.frame_index, f.t_start_s + 37.25, f.frame_time_ms)
            for f in base.frames))
        assert fps_stats(shifted) == fps_stats(base)

    def test_too_short_trace_rejected(self):
        frames = tuple(FrameRecord(i, i * 0.01, 10.0) for i in range(150))
        with pytest.raises(InsufficientDataError, match="2 complete"):
            fps_stats(FrameTrace(frames))

    def test_empty_trace_rejected(self):
        with pytest.raises(InsufficientDataError):
            fps_stats(FrameTrace(()))

    def test_custom_bucket_width(self):
        stats = fps_stats(steady_trace([100] * 4), bucket_s=2.0)
        assert stats.bucket_count == 2
        assert stats.mean_fps == pytest.approx(100.0)

    def test_matches_brute_force_oracle_on_random_traces(self):
        rng = random.Random(20240817)
        for _ in range(200):
            trace = random_trace(rng)
            stats = fps_stats(trace)
            mean, sd = brute_force_fps(trace)
            assert stats.mean_fps == pytest.approx(mean, rel=1e-12)
            assert stats.sd_fps == pytest.approx(sd, rel=1e-9, abs=1e-9)

    @given(st.lists(st.integers(min_value=1, max_value=200), min_size=2,
                    max_size=10))
    def test_mean_bounded_by_extremes(self, per_second):
        stats = fps_stats(steady_trace(per_second))
        assert min(per_second) - 1e-9 <= stats.mean_fps <= max(per_second) + 1e-9


class TestEnergyMetrics:
    def test_example_values(self):
        assert energy_per_frame(150.0, 50.0) == pytest.approx(3.0)
        assert perf_per_watt(50.0, 150.0) == pytest.approx(1 / 3)

    def test_reciprocal_identity(self):
        m = EnergyMetrics.compute(p_avg_w=137.5, fps=58.8)
        assert m.energy_per_frame_j * m.perf_per_watt == pytest.approx(1.0,
                                                                       rel=1e-12)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            energy_per_frame(100.0, 0.0)
        with pytest.raises(ValueError):
            energy_per_frame(-1.0, 50.0)
        with pytest.raises(ValueError):
            perf_per_watt(50.0, 0.0)

    @given(st.floats(min_value=1, max_value=500),
           st.floats(min_value=1, max_value=500))
    def test_identity_holds_over_domain(self, p, fps):
        assert (energy_per_frame(p, fps) * perf_per_watt(fps, p)
                == pytest.approx(1.0, rel=1e-12))

    @given(st.floats(min_value=1, max_value=500),
           st.floats(min_value=1, max_value=500))
    def test_energy_definition(self, p, fps):
        assert energy_per_frame(p, fps) == pytest.approx(p / fps, rel=1e-12)


def record(fps_mean, p_avg, sd=0.0, buckets=10, repeat=0, tier="rtx3070",
           splats=580604, animated=False):
    stats = FpsStats(mean_fps=fps_mean, sd_fps=sd, bucket_count=buckets,
                     total_frames=int(fps_mean * buckets))
    return RunRecord(tier_name=tier, splat_count=splats, animated=animated,
                     repeat_index=repeat, duration_s=float(buckets),
                     fps=stats, energy=EnergyMetrics.compute(p_avg, fps_mean))


class TestAggregateRepeats:
    def test_two_run_example(self):
        agg = aggregate_repeats([record(100.0, 100.0, repeat=0),
                                 record(50.0, 200.0, repeat=1)])
        assert agg.fps.mean_fps == pytest.approx(75.0)
        assert agg.energy.p_avg_w == pytest.approx(150.0)
        assert agg.energy.energy_per_frame_j == pytest.approx(2.0)
        assert agg.repeat_index == -1

    def test_pooled_sd_is_weighted_rms(self):
        agg = aggregate_repeats([record(60.0, 100.0, sd=3.0, buckets=10),
                                 record(60.0, 100.0, sd=4.0, buckets=30)])
        expected = math.sqrt((10 * 9 + 30 * 16) / 40)
        assert agg.fps.sd_fps == pytest.approx(expected)
        assert agg.fps.bucket_count == 40

    def test_identical_runs_aggregate_to_themselves(self):
        r = record(58.8, 137.5, sd=2.1)
        agg = aggregate_repeats([r, r, r])
        assert agg.fps.mean_fps == pytest.approx(r.fps.mean_fps)
        assert agg.fps.sd_fps == pytest.approx(r.fps.sd_fps)
        assert agg.energy.p_avg_w == pytest.approx(r.energy.p_avg_w, rel=1e-12)
        assert agg.energy.energy_per_frame_j == pytest.approx(
            r.energy.energy_per_frame_j, rel=1e-12)

    def test_permutation_invariant(self):
        runs = [record(100.0, 90.0, sd=1.0, repeat=0),
                record(80.0, 110.0, sd=2.0, repeat=1),
                record(90.0, 100.0, sd=3.0, repeat=2)]
        forward = aggregate_repeats(runs)
        backward = aggregate_repeats(list(reversed(runs)))
        assert forward.fps == backward.fps
        assert forward.energy == backward.energy

    def test_mixed_groups_rejected(self):
        with pytest.raises(ValueError, match="heterogeneous"):
            aggregate_repeats([record(100.0, 100.0, tier="rtx3070"),
                               record(100.0, 100.0, tier="rtx3050")])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate_repeats([])

    def test_energy_identity_survives_aggregation(self):
        agg = aggregate_repeats([record(100.0, 100.0, repeat=0),
                                 record(50.0, 200.0, repeat=1)])
        assert (agg.energy.energy_per_frame_j * agg.energy.perf_per_watt
                == pytest.approx(1.0, rel=1e-12))
        assert agg.energy.energy_per_frame_j == pytest.approx(
            agg.energy.p_avg_w / agg.fps.mean_fps, rel=1e-12)

    def test_violations_summed(self):
        a, b = record(60.0, 100.0, repeat=0), record(60.0, 100.0, repeat=1)
        from dataclasses import replace
        agg = aggregate_repeats([replace(a, violations=2),
                                 replace(b, violations=1)])
        assert agg.violations == 3


class TestRunRecordKeys:
    def test_key_and_group_key(self):
        r = record(60.0, 100.0, repeat=2, tier="rtx4090", splats=1834311,
                   animated=True)
        assert r.key == ("rtx4090", 1834311, True, 2)
        assert r.group_key == ("rtx4090", 1834311, True)

    def test_validation(self):
        with pytest.raises(ValueError):
            FpsStats(mean_fps=60.0, sd_fps=-1.0, bucket_count=2, total_frames=120)
