"""FPS statistics, energy-per-frame / performance-per-watt, and aggregation
of repeated runs.

FPS is defined over fixed-width time buckets (1 s by default): per-bucket
FPS is the frame count divided by the bucket width, and the reported mean
and population SD are taken over complete buckets only. Energy per frame is
average power divided by FPS (J/frame); performance per watt is its
reciprocal (FPS/W). Aggregates recompute the energy metrics from aggregated
power and FPS so the reciprocal identity survives aggregation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import InsufficientDataError
from .workload import FrameTrace

DEFAULT_BUCKET_S = 1.0


@dataclass(frozen=True)
class FpsStats:
    mean_fps: float
    sd_fps: float
    bucket_count: int
    total_frames: int

    def __post_init__(self):
        if self.sd_fps < 0:
            raise ValueError("sd_fps must be >= 0")


@dataclass(frozen=True)
class EnergyMetrics:
    p_avg_w: float
    energy_per_frame_j: float
    perf_per_watt: float

    @classmethod
    def compute(cls, p_avg_w: float, fps: float) -> "EnergyMetrics":
        return cls(p_avg_w=p_avg_w,
                   energy_per_frame_j=energy_per_frame(p_avg_w, fps),
                   perf_per_watt=perf_per_watt(fps, p_avg_w))


@dataclass(frozen=True)
class RunRecord:
    tier_name: str
    splat_count: int
    animated: bool
    repeat_index: int  # -1 marks an aggregate over repeats
    duration_s: float
    fps: FpsStats
    energy: EnergyMetrics
    violations: int = 0
    started_at: Optional[float] = None
    finished_at: Optional[float] = None

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError("duration_s must be > 0")
        if self.violations < 0:
            raise ValueError("violations must be >= 0")

    @property
    def key(self) -> tuple[str, int, bool, int]:
        return (self.tier_name, self.splat_count, self.animated, self.repeat_index)

    @property
    def group_key(self) -> tuple[str, int, bool]:
        return (self.tier_name, self.splat_count, self.animated)


def fps_stats(trace: FrameTrace, bucket_s: float = DEFAULT_BUCKET_S) -> FpsStats:
    """Bucketed FPS mean and population SD over complete buckets.

    Frames are binned by start time relative to the first frame; the trailing
    partial bucket (anything past the last whole bucket that fits in the
    trace duration) is dropped.
    """
    if bucket_s <= 0:
        raise ValueError("bucket_s must be > 0")
    if not trace.frames:
        raise InsufficientDataError("empty frame trace")
    t0, t_end = trace.span
    duration = t_end - t0
    n_complete = math.floor(duration / bucket_s + 1e-9)
    if n_complete < 2:
        raise InsufficientDataError(
            f"need at least 2 complete {bucket_s}s buckets, trace covers "
            f"{duration:.3f}s")
    counts = [0] * n_complete
    total = 0
    for frame in trace.frames:
        b = math.floor((frame.t_start_s - t0) / bucket_s)
        if 0 <= b < n_complete:
            counts[b] += 1
            total += 1
    rates = [c / bucket_s for c in counts]
    mean = sum(rates) / len(rates)
    variance = sum((r - mean) ** 2 for r in rates) / len(rates)
    return FpsStats(mean_fps=mean, sd_fps=math.sqrt(variance),
                    bucket_count=n_complete, total_frames=total)


def energy_per_frame(p_avg_w: float, fps: float) -> float:
    """Joules spent per rendered frame: average power over frame rate."""
    if fps <= 0:
        raise ValueError(f"fps must be > 0, got {fps}")
    if p_avg_w < 0:
        raise ValueError(f"p_avg_w must be >= 0, got {p_avg_w}")
    return p_avg_w / fps


def perf_per_watt(fps: float, p_avg_w: float) -> float:
    """Frames per second obtained per watt of average power."""
    if p_avg_w <= 0:
        raise ValueError(f"p_avg_w must be > 0, got {p_avg_w}")
    return fps / p_avg_w


def aggregate_repeats(records: Sequence[RunRecord]) -> RunRecord:
    """Aggregate repeated runs of one (tier, splats, animated) combination.

    Means of per-run mean FPS and average power; SD pooled as the
    bucket-count-weighted root mean square of per-run SDs; energy metrics
    recomputed from the aggregated power and FPS.
    """
    if not records:
        raise ValueError("no records to aggregate")
    keys = {r.group_key for r in records}
    if len(keys) != 1:
        raise ValueError(f"heterogeneous record keys: {sorted(keys)}")
    n = len(records)
    mean_fps = sum(r.fps.mean_fps for r in records) / n
    p_avg = sum(r.energy.p_avg_w for r in records) / n
    total_buckets = sum(r.fps.bucket_count for r in records)
    pooled_var = (sum(r.fps.bucket_count * r.fps.sd_fps ** 2 for r in records)
                  / total_buckets) if total_buckets else 0.0
    stats = FpsStats(mean_fps=mean_fps, sd_fps=math.sqrt(pooled_var),
                     bucket_count=total_buckets,
                     total_frames=sum(r.fps.total_frames for r in records))
    starts = [r.started_at for r in records if r.started_at is not None]
    ends = [r.finished_at for r in records if r.finished_at is not None]
    return RunRecord(
        tier_name=records[0].tier_name, splat_count=records[0].splat_count,
        animated=records[0].animated, repeat_index=-1,
        duration_s=sum(r.duration_s for r in records) / n,
        fps=stats, energy=EnergyMetrics.compute(p_avg, mean_fps),
        violations=sum(r.violations for r in records),
        started_at=min(starts) if starts else None,
        finished_at=max(ends) if ends else None)
