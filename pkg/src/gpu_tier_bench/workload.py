"""Workload lifecycle: frame-log protocol, timed runs, and a synthetic
splat-style workload for hardware-free testing.

Frame-log protocol (any renderer can emit it with a one-line patch): the
workload prints `F <frame_index> <t_start_s> <frame_time_ms>` lines on
stdout, ASCII, space-separated, newline-terminated. Everything else on
stdout is ignored.
"""

from __future__ import annotations

import random
import subprocess
import threading
import time
from dataclasses import dataclass, replace
from typing import Iterable, Iterator

from .device import DeviceHandle, sim_sustained_tflops
from .errors import WorkloadError
from .telemetry import PowerSample, PowerTrace

FRAME_LINE_PREFIX = "F "


@dataclass(frozen=True)
class WorkloadSpec:
    """One renderer invocation: scene size, animation, resolution, duration."""

    command: tuple[str, ...]  # templated with {splats} {animated} {width} {height}
    splat_count: int
    animated: bool
    animated_splats: int = 0
    resolution: tuple[int, int] = (1920, 1080)
    duration_s: float = 120.0

    def __post_init__(self):
        if self.splat_count <= 0:
            raise ValueError("splat_count must be > 0")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be > 0")
        if self.animated != (self.animated_splats > 0):
            raise ValueError("animated_splats must be > 0 exactly when animated")
        object.__setattr__(self, "command", tuple(self.command))

    def render_command(self) -> list[str]:
        subs = {"splats": str(self.splat_count),
                "animated": "1" if self.animated else "0",
                "width": str(self.resolution[0]),
                "height": str(self.resolution[1])}
        out = []
        for part in self.command:
            for key, val in subs.items():
                part = part.replace("{%s}" % key, val)
            out.append(part)
        return out

    @property
    def total_splats(self) -> int:
        return self.splat_count + self.animated_splats


@dataclass(frozen=True)
class FrameRecord:
    frame_index: int
    t_start_s: float
    frame_time_ms: float


@dataclass(frozen=True)
class FrameTrace:
    frames: tuple[FrameRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        idx = [f.frame_index for f in self.frames]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("frame indices must be strictly increasing")
        if any(f.frame_time_ms <= 0 for f in self.frames):
            raise ValueError("frame times must be > 0")

    @property
    def span(self) -> tuple[float, float]:
        if not self.frames:
            return (0.0, 0.0)
        last = self.frames[-1]
        return (self.frames[0].t_start_s, last.t_start_s + last.frame_time_ms / 1000.0)

    def trimmed(self, t0: float, t1: float) -> "FrameTrace":
        return FrameTrace(tuple(f for f in self.frames if t0 <= f.t_start_s <= t1))


@dataclass
class FrameLogResult:
    trace: FrameTrace
    ignored_lines: int


def parse_frame_log(lines: Iterable[str]) -> FrameLogResult:
    """Parse frame-log lines; non-protocol lines are counted and ignored."""
    frames: list[FrameRecord] = []
    ignored = 0
    for line in lines:
        line = line.rstrip("\n")
        parts = line.split()
        if len(parts) == 4 and parts[0] == "F":
            try:
                record = FrameRecord(frame_index=int(parts[1]),
                                     t_start_s=float(parts[2]),
                                     frame_time_ms=float(parts[3]))
            except ValueError:
                ignored += 1
                continue
            if frames and record.frame_index <= frames[-1].frame_index:
                raise WorkloadError(
                    f"non-monotone frame index {record.frame_index} after "
                    f"{frames[-1].frame_index}")
            frames.append(record)
        elif line.strip():
            ignored += 1
    if not frames:
        raise WorkloadError("no frames parsed from workload output")
    return FrameLogResult(trace=FrameTrace(tuple(frames)), ignored_lines=ignored)


def serialize_frame_log(trace: FrameTrace) -> str:
    return "".join(f"F {f.frame_index} {f.t_start_s!r} {f.frame_time_ms!r}\n"
                   for f in trace.frames)


@dataclass(frozen=True)
class SyntheticCost:
    """Cost constants for the synthetic splat workload.

    frame_time_ms = (overhead_work + work_per_splat * effective_splats)
                    / (tier_tflops * 1e6), effective_splats = splat_count +
    animation_penalty * animated_splats. The default overhead is zero (pure
    per-splat cost); TABLE_FIT carries constants fitted against measured
    flagship-tier frame rates (fit error < 1% on all four scene sizes).
    """

    work_per_splat: float = 99.645551
    overhead_work: float = 0.0
    animation_penalty: float = 45.0
    noise_fraction: float = 0.0


#: Constants fitted to the flagship tier's no-animation frame rates.
TABLE_FIT = SyntheticCost(work_per_splat=99.645551, overhead_work=8.811569e8,
                          animation_penalty=45.0)


def synthetic_frame_time_ms(cost: SyntheticCost, spec: WorkloadSpec,
                            tier_tflops: float) -> float:
    if tier_tflops <= 0:
        raise ValueError("tier_tflops must be > 0")
    effective = spec.splat_count + cost.animation_penalty * spec.animated_splats
    return (cost.overhead_work + cost.work_per_splat * effective) / (tier_tflops * 1e6)


def synthetic_workload(cost: SyntheticCost, spec: WorkloadSpec,
                       tier_tflops: float, seed: int = 0) -> Iterator[str]:
    """Frame-log lines for a synthetic run of spec.duration_s virtual seconds."""
    rng = random.Random(seed)
    base_ms = synthetic_frame_time_ms(cost, spec, tier_tflops)
    t = 0.0
    index = 0
    while t < spec.duration_s:
        eps = rng.uniform(-cost.noise_fraction, cost.noise_fraction)
        ft_ms = base_ms * (1.0 + eps)
        yield f"F {index} {t:.6f} {ft_ms:.6f}\n"
        t += ft_ms / 1000.0
        index += 1


class Sampler:
    """Minimal sampler interface: start(), stop() -> PowerTrace."""

    def start(self) -> None:  # pragma: no cover - interface
        raise NotImplementedError

    def stop(self) -> PowerTrace:  # pragma: no cover - interface
        raise NotImplementedError


def run_workload(spec: WorkloadSpec, sampler: Sampler,
                 grace_period_s: float = 5.0,
                 stall_timeout_s: float = 10.0,
                 ) -> tuple[FrameTrace, PowerTrace]:
    """Run the workload subprocess for spec.duration_s with live telemetry.

    Starts the sampler, launches the workload, consumes its frame log for the
    configured duration, then terminates it gracefully (SIGTERM, SIGKILL
    after the grace period) and trims both traces to the co-observed window.
    The throttle config must already be applied and verified.
    """
    cmd = spec.render_command()
    sampler.start()
    lines: list[str] = []
    first_frame_at: list[float] = []
    try:
        try:
            proc = subprocess.Popen(cmd, stdout=subprocess.PIPE,
                                    stderr=subprocess.DEVNULL, text=True)
        except FileNotFoundError:
            raise WorkloadError(f"workload executable not found: {cmd[0]}")
        start = time.monotonic()

        def consume():
            assert proc.stdout is not None
            for line in proc.stdout:
                if not first_frame_at and line.startswith(FRAME_LINE_PREFIX):
                    first_frame_at.append(time.monotonic() - start)
                lines.append(line)

        reader = threading.Thread(target=consume, daemon=True)
        reader.start()

        deadline = start + spec.duration_s
        while time.monotonic() < deadline:
            status = proc.poll()
            if status is not None:
                elapsed = time.monotonic() - start
                if elapsed < 0.8 * spec.duration_s:
                    raise WorkloadError(
                        f"workload exited after {elapsed:.1f}s of a "
                        f"{spec.duration_s}s run (exit {status})",
                        exit_status=status)
                break
            if (not first_frame_at
                    and time.monotonic() - start > stall_timeout_s):
                raise WorkloadError(
                    f"no frames received within {stall_timeout_s}s of start")
            time.sleep(min(0.05, spec.duration_s / 20.0))

        if proc.poll() is None:
            proc.terminate()
            try:
                proc.wait(timeout=grace_period_s)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
        reader.join(timeout=grace_period_s)
    finally:
        power_trace = sampler.stop()
        if 'proc' in dir() and proc.poll() is None:
            proc.kill()

    frame_result = parse_frame_log(lines)
    return trim_to_common_window(frame_result.trace, power_trace)


def trim_to_common_window(frames: FrameTrace, power: PowerTrace,
                          ) -> tuple[FrameTrace, PowerTrace]:
    """Keep only the later-start / earlier-end overlap of the two traces."""
    f0, f1 = frames.span
    p0, p1 = power.span
    t0, t1 = max(f0, p0), min(f1, p1)
    if t1 <= t0:
        return frames, power
    trimmed_frames = frames.trimmed(t0, t1)
    trimmed_samples = tuple(s for s in power.samples if t0 <= s.t <= t1)
    trimmed_power = PowerTrace(samples=trimmed_samples or power.samples,
                               sample_period_s=power.sample_period_s)
    return (trimmed_frames if trimmed_frames.frames else frames, trimmed_power)


def simulate_run(device: DeviceHandle, spec: WorkloadSpec,
                 cost: SyntheticCost = TABLE_FIT, seed: int = 0,
                 sample_period_s: float = 1.0,
                 ) -> tuple[FrameTrace, PowerTrace]:
    """Synthesize one run on the simulated device, in virtual time.

    Frame times come from the synthetic cost model at the device's simulated
    sustained throughput; power samples sit below the applied power cap with
    clocks pinned at their caps, so a well-behaved run validates clean.
    """
    if device.kind != "simulated":
        raise WorkloadError("simulate_run requires a simulated device")
    if device.applied is None:
        raise WorkloadError("apply a throttle config before running")
    config = device.applied
    tflops = sim_sustained_tflops(device.sim_model, config, seed=seed)
    frame_result = parse_frame_log(
        synthetic_workload(cost, spec, tflops, seed=seed))

    rng = random.Random(seed ^ 0x5A5A)
    model = device.sim_model
    samples = []
    t = 0.0
    while t < spec.duration_s:
        utilization = rng.uniform(0.85, 0.95)
        power = model.idle_power_w + (config.power_cap_w - model.idle_power_w) * utilization
        samples.append(PowerSample(t=t, power_w=round(power, 3),
                                   sm_clock_mhz=float(config.core_clock_cap_mhz),
                                   mem_clock_mhz=float(config.mem_clock_cap_mhz)))
        t += sample_period_s
    power_trace = PowerTrace(samples=tuple(samples), sample_period_s=sample_period_s)
    return trim_to_common_window(frame_result.trace, power_trace)
