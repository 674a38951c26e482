"""Power/clock telemetry: dmon stream parsing, time-weighted statistics,
and envelope validation against an applied throttle config.

The sampler contract is `nvidia-smi dmon -i <idx> -s pc -d <period>`: header
lines start with '#', data rows are whitespace-separated columns, and '-'
marks a missing reading. dmon rows carry no timestamp, so sample times are
assigned by receipt order relative to sampler start.
"""

from __future__ import annotations

import subprocess
import threading
from dataclasses import dataclass
from typing import Iterable, Optional

from .device import nvidia_smi_binary
from .errors import TelemetryError
from .model import ThrottleConfig

TRACE_HEADER_PREFIX = "# gpu-tier-bench trace v1 period="

#: Transient driver overshoot is common; flag only beyond these fractions.
DEFAULT_POWER_TOLERANCE = 0.05
DEFAULT_CLOCK_TOLERANCE = 0.02


@dataclass(frozen=True)
class PowerSample:
    t: float
    power_w: Optional[float] = None
    sm_clock_mhz: Optional[float] = None
    mem_clock_mhz: Optional[float] = None


@dataclass(frozen=True)
class PowerTrace:
    samples: tuple[PowerSample, ...]
    sample_period_s: float

    def __post_init__(self):
        if self.sample_period_s <= 0:
            raise ValueError("sample_period_s must be > 0")
        object.__setattr__(self, "samples", tuple(self.samples))
        times = [s.t for s in self.samples]
        if any(t < 0 for t in times):
            raise ValueError("sample times must be nonnegative")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("sample times must be strictly increasing")

    @property
    def span(self) -> tuple[float, float]:
        if not self.samples:
            return (0.0, 0.0)
        return (self.samples[0].t, self.samples[-1].t + self.sample_period_s)


@dataclass(frozen=True)
class EnvelopeViolation:
    sample_index: int
    kind: str  # "power" | "core_clock" | "mem_clock"
    observed: float
    limit: float


@dataclass
class DmonParseResult:
    trace: PowerTrace
    skipped_rows: int


def _parse_field(token: str) -> Optional[float]:
    if token == "-":
        return None
    return float(token)


def parse_dmon_stream(lines: Iterable[str], sample_period_s: float = 1.0,
                      start_epoch: float = 0.0) -> DmonParseResult:
    """Parse dmon output rows into a PowerTrace.

    The first header line names the columns; `pwr`, `mclk`, and `pclk` (or
    `sm`) are required. Malformed data rows are skipped and counted.
    ``start_epoch`` is recorded implicitly: sample times are seconds since
    sampler start (row index times the sampling period).
    """
    columns: Optional[list[str]] = None
    samples: list[PowerSample] = []
    skipped = 0
    idx = {}
    for line in lines:
        line = line.rstrip("\n")
        if not line.strip():
            continue
        if line.lstrip().startswith("#"):
            header = line.lstrip("# ").split()
            if columns is None and any(h in ("pwr", "mclk", "pclk", "sm") for h in header):
                columns = header
                missing = [c for c in ("pwr", "mclk") if c not in columns]
                if "pclk" not in columns and "sm" not in columns:
                    missing.append("pclk")
                if missing:
                    raise TelemetryError(
                        f"dmon header missing required columns: {missing} "
                        f"(got {columns})")
                idx = {
                    "pwr": columns.index("pwr"),
                    "mclk": columns.index("mclk"),
                    "pclk": columns.index("pclk") if "pclk" in columns
                            else columns.index("sm"),
                }
            continue
        if columns is None:
            skipped += 1
            continue
        fields = line.split()
        try:
            sample = PowerSample(
                t=len(samples) * sample_period_s,
                power_w=_parse_field(fields[idx["pwr"]]),
                sm_clock_mhz=_parse_field(fields[idx["pclk"]]),
                mem_clock_mhz=_parse_field(fields[idx["mclk"]]),
            )
        except (IndexError, ValueError):
            skipped += 1
            continue
        samples.append(sample)
    if not samples:
        raise TelemetryError("no parseable dmon data rows (empty trace)")
    return DmonParseResult(
        trace=PowerTrace(samples=tuple(samples), sample_period_s=sample_period_s),
        skipped_rows=skipped)


def average_power(trace: PowerTrace, window: Optional[tuple[float, float]] = None) -> float:
    """Time-weighted mean power over *window* (defaults to the whole trace).

    Each sample is weighted by the interval to the next sample (the last by
    one sampling period), clipped to the window. Samples with missing power
    contribute to neither numerator nor denominator.
    """
    if window is None:
        window = trace.span
    t0, t1 = window
    if t1 <= t0:
        raise ValueError(f"empty window [{t0}, {t1}]")
    num = 0.0
    den = 0.0
    for i, sample in enumerate(trace.samples):
        if sample.power_w is None:
            continue
        t_next = (trace.samples[i + 1].t if i + 1 < len(trace.samples)
                  else sample.t + trace.sample_period_s)
        weight = min(t_next, t1) - max(sample.t, t0)
        if weight <= 0:
            continue
        num += sample.power_w * weight
        den += weight
    if den == 0:
        raise TelemetryError(
            f"no usable power samples in window [{t0}, {t1}]")
    return num / den


@dataclass(frozen=True)
class EnvelopeTolerances:
    power: float = DEFAULT_POWER_TOLERANCE
    clock: float = DEFAULT_CLOCK_TOLERANCE


def validate_envelope(trace: PowerTrace, config: ThrottleConfig,
                      tolerances: EnvelopeTolerances = EnvelopeTolerances(),
                      ) -> list[EnvelopeViolation]:
    """Samples exceeding the applied caps beyond tolerance. Empty = in envelope."""
    violations = []
    checks = (
        ("power", lambda s: s.power_w, config.power_cap_w, tolerances.power),
        ("core_clock", lambda s: s.sm_clock_mhz, config.core_clock_cap_mhz,
         tolerances.clock),
        ("mem_clock", lambda s: s.mem_clock_mhz, config.mem_clock_cap_mhz,
         tolerances.clock),
    )
    for i, sample in enumerate(trace.samples):
        for kind, get, cap, tol in checks:
            observed = get(sample)
            limit = cap * (1.0 + tol)
            if observed is not None and observed > limit:
                violations.append(EnvelopeViolation(
                    sample_index=i, kind=kind, observed=observed, limit=limit))
    return violations


def _format_field(value: Optional[float]) -> str:
    return "" if value is None else repr(value)


def serialize_trace(trace: PowerTrace) -> str:
    """Trace file format: versioned header, then t_s,power_w,sm_clock_mhz,mem_clock_mhz."""
    lines = [f"{TRACE_HEADER_PREFIX}{trace.sample_period_s!r}"]
    for s in trace.samples:
        lines.append(",".join([repr(s.t), _format_field(s.power_w),
                               _format_field(s.sm_clock_mhz),
                               _format_field(s.mem_clock_mhz)]))
    return "\n".join(lines) + "\n"


def deserialize_trace(text: str) -> PowerTrace:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith(TRACE_HEADER_PREFIX):
        raise TelemetryError("not a gpu-tier-bench v1 trace file")
    period = float(lines[0][len(TRACE_HEADER_PREFIX):])
    samples = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 4:
            raise TelemetryError(f"bad trace row: {ln!r}")
        samples.append(PowerSample(
            t=float(parts[0]),
            power_w=float(parts[1]) if parts[1] else None,
            sm_clock_mhz=float(parts[2]) if parts[2] else None,
            mem_clock_mhz=float(parts[3]) if parts[3] else None))
    return PowerTrace(samples=tuple(samples), sample_period_s=period)


class DmonSampler:
    """Runs `nvidia-smi dmon -i <idx> -s pc -d <period>` alongside a workload.

    start() launches the sampler and begins collecting rows in a background
    thread; stop() terminates it and returns the parsed PowerTrace.
    """

    def __init__(self, index: int = 0, period_s: float = 1.0):
        self.index = index
        self.period_s = period_s
        self._proc: Optional[subprocess.Popen] = None
        self._lines: list[str] = []
        self._thread: Optional[threading.Thread] = None

    def start(self) -> None:
        cmd = [nvidia_smi_binary(), "dmon", "-i", str(self.index),
               "-s", "pc", "-d", str(self.period_s)]
        try:
            self._proc = subprocess.Popen(cmd, stdout=subprocess.PIPE, text=True)
        except FileNotFoundError:
            raise TelemetryError(f"telemetry sampler not found: {cmd[0]}")
        self._thread = threading.Thread(target=self._consume, daemon=True)
        self._thread.start()

    def _consume(self) -> None:
        assert self._proc is not None and self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.append(line)

    def stop(self) -> PowerTrace:
        if self._proc is None:
            raise TelemetryError("sampler was never started")
        self._proc.terminate()
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()
        if self._thread is not None:
            self._thread.join(timeout=5)
        result = parse_dmon_stream(self._lines, sample_period_s=self.period_s)
        return result.trace
