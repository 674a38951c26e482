"""Sustained-throughput measurement and core-clock calibration.

The GEMM probe reports (flop count, elapsed seconds) through a one-line
subprocess contract; calibration bisects the discrete ladder of settable core
clocks (power and memory caps held fixed) until measured TFLOPS matches the
tier's target within tolerance.
"""

from __future__ import annotations

import re
import subprocess
from dataclasses import dataclass, field, replace
from typing import Optional, Protocol

from .device import DeviceHandle, apply_throttle, sim_sustained_tflops
from .errors import CalibrationError, ProbeError
from .model import ThrottleConfig, TierPlan

PROBE_LINE_RE = re.compile(
    r"^GEMM_RESULT flops=(?P<flops>\d+) elapsed_s=(?P<elapsed>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)$")

DEFAULT_TOLERANCE_PCT = 3.0
DEFAULT_MAX_PROBES = 12


@dataclass(frozen=True)
class ProbeParams:
    """GEMM probe sizing. Defaults are large enough to swamp cache effects."""

    m: int = 8192
    n: int = 8192
    k: int = 8192
    iterations: int = 100
    warmup_iterations: int = 10

    def __post_init__(self):
        for attr in ("m", "n", "k", "iterations"):
            if getattr(self, attr) < 1:
                raise ValueError(f"ProbeParams.{attr} must be >= 1")
        if self.warmup_iterations < 0:
            raise ValueError("ProbeParams.warmup_iterations must be >= 0")


@dataclass
class CalibrationReport:
    tier_name: str
    target_tflops: float
    final_config: ThrottleConfig
    measured_tflops: float
    probes_used: int
    warnings: list[str] = field(default_factory=list)

    @property
    def deviation_pct(self) -> float:
        return 100.0 * (self.measured_tflops - self.target_tflops) / self.target_tflops


def probe_flops(params: ProbeParams) -> int:
    """Exact floating-point operation count of the timed probe region."""
    return 2 * params.m * params.n * params.k * params.iterations


def parse_probe_output(text: str) -> tuple[int, float]:
    """Extract (flops, elapsed_s) from probe stdout; exactly one result line."""
    matches = [PROBE_LINE_RE.match(line) for line in text.splitlines()]
    results = [m for m in matches if m]
    if len(results) != 1:
        raise ProbeError(
            f"expected exactly one GEMM_RESULT line, found {len(results)} in "
            f"{text[:200]!r}")
    flops = int(results[0].group("flops"))
    elapsed = float(results[0].group("elapsed"))
    if elapsed <= 0:
        raise ProbeError(f"probe reported non-positive elapsed time {elapsed}")
    return flops, elapsed


class ProbeRunner(Protocol):
    def run(self, params: ProbeParams) -> tuple[int, float]:
        """Execute one probe; returns (flops, elapsed_s)."""
        ...


@dataclass
class SubprocessProbeRunner:
    """Runs the external GEMM probe binary under the one-line contract."""

    binary: str
    timeout_s: float = 600.0

    def run(self, params: ProbeParams) -> tuple[int, float]:
        cmd = [self.binary, str(params.m), str(params.n), str(params.k),
               str(params.iterations), str(params.warmup_iterations)]
        try:
            proc = subprocess.run(cmd, capture_output=True, text=True,
                                  timeout=self.timeout_s)
        except FileNotFoundError:
            raise ProbeError(f"probe binary not found: {self.binary}")
        except subprocess.TimeoutExpired:
            raise ProbeError(f"probe timed out after {self.timeout_s}s: {' '.join(cmd)}")
        if proc.returncode != 0:
            raise ProbeError(
                f"probe failed (exit {proc.returncode}): {proc.stderr.strip()[:300]}")
        return parse_probe_output(proc.stdout)


@dataclass
class SimulatedProbeRunner:
    """Probe against the simulated device's applied throttle config."""

    device: DeviceHandle
    seed: int = 0
    _calls: int = 0

    def run(self, params: ProbeParams) -> tuple[int, float]:
        if self.device.kind != "simulated":
            raise ProbeError("SimulatedProbeRunner needs a simulated device")
        if self.device.applied is None:
            raise ProbeError("no throttle config applied to the simulated device")
        self._calls += 1
        tflops = sim_sustained_tflops(self.device.sim_model, self.device.applied,
                                      seed=self.seed + self._calls)
        flops = probe_flops(params)
        return flops, flops / (tflops * 1e12)

    def rebind(self, device: DeviceHandle) -> None:
        """Point the runner at the latest device handle after an apply."""
        self.device = device


def measure_sustained_tflops(runner: ProbeRunner, params: ProbeParams) -> float:
    """One timed probe, converted to TFLOPS."""
    flops, elapsed = runner.run(params)
    if elapsed <= 0:
        raise ProbeError(f"non-positive elapsed time {elapsed}")
    return flops / elapsed / 1e12


def core_clock_ladder(host) -> list[int]:
    """All settable core-clock caps from one step up to the host nominal."""
    step = host.supported_core_clock_step_mhz
    top = int(host.spec.nominal_core_clock_mhz)
    return list(range(step, top + 1, step))


def calibrate_core_clock(device: DeviceHandle, tier: TierPlan,
                         tolerance_pct: float = DEFAULT_TOLERANCE_PCT,
                         max_probes: int = DEFAULT_MAX_PROBES,
                         params: Optional[ProbeParams] = None,
                         runner: Optional[ProbeRunner] = None,
                         ) -> tuple[CalibrationReport, DeviceHandle]:
    """Find the core-clock cap whose measured throughput matches the tier target.

    Bisects the discrete core-clock ladder with the tier's power and memory
    caps held fixed, searching for the lowest cap that still reaches the
    target (or, when another cap limits throughput below the target, the
    lowest cap reaching that ceiling). Every probe re-applies the full
    throttle config so the device state is always known. Raises
    CalibrationError (carrying the best candidate report) when no ladder
    point reaches the tolerance band within ``max_probes`` measurements.
    """
    params = params or ProbeParams()
    if runner is None:
        if device.kind != "simulated":
            raise CalibrationError(
                "a probe runner is required to calibrate a real device")
        runner = SimulatedProbeRunner(device)
    target = tier.estimated_sustained_tflops
    tol = tolerance_pct / 100.0
    ladder = core_clock_ladder(device.host)
    warnings: list[str] = []
    history: list[tuple[int, float]] = []
    probes = 0

    def measure_at(cap: int) -> float:
        nonlocal device, probes
        if probes >= max_probes:
            raise _Exhausted()
        config = replace(tier.throttle, core_clock_cap_mhz=cap)
        device = apply_throttle(device, config)
        if isinstance(runner, SimulatedProbeRunner):
            runner.rebind(device)
        probes += 1
        measured = measure_sustained_tflops(runner, params)
        for prev_cap, prev_meas in history:
            slack = 2.0 * getattr(device.sim_model, "noise_fraction", 0.0) + 1e-9
            if prev_cap < cap and measured < prev_meas * (1.0 - slack):
                warnings.append(
                    f"monotonicity violation: {measured:.3f} TFLOPS at {cap} MHz "
                    f"below {prev_meas:.3f} at {prev_cap} MHz")
        history.append((cap, measured))
        return measured

    class _Exhausted(Exception):
        pass

    def best_report() -> CalibrationReport:
        # Ties (bandwidth- or power-bound plateau) go to the lowest cap:
        # lower clocks emulate the weaker card more faithfully.
        cap, meas = min(history, key=lambda cm: (abs(cm[1] - target), cm[0]))
        return CalibrationReport(
            tier_name=tier.target.name, target_tflops=target,
            final_config=replace(tier.throttle, core_clock_cap_mhz=cap),
            measured_tflops=meas, probes_used=probes, warnings=warnings)

    def within(measured: float) -> bool:
        return abs(measured - target) / target <= tol

    try:
        top = ladder[-1]
        m_top = measure_at(top)
        if m_top < target * (1.0 - tol):
            raise CalibrationError(
                f"target {target:.2f} TFLOPS unreachable: max-clock measurement "
                f"is {m_top:.2f} TFLOPS ({best_report().deviation_pct:+.1f}%)",
                report=best_report())
        # The power or memory cap may limit throughput below the target; the
        # reachable goal is then the ceiling observed at the top of the ladder.
        threshold = min(target, m_top)
        lo, hi = 0, len(ladder) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if measure_at(ladder[mid]) >= threshold:
                hi = mid
            else:
                lo = mid + 1
        # The cap one step below the boundary may sit closer to the target.
        measured_caps = {cap for cap, _ in history}
        if lo > 0 and ladder[lo - 1] not in measured_caps and probes < max_probes:
            measure_at(ladder[lo - 1])
        report = best_report()
        if within(report.measured_tflops):
            device = apply_throttle(
                device, replace(tier.throttle,
                                core_clock_cap_mhz=report.final_config.core_clock_cap_mhz))
            if isinstance(runner, SimulatedProbeRunner):
                runner.rebind(device)
            return report, device
        raise CalibrationError(
            f"ladder exhausted without reaching ±{tolerance_pct}% of "
            f"{target:.2f} TFLOPS (best {report.measured_tflops:.2f}, "
            f"{report.deviation_pct:+.1f}%)", report=report)
    except _Exhausted:
        report = best_report()
        raise CalibrationError(
            f"no convergence within {max_probes} probes (best "
            f"{report.measured_tflops:.2f} TFLOPS, {report.deviation_pct:+.1f}%)",
            report=report)


def verify_tier(device: DeviceHandle, report: CalibrationReport,
                params: Optional[ProbeParams] = None,
                runner: Optional[ProbeRunner] = None) -> CalibrationReport:
    """Re-measure once under the calibrated config and refresh the report."""
    if device.applied != report.final_config:
        raise CalibrationError(
            "device is not holding the calibrated config (applied="
            f"{device.applied}, expected {report.final_config})")
    params = params or ProbeParams()
    if runner is None:
        if device.kind != "simulated":
            raise CalibrationError("a probe runner is required on a real device")
        runner = SimulatedProbeRunner(device, seed=report.probes_used)
    measured = measure_sustained_tflops(runner, params)
    return replace_report(report, measured_tflops=measured,
                          probes_used=report.probes_used + 1)


def replace_report(report: CalibrationReport, **changes) -> CalibrationReport:
    fields = dict(tier_name=report.tier_name, target_tflops=report.target_tflops,
                  final_config=report.final_config,
                  measured_tflops=report.measured_tflops,
                  probes_used=report.probes_used, warnings=list(report.warnings))
    fields.update(changes)
    return CalibrationReport(**fields)
