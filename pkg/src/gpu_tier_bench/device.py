"""GPU control plane: real nvidia-smi adapter and a simulated device.

The real adapter shells out to nvidia-smi for power/clock caps; the simulated
device records the applied config and answers throughput queries from a
roofline-style analytic model, so everything above this layer can be exercised
without hardware or root.
"""

from __future__ import annotations

import os
import random
import re
import subprocess
from dataclasses import dataclass, replace
from typing import Optional

from .errors import DeviceControlError
from .model import HostProfile, ThrottleConfig

DEFAULT_NVIDIA_SMI = "nvidia-smi"
NVIDIA_SMI_ENV = "GPU_TIER_BENCH_NVIDIA_SMI"


def nvidia_smi_binary() -> str:
    return os.environ.get(NVIDIA_SMI_ENV, DEFAULT_NVIDIA_SMI)


@dataclass(frozen=True)
class SimModel:
    """Analytic stand-in for the throttled card's sustained throughput.

    Throughput is the minimum of a core-clock term, a memory-bandwidth term,
    and a power term, times a small deterministic noise factor. Constants
    below were fitted by least squares to four (throttle config, measured
    TFLOPS) calibration points on the reference card; see
    tests/fixtures/sim_model_fit.json for the fit residuals.
    """

    peak_tflops: float = 59.780081
    nominal_core_mhz: float = 2520.0
    nominal_mem_clock_mhz: float = 10501.0
    nominal_power_w: float = 450.0
    bw_coefficient: float = 0.00523798   # TFLOPS per MHz of memory clock
    power_exponent: float = 1.314787
    idle_power_w: float = 25.0
    noise_fraction: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.noise_fraction <= 0.05):
            raise ValueError("noise_fraction must lie in [0, 0.05]")
        for attr in ("peak_tflops", "nominal_core_mhz", "nominal_mem_clock_mhz",
                     "nominal_power_w", "bw_coefficient"):
            if getattr(self, attr) <= 0:
                raise ValueError(f"SimModel.{attr} must be > 0")


def sim_sustained_tflops(model: SimModel, config: ThrottleConfig, seed: int = 0) -> float:
    """Deterministic simulated sustained TFLOPS under *config*."""
    core_term = model.peak_tflops * config.core_clock_cap_mhz / model.nominal_core_mhz
    bw_term = model.bw_coefficient * config.mem_clock_cap_mhz
    power_term = model.peak_tflops * (
        config.power_cap_w / model.nominal_power_w) ** model.power_exponent
    base = min(core_term, bw_term, power_term)
    eps = random.Random(seed).uniform(-model.noise_fraction, model.noise_fraction)
    return base * (1.0 + eps)


@dataclass(frozen=True)
class DeviceHandle:
    """One GPU under control. Owned by a single control context at a time."""

    kind: str  # "real" | "simulated"
    host: HostProfile
    applied: Optional[ThrottleConfig] = None
    index: int = 0
    sim_model: Optional[SimModel] = None

    def __post_init__(self):
        if self.kind not in ("real", "simulated"):
            raise ValueError(f"unknown device kind {self.kind!r}")
        if self.kind == "simulated" and self.sim_model is None:
            object.__setattr__(self, "sim_model", SimModel())
        if self.applied is not None:
            self.applied.validate_for(self.host)


def simulated_device(host: HostProfile, model: Optional[SimModel] = None) -> DeviceHandle:
    return DeviceHandle(kind="simulated", host=host, sim_model=model)


def real_device(host: HostProfile, index: int = 0) -> DeviceHandle:
    return DeviceHandle(kind="real", host=host, index=index)


def _run_control(args: list[str]) -> None:
    """Run one nvidia-smi control command, raising on any failure."""
    cmd = [nvidia_smi_binary()] + args
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True)
    except FileNotFoundError:
        raise DeviceControlError(
            f"control tool not found while running: {' '.join(cmd)} "
            f"(set ${NVIDIA_SMI_ENV} to the binary path)")
    if proc.returncode != 0:
        detail = (proc.stderr or proc.stdout).strip()
        hint = ""
        if "permission" in detail.lower() or "root" in detail.lower():
            hint = " (insufficient privileges: clock/power caps need root)"
        raise DeviceControlError(
            f"command failed (exit {proc.returncode}): {' '.join(cmd)}: {detail}{hint}")


def apply_throttle(device: DeviceHandle, config: ThrottleConfig) -> DeviceHandle:
    """Apply power, core-clock, and memory-clock caps, in that order.

    Validates the config against the host profile before touching the device.
    On a real device a mid-sequence failure leaves the earlier caps applied;
    the raised error says which command failed.
    """
    config.validate_for(device.host)
    if device.kind == "real":
        idx = str(device.index)
        steps = [
            ("power cap", ["-i", idx, "-pl", str(config.power_cap_w)]),
            ("core clock cap", ["-i", idx, "-lgc", str(config.core_clock_cap_mhz)]),
            ("memory clock cap", ["-i", idx, "-lmc", str(config.mem_clock_cap_mhz)]),
        ]
        for done, (label, args) in enumerate(steps):
            try:
                _run_control(args)
            except DeviceControlError as exc:
                applied = ", ".join(s[0] for s in steps[:done]) or "nothing"
                raise DeviceControlError(
                    f"{label} failed; already applied: {applied}. {exc}") from exc
    return replace(device, applied=config)


def reset_throttle(device: DeviceHandle) -> DeviceHandle:
    """Clear all caps. A no-op success on a never-throttled simulated device."""
    if device.kind == "real":
        idx = str(device.index)
        _run_control(["-i", idx, "-rgc"])
        _run_control(["-i", idx, "-rmc"])
        _run_control(["-i", idx, "-pl", str(device.host.max_power_cap_w)])
    return replace(device, applied=None)


_MEM_CLOCK_RE = re.compile(r"^\s*Memory\s*:\s*(\d+)\s*MHz\s*$")
_GFX_CLOCK_RE = re.compile(r"^\s*Graphics\s*:\s*(\d+)\s*MHz\s*$")


def parse_supported_clocks(text: str) -> tuple[tuple[int, ...], int]:
    """Parse `nvidia-smi -q -d SUPPORTED_CLOCKS` output.

    Returns (sorted unique memory clocks, core clock step). The step is the
    smallest positive gap between adjacent graphics clocks; 15 when fewer
    than two graphics clocks are listed.
    """
    mem, gfx = set(), set()
    saw_clock_section = False
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        m = _MEM_CLOCK_RE.match(line)
        if m:
            mem.add(int(m.group(1)))
            saw_clock_section = True
            continue
        g = _GFX_CLOCK_RE.match(line)
        if g:
            gfx.add(int(g.group(1)))
            saw_clock_section = True
            continue
        if "MHz" in stripped and ":" in stripped:
            raise DeviceControlError(
                f"unparseable supported-clocks line: {stripped!r}")
    if not saw_clock_section or not mem:
        raise DeviceControlError(
            "no supported memory clocks found in nvidia-smi output")
    step = 15
    if len(gfx) >= 2:
        ordered = sorted(gfx)
        step = min(b - a for a, b in zip(ordered, ordered[1:]) if b > a)
    return tuple(sorted(mem)), step


def query_supported_clocks(device: DeviceHandle) -> tuple[tuple[int, ...], int]:
    """Supported memory clocks and core-clock step for *device*."""
    if device.kind == "simulated":
        return (device.host.supported_mem_clocks_mhz,
                device.host.supported_core_clock_step_mhz)
    cmd = [nvidia_smi_binary(), "-i", str(device.index), "-q", "-d", "SUPPORTED_CLOCKS"]
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True)
    except FileNotFoundError:
        raise DeviceControlError(f"control tool not found: {cmd[0]}")
    if proc.returncode != 0:
        raise DeviceControlError(
            f"supported-clocks query failed (exit {proc.returncode}): "
            f"{proc.stderr.strip()}")
    return parse_supported_clocks(proc.stdout)
