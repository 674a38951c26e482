"""Reference-GPU database and emulation tier derivation.

A tier plan maps a weaker target GPU onto throttle settings for the host
card: sustained throughput is estimated as 2/3 of the target's theoretical
FP32 peak, the memory clock is scaled by the bandwidth ratio and snapped to
the host's discrete supported set, and the power cap is the target's nominal
power clamped into the host's settable range (with an optional per-tier
override for targets whose published cap was chosen differently).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import yaml

from .errors import SpecDatabaseError

#: Fraction of theoretical FP32 peak assumed sustainable under real workloads.
SUSTAINED_FRACTION = 2.0 / 3.0

#: Snap policy: accept the nearest supported clock below the requirement if it
#: is within this many percent of it.
DEFAULT_SNAP_THRESHOLD_PCT = 5.0

DEFAULT_CORE_CLOCK_STEP_MHZ = 15


@dataclass(frozen=True)
class GpuSpec:
    """Nominal characteristics of one reference GPU."""

    name: str
    theoretical_fp32_tflops: float
    nominal_power_w: float
    nominal_core_clock_mhz: float
    nominal_mem_bandwidth_gbs: float
    # Only needed for the host/reference card (memory-clock scaling anchor).
    nominal_mem_clock_mhz: Optional[float] = None

    def __post_init__(self):
        if not self.name:
            raise ValueError("GpuSpec.name must be non-empty")
        for attr in ("theoretical_fp32_tflops", "nominal_power_w",
                     "nominal_core_clock_mhz", "nominal_mem_bandwidth_gbs"):
            if getattr(self, attr) <= 0:
                raise ValueError(f"GpuSpec.{attr} must be > 0, got {getattr(self, attr)}")
        if self.nominal_mem_clock_mhz is not None and self.nominal_mem_clock_mhz <= 0:
            raise ValueError("GpuSpec.nominal_mem_clock_mhz must be > 0 when present")


@dataclass(frozen=True)
class HostProfile:
    """The emulating card plus its settable throttle ranges."""

    spec: GpuSpec
    supported_mem_clocks_mhz: tuple[int, ...]
    supported_core_clock_step_mhz: int = DEFAULT_CORE_CLOCK_STEP_MHZ
    min_power_cap_w: float = 0.0
    max_power_cap_w: float = float("inf")

    def __post_init__(self):
        clocks = tuple(self.supported_mem_clocks_mhz)
        if not clocks:
            raise ValueError("supported_mem_clocks_mhz must be non-empty")
        if list(clocks) != sorted(clocks):
            raise ValueError("supported_mem_clocks_mhz must be sorted ascending")
        if self.spec.nominal_mem_clock_mhz is None:
            raise ValueError("host GpuSpec must carry nominal_mem_clock_mhz")
        if self.spec.nominal_mem_clock_mhz not in clocks:
            raise ValueError(
                f"host nominal memory clock {self.spec.nominal_mem_clock_mhz} MHz "
                f"not in supported set {clocks}")
        if self.supported_core_clock_step_mhz <= 0:
            raise ValueError("supported_core_clock_step_mhz must be > 0")
        if self.min_power_cap_w > self.max_power_cap_w:
            raise ValueError("min_power_cap_w must be <= max_power_cap_w")
        object.__setattr__(self, "supported_mem_clocks_mhz", clocks)


@dataclass(frozen=True)
class ThrottleConfig:
    """The power / core-clock / memory-clock caps applied to the device."""

    power_cap_w: float
    core_clock_cap_mhz: int
    mem_clock_cap_mhz: int

    def validate_for(self, host: HostProfile) -> None:
        """Raise ValueError if this config cannot be applied to *host*."""
        if not (host.min_power_cap_w <= self.power_cap_w <= host.max_power_cap_w):
            raise ValueError(
                f"power cap {self.power_cap_w} W outside settable range "
                f"[{host.min_power_cap_w}, {host.max_power_cap_w}] W")
        if self.mem_clock_cap_mhz not in host.supported_mem_clocks_mhz:
            nearest = sorted(host.supported_mem_clocks_mhz,
                             key=lambda c: abs(c - self.mem_clock_cap_mhz))[:2]
            raise ValueError(
                f"memory clock {self.mem_clock_cap_mhz} MHz not supported; "
                f"nearest supported: {nearest}")
        step = host.supported_core_clock_step_mhz
        if self.core_clock_cap_mhz <= 0 or self.core_clock_cap_mhz % step != 0:
            raise ValueError(
                f"core clock cap {self.core_clock_cap_mhz} MHz must be a positive "
                f"multiple of {step} MHz")


@dataclass(frozen=True)
class TierPlan:
    """A derived emulation target and the throttle settings realizing it."""

    target: GpuSpec
    estimated_sustained_tflops: float
    required_mem_clock_mhz: int
    throttle: ThrottleConfig
    mem_clock_deviation_pct: float


def estimate_sustained_tflops(theoretical: float) -> float:
    """Estimate sustained FP32 throughput from the vendor theoretical peak."""
    if theoretical < 0:
        raise ValueError(f"theoretical TFLOPS must be >= 0, got {theoretical}")
    return SUSTAINED_FRACTION * theoretical


def required_mem_clock(target_bw_gbs: float, ref_bw_gbs: float,
                       ref_mem_clock_mhz: float) -> int:
    """Memory clock the host needs to match the target's bandwidth, floored to MHz."""
    for label, value in (("target_bw_gbs", target_bw_gbs),
                         ("ref_bw_gbs", ref_bw_gbs),
                         ("ref_mem_clock_mhz", ref_mem_clock_mhz)):
        if value <= 0:
            raise ValueError(f"{label} must be > 0, got {value}")
    return math.floor(ref_mem_clock_mhz * target_bw_gbs / ref_bw_gbs)


def snap_mem_clock(required: float, supported: Sequence[int],
                   threshold_pct: float = DEFAULT_SNAP_THRESHOLD_PCT,
                   ) -> tuple[int, float]:
    """Snap a required memory clock onto the discrete supported set.

    Picks the largest supported clock at or below the requirement when it is
    within ``threshold_pct`` percent below it; otherwise the smallest supported
    clock above; otherwise the maximum available. Returns (clock, signed
    deviation in percent of the requirement).
    """
    clocks = sorted(supported)
    if not clocks:
        raise ValueError("supported clock set must be non-empty")
    below = [c for c in clocks if c <= required]
    above = [c for c in clocks if c >= required]
    chosen = None
    if below:
        candidate = below[-1]
        if 100.0 * (required - candidate) / required <= threshold_pct:
            chosen = candidate
    if chosen is None:
        chosen = above[0] if above else clocks[-1]
    deviation_pct = 100.0 * (chosen - required) / required
    return chosen, deviation_pct


def derive_tier(target: GpuSpec, host: HostProfile,
                power_override_w: Optional[float] = None,
                snap_threshold_pct: float = DEFAULT_SNAP_THRESHOLD_PCT) -> TierPlan:
    """Derive the full emulation plan for *target* on *host*.

    The core-clock cap starts at the host nominal; the calibration module
    refines it until measured throughput matches the estimated sustained
    TFLOPS.
    """
    estimated = estimate_sustained_tflops(target.theoretical_fp32_tflops)
    required = required_mem_clock(target.nominal_mem_bandwidth_gbs,
                                  host.spec.nominal_mem_bandwidth_gbs,
                                  host.spec.nominal_mem_clock_mhz)
    snapped, deviation = snap_mem_clock(required, host.supported_mem_clocks_mhz,
                                        snap_threshold_pct)
    wanted_power = target.nominal_power_w if power_override_w is None else power_override_w
    power_cap = min(max(wanted_power, host.min_power_cap_w), host.max_power_cap_w)
    throttle = ThrottleConfig(
        power_cap_w=power_cap,
        core_clock_cap_mhz=int(host.spec.nominal_core_clock_mhz),
        mem_clock_cap_mhz=snapped,
    )
    throttle.validate_for(host)
    return TierPlan(target=target, estimated_sustained_tflops=estimated,
                    required_mem_clock_mhz=required, throttle=throttle,
                    mem_clock_deviation_pct=deviation)


@dataclass(frozen=True)
class SpecDatabase:
    """Host profile plus the set of reference GPUs it can emulate."""

    host: HostProfile
    gpus: dict[str, GpuSpec]
    power_overrides_w: dict[str, float] = field(default_factory=dict)

    def derive(self, tier_name: str,
               snap_threshold_pct: float = DEFAULT_SNAP_THRESHOLD_PCT) -> TierPlan:
        if tier_name not in self.gpus:
            raise SpecDatabaseError(
                f"unknown tier {tier_name!r}; known: {sorted(self.gpus)}")
        return derive_tier(self.gpus[tier_name], self.host,
                           power_override_w=self.power_overrides_w.get(tier_name),
                           snap_threshold_pct=snap_threshold_pct)

    def derive_all(self) -> list[TierPlan]:
        return [self.derive(name) for name in self.gpus]


DEFAULT_DB_PATH = Path(__file__).parent / "data" / "gpus.yaml"


def load_spec_db(path: Path | str = DEFAULT_DB_PATH) -> SpecDatabase:
    """Load a GPU spec database file (see data/gpus.yaml for the schema)."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise SpecDatabaseError(f"spec database not found: {path}")
    except yaml.YAMLError as exc:
        raise SpecDatabaseError(f"spec database {path} is not valid YAML: {exc}")
    if not isinstance(raw, dict) or "gpus" not in raw or "host" not in raw:
        raise SpecDatabaseError(f"spec database {path} must define 'host' and 'gpus'")

    def build_spec(entry: dict) -> GpuSpec:
        known = {"name", "theoretical_fp32_tflops", "nominal_power_w",
                 "nominal_core_clock_mhz", "nominal_mem_bandwidth_gbs",
                 "nominal_mem_clock_mhz"}
        fields = {k: v for k, v in entry.items() if k in known}
        try:
            return GpuSpec(**fields)
        except (TypeError, ValueError) as exc:
            raise SpecDatabaseError(f"bad GPU entry {entry.get('name')!r}: {exc}")

    gpus: dict[str, GpuSpec] = {}
    overrides: dict[str, float] = {}
    for entry in raw["gpus"]:
        spec = build_spec(entry)
        if spec.name in gpus:
            raise SpecDatabaseError(f"duplicate GPU name {spec.name!r}")
        gpus[spec.name] = spec
        if "power_override_w" in entry:
            overrides[spec.name] = float(entry["power_override_w"])

    host_raw = raw["host"]
    host_name = host_raw.get("name")
    if host_name not in gpus:
        raise SpecDatabaseError(f"host name {host_name!r} not among GPU entries")
    try:
        host = HostProfile(
            spec=gpus[host_name],
            supported_mem_clocks_mhz=tuple(sorted(host_raw["supported_mem_clocks_mhz"])),
            supported_core_clock_step_mhz=int(
                host_raw.get("supported_core_clock_step_mhz", DEFAULT_CORE_CLOCK_STEP_MHZ)),
            min_power_cap_w=float(host_raw["min_power_cap_w"]),
            max_power_cap_w=float(host_raw["max_power_cap_w"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecDatabaseError(f"bad host profile in {path}: {exc}")
    return SpecDatabase(host=host, gpus=gpus, power_overrides_w=overrides)
