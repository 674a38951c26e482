"""GPU capability-tier emulation, calibration, and energy-aware benchmarking."""

from .model import (GpuSpec, HostProfile, SpecDatabase, ThrottleConfig,
                    TierPlan, derive_tier, estimate_sustained_tflops,
                    load_spec_db, required_mem_clock, snap_mem_clock)
from .device import (DeviceHandle, SimModel, apply_throttle, real_device,
                     reset_throttle, query_supported_clocks, sim_sustained_tflops,
                     simulated_device)
from .calibrate import (CalibrationReport, ProbeParams, calibrate_core_clock,
                        measure_sustained_tflops, probe_flops, verify_tier)
from .telemetry import (EnvelopeTolerances, EnvelopeViolation, PowerSample,
                        PowerTrace, average_power, parse_dmon_stream,
                        validate_envelope)
from .workload import (FrameTrace, SyntheticCost, WorkloadSpec, parse_frame_log,
                       run_workload, simulate_run, synthetic_workload)
from .metrics import (EnergyMetrics, FpsStats, RunRecord, aggregate_repeats,
                      energy_per_frame, fps_stats, perf_per_watt)
from .campaign import (CampaignManifest, ResultStore, execute_campaign,
                       expand_grid, load_manifest, load_store, persist,
                       render_report)

__version__ = "0.1.0"
