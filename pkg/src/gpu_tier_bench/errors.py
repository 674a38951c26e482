"""Exception hierarchy shared across the toolkit."""


class GpuTierBenchError(Exception):
    """Base class for all toolkit errors."""


class SpecDatabaseError(GpuTierBenchError):
    """GPU spec database missing, unreadable, or invalid."""


class DeviceControlError(GpuTierBenchError):
    """A device control command failed or could not be issued."""


class ClockNotSupportedError(DeviceControlError):
    """Requested clock cap is not in the device's supported set."""


class ProbeError(GpuTierBenchError):
    """GEMM probe failed to launch or produced unusable output."""


class CalibrationError(GpuTierBenchError):
    """Core-clock calibration could not converge.

    Carries the best candidate found so far in ``report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class TelemetryError(GpuTierBenchError):
    """Telemetry stream unusable (empty, schema mismatch, ...)."""


class WorkloadError(GpuTierBenchError):
    """Workload subprocess misbehaved (crash, stall, bad frame log)."""

    def __init__(self, message, exit_status=None):
        super().__init__(message)
        self.exit_status = exit_status


class InsufficientDataError(GpuTierBenchError):
    """Not enough data to compute the requested statistic."""


class CampaignError(GpuTierBenchError):
    """Campaign manifest invalid or execution could not proceed."""
