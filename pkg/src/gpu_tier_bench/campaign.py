"""Campaign orchestration: expand a manifest into a run grid, execute it
end-to-end (derive -> calibrate -> apply -> run -> validate -> measure),
persist records crash-resumably, and render reports.

Results live in one append-only line-delimited JSON file plus rendered
report.md / report.csv / charts/*.svg artifacts.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import yaml

from . import telemetry
from .calibrate import (CalibrationReport, ProbeParams, calibrate_core_clock,
                        verify_tier)
from .device import DeviceHandle, apply_throttle, reset_throttle
from .errors import CalibrationError, CampaignError, DeviceControlError
from .metrics import (DEFAULT_BUCKET_S, EnergyMetrics, FpsStats, RunRecord,
                      aggregate_repeats, fps_stats)
from .model import SpecDatabase, ThrottleConfig, load_spec_db
from .telemetry import EnvelopeTolerances, average_power, validate_envelope
from .workload import (SyntheticCost, TABLE_FIT, WorkloadSpec, run_workload,
                       simulate_run)

log = logging.getLogger(__name__)

STORE_VERSION = 1
RESULTS_FILENAME = "results.ndjson"

#: Default scene sizes: the four LoD splat budgets plus the animated-splat add-on.
DEFAULT_LOD_SPLATS = (580604, 1834311, 2795038, 3448340)
DEFAULT_ANIMATED_SPLATS = 38844


@dataclass(frozen=True)
class CampaignManifest:
    tiers: tuple[str, ...]
    workloads: tuple[WorkloadSpec, ...]
    repeats: int = 3
    duration_s: float = 120.0
    output_dir: Path = Path("campaign-out")
    spec_db_path: Optional[Path] = None
    probe_params: ProbeParams = ProbeParams()
    tolerance_pct: float = 3.0
    envelope_tolerances: EnvelopeTolerances = EnvelopeTolerances()
    bucket_s: float = DEFAULT_BUCKET_S
    synthetic_cost: SyntheticCost = TABLE_FIT
    seed: int = 0

    def __post_init__(self):
        if self.repeats < 1:
            raise CampaignError("repeats must be >= 1")
        if not self.tiers:
            raise CampaignError("manifest lists no tiers")
        if not self.workloads:
            raise CampaignError("manifest lists no workloads")
        object.__setattr__(self, "tiers", tuple(self.tiers))
        object.__setattr__(self, "workloads", tuple(
            replace(w, duration_s=self.duration_s) for w in self.workloads))


def default_workloads(command: Sequence[str] = ("synthetic",),
                      lod_splats: Sequence[int] = DEFAULT_LOD_SPLATS,
                      animated_splats: int = DEFAULT_ANIMATED_SPLATS,
                      duration_s: float = 120.0) -> tuple[WorkloadSpec, ...]:
    """One workload per LoD x animation combination (the standard grid)."""
    specs = []
    for animated in (False, True):
        for splats in sorted(lod_splats):
            specs.append(WorkloadSpec(
                command=tuple(command), splat_count=splats, animated=animated,
                animated_splats=animated_splats if animated else 0,
                duration_s=duration_s))
    return tuple(specs)


def load_manifest(path: Path | str) -> CampaignManifest:
    """Load a campaign manifest YAML file. Schema documented in the README."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise CampaignError(f"manifest not found: {path}")
    except yaml.YAMLError as exc:
        raise CampaignError(f"manifest {path} is not valid YAML: {exc}")
    if not isinstance(raw, dict):
        raise CampaignError(f"manifest {path} must be a mapping")
    duration_s = float(raw.get("duration_s", 120.0))
    workloads = []
    for w in raw.get("workloads", []):
        animated = bool(w.get("animated", False))
        workloads.append(WorkloadSpec(
            command=tuple(w.get("command", ["synthetic"])),
            splat_count=int(w["splat_count"]),
            animated=animated,
            animated_splats=int(w.get("animated_splats",
                                      DEFAULT_ANIMATED_SPLATS if animated else 0)),
            resolution=tuple(w.get("resolution", (1920, 1080))),
            duration_s=duration_s))
    if not workloads:
        workloads = list(default_workloads(duration_s=duration_s))
    probe_raw = raw.get("probe", {})
    return CampaignManifest(
        tiers=tuple(raw.get("tiers", ())),
        workloads=tuple(workloads),
        repeats=int(raw.get("repeats", 3)),
        duration_s=duration_s,
        output_dir=Path(raw.get("output_dir", "campaign-out")),
        spec_db_path=Path(raw["spec_db"]) if "spec_db" in raw else None,
        probe_params=ProbeParams(**probe_raw) if probe_raw else ProbeParams(),
        tolerance_pct=float(raw.get("tolerance_pct", 3.0)),
        bucket_s=float(raw.get("bucket_s", DEFAULT_BUCKET_S)),
        seed=int(raw.get("seed", 0)))


@dataclass(frozen=True)
class PlannedRun:
    tier_name: str
    workload: WorkloadSpec
    repeat_index: int

    @property
    def key(self) -> tuple[str, int, bool, int]:
        return (self.tier_name, self.workload.splat_count,
                self.workload.animated, self.repeat_index)


def expand_grid(manifest: CampaignManifest, db: SpecDatabase) -> list[PlannedRun]:
    """Cartesian product tiers x workloads x repeats, tier-major so each tier
    is calibrated once and reused across its runs."""
    unknown = [t for t in manifest.tiers if t not in db.gpus]
    if unknown:
        raise CampaignError(f"unknown tier names: {unknown}")
    seen = set()
    for w in manifest.workloads:
        wkey = (w.splat_count, w.animated)
        if wkey in seen:
            raise CampaignError(f"duplicate workload key {wkey}")
        seen.add(wkey)
    plan = []
    for tier in manifest.tiers:
        for workload in manifest.workloads:
            for repeat in range(manifest.repeats):
                plan.append(PlannedRun(tier, workload, repeat))
    return plan


@dataclass
class ResultStore:
    campaign_id: str
    calibrations: dict[str, CalibrationReport] = field(default_factory=dict)
    records: dict[tuple, RunRecord] = field(default_factory=dict)
    events: list[dict] = field(default_factory=list)


# ---------------------------------------------------------------------------
# serialization

def _throttle_to_dict(c: ThrottleConfig) -> dict:
    return {"power_cap_w": c.power_cap_w, "core_clock_cap_mhz": c.core_clock_cap_mhz,
            "mem_clock_cap_mhz": c.mem_clock_cap_mhz}


def _throttle_from_dict(d: dict) -> ThrottleConfig:
    return ThrottleConfig(power_cap_w=d["power_cap_w"],
                          core_clock_cap_mhz=d["core_clock_cap_mhz"],
                          mem_clock_cap_mhz=d["mem_clock_cap_mhz"])


def _calibration_to_dict(r: CalibrationReport) -> dict:
    return {"tier_name": r.tier_name, "target_tflops": r.target_tflops,
            "final_config": _throttle_to_dict(r.final_config),
            "measured_tflops": r.measured_tflops, "probes_used": r.probes_used,
            "warnings": list(r.warnings)}


def _calibration_from_dict(d: dict) -> CalibrationReport:
    return CalibrationReport(
        tier_name=d["tier_name"], target_tflops=d["target_tflops"],
        final_config=_throttle_from_dict(d["final_config"]),
        measured_tflops=d["measured_tflops"], probes_used=d["probes_used"],
        warnings=list(d.get("warnings", ())))


def _record_to_dict(r: RunRecord) -> dict:
    return {
        "tier_name": r.tier_name, "splat_count": r.splat_count,
        "animated": r.animated, "repeat_index": r.repeat_index,
        "duration_s": r.duration_s,
        "fps": dataclasses.asdict(r.fps),
        "energy": dataclasses.asdict(r.energy),
        "violations": r.violations,
        "started_at": r.started_at, "finished_at": r.finished_at,
    }


def _record_from_dict(d: dict) -> RunRecord:
    return RunRecord(
        tier_name=d["tier_name"], splat_count=d["splat_count"],
        animated=d["animated"], repeat_index=d["repeat_index"],
        duration_s=d["duration_s"], fps=FpsStats(**d["fps"]),
        energy=EnergyMetrics(**d["energy"]), violations=d["violations"],
        started_at=d.get("started_at"), finished_at=d.get("finished_at"))


def _store_lines(store: ResultStore):
    yield {"type": "campaign", "version": STORE_VERSION, "id": store.campaign_id}
    for tier in sorted(store.calibrations):
        yield {"type": "calibration",
               **_calibration_to_dict(store.calibrations[tier])}
    for key in sorted(store.records):
        yield {"type": "run", **_record_to_dict(store.records[key])}
    for event in store.events:
        yield {"type": "event", **event}


def persist(store: ResultStore, directory: Path | str) -> Path:
    """Write the full store to <directory>/results.ndjson (deterministic bytes)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / RESULTS_FILENAME
    text = "".join(json.dumps(line, sort_keys=True) + "\n"
                   for line in _store_lines(store))
    path.write_text(text)
    return path


def append_record(store: ResultStore, directory: Path | str) -> None:
    """Flush the store after a new record; cheap full rewrite keeps one format."""
    persist(store, directory)


def load_store(directory: Path | str) -> ResultStore:
    """Load a store; corrupt lines are warned about and skipped."""
    directory = Path(directory)
    path = directory / RESULTS_FILENAME
    store = ResultStore(campaign_id="")
    if not path.exists():
        return store
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            kind = obj.pop("type")
            if kind == "campaign":
                if obj.get("version") != STORE_VERSION:
                    raise CampaignError(
                        f"{path}:{lineno}: store version {obj.get('version')} "
                        f"!= supported {STORE_VERSION}")
                store.campaign_id = obj.get("id", "")
            elif kind == "calibration":
                report = _calibration_from_dict(obj)
                store.calibrations[report.tier_name] = report
            elif kind == "run":
                record = _record_from_dict(obj)
                store.records[record.key] = record
            elif kind == "event":
                store.events.append(obj)
            else:
                raise ValueError(f"unknown line type {kind!r}")
        except CampaignError:
            raise
        except (ValueError, KeyError, TypeError) as exc:
            warnings.warn(f"{path}:{lineno}: skipping corrupt line ({exc})")
    return store


# ---------------------------------------------------------------------------
# execution

def execute_campaign(manifest: CampaignManifest, device: DeviceHandle,
                     db: Optional[SpecDatabase] = None,
                     probe_runner_factory=None) -> ResultStore:
    """Run the whole grid. Per tier: derive -> calibrate -> verify, then all
    runs; calibration failure skips that tier's runs and the campaign
    continues. Already-recorded keys are skipped, making re-execution after a
    crash (or completion) a no-op for finished runs. The device is reset at
    the end and on abort.
    """
    if db is None:
        db = (load_spec_db(manifest.spec_db_path) if manifest.spec_db_path
              else load_spec_db())
    plan = expand_grid(manifest, db)
    out = Path(manifest.output_dir)
    store = load_store(out)
    if not store.campaign_id:
        store.campaign_id = f"campaign-{int(time.time())}"
    try:
        for tier_name in manifest.tiers:
            tier_runs = [p for p in plan if p.tier_name == tier_name]
            if all(p.key in store.records for p in tier_runs):
                log.info("tier %s already complete, skipping", tier_name)
                continue
            tier = db.derive(tier_name)
            try:
                report, device = calibrate_core_clock(
                    device, tier, tolerance_pct=manifest.tolerance_pct,
                    params=manifest.probe_params,
                    runner=(probe_runner_factory(device)
                            if probe_runner_factory else None))
                report = verify_tier(device, report, params=manifest.probe_params)
            except CalibrationError as exc:
                store.events.append({"kind": "tier_failed", "tier": tier_name,
                                     "error": str(exc)})
                append_record(store, out)
                log.warning("tier %s failed calibration: %s", tier_name, exc)
                continue
            store.calibrations[tier_name] = report
            append_record(store, out)
            device = apply_throttle(device, report.final_config)
            for planned in tier_runs:
                if planned.key in store.records:
                    continue
                record = _execute_run(manifest, device, report, planned)
                store.records[planned.key] = record
                append_record(store, out)
    finally:
        try:
            device = reset_throttle(device)
        except DeviceControlError as exc:  # best-effort on abort
            log.error("device reset failed: %s", exc)
    return store


def _execute_run(manifest: CampaignManifest, device: DeviceHandle,
                 calibration: CalibrationReport, planned: PlannedRun) -> RunRecord:
    started = time.time()
    # zlib.crc32 keeps the per-run seed stable across interpreter runs.
    import zlib
    seed = zlib.crc32(repr((manifest.seed, planned.key)).encode()) & 0x7FFFFFFF
    if device.kind == "simulated":
        frames, power = simulate_run(device, planned.workload,
                                     cost=manifest.synthetic_cost, seed=seed)
    else:
        sampler = telemetry.DmonSampler(index=device.index)
        frames, power = run_workload(planned.workload, sampler)
    violations = validate_envelope(power, calibration.final_config,
                                   manifest.envelope_tolerances)
    stats = fps_stats(frames, bucket_s=manifest.bucket_s)
    p_avg = average_power(power)
    return RunRecord(
        tier_name=planned.tier_name, splat_count=planned.workload.splat_count,
        animated=planned.workload.animated, repeat_index=planned.repeat_index,
        duration_s=planned.workload.duration_s, fps=stats,
        energy=EnergyMetrics.compute(p_avg, stats.mean_fps),
        violations=len(violations), started_at=started, finished_at=time.time())


# ---------------------------------------------------------------------------
# reporting

def aggregated_records(store: ResultStore) -> list[RunRecord]:
    """One aggregate per (tier, splats, animated), ordered tier-major with
    animated runs first and larger scenes first (report table order)."""
    groups: dict[tuple, list[RunRecord]] = {}
    for record in store.records.values():
        groups.setdefault(record.group_key, []).append(record)
    tier_order = list(dict.fromkeys(r.tier_name for r in store.records.values()))
    ordered_keys = sorted(
        groups, key=lambda k: (tier_order.index(k[0]), not k[2], -k[1]))
    return [aggregate_repeats(groups[k]) for k in ordered_keys]


def format_splats_m(splats: int) -> str:
    return f"{splats / 1e6:.2f} M"


def render_table(store: ResultStore) -> str:
    """Markdown results table: identity columns, FPS mean ± SD, energy columns."""
    if not store.records:
        raise CampaignError("result store is empty")
    lines = [
        "| GPU | Animations? | # Splats | FPS (mean ± SD) | P_avg (W) | E/frame (J) | FPS/W |",
        "|---|---|---|---|---|---|---|",
    ]
    for rec in aggregated_records(store):
        lines.append(
            f"| {rec.tier_name} | {'Yes' if rec.animated else 'No'} "
            f"| {format_splats_m(rec.splat_count)} "
            f"| {rec.fps.mean_fps:.1f} ±{rec.fps.sd_fps:.1f} "
            f"| {rec.energy.p_avg_w:.1f} "
            f"| {rec.energy.energy_per_frame_j:.3f} "
            f"| {rec.energy.perf_per_watt:.4f} |")
    return "\n".join(lines) + "\n"


def render_csv(store: ResultStore) -> str:
    """Full-precision CSV, one row per aggregated record."""
    if not store.records:
        raise CampaignError("result store is empty")
    import csv
    import io
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["tier", "animated", "splat_count", "mean_fps", "sd_fps",
                     "bucket_count", "total_frames", "p_avg_w",
                     "energy_per_frame_j", "perf_per_watt", "violations"])
    for rec in aggregated_records(store):
        writer.writerow([rec.tier_name, rec.animated, rec.splat_count,
                         repr(rec.fps.mean_fps), repr(rec.fps.sd_fps),
                         rec.fps.bucket_count, rec.fps.total_frames,
                         repr(rec.energy.p_avg_w),
                         repr(rec.energy.energy_per_frame_j),
                         repr(rec.energy.perf_per_watt), rec.violations])
    return buf.getvalue()


def render_charts(store: ResultStore, directory: Path | str) -> list[Path]:
    """Three SVG charts: FPS vs power cap per scene size, energy per frame by
    tier, and performance per watt vs scene size."""
    if not store.records:
        raise CampaignError("result store is empty")
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = [r for r in aggregated_records(store) if not r.animated]
    tiers = list(dict.fromkeys(r.tier_name for r in records))
    power_caps = {t: store.calibrations[t].final_config.power_cap_w
                  for t in tiers if t in store.calibrations}
    splat_counts = sorted({r.splat_count for r in records})
    paths = []

    fig, ax = plt.subplots(figsize=(6, 4))
    for splats in splat_counts:
        pts = [(power_caps[r.tier_name], r.fps.mean_fps) for r in records
               if r.splat_count == splats and r.tier_name in power_caps]
        pts.sort()
        ax.plot([p for p, _ in pts], [f for _, f in pts], marker="o",
                label=format_splats_m(splats))
    ax.set_xlabel("Power cap (W)")
    ax.set_ylabel("FPS")
    ax.legend(title="Scene size")
    ax.set_title("FPS vs power cap")
    path = directory / "fps_vs_power.svg"
    fig.savefig(path)
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    for splats in splat_counts:
        vals = [next((r.energy.energy_per_frame_j for r in records
                      if r.splat_count == splats and r.tier_name == t), None)
                for t in tiers]
        ax.plot(tiers, vals, marker="s", label=format_splats_m(splats))
    ax.set_xlabel("Tier")
    ax.set_ylabel("Energy per frame (J)")
    ax.legend(title="Scene size")
    ax.set_title("Energy per frame by tier")
    path = directory / "energy_per_frame.svg"
    fig.savefig(path)
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    for tier in tiers:
        pts = [(r.splat_count, r.energy.perf_per_watt) for r in records
               if r.tier_name == tier]
        pts.sort()
        ax.plot([s / 1e6 for s, _ in pts], [v for _, v in pts], marker="^",
                label=tier)
    ax.set_xlabel("Splats (millions)")
    ax.set_ylabel("FPS per watt")
    ax.legend(title="Tier")
    ax.set_title("Performance per watt vs scene size")
    path = directory / "perf_per_watt.svg"
    fig.savefig(path)
    plt.close(fig)
    paths.append(path)
    return paths


def render_report(store: ResultStore, directory: Path | str,
                  formats: Sequence[str] = ("table", "csv", "svg")) -> list[Path]:
    """Render the requested report artifacts into *directory*."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    if "table" in formats:
        path = directory / "report.md"
        path.write_text(render_table(store))
        written.append(path)
    if "csv" in formats:
        path = directory / "report.csv"
        path.write_text(render_csv(store))
        written.append(path)
    if "svg" in formats:
        written.extend(render_charts(store, directory / "charts"))
    return written
