"""Command-line surface.

Machine-readable results go to stdout, diagnostics to stderr. Exit codes:
0 success, 1 domain error, 2 usage error, 3 device/control-plane error.
Real-device subcommands refuse to issue control commands without the
explicit --i-have-root flag, since power and clock caps affect the whole
machine.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import campaign as campaign_mod
from .calibrate import (ProbeParams, SubprocessProbeRunner, calibrate_core_clock,
                        measure_sustained_tflops, verify_tier)
from .device import (apply_throttle, query_supported_clocks,
                     real_device, reset_throttle, simulated_device)
from .errors import CampaignError, DeviceControlError, GpuTierBenchError
from .model import DEFAULT_DB_PATH, ThrottleConfig, load_spec_db
from .telemetry import parse_dmon_stream, serialize_trace
from .workload import WorkloadSpec, simulate_run

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2
EXIT_DEVICE = 3


def _add_device_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--device", choices=("sim", "real"), default="sim",
                        help="device backend (default: sim)")
    parser.add_argument("--index", type=int, default=0, help="GPU index")
    parser.add_argument("--i-have-root", action="store_true",
                        help="confirm real-device control commands may be issued")


def _add_db_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--spec-db", type=Path, default=DEFAULT_DB_PATH,
                        help="GPU spec database file")


def _get_device(args, db):
    if args.device == "real":
        if not args.i_have_root:
            raise UsageError(
                "--device real mutates machine-wide GPU state; pass "
                "--i-have-root to confirm")
        return real_device(db.host, index=args.index)
    return simulated_device(db.host)


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpu-tier-bench",
        description="Emulate weaker GPU tiers by throttling, then benchmark "
                    "workloads with power telemetry and energy metrics.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tiers", help="print the derived tier table")
    _add_db_arg(p)

    p = sub.add_parser("calibrate", help="search the core-clock cap for a tier")
    _add_db_arg(p)
    _add_device_args(p)
    p.add_argument("--tier", required=True)
    p.add_argument("--tolerance-pct", type=float, default=3.0)
    p.add_argument("--max-probes", type=int, default=12)
    p.add_argument("--probe-binary", help="GEMM probe executable (real device)")

    p = sub.add_parser("apply", help="apply a tier's throttle config")
    _add_db_arg(p)
    _add_device_args(p)
    p.add_argument("--tier")
    p.add_argument("--power-w", type=float)
    p.add_argument("--core-mhz", type=int)
    p.add_argument("--mem-mhz", type=int)

    p = sub.add_parser("reset", help="clear all throttle caps")
    _add_db_arg(p)
    _add_device_args(p)

    p = sub.add_parser("measure", help="one sustained-TFLOPS probe")
    _add_db_arg(p)
    _add_device_args(p)
    p.add_argument("--tier", help="sim only: apply this tier's config first")
    p.add_argument("--probe-binary")
    p.add_argument("--show-clocks", action="store_true",
                   help="print the supported clock set instead of probing")
    for name, default in (("m", 8192), ("n", 8192), ("k", 8192),
                          ("iterations", 100), ("warmup", 10)):
        p.add_argument(f"--{name}", type=int, default=default)

    p = sub.add_parser("run", help="one benchmark run")
    _add_db_arg(p)
    _add_device_args(p)
    p.add_argument("--tier", required=True)
    p.add_argument("--splats", type=int, required=True)
    p.add_argument("--animated", action="store_true")
    p.add_argument("--animated-splats", type=int, default=38844)
    p.add_argument("--duration-s", type=float, default=120.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("campaign", help="execute a campaign manifest")
    _add_db_arg(p)
    _add_device_args(p)
    p.add_argument("--manifest", type=Path, required=True)

    p = sub.add_parser("report", help="render reports from a results directory")
    p.add_argument("--in", dest="results_dir", type=Path, required=True)
    p.add_argument("--format", choices=("table", "csv", "svg"), nargs="+",
                   default=("table", "csv", "svg"))
    p.add_argument("--out", type=Path, help="output directory (default: --in)")

    p = sub.add_parser("parse-dmon", help="convert a dmon log to a trace file")
    p.add_argument("path", type=Path)
    p.add_argument("--period-s", type=float, default=1.0)
    return parser


def cmd_tiers(args) -> int:
    db = load_spec_db(args.spec_db)
    header = (f"{'tier':<10} {'theor':>7} {'est.sus':>8} {'power':>6} "
              f"{'req.mclk':>9} {'emu.mclk':>9} {'dev%':>7}")
    print(header)
    for plan in db.derive_all():
        print(f"{plan.target.name:<10} {plan.target.theoretical_fp32_tflops:>7.2f} "
              f"{plan.estimated_sustained_tflops:>8.2f} "
              f"{plan.throttle.power_cap_w:>6.0f} "
              f"{plan.required_mem_clock_mhz:>9d} "
              f"{plan.throttle.mem_clock_cap_mhz:>9d} "
              f"{plan.mem_clock_deviation_pct:>+7.1f}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    db = load_spec_db(args.spec_db)
    device = _get_device(args, db)
    tier = db.derive(args.tier)
    runner = SubprocessProbeRunner(args.probe_binary) if args.probe_binary else None
    report, device = calibrate_core_clock(
        device, tier, tolerance_pct=args.tolerance_pct,
        max_probes=args.max_probes, runner=runner)
    report = verify_tier(device, report, runner=runner)
    print(json.dumps({
        "tier": report.tier_name, "target_tflops": report.target_tflops,
        "measured_tflops": report.measured_tflops,
        "deviation_pct": report.deviation_pct,
        "core_clock_cap_mhz": report.final_config.core_clock_cap_mhz,
        "power_cap_w": report.final_config.power_cap_w,
        "mem_clock_cap_mhz": report.final_config.mem_clock_cap_mhz,
        "probes_used": report.probes_used, "warnings": report.warnings,
    }, indent=2))
    return EXIT_OK


def cmd_apply(args) -> int:
    db = load_spec_db(args.spec_db)
    device = _get_device(args, db)
    if args.tier:
        config = db.derive(args.tier).throttle
    elif None not in (args.power_w, args.core_mhz, args.mem_mhz):
        config = ThrottleConfig(power_cap_w=args.power_w,
                                core_clock_cap_mhz=args.core_mhz,
                                mem_clock_cap_mhz=args.mem_mhz)
    else:
        raise UsageError("pass --tier or all of --power-w/--core-mhz/--mem-mhz")
    apply_throttle(device, config)
    print(json.dumps({"applied": {
        "power_cap_w": config.power_cap_w,
        "core_clock_cap_mhz": config.core_clock_cap_mhz,
        "mem_clock_cap_mhz": config.mem_clock_cap_mhz}}))
    return EXIT_OK


def cmd_reset(args) -> int:
    db = load_spec_db(args.spec_db)
    reset_throttle(_get_device(args, db))
    print(json.dumps({"reset": True}))
    return EXIT_OK


def cmd_measure(args) -> int:
    db = load_spec_db(args.spec_db)
    device = _get_device(args, db)
    if args.show_clocks:
        mem, step = query_supported_clocks(device)
        print(json.dumps({"supported_mem_clocks_mhz": list(mem),
                          "core_clock_step_mhz": step}))
        return EXIT_OK
    params = ProbeParams(m=args.m, n=args.n, k=args.k,
                         iterations=args.iterations,
                         warmup_iterations=args.warmup)
    if args.probe_binary:
        runner = SubprocessProbeRunner(args.probe_binary)
    elif device.kind == "simulated":
        from .calibrate import SimulatedProbeRunner
        tier_name = args.tier or db.host.spec.name
        device = apply_throttle(device, db.derive(tier_name).throttle)
        runner = SimulatedProbeRunner(device)
    else:
        raise UsageError("real-device measurement needs --probe-binary")
    tflops = measure_sustained_tflops(runner, params)
    print(json.dumps({"sustained_tflops": tflops}))
    return EXIT_OK


def cmd_run(args) -> int:
    db = load_spec_db(args.spec_db)
    device = _get_device(args, db)
    if device.kind == "real":
        raise UsageError(
            "single real runs go through `campaign` (needs a workload command); "
            "`run` drives the synthetic workload on the simulated device")
    spec = WorkloadSpec(command=("synthetic",), splat_count=args.splats,
                        animated=args.animated,
                        animated_splats=args.animated_splats if args.animated else 0,
                        duration_s=args.duration_s)
    tier = db.derive(args.tier)
    report, device = calibrate_core_clock(device, tier)
    device = apply_throttle(device, report.final_config)
    frames, power = simulate_run(device, spec, seed=args.seed)
    from .metrics import EnergyMetrics, fps_stats
    from .telemetry import average_power
    stats = fps_stats(frames)
    energy = EnergyMetrics.compute(average_power(power), stats.mean_fps)
    print(json.dumps({
        "tier": args.tier, "splats": args.splats, "animated": args.animated,
        "mean_fps": stats.mean_fps, "sd_fps": stats.sd_fps,
        "p_avg_w": energy.p_avg_w,
        "energy_per_frame_j": energy.energy_per_frame_j,
        "perf_per_watt": energy.perf_per_watt}, indent=2))
    return EXIT_OK


def cmd_campaign(args) -> int:
    db = load_spec_db(args.spec_db)
    manifest = campaign_mod.load_manifest(args.manifest)
    device = _get_device(args, db)
    out = Path(manifest.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise CampaignError(
            f"lock file {lock} exists; another campaign may be running "
            f"against this directory (delete it if that is stale)")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        store = campaign_mod.execute_campaign(manifest, device, db=db)
    finally:
        lock.unlink(missing_ok=True)
    print(json.dumps({"campaign_id": store.campaign_id,
                      "runs": len(store.records),
                      "calibrated_tiers": sorted(store.calibrations),
                      "events": store.events}, indent=2))
    return EXIT_OK


def cmd_report(args) -> int:
    store = campaign_mod.load_store(args.results_dir)
    out = args.out or args.results_dir
    written = campaign_mod.render_report(store, out, formats=args.format)
    for path in written:
        print(path)
    return EXIT_OK


def cmd_parse_dmon(args) -> int:
    try:
        lines = args.path.read_text().splitlines()
    except FileNotFoundError:
        raise GpuTierBenchError(f"dmon log not found: {args.path}")
    result = parse_dmon_stream(lines, sample_period_s=args.period_s)
    if result.skipped_rows:
        print(f"skipped {result.skipped_rows} malformed rows", file=sys.stderr)
    sys.stdout.write(serialize_trace(result.trace))
    return EXIT_OK


_COMMANDS = {
    "tiers": cmd_tiers, "calibrate": cmd_calibrate, "apply": cmd_apply,
    "reset": cmd_reset, "measure": cmd_measure, "run": cmd_run,
    "campaign": cmd_campaign, "report": cmd_report, "parse-dmon": cmd_parse_dmon,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DeviceControlError as exc:
        print(f"device error: {exc}", file=sys.stderr)
        return EXIT_DEVICE
    except GpuTierBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
