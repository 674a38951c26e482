import json
from dataclasses import replace

import pytest

from gpu_tier_bench.campaign import (CampaignManifest, ResultStore,
                                     aggregated_records, default_workloads,
                                     execute_campaign, expand_grid,
                                     format_splats_m, load_manifest, load_store,
                                     persist, render_csv, render_report,
                                     render_table)
from gpu_tier_bench.errors import CampaignError
from gpu_tier_bench.model import GpuSpec


def manifest(tmp_path, tiers=("rtx4090", "rtx4070ti", "rtx3070", "rtx3050"),
             repeats=2, duration=2.0, workloads=None):
    return CampaignManifest(
        tiers=tiers,
        workloads=workloads or default_workloads(duration_s=duration),
        repeats=repeats, duration_s=duration, output_dir=tmp_path / "out")


class TestManifest:
    def test_duration_stamped_onto_workloads(self, tmp_path):
        m = manifest(tmp_path, duration=7.0)
        assert all(w.duration_s == 7.0 for w in m.workloads)

    def test_rejects_empty_grid(self, tmp_path):
        with pytest.raises(CampaignError, match="no tiers"):
            manifest(tmp_path, tiers=())
        with pytest.raises(CampaignError, match="repeats"):
            manifest(tmp_path, repeats=0)

    def test_default_workloads_grid(self):
        w = default_workloads()
        assert len(w) == 8
        assert sum(1 for x in w if x.animated) == 4
        assert all(x.animated_splats == 38844 for x in w if x.animated)

    def test_load_manifest_yaml(self, tmp_path):
        path = tmp_path / "m.yaml"
        path.write_text("""
tiers: [rtx4090, rtx3050]
repeats: 2
duration_s: 5.0
workloads:
  - splat_count: 580604
  - splat_count: 580604
    animated: true
""")
        m = load_manifest(path)
        assert m.tiers == ("rtx4090", "rtx3050")
        assert m.repeats == 2
        assert len(m.workloads) == 2
        assert m.workloads[1].animated_splats == 38844

    def test_load_manifest_missing(self, tmp_path):
        with pytest.raises(CampaignError, match="not found"):
            load_manifest(tmp_path / "nope.yaml")


class TestExpandGrid:
    def test_full_grid_size(self, tmp_path, db):
        plan = expand_grid(manifest(tmp_path, repeats=3), db)
        assert len(plan) == 4 * 8 * 3
        assert len({p.key for p in plan}) == len(plan)

    def test_tier_major_order(self, tmp_path, db):
        plan = expand_grid(manifest(tmp_path), db)
        tiers_seen = list(dict.fromkeys(p.tier_name for p in plan))
        assert tiers_seen == ["rtx4090", "rtx4070ti", "rtx3070", "rtx3050"]

    def test_unknown_tier_rejected(self, tmp_path, db):
        with pytest.raises(CampaignError, match="unknown tier"):
            expand_grid(manifest(tmp_path, tiers=("gtx980",)), db)

    def test_duplicate_workload_rejected(self, tmp_path, db):
        w = default_workloads(duration_s=2.0)
        with pytest.raises(CampaignError, match="duplicate"):
            expand_grid(manifest(tmp_path, workloads=w + (w[0],)), db)


def tiny_manifest(tmp_path, **kw):
    return manifest(tmp_path, tiers=("rtx4090", "rtx3050"), repeats=2,
                    duration=2.0,
                    workloads=default_workloads(lod_splats=(580604, 1834311),
                                                duration_s=2.0), **kw)


class TestExecuteCampaign:
    def test_simulated_campaign_completes(self, tmp_path, db, sim_device):
        m = tiny_manifest(tmp_path)
        store = execute_campaign(m, sim_device, db=db)
        # 2 tiers x 4 workloads x 2 repeats
        assert len(store.records) == 16
        assert set(store.calibrations) == {"rtx4090", "rtx3050"}
        assert (m.output_dir / "results.ndjson").exists()

    def test_resume_adds_no_new_runs(self, tmp_path, db, sim_device):
        m = tiny_manifest(tmp_path)
        first = execute_campaign(m, sim_device, db=db)
        before = (m.output_dir / "results.ndjson").read_bytes()
        second = execute_campaign(m, sim_device, db=db)
        assert second.records.keys() == first.records.keys()
        assert (m.output_dir / "results.ndjson").read_bytes() == before

    def test_partial_store_resumes_missing_runs_only(self, tmp_path, db,
                                                     sim_device):
        m = tiny_manifest(tmp_path)
        store = execute_campaign(m, sim_device, db=db)
        # drop one tier's records and re-run; only that tier is re-executed
        dropped = {k: v for k, v in store.records.items() if k[0] != "rtx3050"}
        kept = dict(store.records)
        store.records = dropped
        persist(store, m.output_dir)
        resumed = execute_campaign(m, sim_device, db=db)
        assert resumed.records.keys() == kept.keys()
        for key, rec in dropped.items():
            assert resumed.records[key] == rec  # untouched records preserved

    def test_failed_tier_recorded_and_campaign_continues(self, tmp_path, db,
                                                         sim_device):
        impossible = GpuSpec(name="impossible", theoretical_fp32_tflops=500,
                             nominal_power_w=450, nominal_core_clock_mhz=2520,
                             nominal_mem_bandwidth_gbs=1008)
        db2 = replace(db, gpus={**db.gpus, "impossible": impossible})
        m = manifest(tmp_path, tiers=("impossible", "rtx3050"), repeats=1,
                     duration=2.0,
                     workloads=default_workloads(lod_splats=(580604,),
                                                 duration_s=2.0))
        store = execute_campaign(m, sim_device, db=db2)
        assert any(e.get("kind") == "tier_failed" and e.get("tier") == "impossible"
                   for e in store.events)
        assert {k[0] for k in store.records} == {"rtx3050"}

    def test_device_reset_after_campaign(self, tmp_path, db, sim_device):
        m = tiny_manifest(tmp_path)
        execute_campaign(m, sim_device, db=db)
        assert sim_device.applied is None  # handle passed in stays fresh


class TestStoreRoundTrip:
    def test_persist_load_persist_byte_identical(self, tmp_path, db, sim_device):
        m = tiny_manifest(tmp_path)
        store = execute_campaign(m, sim_device, db=db)
        first = persist(store, tmp_path / "a").read_bytes()
        reloaded = load_store(tmp_path / "a")
        second = persist(reloaded, tmp_path / "b").read_bytes()
        assert first == second

    def test_corrupt_line_warned_and_skipped(self, tmp_path, db, sim_device):
        m = tiny_manifest(tmp_path)
        store = execute_campaign(m, sim_device, db=db)
        path = m.output_dir / "results.ndjson"
        lines = path.read_text().splitlines()
        lines.insert(3, '{"type": "run", "mangled": true}')
        lines.insert(5, "not json at all {{{")
        path.write_text("\n".join(lines) + "\n")
        with pytest.warns(UserWarning, match="corrupt line"):
            reloaded = load_store(m.output_dir)
        assert reloaded.records.keys() == store.records.keys()

    def test_version_mismatch_rejected(self, tmp_path):
        out = tmp_path / "out"
        out.mkdir()
        (out / "results.ndjson").write_text(
            json.dumps({"type": "campaign", "version": 99, "id": "x"}) + "\n")
        with pytest.raises(CampaignError, match="version"):
            load_store(out)

    def test_missing_file_yields_empty_store(self, tmp_path):
        store = load_store(tmp_path)
        assert store.records == {} and store.campaign_id == ""


@pytest.fixture(scope="module")
def completed(tmp_path_factory, db):
    from gpu_tier_bench.device import simulated_device
    tmp = tmp_path_factory.mktemp("report")
    device = simulated_device(db.host)
    m = manifest(tmp, repeats=2, duration=2.0)
    return execute_campaign(m, device, db=db)


class TestReporting:
    def test_aggregates_one_row_per_group(self, completed):
        aggs = aggregated_records(completed)
        assert len(aggs) == 32
        assert all(a.repeat_index == -1 for a in aggs)

    def test_aggregate_ordering(self, completed):
        aggs = aggregated_records(completed)
        first_tier = [a for a in aggs if a.tier_name == "rtx4090"]
        assert [a.animated for a in first_tier[:4]] == [True] * 4
        splats = [a.splat_count for a in first_tier[:4]]
        assert splats == sorted(splats, reverse=True)

    def test_table_formatting(self, completed):
        table = render_table(completed)
        assert "| GPU | Animations? | # Splats |" in table
        assert "0.58 M" in table
        # every data row uses the "x.x ±y.y" FPS style
        data_rows = [l for l in table.splitlines()[2:] if l]
        assert len(data_rows) == 32
        assert all("±" in row for row in data_rows)

    def test_format_splats(self):
        assert format_splats_m(580604) == "0.58 M"
        assert format_splats_m(3448340) == "3.45 M"

    def test_csv_round_trips_full_precision(self, completed):
        import csv
        import io
        rows = list(csv.DictReader(io.StringIO(render_csv(completed))))
        assert len(rows) == 32
        aggs = {(a.tier_name, a.splat_count, a.animated): a
                for a in aggregated_records(completed)}
        for row in rows:
            key = (row["tier"], int(row["splat_count"]),
                   row["animated"] == "True")
            assert float(row["mean_fps"]) == aggs[key].fps.mean_fps

    def test_report_artifacts_written(self, completed, tmp_path):
        written = render_report(completed, tmp_path / "report")
        names = sorted(p.name for p in written)
        assert names == ["energy_per_frame.svg", "fps_vs_power.svg",
                         "perf_per_watt.svg", "report.csv", "report.md"]
        assert all(p.exists() and p.stat().st_size > 0 for p in written)

    def test_empty_store_rejected(self):
        with pytest.raises(CampaignError, match="empty"):
            render_table(ResultStore(campaign_id="x"))


class TestMonotonicityAcrossTiers:
    def test_fps_ranks_follow_tier_compute(self, tmp_path, db, sim_device):
        m = manifest(tmp_path, repeats=1, duration=3.0,
                     workloads=default_workloads(lod_splats=(1834311,),
                                                 duration_s=3.0))
        store = execute_campaign(m, sim_device, db=db)
        static = {k[0]: v for k, v in store.records.items() if not k[2]}
        fps = [static[t].fps.mean_fps
               for t in ("rtx4090", "rtx4070ti", "rtx3070", "rtx3050")]
        assert fps == sorted(fps, reverse=True)
        animated = {k[0]: v for k, v in store.records.items() if k[2]}
        for tier, rec in static.items():
            assert animated[tier].fps.mean_fps < rec.fps.mean_fps
