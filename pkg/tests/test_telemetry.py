from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from gpu_tier_bench.errors import TelemetryError
from gpu_tier_bench.telemetry import (EnvelopeTolerances, PowerSample, PowerTrace,
                                      average_power, deserialize_trace,
                                      parse_dmon_stream, serialize_trace,
                                      validate_envelope)
from gpu_tier_bench.model import ThrottleConfig

FIXTURE = Path(__file__).parent / "fixtures" / "dmon_120.txt"

HEADER = [
    "# gpu   pwr gtemp mtemp  mclk  pclk",
    "# Idx     W     C     C   MHz   MHz",
]


def make_trace(powers, period=1.0, sm=None, mem=None):
    samples = tuple(
        PowerSample(t=i * period, power_w=p, sm_clock_mhz=sm, mem_clock_mhz=mem)
        for i, p in enumerate(powers))
    return PowerTrace(samples=samples, sample_period_s=period)


class TestParseDmonStream:
    def test_fixture_row_count_and_span(self):
        result = parse_dmon_stream(FIXTURE.read_text().splitlines())
        assert len(result.trace.samples) == 120
        assert result.skipped_rows == 0
        assert result.trace.samples[-1].t == pytest.approx(119.0)

    def test_missing_power_marker_retained(self):
        lines = HEADER + ["    0     -    60     -  5001  1110"]
        result = parse_dmon_stream(lines)
        assert len(result.trace.samples) == 1
        assert result.trace.samples[0].power_w is None
        assert result.trace.samples[0].mem_clock_mhz == 5001

    def test_corrupted_row_skipped_and_counted(self):
        lines = FIXTURE.read_text().splitlines()
        lines.insert(60, "    0   ###garbage###")
        result = parse_dmon_stream(lines)
        assert len(result.trace.samples) == 120
        assert result.skipped_rows == 1

    def test_header_only_is_empty_trace_error(self):
        with pytest.raises(TelemetryError, match="empty trace"):
            parse_dmon_stream(HEADER)

    def test_header_missing_columns(self):
        with pytest.raises(TelemetryError, match="missing required columns"):
            parse_dmon_stream(["# gpu   pwr gtemp", "    0   140    60"])

    def test_sm_column_accepted_for_core_clock(self):
        lines = ["# gpu   pwr    sm  mclk",
                 "    0   140  1110  5001"]
        result = parse_dmon_stream(lines)
        assert result.trace.samples[0].sm_clock_mhz == 1110

    def test_order_preserved_and_no_invented_samples(self):
        lines = FIXTURE.read_text().splitlines()
        result = parse_dmon_stream(lines)
        data_rows = [l for l in lines if l.strip() and not l.lstrip().startswith("#")]
        assert len(result.trace.samples) <= len(data_rows)
        times = [s.t for s in result.trace.samples]
        assert times == sorted(times)


class TestAveragePower:
    def test_constant_trace(self):
        trace = make_trace([150.0] * 10)
        assert average_power(trace, (0, 5)) == 150.0
        assert average_power(trace) == 150.0

    def test_hand_computed_weighted_mean(self):
        trace = make_trace([100.0, 200.0, 200.0])
        assert average_power(trace, (0, 3)) == pytest.approx(500 / 3, abs=0.01)

    def test_missing_samples_excluded(self):
        trace = make_trace([100.0, None, 300.0])
        # weights 1 s each for the two usable samples
        assert average_power(trace, (0, 3)) == pytest.approx(200.0)

    def test_all_missing_window_errors(self):
        trace = make_trace([None, None, 100.0])
        with pytest.raises(TelemetryError, match="no usable"):
            average_power(trace, (0.0, 1.5))

    def test_window_clipping_weights_partial_intervals(self):
        trace = make_trace([100.0, 200.0])
        # window [0.5, 1.5]: 0.5 s of each sample
        assert average_power(trace, (0.5, 1.5)) == pytest.approx(150.0)

    @given(st.lists(st.one_of(st.none(),
                              st.floats(min_value=10, max_value=500)),
                    min_size=1, max_size=40))
    def test_mean_within_min_max_of_usable_samples(self, powers):
        usable = [p for p in powers if p is not None]
        trace = make_trace(powers)
        if not usable:
            with pytest.raises(TelemetryError):
                average_power(trace)
            return
        mean = average_power(trace)
        assert min(usable) - 1e-9 <= mean <= max(usable) + 1e-9


CONFIG = ThrottleConfig(power_cap_w=150, core_clock_cap_mhz=1110,
                        mem_clock_cap_mhz=5001)


class TestValidateEnvelope:
    def test_under_caps_is_clean(self):
        trace = make_trace([140.0] * 5, sm=1100.0, mem=5001.0)
        assert validate_envelope(trace, CONFIG) == []

    def test_power_excursion_flagged(self):
        trace = make_trace([140.0, 165.0, 140.0], sm=1100.0, mem=5001.0)
        violations = validate_envelope(trace, CONFIG)
        assert len(violations) == 1
        v = violations[0]
        assert (v.sample_index, v.kind, v.observed) == (1, "power", 165.0)
        assert v.limit == pytest.approx(157.5)

    def test_clock_exactly_at_cap_is_fine(self):
        trace = make_trace([140.0], sm=1110.0, mem=5001.0)
        assert validate_envelope(trace, CONFIG) == []

    def test_missing_fields_never_flag(self):
        trace = make_trace([None, None], sm=None, mem=None)
        assert validate_envelope(trace, CONFIG) == []

    @given(st.lists(st.floats(min_value=0, max_value=400), min_size=1,
                    max_size=30),
           st.floats(min_value=0, max_value=0.2),
           st.floats(min_value=0, max_value=0.3))
    def test_raising_tolerance_never_adds_violations(self, powers, tol_lo, extra):
        trace = make_trace(powers, sm=1000.0, mem=5001.0)
        lo = EnvelopeTolerances(power=tol_lo, clock=0.02)
        hi = EnvelopeTolerances(power=tol_lo + extra, clock=0.02)
        assert (len(validate_envelope(trace, CONFIG, hi))
                <= len(validate_envelope(trace, CONFIG, lo)))


class TestTraceRoundTrip:
    def test_round_trip_exact(self):
        trace = make_trace([140.25, None, 151.125], sm=1110.0, mem=5001.0)
        assert deserialize_trace(serialize_trace(trace)) == trace

    def test_fixture_round_trip(self):
        trace = parse_dmon_stream(FIXTURE.read_text().splitlines()).trace
        assert deserialize_trace(serialize_trace(trace)) == trace

    def test_header_checked(self):
        with pytest.raises(TelemetryError, match="trace file"):
            deserialize_trace("bogus\n1,2,3,4\n")

    @given(st.lists(st.one_of(st.none(),
                              st.floats(min_value=0, max_value=1000)),
                    min_size=1, max_size=20))
    def test_round_trip_property(self, powers):
        trace = make_trace(powers)
        assert deserialize_trace(serialize_trace(trace)) == trace


class TestPowerTraceInvariants:
    def test_strictly_increasing_times_required(self):
        with pytest.raises(ValueError):
            PowerTrace(samples=(PowerSample(t=1.0), PowerSample(t=1.0)),
                       sample_period_s=1.0)

    def test_positive_period_required(self):
        with pytest.raises(ValueError):
            PowerTrace(samples=(), sample_period_s=0)
