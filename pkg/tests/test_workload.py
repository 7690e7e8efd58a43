import io
import json
import math
import statistics

import pytest

from fedsched.core import EligibilitySpec
from fedsched.workload import (
    DEVICE_SPECS,
    EmptyCatalogAfterFilter,
    EmptyTrace,
    InvalidConfig,
    JobTemplate,
    ParseError,
    SupplyTracker,
    WorkloadScenario,
    default_catalog,
    estimate_supply_rates,
    load_device_trace,
    load_job_file,
    sample_workload,
    save_device_trace,
    save_job_file,
    spec_label,
    synth_device_trace,
)


def tmpl(tid, demand, rounds=1):
    return JobTemplate(template_id=tid, total_rounds=rounds, round_demand=demand,
                       deadline_s=600.0)


class TestLoadDeviceTrace:
    def test_empty_stream(self):
        with pytest.raises(EmptyTrace):
            load_device_trace(io.StringIO(""))

    def test_reversed_interval(self):
        rec = {"id": "a", "cpu": 1, "mem_gb": 1, "avail": [[100, 50]]}
        with pytest.raises(ParseError) as err:
            load_device_trace(io.StringIO(json.dumps(rec) + "\n"))
        assert err.value.line == 1

    def test_three_valid_records(self):
        lines = [
            json.dumps({"id": f"d{i}", "cpu": 2, "mem_gb": 4, "tags": ["x"],
                        "speed": 1.5, "avail": [[0, 100]]})
            for i in range(3)
        ]
        trace = load_device_trace(io.StringIO("\n".join(lines)))
        assert len(trace.devices) == 3
        assert trace.devices[0].tags == frozenset({"x"})

    def test_bad_json_reports_line(self):
        stream = io.StringIO('{"id": "a", "cpu": 1, "mem_gb": 1}\nnot json\n')
        with pytest.raises(ParseError) as err:
            load_device_trace(stream)
        assert err.value.line == 2

    def test_csv_roundtrip_fields(self):
        csv_text = "id,cpu,mem_gb,tags,speed,avail\nd0,2,4,a;b,1.5,0:100;200:300\n"
        trace = load_device_trace(io.StringIO(csv_text), fmt="csv")
        d = trace.devices[0]
        assert d.tags == frozenset({"a", "b"})
        assert d.availability == ((0.0, 100.0), (200.0, 300.0))

    def test_jsonl_roundtrip(self):
        trace = synth_device_trace(5, horizon_s=86400.0, seed=1)
        buf = io.StringIO()
        save_device_trace(trace, buf)
        buf.seek(0)
        again = load_device_trace(buf)
        assert [d.device_id for d in again.devices] == [d.device_id for d in trace.devices]
        assert again.devices[3].availability == trace.devices[3].availability


class TestSynthTrace:
    def test_determinism(self):
        a = synth_device_trace(50, horizon_s=2 * 86400.0, seed=42)
        b = synth_device_trace(50, horizon_s=2 * 86400.0, seed=42)
        buf_a, buf_b = io.StringIO(), io.StringIO()
        save_device_trace(a, buf_a)
        save_device_trace(b, buf_b)
        assert buf_a.getvalue() == buf_b.getvalue()

    def test_amplitude_zero_uniform_hours(self):
        trace = synth_device_trace(2000, horizon_s=4 * 86400.0,
                                   diurnal_amplitude=0.0, seed=0)
        events = trace.checkin_times()
        hours = [0] * 24
        for t, _ in events:
            hours[int(t // 3600) % 24] += 1
        expect = len(events) / 24
        sigma = math.sqrt(expect)
        # Poisson counts per hour-of-day bucket stay within 3.5 sigma at this seed.
        assert all(abs(h - expect) < 3.5 * sigma for h in hours)

    def test_amplitude_one_deep_trough(self):
        trace = synth_device_trace(2000, horizon_s=4 * 86400.0,
                                   diurnal_amplitude=1.0, seed=0)
        hours = [0] * 24
        for t, _ in trace.checkin_times():
            hours[int(t // 3600) % 24] += 1
        assert min(hours) < 0.1 * max(hours)

    def test_capacity_mix_regions(self):
        trace = synth_device_trace(800, horizon_s=86400.0, seed=2,
                                   capacity_mix=(0.0, 0.0, 0.0, 1.0))
        hi = DEVICE_SPECS["High-Performance"]
        assert all(d.cpu_score >= hi.min_cpu and d.memory_gb >= hi.min_memory_gb
                   for d in trace.devices)

    def test_invalid_params(self):
        with pytest.raises(InvalidConfig):
            synth_device_trace(0, horizon_s=100.0)
        with pytest.raises(InvalidConfig):
            synth_device_trace(1, horizon_s=100.0, diurnal_amplitude=2.0)
        with pytest.raises(InvalidConfig):
            synth_device_trace(1, horizon_s=100.0, capacity_mix=(1.0,))

    def test_intervals_well_formed(self):
        trace = synth_device_trace(100, horizon_s=3 * 86400.0, seed=5)
        for d in trace.devices:
            d.validate()


class TestSampleWorkload:
    def test_single_template_even(self):
        scenario = WorkloadScenario(name="Even", n_jobs=5, seed=0)
        jobs = sample_workload(scenario, [tmpl("t0", demand=10)])
        assert len(jobs) == 5
        arrivals = [j.arrival_time for j in jobs]
        assert len(set(arrivals)) == 5
        assert arrivals == sorted(arrivals)

    def test_small_filter_takes_below_mean(self):
        catalog = [tmpl("small", demand=10), tmpl("big", demand=1000)]
        scenario = WorkloadScenario(name="Small", n_jobs=20, seed=1)
        jobs = sample_workload(scenario, catalog)
        assert all(j.round_demand == 10 for j in jobs)

    def test_large_low_high_filters(self):
        catalog = [
            JobTemplate("a", total_rounds=1, round_demand=10, deadline_s=600),
            JobTemplate("b", total_rounds=100, round_demand=40, deadline_s=600),
        ]
        large = sample_workload(WorkloadScenario(name="Large", n_jobs=10, seed=2), catalog)
        assert all(j.total_demand == 4000 for j in large)
        low = sample_workload(WorkloadScenario(name="Low", n_jobs=10, seed=2), catalog)
        assert all(j.round_demand == 10 for j in low)
        high = sample_workload(WorkloadScenario(name="High", n_jobs=10, seed=2), catalog)
        assert all(j.round_demand == 40 for j in high)

    def test_mean_interarrival_statistic(self):
        gaps = []
        for seed in range(20):
            scenario = WorkloadScenario(name="Even", n_jobs=50,
                                        mean_interarrival_s=1800.0, seed=seed)
            jobs = sample_workload(scenario, [tmpl("t0", demand=10)])
            times = [0.0] + [j.arrival_time for j in jobs]
            gaps.extend(b - a for a, b in zip(times, times[1:]))
        assert 1500 <= statistics.mean(gaps) <= 2100

    def test_specs_drawn_from_standard_four(self):
        scenario = WorkloadScenario(name="Even", n_jobs=200, seed=3)
        jobs = sample_workload(scenario, [tmpl("t0", demand=10)])
        names = {spec_label(j.spec) for j in jobs}
        assert names == set(DEVICE_SPECS)

    def test_empty_after_filter(self):
        with pytest.raises(EmptyCatalogAfterFilter):
            sample_workload(WorkloadScenario(name="Small", n_jobs=1, seed=0),
                            [tmpl("only", demand=10)])

    def test_invalid_scenario_name(self):
        with pytest.raises(InvalidConfig):
            WorkloadScenario(name="Weird", n_jobs=1)

    def test_workload_pure_function_of_seed(self):
        catalog = default_catalog(n=10, seed=9)
        s = WorkloadScenario(name="Even", n_jobs=30, seed=4)
        a = sample_workload(s, catalog)
        b = sample_workload(s, catalog)
        assert a == b


class TestJobFileIO:
    def test_roundtrip(self):
        catalog = default_catalog(n=5, demand_range=(10, 100), rounds_range=(1, 5), seed=0)
        jobs = sample_workload(WorkloadScenario(name="Even", n_jobs=7, seed=0), catalog)
        buf = io.StringIO()
        save_job_file(jobs, buf)
        buf.seek(0)
        again = load_job_file(buf)
        assert again == jobs

    def test_missing_field_is_parse_error(self):
        with pytest.raises(ParseError):
            load_job_file(io.StringIO('{"id": "x"}\n'))


class TestSupplyRates:
    def test_uniform_day_rate_one(self):
        log = [(float(t), 0) for t in range(1, 86401)]
        est = estimate_supply_rates(log, now=86400.0, window_s=86400.0)
        assert est.rates[0] == pytest.approx(1.0)

    def test_empty_log(self):
        est = estimate_supply_rates([], now=1000.0, window_s=86400.0)
        assert est.rates == {}
        assert est.rate_of([0, 1, 2]) == 0.0

    def test_burst_in_last_hour(self):
        log = [(86400.0 - 3600.0 + i * 36.0, 2) for i in range(100)]
        est = estimate_supply_rates(log, now=86400.0, window_s=86400.0)
        assert est.rates[2] == pytest.approx(100.0 / 86400.0)

    def test_bootstrap_divides_by_elapsed(self):
        log = [(float(t), 0) for t in range(1, 3601)]
        est = estimate_supply_rates(log, now=3600.0, window_s=86400.0)
        assert est.rates[0] == pytest.approx(1.0)

    def test_order_invariance(self):
        log = [(100.0, 0), (50.0, 1), (75.0, 0), (20.0, 1)]
        a = estimate_supply_rates(log, now=200.0, window_s=1000.0)
        b = estimate_supply_rates(sorted(log), now=200.0, window_s=1000.0)
        assert a.rates == b.rates

    def test_rates_sum_to_total(self):
        import random
        rng = random.Random(0)
        log = sorted((rng.uniform(0, 86400), rng.randrange(4)) for _ in range(5000))
        est = estimate_supply_rates(log, now=86400.0, window_s=86400.0)
        assert est.total_rate == pytest.approx(5000 / 86400.0)

    def test_tracker_matches_pure_function(self):
        import random
        rng = random.Random(1)
        tracker = SupplyTracker(window_s=500.0)
        log = []
        t = 0.0
        for _ in range(2000):
            t += rng.expovariate(1.0)
            atom = rng.randrange(3)
            tracker.record(t, atom)
            log.append((t, atom))
        for now in (t, t + 100.0, t + 600.0):
            expect = estimate_supply_rates(log, now=now, window_s=500.0)
            got = tracker.estimate(now)
            assert got.rates == pytest.approx(expect.rates)

    def test_window_validation(self):
        with pytest.raises(ValueError):
            estimate_supply_rates([], now=0.0, window_s=0.0)
