"""Device traces, workload generation, and eligible-supply estimation.

Traces can be loaded from JSONL/CSV or synthesized with a diurnal check-in
pattern and a four-region capacity mix. Workloads sample job templates from a
catalog under five scenarios and arrive via a Poisson process. Supply rates
are trailing-window averages of eligible check-ins per atom.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import random
from bisect import bisect_left, bisect_right
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Optional, Sequence

from .core import DeviceProfile, EligibilitySpec, JobSpec

SCENARIOS = ("Even", "Small", "Large", "Low", "High")

CAPACITY_REGIONS = ("General", "Compute-Rich", "Memory-Rich", "High-Performance")

# Capacity cut points separating the low/high CPU and memory regions.
CPU_SPLIT = 4.0
MEM_SPLIT = 4.0

# The four standard device specifications jobs are mapped to. They nest and
# overlap: High-Performance is the intersection of Compute-Rich and
# Memory-Rich, and everything is contained in General.
DEVICE_SPECS: dict[str, EligibilitySpec] = {
    "General": EligibilitySpec(),
    "Compute-Rich": EligibilitySpec(min_cpu=CPU_SPLIT),
    "Memory-Rich": EligibilitySpec(min_memory_gb=MEM_SPLIT),
    "High-Performance": EligibilitySpec(min_cpu=CPU_SPLIT, min_memory_gb=MEM_SPLIT),
}

# Mean speed_factor per region; faster hardware responds quicker.
_REGION_SPEED = {
    "General": 1.3,
    "Compute-Rich": 0.95,
    "Memory-Rich": 0.95,
    "High-Performance": 0.65,
}


class ParseError(Exception):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class EmptyTrace(Exception):
    pass


class InvalidConfig(ValueError):
    pass


class EmptyCatalogAfterFilter(ValueError):
    pass


def rng_stream(seed: int, name: str) -> random.Random:
    """Independent, platform-stable named random stream for one run seed."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def spec_label(spec: EligibilitySpec) -> str:
    """Human-readable name for a spec (region name when it is a standard one)."""
    for name, std in DEVICE_SPECS.items():
        if spec == std:
            return name
    return spec.describe()


# ---------------------------------------------------------------------------
# Device traces


@dataclass
class DeviceTrace:
    devices: list[DeviceProfile]
    horizon_s: float

    def __post_init__(self) -> None:
        seen = set()
        for dev in self.devices:
            if dev.device_id in seen:
                raise ValueError(f"duplicate device_id {dev.device_id!r}")
            seen.add(dev.device_id)

    def checkin_times(self) -> list[tuple[float, str]]:
        """All availability onsets as (time, device_id), time-ordered."""
        events = [
            (start, dev.device_id)
            for dev in self.devices
            for start, _ in dev.availability
            if start <= self.horizon_s
        ]
        events.sort()
        return events

    def mean_speed_factor(self) -> float:
        if not self.devices:
            return 1.0
        return sum(d.speed_factor for d in self.devices) / len(self.devices)


def _parse_intervals(raw, line: int) -> tuple[tuple[float, float], ...]:
    if isinstance(raw, str):
        pairs = []
        for chunk in raw.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            bits = chunk.split(":")
            if len(bits) != 2:
                raise ParseError(line, f"bad interval {chunk!r}, expected start:end")
            pairs.append((float(bits[0]), float(bits[1])))
    else:
        pairs = [(float(a), float(b)) for a, b in raw]
    return tuple(pairs)


def _device_from_record(rec: Mapping, line: int) -> DeviceProfile:
    try:
        tags = rec.get("tags", [])
        if isinstance(tags, str):
            tags = [t for t in tags.split(";") if t]
        dev = DeviceProfile(
            device_id=str(rec["id"]),
            cpu_score=float(rec["cpu"]),
            memory_gb=float(rec["mem_gb"]),
            speed_factor=float(rec.get("speed", 1.0)),
            tags=frozenset(tags),
            availability=_parse_intervals(rec.get("avail", []), line),
        )
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(line, str(exc)) from exc
    try:
        dev.validate()
    except ValueError as exc:
        raise ParseError(line, str(exc)) from exc
    return dev


def load_device_trace(source: IO, fmt: str = "jsonl", horizon_s: Optional[float] = None) -> DeviceTrace:
    """Parse a device trace from a JSONL or CSV stream.

    Malformed lines raise ParseError with their line number; an empty stream
    raises EmptyTrace.
    """
    devices: list[DeviceProfile] = []
    if fmt == "jsonl":
        for line_no, line in enumerate(source, start=1):
            if isinstance(line, bytes):
                line = line.decode()
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, f"invalid JSON: {exc}") from exc
            devices.append(_device_from_record(rec, line_no))
    elif fmt == "csv":
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode()
        reader = csv.DictReader(io.StringIO(text))
        for line_no, rec in enumerate(reader, start=2):
            devices.append(_device_from_record(rec, line_no))
    else:
        raise InvalidConfig(f"unknown trace format {fmt!r}")
    if not devices:
        raise EmptyTrace("trace contains no device records")
    if horizon_s is None:
        horizon_s = max((end for d in devices for _, end in d.availability), default=0.0)
    return DeviceTrace(devices=devices, horizon_s=horizon_s)


def save_device_trace(trace: DeviceTrace, sink: IO) -> None:
    for dev in trace.devices:
        rec = {
            "id": dev.device_id,
            "cpu": dev.cpu_score,
            "mem_gb": dev.memory_gb,
            "tags": sorted(dev.tags),
            "speed": dev.speed_factor,
            "avail": [[s, e] for s, e in dev.availability],
        }
        sink.write(json.dumps(rec) + "\n")


def _diurnal_rate(t: float, amplitude: float, peak_s: float = 72000.0) -> float:
    """Relative check-in intensity at simulation time t (24 h period)."""
    return 1.0 + amplitude * math.sin(2.0 * math.pi * (t - peak_s) / 86400.0 + math.pi / 2.0)


def synth_device_trace(
    n_devices: int,
    horizon_s: float,
    diurnal_amplitude: float = 0.6,
    capacity_mix: Sequence[float] = (0.45, 0.2, 0.2, 0.15),
    seed: int = 0,
    sessions_per_day: float = 2.0,
    session_mean_s: float = 3600.0,
) -> DeviceTrace:
    """Generate a synthetic population with diurnal availability onsets.

    Onset times follow a sinusoidal intensity with the given amplitude;
    capacities are drawn from the four-region mix; speed factors correlate
    with the region. Deterministic for a fixed seed.
    """
    if n_devices < 1:
        raise InvalidConfig("n_devices must be >= 1")
    if not 0.0 <= diurnal_amplitude <= 1.0:
        raise InvalidConfig("diurnal_amplitude must be in [0, 1]")
    if len(capacity_mix) != len(CAPACITY_REGIONS):
        raise InvalidConfig(f"capacity_mix needs {len(CAPACITY_REGIONS)} weights")
    total_mix = sum(capacity_mix)
    if total_mix <= 0 or any(w < 0 for w in capacity_mix):
        raise InvalidConfig("capacity_mix weights must be non-negative and sum > 0")

    rng = rng_stream(seed, "devices")
    weights = [w / total_mix for w in capacity_mix]
    devices = []
    base_rate = sessions_per_day / 86400.0
    max_rate = base_rate * (1.0 + diurnal_amplitude)
    for i in range(n_devices):
        region = rng.choices(CAPACITY_REGIONS, weights=weights, k=1)[0]
        hi_cpu = region in ("Compute-Rich", "High-Performance")
        hi_mem = region in ("Memory-Rich", "High-Performance")
        cpu = rng.uniform(CPU_SPLIT, 4 * CPU_SPLIT) if hi_cpu else rng.uniform(1.0, CPU_SPLIT * 0.999)
        mem = rng.uniform(MEM_SPLIT, 4 * MEM_SPLIT) if hi_mem else rng.uniform(1.0, MEM_SPLIT * 0.999)
        speed = _REGION_SPEED[region] * rng.lognormvariate(0.0, 0.35)
        speed = min(max(speed, 0.2), 6.0)

        # Inhomogeneous Poisson onsets via thinning.
        onsets = []
        t = 0.0
        while True:
            t += rng.expovariate(max_rate)
            if t >= horizon_s:
                break
            if rng.random() * max_rate <= base_rate * _diurnal_rate(t, diurnal_amplitude):
                onsets.append(t)
        intervals = []
        for k, start in enumerate(onsets):
            dur = rng.expovariate(1.0 / session_mean_s)
            end = min(start + max(dur, 60.0), horizon_s)
            if k + 1 < len(onsets):
                end = min(end, onsets[k + 1])
            if end > start:
                intervals.append((start, end))
        devices.append(
            DeviceProfile(
                device_id=f"d{i:06d}",
                cpu_score=cpu,
                memory_gb=mem,
                speed_factor=speed,
                availability=tuple(intervals),
            )
        )
    return DeviceTrace(devices=devices, horizon_s=horizon_s)


# ---------------------------------------------------------------------------
# Job catalog and workload sampling


@dataclass(frozen=True)
class JobTemplate:
    template_id: str
    total_rounds: int
    round_demand: int
    deadline_s: float
    report_threshold: float = 0.8

    @property
    def total_demand(self) -> int:
        return self.total_rounds * self.round_demand


def default_catalog(
    n: int = 60,
    demand_range: tuple[float, float] = (100.0, 10000.0),
    rounds_range: tuple[float, float] = (10.0, 1000.0),
    deadline_range: tuple[float, float] = (300.0, 900.0),
    report_threshold: float = 0.8,
    seed: int = 7,
) -> list[JobTemplate]:
    """Synthesize a job catalog: log-uniform round demands and round counts,
    deadlines interpolated linearly over the demand range."""
    rng = rng_stream(seed, "catalog")
    lo_d, hi_d = demand_range
    lo_r, hi_r = rounds_range
    lo_dl, hi_dl = deadline_range
    templates = []
    for i in range(n):
        demand = int(round(math.exp(rng.uniform(math.log(lo_d), math.log(hi_d)))))
        rounds = int(round(math.exp(rng.uniform(math.log(lo_r), math.log(hi_r)))))
        demand = max(1, demand)
        rounds = max(1, rounds)
        if hi_d > lo_d:
            frac = (demand - lo_d) / (hi_d - lo_d)
        else:
            frac = 0.5
        deadline = lo_dl + (hi_dl - lo_dl) * min(max(frac, 0.0), 1.0)
        templates.append(
            JobTemplate(
                template_id=f"tmpl-{i:03d}",
                total_rounds=rounds,
                round_demand=demand,
                deadline_s=deadline,
                report_threshold=report_threshold,
            )
        )
    return templates


@dataclass(frozen=True)
class WorkloadScenario:
    name: str
    n_jobs: int
    mean_interarrival_s: float = 1800.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.name not in SCENARIOS:
            raise InvalidConfig(f"unknown scenario {self.name!r}, expected one of {SCENARIOS}")
        if self.n_jobs < 1:
            raise InvalidConfig("n_jobs must be >= 1")
        if self.mean_interarrival_s <= 0:
            raise InvalidConfig("mean_interarrival_s must be > 0")


def _filter_catalog(scenario_name: str, catalog: Sequence[JobTemplate]) -> list[JobTemplate]:
    if scenario_name == "Even":
        return list(catalog)
    if scenario_name in ("Small", "Large"):
        mean_total = sum(t.total_demand for t in catalog) / len(catalog)
        keep = (lambda t: t.total_demand < mean_total) if scenario_name == "Small" else (
            lambda t: t.total_demand > mean_total
        )
    else:  # Low / High filter on per-round demand
        mean_round = sum(t.round_demand for t in catalog) / len(catalog)
        keep = (lambda t: t.round_demand < mean_round) if scenario_name == "Low" else (
            lambda t: t.round_demand > mean_round
        )
    return [t for t in catalog if keep(t)]


def sample_workload(scenario: WorkloadScenario, job_catalog: Sequence[JobTemplate]) -> list[JobSpec]:
    """Sample a job workload: scenario-filtered templates, Poisson arrivals,
    and a uniformly random standard device specification per job."""
    if not job_catalog:
        raise EmptyCatalogAfterFilter("job catalog is empty")
    pool = _filter_catalog(scenario.name, job_catalog)
    if not pool:
        raise EmptyCatalogAfterFilter(f"no templates left after {scenario.name} filter")
    rng = rng_stream(scenario.seed, "workload")
    spec_names = list(DEVICE_SPECS)
    jobs = []
    t = 0.0
    width = max(3, len(str(scenario.n_jobs - 1)))
    for i in range(scenario.n_jobs):
        t += rng.expovariate(1.0 / scenario.mean_interarrival_s)
        tmpl = rng.choice(pool)
        spec = DEVICE_SPECS[rng.choice(spec_names)]
        jobs.append(
            JobSpec(
                job_id=f"job-{i:0{width}d}",
                arrival_time=t,
                total_rounds=tmpl.total_rounds,
                round_demand=tmpl.round_demand,
                spec=spec,
                report_threshold=tmpl.report_threshold,
                deadline_seconds=tmpl.deadline_s,
            )
        )
    return jobs


def _spec_to_record(spec: EligibilitySpec) -> dict:
    return {
        "min_cpu": spec.min_cpu,
        "min_mem_gb": spec.min_memory_gb,
        "tags": sorted(spec.required_tags),
    }


def _spec_from_record(rec: Mapping) -> EligibilitySpec:
    return EligibilitySpec(
        min_cpu=float(rec.get("min_cpu", 0.0)),
        min_memory_gb=float(rec.get("min_mem_gb", 0.0)),
        required_tags=frozenset(rec.get("tags", [])),
    )


def save_job_file(jobs: Sequence[JobSpec], sink: IO) -> None:
    """Write jobs in the catalog JSONL schema (with arrival_s)."""
    for job in jobs:
        rec = {
            "id": job.job_id,
            "rounds": job.total_rounds,
            "demand": job.round_demand,
            "spec": _spec_to_record(job.spec),
            "deadline_s": job.deadline_seconds,
            "threshold": job.report_threshold,
            "arrival_s": job.arrival_time,
        }
        sink.write(json.dumps(rec) + "\n")


def load_job_file(source: IO, fmt: str = "jsonl") -> list[JobSpec]:
    """Load jobs from the catalog JSONL/CSV schema. ``arrival_s`` defaults to 0."""
    jobs: list[JobSpec] = []

    def build(rec: Mapping, line_no: int) -> JobSpec:
        try:
            spec_rec = rec.get("spec", {})
            if isinstance(spec_rec, str):
                spec_rec = json.loads(spec_rec)
            return JobSpec(
                job_id=str(rec["id"]),
                arrival_time=float(rec.get("arrival_s", 0.0)),
                total_rounds=int(rec["rounds"]),
                round_demand=int(rec["demand"]),
                spec=_spec_from_record(spec_rec),
                report_threshold=float(rec.get("threshold", 0.8)),
                deadline_seconds=float(rec.get("deadline_s", 600.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(line_no, str(exc)) from exc

    if fmt == "jsonl":
        for line_no, line in enumerate(source, start=1):
            if isinstance(line, bytes):
                line = line.decode()
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, f"invalid JSON: {exc}") from exc
            jobs.append(build(rec, line_no))
    elif fmt == "csv":
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode()
        for line_no, rec in enumerate(csv.DictReader(io.StringIO(text)), start=2):
            jobs.append(build(rec, line_no))
    else:
        raise InvalidConfig(f"unknown job file format {fmt!r}")
    return jobs


# ---------------------------------------------------------------------------
# Supply estimation


@dataclass
class SupplyEstimate:
    """Per-atom eligible check-in rates (devices/second) over a trailing window."""

    rates: dict[int, float]
    window_s: float = 86400.0
    as_of: float = 0.0

    def rate_of(self, atoms: Iterable[int]) -> float:
        return sum(self.rates.get(a, 0.0) for a in sorted(atoms))

    @property
    def total_rate(self) -> float:
        return sum(self.rates.values())


def estimate_supply_rates(
    checkin_log: Sequence[tuple[float, int]], now: float, window_s: float
) -> SupplyEstimate:
    """Average per-atom check-in rates over ``(now - window_s, now]``.

    Before a full window has elapsed (time origin 0), rates are averaged over
    elapsed time instead, so the scheduler is usable from the start.
    """
    if window_s <= 0:
        raise ValueError("window_s must be > 0")
    denom = window_s if now >= window_s else now
    if denom <= 0:
        return SupplyEstimate(rates={}, window_s=window_s, as_of=now)
    lo = now - window_s
    counts: Counter[int] = Counter()
    for t, atom in checkin_log:
        if lo < t <= now:
            counts[atom] += 1
    rates = {atom: counts[atom] / denom for atom in sorted(counts)}
    return SupplyEstimate(rates=rates, window_s=window_s, as_of=now)


class SupplyTracker:
    """Incremental trailing-window counter equivalent to estimate_supply_rates."""

    def __init__(self, window_s: float = 86400.0):
        if window_s <= 0:
            raise ValueError("window_s must be > 0")
        self.window_s = window_s
        self._events: deque[tuple[float, int]] = deque()
        self._counts: Counter[int] = Counter()

    def record(self, t: float, atom_id: int) -> None:
        self._events.append((t, atom_id))
        self._counts[atom_id] += 1

    def estimate(self, now: float) -> SupplyEstimate:
        lo = now - self.window_s
        while self._events and self._events[0][0] <= lo:
            _, atom = self._events.popleft()
            self._counts[atom] -= 1
        denom = self.window_s if now >= self.window_s else now
        if denom <= 0:
            return SupplyEstimate(rates={}, window_s=self.window_s, as_of=now)
        rates = {a: c / denom for a, c in sorted(self._counts.items()) if c > 0}
        return SupplyEstimate(rates=rates, window_s=self.window_s, as_of=now)
