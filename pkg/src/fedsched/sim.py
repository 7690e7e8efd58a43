"""Deterministic discrete-event simulation of multi-job device scheduling.

Devices check in at their availability onsets; jobs arrive, issue per-round
resource requests, and collect responses until the report-back threshold is
met or the deadline expires. Per round, the scheduling delay (request issue to
full assignment) and the response collection time (full assignment to
threshold) are disjoint phases whose sum, over all rounds, equals the job
completion time.

All randomness flows through named per-run streams so toggling one component
(matcher, random baseline) never perturbs the draws of the others.
"""
from __future__ import annotations

import heapq
import logging
import math
import statistics
from dataclasses import dataclass, field, asdict, replace
from typing import Optional, Sequence

from . import irs, matcher
from .baselines import POLICIES, RequestQueue
from .core import (
    AtomTable,
    DeviceProfile,
    EligibilitySpec,
    JobSpec,
    OutstandingJob,
    RequestState,
    RoundRequest,
    group_jobs,
    satisfies,
)
from .oracle import ExactInstance
from .workload import (
    DEVICE_SPECS,
    DeviceTrace,
    JobTemplate,
    SupplyEstimate,
    SupplyTracker,
    WorkloadScenario,
    default_catalog,
    rng_stream,
    sample_workload,
    spec_label,
    synth_device_trace,
)

log = logging.getLogger(__name__)

SCHEDULERS = ("venn",) + POLICIES

DAY_S = 86400.0


class ConfigError(ValueError):
    pass


class MismatchedRuns(ValueError):
    pass


class SimulationIntegrityError(AssertionError):
    pass


def response_quorum(threshold: float, demand: int) -> int:
    """Responses required for a round to succeed: ceil(threshold * demand).

    The tiny slack keeps float products like 0.8 * 55 from rounding up past
    the intended integer.
    """
    return max(1, math.ceil(threshold * demand - 1e-9))


@dataclass
class ResponseModel:
    """Log-normal on-device response times with per-assignment failures."""

    base_task_s: float = 30.0
    sigma: float = 0.5
    failure_p: float = 0.0

    def __post_init__(self) -> None:
        if self.base_task_s <= 0:
            raise ConfigError("base_task_s must be > 0")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if not 0.0 <= self.failure_p < 1.0:
            raise ConfigError("failure_p must be in [0, 1)")

    def sample(self, device: DeviceProfile, rng) -> Optional[float]:
        if self.failure_p > 0.0 and rng.random() < self.failure_p:
            return None
        return self.base_task_s * device.speed_factor * rng.lognormvariate(0.0, self.sigma)

    def quantile(self, q: float, speed_factor: float = 1.0) -> float:
        z = statistics.NormalDist().inv_cdf(q)
        return self.base_task_s * speed_factor * math.exp(self.sigma * z)

    def expected_collect(self, threshold: float, mean_speed: float = 1.0) -> float:
        """Approximate collection time: the threshold-quantile response."""
        return self.quantile(min(max(threshold, 0.01), 0.99), mean_speed)


@dataclass
class SimConfig:
    scheduler: str = "venn"
    seed: int = 0
    epsilon: float = 0.0
    tiers: int = 5
    matching: bool = True
    matcher_rotation: bool = False
    total_remaining: bool = False
    horizon_s: float = 864000.0

    scenario: str = "Even"
    n_jobs: int = 50
    mean_interarrival_s: float = 1800.0
    workload_file: Optional[str] = None

    catalog_size: int = 60
    catalog_seed: int = 7
    demand_lo: float = 100.0
    demand_hi: float = 10000.0
    rounds_lo: float = 10.0
    rounds_hi: float = 1000.0
    deadline_lo: float = 300.0
    deadline_hi: float = 900.0
    report_threshold: float = 0.8

    trace_file: Optional[str] = None
    n_devices: int = 5000
    sessions_per_day: float = 2.0
    diurnal_amplitude: float = 0.6
    capacity_mix: tuple[float, float, float, float] = (0.45, 0.2, 0.2, 0.15)
    session_mean_s: float = 3600.0

    base_task_s: float = 30.0
    response_sigma: float = 0.5
    failure_p: float = 0.05

    supply_window_s: float = 86400.0
    fairness_floor: float = 0.02
    min_tier_samples: int = 20
    daily_limit_s: float = 86400.0
    integrity_checks: bool = True

    def validate(self) -> None:
        if self.scheduler not in SCHEDULERS:
            raise ConfigError(f"unknown scheduler {self.scheduler!r}, expected one of {SCHEDULERS}")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.tiers < 1:
            raise ConfigError("tiers must be >= 1")
        if self.horizon_s <= 0:
            raise ConfigError("horizon_s must be > 0")
        if self.workload_file is not None and self.n_jobs < 0:
            raise ConfigError("n_jobs must be >= 0")

    def workload_fingerprint(self) -> tuple:
        """Everything that defines the workload and environment, minus the
        scheduler-policy knobs."""
        return (
            self.seed, self.scenario, self.n_jobs, self.mean_interarrival_s,
            self.workload_file, self.catalog_size, self.catalog_seed,
            self.demand_lo, self.demand_hi, self.rounds_lo, self.rounds_hi,
            self.deadline_lo, self.deadline_hi, self.report_threshold,
            self.trace_file, self.n_devices, self.sessions_per_day,
            self.diurnal_amplitude, tuple(self.capacity_mix), self.session_mean_s,
            self.base_task_s, self.response_sigma, self.failure_p, self.horizon_s,
        )


# Event kinds, processed in (time, sequence) order.
EV_CHECKIN = 0
EV_JOB_ARRIVAL = 1
EV_REQUEST_ISSUED = 2
EV_RESPONSE = 3
EV_DEADLINE = 4


@dataclass
class RoundRecord:
    round_index: int
    sched_delay_s: float
    collect_s: float
    aborts: int


@dataclass
class JobRuntime:
    job: JobSpec
    concurrent_at_arrival: int = 1
    conc_integral_at_arrival: float = 0.0
    request: Optional[RoundRequest] = None
    need: int = 0
    rounds_done: int = 0
    aborts_total: int = 0
    cur_sched: float = 0.0
    cur_collect: float = 0.0
    cur_aborts: int = 0
    rounds: list[RoundRecord] = field(default_factory=list)
    completion: Optional[float] = None
    fair_share_s: float = math.inf  # evaluated at completion time
    profile: Optional[matcher.JobProfile] = None
    rotation: int = 0
    # (round_index, incarnation) -> (tier, table) | None; one decision per request
    match_cache: dict = field(default_factory=dict)

    @property
    def completed(self) -> bool:
        return self.completion is not None


@dataclass
class JobMetrics:
    job_id: str
    spec_name: str
    arrival_s: float
    total_rounds: int
    round_demand: int
    total_demand: int
    completed: bool
    jct_s: Optional[float]
    rounds_done: int
    aborts: int
    avg_sched_delay_s: float
    avg_collect_s: float
    fair_share_s: Optional[float]
    meets_fair_share: Optional[bool]


@dataclass
class MetricsReport:
    scheduler: str
    seed: int
    config: dict
    jobs: list[JobMetrics]
    checkins: int = 0
    assignments: int = 0
    events: int = 0
    plan_recomputes: int = 0

    @property
    def completed_jobs(self) -> list[JobMetrics]:
        return [j for j in self.jobs if j.completed]

    @property
    def avg_jct_s(self) -> float:
        done = self.completed_jobs
        if not done:
            return math.nan
        return sum(j.jct_s for j in done) / len(done)

    @property
    def fairness_ratio(self) -> float:
        done = [j for j in self.completed_jobs if j.meets_fair_share is not None]
        if not done:
            return 0.0
        return sum(1 for j in done if j.meets_fair_share) / len(done)

    def run_id(self) -> str:
        return f"{self.scheduler}-s{self.seed}"

    def csv_text(self) -> str:
        lines = ["run_id,scheduler,job_id,arrival_s,jct_s,rounds,aborts,avg_sched_delay_s,avg_collect_s"]
        for j in sorted(self.jobs, key=lambda j: j.job_id):
            jct = f"{j.jct_s:.6f}" if j.jct_s is not None else ""
            lines.append(
                f"{self.run_id()},{self.scheduler},{j.job_id},{j.arrival_s:.6f},{jct},"
                f"{j.rounds_done},{j.aborts},{j.avg_sched_delay_s:.6f},{j.avg_collect_s:.6f}"
            )
        return "\n".join(lines) + "\n"

    def summary(self, speedup_vs_random: Optional[float] = None) -> dict:
        avg = self.avg_jct_s
        return {
            "scheduler": self.scheduler,
            "seed": self.seed,
            "avg_jct_s": None if math.isnan(avg) else avg,
            "completed_jobs": len(self.completed_jobs),
            "total_jobs": len(self.jobs),
            "speedup_vs_random": speedup_vs_random,
            "fairness_ratio": self.fairness_ratio,
            "config": self.config,
        }


class _VennEngine:
    """Plan-driven assignment: recompute on request arrival and completion."""

    def __init__(self, sim: "Simulation"):
        self.sim = sim
        self.plan: Optional[irs.AllocationPlan] = None
        self.dirty = True
        self.generation = 0

    def on_request_issued(self, rt: JobRuntime, t: float) -> None:
        self.dirty = True

    def on_change(self) -> None:
        self.dirty = True

    def prepare(self, t: float) -> None:
        if self.dirty or self.plan is None or self.plan.needs_recompute:
            self._replan(t)

    def _replan(self, t: float) -> None:
        sim = self.sim
        outstanding = [
            OutstandingJob(job=rt.job, request=rt.request,
                           rounds_left=rt.job.total_rounds - rt.rounds_done)
            for rt in sim.arrival_order
            if not rt.completed and rt.request is not None
            and rt.request.state is RequestState.WAITING
        ]
        supply = sim.supply.estimate(t)
        groups = group_jobs(outstanding, sim.atoms, supply.rates)
        fairness = None
        if sim.cfg.epsilon > 0:
            fairness = sim.build_fairness(outstanding, supply, t)
        self.generation += 1
        sim.plan_recomputes += 1
        self.plan = irs.schedule(
            groups,
            supply,
            fairness,
            matcher_decide=self._matcher_decide(t) if sim.matching_active else None,
            total_remaining=sim.cfg.total_remaining,
            generation=self.generation,
            known_atoms=frozenset(range(len(sim.atoms))),
        )
        self.dirty = False

    def _matcher_decide(self, t: float):
        sim = self.sim

        def decide(head_item, atoms, alloc_rate):
            rt = sim.runtimes[head_item.job_id]
            req = head_item.request
            key = (req.round_index, req.incarnation)
            if key in rt.match_cache:
                return rt.match_cache[key]
            profile = sim.profile_for(rt)
            decision = None
            if profile.profiled:
                table = profile.tier_table(sim.cfg.base_task_s, sim.cfg.response_sigma)
                if table is not None:
                    c_i = matcher.estimate_c(
                        table.t_untiered, req.remaining_demand, alloc_rate
                    )
                    rotation = rt.rotation if sim.cfg.matcher_rotation else None
                    tier = matcher.match(c_i, table, sim.rng_matcher, rotation_index=rotation)
                    if sim.cfg.matcher_rotation:
                        rt.rotation += 1
                    if tier is not None:
                        decision = (tier, table)
            rt.match_cache[key] = decision
            return decision

        return decide

    def assign(self, device: DeviceProfile, atom: int, t: float) -> Optional[str]:
        if self.plan is None:
            return None
        return irs.assign_device(self.plan, device, atom)


class _BaselineEngine:
    def __init__(self, sim: "Simulation", policy: str):
        self.sim = sim
        self.queue = RequestQueue(policy, rng=sim.rng_baseline)

    def on_request_issued(self, rt: JobRuntime, t: float) -> None:
        self.queue.add(rt.job, rt.request)

    def on_change(self) -> None:
        pass

    def prepare(self, t: float) -> None:
        pass

    def assign(self, device: DeviceProfile, atom: int, t: float) -> Optional[str]:
        return self.queue.assign(device, atom)


class Simulation:
    """One seeded, single-threaded simulation run."""

    def __init__(self, cfg: SimConfig, trace: Optional[DeviceTrace] = None,
                 jobs: Optional[Sequence[JobSpec]] = None):
        cfg.validate()
        self.cfg = cfg
        self.model = ResponseModel(cfg.base_task_s, cfg.response_sigma, cfg.failure_p)
        self.rng_responses = rng_stream(cfg.seed, "responses")
        self.rng_matcher = rng_stream(cfg.seed, "matcher")
        self.rng_baseline = rng_stream(cfg.seed, "baseline")

        self.trace = trace if trace is not None else self._build_trace()
        if self.trace.horizon_s < cfg.horizon_s:
            log.warning(
                "trace horizon %.0fs is shorter than configured horizon %.0fs; truncating",
                self.trace.horizon_s, cfg.horizon_s,
            )
            self.horizon = self.trace.horizon_s
        else:
            self.horizon = cfg.horizon_s
        if self.cfg.scheduler == "venn" and self.horizon < DAY_S:
            log.warning("horizon below 24h; supply estimates stay in bootstrap mode")

        self.jobs = list(jobs) if jobs is not None else self._build_workload()
        self._jobs_by_id = {j.job_id: j for j in self.jobs}
        self.mean_speed = self.trace.mean_speed_factor()

        specs = list(dict.fromkeys(job.spec for job in self.jobs)) or [EligibilitySpec()]
        self.atoms = AtomTable(specs)
        for dev in self.trace.devices:
            self.atoms.classify(dev)
        self.devices = {d.device_id: d for d in self.trace.devices}

        self.supply = SupplyTracker(cfg.supply_window_s)
        self.runtimes: dict[str, JobRuntime] = {}
        self.arrival_order: list[JobRuntime] = []
        self.blocked_until: dict[str, float] = {}
        self.active_jobs = 0
        self._conc_integral = 0.0  # integral of active-job count over time
        self._conc_last_t = 0.0
        self.jobs_remaining = len(self.jobs)
        self.checkins = 0
        self.assignments = 0
        self.events = 0
        self.plan_recomputes = 0

        if cfg.scheduler == "venn":
            self.engine = _VennEngine(self)
        else:
            self.engine = _BaselineEngine(self, cfg.scheduler)

        self._heap: list[tuple] = []
        self._seq = 0

    # -- construction helpers

    def _build_trace(self) -> DeviceTrace:
        cfg = self.cfg
        if cfg.trace_file:
            from .workload import load_device_trace

            fmt = "csv" if cfg.trace_file.endswith(".csv") else "jsonl"
            with open(cfg.trace_file) as fh:
                return load_device_trace(fh, fmt=fmt)
        return synth_device_trace(
            n_devices=cfg.n_devices,
            horizon_s=cfg.horizon_s,
            diurnal_amplitude=cfg.diurnal_amplitude,
            capacity_mix=cfg.capacity_mix,
            seed=cfg.seed,
            sessions_per_day=cfg.sessions_per_day,
            session_mean_s=cfg.session_mean_s,
        )

    def _build_workload(self) -> list[JobSpec]:
        cfg = self.cfg
        if cfg.workload_file:
            from .workload import load_job_file

            fmt = "csv" if cfg.workload_file.endswith(".csv") else "jsonl"
            with open(cfg.workload_file) as fh:
                return load_job_file(fh, fmt=fmt)
        catalog = default_catalog(
            n=cfg.catalog_size,
            demand_range=(cfg.demand_lo, cfg.demand_hi),
            rounds_range=(cfg.rounds_lo, cfg.rounds_hi),
            deadline_range=(cfg.deadline_lo, cfg.deadline_hi),
            report_threshold=cfg.report_threshold,
            seed=cfg.catalog_seed,
        )
        scenario = WorkloadScenario(
            name=cfg.scenario, n_jobs=cfg.n_jobs,
            mean_interarrival_s=cfg.mean_interarrival_s, seed=cfg.seed,
        )
        return sample_workload(scenario, catalog)

    @property
    def matching_active(self) -> bool:
        return self.cfg.matching and self.cfg.tiers > 1

    def profile_for(self, rt: JobRuntime) -> matcher.JobProfile:
        if rt.profile is None:
            rt.profile = matcher.JobProfile(
                v=self.cfg.tiers, min_tier_samples=self.cfg.min_tier_samples
            )
        return rt.profile

    def build_fairness(self, outstanding, supply: SupplyEstimate, now: float) -> irs.FairnessState:
        """Usage-vs-entitlement inputs for the fairness adjustment.

        A job's time usage is the share of its contention-free completion
        estimate already delivered (completed rounds), so jobs and groups that
        have received little service relative to their fair-share target get
        boosted as the knob grows; wall-clock waiting alone never counts as
        usage.
        """
        usage = {}
        targets = {}
        m_now = max(self.active_jobs, 1)
        for item in outstanding:
            rt = self.runtimes[item.job_id]
            solo = self.solo_estimate(rt.job, supply)
            if math.isfinite(solo):
                targets[item.job_id] = m_now * solo
                # Usage saturates once a job has been served at all, so the
                # knob boosts never-served requests without perpetually
                # re-shuffling jobs that are mid-flight.
                usage[item.job_id] = solo if rt.rounds_done > 0 else 0.0
            else:
                targets[item.job_id] = math.inf
                usage[item.job_id] = 0.0
        return irs.FairnessState(
            epsilon=self.cfg.epsilon, elapsed=usage, fair_share=targets,
            floor=self.cfg.fairness_floor,
        )

    def solo_estimate(self, job: JobSpec, supply: SupplyEstimate) -> float:
        """Contention-free completion estimate: per round, demand over the
        job's full eligible rate plus the expected collection time."""
        rate = supply.rate_of(self.atoms.eligible_atoms(job.spec))
        if rate <= 0:
            return math.inf
        solo_round = job.round_demand / rate + self.model.expected_collect(
            job.report_threshold, self.mean_speed
        )
        return job.total_rounds * solo_round

    # -- event machinery

    def _push(self, t: float, kind: int, payload: tuple) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, kind, payload))

    def _check(self, cond: bool, message: str) -> None:
        if self.cfg.integrity_checks and not cond:
            raise SimulationIntegrityError(message)

    def run(self) -> MetricsReport:
        if self.jobs:
            for job in self.jobs:
                self._push(job.arrival_time, EV_JOB_ARRIVAL, (job.job_id,))
            for t, device_id in self.trace.checkin_times():
                if t <= self.horizon:
                    self._push(t, EV_CHECKIN, (device_id,))

        while self._heap and self.jobs_remaining > 0:
            t, _, kind, payload = heapq.heappop(self._heap)
            if t > self.horizon:
                break
            self.events += 1
            if kind == EV_CHECKIN:
                self._on_checkin(t, payload[0])
            elif kind == EV_JOB_ARRIVAL:
                self._on_job_arrival(t, payload[0])
            elif kind == EV_REQUEST_ISSUED:
                self._on_request_issued(t, *payload)
            elif kind == EV_RESPONSE:
                self._on_response(t, *payload)
            elif kind == EV_DEADLINE:
                self._on_deadline(t, *payload)
        return self._report()

    def _track_concurrency(self, t: float) -> None:
        self._conc_integral += self.active_jobs * (t - self._conc_last_t)
        self._conc_last_t = t

    def _on_job_arrival(self, t: float, job_id: str) -> None:
        job = self._jobs_by_id[job_id]
        self._track_concurrency(t)
        self.active_jobs += 1
        rt = JobRuntime(job=job, concurrent_at_arrival=self.active_jobs,
                        conc_integral_at_arrival=self._conc_integral)
        self.runtimes[job_id] = rt
        self.arrival_order.append(rt)
        self._issue_request(rt, round_index=0, t=t, incarnation=0)

    def _issue_request(self, rt: JobRuntime, round_index: int, t: float, incarnation: int) -> None:
        req = RoundRequest(
            job_id=rt.job.job_id,
            round_index=round_index,
            demand=rt.job.round_demand,
            issue_time=t,
            incarnation=incarnation,
        )
        rt.request = req
        rt.need = response_quorum(rt.job.report_threshold, req.demand)
        self.engine.on_request_issued(rt, t)

    def _on_request_issued(self, t: float, job_id: str, round_index: int, incarnation: int) -> None:
        # Reserved for externally injected request events; normal issuance is
        # inline so phases stay gap-free.
        rt = self.runtimes[job_id]
        self._issue_request(rt, round_index, t, incarnation)

    def _on_checkin(self, t: float, device_id: str) -> None:
        self.checkins += 1
        device = self.devices[device_id]
        if self.blocked_until.get(device_id, -math.inf) > t:
            return
        atom = self.atoms.atom_of(device_id)
        self.supply.record(t, atom)
        self.engine.prepare(t)
        job_id = self.engine.assign(device, atom, t)
        if job_id is None:
            return
        rt = self.runtimes[job_id]
        req = rt.request
        self._check(satisfies(device, rt.job.spec),
                    f"assignment violates eligibility: {device_id} -> {job_id}")
        self._check(req.state is RequestState.WAITING,
                    f"assignment to non-waiting request of {job_id}")
        self.assignments += 1
        self.blocked_until[device_id] = t + self.cfg.daily_limit_s
        if self.matching_active and self.cfg.scheduler == "venn":
            self.profile_for(rt).record_participant(device.capacity_score)
        duration = self.model.sample(device, self.rng_responses)
        if duration is not None:
            self._push(t + duration, EV_RESPONSE,
                       (job_id, req.round_index, req.incarnation, device.capacity_score, duration))
        if req.remaining_demand == 0:
            self._on_request_filled(rt, t)

    def _on_request_filled(self, rt: JobRuntime, t: float) -> None:
        req = rt.request
        req.state = RequestState.COLLECTING
        req.filled_time = t
        rt.cur_sched += t - req.issue_time
        self.engine.on_change()
        self._push(t + rt.job.deadline_seconds, EV_DEADLINE,
                   (rt.job.job_id, req.round_index, req.incarnation))
        if req.responses_received >= rt.need:
            self._succeed_round(rt, t)

    def _on_response(self, t: float, job_id: str, round_index: int, incarnation: int,
                     capacity: float, duration: float) -> None:
        rt = self.runtimes[job_id]
        req = rt.request
        if rt.completed or req is None:
            return
        if req.round_index != round_index or req.incarnation != incarnation:
            return  # stale response from an aborted or finished incarnation
        req.responses_received += 1
        if self.matching_active and self.cfg.scheduler == "venn":
            self.profile_for(rt).record_response(capacity, duration)
        if req.state is RequestState.COLLECTING and req.responses_received >= rt.need:
            self._succeed_round(rt, t)

    def _on_deadline(self, t: float, job_id: str, round_index: int, incarnation: int) -> None:
        rt = self.runtimes[job_id]
        req = rt.request
        if rt.completed or req is None:
            return
        if req.round_index != round_index or req.incarnation != incarnation:
            return
        if req.state is not RequestState.COLLECTING:
            return
        if req.responses_received >= rt.need:
            return
        # Abort: full deadline window counts as collection time, then reissue.
        req.state = RequestState.ABORTED
        rt.cur_collect += rt.job.deadline_seconds
        rt.cur_aborts += 1
        rt.aborts_total += 1
        if self.matching_active and self.cfg.scheduler == "venn":
            self.profile_for(rt).finish_round(self.cfg.base_task_s, self.cfg.response_sigma)
        self._issue_request(rt, round_index, t, incarnation + 1)

    def _succeed_round(self, rt: JobRuntime, t: float) -> None:
        req = rt.request
        self._check(req.responses_received >= rt.need,
                    f"round success below quorum for {rt.job.job_id}")
        req.state = RequestState.SUCCEEDED
        rt.cur_collect += t - req.filled_time
        rt.rounds.append(RoundRecord(
            round_index=req.round_index,
            sched_delay_s=rt.cur_sched,
            collect_s=rt.cur_collect,
            aborts=rt.cur_aborts,
        ))
        rt.cur_sched = rt.cur_collect = 0.0
        rt.cur_aborts = 0
        rt.rounds_done += 1
        if self.matching_active and self.cfg.scheduler == "venn":
            self.profile_for(rt).finish_round(self.cfg.base_task_s, self.cfg.response_sigma)
        if rt.rounds_done >= rt.job.total_rounds:
            self._complete_job(rt, t)
        else:
            self._issue_request(rt, rt.rounds_done, t, incarnation=0)
        self.engine.on_change()

    def _complete_job(self, rt: JobRuntime, t: float) -> None:
        rt.completion = t
        rt.request = None
        self._track_concurrency(t)
        lifetime = t - rt.job.arrival_time
        if lifetime > 0:
            mean_conc = (self._conc_integral - rt.conc_integral_at_arrival) / lifetime
        else:
            mean_conc = float(self.active_jobs)
        mean_conc = max(mean_conc, 1.0)
        solo = self.solo_estimate(rt.job, self.supply.estimate(t))
        rt.fair_share_s = mean_conc * solo
        self.active_jobs -= 1
        self.jobs_remaining -= 1
        jct = t - rt.job.arrival_time
        phase_sum = sum(r.sched_delay_s + r.collect_s for r in rt.rounds)
        self._check(math.isclose(jct, phase_sum, rel_tol=1e-9, abs_tol=1e-6),
                    f"phase accounting mismatch for {rt.job.job_id}: {jct} vs {phase_sum}")

    def _report(self) -> MetricsReport:
        jobs = []
        for rt in self.arrival_order:
            job = rt.job
            jct = (rt.completion - job.arrival_time) if rt.completed else None
            target = rt.fair_share_s
            meets = None
            if rt.completed:
                meets = bool(jct <= target)
            n_rounds = max(len(rt.rounds), 1)
            jobs.append(JobMetrics(
                job_id=job.job_id,
                spec_name=spec_label(job.spec),
                arrival_s=job.arrival_time,
                total_rounds=job.total_rounds,
                round_demand=job.round_demand,
                total_demand=job.total_demand,
                completed=rt.completed,
                jct_s=jct,
                rounds_done=rt.rounds_done,
                aborts=rt.aborts_total,
                avg_sched_delay_s=sum(r.sched_delay_s for r in rt.rounds) / n_rounds,
                avg_collect_s=sum(r.collect_s for r in rt.rounds) / n_rounds,
                fair_share_s=None if math.isinf(target) else target,
                meets_fair_share=meets,
            ))
        # Jobs that never arrived (horizon cut) still appear, uncompleted.
        seen = {m.job_id for m in jobs}
        for job in self.jobs:
            if job.job_id not in seen:
                jobs.append(JobMetrics(
                    job_id=job.job_id, spec_name=spec_label(job.spec),
                    arrival_s=job.arrival_time, total_rounds=job.total_rounds,
                    round_demand=job.round_demand, total_demand=job.total_demand,
                    completed=False, jct_s=None, rounds_done=0, aborts=0,
                    avg_sched_delay_s=0.0, avg_collect_s=0.0,
                    fair_share_s=None, meets_fair_share=None,
                ))
        return MetricsReport(
            scheduler=self.cfg.scheduler,
            seed=self.cfg.seed,
            config=asdict(self.cfg),
            jobs=jobs,
            checkins=self.checkins,
            assignments=self.assignments,
            events=self.events,
            plan_recomputes=self.plan_recomputes,
        )


def run(cfg: SimConfig, trace: Optional[DeviceTrace] = None,
        jobs: Optional[Sequence[JobSpec]] = None) -> MetricsReport:
    """Run one simulation; identical config and seed give identical reports."""
    return Simulation(cfg, trace=trace, jobs=jobs).run()


# ---------------------------------------------------------------------------
# Aggregation across runs


@dataclass
class ComparisonTable:
    baseline: str
    scenario: str
    seeds: list[int]
    avg_jct: dict[str, float]              # scheduler -> mean avg JCT
    speedup: dict[str, float]              # scheduler -> baseline/scheduler
    demand_buckets: dict[str, dict[str, float]]   # scheduler -> bucket -> speedup
    spec_buckets: dict[str, dict[str, float]]     # scheduler -> spec name -> speedup
    fairness: dict[str, float]             # scheduler -> mean fairness ratio
    incomplete: dict[str, int]

    def rows(self) -> list[dict]:
        out = []
        for sched in sorted(self.avg_jct):
            out.append({
                "scenario": self.scenario,
                "scheduler": sched,
                "avg_jct_s": self.avg_jct[sched],
                f"speedup_vs_{self.baseline}": self.speedup[sched],
                "fairness_ratio": self.fairness[sched],
                "incomplete_jobs": self.incomplete[sched],
            })
        return out


def _bucket_edges(demands: list[int]) -> list[float]:
    if not demands:
        return [0.0, 0.0, 0.0]
    return statistics.quantiles(demands, n=4, method="inclusive")


def _bucket_of(demand: int, edges: list[float]) -> str:
    if demand <= edges[0]:
        return "p25"
    if demand <= edges[1]:
        return "p50"
    if demand <= edges[2]:
        return "p75"
    return "p100"


def aggregate(reports: Sequence[MetricsReport], baseline: str = "random") -> ComparisonTable:
    """Cross-scheduler comparison over runs sharing one workload.

    Speedups are ratios of seed-mean average JCTs; breakdowns partition jobs
    by total-demand quartile and by eligibility spec.
    """
    if not reports:
        raise MismatchedRuns("no reports to aggregate")
    prints = {tuple(SimConfig(**{**r.config}).workload_fingerprint()[1:]) for r in reports}
    if len(prints) != 1:
        raise MismatchedRuns("runs do not share a workload configuration")
    by_sched: dict[str, list[MetricsReport]] = {}
    for r in reports:
        by_sched.setdefault(r.scheduler, []).append(r)
    if baseline not in by_sched:
        raise MismatchedRuns(f"baseline scheduler {baseline!r} missing from runs")
    seed_sets = {s: sorted(r.seed for r in runs) for s, runs in by_sched.items()}
    if len(set(map(tuple, seed_sets.values()))) != 1:
        raise MismatchedRuns(f"schedulers ran different seed sets: {seed_sets}")

    sample = by_sched[baseline][0]
    edges = _bucket_edges([j.total_demand for j in sample.jobs])
    scenario = sample.config.get("scenario", "?")

    def mean_jct(runs: list[MetricsReport], pred=None) -> float:
        vals = []
        for r in runs:
            sel = [j.jct_s for j in r.completed_jobs if pred is None or pred(j)]
            if sel:
                vals.append(sum(sel) / len(sel))
        return sum(vals) / len(vals) if vals else math.nan

    avg_jct = {s: mean_jct(runs) for s, runs in by_sched.items()}
    base_avg = avg_jct[baseline]
    speedup = {s: (base_avg / v if v and not math.isnan(v) else math.nan) for s, v in avg_jct.items()}

    demand_buckets: dict[str, dict[str, float]] = {}
    spec_buckets: dict[str, dict[str, float]] = {}
    for s, runs in by_sched.items():
        demand_buckets[s] = {}
        for bucket in ("p25", "p50", "p75", "p100"):
            base = mean_jct(by_sched[baseline], lambda j, b=bucket: _bucket_of(j.total_demand, edges) == b)
            mine = mean_jct(runs, lambda j, b=bucket: _bucket_of(j.total_demand, edges) == b)
            demand_buckets[s][bucket] = base / mine if mine and not math.isnan(mine) else math.nan
        spec_buckets[s] = {}
        for name in sorted({j.spec_name for j in sample.jobs}):
            base = mean_jct(by_sched[baseline], lambda j, n=name: j.spec_name == n)
            mine = mean_jct(runs, lambda j, n=name: j.spec_name == n)
            spec_buckets[s][name] = base / mine if mine and not math.isnan(mine) else math.nan

    fairness = {
        s: sum(r.fairness_ratio for r in runs) / len(runs) for s, runs in by_sched.items()
    }
    incomplete = {
        s: sum(len(r.jobs) - len(r.completed_jobs) for r in runs) for s, runs in by_sched.items()
    }
    return ComparisonTable(
        baseline=baseline,
        scenario=scenario,
        seeds=seed_sets[baseline],
        avg_jct=avg_jct,
        speedup=speedup,
        demand_buckets=demand_buckets,
        spec_buckets=spec_buckets,
        fairness=fairness,
        incomplete=incomplete,
    )


# ---------------------------------------------------------------------------
# Deterministic-arrival replay of exact instances (scheduling delay only)


@dataclass
class ReplayResult:
    fill_times: dict[str, Optional[float]]
    average_delay: float
    completed: bool


def replay_instance(instance: ExactInstance, policy: str = "venn", seed: int = 0) -> ReplayResult:
    """Drive a scheduler over an exact instance's device arrivals.

    Jobs all arrive at time 0 with single-round demands; a job's delay is the
    arrival time of its last assigned device, matching the exact solver's
    objective. The intersection scheduler is primed with the instance's true
    per-class arrival rates (constant-rate setting).
    """
    q, m = instance.n_devices, instance.n_jobs
    columns = [tuple(instance.eligibility[i][j] for i in range(q)) for j in range(m)]
    distinct = sorted(set(columns), reverse=True)
    col_tag = {col: f"g{k}" for k, col in enumerate(distinct)}
    specs = {col: EligibilitySpec(required_tags=frozenset({col_tag[col]})) for col in distinct}

    devices = []
    for i in range(q):
        tags = set()
        for col in distinct:
            js = [j for j in range(m) if columns[j] == col]
            if js and instance.eligibility[i][js[0]]:
                tags.add(col_tag[col])
        devices.append(DeviceProfile(device_id=f"s{i:04d}", cpu_score=1.0, memory_gb=1.0,
                                     tags=frozenset(tags)))

    width = max(2, len(str(m)))
    jobs = [
        JobSpec(
            job_id=f"J{j:0{width}d}",
            arrival_time=0.0,
            total_rounds=1,
            round_demand=instance.demands[j],
            spec=specs[columns[j]],
            report_threshold=1.0,
            deadline_seconds=1.0,
        )
        for j in range(m)
    ]
    requests = {
        job.job_id: RoundRequest(job_id=job.job_id, round_index=0,
                                 demand=job.round_demand, issue_time=0.0)
        for job in jobs
    }
    fills: dict[str, Optional[float]] = {job.job_id: None for job in jobs}
    arrivals = sorted(range(q), key=lambda i: (instance.arrival_times[i], i))

    if policy == "venn":
        table = AtomTable(list(specs.values()))
        for dev in devices:
            table.classify(dev)
        span = max(instance.arrival_times) or 1.0
        counts: dict[int, int] = {}
        for dev in devices:
            a = table.atom_of(dev.device_id)
            counts[a] = counts.get(a, 0) + 1
        supply = SupplyEstimate(
            rates={a: c / span for a, c in sorted(counts.items())}, window_s=span, as_of=0.0
        )
        plan: Optional[irs.AllocationPlan] = None
        dirty = True
        generation = 0
        for i in arrivals:
            t = instance.arrival_times[i]
            if all(v is not None for v in fills.values()):
                break
            if dirty or plan is None or plan.needs_recompute:
                outstanding = [
                    OutstandingJob(job=job, request=requests[job.job_id])
                    for job in jobs
                    if requests[job.job_id].remaining_demand > 0
                ]
                groups = group_jobs(outstanding, table, supply.rates)
                generation += 1
                plan = irs.schedule(groups, supply, generation=generation,
                                    known_atoms=frozenset(range(len(table))))
                dirty = False
            job_id = irs.assign_device(plan, devices[i], table.atom_of(devices[i].device_id))
            if job_id is not None and requests[job_id].remaining_demand == 0:
                fills[job_id] = t
                requests[job_id].state = RequestState.COLLECTING
    else:
        queue = RequestQueue(policy, rng=rng_stream(seed, "baseline"))
        for job in jobs:
            queue.add(job, requests[job.job_id])
        for i in arrivals:
            t = instance.arrival_times[i]
            if all(v is not None for v in fills.values()):
                break
            job_id = queue.assign(devices[i])
            if job_id is not None and requests[job_id].remaining_demand == 0:
                fills[job_id] = t

    completed = all(v is not None for v in fills.values())
    avg = sum(v for v in fills.values() if v is not None) / m if completed else math.inf
    return ReplayResult(fill_times=fills, average_delay=avg, completed=completed)
