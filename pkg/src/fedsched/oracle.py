"""Exact solvers used to verify the heuristic scheduler.

``solve_exact`` minimizes the average scheduling delay of a small
eligibility-constrained assignment instance by branch and bound over devices
in arrival order, with memoization on (device index, remaining demands) and
an admissible bound from per-job best-case completions. ``pairwise_delta_t``
is the closed-form two-group prioritization rule.
"""
from __future__ import annotations

import itertools
import json
import math
import random
from dataclasses import dataclass
from typing import IO, Optional, Sequence

DEFAULT_DEVICE_CAP = 14
DEFAULT_JOB_CAP = 4
SIGN_EPS = 1e-9


class Infeasible(Exception):
    pass


class InstanceTooLarge(Exception):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class ExactInstance:
    """Devices arriving at fixed times, a 0/1 eligibility matrix, and demands."""

    arrival_times: tuple[float, ...]
    eligibility: tuple[tuple[int, ...], ...]  # [device][job]
    demands: tuple[int, ...]

    def __post_init__(self) -> None:
        q, m = len(self.arrival_times), len(self.demands)
        if len(self.eligibility) != q or any(len(row) != m for row in self.eligibility):
            raise ValueError("eligibility matrix shape must be (devices, jobs)")
        if any(d < 1 for d in self.demands):
            raise ValueError("demands must be >= 1")
        if any(e not in (0, 1) for row in self.eligibility for e in row):
            raise ValueError("eligibility entries must be 0 or 1")

    @property
    def n_devices(self) -> int:
        return len(self.arrival_times)

    @property
    def n_jobs(self) -> int:
        return len(self.demands)

    def to_json(self) -> str:
        return json.dumps(
            {"t": list(self.arrival_times), "e": [list(r) for r in self.eligibility],
             "d": list(self.demands)}
        )

    @classmethod
    def from_json(cls, text: str) -> "ExactInstance":
        rec = json.loads(text)
        return cls(
            arrival_times=tuple(float(t) for t in rec["t"]),
            eligibility=tuple(tuple(int(e) for e in row) for row in rec["e"]),
            demands=tuple(int(d) for d in rec["d"]),
        )


def is_feasible(instance: ExactInstance) -> bool:
    """Hall-style check: every job subset has enough jointly eligible devices."""
    m = instance.n_jobs
    for mask in range(1, 1 << m):
        need = sum(d for j, d in enumerate(instance.demands) if mask >> j & 1)
        have = sum(
            1 for row in instance.eligibility if any(row[j] and mask >> j & 1 for j in range(m))
        )
        if have < need:
            return False
    return True


@dataclass
class ExactSolution:
    assignment: list[Optional[int]]  # device index -> job index or None
    delays: list[float]              # per-job completion (last needed device) time
    average_delay: float


def solve_exact(
    instance: ExactInstance,
    device_cap: int = DEFAULT_DEVICE_CAP,
    job_cap: int = DEFAULT_JOB_CAP,
) -> ExactSolution:
    """Provably optimal assignment minimizing the average scheduling delay.

    Devices are considered in arrival order; each is assigned to one eligible
    job with unmet demand or skipped. A job's delay is the arrival time of the
    last device it receives. Ties between optimal assignments are broken by
    preferring lower job indices device-by-device, so output is deterministic.
    """
    q, m = instance.n_devices, instance.n_jobs
    if q > device_cap or m > job_cap:
        raise InstanceTooLarge(f"instance ({q} devices, {m} jobs) exceeds caps ({device_cap}, {job_cap})")
    if not is_feasible(instance):
        raise Infeasible("some job subset lacks enough jointly eligible devices")

    order = sorted(range(q), key=lambda i: (instance.arrival_times[i], i))
    times = [instance.arrival_times[i] for i in order]
    elig = [instance.eligibility[i] for i in order]

    # eligible_after[i][j]: arrival times (ascending) of devices >= position i
    # eligible for job j; used for the admissible completion-time bound.
    eligible_after: list[list[list[float]]] = [[[] for _ in range(m)] for _ in range(q + 1)]
    for i in range(q - 1, -1, -1):
        for j in range(m):
            nxt = eligible_after[i + 1][j]
            eligible_after[i][j] = ([times[i]] + nxt) if elig[i][j] else nxt

    memo: dict[tuple[int, tuple[int, ...]], float] = {}

    def lower_bound(pos: int, remaining: tuple[int, ...]) -> float:
        total = 0.0
        for j, r in enumerate(remaining):
            if r == 0:
                continue
            tail = eligible_after[pos][j]
            if len(tail) < r:
                return math.inf
            total += tail[r - 1]
        return total

    def search(pos: int, remaining: tuple[int, ...]) -> float:
        """Minimal sum of completion times of still-unmet jobs from ``pos`` on."""
        if all(r == 0 for r in remaining):
            return 0.0
        key = (pos, remaining)
        cached = memo.get(key)
        if cached is not None:
            return cached
        if pos >= q:
            memo[key] = math.inf
            return math.inf
        bound = lower_bound(pos, remaining)
        if not math.isfinite(bound):
            memo[key] = math.inf
            return math.inf
        best = math.inf
        for j in range(m):
            if remaining[j] > 0 and elig[pos][j]:
                nxt = tuple(
                    r - 1 if jj == j else r for jj, r in enumerate(remaining)
                )
                finish = times[pos] if nxt[j] == 0 else 0.0
                if finish + lower_bound(pos + 1, nxt) >= best:
                    continue
                cost = finish + search(pos + 1, nxt)
                if cost < best:
                    best = cost
        if lower_bound(pos + 1, remaining) < best:
            skip = search(pos + 1, remaining)
            if skip < best:
                best = skip
        memo[key] = best
        return best

    total = search(0, instance.demands)
    if not math.isfinite(total):
        raise Infeasible("no assignment satisfies all demands")

    # Reconstruct: at each device take the first choice (jobs ascending, then
    # skip) achieving the memoized optimum.
    assignment_sorted: list[Optional[int]] = [None] * q
    delays = [0.0] * m
    remaining = list(instance.demands)
    pos = 0
    while not all(r == 0 for r in remaining):
        state = tuple(remaining)
        target = search(pos, state)
        chosen = None
        for j in range(m):
            if remaining[j] > 0 and elig[pos][j]:
                nxt = list(remaining)
                nxt[j] -= 1
                finish = times[pos] if nxt[j] == 0 else 0.0
                if math.isclose(finish + search(pos + 1, tuple(nxt)), target, rel_tol=0.0, abs_tol=1e-12):
                    chosen = j
                    break
        if chosen is not None:
            assignment_sorted[pos] = chosen
            remaining[chosen] -= 1
            if remaining[chosen] == 0:
                delays[chosen] = times[pos]
        pos += 1

    assignment: list[Optional[int]] = [None] * q
    for sorted_pos, orig_idx in enumerate(order):
        assignment[orig_idx] = assignment_sorted[sorted_pos]
    return ExactSolution(assignment=assignment, delays=delays, average_delay=total / m)


def brute_force_exact(instance: ExactInstance) -> float:
    """Independent oracle for the oracle: full enumeration of assignments."""
    q, m = instance.n_devices, instance.n_jobs
    best = math.inf
    for combo in itertools.product(range(m + 1), repeat=q):  # m = skip
        remaining = list(instance.demands)
        delays = [0.0] * m
        ok = True
        for i, choice in enumerate(combo):
            if choice == m:
                continue
            if not instance.eligibility[i][choice] or remaining[choice] == 0:
                ok = False
                break
            remaining[choice] -= 1
            if remaining[choice] == 0:
                delays[choice] = max(delays[choice], instance.arrival_times[i])
        if ok and all(r == 0 for r in remaining):
            best = min(best, sum(delays) / m)
    if not math.isfinite(best):
        raise Infeasible("no feasible assignment found by enumeration")
    return best


@dataclass(frozen=True)
class DeltaT:
    delta_t: float
    prioritize_a: bool


def pairwise_delta_t(l: float, x: float, m_a: float, m_b: float) -> DeltaT:
    """Queuing-delay difference if group A's head job (demand ``l``) preempts
    group B on the shared device fraction ``x``.

    Negative delta means prioritizing A lowers total queuing delay, which is
    algebraically the ratio rule m_a/(1-x) > m_b/x; the equivalence is
    asserted on every call (up to float noise near the boundary).
    """
    if not 0.0 < x < 1.0:
        raise DomainError(f"shared fraction x must be in (0, 1), got {x}")
    if l <= 0:
        raise DomainError(f"head-job demand must be > 0, got {l}")
    if m_a < 0 or m_b < 0:
        raise DomainError("queue lengths must be >= 0")
    delta = l * m_b - (l / (1.0 - x) - l) * m_a
    prioritize = delta < 0
    ratio_rule = m_a / (1.0 - x) > m_b / x
    scale = abs(l) * (m_a + m_b + 1.0)
    assert prioritize == ratio_rule or abs(delta) <= SIGN_EPS * scale, (
        f"sign rule mismatch: delta={delta}, ratio_rule={ratio_rule}"
    )
    return DeltaT(delta_t=delta, prioritize_a=prioritize)


def random_instance(
    rng: random.Random,
    max_devices: int = 10,
    max_jobs: int = 4,
    max_demand: int = 2,
    demand_budget_frac: float = 0.4,
) -> ExactInstance:
    """Random feasible instance with nested/overlapping eligibility via tags.

    Total demand stays a modest fraction of the device count so the heuristic
    has supply headroom, mirroring its continuous-arrival setting.
    """
    tag_patterns = [frozenset(), frozenset("a"), frozenset("b"), frozenset("ab")]
    while True:
        m = rng.randint(2, max_jobs)
        q = rng.randint(max(6, max_devices - 2), max_devices)
        job_tags = [rng.choice(tag_patterns) for _ in range(m)]
        device_tags = []
        for _ in range(q):
            tags = set()
            if rng.random() < 0.55:
                tags.add("a")
            if rng.random() < 0.45:
                tags.add("b")
            device_tags.append(frozenset(tags))
        elig = tuple(
            tuple(1 if job_tags[j] <= device_tags[i] else 0 for j in range(m))
            for i in range(q)
        )
        budget = max(m, int(q * demand_budget_frac))
        demands = []
        left = budget
        for j in range(m):
            hi = min(max_demand, left - (m - 1 - j))
            d = rng.randint(1, max(1, hi))
            demands.append(d)
            left -= d
        times = tuple(float(t) for t in sorted(rng.randint(1, 5 * q) for _ in range(q)))
        inst = ExactInstance(arrival_times=times, eligibility=elig, demands=tuple(demands))
        if is_feasible(inst):
            return inst


def load_instances(source: IO) -> list[ExactInstance]:
    instances = []
    for line in source:
        if isinstance(line, bytes):
            line = line.decode()
        line = line.strip()
        if line:
            instances.append(ExactInstance.from_json(line))
    return instances
