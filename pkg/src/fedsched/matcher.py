"""Capacity-tier device-to-job matching.

A served job's eligible devices are split into equal-population capacity
tiers. Restricting the job to one tier multiplies its expected scheduling
delay by the tier count but shrinks its tail response time by the tier's
speedup factor, so the restriction is applied only when the modeled
completion time goes down: tiers + g_u * c < c + 1, where c is the job's
response-collection-to-scheduling-delay ratio.
"""
from __future__ import annotations

import math
import random
import statistics
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Optional, Sequence

P95 = 0.95
EMA_WEIGHT = 0.5  # per-round blend of fresh tier estimates into the profile


class InsufficientSamples(ValueError):
    pass


def percentile(samples: Sequence[float], q: float = P95) -> float:
    """Empirical quantile: value at index ceil(q*n)-1 of the sorted sample."""
    if not samples:
        raise InsufficientSamples("no samples")
    ordered = sorted(samples)
    idx = max(0, math.ceil(q * len(ordered)) - 1)
    return ordered[idx]


def build_tiers(capacity_samples: Sequence[float], v: int) -> list[float]:
    """Tier thresholds at the k/V quantiles of the capacity sample, k=1..V-1.

    V = 1 yields no thresholds (untiered). Raises InsufficientSamples when
    the sample is smaller than V. Degenerate (non-ascending) thresholds mean
    the capacity distribution cannot support V tiers; callers should disable
    matching for that job.
    """
    if v < 1:
        raise ValueError("tier count must be >= 1")
    if v == 1:
        return []
    if len(capacity_samples) < v:
        raise InsufficientSamples(f"need at least {v} capacity samples, got {len(capacity_samples)}")
    return statistics.quantiles(capacity_samples, n=v, method="inclusive")


def thresholds_degenerate(thresholds: Sequence[float]) -> bool:
    return any(b <= a for a, b in zip(thresholds, thresholds[1:]))


@dataclass
class TierTable:
    """Tier partition plus per-tier tail-latency speedups.

    Tier 0 holds the fastest (highest-capacity) devices; speedups satisfy
    g_0 <= g_1 <= ... <= g_{V-1} with g measured against the untiered
    95th-percentile response time.
    """

    v: int
    thresholds: list[float]
    g: list[float]
    t_tier: list[float]
    t_untiered: float

    def tier_of(self, capacity_score: float) -> int:
        return self.v - 1 - bisect_right(self.thresholds, capacity_score)


def estimate_speedups(
    tier_samples: Sequence[Sequence[float]],
    min_samples: int = 20,
    fallback_t: Optional[Sequence[float]] = None,
) -> tuple[list[float], list[float], float]:
    """Per-tier speedups g_v = t_v / t_untiered from 95th percentiles.

    Tiers with fewer than ``min_samples`` responses fall back to the supplied
    analytic estimates; with no fallback available InsufficientSamples is
    raised. Returns (g, t_tier, t_untiered).
    """
    v = len(tier_samples)
    if v == 0:
        raise ValueError("need at least one tier")
    pooled = [x for tier in tier_samples for x in tier]
    t_tier: list[float] = []
    for i, tier in enumerate(tier_samples):
        if len(tier) >= min_samples:
            t_tier.append(percentile(tier))
        elif fallback_t is not None:
            t_tier.append(float(fallback_t[i]))
        else:
            raise InsufficientSamples(f"tier {i} has {len(tier)} samples (< {min_samples})")
    if len(pooled) >= min_samples:
        t0 = percentile(pooled)
    elif fallback_t is not None:
        t0 = max(float(t) for t in fallback_t)
    else:
        raise InsufficientSamples("untiered pool too small")
    if t0 <= 0:
        return [1.0] * v, t_tier, t0
    return [t / t0 for t in t_tier], t_tier, t0


def analytic_tier_p95(
    thresholds: Sequence[float],
    capacity_floor: float,
    base_task_s: float,
    sigma: float,
) -> tuple[list[float], float]:
    """Seed per-tier p95 estimates from the log-normal response model.

    A tier's tail is dominated by its slowest devices, so each tier's p95 is
    modeled at the speed of its lower capacity bound; the untiered p95 uses
    the population's slowest capacity.
    """
    z95 = statistics.NormalDist().inv_cdf(P95)
    quantile_mult = math.exp(sigma * z95)
    v = len(thresholds) + 1
    floor = max(capacity_floor, 1e-9)
    # Lower capacity bound per tier, fastest (tier 0) first.
    bounds = [thresholds[-1 - i] if i < len(thresholds) else floor for i in range(v)]
    t_tier = [base_task_s * (1.0 / max(b, 1e-9)) * quantile_mult for b in bounds]
    t0 = base_task_s * (1.0 / floor) * quantile_mult
    return t_tier, t0


def estimate_c(t_response: float, remaining_demand: float, alloc_rate: float) -> float:
    """Collection-to-scheduling ratio; +inf signals no supply (no restriction)."""
    if alloc_rate <= 0:
        return math.inf
    t_schedule = remaining_demand / alloc_rate
    if t_schedule <= 0:
        return math.inf
    return t_response / t_schedule


def match(c_i: float, tiers: TierTable, rng: random.Random, rotation_index: Optional[int] = None) -> Optional[int]:
    """Pick a uniformly random tier and restrict only when it pays off.

    Returns the tier index, or None for no restriction. ``rotation_index``
    replaces the random draw with round-robin tier selection.
    """
    if tiers.v <= 1:
        return None
    if rotation_index is not None:
        u = rotation_index % tiers.v
    else:
        u = rng.randrange(tiers.v)
    if not math.isfinite(c_i):
        return None
    if tiers.v + tiers.g[u] * c_i < c_i + 1.0:
        return u
    return None


@dataclass
class JobProfile:
    """Per-job profiling state feeding tier construction and speedup estimates.

    Capacity scores and response times of past participants accumulate per
    round; per-tier p95 estimates blend fresh data into analytic seeds with an
    exponential moving average.
    """

    v: int
    min_tier_samples: int = 20
    max_capacity_samples: int = 20000
    capacity_samples: list[float] = field(default_factory=list)
    served_rounds: int = 0
    t_tier: Optional[list[float]] = None
    t_untiered: Optional[float] = None
    _pending: list[tuple[float, float]] = field(default_factory=list)

    def record_response(self, capacity_score: float, response_s: float) -> None:
        self._pending.append((capacity_score, response_s))

    def record_participant(self, capacity_score: float) -> None:
        self.capacity_samples.append(capacity_score)
        if len(self.capacity_samples) > self.max_capacity_samples:
            del self.capacity_samples[: -self.max_capacity_samples]

    @property
    def profiled(self) -> bool:
        return self.served_rounds > 0 and len(self.capacity_samples) >= self.v

    def finish_round(self, base_task_s: float, sigma: float) -> None:
        """Fold this round's responses into the tier estimates."""
        responses = self._pending
        self._pending = []
        self.served_rounds += 1
        if not responses or len(self.capacity_samples) < self.v:
            return
        try:
            thresholds = build_tiers(self.capacity_samples, self.v)
        except InsufficientSamples:
            return
        if thresholds and thresholds_degenerate(thresholds):
            return
        seeds, seed_t0 = analytic_tier_p95(
            thresholds, min(self.capacity_samples), base_task_s, sigma
        )
        buckets: list[list[float]] = [[] for _ in range(self.v)]
        table = TierTable(v=self.v, thresholds=thresholds, g=[1.0] * self.v,
                          t_tier=seeds, t_untiered=seed_t0)
        for cap, rt in responses:
            buckets[table.tier_of(cap)].append(rt)
        prior_t = self.t_tier if self.t_tier is not None else seeds
        fresh_t, fresh_t0 = [], None
        for i, bucket in enumerate(buckets):
            if len(bucket) >= self.min_tier_samples:
                fresh_t.append(percentile(bucket))
            else:
                fresh_t.append(prior_t[i] if i < len(prior_t) else seeds[i])
        pooled = [rt for _, rt in responses]
        if len(pooled) >= self.min_tier_samples:
            fresh_t0 = percentile(pooled)
        if self.t_tier is None:
            self.t_tier = fresh_t
            self.t_untiered = fresh_t0 if fresh_t0 is not None else seed_t0
        else:
            self.t_tier = [
                (1 - EMA_WEIGHT) * old + EMA_WEIGHT * new
                for old, new in zip(self.t_tier, fresh_t)
            ]
            if fresh_t0 is not None:
                self.t_untiered = (1 - EMA_WEIGHT) * self.t_untiered + EMA_WEIGHT * fresh_t0

    def tier_table(self, base_task_s: float, sigma: float) -> Optional[TierTable]:
        """Current tier table, or None when tiering is unusable for this job."""
        if self.v <= 1 or not self.profiled:
            return None
        try:
            thresholds = build_tiers(self.capacity_samples, self.v)
        except InsufficientSamples:
            return None
        if thresholds and thresholds_degenerate(thresholds):
            return None
        seeds, seed_t0 = analytic_tier_p95(
            thresholds, min(self.capacity_samples), base_task_s, sigma
        )
        t_tier = self.t_tier if self.t_tier is not None else seeds
        t0 = self.t_untiered if self.t_untiered is not None else seed_t0
        if t0 is None or t0 <= 0:
            return None
        g = [t / t0 for t in t_tier]
        # Estimation noise can locally invert the capacity ordering; repair to
        # keep faster tiers at no-worse speedups.
        for i in range(1, len(g)):
            g[i] = max(g[i], g[i - 1])
        return TierTable(v=self.v, thresholds=thresholds, g=g, t_tier=list(t_tier), t_untiered=t0)
