"""Intersection-aware job-group scheduler.

Builds an allocation plan in three passes: (1) each group's job queue is
sorted ascending by fairness-adjusted remaining demand, (2) atoms are handed
out scarcest-group-first so no atom is shared, (3) groups with more abundant
eligible supply greedily absorb intersected atoms from scarcer groups when
their jobs-per-supply ratio is higher. Checked-in devices are then assigned
against the plan head, honoring tier restrictions from the matcher.

Set sizes are eligible supply rates (devices/second), not instantaneous
device counts, so the plan stays stable across diurnal supply swings.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

from .core import DeviceProfile, EligibilitySpec, JobGroup, UnknownAtom
from .workload import SupplyEstimate

RATIO_FLOOR = 1e-6  # floor on elapsed/fair-share ratios at job arrival


@dataclass
class FairnessState:
    """Inputs of the fairness adjustment.

    ``elapsed`` maps job_id to time since arrival; ``fair_share`` maps job_id
    to its fair-share target (concurrent jobs x estimated contention-free
    completion time). With ``epsilon`` 0 the adjustment is the identity.
    """

    epsilon: float = 0.0
    elapsed: dict[str, float] = field(default_factory=dict)
    fair_share: dict[str, float] = field(default_factory=dict)
    floor: float = RATIO_FLOOR

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


def apply_fairness(
    jobs: Sequence, groups: Sequence[JobGroup], fairness: Optional[FairnessState],
    total_remaining: bool = False,
) -> tuple[dict[str, float], dict[EligibilitySpec, float]]:
    """Fairness-adjusted per-job demands and per-group queue lengths.

    demand' = demand * (elapsed/target)^epsilon, queue' = queue *
    (sum targets / sum elapsed)^epsilon. Ratios are floored so a job at its
    arrival instant keeps a nonzero adjusted demand.
    """
    def raw_demand(item) -> float:
        # OutstandingJob carries live request state; bare JobSpec items fall
        # back to their static per-round demand.
        if total_remaining:
            value = getattr(item, "total_remaining_demand", None)
            if value is None:
                value = getattr(item, "total_demand", item.round_demand)
            return float(value)
        value = getattr(item, "remaining_demand", None)
        if value is None:
            value = item.round_demand
        return float(value)

    if fairness is None or fairness.epsilon == 0.0:
        demands = {item.job_id: raw_demand(item) for item in jobs}
        queues = {g.spec: float(len(g.jobs)) for g in groups}
        return demands, queues

    eps = fairness.epsilon
    floor = fairness.floor
    demands = {}
    for item in jobs:
        t_i = fairness.elapsed.get(item.job_id, 0.0)
        target = fairness.fair_share.get(item.job_id, math.inf)
        if target <= 0:
            raise ValueError(f"fair-share target for {item.job_id} must be > 0")
        ratio = t_i / target if math.isfinite(target) and t_i > 0 else 0.0
        ratio = max(ratio, floor)
        demands[item.job_id] = raw_demand(item) * ratio ** eps
    queues = {}
    for g in groups:
        sum_t = sum(fairness.elapsed.get(item.job_id, 0.0) for item in g.jobs)
        sum_target = 0.0
        for item in g.jobs:
            target = fairness.fair_share.get(item.job_id, math.inf)
            if not math.isfinite(target):
                sum_target = math.inf
                break
            sum_target += target
        if sum_target <= 0:
            ratio = 1.0
        elif sum_t <= 0 or not math.isfinite(sum_target):
            ratio = 1.0 / floor
        else:
            ratio = min(sum_target / sum_t, 1.0 / floor)
        queues[g.spec] = float(len(g.jobs)) * ratio ** eps
    return demands, queues


def intra_group_order(
    group: JobGroup,
    fairness: Optional[FairnessState] = None,
    adjusted_demands: Optional[Mapping[str, float]] = None,
    total_remaining: bool = False,
) -> list:
    """Group jobs ascending by adjusted remaining demand, ties by job_id."""
    if adjusted_demands is None:
        adjusted_demands, _ = apply_fairness(group.jobs, [group], fairness, total_remaining)
    return sorted(group.jobs, key=lambda item: (adjusted_demands[item.job_id], item.job_id))


def get_queue_len(
    group_j: JobGroup,
    group_k: JobGroup,
    adjusted_queues: Mapping[EligibilitySpec, float],
) -> tuple[float, float]:
    """Fairness-adjusted queue lengths used by the inter-group ratio test."""
    return adjusted_queues[group_j.spec], adjusted_queues[group_k.spec]


@dataclass
class JobClaim:
    job_id: str
    request: object  # RoundRequest; remaining_demand is decremented in place
    tier: Optional[int] = None
    tier_table: Optional[object] = None  # matcher.TierTable when restricted


@dataclass
class GroupAllocation:
    spec: EligibilitySpec
    eligible_atoms: frozenset[int]
    atoms: frozenset[int]
    full_rate: float
    alloc_rate: float
    claims: list[JobClaim]

    @property
    def head(self) -> Optional[JobClaim]:
        return self.claims[0] if self.claims else None


@dataclass
class AllocationPlan:
    generation: int = 0
    groups: list[GroupAllocation] = field(default_factory=list)
    atom_owner: dict[int, int] = field(default_factory=dict)  # atom -> index in groups
    known_atoms: frozenset[int] = frozenset()
    pair_checks: int = 0
    needs_recompute: bool = False

    def owner_of(self, atom_id: int) -> Optional[GroupAllocation]:
        idx = self.atom_owner.get(atom_id)
        return self.groups[idx] if idx is not None else None


def _ratio(queue_len: float, rate: float) -> float:
    if rate > 0:
        return queue_len / rate
    return math.inf if queue_len > 0 else 0.0


def schedule(
    groups: Sequence[JobGroup],
    supply: SupplyEstimate,
    fairness: Optional[FairnessState] = None,
    matcher_decide: Optional[Callable] = None,
    total_remaining: bool = False,
    generation: int = 0,
    known_atoms: Optional[frozenset[int]] = None,
) -> AllocationPlan:
    """Compute the allocation plan for the current outstanding job groups.

    ``matcher_decide(head_item, atoms, alloc_rate)`` may return a
    ``(tier, tier_table)`` restriction for the head job of a served group.
    ``known_atoms`` is the atom-id universe used to reject foreign atom ids at
    assignment time; it defaults to the atoms visible in groups and supply.
    """
    if known_atoms is None:
        known_atoms = frozenset(a for g in groups for a in g.eligible_atoms) | frozenset(supply.rates)
    plan = AllocationPlan(generation=generation, known_atoms=known_atoms)
    if not groups:
        return plan

    all_jobs = [item for g in groups for item in g.jobs]
    adj_demands, adj_queues = apply_fairness(all_jobs, groups, fairness, total_remaining)

    rate_of = supply.rate_of
    full_rates = {g.spec: rate_of(g.eligible_atoms) for g in groups}

    # Initial allocation: scarcest eligible supply first, no sharing.
    unclaimed = set(a for g in groups for a in g.eligible_atoms)
    alloc: dict[EligibilitySpec, set[int]] = {}
    for g in sorted(groups, key=lambda g: (full_rates[g.spec], g.sort_key())):
        taken = unclaimed & g.eligible_atoms
        alloc[g.spec] = set(taken)
        unclaimed -= taken

    # Reallocation: abundant groups absorb intersected atoms from scarcer
    # groups while their jobs-per-allocated-supply ratio is higher.
    desc = sorted(groups, key=lambda g: (-full_rates[g.spec], g.sort_key()))
    for gj in desc:
        if not alloc[gj.spec]:
            continue
        rate_j = full_rates[gj.spec]
        for gk in desc:
            if gk is gj:
                continue
            plan.pair_checks += 1
            if not full_rates[gk.spec] < rate_j:
                continue
            if not (gj.eligible_atoms & gk.eligible_atoms):
                continue
            m_j = adj_queues[gj.spec]
            m_k = adj_queues[gk.spec]
            if _ratio(m_j, rate_of(alloc[gj.spec])) > _ratio(m_k, full_rates[gk.spec]):
                moved = gj.eligible_atoms & alloc[gk.spec]
                alloc[gj.spec] |= moved
                alloc[gk.spec] -= moved
            else:
                break

    # Materialize the plan: ordered claims per group, one owner per atom.
    for g in sorted(groups, key=lambda g: g.sort_key()):
        ordered = intra_group_order(g, adjusted_demands=adj_demands)
        claims = [JobClaim(job_id=item.job_id, request=item.request) for item in ordered
                  if getattr(item, "request", None) is not None]
        if not claims:  # plain JobSpec inputs (no live request): claims by id only
            claims = [JobClaim(job_id=item.job_id, request=None) for item in ordered]
        atoms = frozenset(alloc[g.spec])
        ga = GroupAllocation(
            spec=g.spec,
            eligible_atoms=g.eligible_atoms,
            atoms=atoms,
            full_rate=full_rates[g.spec],
            alloc_rate=rate_of(atoms),
            claims=claims,
        )
        if matcher_decide is not None and atoms and claims:
            decision = matcher_decide(ordered[0], atoms, ga.alloc_rate)
            if decision is not None:
                tier, table = decision
                claims[0].tier = tier
                claims[0].tier_table = table
        idx = len(plan.groups)
        plan.groups.append(ga)
        for a in atoms:
            plan.atom_owner[a] = idx
    return plan


def assign_device(plan: AllocationPlan, device: DeviceProfile, atom_id: int) -> Optional[str]:
    """Assign a checked-in device of ``atom_id`` to the first claim it fits.

    A tier-restricted head job passes non-matching devices to the next job in
    its group. Decrements the winning request's remaining demand and flags a
    plan recomputation when a request fills.
    """
    if atom_id not in plan.known_atoms:
        raise UnknownAtom(f"atom {atom_id} is not part of this plan's universe")
    owner = plan.owner_of(atom_id)
    if owner is None:
        return None
    for claim in owner.claims:
        req = claim.request
        if req is None or req.remaining_demand <= 0:
            continue
        if claim.tier is not None and claim.tier_table is not None:
            if claim.tier_table.tier_of(device.capacity_score) != claim.tier:
                continue
        req.remaining_demand -= 1
        req.assigned_count = req.demand - req.remaining_demand
        if req.remaining_demand == 0:
            plan.needs_recompute = True
        return claim.job_id
    return None
