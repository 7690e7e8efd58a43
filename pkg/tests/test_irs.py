import math
import random

import pytest

from fedsched.core import (
    AtomTable,
    DeviceProfile,
    EligibilitySpec,
    JobGroup,
    JobSpec,
    OutstandingJob,
    RoundRequest,
    UnknownAtom,
    group_jobs,
)
from fedsched.irs import (
    FairnessState,
    apply_fairness,
    assign_device,
    get_queue_len,
    intra_group_order,
    schedule,
)
from fedsched.matcher import TierTable
from fedsched.workload import SupplyEstimate

MEM1 = EligibilitySpec(min_memory_gb=1)
MEM2 = EligibilitySpec(min_memory_gb=2)


def outstanding(jid, spec, demand, remaining=None, rounds=1, arrival=0.0):
    job = JobSpec(job_id=jid, arrival_time=arrival, total_rounds=rounds,
                  round_demand=demand, spec=spec)
    req = RoundRequest(job_id=jid, round_index=0, demand=demand, issue_time=0.0)
    if remaining is not None:
        req.remaining_demand = remaining
    return OutstandingJob(job=job, request=req, rounds_left=rounds)


def two_atom_world(rate_mid, rate_high):
    """Atom 0: mem in [1,2) (rate_mid); atom 1: mem >= 2 (rate_high)."""
    table = AtomTable([MEM1, MEM2])
    table.classify(DeviceProfile(device_id="mid", cpu_score=1, memory_gb=1.5))
    table.classify(DeviceProfile(device_id="high", cpu_score=1, memory_gb=3.0))
    supply = SupplyEstimate(rates={0: rate_mid, 1: rate_high}, window_s=86400.0)
    return table, supply


def build_groups(table, supply, jobs):
    return group_jobs(jobs, table, supply.rates)


class TestSchedule:
    def test_single_group_gets_everything(self):
        table, supply = two_atom_world(80.0, 20.0)
        groups = build_groups(table, supply, [outstanding("J1", MEM1, 5)])
        plan = schedule(groups, supply)
        assert plan.groups[0].atoms == frozenset({0, 1})
        assert plan.atom_owner == {0: 0, 1: 0}

    def test_no_reallocation_when_ratio_leans_to_scarce(self):
        # A (mem>=1): 5 jobs over 100/u total; B (mem>=2): 2 jobs over 20/u.
        # 5/80 <= 2/20, so B keeps the high-memory atom.
        table, supply = two_atom_world(80.0, 20.0)
        jobs = [outstanding(f"A{i}", MEM1, 10) for i in range(5)]
        jobs += [outstanding(f"B{i}", MEM2, 10) for i in range(2)]
        plan = schedule(build_groups(table, supply, jobs), supply)
        by_spec = {g.spec: g for g in plan.groups}
        assert by_spec[MEM1].atoms == frozenset({0})
        assert by_spec[MEM2].atoms == frozenset({1})

    def test_reallocation_when_big_queue_dominates(self):
        # Same world, but A has 10 jobs: 10/80 > 2/20 moves the shared atom to A.
        table, supply = two_atom_world(80.0, 20.0)
        jobs = [outstanding(f"A{i}", MEM1, 10) for i in range(10)]
        jobs += [outstanding(f"B{i}", MEM2, 10) for i in range(2)]
        plan = schedule(build_groups(table, supply, jobs), supply)
        by_spec = {g.spec: g for g in plan.groups}
        assert by_spec[MEM1].atoms == frozenset({0, 1})
        assert by_spec[MEM2].atoms == frozenset()

    def test_empty_groups_empty_plan(self):
        plan = schedule([], SupplyEstimate(rates={}, window_s=86400.0))
        assert plan.groups == [] and plan.atom_owner == {}

    def test_conservation_no_atom_owned_twice(self):
        rng = random.Random(0)
        for _ in range(50):
            n_specs = rng.randint(2, 4)
            specs = [EligibilitySpec(min_memory_gb=k) for k in range(1, n_specs + 1)]
            table = AtomTable(specs)
            for i in range(30):
                table.classify(DeviceProfile(device_id=f"d{i}", cpu_score=1,
                                             memory_gb=rng.uniform(0.5, n_specs + 1)))
            rates = {a.atom_id: rng.uniform(0, 5) for a in table.atoms}
            supply = SupplyEstimate(rates=rates, window_s=86400.0)
            jobs = [outstanding(f"j{i}", rng.choice(specs), rng.randint(1, 20))
                    for i in range(rng.randint(1, 8))]
            plan = schedule(build_groups(table, supply, jobs), supply)
            owned = [a for g in plan.groups for a in g.atoms]
            assert len(owned) == len(set(owned))
            total = supply.rate_of(rates)
            assert sum(g.alloc_rate for g in plan.groups) <= total + 1e-9

    def test_epsilon_zero_identity(self):
        table, supply = two_atom_world(80.0, 20.0)
        jobs = [outstanding(f"A{i}", MEM1, 10 + i, arrival=float(i)) for i in range(6)]
        jobs += [outstanding(f"B{i}", MEM2, 5 + i, arrival=float(i)) for i in range(3)]
        fairness = FairnessState(
            epsilon=0.0,
            elapsed={j.job_id: 100.0 + hash(j.job_id) % 7 for j in jobs},
            fair_share={j.job_id: 500.0 for j in jobs},
        )
        base = schedule(build_groups(table, supply, jobs), supply, fairness=None)
        adj = schedule(build_groups(table, supply, jobs), supply, fairness=fairness)
        assert [(g.spec, g.atoms, [c.job_id for c in g.claims]) for g in base.groups] == \
               [(g.spec, g.atoms, [c.job_id for c in g.claims]) for g in adj.groups]


class TestIntraGroupOrder:
    def test_ascending_with_id_tiebreak(self):
        jobs = [outstanding("J1", MEM1, 5), outstanding("J2", MEM1, 3),
                outstanding("J3", MEM1, 3)]
        group = JobGroup(spec=MEM1, jobs=jobs)
        order = [j.job_id for j in intra_group_order(group)]
        assert order == ["J2", "J3", "J1"]

    def test_equal_demands_id_order(self):
        jobs = [outstanding(j, MEM1, 7) for j in ("J3", "J1", "J2")]
        group = JobGroup(spec=MEM1, jobs=jobs)
        assert [j.job_id for j in intra_group_order(group)] == ["J1", "J2", "J3"]

    def test_fairness_flips_order(self):
        # J1 demand 10 at 4x its target, J2 demand 30 at 1x: 40 vs 30.
        jobs = [outstanding("J1", MEM1, 10), outstanding("J2", MEM1, 30)]
        group = JobGroup(spec=MEM1, jobs=jobs)
        fairness = FairnessState(epsilon=1.0,
                                 elapsed={"J1": 400.0, "J2": 100.0},
                                 fair_share={"J1": 100.0, "J2": 100.0})
        assert [j.job_id for j in intra_group_order(group, fairness)] == ["J2", "J1"]

    def test_total_remaining_mode(self):
        j_small_rounds = outstanding("A", MEM1, 10, rounds=1)
        j_many_rounds = outstanding("B", MEM1, 5, rounds=10)
        group = JobGroup(spec=MEM1, jobs=[j_small_rounds, j_many_rounds])
        by_round = intra_group_order(group)
        assert [j.job_id for j in by_round] == ["B", "A"]
        by_total = intra_group_order(group, total_remaining=True)
        assert [j.job_id for j in by_total] == ["A", "B"]


class TestApplyFairness:
    def test_epsilon_zero_is_identity(self):
        jobs = [outstanding("J1", MEM1, 7), outstanding("J2", MEM2, 9)]
        groups = group_jobs(jobs)
        fairness = FairnessState(epsilon=0.0, elapsed={"J1": 50, "J2": 60},
                                 fair_share={"J1": 10, "J2": 10})
        demands, queues = apply_fairness(jobs, groups, fairness)
        assert demands == {"J1": 7.0, "J2": 9.0}
        assert queues == {MEM1: 1.0, MEM2: 1.0}

    def test_demand_formula(self):
        jobs = [outstanding("J1", MEM1, 7)]
        groups = group_jobs(jobs)
        fairness = FairnessState(epsilon=1.0, elapsed={"J1": 200.0},
                                 fair_share={"J1": 100.0})
        demands, _ = apply_fairness(jobs, groups, fairness)
        assert demands["J1"] == pytest.approx(14.0)

    def test_queue_formula(self):
        jobs = [outstanding(f"J{i}", MEM1, 5) for i in range(8)]
        groups = group_jobs(jobs)
        fairness = FairnessState(
            epsilon=1.0,
            elapsed={j.job_id: 50.0 for j in jobs},       # sum 400
            fair_share={j.job_id: 12.5 for j in jobs},    # sum 100
        )
        _, queues = apply_fairness(jobs, groups, fairness)
        assert queues[MEM1] == pytest.approx(2.0)

    def test_zero_elapsed_floored(self):
        jobs = [outstanding("J1", MEM1, 10)]
        groups = group_jobs(jobs)
        fairness = FairnessState(epsilon=1.0, elapsed={"J1": 0.0},
                                 fair_share={"J1": 100.0}, floor=1e-6)
        demands, _ = apply_fairness(jobs, groups, fairness)
        assert demands["J1"] == pytest.approx(10.0 * 1e-6)

    def test_negative_epsilon_rejected(self):
        with pytest.raises(ValueError):
            FairnessState(epsilon=-1.0)


class TestGetQueueLen:
    def test_counts_only_outstanding(self):
        jobs = [outstanding(f"J{i}", MEM1, 5) for i in range(4)]
        ga = JobGroup(spec=MEM1, jobs=jobs)
        gb = JobGroup(spec=MEM2, jobs=[outstanding("K0", MEM2, 5)])
        _, queues = apply_fairness(jobs + gb.jobs, [ga, gb], None)
        assert get_queue_len(ga, gb, queues) == (4.0, 1.0)

    def test_empty_group_zero(self):
        ga = JobGroup(spec=MEM1, jobs=[])
        _, queues = apply_fairness([], [ga], None)
        assert queues[MEM1] == 0.0

    def test_adjusted_value(self):
        jobs = [outstanding(f"J{i}", MEM1, 5) for i in range(8)]
        ga = JobGroup(spec=MEM1, jobs=jobs)
        fairness = FairnessState(
            epsilon=1.0,
            elapsed={j.job_id: 50.0 for j in jobs},
            fair_share={j.job_id: 12.5 for j in jobs},
        )
        _, queues = apply_fairness(jobs, [ga], fairness)
        assert get_queue_len(ga, ga, queues) == (pytest.approx(2.0), pytest.approx(2.0))


class TestAssignDevice:
    def setup_plan(self, jobs=None, matcher_decide=None):
        table, supply = two_atom_world(1.0, 0.5)
        jobs = jobs if jobs is not None else [outstanding("J1", MEM1, 2)]
        plan = schedule(build_groups(table, supply, jobs), supply,
                        matcher_decide=matcher_decide,
                        known_atoms=frozenset(range(len(table))))
        return table, plan, {j.job_id: j for j in jobs}

    def test_unclaimed_atom_returns_none(self):
        table, supply = two_atom_world(1.0, 0.5)
        jobs = [outstanding("B1", MEM2, 2)]  # only claims atom 1
        plan = schedule(build_groups(table, supply, jobs), supply,
                        known_atoms=frozenset(range(len(table))))
        mid = DeviceProfile(device_id="m", cpu_score=1, memory_gb=1.5)
        assert assign_device(plan, mid, 0) is None

    def test_fill_triggers_recompute_flag(self):
        table, plan, jobs = self.setup_plan([outstanding("J1", MEM1, 1)])
        dev = DeviceProfile(device_id="m", cpu_score=1, memory_gb=1.5)
        assert assign_device(plan, dev, 0) == "J1"
        assert jobs["J1"].request.remaining_demand == 0
        assert plan.needs_recompute

    def test_unknown_atom_raises(self):
        table, plan, _ = self.setup_plan()
        dev = DeviceProfile(device_id="m", cpu_score=1, memory_gb=1.5)
        with pytest.raises(UnknownAtom):
            assign_device(plan, dev, 99)

    def test_tier_leftovers_flow_to_next_job(self):
        # Head restricted to tier 1 (slow); a fast device passes to J2.
        tiers = TierTable(v=2, thresholds=[1.0], g=[0.5, 1.0],
                          t_tier=[50.0, 100.0], t_untiered=100.0)

        def decide(head, atoms, rate):
            return (1, tiers) if head.job_id == "J1" else None

        jobs = [outstanding("J1", MEM1, 2), outstanding("J2", MEM1, 2)]
        table, plan, jmap = self.setup_plan(jobs, matcher_decide=decide)
        fast = DeviceProfile(device_id="f", cpu_score=1, memory_gb=1.5, speed_factor=0.5)
        slow = DeviceProfile(device_id="s", cpu_score=1, memory_gb=1.5, speed_factor=2.0)
        assert tiers.tier_of(fast.capacity_score) == 0
        assert tiers.tier_of(slow.capacity_score) == 1
        assert assign_device(plan, fast, 0) == "J2"
        assert assign_device(plan, slow, 0) == "J1"

    def test_skips_satisfied_claims(self):
        jobs = [outstanding("J1", MEM1, 1, remaining=0), outstanding("J2", MEM1, 3)]
        table, plan, _ = self.setup_plan(jobs)
        dev = DeviceProfile(device_id="m", cpu_score=1, memory_gb=1.5)
        assert assign_device(plan, dev, 0) == "J2"


class TestTwoGroupRule:
    def test_matches_delta_t_sign(self):
        from fedsched.oracle import pairwise_delta_t
        rng = random.Random(123)
        for _ in range(10000):
            x = rng.uniform(0.02, 0.98)
            m_a = rng.randint(1, 25)
            m_b = rng.randint(0, 25)
            l = rng.uniform(0.1, 50.0)
            chosen = two_group_prioritizes_a(x, m_a, m_b)
            delta = pairwise_delta_t(l, x, m_a, m_b)
            if abs(delta.delta_t) <= 1e-9 * (l * (m_a + m_b + 1)):
                continue  # boundary within float noise
            assert chosen == delta.prioritize_a, (x, m_a, m_b, delta.delta_t)


def two_group_prioritizes_a(x, m_a, m_b):
    """Build the canonical two-group contention scenario and report whether
    the scheduler hands the shared atom to the abundant group A."""
    table = AtomTable([MEM1, MEM2])
    table.classify(DeviceProfile(device_id="mid", cpu_score=1, memory_gb=1.5))
    table.classify(DeviceProfile(device_id="high", cpu_score=1, memory_gb=3.0))
    supply = SupplyEstimate(rates={0: 1.0 - x, 1: x}, window_s=86400.0)
    jobs = [outstanding(f"A{i:02d}", MEM1, 10) for i in range(m_a)]
    jobs += [outstanding(f"B{i:02d}", MEM2, 10) for i in range(m_b)]
    plan = schedule(group_jobs(jobs, table, supply.rates), supply)
    by_spec = {g.spec: g for g in plan.groups}
    if MEM1 not in by_spec:
        return False
    return 1 in by_spec[MEM1].atoms


class TestComplexity:
    def test_pair_checks_quadruple_when_groups_double(self):
        from fedsched.workload import SupplyEstimate

        def build(m, n):
            groups, rates = [], {}
            shared = n
            rates[shared] = 0.001
            per = m // n
            for g in range(n):
                rates[g] = 0.01 + g * 1e-4
                spec = EligibilitySpec(required_tags=frozenset({f"t{g}"}))
                jobs = [outstanding(f"j{g:03d}-{i:03d}", spec, 10 + (i * 7 + g) % 90)
                        for i in range(per)]
                groups.append(JobGroup(spec=spec, jobs=jobs,
                                       eligible_atoms=frozenset({g, shared})))
            return groups, SupplyEstimate(rates=rates, window_s=86400.0)

        groups, supply = build(1000, 50)
        small = schedule(groups, supply).pair_checks
        groups, supply = build(1000, 100)
        big = schedule(groups, supply).pair_checks
        assert small > 0
        ratio = big / small
        assert 4.0 * 0.8 <= ratio <= 4.0 * 1.2
