import random

import pytest

from fedsched.core import (
    AtomTable,
    DeviceProfile,
    EligibilitySpec,
    JobSpec,
    UnknownAtom,
    atomize,
    group_jobs,
    satisfies,
)


def dev(i, cpu=1.0, mem=1.0, tags=(), speed=1.0):
    return DeviceProfile(
        device_id=f"d{i}", cpu_score=cpu, memory_gb=mem,
        speed_factor=speed, tags=frozenset(tags),
    )


def job(jid, spec, demand=10, rounds=1, arrival=0.0):
    return JobSpec(job_id=jid, arrival_time=arrival, total_rounds=rounds,
                   round_demand=demand, spec=spec)


class TestSatisfies:
    def test_empty_requirement(self):
        assert satisfies(dev(0, cpu=4, mem=2), EligibilitySpec())

    def test_boundary_inclusive(self):
        assert satisfies(dev(0, cpu=4, mem=2), EligibilitySpec(min_cpu=4, min_memory_gb=2))

    def test_memory_below_threshold(self):
        assert not satisfies(dev(0, cpu=4, mem=1.9), EligibilitySpec(min_cpu=2, min_memory_gb=2))

    def test_tags_must_be_subset(self):
        spec = EligibilitySpec(required_tags=frozenset({"a", "b"}))
        assert satisfies(dev(0, tags=("a", "b", "c")), spec)
        assert not satisfies(dev(1, tags=("a",)), spec)


class TestAtomize:
    def test_single_spec_all_satisfy(self):
        spec = EligibilitySpec()
        atoms, mapping = atomize([spec], [dev(i, cpu=2, mem=2) for i in range(5)])
        assert len(atoms) == 1
        assert atoms[0].member_specs == frozenset({spec})
        assert len(set(mapping.values())) == 1

    def test_two_memory_thresholds(self):
        s1 = EligibilitySpec(min_memory_gb=1)
        s2 = EligibilitySpec(min_memory_gb=2)
        devices = [dev(0, mem=1.5), dev(1, mem=3.0)]
        atoms, mapping = atomize([s1, s2], devices)
        sigs = {a.atom_id: a.member_specs for a in atoms}
        assert sigs[mapping["d0"]] == frozenset({s1})
        assert sigs[mapping["d1"]] == frozenset({s1, s2})
        assert len(atoms) == 2

    def test_nested_specs_never_split(self):
        # B strictly stronger than A: no atom can satisfy B alone.
        a = EligibilitySpec(min_cpu=1)
        b = EligibilitySpec(min_cpu=2, min_memory_gb=2)
        rng = random.Random(7)
        devices = [dev(i, cpu=rng.uniform(0.5, 4), mem=rng.uniform(0.5, 4)) for i in range(200)]
        atoms, _ = atomize([a, b], devices)
        for atom in atoms:
            if b in atom.member_specs:
                assert a in atom.member_specs

    def test_partition_property(self):
        rng = random.Random(3)
        specs = [
            EligibilitySpec(min_cpu=rng.uniform(0, 3), min_memory_gb=rng.uniform(0, 3))
            for _ in range(4)
        ]
        devices = [dev(i, cpu=rng.uniform(0.1, 4), mem=rng.uniform(0.1, 4)) for i in range(100)]
        atoms, mapping = atomize(specs, devices)
        assert set(mapping) == {d.device_id for d in devices}
        counts = {}
        for atom_id in mapping.values():
            counts[atom_id] = counts.get(atom_id, 0) + 1
        assert sum(counts.values()) == len(devices)
        assert len(atoms) <= min(2 ** len(set(specs)), len(devices))
        # every device satisfies exactly its atom's member specs
        table = {a.atom_id: a.member_specs for a in atoms}
        for d in devices:
            sig = frozenset(s for s in specs if satisfies(d, s))
            assert table[mapping[d.device_id]] == sig

    def test_null_atom_holds_unsatisfying_devices(self):
        spec = EligibilitySpec(min_cpu=100)
        atoms, mapping = atomize([spec], [dev(0, cpu=1)])
        assert len(atoms) == 1 and atoms[0].is_null

    def test_empty_specs_rejected(self):
        with pytest.raises(ValueError):
            atomize([], [dev(0)])


class TestMonotonicity:
    def test_weaker_spec_bigger_eligible_set(self):
        rng = random.Random(11)
        weak = EligibilitySpec(min_cpu=1, min_memory_gb=1)
        strong = EligibilitySpec(min_cpu=2, min_memory_gb=1.5, required_tags=frozenset({"x"}))
        devices = [
            dev(i, cpu=rng.uniform(0, 4), mem=rng.uniform(0, 4),
                tags=("x",) if rng.random() < 0.5 else ())
            for i in range(100)
        ]
        weak_set = {d.device_id for d in devices if satisfies(d, weak)}
        strong_set = {d.device_id for d in devices if satisfies(d, strong)}
        assert strong_set <= weak_set


class TestGroupJobs:
    def test_identical_specs_one_group(self):
        spec = EligibilitySpec(min_cpu=1)
        groups = group_jobs([job("a", spec), job("b", spec), job("c", spec)])
        assert len(groups) == 1
        assert len(groups[0].jobs) == 3

    def test_distinct_specs_singletons(self):
        specs = [EligibilitySpec(min_cpu=c) for c in (1, 2, 3)]
        groups = group_jobs([job(f"j{i}", s) for i, s in enumerate(specs)])
        assert len(groups) == 3
        assert all(len(g.jobs) == 1 for g in groups)

    def test_partition_by_key(self):
        a = EligibilitySpec(min_cpu=1)
        b = EligibilitySpec(min_cpu=2)
        groups = group_jobs([job("J1", a), job("J2", b), job("J3", a)])
        by_spec = {g.spec: [j.job_id for j in g.jobs] for g in groups}
        assert by_spec[a] == ["J1", "J3"]
        assert by_spec[b] == ["J2"]

    def test_every_job_in_exactly_one_group(self):
        rng = random.Random(5)
        specs = [EligibilitySpec(min_cpu=c) for c in (0, 1, 2)]
        jobs = [job(f"j{i:02d}", rng.choice(specs)) for i in range(30)]
        groups = group_jobs(jobs)
        seen = [j.job_id for g in groups for j in g.jobs]
        assert sorted(seen) == sorted(j.job_id for j in jobs)
        assert len(seen) == len(set(seen))

    def test_eligible_atoms_from_table(self):
        s1 = EligibilitySpec(min_memory_gb=1)
        s2 = EligibilitySpec(min_memory_gb=2)
        table = AtomTable([s1, s2])
        for d in [dev(0, mem=1.5), dev(1, mem=3.0)]:
            table.classify(d)
        groups = group_jobs([job("J1", s1), job("J2", s2)], table,
                            rates={0: 0.5, 1: 0.25})
        by_spec = {g.spec: g for g in groups}
        assert by_spec[s1].eligible_atoms == frozenset({0, 1})
        assert by_spec[s2].eligible_atoms == frozenset({1})
        assert by_spec[s1].supply_rate == pytest.approx(0.75)
        assert by_spec[s2].supply_rate == pytest.approx(0.25)


class TestAtomTable:
    def test_classify_is_stable(self):
        spec = EligibilitySpec(min_cpu=2)
        table = AtomTable([spec])
        d = dev(0, cpu=3)
        assert table.classify(d) == table.classify(d)

    def test_unknown_device_raises(self):
        table = AtomTable([EligibilitySpec()])
        with pytest.raises(UnknownAtom):
            table.atom_of("ghost")

    def test_duplicate_specs_deduped(self):
        spec = EligibilitySpec(min_cpu=1)
        table = AtomTable([spec, EligibilitySpec(min_cpu=1)])
        assert len(table.specs) == 1


class TestValidation:
    def test_reversed_interval_rejected(self):
        d = DeviceProfile(device_id="x", cpu_score=1, memory_gb=1,
                          availability=((10.0, 5.0),))
        with pytest.raises(ValueError):
            d.validate()

    def test_overlapping_intervals_rejected(self):
        d = DeviceProfile(device_id="x", cpu_score=1, memory_gb=1,
                          availability=((0.0, 10.0), (5.0, 15.0)))
        with pytest.raises(ValueError):
            d.validate()

    def test_bad_job_spec(self):
        with pytest.raises(ValueError):
            JobSpec(job_id="j", arrival_time=0, total_rounds=0, round_demand=1,
                    spec=EligibilitySpec())
        with pytest.raises(ValueError):
            JobSpec(job_id="j", arrival_time=0, total_rounds=1, round_demand=1,
                    spec=EligibilitySpec(), report_threshold=0.0)
