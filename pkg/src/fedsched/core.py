"""Domain types: devices, eligibility predicates, eligibility classes, jobs, job groups.

The device population is partitioned into *eligibility classes* ("atoms"):
maximal sets of devices that satisfy exactly the same subset of the
registered eligibility specs. All set reasoning in the scheduler happens
over atoms instead of individual devices.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence


@dataclass(frozen=True)
class DeviceProfile:
    """A single edge device: capacity, tags, availability, and speed.

    ``availability`` is a sorted tuple of non-overlapping ``[start, end)``
    intervals in simulation seconds. ``speed_factor`` multiplies task compute
    time (1.0 = reference device; bigger = slower).
    """

    device_id: str
    cpu_score: float
    memory_gb: float
    speed_factor: float = 1.0
    tags: frozenset[str] = frozenset()
    availability: tuple[tuple[float, float], ...] = ()

    def validate(self) -> None:
        if self.cpu_score <= 0:
            raise ValueError(f"{self.device_id}: cpu_score must be > 0")
        if self.memory_gb <= 0:
            raise ValueError(f"{self.device_id}: memory_gb must be > 0")
        if self.speed_factor <= 0:
            raise ValueError(f"{self.device_id}: speed_factor must be > 0")
        prev_end = None
        for start, end in self.availability:
            if not start < end:
                raise ValueError(f"{self.device_id}: interval [{start}, {end}) is empty or reversed")
            if prev_end is not None and start < prev_end:
                raise ValueError(f"{self.device_id}: availability intervals overlap or are unsorted")
            prev_end = end

    @property
    def capacity_score(self) -> float:
        """Scalar capacity used for tiering: inverse of speed (higher = faster)."""
        return 1.0 / self.speed_factor


@dataclass(frozen=True)
class EligibilitySpec:
    """A job's device requirement: capacity thresholds plus required tags.

    Threshold comparisons are inclusive. Two specs with equal fields compare
    equal, which is what defines job groups.
    """

    min_cpu: float = 0.0
    min_memory_gb: float = 0.0
    required_tags: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.min_cpu < 0 or self.min_memory_gb < 0:
            raise ValueError("eligibility thresholds must be >= 0")
        # Guard against accidentally passing a mutable set.
        object.__setattr__(self, "required_tags", frozenset(self.required_tags))

    def sort_key(self) -> tuple:
        return (self.min_cpu, self.min_memory_gb, tuple(sorted(self.required_tags)))

    def describe(self) -> str:
        parts = []
        if self.min_cpu > 0:
            parts.append(f"cpu>={self.min_cpu:g}")
        if self.min_memory_gb > 0:
            parts.append(f"mem>={self.min_memory_gb:g}")
        if self.required_tags:
            parts.append("tags=" + "+".join(sorted(self.required_tags)))
        return "&".join(parts) if parts else "any"


def satisfies(device: DeviceProfile, spec: EligibilitySpec) -> bool:
    """True iff the device meets the spec's thresholds and carries its tags."""
    return (
        device.cpu_score >= spec.min_cpu
        and device.memory_gb >= spec.min_memory_gb
        and spec.required_tags <= device.tags
    )


@dataclass(frozen=True)
class Atom:
    """One eligibility class: all devices satisfying exactly ``member_specs``."""

    atom_id: int
    member_specs: frozenset[EligibilitySpec]

    @property
    def is_null(self) -> bool:
        return not self.member_specs


class AtomTable:
    """Registry of eligibility specs and the atoms they induce.

    Devices are classified lazily; an atom is materialized the first time its
    satisfaction signature is observed, so the atom count never exceeds the
    number of distinct signatures. Rebuild the table (new instance) when the
    registered spec set changes.
    """

    def __init__(self, specs: Iterable[EligibilitySpec]):
        self.specs: tuple[EligibilitySpec, ...] = tuple(dict.fromkeys(specs))
        self._atoms: list[Atom] = []
        self._by_signature: dict[frozenset[EligibilitySpec], int] = {}
        self._device_atom: dict[str, int] = {}
        self._eligible_cache: dict[EligibilitySpec, frozenset[int]] = {}

    @property
    def atoms(self) -> list[Atom]:
        return list(self._atoms)

    @property
    def device_map(self) -> dict[str, int]:
        return dict(self._device_atom)

    def __len__(self) -> int:
        return len(self._atoms)

    def signature(self, device: DeviceProfile) -> frozenset[EligibilitySpec]:
        return frozenset(s for s in self.specs if satisfies(device, s))

    def classify(self, device: DeviceProfile) -> int:
        """Map a device to its atom, materializing the atom if new."""
        cached = self._device_atom.get(device.device_id)
        if cached is not None:
            return cached
        sig = self.signature(device)
        atom_id = self._by_signature.get(sig)
        if atom_id is None:
            atom_id = len(self._atoms)
            self._atoms.append(Atom(atom_id=atom_id, member_specs=sig))
            self._by_signature[sig] = atom_id
            self._eligible_cache.clear()
        self._device_atom[device.device_id] = atom_id
        return atom_id

    def atom_of(self, device_id: str) -> int:
        try:
            return self._device_atom[device_id]
        except KeyError:
            raise UnknownAtom(f"device {device_id!r} has not been classified") from None

    def eligible_atoms(self, spec: EligibilitySpec) -> frozenset[int]:
        """Atoms whose devices all satisfy ``spec``."""
        cached = self._eligible_cache.get(spec)
        if cached is None:
            cached = frozenset(a.atom_id for a in self._atoms if spec in a.member_specs)
            self._eligible_cache[spec] = cached
        return cached

    @property
    def null_atom_id(self) -> Optional[int]:
        """The atom of devices satisfying no registered spec, if observed."""
        return self._by_signature.get(frozenset())


class UnknownAtom(KeyError):
    """Raised when an atom or unclassified device is referenced."""


def atomize(
    specs: Iterable[EligibilitySpec], devices: Sequence[DeviceProfile]
) -> tuple[list[Atom], dict[str, int]]:
    """Partition ``devices`` into eligibility classes over ``specs``.

    Returns the materialized atoms and the total device_id -> atom_id map.
    Devices satisfying no spec land in the null atom.
    """
    specs = tuple(specs)
    if not specs:
        raise ValueError("atomize requires at least one spec")
    table = AtomTable(specs)
    for dev in devices:
        table.classify(dev)
    return table.atoms, table.device_map


class RequestState(enum.Enum):
    WAITING = "waiting"
    COLLECTING = "collecting"
    SUCCEEDED = "succeeded"
    ABORTED = "aborted"


@dataclass(frozen=True)
class JobSpec:
    """A job's static description: rounds, per-round demand, requirement, deadline."""

    job_id: str
    arrival_time: float
    total_rounds: int
    round_demand: int
    spec: EligibilitySpec
    report_threshold: float = 0.8
    deadline_seconds: float = 600.0

    def __post_init__(self) -> None:
        if self.total_rounds < 1:
            raise ValueError(f"{self.job_id}: total_rounds must be >= 1")
        if self.round_demand < 1:
            raise ValueError(f"{self.job_id}: round_demand must be >= 1")
        if not 0 < self.report_threshold <= 1:
            raise ValueError(f"{self.job_id}: report_threshold must be in (0, 1]")
        if self.deadline_seconds <= 0:
            raise ValueError(f"{self.job_id}: deadline_seconds must be > 0")

    @property
    def total_demand(self) -> int:
        return self.total_rounds * self.round_demand


@dataclass
class RoundRequest:
    """One outstanding resource request of a job round.

    Aborted requests are reissued as a fresh WAITING request with the same
    ``round_index`` and a bumped ``incarnation``.
    """

    job_id: str
    round_index: int
    demand: int
    issue_time: float
    remaining_demand: int = -1
    assigned_count: int = 0
    responses_received: int = 0
    state: RequestState = RequestState.WAITING
    incarnation: int = 0
    filled_time: Optional[float] = None

    def __post_init__(self) -> None:
        if self.remaining_demand < 0:
            self.remaining_demand = self.demand


@dataclass
class OutstandingJob:
    """Queue entry pairing a job with its currently waiting request."""

    job: JobSpec
    request: RoundRequest
    rounds_left: int = 1

    @property
    def job_id(self) -> str:
        return self.job.job_id

    @property
    def spec(self) -> EligibilitySpec:
        return self.job.spec

    @property
    def remaining_demand(self) -> int:
        return self.request.remaining_demand

    @property
    def total_remaining_demand(self) -> int:
        """Current request remainder plus demand of all rounds still to come."""
        return self.request.remaining_demand + (self.rounds_left - 1) * self.job.round_demand


@dataclass
class JobGroup:
    """All outstanding jobs sharing one eligibility spec."""

    spec: EligibilitySpec
    jobs: list
    eligible_atoms: frozenset[int] = frozenset()
    supply_rate: float = 0.0

    def sort_key(self) -> tuple:
        return self.spec.sort_key()

    def __len__(self) -> int:
        return len(self.jobs)


def group_jobs(
    jobs: Sequence,
    atom_table: Optional[AtomTable] = None,
    rates: Optional[Mapping[int, float]] = None,
) -> list[JobGroup]:
    """Partition outstanding jobs into groups keyed by their eligibility spec.

    Accepts any items exposing ``.job_id`` and ``.spec`` (JobSpec or
    OutstandingJob). Groups are returned in deterministic spec order; each
    group's job order is preserved from the input. When an atom table is
    given, groups carry their eligible atom sets (and supply rates if
    per-atom rates are supplied).
    """
    by_spec: dict[EligibilitySpec, list] = {}
    for item in jobs:
        by_spec.setdefault(item.spec, []).append(item)
    groups = []
    for spec in sorted(by_spec, key=lambda s: s.sort_key()):
        group = JobGroup(spec=spec, jobs=by_spec[spec])
        if atom_table is not None:
            group.eligible_atoms = atom_table.eligible_atoms(spec)
            if rates is not None:
                group.supply_rate = sum(rates.get(a, 0.0) for a in sorted(group.eligible_atoms))
        groups.append(group)
    return groups
