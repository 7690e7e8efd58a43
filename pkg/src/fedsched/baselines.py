"""FIFO, shortest-remaining-demand, and randomized-order baseline schedulers.

All three share one mechanism: outstanding round requests sit in a queue with
a per-policy priority key, and each checked-in device goes to the eligible
request with the smallest key. FIFO keys on request issue time, SRSF on the
current round's remaining demand (re-evaluated on every assignment), and
Random on an independent uniform draw fixed at request issue. Baselines never
use tier matching.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from .core import DeviceProfile, JobSpec, RoundRequest, satisfies

POLICIES = ("fifo", "srsf", "random")


@dataclass
class QueueEntry:
    job: JobSpec
    request: RoundRequest
    priority_draw: float = 0.0  # used by the random policy only

    @property
    def job_id(self) -> str:
        return self.job.job_id


class RequestQueue:
    """Outstanding requests plus the policy's priority ordering."""

    def __init__(self, policy: str, rng: Optional[random.Random] = None):
        if policy not in POLICIES:
            raise ValueError(f"unknown baseline policy {policy!r}")
        self.policy = policy
        self._rng = rng if rng is not None else random.Random(0)
        self._entries: dict[str, QueueEntry] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def add(self, job: JobSpec, request: RoundRequest) -> None:
        entry = QueueEntry(job=job, request=request)
        if self.policy == "random":
            entry.priority_draw = self._rng.random()
        self._entries[job.job_id] = entry

    def remove(self, job_id: str) -> None:
        self._entries.pop(job_id, None)

    def _key(self, entry: QueueEntry) -> tuple:
        if self.policy == "fifo":
            return (entry.request.issue_time, entry.job_id)
        if self.policy == "srsf":
            return (entry.request.remaining_demand, entry.job_id)
        return (entry.priority_draw, entry.job_id)

    def assign(self, device: DeviceProfile, atom_id: Optional[int] = None) -> Optional[str]:
        """Assign the device to the best eligible outstanding request, if any."""
        best: Optional[QueueEntry] = None
        best_key = None
        for job_id in sorted(self._entries):
            entry = self._entries[job_id]
            if entry.request.remaining_demand <= 0:
                continue
            if not satisfies(device, entry.job.spec):
                continue
            key = self._key(entry)
            if best_key is None or key < best_key:
                best = entry
                best_key = key
        if best is None:
            return None
        req = best.request
        req.remaining_demand -= 1
        req.assigned_count = req.demand - req.remaining_demand
        if req.remaining_demand == 0:
            self.remove(best.job_id)
        return best.job_id


def fifo_assign(device: DeviceProfile, atom_id: Optional[int], queue: RequestQueue) -> Optional[str]:
    if queue.policy != "fifo":
        raise ValueError("queue is not FIFO-keyed")
    return queue.assign(device, atom_id)


def srsf_assign(device: DeviceProfile, atom_id: Optional[int], queue: RequestQueue) -> Optional[str]:
    if queue.policy != "srsf":
        raise ValueError("queue is not SRSF-keyed")
    return queue.assign(device, atom_id)


def random_assign(device: DeviceProfile, atom_id: Optional[int], queue: RequestQueue) -> Optional[str]:
    if queue.policy != "random":
        raise ValueError("queue is not random-keyed")
    return queue.assign(device, atom_id)
