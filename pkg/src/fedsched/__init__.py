"""fedsched: multi-job edge-device scheduling and simulation toolkit."""

from .core import (
    Atom,
    AtomTable,
    DeviceProfile,
    EligibilitySpec,
    JobGroup,
    JobSpec,
    OutstandingJob,
    RequestState,
    RoundRequest,
    atomize,
    group_jobs,
    satisfies,
)
from .irs import AllocationPlan, FairnessState, apply_fairness, assign_device, schedule
from .sim import MetricsReport, ResponseModel, SimConfig, Simulation, aggregate, run

__version__ = "0.1.0"

__all__ = [
    "Atom",
    "AtomTable",
    "AllocationPlan",
    "DeviceProfile",
    "EligibilitySpec",
    "FairnessState",
    "JobGroup",
    "JobSpec",
    "MetricsReport",
    "OutstandingJob",
    "RequestState",
    "ResponseModel",
    "RoundRequest",
    "SimConfig",
    "Simulation",
    "aggregate",
    "apply_fairness",
    "assign_device",
    "atomize",
    "group_jobs",
    "run",
    "satisfies",
    "schedule",
    "__version__",
]
