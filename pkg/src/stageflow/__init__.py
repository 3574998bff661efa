"""Stage-aware multi-model flow-matching sampling laboratory.

Train large and small velocity fields on toy 2D distributions, sample with
per-stage model assignment, profile where the two models disagree, and
locate the early/late boundaries that keep large-model quality at lower
compute.
"""

__version__ = "0.1.0"

from .errors import StageflowError  # noqa: E402
from .models import Condition, MlpSpec, ModelRegistry, VelocityModel  # noqa: E402
from .numerics import RngStream  # noqa: E402
from .sampling import SamplerConfig, Trajectory, batch_sample, sample_with_schedule  # noqa: E402
from .schedules import Schedule, enumerate_schedules, parse_schedule, realize_plan, schedule_flops  # noqa: E402

__all__ = [
    "Condition",
    "MlpSpec",
    "ModelRegistry",
    "RngStream",
    "SamplerConfig",
    "Schedule",
    "StageflowError",
    "Trajectory",
    "VelocityModel",
    "batch_sample",
    "enumerate_schedules",
    "parse_schedule",
    "realize_plan",
    "sample_with_schedule",
    "schedule_flops",
]
