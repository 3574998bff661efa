"""Exhaustive schedule sweeps scored against target samples and the large-only batch."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

from ..datasets import DatasetSpec
from ..errors import StageflowError
from ..models import ModelRegistry
from ..sampling import SamplerConfig, batch_sample, endpoints
from ..schedules import Schedule, enumerate_schedules, letters, realize_plan, schedule_flops
from .boundaries import target_reference
from .metrics import endpoint_similarity, energy_distance, frechet_from_samples, pareto_front


@dataclass(frozen=True)
class MetricsReport:
    schedule_text: str
    total_flops: float
    frechet: float
    energy: float
    endpoint_cos_vs_ref: float
    endpoint_rmse_vs_ref: float


def evaluate_schedules(
    registry: ModelRegistry,
    config: SamplerConfig,
    schedules: Sequence[tuple[str, Schedule]],
    dataset: DatasetSpec,
    n_samples: int,
    reference: Schedule,
    pricing: Optional[Mapping[str, float]] = None,
    base_seed: int = 0,
    workers: int = 1,
) -> list[MetricsReport]:
    """Score each ``(label, schedule)`` on seed-paired batches; order follows the input."""
    pricing = dict(pricing) if pricing is not None else registry.pricing()
    target = target_reference(dataset, n_samples, base_seed)
    ref_batch = batch_sample(registry, reference, config, base_seed, n_samples, workers)
    reports = []
    for label, sched in schedules:
        try:
            batch = batch_sample(registry, sched, config, base_seed, n_samples, workers)
            ends = endpoints(batch)
            cos, rmse = endpoint_similarity(batch, ref_batch)
            flops = schedule_flops(realize_plan(sched, config.total_steps), pricing, config.evals_per_step)
            reports.append(MetricsReport(label, flops, frechet_from_samples(ends, target),
                                         energy_distance(ends, target), cos, rmse))
        except StageflowError as exc:
            exc.args = (f"schedule {label}: {exc}",)
            raise
    return reports


def schedule_sweep(
    registry: ModelRegistry,
    config: SamplerConfig,
    num_segments: int,
    dataset: DatasetSpec,
    n_samples: int,
    ids: Sequence[str] = ("L", "S"),
    pricing: Optional[Mapping[str, float]] = None,
    base_seed: int = 0,
    workers: int = 1,
) -> list[MetricsReport]:
    """Every equal-segment assignment of ``ids``; reference is the all-``ids[0]`` schedule."""
    schedules = enumerate_schedules(num_segments, list(ids))
    reference = Schedule.from_pairs([(ids[0], 1.0)])
    labelled = [(letters(s), s) for s in schedules]
    return evaluate_schedules(registry, config, labelled, dataset, n_samples, reference, pricing, base_seed, workers)


def sweep_pareto(reports: Sequence[MetricsReport], metric: str = "frechet") -> list[int]:
    return pareto_front([(r.total_flops, getattr(r, metric)) for r in reports])


SWEEP_COLUMNS = ["schedule", "flops", "frechet", "energy", "endpoint_cos_vs_LLL"]


def write_sweep_csv(reports: Sequence[MetricsReport], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in reports:
            w.writerow([r.schedule_text, repr(r.total_flops), repr(r.frechet), repr(r.energy),
                        repr(r.endpoint_cos_vs_ref)])
    return path


def read_sweep_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        {"schedule": r["schedule"], "flops": float(r["flops"]), "frechet": float(r["frechet"]),
         "energy": float(r["energy"]), "endpoint_cos_vs_LLL": float(r["endpoint_cos_vs_LLL"])}
        for r in rows
    ]
