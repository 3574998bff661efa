"""Multi-model ODE sampling with Euler and Heun solvers.

Time runs from t=0 (noise) to t=1 (data).  A step is executed entirely by
the model assigned to it in the StepPlan, including both evaluations of a
Heun step.

``batch_sample`` integrates seeds in fixed-size chunks.  Chunk membership
depends only on the trajectory index, never on the worker count, so the
results are bitwise identical for any number of workers.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import InvalidArgumentError, NumericError, StageflowError
from .models import UNCONDITIONAL, Condition, ModelRegistry, VelocityModel, evaluate_velocity, guidance_evals, guided_velocity
from .numerics import RngStream, gaussian_sample
from .schedules import Schedule, StepPlan, parse_schedule, realize_plan

SOLVERS = ("euler", "heun")
CHUNK_SIZE = 64

Field = Union[VelocityModel, Callable[[np.ndarray, float], np.ndarray]]


@dataclass(frozen=True)
class SamplerConfig:
    total_steps: int = 50
    solver: str = "euler"
    guidance: float = 0.0
    cond: Condition = UNCONDITIONAL
    record_every: int = 1

    def validate(self) -> "SamplerConfig":
        if self.total_steps < 1:
            raise InvalidArgumentError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.solver not in SOLVERS:
            raise InvalidArgumentError(f"unknown solver {self.solver!r}")
        if self.guidance < 0:
            raise InvalidArgumentError(f"guidance must be >= 0, got {self.guidance}")
        if self.record_every < 1:
            raise InvalidArgumentError(f"record_every must be >= 1, got {self.record_every}")
        return self

    @property
    def evals_per_step(self) -> int:
        return guidance_evals(self.cond, self.guidance) * (2 if self.solver == "heun" else 1)


@dataclass
class Trajectory:
    times: np.ndarray  # recorded t values, first 0 and last 1
    states: np.ndarray  # (len(times), dim)
    model_ids: tuple[str, ...]  # one id per executed step
    total_flops: float
    seed: int
    stream_id: int = 0
    step_indices: np.ndarray = field(default=None)  # plan step index of each recorded state

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]


def velocity(model: Field, z, t: float, cond: Condition = UNCONDITIONAL, guidance: float = 0.0) -> np.ndarray:
    """Velocity of a registered model (guided when ``cond`` carries a class) or of a plain callable."""
    if isinstance(model, VelocityModel):
        if cond.is_conditional:
            return guided_velocity(model, z, t, cond, guidance)
        return evaluate_velocity(model, z, t, cond)
    return np.asarray(model(np.asarray(z, dtype=np.float64), t), dtype=np.float64)


def _check_step(t: float, dt: float) -> None:
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    if t + dt > 1.0 + 1e-12:
        raise InvalidArgumentError(f"step overruns t=1 (t={t}, dt={dt})")


def _finite(v: np.ndarray, where: str) -> np.ndarray:
    if not np.isfinite(v).all():
        raise NumericError(f"non-finite velocity {where}")
    return v


def euler_step(model: Field, z, t: float, dt: float, cond: Condition = UNCONDITIONAL, guidance: float = 0.0,
               t_next: Optional[float] = None) -> np.ndarray:
    _check_step(t, dt)
    v = _finite(velocity(model, z, t, cond, guidance), f"at t={t}")
    return np.asarray(z, dtype=np.float64) + dt * v


def heun_step(model: Field, z, t: float, dt: float, cond: Condition = UNCONDITIONAL, guidance: float = 0.0,
              t_next: Optional[float] = None) -> np.ndarray:
    """Explicit trapezoidal predictor-corrector; ``t_next`` overrides ``t + dt`` for the corrector time."""
    _check_step(t, dt)
    z = np.asarray(z, dtype=np.float64)
    t1 = min(t + dt, 1.0) if t_next is None else t_next
    v0 = _finite(velocity(model, z, t, cond, guidance), f"at t={t}")
    z_pred = z + dt * v0
    v1 = _finite(velocity(model, z_pred, t1, cond, guidance), f"at t={t1}")
    return z + 0.5 * dt * (v0 + v1)


def _recorded_steps(n_steps: int, record_every: int) -> list[int]:
    idx = list(range(0, n_steps, record_every))
    idx.append(n_steps)
    return idx


def integrate(registry: ModelRegistry, plan: StepPlan, config: SamplerConfig, z0: np.ndarray
              ) -> tuple[np.ndarray, np.ndarray, float]:
    """Integrate a batch of start points ``z0`` (rows) along ``plan``.

    Returns the recorded plan-step indices, the recorded states with shape
    ``(n_recorded, batch, dim)`` and the metered FLOPs of one trajectory.
    """
    config.validate()
    models = {mid: registry.lookup(mid) for mid in dict.fromkeys(plan.model_ids)}
    step_fn = heun_step if config.solver == "heun" else euler_step
    evals = config.evals_per_step
    keep = set(_recorded_steps(plan.total_steps, config.record_every))
    z = np.array(z0, dtype=np.float64)
    recorded = [z.copy()]
    flops = 0.0
    for i, step in enumerate(plan.steps):
        model = models[step.model_id]
        try:
            z = step_fn(model, z, step.t_start, step.t_end - step.t_start, config.cond, config.guidance,
                        t_next=step.t_end)
        except NumericError as exc:
            raise NumericError(f"step {i} (model {step.model_id}, t={step.t_start}): {exc}") from exc
        flops += model.flops_per_eval * evals
        if i + 1 in keep:
            recorded.append(z.copy())
    return np.array(sorted(keep)), np.stack(recorded), flops


def _plan_for(registry: ModelRegistry, schedule: Union[Schedule, str], config: SamplerConfig) -> tuple[Schedule, StepPlan]:
    if isinstance(schedule, str):
        schedule = parse_schedule(schedule, registry.keys())
    for mid in schedule.model_ids:
        registry.lookup(mid)
    return schedule, realize_plan(schedule, config.total_steps)


def _latent_dim(registry: ModelRegistry, schedule: Schedule) -> int:
    dims = {registry.lookup(mid).latent_dim for mid in schedule.model_ids}
    if len(dims) != 1:
        raise InvalidArgumentError(f"models in {schedule.text()} disagree on latent dim: {sorted(dims)}")
    return dims.pop()


def _split(plan: StepPlan, step_idx: np.ndarray, states: np.ndarray, flops: float, seed: int,
           stream_ids: Sequence[int]) -> list[Trajectory]:
    times = np.array(plan.times())[step_idx]
    ids = tuple(plan.model_ids)
    return [
        Trajectory(times, states[:, j, :].copy(), ids, flops, seed, sid, step_idx)
        for j, sid in enumerate(stream_ids)
    ]


def sample_with_schedule(registry: ModelRegistry, schedule: Union[Schedule, str], config: SamplerConfig,
                         rng: RngStream) -> Trajectory:
    """One trajectory from ``z0 ~ N(0, I)`` drawn off ``rng``."""
    schedule, plan = _plan_for(registry, schedule, config)
    z0 = gaussian_sample(rng, _latent_dim(registry, schedule))
    step_idx, states, flops = integrate(registry, plan, config, z0[None, :])
    return _split(plan, step_idx, states, flops, rng.seed, [rng.stream_id])[0]


class BatchSampleError(StageflowError):
    kind = "batch"

    def __init__(self, failures: list[tuple[int, Exception]]):
        idx = ", ".join(str(i) for i, _ in failures)
        super().__init__(f"{len(failures)} trajectories failed (indices {idx}): {failures[0][1]}")
        self.failures = failures


def initial_points(base_seed: int, n: int, dim: int) -> np.ndarray:
    """Start point of trajectory ``i`` comes from stream ``i`` off ``base_seed``."""
    return np.stack([gaussian_sample(RngStream(base_seed, i), dim) for i in range(n)])


def batch_sample(registry: ModelRegistry, schedule: Union[Schedule, str], config: SamplerConfig, base_seed: int,
                 n: int, workers: int = 1) -> list[Trajectory]:
    """``n`` seed-paired trajectories, ordered by index whatever the worker count."""
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    schedule, plan = _plan_for(registry, schedule, config)
    z0 = initial_points(base_seed, n, _latent_dim(registry, schedule))
    chunks = [range(s, min(s + CHUNK_SIZE, n)) for s in range(0, n, CHUNK_SIZE)]

    def run(chunk: range):
        try:
            return _split(plan, *integrate(registry, plan, config, z0[chunk.start:chunk.stop]), base_seed, list(chunk))
        except StageflowError as exc:
            return exc

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    failures = [(c.start, r) for c, r in zip(chunks, results) if isinstance(r, Exception)]
    if failures:
        raise BatchSampleError(failures)
    return [traj for part in results for traj in part]


def endpoints(batch: Sequence[Trajectory]) -> np.ndarray:
    return np.stack([tr.endpoint for tr in batch])


def write_trajectory_csv(traj: Trajectory, path) -> Path:
    """Rows ``step,t,z_x,z_y,model_id``; ``model_id`` is the model that runs the step leaving that state."""
    path = Path(path)
    lines = ["step,t,z_x,z_y,model_id"]
    for k, (step, t) in enumerate(zip(traj.step_indices, traj.times)):
        mid = traj.model_ids[step] if step < len(traj.model_ids) else ""
        z = traj.states[k]
        lines.append(f"{int(step)},{float(t)!r},{float(z[0])!r},{float(z[1])!r},{mid}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_manifest(path, schedule_text: str, config: SamplerConfig, seed: int, total_flops: float, **extra) -> Path:
    path = Path(path)
    cfg = asdict(config)
    cfg["cond"] = {"class_index": config.cond.class_index, "num_classes": config.cond.num_classes}
    doc = {"schedule": schedule_text, "config": cfg, "seed": seed, "total_flops": total_flops, **extra}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path
