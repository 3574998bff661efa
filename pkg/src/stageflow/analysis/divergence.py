"""Per-timestep velocity divergence between two models along one model's trajectory."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import InvalidArgumentError
from ..models import ModelRegistry, evaluate_velocity
from ..sampling import SamplerConfig, initial_points, integrate
from ..schedules import Schedule, realize_plan

NORM_FLOOR = 1e-12
BRANCHES = ("cond", "uncond")


@dataclass(frozen=True)
class DivergencePoint:
    step: int
    t: float
    cos_mean: float
    cos_std: float
    l2_mean: float
    l2_std: float


@dataclass(frozen=True)
class DivergenceCurve:
    points: tuple[DivergencePoint, ...]
    branch: str
    mainstream_id: str
    other_id: str
    n_samples: int

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(p, name) for p in self.points])


def cosine_distance(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Row-wise ``1 - cos(u, v)``; zero when either norm is below 1e-12 or the rows are equal."""
    nu = np.linalg.norm(u, axis=-1)
    nv = np.linalg.norm(v, axis=-1)
    ok = (nu >= NORM_FLOOR) & (nv >= NORM_FLOOR)
    safe = np.where(ok, nu * nv, 1.0)
    cos = np.clip(np.sum(u * v, axis=-1) / safe, -1.0, 1.0)
    # equal rows are exactly zero rather than a rounding residue of u.u / |u|^2
    return np.where(ok & np.any(u != v, axis=-1), 1.0 - cos, 0.0)


def velocity_divergence_profile(
    registry: ModelRegistry,
    mainstream_id: str,
    other_id: str,
    config: SamplerConfig,
    n_seeds: int,
    branch: str = "uncond",
    base_seed: int = 0,
) -> DivergenceCurve:
    """Integrate with ``mainstream_id`` alone and compare both models at every visited ``(z_i, t_i)``.

    The trajectory itself follows ``config`` (solver, guidance); the two
    velocities compared at each step are raw single-branch evaluations.
    """
    if n_seeds < 2:
        raise InvalidArgumentError(f"n_seeds must be >= 2, got {n_seeds}")
    if branch not in BRANCHES:
        raise InvalidArgumentError(f"branch must be one of {BRANCHES}, got {branch!r}")
    main = registry.lookup(mainstream_id)
    other = registry.lookup(other_id)
    if branch == "cond" and not config.cond.is_conditional:
        raise InvalidArgumentError("the cond branch needs a class-conditional sampler config")
    cond = config.cond if branch == "cond" else config.cond.unconditional()
    plan = realize_plan(Schedule.from_pairs([(mainstream_id, 1.0)]), config.total_steps)
    full = SamplerConfig(config.total_steps, config.solver, config.guidance, config.cond, 1)
    z0 = initial_points(base_seed, n_seeds, main.latent_dim)
    _, states, _ = integrate(registry, plan, full, z0)
    points = []
    for i, step in enumerate(plan.steps):
        z = states[i]
        v_main = evaluate_velocity(main, z, step.t_start, cond)
        v_other = evaluate_velocity(other, z, step.t_start, cond)
        cos_d = cosine_distance(v_main, v_other)
        l2 = np.linalg.norm(v_main - v_other, axis=1)
        points.append(DivergencePoint(i, step.t_start, float(cos_d.mean()), float(cos_d.std()),
                                      float(l2.mean()), float(l2.std())))
    return DivergenceCurve(tuple(points), branch, mainstream_id, other_id, n_seeds)


def write_divergence_csv(curves: Sequence[DivergenceCurve], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "t", "branch", "cos_mean", "cos_std", "l2_mean", "l2_std"])
        for curve in curves:
            for p in curve.points:
                w.writerow([p.step, repr(p.t), curve.branch, repr(p.cos_mean), repr(p.cos_std),
                            repr(p.l2_mean), repr(p.l2_std)])
    return path
