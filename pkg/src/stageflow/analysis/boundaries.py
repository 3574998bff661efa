"""Early/late stage boundary search.

The early boundary comes from the similarity-vs-switch-point curve: the
knee is the first point where the local slope drops to ``alpha`` times the
initial slope.  The late boundary is the argmin of a Fréchet sweep over
the trailing large-model share with the early boundary held fixed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..datasets import DatasetSpec, sample_target_arrays
from ..errors import InvalidArgumentError, NotFoundError
from ..models import ModelRegistry
from ..numerics import RngStream
from ..sampling import SamplerConfig, batch_sample, endpoints
from ..schedules import Schedule
from .metrics import endpoint_similarity, energy_distance, frechet_from_samples

DEFAULT_ALPHA = 0.1
DEFAULT_TAU = 0.96
# stream id for reference target samples; far above any trajectory index
TARGET_STREAM = 2**40


@dataclass(frozen=True)
class SimilarityCurve:
    switch_fractions: tuple[float, ...]
    cos_sim_mean: tuple[float, ...]
    rmse_mean: tuple[float, ...]
    n_seeds: int

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.switch_fractions, self.switch_fractions[1:])):
            raise InvalidArgumentError("switch fractions must be strictly increasing")

    def __len__(self) -> int:
        return len(self.switch_fractions)


@dataclass
class LateSweep:
    late_fractions: list[float]
    frechet: list[float]
    energy: list[float]
    argmin_index: int
    v_shape: bool


@dataclass
class BoundaryReport:
    early_fraction: float
    late_fraction: float
    alpha: float
    knee_index: int
    tau_fallback_fraction: Optional[float]
    late_sweep: list[tuple[float, float, float]] = field(default_factory=list)
    v_shape: bool = False
    argmin_index: int = 0
    curve: Optional[SimilarityCurve] = None

    def __post_init__(self):
        if not self.early_fraction + self.late_fraction < 1.0:
            raise InvalidArgumentError("early + late fractions must stay below 1")

    def to_json_dict(self) -> dict:
        return {
            "early_fraction": self.early_fraction,
            "late_fraction": self.late_fraction,
            "alpha": self.alpha,
            "knee_index": self.knee_index,
            "tau_fallback_fraction": self.tau_fallback_fraction,
            "v_shape": self.v_shape,
            "argmin_index": self.argmin_index,
        }


def find_knee(xs: Sequence[float], ys: Sequence[float], alpha: float = DEFAULT_ALPHA) -> tuple[int, float, float]:
    """Relative-slope knee: first ``i`` with ``s_i <= alpha * s_0`` gives ``k = i + 1``, else ``N - 1``.

    The curve should rise and then saturate in x.  On curves that start flat
    the reference slope is ~0 and the first index triggers immediately.
    """
    xs, ys = list(xs), list(ys)
    if len(xs) != len(ys):
        raise InvalidArgumentError("x and y must have equal length")
    if len(xs) < 2:
        raise InvalidArgumentError("find_knee needs at least two points")
    if not 0.0 < alpha < 1.0:
        raise InvalidArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    n = len(xs)
    slopes = []
    for i in range(n - 1):
        dx = xs[i + 1] - xs[i]
        slopes.append(0.0 if dx == 0 else (ys[i + 1] - ys[i]) / dx)
    s_ref = slopes[0]
    k = n - 1
    for i, s in enumerate(slopes):
        if s <= alpha * s_ref:
            k = i + 1
            break
    return k, xs[k], ys[k]


def find_knee_curve(curve: SimilarityCurve, alpha: float = DEFAULT_ALPHA) -> tuple[int, float, float]:
    return find_knee(curve.switch_fractions, curve.cos_sim_mean, alpha)


def find_threshold_boundary(xs: Sequence[float], ys: Sequence[float], tau: float = DEFAULT_TAU) -> float:
    """Smallest x whose similarity reaches ``tau``."""
    if not 0.0 <= tau <= 1.0:
        raise InvalidArgumentError(f"tau must lie in [0, 1], got {tau}")
    for x, y in zip(xs, ys):
        if y >= tau:
            return x
    raise NotFoundError(f"no grid point reaches similarity {tau}; best is {max(ys)}")


def _validate_grid(grid: Sequence[float], name: str) -> list[float]:
    grid = [float(g) for g in grid]
    if not grid:
        raise InvalidArgumentError(f"{name} grid is empty")
    if any(not 0.0 <= g <= 1.0 for g in grid):
        raise InvalidArgumentError(f"{name} grid values must lie in [0, 1]")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise InvalidArgumentError(f"{name} grid must be strictly increasing")
    return grid


def _schedule(parts: Sequence[tuple[str, float]]) -> Schedule:
    return Schedule.from_pairs([(mid, f) for mid, f in parts if f > 0])


def early_schedule(f: float, large: str = "L", small: str = "S") -> Schedule:
    """Large model for the leading fraction ``f``, small model for the rest."""
    return _schedule([(large, f), (small, 1.0 - f)])


def lsl_schedule(early: float, late: float, large: str = "L", small: str = "S") -> Schedule:
    return _schedule([(large, early), (small, 1.0 - early - late), (large, late)])


def early_boundary_curve(
    registry: ModelRegistry,
    config: SamplerConfig,
    grid: Sequence[float],
    n_seeds: int,
    base_seed: int = 0,
    workers: int = 1,
    large: str = "L",
    small: str = "S",
) -> SimilarityCurve:
    """Endpoint similarity to the large-only batch as the switch point moves along ``grid``."""
    grid = _validate_grid(grid, "early")
    baseline = batch_sample(registry, early_schedule(1.0, large, small), config, base_seed, n_seeds, workers)
    cos, rmse = [], []
    for f in grid:
        if f == 1.0:
            batch = baseline
        else:
            batch = batch_sample(registry, early_schedule(f, large, small), config, base_seed, n_seeds, workers)
        c, r = endpoint_similarity(batch, baseline)
        cos.append(c)
        rmse.append(r)
    return SimilarityCurve(tuple(grid), tuple(cos), tuple(rmse), n_seeds)


def target_reference(dataset: DatasetSpec, n: int, seed: int) -> np.ndarray:
    points, _ = sample_target_arrays(dataset, RngStream(seed, TARGET_STREAM), n)
    return points


def late_boundary_sweep(
    registry: ModelRegistry,
    config: SamplerConfig,
    early_fraction: float,
    grid: Sequence[float],
    dataset: DatasetSpec,
    n_samples: int,
    base_seed: int = 0,
    workers: int = 1,
    large: str = "L",
    small: str = "S",
) -> LateSweep:
    """Fréchet and energy distance to fresh target samples for each trailing large-model share."""
    grid = _validate_grid(grid, "late")
    if any(early_fraction + g >= 1.0 for g in grid):
        raise InvalidArgumentError(f"early {early_fraction} + late fraction must stay below 1 for every grid value")
    target = target_reference(dataset, n_samples, base_seed)
    fr, en = [], []
    for g in grid:
        batch = batch_sample(registry, lsl_schedule(early_fraction, g, large, small), config, base_seed, n_samples, workers)
        ends = endpoints(batch)
        fr.append(frechet_from_samples(ends, target))
        en.append(energy_distance(ends, target))
    idx, v = argmin_v_shape(fr)
    return LateSweep(grid, fr, en, idx, v)


def argmin_v_shape(values: Sequence[float]) -> tuple[int, bool]:
    """Index of the minimum (first on ties) and whether it lies strictly inside the grid."""
    if not values:
        raise InvalidArgumentError("empty sweep")
    idx = int(np.argmin(values))
    return idx, 0 < idx < len(values) - 1


def choose_boundaries(
    registry: ModelRegistry,
    config: SamplerConfig,
    early_grid: Sequence[float],
    late_grid: Sequence[float],
    dataset: DatasetSpec,
    n_seeds: int,
    alpha: float = DEFAULT_ALPHA,
    tau: float = DEFAULT_TAU,
    base_seed: int = 0,
    workers: int = 1,
) -> tuple[BoundaryReport, LateSweep]:
    """Full boundary pipeline: similarity curve, knee, tau fallback, then the late sweep.

    The knee is read on the curve as a function of the large-model share,
    which rises and saturates.  If the knee lands on the large-only end, or
    leaves no room for a late segment, the tau threshold boundary is used.
    """
    curve = early_boundary_curve(registry, config, early_grid, n_seeds, base_seed, workers)
    k, x_k, _ = find_knee_curve(curve, alpha)
    try:
        tau_frac: Optional[float] = find_threshold_boundary(curve.switch_fractions, curve.cos_sim_mean, tau)
    except NotFoundError:
        tau_frac = None
    early = x_k
    usable_late = [g for g in late_grid if early + g < 1.0]
    if (early >= 1.0 or not usable_late) and tau_frac is not None and tau_frac < 1.0:
        early = tau_frac
        usable_late = [g for g in late_grid if early + g < 1.0]
    if not usable_late:
        raise InvalidArgumentError(f"no late grid value fits after early boundary {early}")
    sweep = late_boundary_sweep(registry, config, early, usable_late, dataset, n_seeds, base_seed, workers)
    report = BoundaryReport(
        early_fraction=early,
        late_fraction=sweep.late_fractions[sweep.argmin_index],
        alpha=alpha,
        knee_index=k,
        tau_fallback_fraction=tau_frac,
        late_sweep=list(zip(sweep.late_fractions, sweep.frechet, sweep.energy)),
        v_shape=sweep.v_shape,
        argmin_index=sweep.argmin_index,
        curve=curve,
    )
    return report, sweep


def write_early_curve_csv(curve: SimilarityCurve, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["switch_fraction", "cos_sim_mean", "rmse_mean"])
        for row in zip(curve.switch_fractions, curve.cos_sim_mean, curve.rmse_mean):
            w.writerow([repr(v) for v in row])
    return path


def write_late_sweep_csv(sweep: LateSweep, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["late_fraction", "frechet", "energy"])
        for row in zip(sweep.late_fractions, sweep.frechet, sweep.energy):
            w.writerow([repr(v) for v in row])
    return path


def write_boundary_report(report: BoundaryReport, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n")
    return path
