"""Toy 2D target distributions."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import InvalidArgumentError, UnsupportedError
from .numerics import RngStream

KINDS = ("gaussian_ring", "two_moons", "checkerboard")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "gaussian_ring"
    num_modes: int = 8
    radius: float = 4.0
    mode_std: float = 0.3
    noise_std: float = 0.1
    cells: int = 4

    def validate(self) -> "DatasetSpec":
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "gaussian_ring":
            if self.num_modes < 1:
                raise InvalidArgumentError("num_modes must be >= 1")
            if not self.radius > 0:
                raise InvalidArgumentError("radius must be > 0")
            if not self.mode_std > 0:
                raise InvalidArgumentError("mode_std must be > 0")
        elif self.kind == "two_moons":
            if self.noise_std < 0:
                raise InvalidArgumentError("noise_std must be >= 0")
        elif self.cells < 2 or self.cells % 2:
            raise InvalidArgumentError("cells must be an even integer >= 2")
        return self

    @property
    def num_classes(self) -> int:
        return self.num_modes if self.kind == "gaussian_ring" else 1

    def to_dict(self) -> dict:
        if self.kind == "gaussian_ring":
            keys = ("num_modes", "radius", "mode_std")
        elif self.kind == "two_moons":
            keys = ("noise_std",)
        else:
            keys = ("cells",)
        return {"kind": self.kind, **{k: getattr(self, k) for k in keys}}


class LabeledSample(NamedTuple):
    point: np.ndarray
    label: int


def mode_centers(spec: DatasetSpec) -> np.ndarray:
    """Ring centres ``radius * (cos 2pi k/m, sin 2pi k/m)`` in label order, shape (m, 2)."""
    spec.validate()
    if spec.kind != "gaussian_ring":
        raise UnsupportedError(f"mode_centers is only defined for gaussian_ring, not {spec.kind}")
    angles = 2.0 * np.pi * np.arange(spec.num_modes) / spec.num_modes
    return spec.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def sample_target_arrays(spec: DatasetSpec, rng: RngStream, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``n`` target points as an (n, 2) array plus integer labels."""
    spec.validate()
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    if spec.kind == "gaussian_ring":
        labels = rng.integers(spec.num_modes, n)
        points = mode_centers(spec)[labels] + spec.mode_std * rng.normal((n, 2))
        return points, labels
    labels = np.zeros(n, dtype=np.int64)
    if spec.kind == "two_moons":
        # outer arc, then inner arc shifted by (1, -0.5)
        upper = rng.integers(2, n) == 0
        theta = rng.uniform(n, 0.0, np.pi)
        x = np.where(upper, np.cos(theta), 1.0 - np.cos(theta))
        y = np.where(upper, np.sin(theta), 0.5 - np.sin(theta))
        points = np.stack([x, y], axis=1) + spec.noise_std * rng.normal((n, 2))
        return points, labels
    # checkerboard: cells x cells unit squares centred on the origin, (i + j) even filled
    c = spec.cells
    col = rng.integers(c, n)
    row = 2 * rng.integers(c // 2, n) + (col % 2)
    offset = rng.uniform((n, 2))
    points = np.stack([col, row], axis=1) + offset - c / 2.0
    return points, labels


def sample_target(spec: DatasetSpec, rng: RngStream, n: int) -> list[LabeledSample]:
    points, labels = sample_target_arrays(spec, rng, n)
    return [LabeledSample(p, int(k)) for p, k in zip(points, labels)]


def dump_csv(points: np.ndarray, labels: np.ndarray, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "label"])
        for (x, y), k in zip(points, labels):
            w.writerow([repr(float(x)), repr(float(y)), int(k)])
    return path
