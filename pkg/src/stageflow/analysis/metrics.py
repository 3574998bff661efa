"""Distributional and paired-endpoint metrics on 2D sample clouds."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from ..errors import InvalidArgumentError

EIG_TOL = 1e-9


def fit_gaussian(samples) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and unbiased (n - 1) covariance."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidArgumentError("fit_gaussian needs at least two samples as rows")
    mu = x.mean(axis=0)
    centered = x - mu
    return mu, centered.T @ centered / (x.shape[0] - 1)


def _check_psd(name: str, sigma: np.ndarray) -> None:
    if sigma.shape != (2, 2):
        raise InvalidArgumentError(f"{name} must be 2x2, got shape {sigma.shape}")
    if not np.allclose(sigma, sigma.T, atol=1e-12, rtol=1e-9):
        raise InvalidArgumentError(f"{name} is not symmetric")
    low = float(np.linalg.eigvalsh(sigma).min())
    if low < -EIG_TOL:
        raise InvalidArgumentError(f"{name} has negative eigenvalue {low}")


def sqrtm_2x2(m: np.ndarray) -> np.ndarray:
    """Principal square root of a 2x2 matrix with non-negative real eigenvalues.

    Uses ``sqrt(M) = (M + s I) / sqrt(tr M + 2 s)`` with ``s = sqrt(det M)``.
    """
    det = max(float(np.linalg.det(m)), 0.0)
    s = math.sqrt(det)
    denom = float(np.trace(m)) + 2.0 * s
    if denom <= 0.0:
        return np.zeros((2, 2))
    return (m + s * np.eye(2)) / math.sqrt(denom)


def frechet_gaussian(mu1, sigma1, mu2, sigma2) -> float:
    """``|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2))`` for 2D Gaussians."""
    mu1, mu2 = np.asarray(mu1, dtype=np.float64), np.asarray(mu2, dtype=np.float64)
    s1, s2 = np.asarray(sigma1, dtype=np.float64), np.asarray(sigma2, dtype=np.float64)
    _check_psd("sigma1", s1)
    _check_psd("sigma2", s2)
    diff = mu1 - mu2
    cross = sqrtm_2x2(s1 @ s2)
    value = float(diff @ diff + np.trace(s1) + np.trace(s2) - 2.0 * np.trace(cross))
    # tiny negatives are roundoff on identical inputs
    return max(value, 0.0)


def frechet_from_samples(a, b) -> float:
    return frechet_gaussian(*fit_gaussian(a), *fit_gaussian(b))


def energy_distance(set_a, set_b) -> float:
    """``2 E|a - b| - E|a - a'| - E|b - b'|`` with every mean over all ordered pairs.

    Including the zero self-distances in the within-set means (the
    V-statistic) makes identical sets score exactly 0 and keeps the value
    non-negative; singleton sets contribute 0.
    """
    a = np.atleast_2d(np.asarray(set_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(set_b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise InvalidArgumentError("energy_distance needs non-empty sets")
    cross = cdist(a, b).mean()

    return float(2.0 * cross - cdist(a, a).mean() - cdist(b, b).mean())


def endpoint_similarity(batch_a, batch_b) -> tuple[float, float]:
    """Mean per-pair cosine and RMSE between seed-paired trajectory endpoints.

    Accepts lists of trajectories (pairing checked through their stream
    ids) or plain endpoint arrays with matching rows.
    """
    a, b = _paired_endpoints(batch_a, batch_b)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = na * nb
    dots = np.sum(a * b, axis=1)
    # two zero vectors count as identical
    cos = np.where(denom > 0, dots / np.where(denom > 0, denom, 1.0), np.where((na == 0) & (nb == 0), 1.0, 0.0))
    cos = np.clip(cos, -1.0, 1.0)
    rmse = np.sqrt(np.mean((a - b) ** 2, axis=1))
    return float(cos.mean()), float(rmse.mean())


def _paired_endpoints(batch_a, batch_b) -> tuple[np.ndarray, np.ndarray]:
    if len(batch_a) != len(batch_b) or len(batch_a) == 0:
        raise InvalidArgumentError(f"batches must be non-empty and equal in size ({len(batch_a)} vs {len(batch_b)})")
    if hasattr(batch_a[0], "endpoint"):
        for i, (ta, tb) in enumerate(zip(batch_a, batch_b)):
            if (ta.seed, ta.stream_id) != (tb.seed, tb.stream_id):
                raise InvalidArgumentError(
                    f"pair {i} is not seed-paired: ({ta.seed}, {ta.stream_id}) vs ({tb.seed}, {tb.stream_id})"
                )
        return np.stack([t.endpoint for t in batch_a]), np.stack([t.endpoint for t in batch_b])
    a = np.asarray(batch_a, dtype=np.float64)
    b = np.asarray(batch_b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"endpoint arrays differ in shape: {a.shape} vs {b.shape}")
    return np.atleast_2d(a), np.atleast_2d(b)


def pareto_front(points: Sequence[tuple[float, float]]) -> list[int]:
    """Indices of non-dominated ``(flops, metric)`` points (lower is better), sorted by flops.

    A point is dominated when another has no larger flops and no larger
    metric and is strictly better in at least one.  Exact duplicates do not
    dominate each other.
    """
    pts = [(float(f), float(m)) for f, m in points]
    order = sorted(range(len(pts)), key=lambda i: (pts[i][0], pts[i][1], i))
    front: list[int] = []
    best = math.inf  # lowest metric among strictly cheaper points
    i = 0
    while i < len(order):
        flops = pts[order[i]][0]
        j = i
        while j < len(order) and pts[order[j]][0] == flops:
            j += 1
        group = order[i:j]
        group_min = pts[group[0]][1]
        if group_min < best:
            front.extend(k for k in group if pts[k][1] == group_min)
            best = group_min
        i = j
    return front
