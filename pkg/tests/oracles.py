"""Independent reference solutions used by several test modules."""

import numpy as np

from stageflow.models import analytic_ot_velocity

MU = np.array([4.0, 0.0])
SIGMA = 0.3


def closed_form_flow(z0, mu=MU, sigma=SIGMA, t=1.0):
    """Exact ODE solution for the Gaussian field: z_t = t mu + sqrt((1-t)^2 + t^2 s^2) z0."""
    return t * np.asarray(mu) + np.sqrt((1 - t) ** 2 + t * t * sigma * sigma) * np.asarray(z0)


def rk4_flow(z0, n_steps=100_000, mu=MU, sigma=SIGMA):
    """Classical RK4 on a uniform grid, vectorised over rows of ``z0``."""
    z = np.array(z0, dtype=np.float64)
    h = 1.0 / n_steps
    for i in range(n_steps):
        t = i * h
        k1 = analytic_ot_velocity(mu, sigma, z, t)
        k2 = analytic_ot_velocity(mu, sigma, z + 0.5 * h * k1, t + 0.5 * h)
        k3 = analytic_ot_velocity(mu, sigma, z + 0.5 * h * k2, t + 0.5 * h)
        k4 = analytic_ot_velocity(mu, sigma, z + h * k3, min(t + h, 1.0))
        z = z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return z


def brute_force_knee(xs, ys, alpha):
    n = len(xs)
    slopes = [0.0 if xs[i + 1] == xs[i] else (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]) for i in range(n - 1)]
    for i, s in enumerate(slopes):
        if s <= alpha * slopes[0]:
            return i + 1
    return n - 1


def brute_force_pareto(points):
    keep = []
    for i, (fi, mi) in enumerate(points):
        dominated = any(
            fj <= fi and mj <= mi and (fj < fi or mj < mi) for j, (fj, mj) in enumerate(points) if j != i
        )
        if not dominated:
            keep.append(i)
    return sorted(keep, key=lambda i: (points[i][0], points[i][1], i))
