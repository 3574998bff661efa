import csv
import json

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_knee, brute_force_pareto
from stageflow.analysis import (
    SimilarityCurve,
    argmin_v_shape,
    choose_boundaries,
    early_boundary_curve,
    endpoint_similarity,
    energy_distance,
    find_knee,
    find_knee_curve,
    find_threshold_boundary,
    fit_gaussian,
    frechet_from_samples,
    frechet_gaussian,
    late_boundary_sweep,
    pareto_front,
    schedule_sweep,
    sweep_pareto,
    velocity_divergence_profile,
    write_divergence_csv,
    write_sweep_csv,
)
from stageflow.datasets import DatasetSpec
from stageflow.errors import InvalidArgumentError, NotFoundError
from stageflow.models import Condition, MlpSpec, ModelRegistry, VelocityModel, evaluate_velocity
from stageflow.numerics import RngStream, init_params
from stageflow.sampling import SamplerConfig, batch_sample, initial_points, integrate
from stageflow.schedules import parse_schedule, realize_plan

XS = [0, 25, 50, 75, 100]
YS = [0.60, 0.95, 0.97, 0.975, 0.978]


def pair_registry(same=False):
    spec = MlpSpec.for_latent(2, [16, 16], 8)
    L = VelocityModel.learned("L", spec, init_params(spec.dims, RngStream(1)))
    if same:
        return ModelRegistry({"L": L, "S": L.renamed("S")})
    spec_s = MlpSpec.for_latent(2, [4], 8)
    return ModelRegistry({"L": L, "S": VelocityModel.learned("S", spec_s, init_params(spec_s.dims, RngStream(2)))})


class TestDivergence:
    def test_self_is_zero(self):
        reg = pair_registry()
        curve = velocity_divergence_profile(reg, "L", "L", SamplerConfig(), 8)
        for col in ("cos_mean", "cos_std", "l2_mean", "l2_std"):
            assert all(v == 0.0 for v in curve.column(col))

    def test_scaled_control(self):
        reg = pair_registry()
        reg = reg.register(reg["L"].renamed("D", scale=2.0))
        cfg = SamplerConfig()
        curve = velocity_divergence_profile(reg, "L", "D", cfg, 16)
        assert max(curve.column("cos_mean")) <= 1e-12
        # per-step recomputation of mean |v_L| along the L trajectory
        plan = realize_plan(parse_schedule("L"), cfg.total_steps)
        _, states, _ = integrate(reg, plan, cfg, initial_points(0, 16, 2))
        for i, p in enumerate(curve.points):
            v = evaluate_velocity(reg["L"], states[i], plan.steps[i].t_start)
            assert abs(p.l2_mean - np.linalg.norm(v, axis=1).mean()) < 1e-9

    def test_negated_control(self):
        reg = pair_registry()
        reg = reg.register(reg["L"].renamed("N", scale=-1.0))
        curve = velocity_divergence_profile(reg, "L", "N", SamplerConfig(), 4)
        assert all(c == 2.0 for c in curve.column("cos_mean"))

    def test_range_and_missing(self):
        reg = pair_registry()
        curve = velocity_divergence_profile(reg, "L", "S", SamplerConfig(), 4)
        assert all(0.0 <= c <= 2.0 for c in curve.column("cos_mean"))
        with pytest.raises(NotFoundError):
            velocity_divergence_profile(reg, "L", "D", SamplerConfig(), 4)

    def test_cond_branch_and_csv(self, tmp_path):
        reg = pair_registry()
        cfg = SamplerConfig(guidance=1.5, cond=Condition(1, 8))
        curves = [velocity_divergence_profile(reg, "L", "S", cfg, 4, b) for b in ("cond", "uncond")]
        lines = write_divergence_csv(curves, tmp_path / "d.csv").read_text().splitlines()
        assert lines[0] == "step,t,branch,cos_mean,cos_std,l2_mean,l2_std"
        assert len(lines) == 1 + 2 * 50


class TestEndpointSimilarity:
    def test_identical(self):
        b = batch_sample(pair_registry(), "LLL", SamplerConfig(), 0, 5)
        assert endpoint_similarity(b, b) == (1.0, 0.0)

    def test_hand_values(self):
        cos, rmse = endpoint_similarity(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
        assert cos == 0.0 and rmse == pytest.approx(1.0)

    def test_unpaired(self):
        reg = pair_registry()
        a = batch_sample(reg, "LLL", SamplerConfig(), 0, 3)
        b = batch_sample(reg, "LLL", SamplerConfig(), 1, 3)
        with pytest.raises(InvalidArgumentError):
            endpoint_similarity(a, b)


class TestKnee:
    def test_hand_trace(self):
        assert find_knee(XS, YS, 0.1) == (2, 50, 0.97)

    def test_linear(self):
        xs = list(range(10))
        assert find_knee(xs, [0.5 * x for x in xs], 0.7)[0] == 9

    def test_two_points(self):
        assert find_knee([0, 1], [0, 1], 0.5)[0] == 1

    def test_too_short(self):
        with pytest.raises(InvalidArgumentError):
            find_knee([0], [1], 0.1)

    def test_random_curves_match_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(5, 51))
            xs = np.sort(rng.uniform(0, 1, n)).tolist()
            ys = np.cumsum(rng.exponential(1.0, n) * (rng.uniform(size=n) < 0.8)).tolist()
            alpha = float(rng.uniform(1e-6, 1 - 1e-6))
            assert find_knee(xs, ys, alpha)[0] == brute_force_knee(xs, ys, alpha)


class TestThreshold:
    def test_hand_trace(self):
        assert find_threshold_boundary(XS, YS, 0.96) == 50

    def test_zero(self):
        assert find_threshold_boundary(XS, YS, 0.0) == 0

    def test_not_found(self):
        with pytest.raises(NotFoundError):
            find_threshold_boundary(XS, YS, 0.999)


class TestEarlyCurve:
    def test_endpoints_of_grid(self):
        reg = pair_registry()
        cfg = SamplerConfig()
        curve = early_boundary_curve(reg, cfg, [0.0, 0.5, 1.0], 8)
        assert curve.cos_sim_mean[-1] == 1.0
        sss = endpoint_similarity(batch_sample(reg, "SSS", cfg, 0, 8), batch_sample(reg, "LLL", cfg, 0, 8))
        assert curve.cos_sim_mean[0] == sss[0]

    def test_identical_models_flat(self):
        curve = early_boundary_curve(pair_registry(same=True), SamplerConfig(), [0.0, 0.3, 0.7, 1.0], 8)
        assert all(c == 1.0 for c in curve.cos_sim_mean)

    def test_grid_validation(self):
        with pytest.raises(InvalidArgumentError):
            early_boundary_curve(pair_registry(), SamplerConfig(), [0.5, 0.2], 4)

    def test_curve_orientation_guard(self):
        with pytest.raises(InvalidArgumentError):
            SimilarityCurve((0.0, 0.0), (1.0, 1.0), (0.0, 0.0), 2)


class TestLateSweep:
    def test_v_shape_values(self):
        assert argmin_v_shape([3.0, 2.1, 2.6]) == (1, True)

    def test_monotone(self):
        assert argmin_v_shape([3.0, 2.0, 1.0]) == (2, False)

    def test_overlapping_grid(self):
        with pytest.raises(InvalidArgumentError):
            late_boundary_sweep(pair_registry(), SamplerConfig(), 0.7, [0.1, 0.3], DatasetSpec(), 4)

    def test_identical_models_constant(self):
        sweep = late_boundary_sweep(pair_registry(same=True), SamplerConfig(), 0.4, [0.0, 0.1, 0.2], DatasetSpec(), 16)
        assert len(set(sweep.frechet)) == 1 and not sweep.v_shape

    def test_choose_boundaries(self):
        report, sweep = choose_boundaries(pair_registry(), SamplerConfig(), [0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
                                          [0.0, 0.1, 0.2], DatasetSpec(), 16)
        assert report.early_fraction + report.late_fraction < 1
        assert 0 <= report.argmin_index < len(sweep.late_fractions)
        assert set(report.to_json_dict()) == {"early_fraction", "late_fraction", "alpha", "knee_index",
                                              "tau_fallback_fraction", "v_shape", "argmin_index"}


class TestMetrics:
    def test_fit_gaussian(self):
        mu, sigma = fit_gaussian([[0, 0], [2, 0]])
        assert np.array_equal(mu, [1, 0]) and np.array_equal(sigma, [[2, 0], [0, 0]])

    def test_fit_identical(self):
        assert not fit_gaussian([[1, 2]] * 5)[1].any()

    def test_fit_single(self):
        with pytest.raises(InvalidArgumentError):
            fit_gaussian([[1, 2]])

    def test_frechet_examples(self):
        eye = np.eye(2)
        assert abs(frechet_gaussian([0, 0], eye, [0, 0], eye)) <= 1e-9
        assert frechet_gaussian([0, 0], eye, [3, 4], eye) == pytest.approx(25, abs=1e-6)
        assert frechet_gaussian([0, 0], 4 * eye, [0, 0], eye) == pytest.approx(2, abs=1e-6)

    def test_frechet_not_psd(self):
        with pytest.raises(InvalidArgumentError):
            frechet_gaussian([0, 0], np.diag([1.0, -0.1]), [0, 0], np.eye(2))

    def test_frechet_vs_scipy(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a, b = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
            s1, s2 = a @ a.T, b @ b.T
            m1, m2 = rng.normal(size=2), rng.normal(size=2)
            covmean = scipy.linalg.sqrtm(s1 @ s2).real
            ref = np.sum((m1 - m2) ** 2) + np.trace(s1 + s2 - 2 * covmean)
            got = frechet_gaussian(m1, s1, m2, s2)
            assert got == pytest.approx(ref, rel=1e-8, abs=1e-9)
            assert got == pytest.approx(frechet_gaussian(m2, s2, m1, s1), abs=1e-9)

    def test_frechet_samples_self(self):
        x = np.random.default_rng(0).normal(size=(100, 2))
        assert abs(frechet_from_samples(x, x)) <= 1e-9

    def test_energy(self):
        x = np.random.default_rng(1).normal(size=(50, 2))
        assert abs(energy_distance(x, x)) <= 1e-12
        assert energy_distance([[0, 0]], [[1, 0]]) == 2.0
        assert energy_distance([[0, 0], [1, 0]], [[0, 0], [1, 0]]) == 0.0
        with pytest.raises(InvalidArgumentError):
            energy_distance(np.zeros((0, 2)), x)

    def test_energy_same_distribution(self):
        rng = np.random.default_rng(2)
        assert energy_distance(rng.normal(size=(2000, 2)), rng.normal(size=(2000, 2))) < 0.05

    def test_energy_vs_loops(self):
        rng = np.random.default_rng(4)
        a, b = rng.normal(size=(7, 2)), rng.normal(size=(5, 2)) + 1

        def mean_dist(p, q, distinct):
            d = [np.linalg.norm(x - y) for i, x in enumerate(p) for j, y in enumerate(q) if not (distinct and i == j)]
            return sum(d) / len(d)

        ref = 2 * mean_dist(a, b, False) - mean_dist(a, a, False) - mean_dist(b, b, False)
        assert energy_distance(a, b) == pytest.approx(ref, abs=1e-12)


class TestPareto:
    def test_hand(self):
        assert pareto_front([(1, 5), (2, 3), (3, 4)]) == [0, 1]

    def test_single(self):
        assert pareto_front([(4, 4)]) == [0]

    def test_random_vs_brute_force(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            pts = [tuple(p) for p in rng.uniform(size=(200, 2))]
            assert pareto_front(pts) == brute_force_pareto(pts)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=30))
def test_pareto_property_with_ties(points):
    assert pareto_front(points) == brute_force_pareto(points)


@settings(max_examples=300, deadline=None)
@given(
    steps=st.lists(st.floats(0, 1), min_size=2, max_size=40),
    alpha=st.floats(0.01, 0.99),
)
def test_knee_property(steps, alpha):
    ys = np.cumsum(steps).tolist()
    xs = list(range(len(ys)))
    assert find_knee(xs, ys, alpha)[0] == brute_force_knee(xs, ys, alpha)


class TestSweep:
    def test_full_sweep(self, tmp_path):
        reg = ModelRegistry({
            "L": VelocityModel.analytic_gaussian("L", (4.0, 0.0), 0.3),
            "S": VelocityModel.analytic_gaussian("S", (3.0, 1.0), 0.6),
        })
        reports = schedule_sweep(reg, SamplerConfig(total_steps=48), 8, DatasetSpec(), 16,
                                 pricing={"L": 10.0, "S": 1.0})
        assert len(reports) == 256
        assert reports[0].schedule_text == "LLLLLLLL" and reports[0].endpoint_cos_vs_ref == 1.0
        for r in reports:
            assert r.total_flops == 6 * (10 * r.schedule_text.count("L") + r.schedule_text.count("S"))
        front = sweep_pareto(reports)
        assert front == brute_force_pareto([(r.total_flops, r.frechet) for r in reports])
        path = write_sweep_csv(reports, tmp_path / "sweep.csv")
        rows = list(csv.DictReader(path.open()))
        assert list(rows[0]) == ["schedule", "flops", "frechet", "energy", "endpoint_cos_vs_LLL"]
        assert len(rows) == 256
