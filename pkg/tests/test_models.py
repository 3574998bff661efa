import numpy as np
import pytest

from stageflow.errors import ConflictError, InvalidArgumentError, NotFoundError, ShapeError
from stageflow.models import (
    UNCONDITIONAL,
    Condition,
    MlpSpec,
    ModelRegistry,
    VelocityModel,
    analytic_ot_velocity,
    evaluate_velocity,
    flops_formula,
    guidance_evals,
    guided_velocity,
    lookup,
    register_model,
)
from stageflow.numerics import RngStream, init_params


class TestFlops:
    def test_hand_count(self):
        assert flops_formula(MlpSpec(2, (32, 32), 2)) == 2434

    def test_single_linear(self):
        assert flops_formula(MlpSpec(1, (), 1)) == 3

    def test_default_pair(self):
        assert flops_formula(MlpSpec.for_latent(2, [256, 256, 256], 8)) == 7424 + 2 * 131328 + 1026 + 768  # 271874
        assert flops_formula(MlpSpec.for_latent(2, [32, 32], 8)) == 3202

    def test_equal_specs_equal_counts(self):
        assert flops_formula(MlpSpec(4, (7,), 2)) == flops_formula(MlpSpec(4, (7,), 2))

    def test_learned_model_carries_price(self, random_model):
        assert random_model.flops_per_eval == flops_formula(random_model.spec)


class TestEvaluateVelocity:
    def test_zero_params(self):
        spec = MlpSpec.for_latent(2, [8], 8)
        model = VelocityModel.learned("Z", spec, init_params(spec.dims, RngStream(0)).zeros_like())
        for t in (0.0, 0.3, 1.0):
            assert not evaluate_velocity(model, np.array([1.5, -2.0]), t, Condition(3, 8)).any()

    def test_analytic_symmetric_midpoint(self):
        model = VelocityModel.analytic_gaussian("G", (0.0, 0.0), 1.0)
        assert np.allclose(evaluate_velocity(model, np.array([3.0, -1.0]), 0.5), 0.0, atol=1e-15)

    def test_time_out_of_range(self, random_model):
        with pytest.raises(InvalidArgumentError):
            evaluate_velocity(random_model, np.zeros(2), 1.3)

    def test_dim_mismatch(self, random_model):
        with pytest.raises(ShapeError):
            evaluate_velocity(random_model, np.zeros(3), 0.5)

    def test_pure(self, random_model):
        z = np.array([0.3, 0.7])
        assert np.array_equal(evaluate_velocity(random_model, z, 0.2), evaluate_velocity(random_model, z, 0.2))

    def test_scale(self, random_model):
        z = np.array([0.3, 0.7])
        doubled = random_model.renamed("L2", scale=2.0)
        assert np.array_equal(evaluate_velocity(doubled, z, 0.2), 2.0 * evaluate_velocity(random_model, z, 0.2))


class TestAnalyticVelocity:
    def test_midpoint_zero(self):
        assert np.allclose(analytic_ot_velocity((0, 0), 1.0, [5.0, 2.0], 0.5), 0.0, atol=1e-15)

    def test_t1_returns_z(self):
        assert np.allclose(analytic_ot_velocity((1, 0), 1.0, [3.0, 4.0], 1.0), [3.0, 4.0])

    def test_t0_sigma2(self):
        assert np.allclose(analytic_ot_velocity((0, 0), 2.0, [1.0, 1.0], 0.0), [-1.0, -1.0])

    def test_sigma_nonpositive(self):
        with pytest.raises(InvalidArgumentError):
            analytic_ot_velocity((0, 0), 0.0, [1.0, 1.0], 0.5)

    def test_t1_monte_carlo(self):
        # at t = 1, z_t = z1 exactly, so conditioning fixes z1 and z0 stays N(0, I)
        rng = np.random.default_rng(0)
        z0 = rng.standard_normal((1_000_000, 2))
        diff = np.array([3.0, 4.0]) - z0
        se = diff.std(axis=0) / np.sqrt(len(diff))
        assert np.all(np.abs(diff.mean(axis=0) - analytic_ot_velocity((1, 0), 1.0, [3.0, 4.0], 1.0)) < 3 * se)

    def test_t0_monte_carlo(self):
        # at t = 0, z_t = z0 exactly and z1 ~ N(mu, sigma^2 I) independently
        rng = np.random.default_rng(1)
        z1 = 2.0 * rng.standard_normal((1_000_000, 2))
        diff = z1 - np.array([1.0, 1.0])
        se = diff.std(axis=0) / np.sqrt(len(diff))
        assert np.all(np.abs(diff.mean(axis=0) - analytic_ot_velocity((0, 0), 2.0, [1.0, 1.0], 0.0)) < 3 * se)

    @pytest.mark.parametrize("case", range(4))
    def test_binned_conditional_average(self, case):
        """E[z1 - z0 | z_t in bin] against the field averaged over the same bin (tower property)."""
        rng = np.random.default_rng(100 + case)
        mu = rng.uniform(-3, 3, 2)
        sigma = rng.uniform(0.3, 2.0)
        t = rng.uniform(0.1, 0.9)
        n = 1_000_000
        z0 = rng.standard_normal((n, 2))
        z1 = mu + sigma * rng.standard_normal((n, 2))
        zt = (1 - t) * z0 + t * z1
        centre = t * mu + 0.3 * np.sqrt((1 - t) ** 2 + t * t * sigma * sigma)
        h = 0.1 * np.sqrt((1 - t) ** 2 + t * t * sigma * sigma)
        inside = np.all(np.abs(zt - centre) < h, axis=1)
        assert inside.sum() > 1000
        diff = (z1 - z0)[inside]
        se = diff.std(axis=0) / np.sqrt(len(diff))
        predicted = analytic_ot_velocity(mu, sigma, zt[inside], t).mean(axis=0)
        assert np.all(np.abs(diff.mean(axis=0) - predicted) < 3 * se)


class TestGuidance:
    def _fields(self):
        spec = MlpSpec.for_latent(2, [8], 4)
        return VelocityModel.learned("L", spec, init_params(spec.dims, RngStream(2)))

    def test_g0_unconditional(self):
        m = self._fields()
        z = np.array([0.1, -0.4])
        assert np.array_equal(guided_velocity(m, z, 0.3, Condition(1, 4), 0.0), evaluate_velocity(m, z, 0.3))

    def test_g1_conditional(self):
        m = self._fields()
        z = np.array([0.1, -0.4])
        c = Condition(1, 4)
        assert np.array_equal(guided_velocity(m, z, 0.3, c, 1.0), evaluate_velocity(m, z, 0.3, c))

    def test_linear_extrapolation(self):
        # hand check with a conditional analytic stand-in: v_cond = (1, 0), v_uncond = (0, 0)
        v_c, v_u = np.array([1.0, 0.0]), np.zeros(2)
        assert np.array_equal(v_u + 2.0 * (v_c - v_u), [2.0, 0.0])
        m = self._fields()
        z = np.array([0.2, 0.2])
        c = Condition(2, 4)
        vc, vu = evaluate_velocity(m, z, 0.6, c), evaluate_velocity(m, z, 0.6)
        assert np.allclose(guided_velocity(m, z, 0.6, c, 2.0), vu + 2.0 * (vc - vu), rtol=0, atol=1e-15)

    def test_affine_in_g(self):
        m = self._fields()
        z = np.array([0.2, 0.9])
        c = Condition(0, 4)
        g0 = guided_velocity(m, z, 0.4, c, 0.0)
        g1 = guided_velocity(m, z, 0.4, c, 1.0)
        for g in (0.5, 1.5, 3.0):
            assert np.allclose(guided_velocity(m, z, 0.4, c, g), g0 + g * (g1 - g0), rtol=0, atol=1e-14)

    def test_unconditional_rejected(self):
        with pytest.raises(InvalidArgumentError):
            guided_velocity(self._fields(), np.zeros(2), 0.5, UNCONDITIONAL, 1.5)

    def test_eval_counts(self):
        assert guidance_evals(UNCONDITIONAL, 1.5) == 1
        assert guidance_evals(Condition(0, 4), 1.0) == 1
        assert guidance_evals(Condition(0, 4), 1.5) == 2


class TestRegistry:
    def test_register_lookup(self, random_model):
        reg = register_model(ModelRegistry(), random_model)
        assert lookup(reg, "L") is random_model

    def test_duplicate(self, random_model):
        reg = register_model(ModelRegistry(), random_model)
        with pytest.raises(ConflictError):
            register_model(reg, random_model)

    def test_missing(self):
        with pytest.raises(NotFoundError):
            lookup(ModelRegistry(), "D")

    def test_register_returns_new_registry(self, random_model):
        empty = ModelRegistry()
        register_model(empty, random_model)
        assert len(empty) == 0
