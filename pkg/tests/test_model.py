import numpy as np
import pytest

from ci_stonet.errors import ConfigurationError, DimensionError, NumericError
from ci_stonet.model import (
    DagVariant,
    Dataset,
    StoNetConfig,
    build_model,
    evaluate,
    latent_conditional_mean,
    latent_log_density_grad,
    log_density,
    model_from_dict,
    model_to_dict,
    param_log_density_grads,
    predict_outcome,
)
from ci_stonet.nn import MlpParams, mlp_forward
from oracles import central_fd, rel_err
from scenarios import model_gradient_suite, small_data, small_model

VARIANTS = list(DagVariant)


@pytest.mark.parametrize("variant", VARIANTS)
def test_gradients_gaussian_heads(variant):
    assert model_gradient_suite(variant, False) < 1e-5


@pytest.mark.parametrize("variant", [v for v in VARIANTS if v.uses_proxy])
def test_gradients_binary_treatment(variant):
    assert model_gradient_suite(variant, True) < 1e-5


class TestBuild:
    def test_simple_layer_widths(self):
        m = build_model(StoNetConfig(DagVariant.SIMPLE, d_A=9, d_z=6, latent_hidden=(32,), outcome_hidden=(32, 6)))
        assert m.latent_spec.layer_widths == (9, 32, 6)
        assert m.outcome_spec.layer_widths == (15, 32, 6, 1)
        assert m.treatment_spec is None

    def test_proxy_needs_x(self):
        with pytest.raises(ConfigurationError):
            build_model(StoNetConfig(DagVariant.BASIC_PROXY, d_X=0))

    def test_zero_latent(self):
        with pytest.raises(ConfigurationError):
            build_model(StoNetConfig(d_z=0))

    def test_positive_variances(self):
        with pytest.raises(ConfigurationError):
            build_model(StoNetConfig(sigma_y2=0.0))
        with pytest.raises(ConfigurationError):
            build_model(StoNetConfig(DagVariant.BASIC_PROXY, d_X=2, sigma_a2=0.0))

    @pytest.mark.parametrize("variant,out_in,t_in", [
        (DagVariant.BASIC_PROXY, 2 + 1, 2),
        (DagVariant.OUTCOME_PROXY, 2 + 1 + 3, 2),
        (DagVariant.TREATMENT_PROXY, 2 + 1, 2 + 3),
    ])
    def test_wiring(self, variant, out_in, t_in):
        m = small_model(variant, binary=True)
        assert m.latent_spec.d_in == 3
        assert m.outcome_spec.d_in == out_in
        assert m.treatment_spec.d_in == t_in
        assert m.treatment_spec.output_activation.value == "sigmoid"

    def test_binary_flag_ignored_for_simple(self):
        assert not small_model(DagVariant.SIMPLE, binary=True).binary_treatment

    def test_deterministic(self):
        a, b = small_model(DagVariant.BASIC_PROXY, seed=4), small_model(DagVariant.BASIC_PROXY, seed=4)
        assert model_to_dict(a) == model_to_dict(b)


class TestLatentMean:
    def test_zero_weights_give_bias(self, rng):
        m = small_model(DagVariant.SIMPLE)
        for W in m.latent_params.weights:
            W[:] = 0
        m.latent_params.biases[-1][:] = [0.25, -1.0]
        out = latent_conditional_mean(m, small_data(m, rng))
        assert np.array_equal(out, np.tile([0.25, -1.0], (4, 1)))

    def test_simple_feeds_a_proxy_feeds_x(self, rng):
        simple = small_model(DagVariant.SIMPLE, d_A=3)
        proxy = small_model(DagVariant.BASIC_PROXY, d_A=3)
        proxy.latent_params = simple.latent_params.copy()
        data = Dataset(rng.normal(size=(5, 3)), rng.normal(size=(5, 1)), rng.normal(size=(5, 3)))
        a = latent_conditional_mean(simple, data)
        x = latent_conditional_mean(proxy, data)
        np.testing.assert_array_equal(a, mlp_forward(simple.latent_spec, simple.latent_params, data.A)[0])
        np.testing.assert_array_equal(x, mlp_forward(proxy.latent_spec, proxy.latent_params, data.X)[0])
        assert not np.allclose(a, x)

    def test_dimension_checked(self, rng):
        m = small_model(DagVariant.BASIC_PROXY)
        with pytest.raises(DimensionError):
            latent_conditional_mean(m, Dataset(rng.normal(size=(3, 2)), rng.normal(size=(3, 1))))


class TestDensity:
    def test_silent_outcome_net(self, rng):
        m = small_model(DagVariant.SIMPLE)
        for a in m.outcome_params.arrays():
            a[:] = 0
        data = Dataset(rng.normal(size=(4, 2)), np.zeros((4, 1)))
        Z = rng.normal(size=(4, 2))
        g = latent_log_density_grad(m, data, Z)
        np.testing.assert_allclose(g, -(Z - latent_conditional_mean(m, data)) / m.sigma_z2, rtol=1e-14)

    def test_stationary_point(self, rng):
        m = small_model(DagVariant.SIMPLE)
        A = rng.normal(size=(4, 2))
        Z = latent_conditional_mean(m, Dataset(A, np.zeros((4, 1))))
        data = Dataset(A, predict_outcome(m, Z, A))
        assert np.abs(latent_log_density_grad(m, data, Z)).max() < 1e-14

    def test_zero_residuals_zero_param_grads(self, rng):
        m = small_model(DagVariant.BASIC_PROXY)
        X = rng.normal(size=(4, 3))
        Z = latent_conditional_mean(m, Dataset(np.zeros((4, 2)), np.zeros((4, 1)), X))
        A = mlp_forward(m.treatment_spec, m.treatment_params, Z)[0]
        data = Dataset(A, predict_outcome(m, Z, A), X)
        grads = param_log_density_grads(m, data, Z)
        assert max(np.abs(g.flat()).max() for g in grads.values()) < 1e-14

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_module_isolation(self, variant, rng):
        m = small_model(variant)
        data = small_data(m, rng)
        Z = rng.normal(size=(4, 2))
        before = param_log_density_grads(m, data, Z)["latent"].flat()
        for a in m.outcome_params.arrays():
            a += rng.normal(size=a.shape)
        after = param_log_density_grads(m, data, Z)["latent"].flat()
        assert np.array_equal(before, after)

    @pytest.mark.parametrize("variant", VARIANTS)
    @pytest.mark.parametrize("binary", [False, True])
    def test_factorization(self, variant, binary, rng):
        m = small_model(variant, binary)
        data = small_data(m, rng)
        Z = rng.normal(size=(4, 2))
        ev = evaluate(m, data, Z)
        assert ev.log_density == sum(ev.terms.values())
        assert set(ev.terms) == ({"latent", "treatment", "outcome"} if variant.uses_proxy else {"latent", "outcome"})
        # each term by hand
        mu1 = latent_conditional_mean(m, data)
        ref_latent = float((-0.5 * (Z - mu1) ** 2 / m.sigma_z2 - 0.5 * np.log(2 * np.pi * m.sigma_z2)).sum())
        assert ev.terms["latent"] == pytest.approx(ref_latent, rel=1e-13)
        mu_y = predict_outcome(m, Z, data.A, data.X)
        ref_y = float((-0.5 * (data.Y - mu_y) ** 2 / m.sigma_y2 - 0.5 * np.log(2 * np.pi * m.sigma_y2)).sum())
        assert ev.terms["outcome"] == pytest.approx(ref_y, rel=1e-13)
        if variant.uses_proxy and m.binary_treatment:
            p = mlp_forward(m.treatment_spec, m.treatment_params, m.treatment_input(Z, data.X))[0]
            ref_a = float((data.A * np.log(p) + (1 - data.A) * np.log1p(-p)).sum())
            assert ev.terms["treatment"] == pytest.approx(ref_a, rel=1e-12)

    def test_non_finite_latent(self, rng):
        m = small_model(DagVariant.SIMPLE)
        data = small_data(m, rng)
        with pytest.raises(NumericError):
            log_density(m, data, np.full((4, 2), np.nan))

    def test_latent_shape(self, rng):
        m = small_model(DagVariant.SIMPLE)
        with pytest.raises(DimensionError):
            log_density(m, small_data(m, rng), np.zeros((4, 3)))

    def test_through_latent_matches_composed_fd(self, rng):
        m = small_model(DagVariant.BASIC_PROXY)
        data = small_data(m, rng)
        p = m.latent_params
        flat = p.flat()

        def f():
            p.assign_flat(flat)
            return log_density(m, data, latent_conditional_mean(m, data))

        fd = central_fd(f, flat, range(flat.size))
        p.assign_flat(flat)
        g = evaluate(m, data, latent_conditional_mean(m, data), through_latent=True).param_grads["latent"].flat()
        assert rel_err(g, fd) < 1e-5


class TestPredictOutcome:
    def test_constant_net(self, rng):
        m = small_model(DagVariant.SIMPLE)
        for W in m.outcome_params.weights:
            W[:] = 0
        m.outcome_params.biases[-1][:] = 2.5
        assert (predict_outcome(m, rng.normal(size=(3, 2)), rng.normal(size=(3, 2))) == 2.5).all()

    def test_outcome_proxy_uses_x(self, rng):
        m = small_model(DagVariant.OUTCOME_PROXY)
        Z, A = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
        assert not np.allclose(predict_outcome(m, Z, A, rng.normal(size=(3, 3))), predict_outcome(m, Z, A, rng.normal(size=(3, 3))))

    def test_basic_proxy_ignores_x(self, rng):
        m = small_model(DagVariant.BASIC_PROXY)
        Z, A = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
        assert np.array_equal(predict_outcome(m, Z, A, rng.normal(size=(3, 3))), predict_outcome(m, Z, A))

    def test_equals_forward_on_concatenation(self, rng):
        m = small_model(DagVariant.OUTCOME_PROXY)
        Z, A, X = rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), rng.normal(size=(3, 3))
        ref = mlp_forward(m.outcome_spec, m.outcome_params, np.hstack([Z, A, X]))[0]
        assert np.array_equal(predict_outcome(m, Z, A, X), ref)

    def test_dimension_errors(self, rng):
        m = small_model(DagVariant.OUTCOME_PROXY)
        with pytest.raises(DimensionError):
            predict_outcome(m, rng.normal(size=(3, 2)), rng.normal(size=(3, 2)))
        with pytest.raises(DimensionError):
            predict_outcome(m, rng.normal(size=(3, 5)), rng.normal(size=(3, 2)), rng.normal(size=(3, 3)))


class TestDataset:
    def test_row_mismatch(self):
        with pytest.raises(DimensionError):
            Dataset(np.zeros((3, 1)), np.zeros((4, 1)))

    def test_subset_keeps_truth_rows(self):
        d = Dataset(np.arange(4.0), np.arange(4.0), None, {"cate": np.arange(4.0), "true_ate": 3.0})
        s = d.subset([2, 0])
        assert s.truth["cate"].tolist() == [2.0, 0.0] and s.truth["true_ate"] == 3.0


def test_model_dict_round_trip(rng):
    m = small_model(DagVariant.TREATMENT_PROXY, binary=True)
    m.masks["outcome"] = [np.ones_like(a, dtype=bool) for a in m.outcome_params.arrays()]
    back = model_from_dict(model_to_dict(m))
    assert np.array_equal(back.outcome_params.flat(), m.outcome_params.flat())
    assert back.variant is m.variant and back.binary_treatment and back.sigma_y2 == m.sigma_y2
    assert isinstance(back.latent_params, MlpParams)
