import math

import numpy as np
import pytest

from ci_stonet import kernels
from ci_stonet.errors import ConfigurationError, NumericError
from ci_stonet.model import DagVariant, Dataset, latent_conditional_mean, latent_log_density_grad, param_log_density_grads
from ci_stonet.prior import PriorHyper, log_prior_grad, prune_threshold
from ci_stonet.sghmc import (
    Decay,
    DecayKind,
    LatentState,
    TrainSchedule,
    apply_pruning,
    impute_latent_step,
    init_state,
    lr_at,
    pruned_fraction,
    train,
    update_params_step,
    update_sigma_z,
)
from scenarios import conjugate_experiment, linear_gaussian_model, small_data, small_model


class TestLearningRate:
    def test_constant(self):
        assert lr_at(50, 0.3, Decay(DecayKind.CONSTANT)) == 0.3

    def test_first_step_is_base(self):
        assert lr_at(0, 0.3, Decay()) == 0.3

    def test_harmonic_half_at_one(self):
        assert lr_at(1, 0.4, Decay(DecayKind.HARMONIC, 0.5, 1.0)) == pytest.approx(0.2, rel=1e-15)

    def test_harmonic_formula(self):
        assert lr_at(16, 1.0, Decay(DecayKind.HARMONIC, 0.5, 2.0)) == pytest.approx(2.0 / 6.0, rel=1e-15)

    def test_empirical_matches_recursion(self):
        eps, base, alpha = 1e-3, 1e-3, 0.8
        for k in range(1, 60):
            eps = eps / (1.0 + eps * k**alpha)
            assert lr_at(k, base, Decay(DecayKind.EMPIRICAL, alpha)) == pytest.approx(eps, rel=1e-12)

    def test_empirical_strictly_decreasing(self):
        d = Decay(DecayKind.EMPIRICAL, 0.95)
        seq = [lr_at(k, 0.05, d) for k in range(200)]
        assert all(b < a for a, b in zip(seq, seq[1:]))

    def test_zero_base(self):
        assert lr_at(10, 0.0, Decay()) == 0.0

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            lr_at(-1, 1.0, Decay())
        with pytest.raises(ConfigurationError):
            Decay(DecayKind.HARMONIC, 1.0)
        with pytest.raises(ConfigurationError):
            Decay(DecayKind.EMPIRICAL, -0.1)


class TestSigmaZ:
    def test_zero_residuals(self):
        assert update_sigma_z(np.zeros((2, 2)), np.zeros((2, 2))) == 0.5

    def test_hand_values(self):
        Z = np.array([[2.0, 0.0], [0.0, 0.0]])
        assert update_sigma_z(Z, np.zeros((2, 2))) == pytest.approx(1.5)
        assert update_sigma_z(np.ones((1, 4)), np.zeros((1, 4)), alpha=2.0, beta=3.0) == pytest.approx(5.0 / 3.0)

    def test_converges_to_sample_variance(self, rng):
        Z = rng.normal(0, 0.7, size=(5000, 4))
        assert update_sigma_z(Z, np.zeros_like(Z)) == pytest.approx((Z**2).mean(), rel=1e-3)

    def test_bad_denominator(self):
        with pytest.raises(ConfigurationError):
            update_sigma_z(np.zeros((1, 1)), np.zeros((1, 1)), alpha=0.5)


class TestImputeStep:
    def setup_method(self):
        self.rng = np.random.default_rng(1)
        self.model = small_model(DagVariant.BASIC_PROXY)
        self.data = small_data(self.model, self.rng, n=5)
        self.state = init_state(self.model, self.data)
        self.state.Z += self.rng.normal(size=self.state.Z.shape)
        self.state.v[:] = self.rng.normal(size=self.state.v.shape)

    @pytest.mark.parametrize("leapfrog", [True, False])
    def test_one_step_by_hand(self, leapfrog):
        eps, eta = 0.1, 2.0
        noise = self.rng.normal(size=self.state.Z.shape)
        Z0, v0 = self.state.Z.copy(), self.state.v.copy()
        g = latent_log_density_grad(self.model, self.data, Z0)
        impute_latent_step(self.state, self.model, self.data, np.arange(5), eps, eta, leapfrog=leapfrog, noise=noise)
        v1 = (1 - eps * eta) * v0 + eps * g + math.sqrt(2 * eps * eta) * noise
        np.testing.assert_allclose(self.state.v, v1, rtol=1e-13, atol=1e-15)
        np.testing.assert_allclose(self.state.Z, Z0 + eps * (v1 if leapfrog else v0), rtol=1e-13, atol=1e-15)

    def test_rows_subset(self):
        rows = np.array([1, 3])
        before = self.state.copy()
        impute_latent_step(self.state, self.model, self.data.subset(rows), rows, 0.1, 1.0, self.rng)
        untouched = [0, 2, 4]
        assert np.array_equal(self.state.Z[untouched], before.Z[untouched])
        assert not np.array_equal(self.state.Z[rows], before.Z[rows])

    def test_zero_eps_is_identity(self):
        before = self.state.copy()
        impute_latent_step(self.state, self.model, self.data, np.arange(5), 0.0, 1.0, self.rng)
        assert np.array_equal(self.state.Z, before.Z) and np.array_equal(self.state.v, before.v)

    def test_negative_rate(self):
        with pytest.raises(ConfigurationError):
            impute_latent_step(self.state, self.model, self.data, np.arange(5), -0.1, 1.0, self.rng)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_overflow_raises(self):
        with pytest.raises(NumericError):
            for _ in range(200):
                impute_latent_step(self.state, self.model, self.data, np.arange(5), 1e150, 1.0, self.rng)


class TestIntegratorStability:
    """Noiseless oscillator z'' = -w2 z - eta z' at a stiff latent scale."""

    def run(self, leapfrog, w2=1e5, eps=1e-3, eta=1.0, steps=3000):
        Z, v = np.ones((1, 1)), np.zeros((1, 1))
        zero, rows = np.zeros((1, 1)), np.arange(1)
        with np.errstate(all="ignore"):
            for _ in range(steps):
                if not kernels.sghmc_update(Z, v, -w2 * Z, zero, rows, eps, eta, leapfrog):
                    return math.inf
        return abs(float(Z[0, 0]))

    def test_leapfrog_contracts(self):
        # determinant 1 - eps*eta < 1
        assert self.run(True) < 1.0

    def test_position_first_order_diverges(self):
        # determinant 1 - eps*eta + eps^2 w2 = 1.099
        assert self.run(False) > 1e10

    def test_agree_when_soft(self):
        a, b = self.run(True, w2=1.0, steps=100), self.run(False, w2=1.0, steps=100)
        assert a == pytest.approx(b, rel=1e-2)


class TestParamStep:
    def setup_method(self):
        self.rng = np.random.default_rng(2)
        self.model = small_model(DagVariant.TREATMENT_PROXY)
        self.data = small_data(self.model, self.rng, n=6)
        self.Z = latent_conditional_mean(self.model, self.data) + self.rng.normal(size=(6, 2))
        self.prior = PriorHyper.from_variances(1e-3, 1e-4, 1e-1)

    def test_one_step_by_hand(self):
        gammas = {"latent": 1e-3, "treatment": 2e-3, "outcome": 3e-3}
        grads = param_log_density_grads(self.model, self.data, self.Z)
        before = {k: self.model.params(k).copy() for k in gammas}
        update_params_step(self.model, self.data, self.Z, gammas, self.prior, n_total=30)
        for name, gamma in gammas.items():
            for old, g, new in zip(before[name].arrays(), grads[name].arrays(), self.model.params(name).arrays()):
                ref = old + gamma * (5.0 * g + log_prior_grad(old, self.prior))
                np.testing.assert_allclose(new, ref, rtol=1e-13, atol=1e-15)

    def test_per_sample_divides_rates(self):
        other = small_model(DagVariant.TREATMENT_PROXY)
        update_params_step(self.model, self.data, self.Z, {"outcome": 6e-3}, None, n_total=6, per_sample=True)
        update_params_step(other, self.data, self.Z, {"outcome": 1e-3}, None, n_total=6)
        np.testing.assert_allclose(self.model.outcome_params.flat(), other.outcome_params.flat(), rtol=1e-14)

    def test_zero_rate_leaves_module(self):
        before = self.model.latent_params.flat()
        norms = update_params_step(self.model, self.data, self.Z, {"outcome": 1e-3}, self.prior)
        assert np.array_equal(self.model.latent_params.flat(), before)
        assert set(norms) == {"latent", "treatment", "outcome"} and all(v > 0 for v in norms.values())

    def test_masks_stay_zero(self):
        m = self.model.outcome_params
        self.model.masks["outcome"] = [np.zeros_like(a, dtype=bool) if i == 0 else np.ones_like(a, dtype=bool)
                                       for i, a in enumerate(m.arrays())]
        m.weights[0][:] = 0
        update_params_step(self.model, self.data, self.Z, {"outcome": 1e-2}, self.prior)
        assert not m.weights[0].any()

    def test_negative_rate(self):
        with pytest.raises(ConfigurationError):
            update_params_step(self.model, self.data, self.Z, {"outcome": -1.0}, None)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_blow_up(self):
        with pytest.raises(NumericError):
            for _ in range(50):
                update_params_step(self.model, self.data, self.Z, {"outcome": 1e200}, None)


class TestPruning:
    def test_spike_weights_zeroed_and_biases_kept(self):
        model = small_model(DagVariant.SIMPLE)
        prior = PriorHyper.from_variances(1e-2, 1e-2, 1.0)
        t = prune_threshold(prior)
        W = model.outcome_params.weights[0]
        W[:] = 10 * t
        W[0, 0], W[1, 1] = 0.5 * t, -0.5 * t
        model.outcome_params.biases[0][:] = 1e-9
        apply_pruning(model, prior)
        assert W[0, 0] == 0 and W[1, 1] == 0 and W[0, 1] == 10 * t
        assert (model.outcome_params.biases[0] == 1e-9).all()
        assert 0 < pruned_fraction(model) <= 1

    def test_pruned_weights_frozen_during_finetune(self, rng):
        model = small_model(DagVariant.SIMPLE)
        data = small_data(model, rng, n=20)
        prior = PriorHyper.from_variances(0.3, 0.3, 1.0)
        sched = TrainSchedule(0, 2, 3, eps0=1e-3, gamma0={"latent": 1e-3, "outcome": 1e-3})
        train(model, data, sched, prior, rng=0)
        masks = model.masks
        assert masks, "finetune should prune"
        for name, ms in masks.items():
            for arr, m in zip(model.params(name).arrays(), ms):
                assert not arr[~m].any()


class TestTrain:
    def schedule(self, **kw):
        base = dict(pretrain_epochs=2, train_epochs=3, finetune_epochs=2, eps0=1e-3,
                    gamma0={"latent": 1e-4, "treatment": 1e-4, "outcome": 1e-4}, minibatch=8)
        base.update(kw)
        return TrainSchedule(**base)

    def test_zero_epochs_leaves_model(self, rng):
        model = small_model(DagVariant.BASIC_PROXY)
        data = small_data(model, rng, n=10)
        before = model.latent_params.flat(), model.outcome_params.flat()
        _, log = train(model, data, self.schedule(pretrain_epochs=0, train_epochs=0, finetune_epochs=0), None)
        assert np.array_equal(model.latent_params.flat(), before[0])
        assert np.array_equal(model.outcome_params.flat(), before[1])
        assert log.records == []
        np.testing.assert_array_equal(log.state.Z, latent_conditional_mean(model, data))

    def test_deterministic(self, rng):
        data = small_data(small_model(DagVariant.BASIC_PROXY), rng, n=20)
        runs = []
        for _ in range(2):
            model = small_model(DagVariant.BASIC_PROXY)
            _, log = train(model, data, self.schedule(), PriorHyper.from_variances(1e-3, 1e-3, 1e-1), rng=5)
            runs.append((model.outcome_params.flat(), log.state.Z, log.log_densities()))
        for a, b in zip(*runs):
            assert np.array_equal(a, b)

    def test_log_records(self, rng):
        model = small_model(DagVariant.BASIC_PROXY)
        _, log = train(model, small_data(model, rng, n=20), self.schedule(), None, rng=0)
        assert [r.stage for r in log.records] == ["pretrain"] * 2 + ["train"] * 3 + ["finetune"] * 2
        assert [r.epoch for r in log.records] == list(range(7))
        assert all(len(r.grad_norms) == 3 for r in log.records)

    def test_stage_subset(self, rng):
        model = small_model(DagVariant.SIMPLE)
        _, log = train(model, small_data(model, rng, n=20), self.schedule(), None, rng=0, stages=("finetune",))
        assert {r.stage for r in log.records} == {"finetune"}

    def test_sigma_z_refresh(self, rng):
        model = small_model(DagVariant.SIMPLE)
        _, log = train(model, small_data(model, rng, n=20), self.schedule(update_sigma_z=True, eps0=0.05), None, rng=0)
        assert log.records[-1].sigma_z2 != 0.5

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_error_carries_stage_and_epoch(self, rng):
        model = small_model(DagVariant.SIMPLE)
        with pytest.raises(NumericError) as info:
            train(model, small_data(model, rng, n=20), self.schedule(gamma0={"outcome": 1e200}), None, rng=0)
        assert info.value.stage == "pretrain" and info.value.epoch is not None
        assert "stage=pretrain" in str(info.value)

    def test_linear_fit_improves(self):
        model, data, _, _ = linear_gaussian_model(n=400, seed=3)
        for arr in model.outcome_params.arrays():
            arr[:] = 0
        sched = TrainSchedule(0, 200, 0, eps0=0.01, eps_decay=Decay(DecayKind.CONSTANT),
                              gamma0={"latent": 1e-4, "outcome": 1e-4}, gamma_decay=Decay(DecayKind.CONSTANT))
        _, log = train(model, data, sched, None, rng=0)
        ld = log.log_densities()
        assert ld[-20:].mean() > ld[:20].mean()

    def test_schedule_validation(self):
        with pytest.raises(ConfigurationError):
            TrainSchedule(eta=0.0)
        with pytest.raises(ConfigurationError):
            TrainSchedule(train_epochs=-1)
        with pytest.raises(ConfigurationError):
            TrainSchedule(finetune_factor=1.5)


def test_state_copy_is_independent():
    s = LatentState(np.zeros((2, 1)), np.zeros((2, 1)))
    c = s.copy()
    c.Z += 1
    assert not s.Z.any()


def test_conjugate_posterior_short_run():
    # shorter than the acceptance run; loose absolute bound on the mean
    mean_dev, _, var, exact = conjugate_experiment(reps=4, steps=2000, burn_in=500)
    assert np.abs(mean_dev).max() < 0.02
    np.testing.assert_allclose(var, exact, rtol=0.1)


def test_dataset_unused_x_ok():
    model, data, _, _ = linear_gaussian_model(n=10)
    model.check_dataset(Dataset(data.A, data.Y, np.zeros((10, 2))))
