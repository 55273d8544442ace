import itertools
import math

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.special import expit

from ci_stonet.datagen import (
    DgpKind,
    DgpSpec,
    concat_datasets,
    eta,
    eta_centering_constant,
    gen_dag_misspec,
    gen_proxy_sim,
    gen_simple_confounding,
    generate,
    h1,
    h2,
    misspec_cate,
    pairwise_sum,
    proxy_propensity,
    sample_treatment_inverse_cdf,
    simple_marginal_effects,
    simple_outcome_mean,
    tilted_cdf,
    truncated_normal,
    xi,
    xi_mean,
)
from ci_stonet.errors import ConfigurationError, DimensionError
from oracles import bisection_inverse, tilted_cdf_mp, tilted_cdf_quad, tilted_inverse_mp


def gauss_expect(f):
    # mass beyond |z| = 40 is far below double precision
    return integrate.quad(lambda z: f(z) * math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi), -40.0, 40.0,
                          epsabs=1e-14, epsrel=1e-13, limit=200)[0]


class TestXi:
    def test_at_origin(self):
        assert xi(np.zeros(6)) == pytest.approx(2.0 + 2.0 / (1.0 + math.exp(0.5)), rel=1e-15)

    def test_by_hand(self):
        z = np.array([0.3, -1.0, 2.0, 0.1, -0.7, 1.5])
        b = np.array([1.0, 2.0, -1.0, 0.5, 3.0, 1.0])
        ref = (math.sin(0.3) + 2 * math.sin(-1.0) - math.cos(2.0) + 0.5 * math.cos(0.1)
               + 1 / (1 + math.exp(2.1 + 0.5)) + 1 / (1 + math.exp(-1.5 + 0.5)))
        assert xi(z, b) == pytest.approx(ref, rel=1e-14)

    def test_vectorized(self, rng):
        Z = rng.normal(size=(5, 6))
        np.testing.assert_allclose(xi(Z), [xi(z) for z in Z], rtol=1e-15)

    def test_mean_against_quadrature(self):
        b = [1.0, 0.5, 1.0, 2.0, 1.0, -1.5]
        ref = sum(gauss_expect(lambda z, bk=bk: bk * math.cos(bk * z)) for bk in b[2:4])
        ref += sum(gauss_expect(lambda z, bk=bk: float(expit(bk * z - 0.5))) for bk in b[4:])
        assert xi_mean(b) == pytest.approx(ref, rel=1e-12)

    def test_dimension(self):
        with pytest.raises(DimensionError):
            xi(np.zeros(5))


class TestTreatmentSampler:
    @pytest.mark.parametrize("c", [-3.0, -0.5, 1e-9, 0.7, 4.0])
    def test_cdf_against_quadrature(self, c):
        for a in (-1.0, -0.6, 0.0, 0.35, 1.0):
            assert tilted_cdf(a, c) == pytest.approx(tilted_cdf_quad(a, c), abs=1e-10)

    @pytest.mark.parametrize("c", [-4.0, -1.2, -1e-7, 0.0, 3e-7, 0.4, 2.5, 6.0])
    def test_inverse_against_bisection(self, c):
        for u in (1e-6, 0.1, 0.5, 0.77, 1 - 1e-6):
            assert sample_treatment_inverse_cdf(c, u) == pytest.approx(bisection_inverse(c, u), abs=1e-10)

    @pytest.mark.parametrize("c", [1e-12, -1e-8, 1e-8, 3e-7, -5e-5, 9.99e-5, 1e-4, -1.01e-4, 3e-4, 1e-3])
    def test_near_zero_tilt_against_high_precision(self, c):
        for a in np.linspace(-1, 1, 11):
            assert tilted_cdf(a, c) == pytest.approx(tilted_cdf_mp(a, c), abs=1e-11)
        for u in (1e-6, 0.2, 0.5, 0.9, 1 - 1e-6):
            assert sample_treatment_inverse_cdf(c, u) == pytest.approx(tilted_inverse_mp(c, u), abs=1e-11)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-8, 8), st.floats(1e-9, 1 - 1e-9))
    @example(1e-8, 0.5)
    def test_round_trip(self, c, u):
        a = sample_treatment_inverse_cdf(c, u)
        assert -1 <= a <= 1
        assert float(tilted_cdf(a, c)) == pytest.approx(u, abs=1e-9)

    @pytest.mark.parametrize("c", [-2.0, 0.0, 1.5])
    def test_ks(self, c):
        u = np.random.default_rng(11).uniform(size=4000)
        a = sample_treatment_inverse_cdf(np.full(4000, c), u)
        assert stats.kstest(a, lambda t: tilted_cdf(t, c)).pvalue > 0.01

    def test_sign_of_tilt(self):
        u = np.random.default_rng(1).uniform(size=2000)
        assert sample_treatment_inverse_cdf(np.full(2000, 3.0), u).mean() > 0.3


class TestSimpleConfounding:
    def test_pairwise_sum_by_loops(self, rng):
        A = rng.normal(size=(4, 9))
        ref = [sum(r[i] * r[j] for i, j in itertools.combinations(range(9), 2)) for r in A]
        np.testing.assert_allclose(pairwise_sum(A), ref, rtol=1e-12)

    @pytest.mark.parametrize("kind", [DgpKind.SEPARABLE, DgpKind.NON_SEPARABLE])
    @pytest.mark.parametrize("h", [1e-3, 0.3])
    def test_marginal_effects_are_symmetric_differences(self, kind, h, rng):
        A, Z = rng.uniform(-1, 1, size=(6, 9)), rng.normal(size=(6, 6))
        theta, theta0 = rng.uniform(-1, 1, size=9), 0.4
        eff = simple_marginal_effects(A, Z, theta, theta0, kind)
        for j in range(9):
            up, dn = A.copy(), A.copy()
            up[:, j] += h
            dn[:, j] -= h
            fd = (simple_outcome_mean(up, Z, theta, theta0, kind) - simple_outcome_mean(dn, Z, theta, theta0, kind)) / (2 * h)
            np.testing.assert_allclose(eff[:, j], fd, rtol=1e-9, atol=1e-10)

    def test_generated_shapes_and_range(self):
        g = gen_simple_confounding(DgpSpec(DgpKind.SEPARABLE, 60, 20, 20, seed=1))
        assert g.train.A.shape == (60, 9) and g.val.n == 20 and g.test.n == 20
        assert np.abs(g.train.A).max() <= 1.0
        assert g.train.truth["marginal_effects"].shape == (60, 9)
        assert g.info["xi_mean"] == pytest.approx(xi_mean())

    def test_zero_noise_is_structural(self):
        g = gen_simple_confounding(DgpSpec(DgpKind.NON_SEPARABLE, 30, 5, 5, seed=2, zero_noise=True))
        t = g.train.truth
        mean = simple_outcome_mean(g.train.A, t["Z"], t["theta"], t["theta0"], DgpKind.NON_SEPARABLE)
        np.testing.assert_array_equal(g.train.Y[:, 0], mean)

    def test_beta_validation(self):
        with pytest.raises(ConfigurationError):
            DgpSpec(DgpKind.SEPARABLE, beta=(1.0, 2.0))


class TestProxySim:
    def test_propensity_range(self, rng):
        Z = np.vstack([rng.normal(size=(2000, 5)), np.full((1, 5), 40.0), np.full((1, 5), -40.0)])
        p = proxy_propensity(Z)
        assert p.min() >= 0.25 and p.max() <= 0.5
        assert p[-1] == pytest.approx(0.25) and p[-2] == pytest.approx(0.5)

    def test_centering_constant_by_quadrature(self):
        m = gauss_expect(lambda z: 2.0 * float(expit(z - 0.5)))
        assert eta_centering_constant() == pytest.approx(m * m, rel=1e-12)

    def test_eta_is_centered(self):
        Z = np.random.default_rng(3).standard_normal((400000, 2))
        e = eta(Z)
        assert abs(e.mean()) < 4 * e.std() / math.sqrt(e.size)

    @pytest.mark.parametrize("n", [(100, 50, 50), (101, 50, 50)])
    def test_arms_balanced(self, n):
        g = gen_proxy_sim(DgpSpec(DgpKind.PROXY_SIM, *n, seed=4))
        A = np.concatenate([d.A[:, 0] for d in g.splits().values()])
        assert abs(int(A.sum()) - int((1 - A).sum())) <= 1

    def test_truth_consistent(self):
        g = gen_proxy_sim(DgpSpec(DgpKind.PROXY_SIM, 80, 10, 10, seed=5, zero_noise=True))
        t, d = g.train.truth, g.train
        np.testing.assert_allclose(t["cate"], 3.0 + eta(t["Z"]), rtol=1e-15)
        np.testing.assert_allclose(t["propensity"], proxy_propensity(t["Z"]), rtol=1e-15)
        base = 5 * t["Z"][:, 2] / (1 + t["Z"][:, 3] ** 2) + 2 * t["Z"][:, 4]
        np.testing.assert_allclose(d.Y[:, 0], base + t["cate"] * d.A[:, 0], rtol=1e-13, atol=1e-13)
        assert d.X.shape == (80, 100) and t["true_ate"] == 3.0

    def test_truncated_normal_bounds(self, rng):
        out = truncated_normal(rng, np.array([9.5, -9.5, 0.0]), 2000)
        assert out.min() >= -10 and out.max() <= 10
        assert out[2].mean() == pytest.approx(0.0, abs=0.1)


class TestMisspecification:
    @pytest.mark.parametrize("kind", [DgpKind.MISSPEC_BASIC, DgpKind.MISSPEC_OUTCOME, DgpKind.MISSPEC_TREATMENT])
    def test_zero_noise_structure(self, kind):
        g = gen_dag_misspec(DgpSpec(kind, 40, 5, 5, seed=6, zero_noise=True, gamma=0.8))
        d, t = g.train, g.train.truth
        Z = t["Z"]
        np.testing.assert_array_equal(d.X, np.tile(h1(Z)[:, None], (1, 50)))
        mean_abs = np.abs(h1(Z))
        logit = h2(Z) + (0.5 * mean_abs if kind is DgpKind.MISSPEC_TREATMENT else 0.0)
        np.testing.assert_allclose(t["propensity"], expit(logit), rtol=1e-14)
        y = Z[:, 0] ** 2 + 0.5 * Z[:, 1] * Z[:, 2] + d.A[:, 0] * misspec_cate(Z)
        if kind is DgpKind.MISSPEC_OUTCOME:
            y = y + 0.8 * mean_abs
        np.testing.assert_allclose(d.Y[:, 0], y, rtol=1e-13, atol=1e-13)

    def test_cate_average_near_three(self):
        Z = np.random.default_rng(0).standard_normal((100000, 5))
        # E[sin z] = 0
        assert misspec_cate(Z).mean() == pytest.approx(3.0, abs=0.01)

    def test_wrong_kind(self):
        with pytest.raises(ConfigurationError):
            gen_dag_misspec(DgpSpec(DgpKind.PROXY_SIM))
        with pytest.raises(ConfigurationError):
            gen_simple_confounding(DgpSpec(DgpKind.PROXY_SIM))


@pytest.mark.parametrize("kind", list(DgpKind))
def test_deterministic_by_seed(kind):
    a = generate(DgpSpec(kind, 30, 10, 10, seed=9))
    b = generate(DgpSpec(kind, 30, 10, 10, seed=9))
    c = generate(DgpSpec(kind, 30, 10, 10, seed=10))
    assert np.array_equal(a.train.Y, b.train.Y) and np.array_equal(a.test.A, b.test.A)
    assert not np.array_equal(a.train.Y, c.train.Y)


def test_concat_keeps_truth():
    g = generate(DgpSpec(DgpKind.PROXY_SIM, 20, 10, 10, seed=1))
    full = concat_datasets(g.train, g.val)
    assert full.n == 30 and full.truth["cate"].shape == (30,) and full.truth["true_ate"] == 3.0
    assert g.in_sample.n == 30


def test_split_sizes_validated():
    with pytest.raises(ConfigurationError):
        DgpSpec(DgpKind.SEPARABLE, n_train=0)
