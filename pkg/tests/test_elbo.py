import numpy as np
import pytest
from conftest import gaussian_model

from wavecop import autodiff as ad
from wavecop import copula as cop
from wavecop import elbo as E
from wavecop import family as fam
from wavecop import marginal as mg
from wavecop.errors import ConfigError, FitError, InvalidInputError

ZERO = E.ModelSpec(2, lambda th, data: ad.mul(0.0, ad.sum(th, axis=-1)), name="flat")


def uniform_family(box, variant="independence"):
    return fam.VariationalParams([mg.uniform_params(lo, hi) for lo, hi in box],
                                 cop.identity_copula(variant, len(box)))


def random_family(rng, d, variant, scale=1.0):
    margs = [mg.MarginalParams(rng.normal(size=32), rng.normal() - 2, np.log(4) + 0.1 * rng.normal())
             for _ in range(d)]
    return fam.VariationalParams(margs, cop.CopulaParams(variant, scale * 0.3 * rng.normal(
        size=cop.n_copula_params(variant, d))))


def quadrature_elbo(zeta, model):
    g = fam.densities(zeta).component(0)
    lp = mg.expect(g, lambda x: model.log_density(x.reshape(-1, 1)).reshape(x.shape))
    return float(lp - mg.neg_entropy(g))


class TestEstimate:
    @pytest.mark.parametrize("variant", ["independence", "gaussian"])
    def test_flat_target_on_unit_box(self, variant):
        noise = fam.draw_base_noise(np.random.default_rng(0), 10, 2, variant)
        assert E.estimate_elbo(uniform_family([(0, 1)] * 2, variant), ZERO, noise) == pytest.approx(0.0, abs=1e-12)

    def test_flat_target_on_wide_box(self):
        noise = fam.draw_base_noise(np.random.default_rng(0), 10, 2, "independence")
        assert E.estimate_elbo(uniform_family([(0, 2)] * 2), ZERO, noise) == pytest.approx(2 * np.log(2))

    def test_identity_gaussian_equals_independence(self):
        rng = np.random.default_rng(1)
        zi = random_family(rng, 2, "independence")
        zg = fam.VariationalParams(zi.marginals, cop.identity_copula("gaussian", 2))
        model = gaussian_model([0, 0], np.eye(2))
        z = rng.normal(size=(20, 2))
        u = np.clip(ad.normal_cdf(z), cop.U_CLAMP, 1 - cop.U_CLAMP)
        assert E.estimate_elbo(zg, model, z) == pytest.approx(E.estimate_elbo(zi, model, u), abs=1e-12)

    def test_mc_matches_quadrature(self):
        model = gaussian_model([0.0], [[1.0]])
        zeta = random_family(np.random.default_rng(2), 1, "independence")
        S = 100_000
        noise = fam.draw_base_noise(np.random.default_rng(3), S, 1, "independence")
        theta = fam.sample_joint(zeta, noise)
        se = np.std(model.log_density(theta), ddof=1) / np.sqrt(S)
        assert abs(E.estimate_elbo(zeta, model, noise) - quadrature_elbo(zeta, model)) < 3 * se

    def test_unbiased_over_repeats(self):
        model = gaussian_model([0.0], [[1.0]])
        zeta = random_family(np.random.default_rng(4), 1, "independence")
        rng = np.random.default_rng(5)
        est = np.array([E.estimate_elbo(zeta, model, fam.draw_base_noise(rng, 20, 1, "independence"))
                        for _ in range(200)])
        assert abs(est.mean() - quadrature_elbo(zeta, model)) < 3 * est.std(ddof=1) / np.sqrt(est.size)

    def test_kl_identity_with_log_evidence(self, conjugate):
        zeta = fam.VariationalParams([mg.MarginalParams(np.random.default_rng(6).normal(size=32),
                                                        conjugate.post_mean - 0.7, np.log(1.4))],
                                     cop.identity_copula("independence", 1))
        g = fam.densities(zeta).component(0)
        post = lambda x: -0.5 * ((x - conjugate.post_mean) / conjugate.post_sd) ** 2 - np.log(
            conjugate.post_sd * np.sqrt(2 * np.pi))
        kl = float(mg.neg_entropy(g) - mg.expect(g, post))
        assert kl + quadrature_elbo(zeta, conjugate.model) == pytest.approx(conjugate.log_evidence, abs=1e-3)

    def test_noise_validation(self):
        zeta = uniform_family([(0, 1)] * 2)
        with pytest.raises(InvalidInputError):
            E.estimate_elbo(zeta, ZERO, np.full((5, 3), 0.5))
        with pytest.raises(InvalidInputError):
            E.estimate_elbo(zeta, ZERO, np.full((5, 2), 0.5), S=4)
        with pytest.raises(InvalidInputError):
            E.estimate_elbo(zeta, ZERO, np.full((5, 2), 2.0))

    def test_non_finite_log_joint_reports_theta(self):
        bad = E.ModelSpec(1, lambda th, data: ad.log(ad.getitem(th, (slice(None), 0))))
        zeta = uniform_family([(-1, 1)])
        noise = np.array([[0.9], [0.1]])
        with pytest.raises(FitError) as info:
            E.estimate_elbo(zeta, bad, noise)
        assert info.value.theta is not None and info.value.theta[0] < 0


class TestGradient:
    @pytest.mark.parametrize("variant", ["independence", "gaussian"])
    def test_matches_central_differences(self, variant):
        rng = np.random.default_rng(7)
        model = gaussian_model([0.3, -0.2], [[1.0, 0.5], [0.5, 2.0]])
        zeta = random_family(rng, 2, variant)
        noise = fam.draw_base_noise(rng, 16, 2, variant)
        err = ad.gradient_check(lambda v: E.elbo_objective(v, 2, variant, model, noise), fam.pack(zeta), h=1e-5)
        assert err < 1e-4

    def test_symmetric_blocks(self):
        model = gaussian_model([0, 0], np.eye(2))
        zeta = uniform_family([(-3, 3)] * 2)
        noise = fam.draw_base_noise(np.random.default_rng(8), 16, 2, "independence")
        g = E.grad_elbo(zeta, model, noise)
        g_mirror = E.grad_elbo(zeta, model, noise[:, ::-1])
        np.testing.assert_allclose(g[:34], g_mirror[34:], atol=1e-10)

    def test_independence_has_no_copula_block(self):
        g = E.grad_elbo(uniform_family([(0, 1)] * 3), E.ModelSpec(3, ZERO.log_joint), np.full((4, 3), 0.5))
        assert g.size == 3 * 34

    def test_deterministic_given_noise(self):
        rng = np.random.default_rng(9)
        zeta = random_family(rng, 2, "gaussian")
        noise = fam.draw_base_noise(rng, 8, 2, "gaussian")
        model = gaussian_model([0, 0], np.eye(2))
        np.testing.assert_array_equal(E.grad_elbo(zeta, model, noise), E.grad_elbo(zeta, model, noise))


class TestOptimizers:
    def test_adam_first_step(self):
        cfg = E.FitConfig(learning_rate=0.01)
        z, m, v = E.adam_step((np.zeros(1), np.zeros(1), np.zeros(1)), np.ones(1), 1, cfg)
        assert m[0] == pytest.approx(0.1) and v[0] == pytest.approx(0.001)
        assert z[0] == pytest.approx(-0.01 / (1 + 1e-8), rel=1e-12)

    def test_adam_zero_gradient_and_sign(self):
        cfg = E.FitConfig()
        z, _, _ = E.adam_step((np.ones(3), np.zeros(3), np.zeros(3)), np.zeros(3), 1, cfg)
        np.testing.assert_array_equal(z, 1.0)
        g = np.array([2.0, -0.3, 5.0])
        z, _, _ = E.adam_step((np.zeros(3), np.zeros(3), np.zeros(3)), g, 1, cfg)
        np.testing.assert_array_equal(np.sign(z), -np.sign(g))

    def test_rmsprop_steps(self):
        cfg = E.FitConfig(optimizer="rmsprop", learning_rate=0.1, rms_alpha=0.5, rms_momentum=0.9)
        zero = np.zeros(1)
        z, sq, buf = E.rmsprop_step((zero, zero, zero), zero, cfg)
        assert z[0] == 0.0
        g = np.array([2.0])
        z1, sq, buf = E.rmsprop_step((zero, zero, zero), g, cfg)
        assert z1[0] == pytest.approx(-0.1 * 2 / (np.sqrt(0.5 * 4) + 1e-8), rel=1e-12)
        z2, sq, buf2 = E.rmsprop_step((z1, sq, buf), g, cfg)
        assert buf2[0] == pytest.approx(0.9 * buf[0] + 2 / (np.sqrt(0.5 * 0.5 * 4 + 0.5 * 4) + 1e-8))
        assert z2[0] == pytest.approx(z1[0] - 0.1 * buf2[0])

    def test_steps_are_pure(self):
        cfg = E.FitConfig()
        state = (np.ones(4), np.full(4, 0.1), np.full(4, 0.2))
        g = np.arange(4.0)
        a = E.adam_step(state, g, 3, cfg)
        b = E.adam_step(state, g, 3, cfg)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    @pytest.mark.parametrize("kw", [dict(learning_rate=0), dict(mc_samples=0), dict(iterations=0),
                                    dict(optimizer="sgd"), dict(variant="clayton"), dict(init="manual"),
                                    dict(betas=(1.0, 0.9)), dict(average_tail=1.0), dict(wavelet="db4")])
    def test_config_validation(self, kw):
        with pytest.raises(ConfigError):
            E.FitConfig(**kw)


class TestInit:
    def test_manual_box(self):
        zeta = E.init_params(ZERO, "manual", box=[(0, 1), (0, 1)])
        g = fam.densities(zeta)
        np.testing.assert_allclose(g.pdf, 1.0, atol=1e-12)

    def test_laplace_box_standard_normal(self):
        zeta = E.init_params(gaussian_model([0.0], [[1.0]]), "laplace-box", "gaussian")
        g = fam.densities(zeta)
        assert g.lower[0] == pytest.approx(-6, abs=1e-4) and g.upper[0] == pytest.approx(6, abs=1e-4)
        np.testing.assert_array_equal(zeta.copula.chol_raw, 0.0)

    def test_copula_starts_at_identity(self):
        zeta = E.init_params(gaussian_model([1, 2], [[1, 0.8], [0.8, 1]]), variant="gaussian")
        np.testing.assert_allclose(cop.build_correlation(zeta.copula).P, np.eye(2))

    def test_failed_mode_search_falls_back(self):
        bad = E.ModelSpec(1, lambda th, data: ad.log(ad.getitem(th, (slice(None), 0))))
        with pytest.warns(RuntimeWarning):
            zeta = E.init_params(bad, box=[(2, 3)])
        assert zeta.marginals[0].delta1 == 2.0

    def test_model_supplied_start(self):
        base = gaussian_model([0.0], [[1.0]])
        m = E.ModelSpec(1, base.log_joint, start=np.array([5.0]), scales=np.array([0.5]))
        g = fam.densities(E.init_params(m))
        assert (g.lower[0], g.upper[0]) == pytest.approx((2.0, 8.0))


class TestFit:
    def test_conjugate_recovery(self, conjugate):
        res = E.fit(conjugate.model, E.FitConfig(iterations=1000, mc_samples=50, seed=1))
        assert abs(res.summaries["mean"][0] - conjugate.post_mean) < 0.02 * conjugate.post_sd
        assert res.summaries["sd"][0] == pytest.approx(conjugate.post_sd, rel=0.1)
        assert res.elbo_trace.shape == (1000,)
        assert np.all(np.isfinite(fam.pack(res.zeta)))
        s = res.summaries
        assert s["q025"][0] < s["q50"][0] < s["q975"][0]

    def test_trace_rises_from_a_wide_start(self, conjugate):
        cfg = E.FitConfig(iterations=2000, init="manual", box=((-10.0, 10.0),), seed=2)
        trace = E.fit(conjugate.model, cfg).elbo_trace
        blocks = trace.reshape(-1, 100).mean(axis=1)
        assert np.mean(np.diff(blocks) >= 0) >= 0.95

    def test_seed_determinism(self, conjugate):
        cfg = E.FitConfig(iterations=50, variant="gaussian", seed=3)
        a, b = E.fit(conjugate.model, cfg), E.fit(conjugate.model, cfg)
        np.testing.assert_array_equal(fam.pack(a.zeta), fam.pack(b.zeta))
        np.testing.assert_array_equal(a.elbo_trace, b.elbo_trace)

    def test_rmsprop_haar_fit(self):
        model = gaussian_model([1.0, -1.0], [[1.0, 0.0], [0.0, 0.25]])
        cfg = E.FitConfig(optimizer="rmsprop", learning_rate=0.002, wavelet="haar", iterations=800, seed=4)
        s = E.fit(model, cfg).summaries
        np.testing.assert_allclose(s["mean"], [1.0, -1.0], atol=0.1)
        np.testing.assert_allclose(s["sd"], [1.0, 0.5], rtol=0.2)

    def test_gaussian_copula_captures_correlation(self):
        model = gaussian_model([0.0, 0.0], [[1.0, 0.8], [0.8, 1.0]])
        res = E.fit(model, E.FitConfig(variant="gaussian", iterations=1500, seed=5))
        P = cop.build_correlation(res.zeta.copula).P
        assert P[0, 1] == pytest.approx(0.8, abs=0.1)
        np.testing.assert_allclose(res.summaries["sd"], 1.0, rtol=0.1)

    def test_failure_carries_trace(self):
        calls = {"n": 0}

        def flaky(theta, data):
            calls["n"] += 1
            if calls["n"] > 5:
                return ad.log(ad.sub(ad.getitem(theta, (slice(None), 0)), 1e6))
            return ad.mul(-0.5, ad.sum(ad.square(theta), axis=-1))

        model = E.ModelSpec(1, flaky)
        with pytest.raises(FitError) as info:
            E.fit(model, E.FitConfig(init="manual", box=((-1.0, 1.0),), iterations=20))
        assert len(info.value.trace) == 5

    def test_mismatched_init(self, conjugate):
        with pytest.raises(ConfigError):
            E.fit(conjugate.model, E.FitConfig(iterations=1), init=uniform_family([(0, 1)] * 2))
