import math

import numpy as np
import pytest
from conftest import gaussian_model

from wavecop import autodiff as ad
from wavecop import mcmc
from wavecop.elbo import ModelSpec
from wavecop.errors import InitializationError, InvalidInputError


@pytest.fixture(scope="module")
def normal_chain():
    return mcmc.run_rwm(gaussian_model([3.0], [[4.0]]), 210_000, 10_000, seed=1)


class TestRunRwm:
    def test_standard_normal(self):
        chain = mcmc.run_rwm(gaussian_model([0.0], [[1.0]]), 210_000, 10_000, seed=0)
        assert chain.draws.shape == (200_000, 1)
        assert chain.draws.mean() == pytest.approx(0.0, abs=0.01)
        assert chain.draws.std() == pytest.approx(1.0, abs=0.02)
        assert 0 < chain.acceptance_rate < 1

    def test_standard_normal_mean_within_three_mc_errors(self):
        chain = mcmc.run_rwm(gaussian_model([0.0], [[1.0]]), 210_000, 10_000, seed=0)
        se = chain.draws.std() / math.sqrt(mcmc.effective_sample_size(chain.draws[:, 0]))
        assert abs(chain.draws.mean()) < 3 * se

    def test_upper_quantile(self, normal_chain):
        s = mcmc.summarize(normal_chain)
        assert s["q975"][0] == pytest.approx(3 + 1.959964 * 2, abs=0.05)
        assert s["mean"][0] == pytest.approx(3.0, abs=0.05)

    def test_correlated_target(self):
        chain = mcmc.run_rwm(gaussian_model([0, 0], [[1, 0.7], [0.7, 1]]), 210_000, 10_000, seed=2)
        assert np.corrcoef(chain.draws.T)[0, 1] == pytest.approx(0.7, abs=0.03)

    def test_determinism(self):
        model = gaussian_model([0.0, 1.0], np.eye(2))
        a = mcmc.run_rwm(model, 3000, 1000, seed=5)
        b = mcmc.run_rwm(model, 3000, 1000, seed=5)
        np.testing.assert_array_equal(a.draws, b.draws)
        assert a.acceptance_rate == b.acceptance_rate

    def test_scales_frozen_after_burn_in(self):
        model = gaussian_model([0.0], [[1.0]])
        short = mcmc.run_rwm(model, 2000, 1000, seed=6)
        long = mcmc.run_rwm(model, 5000, 1000, seed=6)
        np.testing.assert_array_equal(short.scales, long.scales)
        np.testing.assert_array_equal(short.draws, long.draws[:1000])

    def test_rejects_non_finite_proposals(self):
        # half-line target: draws must stay positive
        model = ModelSpec(1, lambda th, data: ad.sub(ad.log(ad.getitem(th, (slice(None), 0))),
                                                     ad.getitem(th, (slice(None), 0))))
        chain = mcmc.run_rwm(model, 20_000, 2000, seed=7, start=[1.0], scales=[1.0])
        assert np.all(chain.draws > 0)
        assert chain.draws.mean() == pytest.approx(2.0, abs=0.15)

    def test_non_finite_start(self):
        model = ModelSpec(1, lambda th, data: ad.log(ad.getitem(th, (slice(None), 0))))
        with pytest.raises(InitializationError):
            mcmc.run_rwm(model, 100, 10, seed=0, start=[-1.0], scales=[1.0])

    @pytest.mark.parametrize("it,burn", [(10, 10), (5, 8), (10, -1)])
    def test_invalid_lengths(self, it, burn):
        with pytest.raises(InvalidInputError):
            mcmc.run_rwm(gaussian_model([0.0], [[1.0]]), it, burn, seed=0)


class TestSummaries:
    def test_iid_ess(self):
        x = np.random.default_rng(8).normal(size=20_000)
        assert mcmc.effective_sample_size(x) == pytest.approx(20_000, rel=0.1)

    def test_ar1_ess(self):
        rng = np.random.default_rng(9)
        phi, n = 0.8, 100_000
        x = np.empty(n)
        x[0] = rng.normal()
        e = rng.normal(size=n) * math.sqrt(1 - phi ** 2)
        for t in range(1, n):
            x[t] = phi * x[t - 1] + e[t]
        assert mcmc.effective_sample_size(x) == pytest.approx(n * (1 - phi) / (1 + phi), rel=0.1)

    def test_constant_chain(self):
        s = mcmc.summarize(np.full((100, 2), 3.0))
        np.testing.assert_array_equal(s["sd"], 0.0)
        assert np.all(s["degenerate"]) and np.all(np.isnan(s["ess"]))

    def test_order_statistics(self):
        x = np.arange(1.0, 1001.0)
        s = mcmc.summarize(x)
        assert (s["q025"][0], s["q50"][0], s["q975"][0]) == (25.0, 500.0, 975.0)
        assert s["mean"][0] == 500.5

    def test_write_chain(self, tmp_path):
        chain = mcmc.Chain(np.array([[1.0, 2.0], [0.1, 1 / 3]]), 0.5, np.ones(2))
        mcmc.write_chain(tmp_path / "c.csv", chain, ["a", "b"])
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "a,b" and float(lines[2].split(",")[1]) == 1 / 3
