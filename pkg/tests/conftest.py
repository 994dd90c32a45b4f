"""Shared analytic targets for the test suite."""

from dataclasses import dataclass

import numpy as np
import pytest
from scipy import stats

from wavecop import autodiff as ad
from wavecop.elbo import ModelSpec

LOG_2PI = np.log(2 * np.pi)


@dataclass
class Conjugate:
    """``y_i ~ N(theta, 1)`` with prior ``theta ~ N(0, prior_var)``."""

    model: ModelSpec
    y: np.ndarray
    post_mean: float
    post_sd: float
    log_evidence: float


def conjugate_normal(n=50, prior_var=100.0, seed=0, true_theta=1.5) -> Conjugate:
    y = np.random.default_rng(seed).normal(true_theta, 1.0, n)
    ss, sy = float(np.sum(y ** 2)), float(np.sum(y))

    def log_joint(theta, data):
        t = ad.getitem(theta, (slice(None), 0))
        # sum_i (y_i - t)^2 = ss - 2 t sy + n t^2
        lik = ad.add(ad.mul(-0.5 * n, ad.square(t)), ad.mul(sy, t))
        lik = ad.sub(lik, 0.5 * ss + 0.5 * n * LOG_2PI)
        prior = ad.sub(ad.mul(-0.5 / prior_var, ad.square(t)), 0.5 * (LOG_2PI + np.log(prior_var)))
        return ad.add(lik, prior)

    prec = n + 1.0 / prior_var
    cov = np.eye(n) + prior_var * np.ones((n, n))
    evidence = stats.multivariate_normal(np.zeros(n), cov).logpdf(y)
    return Conjugate(ModelSpec(1, log_joint, name="conjugate"), y, sy / prec, prec ** -0.5, float(evidence))


def gaussian_model(mean, cov, name="gaussian") -> ModelSpec:
    """Multivariate normal target with known moments."""
    mean = np.asarray(mean, dtype=float)
    prec = np.linalg.inv(np.asarray(cov, dtype=float))
    const = -0.5 * (mean.size * LOG_2PI + np.linalg.slogdet(cov)[1])

    def log_joint(theta, data):
        r = ad.sub(theta, mean)
        return ad.add(ad.mul(-0.5, ad.sum(ad.mul(ad.matmul(r, prec), r), axis=-1)), const)

    return ModelSpec(mean.size, log_joint, name=name)


@pytest.fixture
def conjugate():
    return conjugate_normal()
