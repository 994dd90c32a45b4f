"""Benchmark models, data simulators and evaluation metrics.

Every ``*_log_joint`` takes a batch ``theta`` of shape ``(S, d)`` (array or
``Var``) and returns ``S`` values of ``log p(y, theta)``. Positive parameters
enter on the log scale and the correlation through ``atanh``; the matching
Jacobian terms are included, so each model lives on all of R^d.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from . import autodiff as ad
from .elbo import ModelSpec
from .errors import ConfigError, InvalidInputError

__all__ = [
    "LogisticData",
    "ArdData",
    "HierData",
    "logistic_log_joint",
    "ard_log_joint",
    "hier_log_joint",
    "simulate_logistic",
    "simulate_ard",
    "simulate_hier",
    "draw_beta",
    "logistic_model",
    "ard_model",
    "hier_model",
    "hier_report",
    "coef_mae",
    "predictive_mae",
    "select_variables",
    "confusion_counts",
    "replication_seeds",
    "write_data",
    "read_data",
]

_LOG_2PI = math.log(2 * math.pi)
PRIOR_VAR = 100.0
ARD_A = ARD_B = 0.001
ARD_C = ARD_D = 0.01
HIER_SHAPE = HIER_RATE = 0.01


@dataclass
class LogisticData:
    X: np.ndarray
    y: np.ndarray
    beta: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise InvalidInputError("X must be n x p and y length n")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise InvalidInputError("logistic outcomes must be 0 or 1")
        if self.X.shape[0] < self.X.shape[1]:
            raise InvalidInputError("need n >= p")


@dataclass
class ArdData:
    X: np.ndarray
    y: np.ndarray
    beta: np.ndarray | None = None
    X_test: np.ndarray | None = None
    y_test: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise InvalidInputError("X must be n x p and y length n")

    @property
    def relevant(self) -> np.ndarray:
        """Boolean mask of truly nonzero coefficients."""
        return np.asarray(self.beta) != 0


@dataclass
class HierData:
    individual: np.ndarray  # integer index in [0, n_ind)
    X: np.ndarray  # N x 2 fixed-effect design (intercept, covariate)
    Z: np.ndarray  # N x 2 random-effect design
    y: np.ndarray
    n_ind: int
    truth: dict = field(default_factory=dict)

    def __post_init__(self):
        self.individual = np.asarray(self.individual, dtype=int)
        self.X = np.asarray(self.X, dtype=float)
        self.Z = np.asarray(self.Z, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        N = self.y.size
        if self.Z.shape != (N, 2) or self.X.shape[0] != N or self.individual.shape != (N,):
            raise InvalidInputError("hierarchical data arrays have inconsistent shapes")
        if self.individual.min() < 0 or self.individual.max() >= self.n_ind:
            raise InvalidInputError("individual index out of range")

    @property
    def n_rep(self) -> int:
        return self.y.size // self.n_ind

    @cached_property
    def random_effect_design(self) -> np.ndarray:
        """Matrix ``W`` (2 n_ind x N) with ``b_flat @ W`` the random-effect means."""
        N = self.y.size
        W = np.zeros((2 * self.n_ind, N))
        cols = np.arange(N)
        W[2 * self.individual, cols] = self.Z[:, 0]
        W[2 * self.individual + 1, cols] = self.Z[:, 1]
        return W


def _col(theta, j):
    return ad.getitem(theta, (slice(None), j))


def _cols(theta, start, stop):
    return ad.getitem(theta, (slice(None), slice(start, stop)))


def _normal_prior(beta, var):
    p = ad.value(beta).shape[-1]
    return ad.sub(ad.mul(-0.5 / var, ad.sum(ad.square(beta), axis=-1)), 0.5 * p * (_LOG_2PI + math.log(var)))


def logistic_log_joint(theta, data: LogisticData):
    """Bernoulli-logit likelihood plus a N(0, 100 I) prior on the coefficients."""
    eta = ad.matmul(theta, data.X.T)
    ll = ad.sum(ad.sub(ad.mul(data.y, eta), ad.softplus(eta)), axis=-1)
    return ad.add(ll, _normal_prior(theta, PRIOR_VAR))


def _gamma_logpdf_logscale(log_x, shape, rate):
    """Gamma(shape, rate) log density of ``x = exp(log_x)`` with the ``+log x`` Jacobian."""
    return ad.sub(ad.mul(shape, log_x), ad.mul(rate, ad.exp(log_x))) + (shape * math.log(rate) - gammaln(shape))


def ard_log_joint(theta, data: ArdData):
    """Gaussian regression with ARD prior; ``theta = (beta, log alpha, log sigma^2)``.

    beta_j | alpha, s2 ~ N(0, s2 / alpha_j), alpha_j ~ Gamma(a, b) (shape-rate),
    s2 ~ Inv-Gamma(c, d).
    """
    n, p = data.X.shape
    beta = _cols(theta, 0, p)
    log_alpha = _cols(theta, p, 2 * p)
    log_s2 = _col(theta, 2 * p)
    inv_s2 = ad.exp(ad.neg(log_s2))
    resid = ad.sub(data.y, ad.matmul(beta, data.X.T))
    ll = ad.sub(ad.mul(-0.5 * n, ad.add(log_s2, _LOG_2PI)),
                ad.mul(0.5, ad.mul(inv_s2, ad.sum(ad.square(resid), axis=-1))))
    quad = ad.sum(ad.mul(ad.exp(log_alpha), ad.square(beta)), axis=-1)
    prior_beta = ad.sub(
        ad.add(ad.mul(0.5, ad.sum(log_alpha, axis=-1)), ad.mul(-0.5 * p, ad.add(log_s2, _LOG_2PI))),
        ad.mul(0.5, ad.mul(inv_s2, quad)),
    )
    prior_alpha = ad.sum(_gamma_logpdf_logscale(log_alpha, ARD_A, ARD_B), axis=-1)
    # Inv-Gamma(c, d) on s2 plus the log-scale Jacobian: -c log s2 - d / s2 + const
    prior_s2 = ad.sub(ad.mul(-ARD_C, log_s2), ad.mul(ARD_D, inv_s2)) + (ARD_C * math.log(ARD_D) - gammaln(ARD_C))
    return ad.add(ad.add(ll, prior_beta), ad.add(prior_alpha, prior_s2))


def hier_layout(n_ind: int) -> dict:
    """Column positions in ``theta`` for the hierarchical model."""
    nb = 2 + 2 * n_ind
    return {"beta": slice(0, 2), "b": slice(2, nb), "log_sigma": nb, "log_sigma1": nb + 1,
            "log_sigma2": nb + 2, "atanh_rho": nb + 3, "d": nb + 4}


def hier_log_joint(theta, data: HierData):
    """Linear mixed model with correlated random intercept and slope.

    ``theta = (beta0, beta1, b_11, b_21, ..., b_1n, b_2n, log s, log s1, log s2, atanh rho)``;
    b_i ~ N2(0, D R D), Gamma(shape, rate) priors on s, s1, s2, rho ~ U(-1, 1).
    """
    lay = hier_layout(data.n_ind)
    W = data.random_effect_design
    N = data.y.size
    beta = _cols(theta, 0, 2)
    b = ad.getitem(theta, (slice(None), lay["b"]))
    log_s, log_s1, log_s2, w = (_col(theta, lay[k]) for k in ("log_sigma", "log_sigma1", "log_sigma2", "atanh_rho"))

    mu = ad.add(ad.matmul(beta, data.X.T), ad.matmul(b, W))
    sse = ad.sum(ad.square(ad.sub(data.y, mu)), axis=-1)
    ll = ad.sub(ad.mul(-float(N), log_s), ad.mul(0.5, ad.mul(ad.exp(ad.mul(-2.0, log_s)), sse))) - 0.5 * N * _LOG_2PI

    # bivariate normal prior on each (b1i, b2i)
    S = ad.value(theta).shape[0]
    bb = ad.reshape(b, (S, data.n_ind, 2))
    u1 = ad.mul(ad.getitem(bb, (slice(None), slice(None), 0)), ad.reshape(ad.exp(ad.neg(log_s1)), (S, 1)))
    u2 = ad.mul(ad.getitem(bb, (slice(None), slice(None), 1)), ad.reshape(ad.exp(ad.neg(log_s2)), (S, 1)))
    rho = ad.tanh(w)
    # log(1 - rho^2) = 2 (log 2 - w - softplus(-2w)), stable for large |w|
    log_1mr2 = ad.mul(2.0, ad.sub(ad.sub(math.log(2.0), w), ad.softplus(ad.mul(-2.0, w))))
    quad = ad.sub(ad.add(ad.sum(ad.square(u1), axis=-1), ad.sum(ad.square(u2), axis=-1)),
                  ad.mul(ad.mul(2.0, rho), ad.sum(ad.mul(u1, u2), axis=-1)))
    n = data.n_ind
    prior_b = ad.sub(
        ad.mul(-float(n), ad.add(ad.add(log_s1, log_s2), ad.mul(0.5, log_1mr2))),
        ad.mul(0.5, ad.mul(quad, ad.exp(ad.neg(log_1mr2)))),
    ) - n * _LOG_2PI

    prior_beta = _normal_prior(beta, PRIOR_VAR)
    prior_scales = ad.add(ad.add(_gamma_logpdf_logscale(log_s, HIER_SHAPE, HIER_RATE),
                                 _gamma_logpdf_logscale(log_s1, HIER_SHAPE, HIER_RATE)),
                          _gamma_logpdf_logscale(log_s2, HIER_SHAPE, HIER_RATE))
    # rho ~ U(-1, 1): density 1/2, Jacobian d rho / d w = 1 - rho^2
    prior_rho = ad.add(log_1mr2, -math.log(2.0))
    return ad.add(ad.add(ll, prior_b), ad.add(ad.add(prior_beta, prior_scales), prior_rho))


HIER_REPORTED = ("beta0", "beta1", "sigma", "sigma1", "sigma2", "sigma12")


def hier_report(theta, n_ind: int) -> np.ndarray:
    """Map draws of ``theta`` to ``(beta0, beta1, sigma, sigma1, sigma2, sigma12)``."""
    th = np.atleast_2d(np.asarray(theta, dtype=float))
    lay = hier_layout(n_ind)
    s = np.exp(th[:, lay["log_sigma"]])
    s1 = np.exp(th[:, lay["log_sigma1"]])
    s2 = np.exp(th[:, lay["log_sigma2"]])
    rho = np.tanh(th[:, lay["atanh_rho"]])
    return np.column_stack([th[:, 0], th[:, 1], s, s1, s2, rho * s1 * s2])


# -- simulators -------------------------------------------------------------

def _check_positive(**kw):
    for k, v in kw.items():
        if not isinstance(v, (int, np.integer)) or v < 1:
            raise ConfigError(f"{k} must be a positive integer, got {v!r}")


def draw_beta(p: int, seed: int, r: float = 0.0) -> np.ndarray:
    """N(0, 1) coefficients with ``ceil(r p)`` of them set to zero at random."""
    rng = np.random.default_rng(seed)
    beta = rng.standard_normal(p)
    beta[rng.choice(p, size=math.ceil(r * p), replace=False)] = 0.0
    return beta


def _given_beta(beta, p):
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (p,):
        raise ConfigError(f"beta must have length {p}")
    return beta


def simulate_logistic(p: int, n: int, seed: int, beta=None) -> LogisticData:
    """Intercept plus ``p - 1`` standard-normal covariates; beta ~ N(0, 1) unless given."""
    _check_positive(p=p, n=n)
    if n < p:
        raise ConfigError("logistic simulation needs n >= p")
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    beta = rng.standard_normal(p) if beta is None else _given_beta(beta, p)
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-X @ beta))).astype(float)
    return LogisticData(X, y, beta)


def simulate_ard(p: int, n: int, r: float, seed: int, sigma: float = 1.0, test_fraction: float = 0.1,
                 beta=None) -> ArdData:
    """Sparse linear regression: ``ceil(r p)`` of the N(0, 1) coefficients zeroed.

    ``n`` rows are simulated; the last ``round(test_fraction n)`` are held out.
    A given ``beta`` replaces the random draw (and ``r`` is then ignored).
    """
    _check_positive(p=p, n=n)
    if not 0 <= r < 1:
        raise ConfigError("sparsity r must lie in [0, 1)")
    if not 0 <= test_fraction < 1 or not sigma > 0:
        raise ConfigError("need 0 <= test_fraction < 1 and sigma > 0")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    if beta is None:
        beta = rng.standard_normal(p)
        beta[rng.choice(p, size=math.ceil(r * p), replace=False)] = 0.0
    else:
        beta = _given_beta(beta, p)
    y = X @ beta + sigma * rng.standard_normal(n)
    n_test = int(round(test_fraction * n))
    n_train = n - n_test
    return ArdData(X[:n_train], y[:n_train], beta,
                   X[n_train:] if n_test else None, y[n_train:] if n_test else None)


def simulate_hier(n_ind: int, n_rep: int, rho: float, seed: int, sigma2: float = 0.25) -> HierData:
    """Random intercept and slope with ``beta = (-2, 1.5)``, ``sigma = sigma1 = 1``."""
    _check_positive(n_ind=n_ind, n_rep=n_rep)
    if not -1 < rho < 1:
        raise ConfigError("rho must lie in (-1, 1)")
    if not sigma2 > 0:
        raise ConfigError("sigma2 must be positive")
    rng = np.random.default_rng(seed)
    beta = np.array([-2.0, 1.5])
    sigma, sigma1 = 1.0, 1.0
    cov = np.array([[sigma1 ** 2, rho * sigma1 * sigma2], [rho * sigma1 * sigma2, sigma2 ** 2]])
    b = rng.multivariate_normal(np.zeros(2), cov, size=n_ind)
    individual = np.repeat(np.arange(n_ind), n_rep)
    x = rng.standard_normal(individual.size)
    X = np.column_stack([np.ones_like(x), x])
    Z = X.copy()
    y = X @ beta + np.sum(Z * b[individual], axis=1) + sigma * rng.standard_normal(x.size)
    truth = {"beta0": beta[0], "beta1": beta[1], "sigma": sigma, "sigma1": sigma1, "sigma2": sigma2,
             "sigma12": rho * sigma1 * sigma2, "rho": rho, "b": b}
    return HierData(individual, X, Z, y, n_ind, truth)


# -- model specs --------------------------------------------------------------

def logistic_model(data: LogisticData) -> ModelSpec:
    p = data.X.shape[1]
    return ModelSpec(p, logistic_log_joint, data, "logistic", tuple(f"beta{i}" for i in range(p)))


def ard_model(data: ArdData) -> ModelSpec:
    p = data.X.shape[1]
    names = tuple(f"beta{i}" for i in range(p)) + tuple(f"log_alpha{i}" for i in range(p)) + ("log_sigma2",)
    # least-squares start keeps the mode search away from the alpha -> infinity corner
    beta0, *_ = np.linalg.lstsq(data.X, data.y, rcond=None)
    s2 = max(np.mean((data.y - data.X @ beta0) ** 2), 1e-3)
    start = np.concatenate([beta0, -np.log(beta0 ** 2 / s2 + 1e-2), [np.log(s2)]])
    return ModelSpec(2 * p + 1, ard_log_joint, data, "ard", names, start)


def hier_start(data: HierData) -> np.ndarray:
    """Moment-based starting point: OLS fixed effects, per-individual OLS random effects.

    The joint density is unbounded as ``sigma1 -> 0`` with ``b -> 0``, so a
    mode search started at ``b = 0`` slides into that funnel; starting from
    data-driven random effects keeps it at the local mode in the bulk.
    """
    beta, *_ = np.linalg.lstsq(data.X, data.y, rcond=None)
    resid = data.y - data.X @ beta
    b = np.zeros((data.n_ind, 2))
    for i in range(data.n_ind):
        rows = data.individual == i
        b[i], *_ = np.linalg.lstsq(data.Z[rows], resid[rows], rcond=None)
    e = resid - np.sum(data.Z * b[data.individual], axis=1)
    dof = max(data.y.size - 2 * data.n_ind - 2, 1)
    sigma = max(np.sqrt(np.sum(e ** 2) / dof), 1e-2)
    s1, s2 = (max(b[:, c].std(), 1e-2) for c in range(2))
    rho = np.clip(np.corrcoef(b.T)[0, 1], -0.9, 0.9) if data.n_ind > 2 else 0.0
    return np.concatenate([beta, b.ravel(), np.log([sigma, s1, s2]), [np.arctanh(rho)]])


def _hier_groups(data: HierData):
    return [np.flatnonzero(data.individual == i) for i in range(data.n_ind)]


def _hier_cov(phi):
    s, s1, s2 = np.exp(phi[2:5])
    rho = np.tanh(phi[5])
    return s, np.array([[s1 * s1, rho * s1 * s2], [rho * s1 * s2, s2 * s2]])


def hier_marginal_log_posterior(phi, data: HierData, groups=None) -> float:
    """Log posterior of ``phi = (beta0, beta1, log s, log s1, log s2, atanh rho)`` with b integrated out.

    Uses ``y_i ~ N(X_i beta, Z_i Sigma Z_i^T + s^2 I)`` per individual plus the
    same priors and Jacobians as :func:`hier_log_joint`.
    """
    groups = _hier_groups(data) if groups is None else groups
    phi = np.asarray(phi, dtype=float)
    s, Sig = _hier_cov(phi)
    total = 0.0
    for rows in groups:
        Z = data.Z[rows]
        V = Z @ Sig @ Z.T + s * s * np.eye(rows.size)
        r = data.y[rows] - data.X[rows] @ phi[:2]
        L = np.linalg.cholesky(V)
        w = np.linalg.solve(L, r)
        total -= 0.5 * (rows.size * _LOG_2PI + 2 * np.sum(np.log(np.diag(L))) + w @ w)
    total += -0.5 * phi[:2] @ phi[:2] / PRIOR_VAR - (_LOG_2PI + math.log(PRIOR_VAR))
    for u in phi[2:5]:
        total += HIER_SHAPE * u - HIER_RATE * math.exp(u) + HIER_SHAPE * math.log(HIER_RATE) - gammaln(HIER_SHAPE)
    w = phi[5]
    total += 2 * (math.log(2.0) - w - np.logaddexp(0.0, -2 * w)) - math.log(2.0)
    return float(total)


def hier_laplace(data: HierData):
    """Rough mode and scales for :func:`hier_log_joint` from the collapsed posterior.

    The joint density is unbounded as ``sigma1 -> 0`` with ``b -> 0``, so a
    joint mode search slides into that funnel. Instead the six
    hyperparameters are set at the mode of the posterior with ``b``
    integrated out, and each ``b_i`` at its conditional mean given them.
    Scales combine the collapsed Laplace covariance with the conditional
    variance of ``b_i``. Returns ``(start, scales)``.
    """
    from scipy import optimize

    groups = _hier_groups(data)
    moments = hier_start(data)
    lay = hier_layout(data.n_ind)
    phi0 = np.concatenate([moments[:2], moments[lay["log_sigma"]:]])

    def f(phi):
        try:
            return -hier_marginal_log_posterior(phi, data, groups)
        except np.linalg.LinAlgError:
            return 1e300

    bounds = [(None, None)] * 2 + [(-7.0, 7.0)] * 3 + [(-4.0, 4.0)]
    phi = optimize.minimize(f, phi0, method="L-BFGS-B", bounds=bounds).x
    h = 1e-4
    H = np.empty((6, 6))
    E6 = np.eye(6) * h
    for i in range(6):
        for j in range(i, 6):
            H[i, j] = H[j, i] = (f(phi + E6[i] + E6[j]) - f(phi + E6[i] - E6[j])
                                 - f(phi - E6[i] + E6[j]) + f(phi - E6[i] - E6[j])) / (4 * h * h)
    try:
        cov_phi = np.linalg.inv(H)
        if np.any(np.diag(cov_phi) <= 0):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        cov_phi = np.diag(1.0 / np.maximum(np.abs(np.diag(H)), 1e-6))
    s, Sig = _hier_cov(phi)
    b = np.empty((data.n_ind, 2))
    b_var = np.empty((data.n_ind, 2))
    for i, rows in enumerate(groups):
        Z, X = data.Z[rows], data.X[rows]
        Vinv = np.linalg.inv(Z @ Sig @ Z.T + s * s * np.eye(rows.size))
        gain = Sig @ Z.T @ Vinv
        b[i] = gain @ (data.y[rows] - X @ phi[:2])
        J = -gain @ X  # sensitivity of the conditional mean to beta
        b_var[i] = np.diag(Sig - gain @ Z @ Sig) + np.diag(J @ cov_phi[:2, :2] @ J.T)
    start = np.concatenate([phi[:2], b.ravel(), phi[2:]])
    scales = np.sqrt(np.concatenate([np.diag(cov_phi)[:2], b_var.ravel(), np.diag(cov_phi)[2:]]))
    return start, scales


def hier_model(data: HierData) -> ModelSpec:
    lay = hier_layout(data.n_ind)
    names = ("beta0", "beta1") + tuple(f"b{c + 1}_{i}" for i in range(data.n_ind) for c in range(2)) + (
        "log_sigma", "log_sigma1", "log_sigma2", "atanh_rho")
    start, scales = hier_laplace(data)
    return ModelSpec(lay["d"], hier_log_joint, data, "hier", names, start, scales)


# -- metrics ----------------------------------------------------------------

def coef_mae(estimates, truths) -> np.ndarray:
    """Per-coefficient mean absolute error over replications (rows of ``estimates``)."""
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    tr = np.asarray(truths, dtype=float)
    if tr.ndim == 1:
        tr = np.broadcast_to(tr, est.shape)
    if tr.shape != est.shape:
        raise InvalidInputError("estimates and truths have different shapes")
    return np.mean(np.abs(est - tr), axis=0)


def predictive_mae(beta_hat, X_test, y_test) -> float:
    """Mean absolute error of plug-in predictions ``X_test @ beta_hat``."""
    pred = np.asarray(X_test, dtype=float) @ np.asarray(beta_hat, dtype=float)
    return float(np.mean(np.abs(pred - np.asarray(y_test, dtype=float))))


def select_variables(alpha_hat) -> np.ndarray:
    """Indices with posterior precision strictly above the median.

    Large ``alpha`` means strong shrinkage, so these are the coefficients
    judged irrelevant; the relevant set is the complement.
    """
    a = np.asarray(alpha_hat, dtype=float)
    return np.flatnonzero(a > np.median(a))


def confusion_counts(K, truth_relevant) -> tuple:
    """``(TP, FP, FN, TN)`` with "selected relevant" = not in ``K``."""
    rel = np.asarray(truth_relevant, dtype=bool)
    chosen = np.ones(rel.size, dtype=bool)
    chosen[np.asarray(K, dtype=int)] = False
    tp = int(np.sum(chosen & rel))
    fp = int(np.sum(chosen & ~rel))
    fn = int(np.sum(~chosen & rel))
    tn = int(np.sum(~chosen & ~rel))
    return tp, fp, fn, tn


def replication_seeds(master: int, R: int) -> list:
    """Independent per-replication seeds spawned from ``master``."""
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(master).spawn(R)]


# -- data files ---------------------------------------------------------------

def _fmt(x) -> str:
    return f"{float(x):.17g}"


def write_data(path, data) -> None:
    """One CSV row per observation at 17 significant digits."""
    if isinstance(data, HierData):
        header = ["individual", "x0", "x1", "z0", "z1", "y"]
        rows = ([str(i), *map(_fmt, x), *map(_fmt, z), _fmt(y)]
                for i, x, z, y in zip(data.individual, data.X, data.Z, data.y))
    elif isinstance(data, (LogisticData, ArdData)):
        p = data.X.shape[1]
        header = ["y"] + [f"x{j}" for j in range(p)]
        rows = ([_fmt(y), *map(_fmt, x)] for x, y in zip(data.X, data.y))
    else:
        raise InvalidInputError(f"cannot write {type(data).__name__}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_data(path, kind: str):
    """Inverse of :func:`write_data`; ``kind`` is logistic, ard or hier."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidInputError(f"{path} is empty")
    header, body = rows[0], np.array(rows[1:], dtype=float)
    if kind == "hier":
        if header != ["individual", "x0", "x1", "z0", "z1", "y"]:
            raise InvalidInputError(f"{path} does not have the hierarchical data header")
        ind = body[:, 0].astype(int)
        return HierData(ind, body[:, 1:3], body[:, 3:5], body[:, 5], int(ind.max()) + 1)
    if kind not in ("logistic", "ard") or header[0] != "y":
        raise InvalidInputError(f"{path}: unknown data kind {kind!r} or bad header")
    cls = LogisticData if kind == "logistic" else ArdData
    return cls(body[:, 1:], body[:, 0])


def write_table(path, header, rows) -> None:
    """CSV with a header row; floats at 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
