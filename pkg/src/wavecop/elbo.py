"""Monte-Carlo ELBO, pathwise gradients and the stochastic optimization loop.

The estimator is

    ELBO = mean_s log p(y, theta_s) - E_q[log c] - sum_j E_{q_j}[log q_j]

with ``theta_s`` drawn through the inverse-CDF/copula map from base noise that
is held fixed while the value and gradient are computed. The marginal terms
are exact sums over each density's cells; the copula term is ``-1/2 log|P|``.
Optimizers *minimize* ``-ELBO``, so steps move against the gradient passed in.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from . import autodiff as ad
from . import copula as cop
from . import family as fam
from . import marginal as mg
from .errors import ConfigError, DomainError, FitError, InvalidInputError, NonFiniteError
from .wavelet import make_filter

__all__ = [
    "ModelSpec",
    "FitConfig",
    "FitResult",
    "OPTIMIZERS",
    "INIT_STRATEGIES",
    "elbo_objective",
    "estimate_elbo",
    "grad_elbo",
    "elbo_and_grad",
    "adam_step",
    "rmsprop_step",
    "init_params",
    "find_mode",
    "laplace_summary",
    "posterior_summaries",
    "fit",
]

OPTIMIZERS = ("adam", "rmsprop")
INIT_STRATEGIES = ("laplace-box", "manual")


@dataclass(frozen=True)
class ModelSpec:
    """A target density ``log p(y, theta)`` on an unconstrained ``theta`` in R^d.

    ``log_joint(theta, data)`` takes an ``(S, d)`` batch (array or ``Var``)
    and returns ``S`` log densities, including priors and transform Jacobians.
    A model may supply ``start`` and ``scales`` (a rough mode and marginal
    standard deviations); when both are given they replace the generic
    mode search used for initialization.
    """

    d: int
    log_joint: Callable
    data: object = None
    name: str = "model"
    param_names: tuple = ()
    start: np.ndarray | None = None
    scales: np.ndarray | None = None

    def __post_init__(self):
        if self.d < 1:
            raise InvalidInputError("model dimension must be positive")
        if not self.param_names:
            object.__setattr__(self, "param_names", tuple(f"theta{i}" for i in range(self.d)))
        if len(self.param_names) != self.d:
            raise InvalidInputError("param_names must have d entries")

    def log_density(self, theta):
        return self.log_joint(theta, self.data)

    def log_density_point(self, theta) -> float:
        """Tape-free evaluation at a single d-vector."""
        return float(np.asarray(self.log_joint(np.asarray(theta, dtype=float)[None, :], self.data))[0])


@dataclass(frozen=True)
class FitConfig:
    optimizer: str = "adam"
    learning_rate: float = 0.01
    betas: tuple = (0.9, 0.999)
    epsilon: float = 1e-8
    rms_alpha: float = 0.5
    rms_momentum: float = 0.9
    iterations: int = 2000
    mc_samples: int = 50
    seed: int = 0
    init: str = "laplace-box"
    variant: str = "independence"
    wavelet: str = "db2"
    box: tuple | None = None  # per-dimension (lower, upper) for "manual" or as fallback
    average_tail: float = 0.25  # fraction of final iterates averaged into the returned parameters

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.init not in INIT_STRATEGIES:
            raise ConfigError(f"unknown init strategy {self.init!r}")
        try:
            cop.Variant(self.variant)
        except ValueError:
            raise ConfigError(f"unknown copula variant {self.variant!r}") from None
        if self.wavelet not in ("haar", "db2"):
            raise ConfigError(f"unknown wavelet family {self.wavelet!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.mc_samples < 1 or self.iterations < 1:
            raise ConfigError("mc_samples and iterations must be at least 1")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ConfigError("adam betas must lie in [0, 1)")
        if not 0 <= self.rms_alpha < 1 or not 0 <= self.rms_momentum < 1:
            raise ConfigError("rmsprop alpha and momentum must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if not 0 <= self.average_tail < 1:
            raise ConfigError("average_tail must lie in [0, 1)")
        if self.init == "manual" and self.box is None:
            raise ConfigError("manual init needs a box")


@dataclass
class FitResult:
    zeta: fam.VariationalParams
    elbo_trace: np.ndarray
    wall_time: float
    summaries: dict
    wall_ms: np.ndarray = field(default_factory=lambda: np.zeros(0))


# -- objective ----------------------------------------------------------------

def _log_joint_checked(model: ModelSpec, theta):
    try:
        return model.log_density(theta)
    except (NonFiniteError, DomainError) as exc:
        th = ad.value(theta)
        bad = None
        for row in th:
            try:
                if not math.isfinite(model.log_density_point(row)):
                    bad = row
                    break
            except (NonFiniteError, DomainError):
                bad = row
                break
        raise FitError(f"log_joint is not finite at a sampled point ({exc})", theta=bad) from exc


def elbo_objective(v, d: int, variant, model: ModelSpec, base_noise, f=None):
    """ELBO as a function of the flat parameter vector ``v`` (array or ``Var``)."""
    f = make_filter("db2") if f is None else f
    variant = cop.Variant(variant)
    coeffs, delta1, log_width, chol_raw = fam.split_flat(v, d, variant)
    g = mg.density_from_arrays(coeffs, delta1, log_width, f)
    if variant is cop.Variant.GAUSSIAN:
        corr = cop.build_correlation(cop.CopulaParams(variant, np.zeros(ad.value(chol_raw).size)),
                                     d, chol_raw=chol_raw)
        u = cop.sample_gaussian_copula(corr, base_noise)
        copula_term = ad.mul(-0.5, corr.logdet)
    else:
        u = np.clip(base_noise, cop.U_CLAMP, 1.0 - cop.U_CLAMP)
        copula_term = 0.0
    theta = mg.inverse_cdf(g, u)
    lp = _log_joint_checked(model, theta)
    return ad.sub(ad.sub(ad.mean(lp), copula_term), ad.sum(mg.neg_entropy(g)))


def _check_noise(zeta, base_noise, S):
    base_noise = np.asarray(base_noise, dtype=float)
    if base_noise.ndim != 2 or base_noise.shape[1] != zeta.dim:
        raise InvalidInputError(f"base noise must have shape (S, {zeta.dim})")
    if S is not None and base_noise.shape[0] != S:
        raise InvalidInputError(f"base noise has {base_noise.shape[0]} rows, expected {S}")
    if zeta.variant is cop.Variant.INDEPENDENCE and np.any((base_noise < 0) | (base_noise > 1)):
        raise InvalidInputError("independence base noise must be uniforms")
    return base_noise


def estimate_elbo(zeta: fam.VariationalParams, model: ModelSpec, base_noise, S=None, f=None) -> float:
    noise = _check_noise(zeta, base_noise, S)
    return float(elbo_objective(fam.pack(zeta), zeta.dim, zeta.variant, model, noise, f))


def elbo_and_grad(flat, d, variant, model, base_noise, f=None):
    tape = ad.Tape()
    x = tape.var(flat)
    val = elbo_objective(x, d, variant, model, base_noise, f)
    (g,) = ad.backward(val, [x])
    return float(val.value), g


def grad_elbo(zeta: fam.VariationalParams, model: ModelSpec, base_noise, S=None, f=None) -> np.ndarray:
    """Pathwise gradient of the ELBO estimate with the base noise frozen."""
    noise = _check_noise(zeta, base_noise, S)
    return elbo_and_grad(fam.pack(zeta), zeta.dim, zeta.variant, model, noise, f)[1]


# -- optimizers ---------------------------------------------------------------

def adam_step(state, g, t: int, config: FitConfig):
    """One Adam update; ``state = (zeta, m, v)`` and ``g`` is the descent gradient.

    m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2
    zeta <- zeta - lr * m_hat / (sqrt(v_hat) + eps), with bias-corrected hats.
    """
    zeta, m, v = (np.asarray(s, dtype=float) for s in state)
    g = np.asarray(g, dtype=float)
    b1, b2 = config.betas
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    return zeta - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon), m, v


def rmsprop_step(state, g, config: FitConfig):
    """RMSProp with momentum; ``state = (zeta, sq, buf)``.

    sq <- alpha sq + (1 - alpha) g^2
    buf <- momentum buf + g / (sqrt(sq) + eps)
    zeta <- zeta - lr * buf
    """
    zeta, sq, buf = (np.asarray(s, dtype=float) for s in state)
    g = np.asarray(g, dtype=float)
    sq = config.rms_alpha * sq + (1 - config.rms_alpha) * g * g
    buf = config.rms_momentum * buf + g / (np.sqrt(sq) + config.epsilon)
    return zeta - config.learning_rate * buf, sq, buf


# -- initialization -----------------------------------------------------------

def _point_value_and_grad(model: ModelSpec, theta):
    tape = ad.Tape()
    x = tape.var(np.asarray(theta, dtype=float)[None, :])
    lp = ad.sum(model.log_density(x))
    (g,) = ad.backward(lp, [x])
    return float(lp.value), g[0]


def find_mode(model: ModelSpec, start=None, maxiter: int = 500):
    """Rough posterior mode and marginal standard deviations.

    L-BFGS on ``-log p`` followed by a finite-difference Hessian of the
    reverse-mode gradient; the scales are ``sqrt(diag(H^-1))``.
    """
    x0 = np.zeros(model.d) if start is None else np.asarray(start, dtype=float)

    def negative(theta):
        val, g = _point_value_and_grad(model, theta)
        return -val, -g

    res = optimize.minimize(negative, x0, jac=True, method="L-BFGS-B", options={"maxiter": maxiter})
    mode = res.x
    if not np.all(np.isfinite(mode)):
        raise FitError("mode search produced non-finite values")
    H = np.empty((model.d, model.d))
    for i in range(model.d):
        h = 1e-5 * max(1.0, abs(mode[i]))
        e = np.zeros(model.d)
        e[i] = h
        H[i] = -(_point_value_and_grad(model, mode + e)[1] - _point_value_and_grad(model, mode - e)[1]) / (2 * h)
    H = 0.5 * (H + H.T)
    try:
        np.linalg.cholesky(H)
        var = np.diag(np.linalg.inv(H))
    except np.linalg.LinAlgError:
        diag = np.diag(H)
        var = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    if not np.all(np.isfinite(var)) or np.any(var <= 0):
        raise FitError("curvature at the mode is not usable")
    return mode, np.sqrt(var)


def laplace_summary(model: ModelSpec):
    """``(mode, sd)`` from the model itself when it provides them, else :func:`find_mode`."""
    if model.start is not None and model.scales is not None:
        return np.asarray(model.start, dtype=float), np.asarray(model.scales, dtype=float)
    with np.errstate(all="ignore"):
        return find_mode(model, model.start)


def _box_params(box, variant, d, m=mg.N_COEFFS):
    box = np.asarray(box, dtype=float).reshape(d, 2)
    margs = [mg.uniform_params(lo, hi, m) for lo, hi in box]
    return fam.VariationalParams(margs, cop.identity_copula(variant, d))


def init_params(model: ModelSpec, strategy: str = "laplace-box", variant="independence", box=None,
                half_width: float = 6.0) -> fam.VariationalParams:
    """Starting point: uniform marginals on a box and an identity copula.

    ``laplace-box`` centres each box on a rough mode with half-width
    ``half_width`` marginal standard deviations; ``manual`` uses ``box``
    directly. A failed mode search falls back to ``box`` (or the unit box).
    """
    if strategy == "manual":
        if box is None:
            raise ConfigError("manual init needs a box")
        return _box_params(box, variant, model.d)
    if strategy != "laplace-box":
        raise ConfigError(f"unknown init strategy {strategy!r}")
    try:
        mode, scale = laplace_summary(model)
    except (FitError, NonFiniteError, DomainError, np.linalg.LinAlgError) as exc:
        fallback = box if box is not None else [(0.0, 1.0)] * model.d
        warnings.warn(f"mode search failed ({exc}); using {'the given' if box is not None else 'the unit'} box",
                      RuntimeWarning, stacklevel=2)
        return _box_params(fallback, variant, model.d)
    lo = mode - half_width * scale
    return _box_params(np.column_stack([lo, lo + 2 * half_width * scale]), variant, model.d)


# -- fitting ------------------------------------------------------------------

def posterior_summaries(zeta: fam.VariationalParams, f=None) -> dict:
    """Per-dimension mean, sd and quantiles of the fitted marginals."""
    g = fam.densities(zeta, f).detached()
    qs = mg.quantile(g, [0.025, 0.5, 0.975])
    return {"mean": mg.mean(g), "sd": mg.sd(g), "q025": qs[0], "q50": qs[1], "q975": qs[2]}


def fit(model: ModelSpec, config: FitConfig, init: fam.VariationalParams | None = None) -> FitResult:
    """Run the stochastic optimization for ``config.iterations`` steps.

    Every iteration draws fresh base noise from a generator seeded by
    ``config.seed``, evaluates the ELBO and its pathwise gradient and takes
    one optimizer step on ``-ELBO``. The returned parameters average the
    final ``average_tail`` fraction of iterates.
    """
    variant = cop.Variant(config.variant)
    f = make_filter(config.wavelet)
    if init is None:
        init = init_params(model, config.init, variant, config.box)
    if init.dim != model.d or init.variant is not variant:
        raise ConfigError("initial parameters do not match the model dimension or copula variant")
    rng = np.random.default_rng(config.seed)
    d, S, T = model.d, config.mc_samples, config.iterations
    zeta = fam.pack(init)
    m1 = np.zeros_like(zeta)
    m2 = np.zeros_like(zeta)
    trace = np.empty(T)
    wall_ms = np.empty(T)
    n_avg = int(math.floor(config.average_tail * T))
    avg = np.zeros_like(zeta)
    t0 = time.perf_counter()
    for t in range(1, T + 1):
        noise = fam.draw_base_noise(rng, S, d, variant)
        try:
            val, g = elbo_and_grad(zeta, d, variant, model, noise, f)
        except FitError as exc:
            raise FitError(f"iteration {t}: {exc}", trace=trace[: t - 1], theta=exc.theta) from exc
        except (NonFiniteError, DomainError, mg.DegenerateDensityError) as exc:
            raise FitError(f"iteration {t}: {exc}", trace=trace[: t - 1]) from exc
        if not math.isfinite(val):
            raise FitError(f"iteration {t}: non-finite ELBO", trace=trace[: t - 1])
        trace[t - 1] = val
        if config.optimizer == "adam":
            zeta, m1, m2 = adam_step((zeta, m1, m2), -g, t, config)
        else:
            zeta, m1, m2 = rmsprop_step((zeta, m1, m2), -g, config)
        if not np.all(np.isfinite(zeta)):
            raise FitError(f"iteration {t}: parameters became non-finite", trace=trace[:t])
        if t > T - n_avg:
            avg += zeta
        wall_ms[t - 1] = 1e3 * (time.perf_counter() - t0)
    if n_avg:
        zeta = avg / n_avg
    result = fam.unpack(zeta, d, variant)
    return FitResult(zeta=result, elbo_trace=trace, wall_time=time.perf_counter() - t0,
                     summaries=posterior_summaries(result, f), wall_ms=wall_ms)
