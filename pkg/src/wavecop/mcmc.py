"""Adaptive random-walk Metropolis, used as the reference posterior.

Proposals are ``theta + exp(l) * s * z`` with per-dimension scales ``s`` and
a global log multiplier ``l``. During burn-in ``l`` follows the
Robbins-Monro recursion ``l <- l + t**-0.6 * (accept - 0.234)`` and ``s`` is
re-estimated twice from the burn-in draws; afterwards everything is frozen,
so the retained draws come from a fixed Metropolis kernel.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .elbo import ModelSpec, laplace_summary
from .errors import DomainError, FitError, InitializationError, InvalidInputError, NonFiniteError

__all__ = ["Chain", "run_rwm", "summarize", "effective_sample_size", "write_chain"]

TARGET_ACCEPT = 0.234


@dataclass
class Chain:
    draws: np.ndarray
    acceptance_rate: float
    scales: np.ndarray


def _safe_log_density(model: ModelSpec, theta) -> float:
    try:
        with np.errstate(all="ignore"):
            val = model.log_density_point(theta)
    except (NonFiniteError, DomainError, FloatingPointError):
        return -math.inf
    return val if math.isfinite(val) else -math.inf


def run_rwm(model: ModelSpec, iterations: int, burn_in: int, seed: int, start=None, scales=None) -> Chain:
    """Run ``iterations`` Metropolis steps and keep the last ``iterations - burn_in``.

    Without ``start``/``scales`` the chain starts at a rough mode with the
    Laplace marginal standard deviations as initial scales (see
    :func:`wavecop.elbo.laplace_summary`).
    """
    if not iterations > burn_in >= 0:
        raise InvalidInputError("need iterations > burn_in >= 0")
    d = model.d
    if start is None or scales is None:
        try:
            mode, sd = laplace_summary(model)
        except (FitError, NonFiniteError, DomainError, np.linalg.LinAlgError):
            mode, sd = (np.zeros(d) if model.start is None else np.asarray(model.start, float)), np.ones(d)
        start = mode if start is None else start
        scales = sd if scales is None else scales
    x = np.array(start, dtype=float)
    s = np.array(scales, dtype=float) * 2.38 / math.sqrt(d)
    if x.shape != (d,) or s.shape != (d,) or np.any(s <= 0):
        raise InvalidInputError("start and scales must be d-vectors with positive scales")
    lp = _safe_log_density(model, x)
    if not math.isfinite(lp):
        raise InitializationError("log_joint is not finite at the start point")

    rng = np.random.default_rng(seed)
    log_mult = 0.0
    keep = iterations - burn_in
    draws = np.empty((keep, d))
    history = np.empty((burn_in, d)) if burn_in else None
    refits = {burn_in // 2, (3 * burn_in) // 4} if burn_in >= 400 else set()
    accepted = 0
    for t in range(iterations):
        z = rng.standard_normal(d)
        prop = x + math.exp(log_mult) * s * z
        lp_prop = _safe_log_density(model, prop)
        log_u = math.log(rng.random())
        acc = 1.0 if lp_prop >= lp else math.exp(lp_prop - lp)
        if log_u < lp_prop - lp:
            x, lp = prop, lp_prop
            if t >= burn_in:
                accepted += 1
        if t < burn_in:
            history[t] = x
            log_mult += (t + 1) ** -0.6 * (acc - TARGET_ACCEPT)
            if t + 1 in refits:
                window = history[(t + 1) // 4 : t + 1]
                sd = window.std(axis=0)
                if np.all(sd > 0):
                    s = sd * 2.38 / math.sqrt(d)
                    log_mult = 0.0
        else:
            draws[t - burn_in] = x
    return Chain(draws=draws, acceptance_rate=accepted / keep, scales=math.exp(log_mult) * s)


def effective_sample_size(x) -> float:
    """ESS of a scalar chain by Geyer's initial positive sequence.

    Returns ``nan`` for a constant chain.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    xc = x - x.mean()
    var = np.dot(xc, xc) / n
    if var <= 0:
        return math.nan
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n] / n
    rho = acov / acov[0]
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return n / max(tau, 1e-12)


def summarize(chain) -> dict:
    """Per-dimension mean, sd, 2.5/50/97.5% quantiles and ESS.

    Quantiles are order statistics (inverse empirical CDF). Dimensions with
    zero spread are flagged in ``degenerate`` and get ``ess = nan``.
    """
    draws = chain.draws if isinstance(chain, Chain) else np.asarray(chain, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    q = np.quantile(draws, [0.025, 0.5, 0.975], axis=0, method="inverted_cdf")
    sd = draws.std(axis=0, ddof=1) if draws.shape[0] > 1 else np.zeros(draws.shape[1])
    return {
        "mean": draws.mean(axis=0),
        "sd": sd,
        "q025": q[0],
        "q50": q[1],
        "q975": q[2],
        "ess": np.array([effective_sample_size(c) for c in draws.T]),
        "degenerate": sd == 0,
    }


def write_chain(path, chain: Chain, names=None) -> None:
    d = chain.draws.shape[1]
    names = names or [f"theta{i}" for i in range(d)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        w.writerows([f"{v:.17g}" for v in row] for row in chain.draws)
