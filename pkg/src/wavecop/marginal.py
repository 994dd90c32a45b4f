"""Wavelet-parameterized marginal densities on a uniform cell grid.

A marginal is described by ``m`` approximation coefficients, a left endpoint
``delta1`` and a log width ``a``. One synthesis step (details zeroed) turns the
coefficients into a square-root signal ``s`` of length ``n = 2m``; the density
is ``s**2`` normalized over ``n`` equal cells covering ``[delta1, delta1 + e^a]``.

The density is piecewise constant on those cells, so its CDF is exactly the
piecewise-linear curve through the cumulative cell masses and the inverse CDF
is exact linear interpolation. All functions accept ``autodiff.Var`` inputs
and leading batch dimensions (one batch member per model coordinate).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_legendre

from . import autodiff as ad
from .errors import DegenerateDensityError, InvalidInputError, SupportError
from .wavelet import FilterPair, make_filter, synthesis_matrix

__all__ = [
    "N_COEFFS",
    "EPS",
    "MarginalParams",
    "GridDensity",
    "build_density",
    "density_from_arrays",
    "cdf_at",
    "inverse_cdf",
    "neg_entropy",
    "log_pdf_at",
    "mean",
    "sd",
    "quantile",
    "expect",
    "uniform_params",
]

N_COEFFS = 32
EPS = 1e-12


@dataclass(frozen=True)
class MarginalParams:
    coeffs: np.ndarray
    delta1: float
    log_width: float

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        object.__setattr__(self, "coeffs", c)
        if c.ndim != 1 or c.size < 1 or c.size & (c.size - 1):
            raise InvalidInputError("coeffs must be a vector with power-of-two length")

    @property
    def delta2(self) -> float:
        return self.delta1 + float(np.exp(self.log_width))


@dataclass(frozen=True)
class GridDensity:
    """Evaluated marginal density.

    ``pdf[..., i]`` is the density on cell ``i``, ``cdf[..., i]`` the CDF at
    that cell's right edge, ``grid`` the cell midpoints. Fields may hold
    ``Var`` objects when built on a tape.
    """

    lower: object
    spacing: object
    pdf: object
    mass: object
    cdf: object

    @property
    def n_cells(self) -> int:
        return ad.value(self.pdf).shape[-1]

    @property
    def upper(self):
        return ad.value(self.lower) + self.n_cells * ad.value(self.spacing)

    @property
    def grid(self) -> np.ndarray:
        lo, h = ad.value(self.lower), ad.value(self.spacing)
        return lo[..., None] + (np.arange(self.n_cells) + 0.5) * h[..., None]

    @property
    def edges(self) -> np.ndarray:
        lo, h = ad.value(self.lower), ad.value(self.spacing)
        return lo[..., None] + np.arange(self.n_cells + 1) * h[..., None]

    def component(self, j) -> "GridDensity":
        """Plain-array density of batch member ``j``."""
        return GridDensity(*(ad.value(v)[j] for v in
                             (self.lower, self.spacing, self.pdf, self.mass, self.cdf)))

    def detached(self) -> "GridDensity":
        return GridDensity(*(ad.value(v) for v in
                             (self.lower, self.spacing, self.pdf, self.mass, self.cdf)))


def density_from_arrays(coeffs, delta1, log_width, f: FilterPair) -> GridDensity:
    """Batched density construction; ``coeffs`` has shape ``(..., m)``."""
    m = ad.value(coeffs).shape[-1]
    n = 2 * m
    s = ad.matmul(coeffs, synthesis_matrix(m, f))
    raw = ad.square(s)
    total = ad.sum(raw, axis=-1)
    if np.any(ad.value(total) <= 0):
        raise DegenerateDensityError("wavelet coefficients reconstruct to a zero signal")
    mass = ad.div(raw, ad.reshape(total, ad.value(total).shape + (1,)))
    spacing = ad.div(ad.exp(log_width), float(n))
    h = ad.reshape(spacing, ad.value(spacing).shape + (1,))
    pdf = ad.div(mass, h)
    cum = ad.cumulative_sum(mass, axis=-1)
    cdf = ad.div(cum, ad.getitem(cum, (..., slice(n - 1, n))))
    return GridDensity(lower=delta1, spacing=spacing, pdf=pdf, mass=mass, cdf=cdf)


def build_density(p: MarginalParams, f: FilterPair | None = None) -> GridDensity:
    """Evaluate the density of one marginal (Db2 filters by default)."""
    f = make_filter("db2") if f is None else f
    if not np.any(p.coeffs):
        raise DegenerateDensityError("all wavelet coefficients are zero")
    return density_from_arrays(p.coeffs, np.float64(p.delta1), np.float64(p.log_width), f)


def _knots(g: GridDensity):
    """CDF knots (with the leading zero) and the matching cell edges."""
    cdf = g.cdf
    batch = ad.value(cdf).shape[:-1]
    knots = ad.concatenate([np.zeros(batch + (1,)), cdf], axis=-1)
    steps = np.arange(g.n_cells + 1, dtype=float)
    lo = ad.reshape(g.lower, batch + (1,))
    h = ad.reshape(g.spacing, batch + (1,))
    edges = ad.add(lo, ad.mul(h, steps))
    return knots, edges


def cdf_at(g: GridDensity, theta):
    """CDF at ``theta``; 0 below the support and 1 above it."""
    knots, edges = _knots(g)
    return ad.linear_interpolate(theta, edges, knots)


def inverse_cdf(g: GridDensity, u):
    """Inverse CDF by linear interpolation within the cell where the CDF crosses ``u``.

    ``u`` has shape ``(*N, *B)`` for a density with batch shape ``B``. The
    result is differentiable in the density parameters through the stored
    CDF values and cell edges.
    """
    uv = ad.value(u)
    if np.any((uv <= 0) | (uv >= 1)):
        raise InvalidInputError("inverse_cdf needs u strictly inside (0, 1)")
    knots, edges = _knots(g)
    return ad.linear_interpolate(u, knots, edges)


def neg_entropy(g: GridDensity):
    """``E_q[log q] = sum_i pdf_i log(pdf_i) dtheta`` over cells with pdf > EPS.

    This is the marginal term that enters the ELBO with a negative sign.
    """
    keep = (ad.value(g.pdf) > EPS).astype(float)
    safe = ad.add(ad.mul(g.pdf, keep), 1.0 - keep)
    return ad.sum(ad.mul(g.mass, ad.log(safe)), axis=-1)


def log_pdf_at(g: GridDensity, theta) -> np.ndarray:
    """Log density at ``theta`` (shape ``(*N, *B)``); cells below EPS give ``log EPS``."""
    g = g.detached()
    th = np.asarray(theta, dtype=float)
    lo, hi = g.lower, g.upper
    tol = 1e-12 * np.maximum(1.0, np.abs(hi - lo))
    if np.any(th < lo - tol) or np.any(th > hi + tol):
        raise SupportError("theta outside the support [delta1, delta2]")
    cell = np.clip(np.floor((th - lo) / g.spacing).astype(int), 0, g.n_cells - 1)
    pdf = np.broadcast_to(g.pdf, th.shape + (g.n_cells,))
    vals = np.take_along_axis(pdf, cell[..., None], -1)[..., 0]
    return np.log(np.maximum(vals, EPS))


def mean(g: GridDensity) -> np.ndarray:
    g = g.detached()
    return np.sum(g.mass * g.grid, axis=-1)


def sd(g: GridDensity) -> np.ndarray:
    g = g.detached()
    mu = np.sum(g.mass * g.grid, axis=-1)
    # within-cell uniform spread adds spacing**2 / 12
    var = np.sum(g.mass * (g.grid - mu[..., None]) ** 2, axis=-1) + g.spacing ** 2 / 12.0
    return np.sqrt(var)


def quantile(g: GridDensity, q) -> np.ndarray:
    g = g.detached()
    q = np.asarray(q, dtype=float)
    batch = g.pdf.shape[:-1]
    u = np.broadcast_to(q.reshape(q.shape + (1,) * len(batch)), q.shape + batch)
    return ad.value(inverse_cdf(g, u))


def expect(g: GridDensity, fn, nodes: int = 8) -> np.ndarray:
    """``E_q[fn(theta)]`` by Gauss-Legendre quadrature inside each cell."""
    g = g.detached()
    x, w = roots_legendre(nodes)
    h = g.spacing[..., None, None]
    left = g.edges[..., :-1, None]
    pts = left + 0.5 * (x + 1.0) * h
    vals = fn(pts)
    cell_avg = 0.5 * np.sum(vals * w, axis=-1)
    return np.sum(g.mass * cell_avg, axis=-1)


def uniform_params(lower: float, upper: float, m: int = N_COEFFS) -> MarginalParams:
    """Constant coefficients, giving the uniform density on ``[lower, upper]``."""
    if not upper > lower:
        raise InvalidInputError("upper must exceed lower")
    return MarginalParams(np.ones(m), float(lower), float(np.log(upper - lower)))
