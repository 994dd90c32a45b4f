"""Joint wavelet-copula variational family.

Flat layout of the parameter vector: ``d`` marginal blocks of
``m + 2`` entries each, ``[coeffs (m), delta1, log_width]``, followed by the
copula block (``d`` log-diagonal then ``d(d-1)/2`` strict-lower entries of the
unconstrained factor; absent for the independence copula).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import copula as cop
from . import marginal as mg
from .errors import InvalidInputError, SupportError
from .wavelet import FilterPair, make_filter

__all__ = [
    "VariationalParams",
    "flat_length",
    "pack",
    "unpack",
    "split_flat",
    "densities",
    "draw_base_noise",
    "sample_joint",
    "log_q",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class VariationalParams:
    marginals: tuple
    copula: cop.CopulaParams

    def __post_init__(self):
        object.__setattr__(self, "marginals", tuple(self.marginals))
        d = len(self.marginals)
        if self.copula.chol_raw.size != cop.n_copula_params(self.copula.variant, d):
            raise InvalidInputError("copula block does not match the number of marginals")

    @property
    def dim(self) -> int:
        return len(self.marginals)

    @property
    def variant(self) -> cop.Variant:
        return self.copula.variant

    @property
    def n_coeffs(self) -> int:
        return self.marginals[0].coeffs.size


def flat_length(d: int, variant, m: int = mg.N_COEFFS) -> int:
    return d * (m + 2) + cop.n_copula_params(variant, d)


def pack(zeta: VariationalParams) -> np.ndarray:
    blocks = [np.concatenate([p.coeffs, [p.delta1, p.log_width]]) for p in zeta.marginals]
    return np.concatenate(blocks + [zeta.copula.chol_raw])


def unpack(v, d: int, variant, m: int = mg.N_COEFFS) -> VariationalParams:
    v = np.asarray(v, dtype=float)
    if v.shape != (flat_length(d, variant, m),):
        raise InvalidInputError(f"flat vector has length {v.size}, expected {flat_length(d, variant, m)}")
    block = v[: d * (m + 2)].reshape(d, m + 2)
    margs = [mg.MarginalParams(b[:m].copy(), float(b[m]), float(b[m + 1])) for b in block]
    return VariationalParams(margs, cop.CopulaParams(variant, v[d * (m + 2):].copy()))


def split_flat(v, d: int, variant, m: int = mg.N_COEFFS):
    """Differentiable view of a flat vector: ``(coeffs, delta1, log_width, chol_raw)``."""
    nm = d * (m + 2)
    block = ad.reshape(ad.getitem(v, slice(0, nm)), (d, m + 2))
    coeffs = ad.getitem(block, (slice(None), slice(0, m)))
    delta1 = ad.getitem(block, (slice(None), m))
    log_width = ad.getitem(block, (slice(None), m + 1))
    chol_raw = ad.getitem(v, slice(nm, None)) if cop.Variant(variant) is cop.Variant.GAUSSIAN else None
    return coeffs, delta1, log_width, chol_raw


def densities(zeta: VariationalParams, f: FilterPair | None = None) -> mg.GridDensity:
    """Batched grid densities of all marginals (batch shape ``(d,)``)."""
    f = make_filter("db2") if f is None else f
    coeffs = np.stack([p.coeffs for p in zeta.marginals])
    if not np.all(np.any(coeffs != 0, axis=1)):
        raise mg.DegenerateDensityError("a marginal has all-zero coefficients")
    delta1 = np.array([p.delta1 for p in zeta.marginals])
    log_width = np.array([p.log_width for p in zeta.marginals])
    return mg.density_from_arrays(coeffs, delta1, log_width, f)


def draw_base_noise(rng: np.random.Generator, S: int, d: int, variant) -> np.ndarray:
    """Uniforms (independence) or standard normals (Gaussian copula), shape ``(S, d)``."""
    if cop.Variant(variant) is cop.Variant.GAUSSIAN:
        return rng.standard_normal((S, d))
    return np.clip(rng.random((S, d)), cop.U_CLAMP, 1.0 - cop.U_CLAMP)


def _uniforms(variant, base_noise, corr):
    if cop.Variant(variant) is cop.Variant.GAUSSIAN:
        return cop.sample_gaussian_copula(corr, base_noise)
    return np.clip(base_noise, cop.U_CLAMP, 1.0 - cop.U_CLAMP)


def sample_joint(zeta: VariationalParams, base_noise, f: FilterPair | None = None) -> np.ndarray:
    """Draws ``theta`` (S x d) from the family given frozen base noise."""
    base_noise = np.asarray(base_noise, dtype=float)
    if base_noise.ndim != 2 or base_noise.shape[1] != zeta.dim:
        raise InvalidInputError(f"base noise must have shape (S, {zeta.dim})")
    g = densities(zeta, f)
    corr = cop.build_correlation(zeta.copula, zeta.dim) if zeta.variant is cop.Variant.GAUSSIAN else None
    u = _uniforms(zeta.variant, base_noise, corr)
    return ad.value(mg.inverse_cdf(g, u))


def log_q(zeta: VariationalParams, theta, f: FilterPair | None = None):
    """Joint log density ``log c(u) + sum_j log q_j(theta_j)`` with ``u_j = F_j(theta_j)``.

    ``theta`` is a d-vector or an ``(S, d)`` array; points outside the support
    box raise :class:`SupportError`.
    """
    th = np.asarray(theta, dtype=float)
    if th.shape[-1] != zeta.dim:
        raise InvalidInputError(f"theta must have trailing dimension {zeta.dim}")
    g = densities(zeta, f)
    out = np.sum(mg.log_pdf_at(g, th), axis=-1)
    if zeta.variant is cop.Variant.GAUSSIAN:
        corr = cop.build_correlation(zeta.copula, zeta.dim)
        u = np.clip(ad.value(mg.cdf_at(g, th)), cop.U_CLAMP, 1.0 - cop.U_CLAMP)
        out = out + cop.gaussian_copula_logpdf(u, corr)
    return out


_HEADER = "# wavecop checkpoint v1"


def save_checkpoint(path, zeta: VariationalParams) -> None:
    """Line-oriented text: header, ``key value`` lines, then one number per line."""
    flat = pack(zeta)
    lines = [
        _HEADER,
        f"d {zeta.dim}",
        f"variant {zeta.variant.value}",
        f"grid {2 * zeta.n_coeffs}",
        f"length {flat.size}",
    ]
    lines += [f"{x:.17g}" for x in flat]
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> VariationalParams:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != _HEADER:
        raise InvalidInputError(f"{path} is not a checkpoint file")
    meta = {}
    for line in text[1:5]:
        key, _, val = line.partition(" ")
        meta[key] = val
    try:
        d, grid, length = int(meta["d"]), int(meta["grid"]), int(meta["length"])
        variant = cop.Variant(meta["variant"])
    except (KeyError, ValueError) as exc:
        raise InvalidInputError(f"malformed checkpoint header: {exc}") from None
    flat = np.array([float(x) for x in text[5:]])
    if flat.size != length:
        raise InvalidInputError("checkpoint body length does not match header")
    return unpack(flat, d, variant, grid // 2)


def check_support(zeta: VariationalParams, theta) -> None:
    g = densities(zeta)
    th = np.asarray(theta, dtype=float)
    if np.any(th < g.lower) or np.any(th > g.upper):
        raise SupportError("theta outside the support box")
