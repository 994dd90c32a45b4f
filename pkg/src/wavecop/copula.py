"""Independence and Gaussian copulas.

The Gaussian copula's correlation matrix comes from an unconstrained lower
factor ``L`` (log-diagonal plus free strict-lower entries): ``Sigma = L L^T``
and ``P = D^-1/2 Sigma D^-1/2``. Because ``D^-1/2 L`` is itself lower
triangular with a positive diagonal, it *is* the Cholesky factor of ``P``;
no factorization is needed on the differentiable path.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DomainError, InvalidInputError, NotApplicableError

__all__ = [
    "Variant",
    "CopulaParams",
    "CorrelationMatrix",
    "U_CLAMP",
    "n_copula_params",
    "lower_factor",
    "build_correlation",
    "gaussian_copula_logpdf",
    "independence_logpdf",
    "sample_gaussian_copula",
    "copula_entropy_term",
    "identity_copula",
    "from_correlation",
]

U_CLAMP = 1e-9


class Variant(str, enum.Enum):
    INDEPENDENCE = "independence"
    GAUSSIAN = "gaussian"


def n_copula_params(variant, d: int) -> int:
    return d * (d + 1) // 2 if Variant(variant) is Variant.GAUSSIAN else 0


@dataclass(frozen=True)
class CopulaParams:
    variant: Variant
    chol_raw: np.ndarray = None  # d log-diagonal entries, then strict lower row-major

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        raw = np.zeros(0) if self.chol_raw is None else np.asarray(self.chol_raw, dtype=float)
        object.__setattr__(self, "chol_raw", raw)
        if self.variant is Variant.INDEPENDENCE and raw.size:
            raise InvalidInputError("independence copula takes no parameters")

    @property
    def dim(self) -> int:
        # raw length d(d+1)/2
        return int(round((np.sqrt(8 * self.chol_raw.size + 1) - 1) / 2))


@dataclass(frozen=True)
class CorrelationMatrix:
    P: object
    chol_P: object

    @property
    def logdet(self):
        return ad.logdet_from_cholesky(self.chol_P)


def identity_copula(variant, d: int) -> CopulaParams:
    """Copula parameters whose correlation matrix is the identity."""
    return CopulaParams(variant, np.zeros(n_copula_params(variant, d)))


def from_correlation(P) -> CopulaParams:
    """Gaussian-copula parameters reproducing the correlation matrix ``P``."""
    P = np.asarray(P, dtype=float)
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise DomainError("from_correlation", "matrix is not positive definite") from None
    rows, cols = np.tril_indices(P.shape[0], -1)
    return CopulaParams(Variant.GAUSSIAN, np.concatenate([np.log(np.diag(L)), L[rows, cols]]))


def lower_factor(chol_raw, d: int):
    """Lower-triangular factor with ``exp`` applied to the diagonal entries."""
    raw = chol_raw
    if ad.value(raw).shape != (d * (d + 1) // 2,):
        raise InvalidInputError(f"expected {d * (d + 1) // 2} Cholesky parameters")
    diag = ad.exp(ad.getitem(raw, slice(0, d)))
    rows, cols = np.tril_indices(d, -1)
    L = ad.scatter(diag, np.diag_indices(d), (d, d))
    if rows.size:
        L = ad.add(L, ad.scatter(ad.getitem(raw, slice(d, None)), (rows, cols), (d, d)))
    return L


def build_correlation(cp: CopulaParams, d: int | None = None, chol_raw=None) -> CorrelationMatrix:
    """Correlation matrix from the unconstrained factor.

    ``chol_raw`` overrides ``cp.chol_raw`` (used to pass a tape variable).
    """
    if cp.variant is not Variant.GAUSSIAN:
        raise NotApplicableError("the independence copula has no correlation matrix")
    d = cp.dim if d is None else d
    raw = cp.chol_raw if chol_raw is None else chol_raw
    L = lower_factor(raw, d)
    row_norm = ad.sqrt(ad.sum(ad.square(L), axis=1))
    chol_P = ad.div(L, ad.reshape(row_norm, (d, 1)))
    P = ad.matmul(chol_P, ad.transpose(chol_P))
    return CorrelationMatrix(P=P, chol_P=chol_P)


def _check_open_unit(u, name):
    uv = ad.value(u)
    if np.any((uv <= 0) | (uv >= 1)):
        raise DomainError(name, "copula arguments must lie in the open unit interval")


def gaussian_copula_logpdf(u, corr: CorrelationMatrix):
    """``log c(u) = -1/2 log|P| - 1/2 z^T (P^-1 - I) z`` with ``z = Phi^-1(u)``.

    ``u`` has shape ``(d,)`` or ``(S, d)``; returns a scalar or ``(S,)``.
    """
    _check_open_unit(u, "gaussian_copula_logpdf")
    z = ad.normal_quantile(ad.clip(u, U_CLAMP, 1.0 - U_CLAMP))
    zv = ad.value(z)
    zt = ad.transpose(z) if zv.ndim == 2 else z
    w = ad.triangular_solve(corr.chol_P, zt, lower=True)
    quad = ad.sub(ad.sum(ad.square(w), axis=0), ad.sum(ad.square(zt), axis=0))
    return ad.sub(ad.mul(-0.5, corr.logdet), ad.mul(0.5, quad))


def independence_logpdf(u):
    """Log density of the product copula: zero everywhere on the open cube."""
    _check_open_unit(u, "independence_logpdf")
    uv = ad.value(u)
    return np.zeros(uv.shape[:-1]) if uv.ndim > 1 else 0.0


def sample_gaussian_copula(corr: CorrelationMatrix, z_base):
    """Map standard-normal draws ``z_base`` (S x d) to copula uniforms.

    Rows are ``u = Phi(chol_P z)``, clamped to ``[U_CLAMP, 1 - U_CLAMP]``.
    """
    y = ad.matmul(z_base, ad.transpose(corr.chol_P))
    return ad.clip(ad.normal_cdf(y), U_CLAMP, 1.0 - U_CLAMP)


def copula_entropy_term(cp: CopulaParams, corr: CorrelationMatrix | None = None):
    """``E_q[log c]``: 0 for independence, ``-1/2 log|P|`` for the Gaussian copula."""
    if cp.variant is Variant.INDEPENDENCE:
        return 0.0
    corr = build_correlation(cp) if corr is None else corr
    return ad.mul(-0.5, corr.logdet)
