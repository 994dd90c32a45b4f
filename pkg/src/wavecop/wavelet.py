"""Orthonormal two-channel filter banks with periodic boundaries.

Analysis applies ``(Ha)_n = sum_k h[k - 2n] a[k]`` (and the same with ``g``),
synthesis applies the adjoint ``(H*c)_k = sum_n h[k - 2n] c[n]``. All indices
wrap modulo the signal length, so every operator here is exactly orthogonal
on dyadic lengths.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "Family",
    "FilterPair",
    "WaveletCoefficients",
    "make_filter",
    "dwt_step",
    "idwt_step",
    "dwt",
    "idwt",
    "approx_reconstruct",
    "synthesis_matrix",
]


class Family(str, enum.Enum):
    HAAR = "haar"
    DB2 = "db2"


@dataclass(frozen=True)
class FilterPair:
    low: np.ndarray
    high: np.ndarray
    family: Family

    @property
    def length(self) -> int:
        return self.low.size


@dataclass
class WaveletCoefficients:
    """Output of a partial cascade: ``approx`` at level R, details R..J-1."""

    approx: np.ndarray
    details: list = field(default_factory=list)  # finest last: d^(R), ..., d^(J-1)
    levels: int = 0
    original_length: int = 0

    def __post_init__(self):
        total = self.approx.size + sum(d.size for d in self.details)
        if total != self.original_length:
            raise InvalidInputError(
                f"coefficient count {total} does not match original length {self.original_length}"
            )
        if self.approx.size != 2 ** self.levels:
            raise InvalidInputError("approximation length must equal 2**levels")
        for j, d in enumerate(self.details, start=self.levels):
            if d.size != 2 ** j:
                raise InvalidInputError(f"detail level {j} has length {d.size}, expected {2 ** j}")


def _high_from_low(low: np.ndarray) -> np.ndarray:
    # g_k = (-1)^k h_{1-k}, shifted by L-2 so that its support is [0, L)
    L = low.size
    k = np.arange(L)
    return (-1.0) ** k * low[L - 1 - k]


def make_filter(family) -> FilterPair:
    """Return the orthonormal low/high-pass pair for ``family`` ("haar" or "db2")."""
    family = Family(family)
    if family is Family.HAAR:
        low = np.array([1.0, 1.0]) / np.sqrt(2.0)
    else:
        s3 = np.sqrt(3.0)
        low = np.array([1 + s3, 3 + s3, 3 - s3, 1 - s3]) / (4 * np.sqrt(2.0))
    low.setflags(write=False)
    high = _high_from_low(low)
    high.setflags(write=False)
    return FilterPair(low=low, high=high, family=family)


def _log2_length(n: int) -> int:
    if n < 2 or n & (n - 1):
        raise InvalidInputError(f"signal length {n} is not a power of two >= 2")
    return n.bit_length() - 1


def _analysis_index(n: int, L: int) -> np.ndarray:
    # idx[m, t] = (2m + t) mod n
    return (2 * np.arange(n // 2)[:, None] + np.arange(L)[None, :]) % n


def dwt_step(signal, f: FilterPair):
    """One level of filtering and downsampling.

    Returns ``(approx, detail)``, each half the length of ``signal``.
    """
    a = np.asarray(signal, dtype=float)
    n = a.shape[-1]
    _log2_length(n)
    idx = _analysis_index(n, f.length)
    windows = a[..., idx]
    return windows @ f.low, windows @ f.high


def _upsample_filter(c: np.ndarray, taps: np.ndarray) -> np.ndarray:
    m = c.shape[-1]
    n = 2 * m
    out = np.zeros(c.shape[:-1] + (n,))
    pos = 2 * np.arange(m)
    for t, h in enumerate(taps):
        # indices (2m + t) mod n are distinct for a fixed tap t
        out[..., (pos + t) % n] += h * c
    return out


def idwt_step(approx, detail, f: FilterPair) -> np.ndarray:
    """Invert :func:`dwt_step`: upsample, filter with h and g, and add."""
    c = np.asarray(approx, dtype=float)
    d = np.asarray(detail, dtype=float)
    if c.shape != d.shape:
        raise InvalidInputError(f"approx shape {c.shape} != detail shape {d.shape}")
    if c.shape[-1] < 1 or c.shape[-1] & (c.shape[-1] - 1):
        raise InvalidInputError(f"coefficient length {c.shape[-1]} is not a power of two")
    return _upsample_filter(c, f.low) + _upsample_filter(d, f.high)


def dwt(signal, f: FilterPair, stop_level: int) -> WaveletCoefficients:
    """Cascade ``dwt_step`` from length ``2**J`` down to an approximation of length ``2**R``."""
    a = np.asarray(signal, dtype=float)
    J = _log2_length(a.shape[-1])
    R = int(stop_level)
    if not 0 < R <= J - 1:
        raise InvalidInputError(f"stop level {R} outside (0, {J - 1}]")
    details = []
    for _ in range(J - R):
        a, d = dwt_step(a, f)
        details.append(d)
    details.reverse()
    return WaveletCoefficients(approx=a, details=details, levels=R, original_length=2 ** J)


def idwt(coeffs: WaveletCoefficients, f: FilterPair) -> np.ndarray:
    a = np.asarray(coeffs.approx, dtype=float)
    for d in coeffs.details:
        if d.shape != a.shape:
            raise InvalidInputError(
                f"detail of length {d.shape[-1]} cannot pair with approximation of length {a.shape[-1]}"
            )
        a = idwt_step(a, d, f)
    if a.shape[-1] != coeffs.original_length:
        raise InvalidInputError("reconstructed length does not match original_length")
    return a


def approx_reconstruct(c, f: FilterPair) -> np.ndarray:
    """Single synthesis step with all detail coefficients set to zero."""
    c = np.asarray(c, dtype=float)
    return idwt_step(c, np.zeros_like(c), f)


@lru_cache(maxsize=16)
def _synthesis_matrix(m: int, family: Family) -> np.ndarray:
    M = approx_reconstruct(np.eye(m), make_filter(family))
    M.setflags(write=False)
    return M


def synthesis_matrix(m: int, f: FilterPair) -> np.ndarray:
    """Matrix ``M`` (m x 2m) with ``c @ M == approx_reconstruct(c, f)``."""
    _log2_length(2 * m)
    return _synthesis_matrix(m, f.family)
