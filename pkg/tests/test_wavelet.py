import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wavecop.errors import InvalidInputError
from wavecop.wavelet import (
    WaveletCoefficients,
    approx_reconstruct,
    dwt,
    dwt_step,
    idwt,
    idwt_step,
    make_filter,
    synthesis_matrix,
)

FAMILIES = ["haar", "db2"]
finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@pytest.mark.parametrize("family", FAMILIES)
def test_filters_are_orthonormal(family):
    f = make_filter(family)
    assert np.sum(f.low ** 2) == pytest.approx(1.0, abs=1e-15)
    assert np.sum(f.low) == pytest.approx(np.sqrt(2.0), abs=1e-14)
    assert np.dot(f.low, f.high) == pytest.approx(0.0, abs=1e-15)
    # double-shift orthogonality
    L = f.length
    for k in range(1, L // 2):
        assert np.dot(f.low[2 * k:], f.low[: L - 2 * k]) == pytest.approx(0.0, abs=1e-15)


def test_db2_taps_match_closed_form():
    s3 = np.sqrt(3.0)
    expected = np.array([1 + s3, 3 + s3, 3 - s3, 1 - s3]) / (4 * np.sqrt(2.0))
    np.testing.assert_allclose(make_filter("db2").low, expected, rtol=0, atol=1e-15)


def test_haar_step_on_known_signal():
    approx, detail = dwt_step([1.0, 1.0, 2.0, 4.0], make_filter("haar"))
    np.testing.assert_allclose(approx, [np.sqrt(2), 6 / np.sqrt(2)])
    np.testing.assert_allclose(np.abs(detail), [0.0, 2 / np.sqrt(2)], atol=1e-15)


def test_db2_unit_coefficient_support():
    # one approximation coefficient spreads over exactly four consecutive samples
    c = np.zeros(8)
    c[2] = 1.0
    out = approx_reconstruct(c, make_filter("db2"))
    assert list(np.flatnonzero(np.abs(out) > 1e-15)) == [4, 5, 6, 7]


@pytest.mark.parametrize("family", FAMILIES)
@settings(max_examples=40, deadline=None)
@given(signal=arrays(float, 64, elements=finite), R=st.integers(1, 5))
def test_perfect_reconstruction_and_parseval(family, signal, R):
    f = make_filter(family)
    coeffs = dwt(signal, f, R)
    assert np.max(np.abs(idwt(coeffs, f) - signal)) < 1e-10 * max(1.0, np.max(np.abs(signal)))
    energy = np.sum(coeffs.approx ** 2) + sum(np.sum(d ** 2) for d in coeffs.details)
    assert abs(energy - np.sum(signal ** 2)) < 1e-10 * max(1.0, np.sum(signal ** 2))


@pytest.mark.parametrize("family", FAMILIES)
def test_coefficient_layout(family):
    coeffs = dwt(np.arange(64.0), make_filter(family), 2)
    assert coeffs.approx.size == 4
    assert [d.size for d in coeffs.details] == [4, 8, 16, 32]
    assert coeffs.levels == 2 and coeffs.original_length == 64


@pytest.mark.parametrize("family", FAMILIES)
def test_synthesis_matrix_matches_reconstruct(family):
    f = make_filter(family)
    c = np.random.default_rng(0).normal(size=32)
    np.testing.assert_allclose(c @ synthesis_matrix(32, f), approx_reconstruct(c, f), atol=1e-14)


def test_idwt_step_inverts_dwt_step():
    f = make_filter("db2")
    x = np.random.default_rng(1).normal(size=16)
    np.testing.assert_allclose(idwt_step(*dwt_step(x, f), f), x, atol=1e-13)


@pytest.mark.parametrize("n", [0, 1, 3, 12])
def test_rejects_non_dyadic_lengths(n):
    with pytest.raises(InvalidInputError):
        dwt_step(np.ones(n), make_filter("haar"))


@pytest.mark.parametrize("R", [0, 6, -1])
def test_rejects_bad_stop_level(R):
    with pytest.raises(InvalidInputError):
        dwt(np.ones(64), make_filter("haar"), R)


def test_idwt_rejects_mismatched_detail():
    f = make_filter("haar")
    with pytest.raises(InvalidInputError):
        idwt_step(np.ones(4), np.ones(8), f)
    with pytest.raises(InvalidInputError):
        WaveletCoefficients(np.ones(4), [np.ones(8)], levels=2, original_length=16)


def test_unknown_family():
    with pytest.raises(ValueError):
        make_filter("db4")
