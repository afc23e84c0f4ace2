"""Noncentral chi-squared series against brute-force mpmath references."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import mp_ncchisq_cdf, mp_tilted_tail
from pecv.ncchisq import (
    NcChiSq,
    SeriesConvergenceError,
    ncchisq_cdf,
    ncchisq_cdf_batch,
    tilted_tail_batch,
    tilted_tail_expectation,
)

# values computed once from the mpmath series at 40 digits and frozen; the
# implementation may move by an ulp or two as internals evolve, never more
FROZEN = [
    ("cdf", (5, 3.2, 6.0), 0.3767753791825361),
    ("tilted", (10, 4.7, 3.3, 1.1), 0.016070512450251796),
    ("tilted", (2, 0.0, 0.0, 0.5), 0.5),
]


def test_frozen_reference_values():
    for kind, args, want in FROZEN:
        if kind == "cdf":
            dof, lam, x = args
            got = ncchisq_cdf(NcChiSq(dof, lam), x)
        else:
            dof, lam, thr, rate = args
            got = tilted_tail_expectation(NcChiSq(dof, lam), thr, rate)
        assert got == pytest.approx(want, rel=5e-15)


def test_matches_mpmath_on_fixed_grid():
    for dof in (1, 2, 7, 30):
        for lam in (0.0, 0.04, 1.7, 19.0, 240.0):
            for x in (0.3, 4.0, 41.0):
                got = ncchisq_cdf(NcChiSq(dof, lam), x)
                want = mp_ncchisq_cdf(dof, lam, x)
                assert got == pytest.approx(want, rel=2e-13, abs=1e-14)


def test_tilted_matches_mpmath_on_fixed_grid():
    for dof in (1, 3, 12):
        for lam in (0.0, 2.4, 33.0):
            for thr, rate in ((-2.0, 0.4), (0.0, 1.3), (5.5, 0.02), (18.0, 2.0)):
                got = tilted_tail_expectation(NcChiSq(dof, lam), thr, rate)
                want = mp_tilted_tail(dof, lam, thr, rate)
                assert got == pytest.approx(want, rel=2e-13, abs=1e-14)


def test_central_two_dof_closed_form():
    # lam = 0, dof = 2 is Exp(1/2): CDF(x) = 1 - exp(-x/2)
    xs = np.linspace(0.01, 25.0, 300)
    got = ncchisq_cdf_batch(2, np.zeros_like(xs), xs)
    assert np.max(np.abs(got - (1.0 - np.exp(-0.5 * xs)))) < 1e-10


def test_cdf_monotone_in_x_and_noncentrality():
    xs = np.linspace(0.05, 30.0, 120)
    for lam in (0.0, 0.9, 8.0, 70.0):
        vals = ncchisq_cdf_batch(4, np.full_like(xs, lam), xs)
        assert np.all(np.diff(vals) > 0.0)
    # raising the noncentrality shifts mass right: CDF decreases
    lams = np.linspace(0.0, 50.0, 80)
    vals = ncchisq_cdf_batch(4, lams, np.full_like(lams, 9.0))
    assert np.all(np.diff(vals) < 0.0)


@settings(max_examples=60, deadline=None)
@given(
    dof=st.integers(min_value=1, max_value=40),
    lam=st.floats(min_value=0.0, max_value=500.0),
    x=st.floats(min_value=1e-3, max_value=600.0),
)
def test_cdf_matches_mpmath_randomized(dof, lam, x):
    got = ncchisq_cdf(NcChiSq(dof, lam), x)
    want = mp_ncchisq_cdf(dof, lam, x)
    assert got == pytest.approx(want, rel=5e-13, abs=1e-13)


@settings(max_examples=60, deadline=None)
@given(
    dof=st.integers(min_value=1, max_value=40),
    lam=st.floats(min_value=0.0, max_value=300.0),
    thr=st.floats(min_value=-20.0, max_value=300.0),
    rate=st.floats(min_value=1e-4, max_value=5.0),
)
def test_tilted_matches_mpmath_randomized(dof, lam, thr, rate):
    got = tilted_tail_expectation(NcChiSq(dof, lam), thr, rate)
    want = mp_tilted_tail(dof, lam, thr, rate)
    assert got == pytest.approx(want, rel=5e-13, abs=1e-13)
    assert 0.0 <= got <= 1.0


def test_rate_zero_is_exactly_one():
    assert tilted_tail_expectation(NcChiSq(6, 2.2), 4.0, 0.0) == 1.0
    out = tilted_tail_batch(6, np.array([0.0, 3.0, 50.0]), np.array([1.0, -2.0, 8.0]), 0.0)
    assert np.all(out == 1.0)


def test_batch_agrees_with_scalar_calls():
    rng = np.random.default_rng(7)
    lam = rng.uniform(0.0, 120.0, size=(3, 40))
    x = rng.uniform(0.1, 60.0, size=40)
    thr = rng.uniform(-5.0, 40.0, size=40)
    cdf = ncchisq_cdf_batch(9, lam, x)
    til = tilted_tail_batch(9, lam, thr, 0.62)
    for i in range(3):
        for j in range(0, 40, 7):
            assert cdf[i, j] == pytest.approx(
                ncchisq_cdf(NcChiSq(9, lam[i, j]), x[j]), rel=1e-12
            )
            assert til[i, j] == pytest.approx(
                tilted_tail_expectation(NcChiSq(9, lam[i, j]), thr[j], 0.62), rel=1e-12
            )


def test_huge_noncentrality_blocks_stay_accurate():
    # exercises the float32 block path and the sorted-block windowing
    lam = np.array([2e4, 5e4, 2e5, 1e6])
    x = lam + 4.0  # near the bulk, CDF ~ 0.5
    got = ncchisq_cdf_batch(3, lam, x)
    want = np.array([mp_ncchisq_cdf(3, l, xi, dps=60) for l, xi in zip(lam, x)])
    assert np.max(np.abs(got - want)) < 5e-5


def test_determinism():
    lam = np.linspace(0.0, 90.0, 64).reshape(2, 32)
    thr = np.linspace(-3.0, 50.0, 32)
    a = tilted_tail_batch(5, lam, thr, 0.9)
    b = tilted_tail_batch(5, lam, thr, 0.9)
    assert np.array_equal(a, b)


def test_input_validation():
    with pytest.raises(ValueError):
        NcChiSq(0, 1.0)
    with pytest.raises(ValueError):
        NcChiSq(2, -0.5)
    with pytest.raises(ValueError):
        NcChiSq(2.5, 1.0)
    with pytest.raises(ValueError):
        ncchisq_cdf(NcChiSq(2, 1.0), float("nan"))
    with pytest.raises(ValueError):
        tilted_tail_expectation(NcChiSq(2, 1.0), 1.0, -0.1)
    with pytest.raises(ValueError):
        tilted_tail_batch(2, np.array([[[1.0]]]), 1.0, 0.5)
    assert ncchisq_cdf(NcChiSq(4, 2.0), -3.0) == 0.0


def test_window_overflow_raises():
    with pytest.raises(SeriesConvergenceError):
        ncchisq_cdf(NcChiSq(2, 4e10), 4e10)
