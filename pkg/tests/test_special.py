import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from promptdiag.errors import InvalidCounts, InvalidDf
from promptdiag.special import betainc, binom_cdf_half, binom_two_sided_half, f_pvalue

from .oracles import binom_two_sided_oracle, f_upper_tail_oracle


def test_f_pvalue_edges():
    assert f_pvalue(0.0, 3, 10) == 1.0
    assert f_pvalue(1e12, 3, 10) < 1e-12
    assert f_pvalue(math.inf, 3, 10) == 0.0
    with pytest.raises(InvalidDf):
        f_pvalue(1.0, 0, 10)


def test_f_pvalue_large_df_case():
    # The interaction test of a 10x10 grid on 30 questions.
    p = f_pvalue(1.0, 81, 2871)
    assert abs(p - 0.48) <= 0.01
    assert abs(p - f_upper_tail_oracle(1.0, 81, 2871)) < 1e-6


@pytest.mark.parametrize("f,d1,d2", [(0.5, 2, 7), (1.3, 9, 2871), (2.0, 81, 2871), (3.7, 5, 40), (0.9, 1, 1)])
def test_f_pvalue_matches_quadrature(f, d1, d2):
    assert f_pvalue(f, d1, d2) == pytest.approx(f_upper_tail_oracle(f, d1, d2), abs=1e-6)


@settings(max_examples=80, deadline=None)
@given(st.floats(0.01, 20), st.integers(1, 300), st.integers(1, 3000))
def test_f_pvalue_agrees_with_scipy(f, d1, d2):
    assert f_pvalue(f, d1, d2) == pytest.approx(stats.f.sf(f, d1, d2), rel=1e-9, abs=1e-13)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 100), st.integers(1, 3000), st.floats(0.01, 10), st.floats(0.001, 1))
def test_f_pvalue_strictly_decreasing(d1, d2, f, step):
    lo, hi = f_pvalue(f, d1, d2), f_pvalue(f + step, d1, d2)
    assert hi <= lo
    if lo > 1e-300 and lo < 1:
        assert hi < lo


def test_betainc_symmetric_identity():
    for a, b, x in [(2.5, 7.0, 0.3), (40.5, 1435.5, 0.97), (0.5, 0.5, 0.1)]:
        assert betainc(a, b, x) + betainc(b, a, 1 - x) == pytest.approx(1.0, abs=1e-12)


def test_coin_flip_values():
    assert 0.90 <= float(binom_two_sided_half(35, 72)) <= 0.91
    assert binom_two_sided_half(36, 72) == 1
    assert binom_two_sided_half(0, 72) == Fraction(2, 2 ** 72)
    assert float(binom_two_sided_half(0, 72)) < 1e-20


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 120).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))))
def test_binomial_matches_oracle_and_is_symmetric(kn):
    k, n = kn
    assert binom_two_sided_half(k, n) == float(binom_two_sided_oracle(k, n))
    assert binom_two_sided_half(k, n) == binom_two_sided_half(n - k, n)


def test_binom_cdf_half_exact():
    assert binom_cdf_half(2, 4) == Fraction(11, 16)


@pytest.mark.parametrize("k,n", [(-1, 5), (6, 5), (0, 0), (1.5, 4)])
def test_binomial_invalid_counts(k, n):
    with pytest.raises(InvalidCounts):
        binom_two_sided_half(k, n)
