"""Regularized incomplete beta, F upper tail and exact binomial tails."""
from __future__ import annotations

import math
from fractions import Fraction

from .errors import InvalidCounts, InvalidDf

_TINY = 1e-300
_EPS = 1e-15
_MAX_ITER = 20000


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for I_x(a, b), modified Lentz evaluation."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc requires a > 0 and b > 0")
    if not 0.0 <= x <= 1.0:
        raise ValueError("betainc requires 0 <= x <= 1")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # The fraction converges fast only below the mean; reflect above it.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def betainc_upper(a: float, b: float, x: float) -> float:
    """1 - I_x(a, b) computed without cancellation in the far tail."""
    return betainc(b, a, 1.0 - x)


def f_pvalue(f: float, d1: float, d2: float) -> float:
    """Upper-tail probability P(F_{d1,d2} > f)."""
    if not (d1 >= 1 and d2 >= 1) or not (math.isfinite(d1) and math.isfinite(d2)):
        raise InvalidDf(f"degrees of freedom must be >= 1, got ({d1}, {d2})")
    if math.isnan(f) or f < 0:
        raise ValueError(f"F statistic must be >= 0, got {f}")
    if f == 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    x = d2 / (d2 + d1 * f)
    p = betainc(d2 / 2.0, d1 / 2.0, x)
    return min(1.0, max(0.0, p))


def binom_cdf_half(k: int, n: int) -> Fraction:
    """Exact P(X <= k) for X ~ Binomial(n, 1/2)."""
    if k < 0:
        return Fraction(0)
    if k >= n:
        return Fraction(1)
    return Fraction(sum(math.comb(n, i) for i in range(k + 1)), 2 ** n)


def binom_two_sided_half(k: int, n: int) -> float:
    """Two-sided exact binomial p-value against p0 = 1/2.

    Defined as ``min(1, 2 * min(P(X <= k), P(X >= k)))``, evaluated in exact
    rational arithmetic before the final conversion to float.
    """
    if isinstance(k, bool) or isinstance(n, bool) or int(k) != k or int(n) != n:
        raise InvalidCounts(f"counts must be integers, got ({k}, {n})")
    k, n = int(k), int(n)
    if n < 1 or not 0 <= k <= n:
        raise InvalidCounts(f"need 0 <= k <= n and n >= 1, got k={k}, n={n}")
    lower = binom_cdf_half(k, n)
    upper = 1 - binom_cdf_half(k - 1, n)
    return float(min(Fraction(1), 2 * min(lower, upper)))
