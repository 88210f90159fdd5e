"""Upper incomplete gamma function by series and continued fraction."""

import math

from ..errors import InputError

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


def _lower_series(a: float, x: float) -> float:
    # gamma(a, x) = x^a e^-x sum_n x^n / (a (a+1) ... (a+n))
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    else:
        raise ArithmeticError("incomplete gamma series did not converge")
    return total * math.exp(-x + a * math.log(x))


def _upper_continued_fraction(a: float, x: float) -> float:
    # modified Lentz evaluation of the Legendre continued fraction
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    else:
        raise ArithmeticError("incomplete gamma continued fraction did not converge")
    return h * math.exp(-x + a * math.log(x))


def upper_incomplete_gamma(a: float, x: float) -> float:
    """Gamma(a, x), the integral of t^(a-1) e^-t over [x, inf)."""
    if a <= 0:
        raise InputError("a must be positive")
    if x < 0:
        raise InputError("x must be nonnegative")
    if x == 0:
        return math.gamma(a)
    if x < a + 1.0:
        return math.gamma(a) - _lower_series(a, x)
    return _upper_continued_fraction(a, x)


def lower_incomplete_gamma(a: float, x: float) -> float:
    """gamma(a, x), the integral of t^(a-1) e^-t over [0, x]."""
    if a <= 0:
        raise InputError("a must be positive")
    if x < 0:
        raise InputError("x must be nonnegative")
    if x == 0:
        return 0.0
    if x < a + 1.0:
        return _lower_series(a, x)
    return math.gamma(a) - _upper_continued_fraction(a, x)
