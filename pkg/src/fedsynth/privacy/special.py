"""Student's t quantiles through the regularized incomplete beta function.

Upper tails are handled directly (``t_upper_quantile(df, q)`` with ``q`` as
small as 1e-300) so that confidence levels like ``1 - 1e-15`` never go through
a lossy ``1 - q`` subtraction.
"""

from __future__ import annotations

import math

_TINY = 1e-300


def log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _beta_cf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete beta continued fraction
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, 10_000):
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
        if abs(delta - 1.0) < 1e-16:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc_reg(a: float, b: float, x: float, y: float | None = None) -> float:
    """Regularized incomplete beta ``I_x(a, b)``.

    ``y`` may carry an accurately computed ``1 - x`` for ``x`` close to 1.
    """
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if y is None:
        y = 1.0 - x
    if x == 0.0 or y == 0.0:
        return 0.0 if x == 0.0 else 1.0
    log_front = a * math.log(x) + b * math.log(y) - log_beta(a, b)
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _beta_cf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _beta_cf(b, a, y) / b


def _log1p_t2(t: float, df: float) -> float:
    # log(1 + t^2/df) without overflowing t^2
    t = abs(t)
    if t > 1e150:
        return 2.0 * math.log(t) - math.log(df) + math.log1p(df / t / t)
    return math.log1p(t * t / df)


def t_logpdf(t: float, df: float) -> float:
    return (math.lgamma((df + 1) / 2) - math.lgamma(df / 2) - 0.5 * math.log(df * math.pi)
            - (df + 1) / 2 * _log1p_t2(t, df))


def t_pdf(t: float, df: float) -> float:
    return math.exp(t_logpdf(t, df))


def t_sf(t: float, df: float) -> float:
    """Upper tail ``P(T > t)`` for the Student's t distribution with ``df`` degrees."""
    if t < 0:
        return 1.0 - t_sf(-t, df)
    if t == 0:
        return 0.5
    # P(T > t) = I_{df/(df+t^2)}(df/2, 1/2) / 2; betainc_reg evaluates the
    # continued fraction on the side that keeps small tails relatively accurate
    if t > 1e150:
        return math.exp(_t_log_sf_far(t, df))
    t2 = t * t
    return 0.5 * betainc_reg(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2))


def _t_log_sf_far(t: float, df: float) -> float:
    # x = df/(df+t^2) < 1e-290 here, so the continued fraction and (1-x)^(1/2) are 1 in double
    a = df / 2.0
    log_x = -_log1p_t2(t, df)
    return a * log_x - math.log(a) - log_beta(a, 0.5) - math.log(2.0)


def _t_log_sf(t: float, df: float) -> float:
    if t > 1e150:
        return _t_log_sf_far(t, df)
    s = t_sf(t, df)
    return math.log(s) if s > 0.0 else -math.inf


def t_cdf(t: float, df: float) -> float:
    return 1.0 - t_sf(t, df) if t >= 0 else t_sf(-t, df)


def _check_df(df: float):
    if not df >= 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")


def t_upper_quantile(df: float, q: float) -> float:
    """The ``t`` with ``P(T > t) = q``, i.e. ``F^{-1}_df(1 - q)``."""
    _check_df(df)
    if not 0.0 < q < 1.0:
        raise ValueError(f"tail probability must lie in (0, 1), got {q}")
    if q == 0.5:
        return 0.0
    if q > 0.5:
        return -t_upper_quantile(df, 1.0 - q)
    log_q = math.log(q)
    lo, hi = 0.0, 1.0
    while _t_log_sf(hi, df) > log_q:
        lo, hi = hi, hi * 2.0
        if hi > 1e306:
            raise ArithmeticError("quantile bracket overflow")
    t = 0.5 * (lo + hi)
    for _ in range(400):
        log_s = _t_log_sf(t, df)
        if log_s > log_q:
            lo = t
        else:
            hi = t
        if log_s == -math.inf:
            t = 0.5 * (lo + hi)
            continue
        # Newton on log S(t), whose derivative is -pdf/S
        t_new = t + (log_s - log_q) * math.exp(log_s - t_logpdf(t, df))
        if not lo < t_new < hi:
            t_new = 0.5 * (lo + hi)
        if abs(t_new - t) <= 1e-15 * max(1.0, abs(t)):
            return t_new
        t = t_new
    return t


def t_quantile(df: float, p: float) -> float:
    """Inverse CDF ``F^{-1}_df(p)`` of the Student's t distribution."""
    _check_df(df)
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    if p > 0.5:
        return t_upper_quantile(df, 1.0 - p)
    return -t_upper_quantile(df, p)
