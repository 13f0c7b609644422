"""Student's t distribution and the paired t-test, without scipy.

The regularized incomplete beta function is evaluated with the modified
Lentz continued fraction, using the symmetry I_x(a, b) = 1 - I_{1-x}(b, a)
to stay in the rapidly converging region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

_TINY = 1e-300
_EPS = 1e-16
_MAX_ITER = 10000


def _beta_cf(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
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
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float, complement: Optional[float] = None) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and 0 <= x <= 1.

    ``complement`` may supply 1 - x when the caller knows it more precisely
    than the subtraction would give (x close to 1).
    """
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    y = 1.0 - x if complement is None else complement
    if x == 0.0 or y == 0.0:
        return 0.0 if x == 0.0 else 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log(y))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _beta_cf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _beta_cf(b, a, y) / b


def t_sf_two_sided(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("df must be positive")
    if math.isinf(t):
        return 0.0
    if t == 0.0:
        return 1.0
    t2 = t * t
    x, y = df / (df + t2), t2 / (df + t2)
    if y < 0.5:
        # near-zero t: the tail is 1 - I_y(1/2, df/2), accurate because y is small
        return min(1.0, max(0.0, 1.0 - betainc(0.5, df / 2.0, y, complement=x)))
    return min(1.0, max(0.0, betainc(df / 2.0, 0.5, x, complement=y)))


def t_cdf(t: float, df: float) -> float:
    tail = 0.5 * t_sf_two_sided(t, df)
    return 1.0 - tail if t > 0 else tail


@dataclass(frozen=True)
class SignificanceResult:
    t_statistic: float
    p_value: float
    n_subsets: int
    mean_difference: float = 0.0
    zero_variance: bool = False

    def to_dict(self) -> dict:
        return {"t_statistic": self.t_statistic, "p_value": self.p_value,
                "n_subsets": self.n_subsets, "mean_difference": self.mean_difference,
                "zero_variance": self.zero_variance}


def paired_ttest(pairs: Sequence[Tuple[float, float]]) -> SignificanceResult:
    """Two-sided paired t-test on differences ``treat - base``.

    Identical non-zero differences give t = +-inf, p = 0 and ``zero_variance``;
    all-zero differences give t = 0, p = 1.
    """
    n = len(pairs)
    if n < 2:
        raise ValueError(f"paired t-test needs at least 2 subsets, got {n}")
    diffs = [float(treat) - float(base) for base, treat in pairs]
    mean = math.fsum(diffs) / n
    var = math.fsum((d - mean) ** 2 for d in diffs) / (n - 1)
    if var == 0.0:
        if mean == 0.0:
            return SignificanceResult(0.0, 1.0, n, 0.0, True)
        return SignificanceResult(math.copysign(math.inf, mean), 0.0, n, mean, True)
    t = mean / math.sqrt(var / n)
    return SignificanceResult(t, t_sf_two_sided(t, n - 1), n, mean)
