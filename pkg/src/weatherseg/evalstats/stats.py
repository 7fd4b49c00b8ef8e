"""Student's t distribution and one-tailed two-sample t-tests."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Union

_TINY = 1e-300
_EPS = 1e-16
_MAX_ITER = 10000


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc_reg(a: float, b: float, x: float, one_minus_x: float | None = None) -> float:
    """Regularized incomplete beta I_x(a, b).

    ``one_minus_x`` may be passed when it is known more accurately than
    ``1 - x``.
    """
    if a <= 0 or b <= 0:
        raise ValueError("betainc_reg requires a > 0 and b > 0")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x={x} outside [0, 1]")
    y = 1.0 - x if one_minus_x is None else one_minus_x
    if x == 0.0:
        return 0.0
    if y == 0.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log(y))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, y) / b


def student_t_sf(t: float, df: float) -> float:
    """Upper tail P(T > t)."""
    if not df > 0:
        raise ValueError(f"degrees of freedom must be > 0, got {df}")
    if t == 0:
        return 0.5
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    t2 = t * t
    x = df / (df + t2)
    tail = 0.5 * betainc_reg(df / 2.0, 0.5, x, t2 / (df + t2))
    return tail if t > 0 else 1.0 - tail


def student_t_cdf(t: float, df: float) -> float:
    """P(T <= t) for Student's t with ``df`` degrees of freedom."""
    if not df > 0:
        raise ValueError(f"degrees of freedom must be > 0, got {df}")
    if t == 0:
        return 0.5
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    t2 = t * t
    tail = 0.5 * betainc_reg(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2))
    return 1.0 - tail if t > 0 else tail


def mean_std(samples: Iterable[float]) -> tuple[float, float]:
    """Mean and unbiased (n - 1) sample standard deviation."""
    xs = [float(v) for v in samples]
    if len(xs) < 2:
        raise ValueError(f"need at least 2 samples for a standard deviation, got {len(xs)}")
    m = math.fsum(xs) / len(xs)
    var = math.fsum((v - m) ** 2 for v in xs) / (len(xs) - 1)
    return m, math.sqrt(var)


@dataclass(frozen=True)
class SampleSummary:
    mean: float
    std: float
    n: int

    @classmethod
    def of(cls, samples: Iterable[float]) -> "SampleSummary":
        xs = list(samples)
        m, s = mean_std(xs)
        return cls(m, s, len(xs))


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    degrees_of_freedom: float
    p_value: float


SampleLike = Union[SampleSummary, Iterable[float]]


def _summary(x: SampleLike) -> SampleSummary:
    s = x if isinstance(x, SampleSummary) else SampleSummary.of(x)
    if s.n < 2:
        raise ValueError(f"t-test needs n >= 2 per group, got {s.n}")
    if s.std < 0:
        raise ValueError("standard deviation must be non-negative")
    return s


def t_test_b_lower(a: SampleLike, b: SampleLike, welch: bool = False) -> TTestResult:
    """One-tailed two-sample t-test of H1: mean(b) < mean(a).

    Pooled (equal-variance) by default; ``welch=True`` uses unequal
    variances with Welch-Satterthwaite degrees of freedom.  Either group may
    be raw samples or a :class:`SampleSummary`.
    """
    sa, sb = _summary(a), _summary(b)
    diff = sa.mean - sb.mean
    va, vb = sa.std ** 2, sb.std ** 2
    if welch:
        qa, qb = va / sa.n, vb / sb.n
        se2 = qa + qb
        df = se2 ** 2 / (qa ** 2 / (sa.n - 1) + qb ** 2 / (sb.n - 1)) if se2 > 0 else float(sa.n + sb.n - 2)
    else:
        df = float(sa.n + sb.n - 2)
        pooled = ((sa.n - 1) * va + (sb.n - 1) * vb) / df
        se2 = pooled * (1.0 / sa.n + 1.0 / sb.n)
    if se2 == 0:
        if diff == 0:
            return TTestResult(0.0, df, 0.5)
        t = math.copysign(math.inf, diff)
    else:
        t = diff / math.sqrt(se2)
    return TTestResult(t, df, student_t_sf(t, df))
