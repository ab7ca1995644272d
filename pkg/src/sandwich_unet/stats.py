"""Paired t-test with a self-contained Student-t distribution."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

_TINY = 1e-300
_MAX_ITER = 10_000


def _beta_continued_fraction(x: float, a: float, b: float, tol: float) -> float:
    # modified Lentz evaluation of the incomplete beta continued fraction
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
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (x={x}, a={a}, b={b})")


def betainc(a: float, b: float, x: float, tol: float = 1e-15) -> float:
    """Regularized incomplete beta function ``I_x(a, b)``."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a > 0 and b > 0")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"betainc needs 0 <= x <= 1, got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # the fraction converges fast only on this side of the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(x, a, b, tol) / a
    return 1.0 - front * _beta_continued_fraction(1.0 - x, b, a, tol) / b


def student_t_sf_two_sided(t: float, dof: float) -> float:
    """``P(|T| >= |t|)`` for Student's t with ``dof`` degrees of freedom."""
    if dof <= 0:
        raise ValueError("degrees of freedom must be positive")
    if t == 0.0:
        return 1.0
    return betainc(dof / 2.0, 0.5, dof / (dof + t * t))


def student_t_cdf(t: float, dof: float) -> float:
    tail = 0.5 * student_t_sf_two_sided(t, dof)
    return 1.0 - tail if t > 0 else tail


@dataclass
class TTestResult:
    n: int
    mean_diff: float
    sd_diff: float
    t: float
    dof: int
    p_value: float
    alternative: str = "two-sided"


def paired_t_test(a: Sequence[float], b: Sequence[float], alternative: str = "two-sided") -> TTestResult:
    """Paired t-test on ``a - b``.

    ``alternative`` is ``"two-sided"``, ``"greater"`` (mean of ``a - b`` > 0) or
    ``"less"``.  Identical inputs give ``t = 0`` and ``p = 1``; zero spread
    with a non-zero mean difference is degenerate and raises.
    """
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired samples must be equal-length vectors, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    dof = n - 1
    if sd == 0.0:
        if mean != 0.0:
            raise ArithmeticError("differences have zero variance but non-zero mean; t is undefined")
        return TTestResult(n, 0.0, 0.0, 0.0, dof, 1.0, alternative)
    t = mean / (sd / math.sqrt(n))
    if alternative == "two-sided":
        p = student_t_sf_two_sided(t, dof)
    elif alternative == "greater":
        p = 1.0 - student_t_cdf(t, dof)
    else:
        p = student_t_cdf(t, dof)
    return TTestResult(n, mean, sd, t, dof, min(max(p, 0.0), 1.0), alternative)


def format_p(p: float) -> str:
    return "< 0.001" if p < 0.001 else f"{p:.3f}"
