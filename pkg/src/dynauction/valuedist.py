"""Buyer value distributions on [0, 1] and their virtual values."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import InsufficientGrid, RegularityViolation
from .numerics import bisect

FD_STEP = 1e-6
GRID_N = 1001


@dataclass(frozen=True)
class ValueDistribution:
    """A distribution F on [0, 1] with density f and density slope f'.

    ``quantile`` and ``jw_inverse`` are optional closed forms; when absent,
    F^{-1} and J_w^{-1} fall back to bisection.
    """

    cdf: Callable[[float], float]
    pdf: Callable[[float], float]
    name: str
    pdf_derivative: Optional[Callable[[float], float]] = None
    quantile_fn: Optional[Callable[[float], float]] = None
    jw_inverse_fn: Optional[Callable[[float, float], float]] = None
    params: dict = field(default_factory=dict)

    def fprime(self, v: float) -> float:
        if self.pdf_derivative is not None:
            return self.pdf_derivative(v)
        lo, hi = max(0.0, v - FD_STEP), min(1.0, v + FD_STEP)
        return (self.pdf(hi) - self.pdf(lo)) / (hi - lo)

    def inverse_hazard(self, v: float) -> float:
        """(1 - F(v)) / f(v)."""
        f = self.pdf(v)
        tail = 1.0 - self.cdf(v)
        if f == 0.0:
            return 0.0 if tail == 0.0 else math.inf
        return tail / f

    def virtual_value(self, v: float, w: float = 0.0) -> float:
        return v - (1.0 - w) * self.inverse_hazard(v)

    def virtual_value_derivative(self, v: float, w: float = 0.0) -> float:
        f = self.pdf(v)
        if f == 0.0 or math.isinf(f):
            return math.inf
        slope = 1.0 + (1.0 - self.cdf(v)) * self.fprime(v) / (f * f)
        return 1.0 + (1.0 - w) * slope

    def inverse_virtual_value(self, x: float, w: float = 0.0) -> float:
        """J_w^{-1}(x), clipped to [0, 1]."""
        if x >= 1.0:
            return 1.0
        if self.jw_inverse_fn is not None:
            return min(1.0, max(0.0, self.jw_inverse_fn(x, w)))
        if x <= self.virtual_value(0.0, w):
            return 0.0
        return bisect(lambda v: self.virtual_value(v, w) - x, 0.0, 1.0)

    def quantile(self, u: float) -> float:
        if self.quantile_fn is not None:
            return self.quantile_fn(u)
        return bisect(lambda v: self.cdf(v) - u, 0.0, 1.0)


def virtual_value(dist: ValueDistribution, v: float, w: float = 0.0) -> float:
    """J_w(v) = v - (1 - w)(1 - F(v)) / f(v)."""
    return dist.virtual_value(v, w)


def make_uniform() -> ValueDistribution:
    return ValueDistribution(
        cdf=lambda v: v,
        pdf=lambda v: 1.0,
        pdf_derivative=lambda v: 0.0,
        quantile_fn=lambda u: u,
        # J_w(v) = (2 - w) v - (1 - w)
        jw_inverse_fn=lambda x, w: (x + 1.0 - w) / (2.0 - w),
        name="uniform",
    )


def make_power(a: float, validate: bool = True) -> ValueDistribution:
    """F(v) = v**a on [0, 1]."""
    if not a > 0:
        raise ValueError("power exponent must be positive")
    a = float(a)

    def pdf(v):
        if v == 0.0:
            if a < 1.0:
                return math.inf
            return a if a == 1.0 else 0.0
        return a * v ** (a - 1.0)

    def dpdf(v):
        if a == 1.0:
            return 0.0
        if v == 0.0:
            if a < 1.0:
                return -math.inf
            return math.inf if a < 2.0 else (2.0 if a == 2.0 else 0.0)
        return a * (a - 1.0) * v ** (a - 2.0)

    dist = ValueDistribution(
        cdf=lambda v: v ** a,
        pdf=pdf,
        pdf_derivative=dpdf,
        quantile_fn=lambda u: u ** (1.0 / a),
        name="power",
        params={"a": a},
    )
    if validate:
        report = validate_regularity(dist, GRID_N)
        if not report.regular:
            raise RegularityViolation(f"power a={a:g}: {report.summary()}")
    return dist


DISTRIBUTIONS = {"uniform": make_uniform, "power": make_power}


def make_distribution(name: str, **params) -> ValueDistribution:
    try:
        factory = DISTRIBUTIONS[name]
    except KeyError:
        raise ValueError(f"unknown distribution {name!r}") from None
    return factory(**params)


@dataclass
class ValidationReport:
    grid_n: int
    j_monotone: bool
    j0_negative: bool
    j1_is_one: bool
    pdf_positive: bool
    hazard_monotone: bool
    issues: list = field(default_factory=list)

    @property
    def regular(self) -> bool:
        return self.j_monotone and self.j0_negative

    def summary(self) -> str:
        return "; ".join(self.issues) if self.issues else "all checks pass"


def validate_regularity(dist: ValueDistribution, grid_n: int = GRID_N) -> ValidationReport:
    """Grid scan of the regularity conditions."""
    if grid_n < 3:
        raise InsufficientGrid(f"grid_n={grid_n} < 3")
    grid = [i / (grid_n - 1) for i in range(grid_n)]
    issues = []

    pdf_ok = all(dist.pdf(v) > 0 for v in grid[1:-1])
    if not pdf_ok:
        issues.append("density not positive on (0,1)")

    jv = [dist.virtual_value(v) for v in grid]
    bad = [grid[i + 1] for i in range(grid_n - 1) if not jv[i + 1] > jv[i]]
    j_mono = not bad
    if bad:
        issues.append(f"J not strictly increasing near v={bad[0]:.4g}")
    j0_neg = jv[0] < 0
    if not j0_neg:
        issues.append(f"J(0)={jv[0]:.4g} is not negative")
    j1_ok = abs(jv[-1] - 1.0) <= 1e-12
    if not j1_ok:
        issues.append(f"J(1)={jv[-1]:.4g} differs from 1")

    ih = [dist.inverse_hazard(v) for v in grid]
    hz_bad = [grid[i + 1] for i in range(grid_n - 1) if ih[i + 1] > ih[i] + 1e-12]
    if hz_bad:
        issues.append(f"inverse hazard increasing near v={hz_bad[0]:.4g}")

    return ValidationReport(grid_n, j_mono, j0_neg, j1_ok, pdf_ok, not hz_bad, issues)
