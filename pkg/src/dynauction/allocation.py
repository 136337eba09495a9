"""Interim allocation and transfers of the optimal mechanism, objective value and benchmarks."""

from __future__ import annotations

import bisect as _bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import bisect, geometric_sum, integrate
from .solver import MarketParams
from .steady import StationaryDistribution, marginal_cdf, mean_inventory, mean_queue_length
from .valuedist import ValueDistribution

TABLE_CELLS = 4096
RF_TOL = 1e-8

_GL_NODES = (0.5 - math.sqrt(15.0) / 10.0, 0.5, 0.5 + math.sqrt(15.0) / 10.0)
_GL_WEIGHTS = (5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0)


def conditional_win_prob(rho: float, k: int, i: int) -> float:
    """Probability that a buyer at rank k is eventually served.

    The rank performs a random walk that moves up with probability
    1/(1+rho) (an item arrives) and down with probability rho/(1+rho) (a
    higher buyer arrives), absorbed at 0 (served) and at i+1 (removed).  The
    ratio (1 + ... + rho^{i-k}) / (1 + ... + rho^i) equals
    (rho^{i-k+1} - 1) / (rho^{i+1} - 1) and has the limit (i+1-k)/(i+1) at rho=1.
    """
    if k <= 0:
        return 1.0
    if k >= i + 1:
        return 0.0
    return geometric_sum(rho, i - k) / geometric_sum(rho, i)


def _rank_weight(rho: float, i: int) -> float:
    """(1 + 2 rho + ... + i rho^{i-1}) / (1 + rho + ... + rho^i)^2."""
    num = 0.0
    for j in range(i, 0, -1):
        num = num * rho + j
    s = geometric_sum(rho, i)
    return num / (s * s)


def rank_weight_closed_form(rho: float, i: int) -> float:
    """(i(rho^{i+1} - rho^i) + 1 - rho^i) / (1 - rho^{i+1})^2, with its rho=1 limit."""
    if abs(rho - 1.0) <= 1e-6:
        return i / (2.0 * (i + 1))
    return (i * (rho ** (i + 1) - rho ** i) + 1.0 - rho ** i) / (1.0 - rho ** (i + 1)) ** 2


def interim_allocation(sd: StationaryDistribution, v: float) -> float:
    """X*(v): probability that a type-v arrival is eventually served."""
    th = sd.thresholds
    if th.k_star and v >= th.buyer[0]:
        i = th.interval_index(v)
        q1 = sd.q1
        return q1 + (sd.p0[i] - q1) * _rank_weight(sd.rho(v), i)
    # below v_hat_1: sold from inventory level l when v >= v_hat_{-l}
    for l, vl in enumerate(th.inventory, start=1):
        if v >= vl:
            return sd.q_tail[l - 1]
    return 0.0


def aggregated_allocation(sd: StationaryDistribution, v: float) -> float:
    """Q_1 + sum_k (P_k(v) - P_{k-1}(v)) X_k(v) with P_0 := Q_1, for v >= v_hat_1."""
    th = sd.thresholds
    i = th.interval_index(v)
    rho = sd.rho(v)
    prev = sd.q1
    total = sd.q1
    for k in range(1, i + 1):
        cur = marginal_cdf(sd, k, v)
        total += (cur - prev) * conditional_win_prob(rho, k, i)
        prev = cur
    return total


def _vec(fn, v):
    out = fn(v)
    if np.shape(out) != np.shape(v):
        out = np.vectorize(fn, otypes=[float])(v)
    return np.asarray(out, dtype=float)


def allocation_array(sd: StationaryDistribution, v) -> np.ndarray:
    """Vectorised interim_allocation."""
    v = np.asarray(v, dtype=float)
    th = sd.thresholds
    out = np.zeros_like(v)
    top = th.buyer[0] if th.k_star else np.inf
    for l in range(th.l_star, 0, -1):
        out[(v >= th.inventory[l - 1]) & (v < top)] = sd.q_tail[l - 1]
    if th.k_star:
        idx = np.searchsorted(np.asarray(th.buyer), v, side="right")
        mask = idx >= 1
        if mask.any():
            vv, ii = v[mask], idx[mask]
            p = sd.params
            rho = p.lam * (1.0 - _vec(sd.dist.cdf, vv)) / p.mu
            num = np.zeros_like(vv)
            s = np.ones_like(vv)
            power = np.ones_like(vv)  # rho^{j-1}
            for j in range(1, int(ii.max()) + 1):
                active = j <= ii
                num += np.where(active, j * power, 0.0)
                power = power * rho
                s += np.where(active, power, 0.0)
            q1 = sd.q1
            p0 = np.asarray(sd.p0)[ii]
            out[mask] = q1 + (p0 - q1) * num / (s * s)
    return out


@dataclass
class InterimMechanism:
    """X* and the envelope transfer T(v) = v X*(v) - int_0^v X*."""

    sd: StationaryDistribution
    knots: np.ndarray = field(init=False, repr=False)
    cumulative: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        th = self.sd.thresholds
        pts = set(np.linspace(0.0, 1.0, TABLE_CELLS + 1).tolist())
        pts.update(th.buyer)
        pts.update(th.inventory)
        knots = np.array(sorted(pts))
        cum = np.zeros(len(knots))
        for j in range(len(knots) - 1):
            cum[j + 1] = cum[j] + self._cell_integral(knots[j], knots[j + 1])
        self.knots = knots
        self.cumulative = cum

    def _cell_integral(self, a: float, b: float) -> float:
        # 3-point Gauss-Legendre: no endpoint samples, so jumps at knots are harmless
        h = b - a
        return h * sum(wt * self.allocation(a + h * x) for x, wt in zip(_GL_NODES, _GL_WEIGHTS))

    def allocation(self, v: float) -> float:
        return interim_allocation(self.sd, v)

    def integral_to(self, v: float) -> float:
        """int_0^v X*(s) ds."""
        j = max(0, _bisect.bisect_right(self.knots, v) - 1)
        j = min(j, len(self.knots) - 1)
        a = float(self.knots[j])
        return float(self.cumulative[j]) + (self._cell_integral(a, v) if v > a else 0.0)

    def transfer(self, v: float) -> float:
        return v * self.allocation(v) - self.integral_to(v)

    def transfer_array(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        j = np.clip(np.searchsorted(self.knots, v, side="right") - 1, 0, len(self.knots) - 1)
        a = self.knots[j]
        h = v - a
        integral = self.cumulative[j].copy()
        for x, wt in zip(_GL_NODES, _GL_WEIGHTS):
            integral += h * wt * allocation_array(self.sd, a + h * x)
        return v * allocation_array(self.sd, v) - integral


def interim_transfer(mech: InterimMechanism, v: float) -> float:
    return mech.transfer(v)


def objective_value(dist: ValueDistribution, params: MarketParams,
                    sd: StationaryDistribution) -> float:
    """lam int J_w X* f dv - c E[queue] - d E[inventory]."""
    th = sd.thresholds
    lo = th.lowest()
    w = params.w
    surplus = 0.0
    if lo < 1.0:
        surplus = params.lam * integrate(
            lambda v: dist.virtual_value(v, w) * interim_allocation(sd, v) * dist.pdf(v),
            lo, 1.0, breaks=th.breakpoints())
    value = surplus - params.c * mean_queue_length(sd)
    if th.l_star:
        value -= params.d * mean_inventory(sd)
    return value


def expected_revenue(dist: ValueDistribution, params: MarketParams,
                     mech: InterimMechanism) -> float:
    """lam int T(v) f(v) dv: payment rate of the direct mechanism."""
    th = mech.sd.thresholds
    lo = th.lowest()
    if lo >= 1.0:
        return 0.0
    return params.lam * integrate(lambda v: mech.transfer(v) * dist.pdf(v), lo, 1.0,
                                  breaks=th.breakpoints(), tol=1e-9)


@dataclass
class RFReport:
    rows: list  # (v, lhs, rhs, binding, ok)
    max_gap: float

    @property
    def ok(self) -> bool:
        return all(r[-1] for r in self.rows)


def verify_rf_binding(dist: ValueDistribution, params: MarketParams,
                      sd: StationaryDistribution, probe_grid=None, tol: float = RF_TOL
                      ) -> RFReport:
    """Check that the reduced-form feasibility constraint binds above J_w^{-1}(0)."""
    th = sd.thresholds
    if probe_grid is None:
        probe_grid = [i / 64 for i in range(65)]
    v0 = dist.inverse_virtual_value(0.0, params.w)
    breaks = th.breakpoints()
    tail = (sd.p1_0,) + sd.q_tail
    rows, worst = [], 0.0
    for v in probe_grid:
        lhs = params.lam * integrate(
            lambda s: interim_allocation(sd, s) * dist.pdf(s), max(v, th.lowest()), 1.0,
            breaks=breaks, tol=1e-11) if v < 1.0 else 0.0
        p1 = marginal_cdf(sd, 1, v) if th.k_star else 1.0
        rhs = params.mu * (1.0 - p1)
        for l in range(1, th.l_star + 1):
            q_l = tail[l] - tail[l + 1]
            rhs += params.lam * q_l * (1.0 - dist.cdf(max(v, th.inventory[l - 1])))
        binding = v >= v0
        gap = abs(lhs - rhs)
        if binding:
            worst = max(worst, gap)
        rows.append((v, lhs, rhs, binding, gap <= tol if binding else lhs <= rhs + tol))
    return RFReport(rows, worst)


@dataclass(frozen=True)
class Benchmark:
    v_tilde: float
    v_tilde0: float
    r_star: float


def oracle_benchmark(dist: ValueDistribution, params: MarketParams) -> Benchmark:
    """Per-item revenue of the frictionless large-market benchmark."""
    ratio = params.lam / params.mu
    if ratio <= 1.0:
        v_tilde = 0.0
    else:
        v_tilde = bisect(lambda v: ratio * (1.0 - dist.cdf(v)) - 1.0, 0.0, 1.0)
    v0 = max(v_tilde, dist.inverse_virtual_value(0.0, params.w))
    return Benchmark(v_tilde, v0, ratio * (1.0 - dist.cdf(v0)) * v0)
