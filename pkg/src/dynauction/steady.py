"""Stationary marginals of the queue order statistics and of the inventory."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import DegenerateSystem, RankOutOfRange
from .numerics import geometric_sum
from .solver import MarketParams, Thresholds
from .valuedist import ValueDistribution

BALANCE_TOL = 1e-9


@dataclass(frozen=True)
class StationaryDistribution:
    dist: ValueDistribution
    params: MarketParams
    thresholds: Thresholds
    p0: tuple  # P_k(0), k = 1..K*+1, last entry 1
    q_tail: tuple  # Q_l, l = 1..L*+1, last entry 0
    delta_kstar: float
    w_factors: tuple  # W_0 .. W_L*

    @property
    def q1(self) -> float:
        return self.q_tail[0]

    @property
    def p1_0(self) -> float:
        return self.p0[0]

    @property
    def inventory_pmf(self) -> tuple:
        """q_0 .. q_L*, where q_0 = P_1(0) - Q_1 is the empty-system mass."""
        tail = (self.p1_0,) + self.q_tail
        return tuple(tail[l] - tail[l + 1] for l in range(len(tail) - 1))

    def rho(self, v: float) -> float:
        return self.params.rho(self.dist, v)


def solve_stationary(dist: ValueDistribution, params: MarketParams,
                     thresholds: Thresholds) -> StationaryDistribution:
    th = thresholds
    K, L = th.k_star, th.l_star
    rhos = [params.rho(dist, v) for v in th.buyer]

    delta = 1.0
    for i, r in enumerate(rhos, start=1):
        delta *= geometric_sum(r, i - 1) / geometric_sum(r, i)

    # W_l = 1 + s_1 + s_1 s_2 + ... + s_1...s_l with s_j = sigma(v_hat_{-j})
    w_factors = [1.0]
    prod = 1.0
    for v in th.inventory:
        rho = params.rho(dist, v)
        if rho <= 0.0:
            raise DegenerateSystem(f"inventory threshold {v} leaves no buyers")
        prod /= rho
        w_factors.append(w_factors[-1] + prod)
    W = w_factors[-1]

    # P_1(0) - Q_1 = (1 - Q_1) delta and (W - 1) P_1(0) = W Q_1
    denom = 1.0 + (W - 1.0) * delta
    p1_0 = W * delta / denom
    q1 = (W - 1.0) * delta / denom
    if not (math.isfinite(p1_0) and math.isfinite(q1)):
        raise DegenerateSystem("boundary masses are not finite")

    # continuity at v_hat_i: (P_{i+1}(0) - Q1) = (P_i(0) - Q1) S_i / S_{i-1}
    p0 = [p1_0]
    for i, r in enumerate(rhos, start=1):
        p0.append(q1 + (p0[-1] - q1) * geometric_sum(r, i) / geometric_sum(r, i - 1))
    p0[-1] = 1.0

    # Q_l = P_1(0) - W_{l-1} (P_1(0) - Q_1)
    base = p1_0 - q1
    q_tail = [p1_0 - w_factors[l - 1] * base for l in range(1, L + 1)]
    q_tail.append(0.0)

    return StationaryDistribution(dist, params, th, tuple(p0), tuple(q_tail),
                                  delta, tuple(w_factors))


def marginal_cdf(sd: StationaryDistribution, k: int, v: float) -> float:
    """P*_k(v): probability that fewer than k queued buyers have value above v."""
    K = sd.thresholds.k_star
    if not 1 <= k <= K + 1:
        raise RankOutOfRange(f"rank {k} outside 1..{K + 1}")
    if k == K + 1:
        return 1.0
    th = sd.thresholds
    if v < th.buyer[k - 1]:
        return sd.p0[k - 1]
    i = th.interval_index(v)
    rho = sd.rho(v)
    q1 = sd.q1
    p1 = q1 + (sd.p0[i] - q1) / geometric_sum(rho, i)
    return q1 + geometric_sum(rho, k - 1) * (p1 - q1)


def _cdf_or_one(sd, k, v):
    if k <= 0:
        return sd.q1
    if k > sd.thresholds.k_star:
        return 1.0
    return marginal_cdf(sd, k, v)


def mean_queue_length(sd: StationaryDistribution) -> float:
    p = sd.p0
    return sum(k * (p[k] - p[k - 1]) for k in range(1, len(p)))


def mean_inventory(sd: StationaryDistribution) -> float:
    q = sd.q_tail
    return sum(l * (q[l - 1] - q[l]) for l in range(1, len(q)))


def default_probe_grid(thresholds: Thresholds, n: int = 512) -> list:
    pts = {i / (n - 1) for i in range(n)}
    for v in list(thresholds.buyer) + list(thresholds.inventory):
        pts.update(x for x in (v - 1e-9, v, v + 1e-9) if 0.0 <= x <= 1.0)
    return sorted(pts)


@dataclass
class BalanceReport:
    rows: list = field(default_factory=list)  # (kind, index, v, lhs, rhs, ok)
    max_binding_gap: float = 0.0

    @property
    def ok(self) -> bool:
        return all(r[-1] for r in self.rows)

    @property
    def failures(self) -> list:
        return [r for r in self.rows if not r[-1]]


def verify_balance(sd: StationaryDistribution, dist: ValueDistribution,
                   params: MarketParams, probe_grid=None, tol: float = BALANCE_TOL
                   ) -> BalanceReport:
    """Check the rank and inventory balance conditions at probe values."""
    th = sd.thresholds
    if probe_grid is None:
        probe_grid = default_probe_grid(th)
    rep = BalanceReport()
    for k in range(1, th.k_star + 1):
        vk = th.buyer[k - 1]
        for v in probe_grid:
            lhs = params.lam * (1.0 - dist.cdf(v)) * (_cdf_or_one(sd, k, v) - _cdf_or_one(sd, k - 1, v))
            rhs = params.mu * (_cdf_or_one(sd, k + 1, v) - _cdf_or_one(sd, k, v))
            if v >= vk:
                gap = abs(lhs - rhs)
                rep.max_binding_gap = max(rep.max_binding_gap, gap)
                rep.rows.append(("buyer", k, v, lhs, rhs, gap <= tol))
            else:
                rep.rows.append(("buyer", k, v, lhs, rhs, lhs >= rhs - tol))
    tail = (sd.p1_0,) + sd.q_tail
    for l in range(1, th.l_star + 1):
        v = th.inventory[l - 1]
        lhs = params.lam * (1.0 - dist.cdf(v)) * (tail[l] - tail[l + 1])
        rhs = params.mu * (tail[l - 1] - tail[l])
        gap = abs(lhs - rhs)
        rep.max_binding_gap = max(rep.max_binding_gap, gap)
        rep.rows.append(("inventory", l, v, lhs, rhs, gap <= tol))
    return rep
