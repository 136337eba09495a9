"""Optimal buyer and inventory thresholds, multipliers and the dual certificate."""

from __future__ import annotations

import bisect as _bisect
import math
from dataclasses import dataclass, field, replace
from typing import Optional

from .errors import CapExceeded, CertificateViolation, ConfigError, NoSolutionFound
from .numerics import QUAD_TOL, ROOT_TOL, bisect_predicate, geometric_sum, integrate
from .valuedist import ValueDistribution

K_CAP = 500
L_CAP = 200
CERT_TOL = 1e-6
SCAN_POINTS = 64
CHAIN_CERT_GRID = 201


@dataclass(frozen=True)
class MarketParams:
    """Market primitives.  ``d = inf`` selects the service model (no storage)."""

    lam: float
    mu: float
    c: float
    d: float = math.inf
    w: float = 0.0

    def __post_init__(self):
        for name in ("lam", "mu", "c", "d"):
            val = getattr(self, name)
            if not (isinstance(val, (int, float)) and val > 0) or math.isnan(val):
                raise ConfigError(f"{name} must be a positive number, got {val!r}")
        if math.isinf(self.lam) or math.isinf(self.mu) or math.isinf(self.c):
            raise ConfigError("lam, mu and c must be finite")
        if not 0.0 <= self.w <= 1.0:
            raise ConfigError(f"Pareto weight w must lie in [0, 1], got {self.w!r}")

    @property
    def service(self) -> bool:
        return math.isinf(self.d)

    def rho(self, dist: ValueDistribution, v: float) -> float:
        """rho(v) = lam (1 - F(v)) / mu."""
        return self.lam * (1.0 - dist.cdf(v)) / self.mu


@dataclass(frozen=True)
class Thresholds:
    k_star: int
    l_star: int
    buyer: tuple  # v_hat_1 .. v_hat_K*
    inventory: tuple  # v_hat_{-1} .. v_hat_{-L*}
    gamma: tuple  # gamma_1 .. gamma_L*
    v_hat_zero: float
    notes: tuple = ()

    @property
    def gamma1(self) -> float:
        return self.gamma[0] if self.gamma else 0.0

    @property
    def v_hat(self) -> dict:
        out = {-(l + 1): v for l, v in enumerate(self.inventory)}
        out.update({k + 1: v for k, v in enumerate(self.buyer)})
        return out

    def buyer_threshold(self, k: int) -> float:
        """v_hat_k for k >= 0, where v_hat_0 = J_w^{-1}(0) and v_hat_k = 1 past K*."""
        if k <= 0:
            return self.v_hat_zero
        if k <= self.k_star:
            return self.buyer[k - 1]
        return 1.0

    def inventory_threshold(self, l: int) -> float:
        """Posted price v_hat_{-l}; J_w^{-1}(0) past L*."""
        if 1 <= l <= self.l_star:
            return self.inventory[l - 1]
        return self.v_hat_zero

    def gamma_at(self, l: int) -> float:
        return self.gamma[l - 1] if 1 <= l <= self.l_star else 0.0

    def interval_index(self, v: float) -> int:
        """Number i of buyer thresholds at or below v, so v is in [v_hat_i, v_hat_{i+1})."""
        return _bisect.bisect_right(self.buyer, v)

    def lowest(self) -> float:
        """Lowest value ever allocated: v_hat_{-L*}, or v_hat_1 without inventory."""
        if self.l_star:
            return self.inventory[-1]
        return self.buyer[0] if self.k_star else 1.0

    def breakpoints(self) -> list:
        return sorted(set(self.inventory) | set(self.buyer) | {self.v_hat_zero})

    def to_dict(self) -> dict:
        return {
            "k_star": self.k_star,
            "l_star": self.l_star,
            "buyer": list(self.buyer),
            "inventory": list(self.inventory),
            "gamma": list(self.gamma),
            "v_hat_zero": self.v_hat_zero,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Thresholds":
        return cls(
            k_star=int(data["k_star"]),
            l_star=int(data["l_star"]),
            buyer=tuple(data["buyer"]),
            inventory=tuple(data["inventory"]),
            gamma=tuple(data["gamma"]),
            v_hat_zero=float(data["v_hat_zero"]),
            notes=tuple(data.get("notes", ())),
        )

    @classmethod
    def from_values(cls, buyer, inventory=(), v_hat_zero=0.0) -> "Thresholds":
        """Thresholds given directly, e.g. for scripted mechanism scenarios."""
        buyer = tuple(float(x) for x in buyer)
        inventory = tuple(float(x) for x in inventory)
        return cls(len(buyer), len(inventory), buyer, inventory,
                   tuple(0.0 for _ in inventory), float(v_hat_zero))


def _rank_integrand(dist, params, k):
    """v -> J_w'(v) / (1 + rho + ... + rho^{k-1})."""
    lam_mu, w = params.lam / params.mu, params.w

    def g(v):
        rho = lam_mu * (1.0 - dist.cdf(v))
        return dist.virtual_value_derivative(v, w) / geometric_sum(rho, k - 1)

    return g


def h_k(dist: ValueDistribution, params: MarketParams, k: int, a: float, b: float) -> float:
    """c - mu * int_a^b J_w'(v) / (1 + rho(v) + ... + rho(v)^{k-1}) dv."""
    if k < 2:
        raise ValueError("h_k is defined for k >= 2")
    if not 0.0 <= a <= b <= 1.0:
        raise ValueError("need 0 <= a <= b <= 1")
    return params.c - params.mu * integrate(_rank_integrand(dist, params, k), a, b)


def _next_buyer_threshold(dist, params, k, a):
    """Root of h_k(a, x) = 0 in x, or None when h_k(a, 1) > 0.

    Bisection carries the integral from ``a`` to the lower bracket along, so
    each step only integrates over the freshly halved piece.
    """
    g = _rank_integrand(dist, params, k)
    target = params.c / params.mu
    if integrate(g, a, 1.0) <= target:
        return None
    lo, hi, acc = a, 1.0, 0.0
    while hi - lo > ROOT_TOL:
        mid = 0.5 * (lo + hi)
        piece = integrate(g, lo, mid)
        if acc + piece < target:
            lo, acc = mid, acc + piece
        else:
            hi = mid
    return 0.5 * (lo + hi)


def buyer_thresholds_from(dist, params, gamma1: float = 0.0) -> tuple:
    """Buyer thresholds v_hat_1 < ... < v_hat_K* with v_hat_1 = J_w^{-1}(gamma_1 + c/mu)."""
    x = gamma1 + params.c / params.mu
    if x >= 1.0:
        return ()
    v1 = dist.inverse_virtual_value(x, params.w)
    if v1 >= 1.0:
        return ()
    out = [v1]
    k = 2
    while True:
        nxt = _next_buyer_threshold(dist, params, k, out[-1])
        if nxt is None or nxt >= 1.0:
            return tuple(out)
        out.append(nxt)
        if len(out) > K_CAP:
            raise CapExceeded(f"more than {K_CAP} buyer thresholds")
        k += 1


def solve_service_thresholds(dist: ValueDistribution, params: MarketParams) -> Thresholds:
    """Optimal thresholds when goods cannot be stored."""
    if not params.service:
        raise ValueError("solve_service_thresholds needs d = inf")
    buyer = buyer_thresholds_from(dist, params, 0.0)
    return Thresholds(len(buyer), 0, buyer, (), (),
                      dist.inverse_virtual_value(0.0, params.w))


def beta_multiplier(dist, params, thresholds: Thresholds, k: int, v: float) -> float:
    """beta_k(v): the balance multiplier of rank k at value v."""
    if k < 1:
        raise ValueError("k must be >= 1")
    i = thresholds.interval_index(v)
    if k > i:
        return 0.0
    rho = params.rho(dist, v)
    ratio = geometric_sum(rho, i - k) / geometric_sum(rho, i)
    return ratio * dist.virtual_value_derivative(v, params.w)


def alpha_multiplier(dist, params, v: float) -> float:
    if dist.virtual_value(v, params.w) < 0.0:
        return 0.0
    return dist.virtual_value_derivative(v, params.w)


def _delta(dist, params, buyer: tuple) -> float:
    """delta(gamma_1) = -int lam (1-F) beta_1 dv for the given buyer thresholds."""
    if not buyer:
        return 0.0
    lam_mu, w = params.lam / params.mu, params.w
    edges = list(buyer) + [1.0]
    total = 0.0
    for i in range(1, len(buyer) + 1):

        def g(v, i=i):
            rho = lam_mu * (1.0 - dist.cdf(v))
            return (rho * geometric_sum(rho, i - 1) / geometric_sum(rho, i)
                    * dist.virtual_value_derivative(v, w))

        total += integrate(g, edges[i - 1], edges[i])
    return -params.mu * total


def _surplus_above(dist, params, lo, hi, g):
    """int_lo^hi lam (J_w(v) - g) f(v) dv."""
    if hi <= lo:
        return 0.0
    w = params.w
    return params.lam * integrate(
        lambda v: (dist.virtual_value(v, w) - g) * dist.pdf(v), lo, hi)


def _a_constant(dist, params, gamma1, buyer=None):
    """A(gamma_1, 0); A is affine in gamma_2 with slope mu."""
    if buyer is None:
        buyer = buyer_thresholds_from(dist, params, gamma1)
    v1 = dist.inverse_virtual_value(gamma1, params.w)
    return (_delta(dist, params, buyer) + _surplus_above(dist, params, v1, 1.0, gamma1)
            - params.mu * gamma1 - params.d)


def coefficient_A(dist, params, gamma1: float, gamma2: float) -> float:
    """Lagrangian coefficient of Q_1."""
    return _a_constant(dist, params, gamma1) + params.mu * gamma2


def coefficient_B(dist, params, g_prev: float, g_cur: float, g_next: float) -> float:
    """Lagrangian coefficient of Q_l for l >= 2, in terms of neighbouring gammas."""
    w = params.w
    v_prev = dist.inverse_virtual_value(g_prev, w)
    v_cur = dist.inverse_virtual_value(g_cur, w)
    return (params.lam * (g_prev - g_cur) * (1.0 - dist.cdf(v_prev))
            + _surplus_above(dist, params, v_cur, v_prev, g_cur)
            - params.mu * (g_cur - g_next) - params.d)


@dataclass
class _Shot:
    gamma1: float
    gammas: list  # positive, strictly decreasing
    overshoot: bool  # True when the chain stalls (next gamma not below current)
    tail: float  # the first gamma that left the admissible range
    buyer: tuple


def _shoot(dist, params, gamma1):
    """Run the inventory chain forward from gamma_1.

    gamma_2 solves A(gamma_1, .) = 0 and gamma_{l+1} solves
    B(gamma_{l-1}, gamma_l, .) = 0; both are affine in the unknown.  The chain
    stops when it falls to 0 or below (gamma_1 too small) or fails to decrease
    (gamma_1 too large).
    """
    buyer = buyer_thresholds_from(dist, params, gamma1)
    gammas = [gamma1]
    nxt = -_a_constant(dist, params, gamma1, buyer) / params.mu
    while True:
        cur = gammas[-1]
        if nxt >= cur:
            return _Shot(gamma1, gammas, True, nxt, buyer)
        if nxt <= 0.0:
            return _Shot(gamma1, gammas, False, nxt, buyer)
        gammas.append(nxt)
        if len(gammas) > L_CAP:
            raise CapExceeded(f"inventory chain longer than {L_CAP}")
        nxt = -coefficient_B(dist, params, gammas[-2], gammas[-1], 0.0) / params.mu


def _chain_residual(dist, params, g):
    """(A(g_1, g_2), B(g_1, g_2, g_3), ..., B(g_{L-1}, g_L, 0))."""
    ext = list(g) + [0.0]
    r = [_a_constant(dist, params, ext[0]) + params.mu * ext[1]]
    for l in range(1, len(g)):
        r.append(coefficient_B(dist, params, ext[l - 1], ext[l], ext[l + 1]))
    return r


def _polish_chain(dist, params, gammas, max_iter=60, tol=1e-11):
    """Newton's method on the full inventory system, adjusting L until B(g_L, 0, 0) <= 0.

    The Jacobian is tridiagonal: dB/dg_prev = lam (1 - F(v_prev)),
    dB/dg_cur = -lam (1 - F(v_cur)) - mu, dB/dg_next = mu; dA/dg_1 is taken
    by finite differences because the buyer thresholds move with g_1.
    """
    import numpy as np
    from scipy.linalg import solve_banded

    lam, mu, w = params.lam, params.mu, params.w
    tried = set()
    g = [x for x in gammas if x > 0.0]
    while g and len(g) <= L_CAP and len(g) not in tried:
        tried.add(len(g))
        L = len(g)
        x = np.array(g, dtype=float)
        r = np.array(_chain_residual(dist, params, x))
        for _ in range(max_iter):
            if np.max(np.abs(r)) < tol:
                break
            tails = np.array([1.0 - dist.cdf(dist.inverse_virtual_value(v, w)) for v in x])
            ab = np.zeros((3, L))
            h = 1e-7
            ab[1, 0] = (_a_constant(dist, params, x[0] + h) - _a_constant(dist, params, x[0] - h)) / (2 * h)
            if L > 1:
                ab[0, 1:] = mu  # superdiagonal
                ab[1, 1:] = -lam * tails[1:] - mu
                ab[2, :-1] = lam * tails[:-1]  # subdiagonal
            step = solve_banded((1, 1), ab, -r)
            t = 1.0
            while t > 1e-6:
                trial = np.clip(x + t * step, 0.0, 1.0)
                rt = np.array(_chain_residual(dist, params, trial))
                if np.max(np.abs(rt)) < np.max(np.abs(r)):
                    x, r = trial, rt
                    break
                t *= 0.5
            else:
                break
        if np.max(np.abs(r)) >= 1e-9:
            return None
        decreasing = all(b < a for a, b in zip(x, x[1:]))
        if x[-1] <= 0.0 or not decreasing or x[0] >= 1.0:
            g = list(x[:-1])
            continue
        if coefficient_B(dist, params, x[-1], 0.0, 0.0) > 1e-9:
            if L >= L_CAP:
                raise CapExceeded(f"inventory chain longer than {L_CAP}")
            g = list(x) + [x[-1] / 2]
            continue
        return [float(v) for v in x]
    return None


def _assemble(dist, params, gammas, notes=()) -> Thresholds:
    gammas = tuple(gammas)
    buyer = buyer_thresholds_from(dist, params, gammas[0])
    inventory = tuple(dist.inverse_virtual_value(g, params.w) for g in gammas)
    return Thresholds(len(buyer), len(gammas), buyer, inventory, gammas,
                      dist.inverse_virtual_value(0.0, params.w), tuple(notes))


def _certified(dist, params, th) -> bool:
    try:
        build_dual_certificate(dist, params, th, grid_n=CHAIN_CERT_GRID)
        return True
    except CertificateViolation:
        return False


def _bracketed_chains(dist, params, scan_points) -> list:
    """Certified inventory chains, one per sign change of the gamma_1 scan."""
    grid = [i / scan_points for i in range(scan_points + 1)]
    flags = [_shoot(dist, params, g).overshoot for g in grid]
    brackets = [(grid[i], grid[i + 1]) for i in range(scan_points)
                if not flags[i] and flags[i + 1]]
    if not brackets:
        raise NoSolutionFound(
            f"no sign change of the inventory chain on the gamma_1 scan; "
            f"A(0,0)={_a_constant(dist, params, 0.0):.3g}, "
            f"A(1,0)={_a_constant(dist, params, 1.0):.3g}")
    out, capped = [], None
    for lo, hi in brackets:
        lo, hi = bisect_predicate(lambda g: _shoot(dist, params, g).overshoot, lo, hi)
        th = _assemble(dist, params, _shoot(dist, params, lo).gammas)
        if not _certified(dist, params, th):
            # forward shooting amplifies errors by about rho^L; polish the whole chain
            try:
                polished = _polish_chain(dist, params, list(th.gamma))
            except CapExceeded as exc:
                capped = exc
                continue
            if polished is None:
                continue
            th = _assemble(dist, params, polished, ("inventory chain refined by Newton iteration",))
            if not _certified(dist, params, th):
                continue
        out.append(th)
    if not out and capped is not None:
        raise capped
    return out


def _continue_in_d(dist, params, scan_points, decades: int = 3, steps_per_decade: int = 10):
    """Follow the inventory chain down from a larger holding cost.

    Long chains cannot be shot forward reliably, but they change little
    between nearby values of d, so each solution seeds Newton at the next.
    """
    start = None
    for j in range(1, decades + 1):
        hi = replace(params, d=params.d * 10.0 ** j)
        try:
            found = _bracketed_chains(dist, hi, scan_points)
        except NoSolutionFound:
            continue
        if found:
            start = (j, list(found[0].gamma))
            break
    if start is None:
        return None
    j, g = start
    n = j * steps_per_decade
    for i in range(1, n + 1):
        step = replace(params, d=params.d * 10.0 ** (j * (1.0 - i / n)))
        g = _polish_chain(dist, step, g)
        if g is None:
            return None
    th = _assemble(dist, params, g, ("inventory chain continued from a larger holding cost",))
    return th if _certified(dist, params, th) else None


def solve_platform_thresholds(dist: ValueDistribution, params: MarketParams,
                              scan_points: int = SCAN_POINTS) -> Thresholds:
    """Optimal buyer and inventory thresholds when goods can be stored at cost d."""
    if params.service:
        raise ValueError("solve_platform_thresholds needs finite d")
    w = params.w
    v0 = dist.inverse_virtual_value(0.0, w)
    if _a_constant(dist, params, 0.0) <= 0.0:
        buyer = buyer_thresholds_from(dist, params, 0.0)
        return Thresholds(len(buyer), 0, buyer, (), (), v0)

    candidates = _bracketed_chains(dist, params, scan_points)
    if not candidates:
        th = _continue_in_d(dist, params, scan_points)
        if th is not None:
            candidates = [th]

    if len(candidates) == 1:
        return candidates[0]

    from .allocation import objective_value
    from .steady import solve_stationary

    scored = [(objective_value(dist, params, solve_stationary(dist, params, th)), th)
              for th in candidates]
    if not scored:
        raise NoSolutionFound("no bracketed inventory chain passed the certificate; "
                              f"A(0,0)={_a_constant(dist, params, 0.0):.3g}")
    scored.sort(key=lambda x: x[0], reverse=True)
    best = scored[0][1]
    note = f"{len(scored)} certified inventory solutions; kept the highest objective"
    return Thresholds(best.k_star, best.l_star, best.buyer, best.inventory,
                      best.gamma, best.v_hat_zero, best.notes + (note,))


def solve_thresholds(dist: ValueDistribution, params: MarketParams) -> Thresholds:
    if params.service:
        return solve_service_thresholds(dist, params)
    return solve_platform_thresholds(dist, params)


@dataclass
class DualCertificate:
    grid: list
    p0_coeffs: list  # coefficient of P_k(0), k = 1..K*+3
    pv_coeffs: list  # rows k = 1..K*+1, coefficient of P_k(v) - P_k(0) on the grid
    q_coeffs: list  # coefficient of Q_l, l = 1..L*+3 (empty for the service model)
    x_coeffs: list  # coefficient of X(v) on the grid
    z_coeffs: list  # rows l = 1..L*, coefficient of Z_l(v) on the grid
    max_violation: float
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_violation <= CERT_TOL


def _pv_coefficient(dist, params, th, k, v):
    lam_tail = params.lam * (1.0 - dist.cdf(v))
    mu = params.mu
    bk = beta_multiplier(dist, params, th, k, v)
    bk1 = beta_multiplier(dist, params, th, k + 1, v)
    if k == 1:
        return lam_tail * (bk - bk1) - mu * alpha_multiplier(dist, params, v) + mu * bk
    bkm = beta_multiplier(dist, params, th, k - 1, v)
    return lam_tail * (bk - bk1) - mu * (bkm - bk)


def build_dual_certificate(dist: ValueDistribution, params: MarketParams,
                           thresholds: Thresholds, grid_n: int = 1001,
                           tol: float = CERT_TOL, raise_on_violation: bool = True
                           ) -> DualCertificate:
    """Evaluate the Lagrangian coefficients and check their sign pattern."""
    th = thresholds
    w, mu, c = params.w, params.mu, params.c
    K, L = th.k_star, th.l_star
    grid = [i / (grid_n - 1) for i in range(grid_n)]
    grid = sorted(set(grid) | set(th.buyer) | set(th.inventory))
    violations = []
    worst = 0.0

    def record(kind, where, value, must_be_zero):
        nonlocal worst
        excess = abs(value) if must_be_zero else max(value, 0.0)
        worst = max(worst, excess)
        if excess > tol:
            violations.append((kind, where, value))

    # coefficients of P_k(0)
    p0 = []
    jv1 = dist.virtual_value(th.buyer_threshold(1), w) if K else 1.0
    first = -mu * jv1 + mu * th.gamma1 + c
    p0.append(first)
    if K:
        record("P0", 1, first, True)
    else:
        record("P0", 1, -first, False)
    for k in range(2, K + 4):
        a, b = th.buyer_threshold(k - 1), th.buyer_threshold(k)
        val = c - mu * integrate(_rank_integrand(dist, params, k), min(a, 1.0), b)
        p0.append(val)
        if k <= K:
            record("P0", k, val, True)
        else:
            record("P0", k, -val, False)

    # coefficients of P_k(v) - P_k(0)
    pv = []
    for k in range(1, K + 2):
        vk = th.buyer_threshold(k)
        row = []
        for v in grid:
            val = _pv_coefficient(dist, params, th, k, v)
            row.append(val)
            scale = max(1.0, abs(dist.virtual_value_derivative(v, w)) if v > 0 else 1.0)
            record("Pv", (k, v), val / scale, v >= vk and k <= K)
        pv.append(row)

    # coefficients of X(v): lam (J_w(v) - int_0^v alpha) = lam min(J_w(v), 0)
    xs = []
    for v in grid:
        jv = dist.virtual_value(v, w)
        val = params.lam * (jv - max(jv, 0.0)) if math.isfinite(jv) else -math.inf
        xs.append(val)
        record("X", v, val, jv >= 0.0)

    qs, zs = [], []
    if not params.service:
        gam = [th.gamma_at(l) for l in range(0, L + 5)]
        qs.append(coefficient_A(dist, params, gam[1], gam[2]))
        record("Q", 1, qs[0], L >= 1)
        for l in range(2, L + 4):
            val = coefficient_B(dist, params, gam[l - 1], gam[l], gam[l + 1])
            qs.append(val)
            record("Q", l, val, l <= L)
        for l in range(1, L + 1):
            vl, gl = th.inventory_threshold(l), gam[l]
            row = []
            for v in grid:
                jv = dist.virtual_value(v, w)
                kappa = params.lam * (jv - gl) if v >= vl else 0.0
                val = params.lam * (max(jv, 0.0) - gl) - kappa
                row.append(val)
                record("Z", (l, v), val, v >= vl)
            zs.append(row)

    cert = DualCertificate(grid, p0, pv, qs, xs, zs, worst, violations)
    if raise_on_violation and not cert.passed:
        raise CertificateViolation(
            f"certificate residual {worst:.3g} exceeds {tol:g}; first: {violations[0]}", cert)
    return cert
