"""Brute-force discretised linear program for the relaxed design problem.

An independent check on the threshold solver: the program is written directly
in terms of stationary CDFs, service rates and allocations on a value grid and
handed to a generic LP solver, with no use of the threshold structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import DegenerateSystem
from .numerics import integrate
from .solver import MarketParams
from .valuedist import ValueDistribution


@dataclass
class LPSolution:
    objective: float
    grid: np.ndarray  # cell edges v_0 .. v_N
    P: np.ndarray  # P_k(v_i), rows k = 1..K
    X: np.ndarray  # allocation per cell
    q: np.ndarray  # q_1 .. q_L
    z: np.ndarray  # sale probability per (level, cell)
    buyer_thresholds: tuple
    inventory_thresholds: tuple
    status: str

    def cell_of(self, v: float) -> int:
        return int(np.clip(np.searchsorted(self.grid, v, side="right") - 1, 0, len(self.grid) - 2))


def solve_relaxed_lp(dist: ValueDistribution, params: MarketParams, n_cells: int = 200,
                     k_cap: int = 8, l_cap: int = 8, support_tol: float = 1e-7) -> LPSolution:
    """Solve the discretised relaxed program with at most ``k_cap`` queued buyers and
    ``l_cap`` stored items.

    Variables are P_k(v_i) at the N+1 cell edges, Y_k(v_i) = y_k p_k (service mass),
    X_j per cell, W_lj = q_l z_l per cell, and q_l.  Constraints: reduced-form
    feasibility and the rank balance inequalities at every edge, inventory balance
    per level, and monotone nested CDFs with P_{K+1} = 1.
    """
    lam, mu, c, w = params.lam, params.mu, params.c, params.w
    K = k_cap
    L = 0 if params.service else l_cap
    d = 0.0 if params.service else params.d
    N = n_cells
    v = np.linspace(0.0, 1.0, N + 1)
    Fv = np.array([dist.cdf(x) for x in v])
    mass = np.diff(Fv)
    tail = 1.0 - Fv  # 1 - F(v_i)
    # J_w f = v f - (1-w)(1-F), finite even where f vanishes
    jf = np.array([integrate(lambda s: s * dist.pdf(s) - (1.0 - w) * (1.0 - dist.cdf(s)),
                             v[j], v[j + 1], tol=1e-12) for j in range(N)])

    # variable layout
    nP = K * (N + 1)
    offP, offY = 0, nP
    offX = offY + nP
    offW = offX + N
    offq = offW + L * N
    nvar = offq + L

    def iP(k, i):  # k = 1..K
        return offP + (k - 1) * (N + 1) + i

    def iY(k, i):
        return offY + (k - 1) * (N + 1) + i

    def iW(l, j):  # l = 1..L
        return offW + (l - 1) * N + j

    def iq(l):
        return offq + l - 1

    cost = np.zeros(nvar)
    cost[offX:offX + N] = -lam * jf
    # waiting: c * sum_k k p_k(0) = c * (K - sum_k P_k(0)); constant c*K added back later
    for k in range(1, K + 1):
        cost[iP(k, 0)] -= c
    for l in range(1, L + 1):
        cost[iq(l)] += d * l

    rows, cols, vals, rhs = [], [], [], []
    r = 0

    def add(entries, b):
        nonlocal r
        for col, val in entries:
            rows.append(r)
            cols.append(col)
            vals.append(val)
        rhs.append(b)
        r += 1

    for i in range(N + 1):
        # reduced-form feasibility
        ent = [(offX + j, lam * mass[j]) for j in range(i, N)]
        ent += [(iY(k, i), -mu) for k in range(1, K + 1)]
        ent += [(iW(l, j), -lam * mass[j]) for l in range(1, L + 1) for j in range(i, N)]
        add(ent, 0.0)
        for k in range(1, K + 1):
            # mu Y_k <= lam (1-F) p_{k-1}, with p_0 = P_1 - sum q and p_{k-1} = P_k - P_{k-1}
            ent = [(iY(k, i), mu), (iP(k, i), -lam * tail[i])]
            if k == 1:
                ent += [(iq(l), lam * tail[i]) for l in range(1, L + 1)]
            else:
                ent.append((iP(k - 1, i), lam * tail[i]))
            add(ent, 0.0)
            # Y_k <= p_k = P_{k+1} - P_k, with P_{K+1} = 1
            ent = [(iY(k, i), 1.0), (iP(k, i), 1.0)]
            if k < K:
                ent.append((iP(k + 1, i), -1.0))
                add(ent, 0.0)
            else:
                add(ent, 1.0)
            if k < K:  # nesting P_k <= P_{k+1}
                add([(iP(k, i), 1.0), (iP(k + 1, i), -1.0)], 0.0)
            if i < N:  # CDFs are nondecreasing
                add([(iP(k, i), 1.0), (iP(k, i + 1), -1.0)], 0.0)
        if L:  # p_0 >= 0
            add([(iq(l), 1.0) for l in range(1, L + 1)] + [(iP(1, i), -1.0)], 0.0)
    for l in range(1, L + 1):
        # lam int q_l z_l f <= mu q_{l-1}, q_0 = P_1(0) - sum q
        ent = [(iW(l, j), lam * mass[j]) for j in range(N)]
        if l == 1:
            ent += [(iP(1, 0), -mu)] + [(iq(m), mu) for m in range(1, L + 1)]
        else:
            ent.append((iq(l - 1), -mu))
        add(ent, 0.0)
        for j in range(N):  # W_lj <= q_l
            add([(iW(l, j), 1.0), (iq(l), -1.0)], 0.0)

    A = sparse.csr_matrix((vals, (rows, cols)), shape=(r, nvar))
    bounds = [(0.0, 1.0)] * nvar
    for k in range(1, K + 1):
        bounds[iP(k, N)] = (1.0, 1.0)  # nobody has value above 1
    res = linprog(cost, A_ub=A, b_ub=np.array(rhs), bounds=bounds, method="highs")
    if res.status != 0:
        raise DegenerateSystem(f"LP failed: {res.message}")
    x = res.x
    P = np.array([[x[iP(k, i)] for i in range(N + 1)] for k in range(1, K + 1)])
    X = x[offX:offX + N].copy()
    q = np.array([x[iq(l)] for l in range(1, L + 1)])
    z = np.array([[x[iW(l, j)] / x[iq(l)] if x[iq(l)] > support_tol else 0.0 for j in range(N)]
                  for l in range(1, L + 1)]) if L else np.zeros((0, N))
    objective = -res.fun - c * K

    buyer = []
    for k in range(K):
        rise = np.nonzero(P[k] > P[k, 0] + support_tol)[0]
        if P[k, 0] >= 1.0 - support_tol or not len(rise):
            break
        buyer.append(float(v[max(rise[0] - 1, 0)]))
    inventory = []
    for l in range(L):
        if q[l] <= support_tol:
            break
        sold = np.nonzero(z[l] > 0.5)[0]
        inventory.append(float(v[sold[0]]) if len(sold) else 1.0)
    return LPSolution(float(objective), v, P, X, q, z, tuple(buyer), tuple(inventory),
                      res.message)


def grid_cells_apart(sol: LPSolution, a: float, b: float) -> float:
    """Distance between two values in grid cells."""
    return abs(a - b) / (sol.grid[1] - sol.grid[0])


def compare_with_solver(dist, params, thresholds, objective: float, sol: LPSolution) -> dict:
    """Relative objective gap and worst threshold offset in cells."""
    rel = abs(sol.objective - objective) / max(abs(objective), 1e-12)
    offsets = []
    for k, vk in enumerate(thresholds.buyer):
        if k < len(sol.buyer_thresholds):
            offsets.append(grid_cells_apart(sol, vk, sol.buyer_thresholds[k]))
        else:
            offsets.append(math.inf)
    for l, vl in enumerate(thresholds.inventory):
        if l < len(sol.inventory_thresholds):
            offsets.append(grid_cells_apart(sol, vl, sol.inventory_thresholds[l]))
        else:
            offsets.append(math.inf)
    return dict(relative_gap=rel, max_cell_offset=max(offsets, default=0.0),
                lp_buyer=sol.buyer_thresholds, lp_inventory=sol.inventory_thresholds,
                k_match=len(sol.buyer_thresholds) == thresholds.k_star,
                l_match=len(sol.inventory_thresholds) == thresholds.l_star)
