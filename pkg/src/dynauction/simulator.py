"""Seeded discrete-event simulation of the optimal policy and of simple baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError
from .solver import MarketParams, Thresholds
from .valuedist import ValueDistribution

BATCH = 1 << 15
FLUSH = 1 << 17
N_BATCHES = 100


@dataclass
class SimConfig:
    seed: int = 0
    horizon: float = 1e5
    warmup: float = 1e3
    probe_values: Optional[list] = None
    value_bins: int = 20

    def __post_init__(self):
        if not self.horizon > self.warmup:
            raise ConfigError(f"horizon {self.horizon} must exceed warmup {self.warmup}")
        if self.warmup < 0:
            raise ConfigError("warmup must be non-negative")
        if self.probe_values is None:
            self.probe_values = [i / 100 for i in range(101)]
        if any(not 0.0 <= v <= 1.0 for v in self.probe_values):
            raise ConfigError("probe values must lie in [0, 1]")


@dataclass
class SystemState:
    queue: list = field(default_factory=list)  # [value, entry_time, id], descending value
    inventory: int = 0
    clock: float = 0.0


@dataclass
class SimStats:
    probes: np.ndarray
    cdf: np.ndarray  # rows k = 1..K, time-weighted P_k(v) at probes
    q_hat: np.ndarray  # time share of inventory level 0..L; level 0 means an empty system
    observed_time: float
    revenue: float
    reimbursements: float
    holding: float
    net_per_time: float
    net_stderr: float
    counters: dict
    bin_edges: np.ndarray
    bin_resolved: np.ndarray
    bin_served: np.ndarray
    mean_queue: float
    mean_wait: float
    lambda_eff: float
    mean_inventory: float
    queue_pmf: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def bin_frequency(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.bin_served / self.bin_resolved

    def p_hat(self, k: int, v: float) -> float:
        j = int(np.searchsorted(self.probes, v))
        return float(self.cdf[k - 1, j])


class Streams:
    """Independent, batched random streams for buyer times, item times and values.

    Each stream draws from its own counter-based generator spawned from the
    seed, so changing how one stream is consumed leaves the others intact.
    """

    def __init__(self, seed: int, lam: float, mu: float, dist: ValueDistribution, extra: int = 1):
        seqs = np.random.SeedSequence(seed).spawn(3 + extra)
        self._gens = [np.random.Generator(np.random.Philox(s)) for s in seqs]
        self.lam, self.mu, self.dist = lam, mu, dist
        self._buf = [None, None, None]
        self._pos = [BATCH, BATCH, BATCH]

    def _refill(self, j):
        u = 1.0 - self._gens[j].random(BATCH)  # in (0, 1]
        if j == 0:
            self._buf[j] = (-np.log(u) / self.lam).tolist() if self.lam > 0 else [math.inf] * BATCH
        elif j == 1:
            self._buf[j] = (-np.log(u) / self.mu).tolist()
        else:
            self._buf[j] = quantiles(self.dist, 1.0 - u).tolist()
        self._pos[j] = 0

    def _next(self, j):
        if self._pos[j] >= BATCH:
            self._refill(j)
        x = self._buf[j][self._pos[j]]
        self._pos[j] += 1
        return x

    def buyer_gap(self) -> float:
        return self._next(0)

    def item_gap(self) -> float:
        return self._next(1)

    def value(self) -> float:
        return self._next(2)

    def aux(self, j: int = 0) -> np.random.Generator:
        return self._gens[3 + j]


def rank_cut(th: Thresholds, k: int) -> float:
    """Admission threshold at rank k; no buyer may hold a rank past K*."""
    return th.buyer_threshold(k) if k <= th.k_star else math.inf


def quantiles(dist: ValueDistribution, u: np.ndarray) -> np.ndarray:
    if dist.quantile_fn is not None:
        out = np.asarray(dist.quantile_fn(u), dtype=float)
        if out.shape == u.shape:
            return out
    return np.array([dist.quantile(float(x)) for x in u])


class _CdfAccumulator:
    """Time-weighted CDFs of the top-k queue values at fixed probes."""

    def __init__(self, probes, kmax):
        self.probes = np.asarray(probes, dtype=float)
        self.kmax = kmax
        self.acc = np.zeros((kmax, len(self.probes)))
        self.dt = []
        self.vals = [[] for _ in range(kmax)]

    def add(self, dt, queue):
        self.dt.append(dt)
        n = len(queue)
        for k in range(self.kmax):
            self.vals[k].append(queue[k][0] if k < n else -1.0)
        if len(self.dt) >= FLUSH:
            self.flush()

    def flush(self):
        if not self.dt:
            return
        dt = np.asarray(self.dt)
        for k in range(self.kmax):
            vk = np.asarray(self.vals[k])
            order = np.argsort(vk, kind="stable")
            cum = np.concatenate(([0.0], np.cumsum(dt[order])))
            idx = np.searchsorted(vk[order], self.probes, side="right")
            self.acc[k] += cum[idx]
            self.vals[k] = []
        self.dt = []


def _batch_stderr(batch_net, batch_len):
    rates = np.asarray(batch_net) / batch_len
    if len(rates) < 2:
        return float("nan")
    return float(rates.std(ddof=1) / math.sqrt(len(rates)))


def run_optimal_policy(dist: ValueDistribution, params: MarketParams, thresholds: Thresholds,
                       mech, simcfg: SimConfig, inject_buyers: bool = True,
                       check_invariants: bool = True, event_log: Optional[list] = None) -> SimStats:
    """Simulate the optimal threshold policy with direct-mechanism payments.

    Every arriving buyer pays the lump sum T(v) on arrival; queued buyers are
    reimbursed c per unit of realised waiting, removed buyers included; the
    holding cost d per stored item per unit time is a separate ledger line.
    If ``event_log`` is a list, (event index, action, buyer id) tuples are
    appended to it in the format of :func:`policy_event_log`.
    """
    th = thresholds
    K, L = th.k_star, th.l_star
    vk = [rank_cut(th, k) for k in range(0, K + 2)]  # vk[k] = v_hat_k
    posted = [None] + [th.inventory_threshold(l) for l in range(1, L + 1)]
    lam = params.lam if inject_buyers else 0.0
    streams = Streams(simcfg.seed, lam, params.mu, dist)
    warm, horizon = simcfg.warmup, simcfg.horizon
    span = horizon - warm
    batch_len = span / N_BATCHES
    batch_pay = np.zeros(N_BATCHES)
    batch_cost = np.zeros(N_BATCHES)

    cdf = _CdfAccumulator(simcfg.probe_values, max(K, 1))
    inv_time = np.zeros(L + 1)
    queue_time = np.zeros(K + 2)
    nbins = simcfg.value_bins
    bin_resolved = np.zeros(nbins)
    bin_served = np.zeros(nbins)
    counters = dict(arrivals=0, served=0, removed=0, turned_away=0, still_present=0,
                    items=0, items_served=0, stored=0, discarded=0, admitted=0)
    revenue = reimb = holding = 0.0
    waits_total, waits_n = 0.0, 0
    admitted_after = 0
    c, d = params.c, params.d

    queue = []  # [value, entry_time, bin, event index]
    prev_len = 0
    n_event = -1
    log = event_log.append if event_log is not None else None
    inv = 0
    t = 0.0
    tb = streams.buyer_gap()
    ti = streams.item_gap()
    pending_pay = []  # (time, value) of arrivals after warmup, priced in bulk

    def resolve(entry, now, served):
        nonlocal waits_total, waits_n, reimb
        b = entry[2]
        bin_resolved[b] += 1
        if served:
            bin_served[b] += 1
        start = max(entry[1], warm)
        if now > start:
            cost = c * (now - start)
            reimb += cost
            batch_cost[min(int((start - warm) / batch_len), N_BATCHES - 1)] += cost
        if entry[1] >= warm:
            waits_total += now - entry[1]
            waits_n += 1

    while True:
        now = tb if tb <= ti else ti
        end = min(now, horizon)
        # accumulate time-weighted statistics over [t, end)
        lo = t if t > warm else warm
        if end > lo:
            dt = end - lo
            cdf.add(dt, queue)
            if inv or not queue:
                inv_time[inv] += dt
            queue_time[len(queue)] += dt
            if inv:
                hc = d * inv * dt
                holding += hc
                batch_cost[min(int((lo - warm) / batch_len), N_BATCHES - 1)] += hc
        if now >= horizon:
            break
        t = now
        n_event += 1
        if tb <= ti:
            v = streams.value()
            tb = t + streams.buyer_gap()
            counters["arrivals"] += 1
            b = min(int(v * nbins), nbins - 1)
            if t >= warm:
                pending_pay.append((t, v))
            if inv:
                if v >= posted[inv]:
                    inv -= 1
                    counters["served"] += 1
                    if log:
                        log((n_event, "sell", n_event))
                    if t >= warm:
                        bin_resolved[b] += 1
                        bin_served[b] += 1
                else:
                    counters["turned_away"] += 1
                    if log:
                        log((n_event, "reject", n_event))
                    if t >= warm:
                        bin_resolved[b] += 1
            else:
                entry = [v, t, b, n_event]
                pos = len(queue)
                while pos and queue[pos - 1][0] < v:
                    pos -= 1
                queue.insert(pos, entry)
                # remove from the first rank that violates its threshold
                cut = None
                for k in range(1, len(queue) + 1):
                    if queue[k - 1][0] < vk[min(k, K + 1)]:
                        cut = k
                        break
                if cut is None:
                    counters["admitted"] += 1
                    if log:
                        log((n_event, "admit", n_event))
                    if t >= warm:
                        admitted_after += 1
                else:
                    dropped = queue[cut - 1:]
                    del queue[cut - 1:]
                    if log:
                        if entry in queue:
                            log((n_event, "admit", n_event))
                        for e in sorted(dropped, key=lambda e: e[3]):
                            log((n_event, "turn_away" if e is entry else "remove", e[3]))
                    for e in dropped:
                        if e is entry:
                            counters["turned_away"] += 1
                            if t >= warm:
                                bin_resolved[b] += 1
                        else:
                            counters["removed"] += 1
                            resolve(e, t, False)
                    if entry in queue:
                        counters["admitted"] += 1
                        if t >= warm:
                            admitted_after += 1
        else:
            ti = t + streams.item_gap()
            counters["items"] += 1
            if queue:
                e = queue.pop(0)
                if log:
                    log((n_event, "serve", e[3]))
                counters["served"] += 1
                counters["items_served"] += 1
                resolve(e, t, True)
            elif inv < L:
                inv += 1
                counters["stored"] += 1
                if log:
                    log((n_event, "store", None))
            else:
                counters["discarded"] += 1
                if log:
                    log((n_event, "discard", None))
        if check_invariants:
            if queue and inv:
                raise RuntimeError("queue and inventory both non-empty")
            if len(queue) > K or inv > L:
                raise RuntimeError("queue or inventory above its cap")
            for k, e in enumerate(queue, start=1):
                if e[0] < vk[k]:
                    raise RuntimeError("rank threshold violated")
            if abs(len(queue) - prev_len) > 1:
                raise RuntimeError("queue length jumped by more than one")
            prev_len = len(queue)

    cdf.flush()
    # reimburse the waiting of buyers still queued at the horizon
    for e in queue:
        start = max(e[1], warm)
        cost = c * (horizon - start)
        reimb += cost
        batch_cost[min(int((start - warm) / batch_len), N_BATCHES - 1)] += cost
    counters["still_present"] = len(queue)

    if pending_pay:
        times = np.array([p[0] for p in pending_pay])
        vals = np.array([p[1] for p in pending_pay])
        pays = mech.transfer_array(vals) if mech is not None else np.zeros_like(vals)
        revenue = float(pays.sum())
        idx = np.minimum(((times - warm) / batch_len).astype(int), N_BATCHES - 1)
        np.add.at(batch_pay, idx, pays)

    net = revenue - reimb - holding
    qlen = float(np.dot(np.arange(len(queue_time)), queue_time) / span)
    lam_eff = admitted_after / span
    return SimStats(
        probes=np.asarray(simcfg.probe_values, dtype=float),
        cdf=cdf.acc / span,
        q_hat=inv_time / span,
        observed_time=span,
        revenue=revenue,
        reimbursements=reimb,
        holding=holding,
        net_per_time=net / span,
        net_stderr=_batch_stderr(batch_pay - batch_cost, batch_len),
        counters=counters,
        bin_edges=np.linspace(0.0, 1.0, nbins + 1),
        bin_resolved=bin_resolved,
        bin_served=bin_served,
        mean_queue=qlen,
        mean_wait=waits_total / waits_n if waits_n else 0.0,
        lambda_eff=lam_eff,
        mean_inventory=float(np.dot(np.arange(L + 1), inv_time) / span),
        queue_pmf=queue_time[:K + 1] / span,
    )


def run_fixed_threshold_policy(dist: ValueDistribution, params: MarketParams, cutoff: float,
                               inventory_cap: int, simcfg: SimConfig,
                               style: Optional[str] = None) -> SimStats:
    """Simulate a single posted-price baseline.

    ``style="queue"``: buyers above the cutoff join an unbounded queue, each
    item goes to a uniformly chosen queued buyer at price ``cutoff`` and is
    discarded when nobody waits.  ``style="inventory"``: no queue; items are
    stored up to ``inventory_cap`` and sold at ``cutoff`` to arriving buyers.
    The default is "queue" in the service model and "inventory" otherwise.
    """
    if not 0.0 <= cutoff <= 1.0:
        raise ConfigError("cutoff must lie in [0, 1]")
    if inventory_cap < 0:
        raise ConfigError("inventory cap must be non-negative")
    if style is None:
        style = "queue" if params.service else "inventory"
    if style not in ("queue", "inventory"):
        raise ConfigError(f"unknown baseline style {style!r}")
    streams = Streams(simcfg.seed, params.lam, params.mu, dist)
    pick = streams.aux(0)
    warm, horizon = simcfg.warmup, simcfg.horizon
    span = horizon - warm
    batch_len = span / N_BATCHES
    batch_net = np.zeros(N_BATCHES)
    c = params.c
    d = 0.0 if params.service else params.d
    counters = dict(arrivals=0, served=0, removed=0, turned_away=0, still_present=0,
                    items=0, items_served=0, stored=0, discarded=0, admitted=0)
    queue = []  # entry times
    qtime = {}
    inv = 0
    cap = inventory_cap if style == "inventory" else 0
    inv_time = np.zeros(cap + 1)
    revenue = reimb = holding = 0.0
    waits_total, waits_n = 0.0, 0
    t = 0.0
    tb, ti = streams.buyer_gap(), streams.item_gap()
    while True:
        now = min(tb, ti)
        end = min(now, horizon)
        lo = max(t, warm)
        if end > lo:
            dt = end - lo
            n = len(queue)
            qtime[n] = qtime.get(n, 0.0) + dt
            inv_time[inv] += dt
            cost = (c * n + d * inv) * dt
            reimb += c * n * dt
            holding += d * inv * dt
            batch_net[min(int((lo - warm) / batch_len), N_BATCHES - 1)] -= cost
        if now >= horizon:
            break
        t = now
        if tb <= ti:
            v = streams.value()
            tb = t + streams.buyer_gap()
            counters["arrivals"] += 1
            if style == "queue":
                if v > cutoff:
                    queue.append(t)
                    counters["admitted"] += 1
                else:
                    counters["turned_away"] += 1
            elif inv and v >= cutoff:
                inv -= 1
                counters["served"] += 1
                if t >= warm:
                    revenue += cutoff
                    batch_net[min(int((t - warm) / batch_len), N_BATCHES - 1)] += cutoff
            else:
                counters["turned_away"] += 1
        else:
            ti = t + streams.item_gap()
            counters["items"] += 1
            if queue:
                j = int(pick.integers(len(queue)))
                entry = queue[j]
                queue[j] = queue[-1]
                queue.pop()
                counters["served"] += 1
                counters["items_served"] += 1
                if entry >= warm:
                    waits_total += t - entry
                    waits_n += 1
                if t >= warm:
                    revenue += cutoff
                    batch_net[min(int((t - warm) / batch_len), N_BATCHES - 1)] += cutoff
            elif inv < cap:
                inv += 1
                counters["stored"] += 1
            else:
                counters["discarded"] += 1
    counters["still_present"] = len(queue)
    net = revenue - reimb - holding
    nmax = max(qtime) if qtime else 0
    pmf = np.zeros(nmax + 1)
    for n, x in qtime.items():
        pmf[n] = x / span
    return SimStats(
        probes=np.zeros(0), cdf=np.zeros((0, 0)), q_hat=inv_time / span, observed_time=span,
        revenue=revenue, reimbursements=reimb, holding=holding, net_per_time=net / span,
        net_stderr=_batch_stderr(batch_net, batch_len), counters=counters,
        bin_edges=np.zeros(0), bin_resolved=np.zeros(0), bin_served=np.zeros(0),
        mean_queue=float(np.dot(np.arange(nmax + 1), pmf)),
        mean_wait=waits_total / waits_n if waits_n else 0.0,
        lambda_eff=counters["admitted"] / horizon,
        mean_inventory=float(np.dot(np.arange(cap + 1), inv_time) / span),
        queue_pmf=pmf,
    )


@dataclass(frozen=True)
class MCEstimate:
    estimate: float
    stderr: float


def mc_gamblers_ruin(rho: float, i: int, k: int, reps: int, seed: int = 0) -> MCEstimate:
    """Monte Carlo win frequency of the rank random walk absorbed at 0 and i+1."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if k <= 0:
        return MCEstimate(1.0, 0.0)
    if k >= i + 1:
        return MCEstimate(0.0, 0.0)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    p_up = 1.0 / (1.0 + rho)
    state = np.full(reps, k, dtype=np.int64)
    active = np.arange(reps)
    while active.size:
        step = np.where(rng.random(active.size) < p_up, -1, 1)
        state[active] += step
        s = state[active]
        active = active[(s > 0) & (s < i + 1)]
    p = float(np.mean(state == 0))
    return MCEstimate(p, math.sqrt(p * (1.0 - p) / reps))


def policy_event_log(script, thresholds: Thresholds) -> list:
    """Apply the optimal policy to a fixed event list.

    ``script`` is a sequence of (time, kind, value) with kind "buyer" or
    "item".  Returns (event index, action, buyer id) tuples, where buyer ids
    are the event indices of the buyers' arrivals.
    """
    th = thresholds
    K, L = th.k_star, th.l_star
    queue = []  # (value, id)
    inv = 0
    log = []
    for n, (_, kind, value) in enumerate(script):
        if kind == "buyer":
            if inv:
                if value >= th.inventory_threshold(inv):
                    inv -= 1
                    log.append((n, "sell", n))
                else:
                    log.append((n, "reject", n))
                continue
            pos = len(queue)
            while pos and queue[pos - 1][0] < value:
                pos -= 1
            queue.insert(pos, (value, n))
            cut = next((k for k in range(1, len(queue) + 1)
                        if queue[k - 1][0] < rank_cut(th, k)), None)
            if cut is None:
                log.append((n, "admit", n))
                continue
            dropped = queue[cut - 1:]
            del queue[cut - 1:]
            if any(e[1] == n for e in queue):
                log.append((n, "admit", n))
            for _, bid in sorted(dropped, key=lambda e: e[1]):
                log.append((n, "turn_away" if bid == n else "remove", bid))
        else:
            if queue:
                log.append((n, "serve", queue.pop(0)[1]))
            elif inv < L:
                inv += 1
                log.append((n, "store", None))
            else:
                log.append((n, "discard", None))
    return log
