"""Cutoff Price Mechanism: survival auctions, assignment auctions, proxy agents and
counterfactual cutoff pricing, plus the expected-cutoff variant and a deviation harness.

Clock auctions are resolved in closed form.  A survival auction started at queue
size k-1 stops at ``max(v_hat_{k-1}, min(lowest willingness, v_hat_k))``; every
agent whose willingness is at or below a stop price short of ``v_hat_k`` leaves.
"""

from __future__ import annotations

import bisect
import heapq
import math
import time as _time
from collections import namedtuple
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import CensoredCutoff, ConfigError, MonotonicityViolation, ScriptError
from .simulator import Streams, policy_event_log
from .solver import MarketParams, Thresholds
from .valuedist import ValueDistribution

INF = math.inf
DISCLOSURES = ("opaque", "identities", "bids", "queue_length")

Plan = namedtuple("Plan", "drop bid")

WIN, OPEN, LOSE = 2, 1, 0


# ----------------------------------------------------------------------------- scripts

@dataclass(frozen=True)
class ScriptEvent:
    time: float
    kind: str  # "buyer" or "item"
    value: float = 0.0
    agent_id: object = None


@dataclass
class ArrivalScript:
    events: list
    strategies: dict = field(default_factory=dict)

    def __post_init__(self):
        evs = []
        for e in self.events:
            if not isinstance(e, ScriptEvent):
                e = ScriptEvent(*e)
            if e.kind not in ("buyer", "item"):
                raise ScriptError(f"unknown event kind {e.kind!r}")
            evs.append(e)
        for a, b in zip(evs, evs[1:]):
            if not b.time > a.time:
                raise ScriptError(f"event times must increase strictly ({a.time} then {b.time})")
        ids = [self.agent_id(n, e) for n, e in enumerate(evs) if e.kind == "buyer"]
        if len(set(ids)) != len(ids):
            raise ScriptError("buyer ids must be unique")
        self.events = evs

    @staticmethod
    def agent_id(n: int, e: ScriptEvent):
        return n if e.agent_id is None else e.agent_id

    @classmethod
    def from_rows(cls, rows, strategies=None) -> "ArrivalScript":
        """Rows of (time, kind, value[, id])."""
        evs = []
        for r in rows:
            t, kind = float(r[0]), str(r[1]).strip()
            value = float(r[2]) if len(r) > 2 and r[2] not in ("", None) else 0.0
            aid = r[3] if len(r) > 3 and r[3] not in ("", None) else None
            evs.append(ScriptEvent(t, kind, value, aid))
        return cls(evs, dict(strategies or {}))

    @classmethod
    def from_sequence(cls, items, strategies=None) -> "ArrivalScript":
        """Unit-spaced script from ("A", 6), "item", ... entries."""
        evs = []
        for n, it in enumerate(items):
            if it == "item":
                evs.append(ScriptEvent(float(n + 1), "item"))
            else:
                name, value = it
                evs.append(ScriptEvent(float(n + 1), "buyer", float(value), name))
        return cls(evs, dict(strategies or {}))

    def buyers(self) -> dict:
        return {self.agent_id(n, e): e for n, e in enumerate(self.events) if e.kind == "buyer"}

    def with_trailing_items(self, count: int, gap: float = 1.0) -> "ArrivalScript":
        """Same script followed by ``count`` item arrivals, so pending cutoffs resolve."""
        t = self.events[-1].time if self.events else 0.0
        extra = [ScriptEvent(t + gap * (j + 1), "item") for j in range(count)]
        return ArrivalScript(self.events + extra, dict(self.strategies))

    def index_of(self, agent_id) -> int:
        for n, e in enumerate(self.events):
            if e.kind == "buyer" and self.agent_id(n, e) == agent_id:
                return n
        raise KeyError(agent_id)


# ----------------------------------------------------------------------------- strategies

@dataclass(frozen=True)
class Rules:
    disclosure: str = "opaque"
    passive: bool = True

    def __post_init__(self):
        if self.disclosure not in DISCLOSURES:
            raise ConfigError(f"disclosure must be one of {DISCLOSURES}")


CPM_RULES = Rules()


@dataclass(frozen=True)
class Observation:
    """What a buyer sees when acting; disclosed fields are None under opacity."""
    agent_id: object
    value: float
    reserve: float
    index: int
    time: float
    history: tuple  # own results: ("survival", stop) and ("auction", won, bid)
    queue_ids: Optional[tuple] = None
    winning_bids: Optional[tuple] = None
    queue_length: Optional[int] = None
    at_entry: Optional["Observation"] = None


class Strategy:
    """Truthful behaviour; subclasses override pieces of it."""
    static = True  # actions do not depend on observations

    def plan(self, value: float, obs: Optional[Observation]) -> Plan:
        return Plan(value, value)

    def accept(self, value: float, obs: Optional[Observation], price: float) -> bool:
        return value >= price

    def abandons(self, value: float, obs: Optional[Observation]) -> bool:
        return False


class Truthful(Strategy):
    def __repr__(self):
        return "Truthful()"


TRUTHFUL = Truthful()


@dataclass(frozen=True)
class Deviation(Strategy):
    """Fixed misreport: assignment bid, survival drop price, or inverted posted-price choice."""
    bid: Optional[float] = None
    drop: Optional[float] = None
    flip: bool = False

    def plan(self, value, obs):
        return Plan(value if self.drop is None else self.drop,
                    value if self.bid is None else self.bid)

    def accept(self, value, obs, price):
        return (value < price) if self.flip else (value >= price)


class FunctionStrategy(Strategy):
    """Strategy given by callables of (value, observation)."""
    static = False

    def __init__(self, plan_fn: Callable, accept_fn: Optional[Callable] = None,
                 abandon_fn: Optional[Callable] = None, name: str = "custom"):
        self._plan, self._accept, self._abandon, self.name = plan_fn, accept_fn, abandon_fn, name

    def plan(self, value, obs):
        return Plan(*self._plan(value, obs))

    def accept(self, value, obs, price):
        return self._accept(value, obs, price) if self._accept else value >= price

    def abandons(self, value, obs):
        return bool(self._abandon(value, obs)) if self._abandon else False

    def __repr__(self):
        return f"FunctionStrategy({self.name})"


# ----------------------------------------------------------------------------- market

@dataclass(eq=False)
class Agent:
    id: object
    true_value: float
    entry_time: float
    entry_index: int
    reserve: float = 0.0
    status: str = "active"  # active | passive | proxy | won | departed
    fixed_bid: Optional[float] = None
    present: bool = True  # real bidder still attached (a proxy may outlive it)
    history: tuple = ()
    outcome: Optional[str] = None
    exit_time: Optional[float] = None
    exit_index: Optional[int] = None
    at_entry: Optional[Observation] = None

    def copy(self) -> "Agent":
        a = Agent.__new__(Agent)
        a.__dict__.update(self.__dict__)
        return a


@dataclass(frozen=True)
class CutoffReceipt:
    winner: object
    auction_time: float
    cutoff_price: float
    determination_time: Optional[float]
    censored: bool
    auction_index: int = -1
    reserve: float = 0.0
    winning_bid: Optional[float] = None
    lower: float = 0.0
    upper: float = 0.0
    sole: bool = False
    monotone: bool = True
    candidates: int = 1


def _rank_cut(th: Thresholds, k: int) -> float:
    if k <= 0:
        return th.v_hat_zero
    return th.buyer[k - 1] if k <= th.k_star else INF


class _Market:
    def __init__(self, events, th: Thresholds, rules: Rules):
        self.events, self.th, self.rules = events, th, rules
        self.queue: list = []
        self.inventory = 0
        self.winning_bids: list = []
        self.agents: dict = {}
        self.log: list = []
        self.wins: list = []  # (agent, index, sole, bid, reserve)
        self.sales: list = []  # (agent, index, price)
        self.flags: list = []
        self.inv_area = 0.0
        self.last_time = events[0].time if events else 0.0

    def clone(self, events=None) -> "_Market":
        m = _Market.__new__(_Market)
        m.events = self.events if events is None else events
        m.th, m.rules = self.th, self.rules
        m.queue = [a.copy() for a in self.queue]
        m.inventory = self.inventory
        m.winning_bids = list(self.winning_bids)
        m.agents = {a.id: a for a in m.queue}
        m.log, m.wins, m.sales, m.flags = [], [], [], []
        m.inv_area, m.last_time = self.inv_area, self.last_time
        return m

    def observe(self, ag: Agent, n: int) -> Observation:
        mode = self.rules.disclosure
        others = [a for a in self.queue if a is not ag]
        return Observation(
            ag.id, ag.true_value, ag.reserve, n, self.events[n].time, ag.history,
            queue_ids=tuple(a.id for a in others) if mode == "identities" else None,
            winning_bids=tuple(self.winning_bids) if mode == "bids" else None,
            queue_length=sum(1 for a in others if a.present) if mode == "queue_length" else None,
            at_entry=ag.at_entry,
        )

    def _leave(self, ag, n, outcome, status="departed"):
        ag.status, ag.outcome = status, outcome
        ag.exit_time, ag.exit_index = self.events[n].time, n

    def process(self, n: int, actor) -> None:
        ev = self.events[n]
        t = ev.time
        self.inv_area += self.inventory * (t - self.last_time)
        self.last_time = t
        actor.begin(self, n)
        if ev.kind == "buyer":
            ag = Agent(ArrivalScript.agent_id(n, ev), ev.value, t, n)
            self.agents[ag.id] = ag
            actor.arrive(self, ag, n)
            if self.inventory:
                price = self.th.inventory_threshold(self.inventory)
                if actor.accept(self, ag, n, price):
                    self.inventory -= 1
                    self.sales.append((ag, n, price))
                    self._leave(ag, n, "bought", "won")
                    self.log.append((n, "sell", ag.id))
                else:
                    self._leave(ag, n, "rejected")
                    self.log.append((n, "reject", ag.id))
            else:
                self._survival(ag, n, actor)
        elif not self.queue:
            if self.inventory < self.th.l_star:
                self.inventory += 1
                self.log.append((n, "store", None))
            else:
                self.log.append((n, "discard", None))
        elif len(self.queue) == 1:
            ag = self.queue.pop()
            self.wins.append((ag, n, True, None, ag.reserve))
            self._leave(ag, n, "served", "won")
            self.log.append((n, "serve", ag.id))
        else:
            self._assignment(n, actor)

    def _survival(self, new: Agent, n: int, actor) -> None:
        k = len(self.queue) + 1
        p0, top = _rank_cut(self.th, k - 1), _rank_cut(self.th, k)
        self.queue.append(new)
        will = {}
        for ag in self.queue:
            will[ag.id] = ag.fixed_bid if ag.status in ("passive", "proxy") else actor.plan(self, ag, n).drop
        lowest = min(will.values())
        stop = max(p0, min(lowest, top))
        leaving = [ag for ag in self.queue if will[ag.id] <= stop] if stop < top else []
        if len(leaving) > 1 and actor.favors_proxy:
            # a proxy tied at the stop price outlasts the others: the least winning bid is attained
            leaving = [ag for ag in leaving if not (ag.status == "proxy" and will[ag.id] == stop)]
        if len(leaving) > 1:
            self.flags.append((n, "multiple-departures"))
        if stop < p0 or (leaving and lowest < p0):
            self.flags.append((n, "clock-start-above-willingness"))
        for ag in leaving:
            self.queue.remove(ag)
            self._leave(ag, n, "turned_away" if ag is new else "removed")
        for ag in self.queue:
            if stop > ag.reserve:
                ag.reserve = stop
            ag.history = ag.history + (("survival", stop),)
        if new.status == "active" and new in self.queue:
            self.log.append((n, "admit", new.id))
        for ag in sorted(leaving, key=lambda a: a.entry_index):
            self.log.append((n, "turn_away" if ag is new else "remove", ag.id))

    def _assignment(self, n: int, actor) -> None:
        bids = []
        for ag in self.queue:
            if ag.status in ("passive", "proxy"):
                b = ag.fixed_bid
            else:
                b = max(actor.plan(self, ag, n).bid, ag.reserve)
            bids.append(b)
        best = max(bids)
        tied = [ag for ag, b in zip(self.queue, bids) if b == best]
        winner = tied[0] if len(tied) == 1 else actor.tie(tied)
        for ag, b in zip(self.queue, bids):
            if ag.status == "active" and self.rules.passive:
                ag.status, ag.fixed_bid = "passive", b
            ag.history = ag.history + (("auction", ag is winner, b),)
        self.winning_bids.append(best)
        self.queue.remove(winner)
        self.wins.append((winner, n, False, best, winner.reserve))
        self._leave(winner, n, "served", "won")
        self.log.append((n, "serve", winner.id))


class _LiveActor:
    """Consults strategies and records the realised plan of every present buyer."""
    favors_proxy = False

    def __init__(self, strategies: dict, rng, snapshot: bool,
                 watch=None):
        self.strategies = strategies
        self.rng = rng
        self.watch = watch  # snapshot only auctions involving these ids
        self.records: dict = {}  # id -> ([indices], [plans]) for non-static strategies
        self.abandoned: set = set()
        self.snapshots: dict = {}
        self.take_snapshots = snapshot
        self.consulted: dict = {}  # id -> set of {"drop", "bid", "accept"}
        self._cur: dict = {}

    def strategy(self, aid):
        return self.strategies.get(aid, TRUTHFUL)

    def _record(self, m, ag, n):
        st = self.strategy(ag.id)
        if st.static:
            return st.plan(ag.true_value, None)
        p = st.plan(ag.true_value, m.observe(ag, n))
        idx, plans = self.records.setdefault(ag.id, ([], []))
        if idx and idx[-1] == n:
            plans[-1] = p
        else:
            idx.append(n)
            plans.append(p)
        return p

    def begin(self, m, n):
        if self.take_snapshots and m.events[n].kind == "item" and len(m.queue) >= 2:
            if self.watch is None or any(a.id in self.watch for a in m.queue):
                self.snapshots[n] = m.clone()
        self._cur = {}
        for ag in list(m.queue):
            st = self.strategy(ag.id)
            if not ag.present or st.static:
                continue
            if st.abandons(ag.true_value, m.observe(ag, n)):
                self.abandoned.add((ag.id, n))
                if ag.status == "active":
                    m.queue.remove(ag)
                    m._leave(ag, n, "abandoned")
                else:
                    ag.present = False
                m.log.append((n, "abandon", ag.id))
                continue
            self._cur[ag.id] = self._record(m, ag, n)

    def arrive(self, m, ag, n):
        if m.rules.disclosure != "opaque":
            ag.at_entry = m.observe(ag, n)
        self._cur[ag.id] = self._record(m, ag, n)

    def plan(self, m, ag, n):
        p = self._cur.get(ag.id)
        if p is None:
            p = self._cur[ag.id] = self._record(m, ag, n)
        return p

    def accept(self, m, ag, n, price):
        self.consulted.setdefault(ag.id, set()).add("accept")
        st = self.strategy(ag.id)
        obs = None if st.static else m.observe(ag, n)
        return st.accept(ag.true_value, obs, price)

    def tie(self, tied):
        if not isinstance(self.rng, np.random.Generator):
            self.rng = np.random.Generator(np.random.Philox(self.rng))
        tied = sorted(tied, key=lambda a: a.entry_index)
        return tied[int(self.rng.integers(len(tied)))]


class _ReplayActor:
    """Counterfactual play: everyone except the proxy repeats their realised plans.

    A buyer with no realised plan at an event (because the realised path had
    already lost them) keeps the last plan they revealed.  Ties go to the proxy,
    so the cutoff is the least winning bid.
    """
    favors_proxy = True

    def __init__(self, live: _LiveActor):
        self.live = live
        self.seen: set = set()
        self._cur: dict = {}

    def _lookup(self, ag, n):
        st = self.live.strategy(ag.id)
        if st.static:
            return st.plan(ag.true_value, None)
        rec = self.live.records.get(ag.id)
        if not rec:
            return Plan(ag.true_value, ag.true_value)
        idx, plans = rec
        j = bisect.bisect_right(idx, n) - 1
        return plans[max(j, 0)]

    def begin(self, m, n):
        self._cur = {}
        if self.live.abandoned:
            for ag in list(m.queue):
                if ag.status != "proxy" and ag.present and (ag.id, n) in self.live.abandoned:
                    if ag.status == "active":
                        m.queue.remove(ag)
                        m._leave(ag, n, "abandoned")
                    else:
                        ag.present = False

    def arrive(self, m, ag, n):
        pass

    def plan(self, m, ag, n):
        p = self._cur.get(ag.id)
        if p is None:
            p = self._cur[ag.id] = self._lookup(ag, n)
        self.seen.add(p.drop)
        self.seen.add(max(p.bid, ag.reserve))
        return p

    def accept(self, m, ag, n, price):
        st = self.live.strategy(ag.id)
        return st.accept(ag.true_value, None, price) if st.static else self._lookup(ag, n).drop >= price

    def tie(self, tied):
        for ag in tied:
            if ag.status == "proxy":
                return ag
        return min(tied, key=lambda a: a.entry_index)


# ----------------------------------------------------------------------------- cutoff pricing

def _replay(snap: _Market, n: int, wid, bid: float, actor: _ReplayActor):
    m = snap.clone()
    proxy = m.agents[wid]
    proxy.status, proxy.fixed_bid = "proxy", bid
    for ag in m.queue:
        if ag is not proxy and ag.status == "passive":
            actor.seen.add(ag.fixed_bid)
    for j in range(n, len(m.events)):
        m.process(j, actor)
        if proxy.status == "won":
            return WIN, m.events[j].time
        if proxy.status == "departed":
            return LOSE, m.events[j].time
    return OPEN, None


def _solve_cutoff(snap: _Market, n: int, wid, winning_bid: float, reserve: float,
                  actor: _ReplayActor, check_monotone: bool) -> CutoffReceipt:
    th = snap.th
    t_auction = snap.events[n].time
    cands = {reserve, winning_bid}
    cands.update(v for v in (th.v_hat_zero,) + th.buyer if reserve <= v <= winning_bid)
    heap = sorted(cands)
    done: dict = {}
    best = None
    while heap:
        b = heapq.heappop(heap)
        if b in done or (best is not None and b >= best and not check_monotone):
            continue
        actor.seen = set()
        done[b] = _replay(snap, n, wid, b, actor)
        for x in actor.seen:
            if reserve <= x <= winning_bid and x not in done and x not in cands:
                cands.add(x)
                heapq.heappush(heap, x)
        if done[b][0] == WIN and (best is None or b < best):
            best = b
    order = sorted(done)
    outcomes = [done[b][0] for b in order]
    monotone = all(a <= c for a, c in zip(outcomes, outcomes[1:]))
    if best is None:
        raise MonotonicityViolation(f"winner {wid!r} does not win with their own bid")
    below = [b for b in order if b < best]
    open_below = [b for b in below if done[b][0] == OPEN]
    times = [done[b][1] for b in below if done[b][1] is not None] + [done[best][1]]
    if open_below:
        return CutoffReceipt(wid, t_auction, best, None, True, n, reserve, winning_bid,
                             open_below[0], best, False, monotone, len(done))
    return CutoffReceipt(wid, t_auction, best, max(times + [t_auction]), False, n, reserve,
                         winning_bid, best, best, False, monotone, len(done))


# ----------------------------------------------------------------------------- runs

@dataclass
class CPMResult:
    receipts: list
    log: list
    ledger: dict
    agents: dict
    flags: list
    sales: list
    end_time: float
    _market: object = field(default=None, repr=False)
    _actor: object = field(default=None, repr=False)

    def receipt_for(self, agent_id) -> Optional[CutoffReceipt]:
        for r in self.receipts:
            if r.winner == agent_id:
                return r
        return None

    def payment(self, agent_id, optimistic: bool = True) -> float:
        for ag, _, price in self.sales:
            if ag.id == agent_id:
                return price
        r = self.receipt_for(agent_id)
        if r is None:
            return 0.0
        if r.censored:
            return r.lower if optimistic else r.upper
        return r.cutoff_price

    def payoff(self, agent_id, optimistic: bool = True) -> float:
        """Realised utility; waiting is reimbursed so it does not enter."""
        ag = self.agents[agent_id]
        if ag.outcome not in ("served", "bought"):
            return 0.0
        gain = ag.true_value if ag.present else 0.0  # a proxy's good is discarded
        return gain - self.payment(agent_id, optimistic)


def run_cpm(script: ArrivalScript, thresholds: Thresholds, strategy_profile: Optional[dict] = None,
            rules: Rules = CPM_RULES, seed: int = 0, c: float = 0.0, d: float = 0.0,
            cutoff_for=None, check_monotone: bool = True, strict: bool = False,
            start=None, price: bool = True) -> CPMResult:
    """Run the mechanism on a script.

    ``cutoff_for`` limits counterfactual pricing to the given buyer ids (all by
    default).  With ``strict`` a non-monotone cutoff search raises.  ``start``
    is an internal (market, index) pair used to resume from a shared prefix
    when every strategy is static; the ledger then covers only the resumed part.
    With ``price=False`` snapshots are kept but contested wins are not priced.
    """
    strategies = dict(script.strategies)
    strategies.update(strategy_profile or {})
    events = script.events
    static = all(st.static for st in strategies.values())
    if start is not None and static:
        m, first = start[0].clone(events), start[1]
    else:
        m, first = _Market(events, thresholds, rules), 0
    actor = _LiveActor(strategies, seed, snapshot=True, watch=cutoff_for)
    # once every priced buyer has left, later events only matter through replays
    early_exit = static and cutoff_for is not None and start is not None
    for n in range(first, len(events)):
        m.process(n, actor)
        if early_exit and all(aid in m.agents and m.agents[aid].status in ("won", "departed")
                              for aid in cutoff_for):
            break
    end = events[-1].time if events else 0.0
    m.inv_area += m.inventory * (end - m.last_time)

    replay = _ReplayActor(actor)
    receipts = []
    for ag, n, sole, bid, reserve in m.wins:
        t = events[n].time
        if sole:
            receipts.append(CutoffReceipt(ag.id, t, reserve, t, False, n, reserve, None,
                                          reserve, reserve, True, True, 1))
            continue
        if not price or (cutoff_for is not None and ag.id not in cutoff_for):
            continue
        rec = _solve_cutoff(actor.snapshots[n], n, ag.id, bid, reserve, replay, check_monotone)
        if not rec.monotone:
            m.flags.append((n, "non-monotone-cutoff"))
            if strict:
                raise MonotonicityViolation(f"cutoff search for {ag.id!r} at event {n}")
        receipts.append(rec)

    waits = 0.0
    for ag in m.agents.values():
        if ag.outcome in ("bought", "rejected"):
            continue
        leave = ag.exit_time if ag.exit_time is not None else end
        waits += leave - ag.entry_time
    posted = sum(p for _, _, p in m.sales)
    reserves = sum(r.cutoff_price for r in receipts if r.sole)
    cutoffs = sum(r.cutoff_price for r in receipts if not r.sole and not r.censored)
    holding = 0.0 if math.isinf(d) else d * m.inv_area
    ledger = dict(posted=posted, reserves=reserves, cutoffs=cutoffs,
                  censored=sum(1 for r in receipts if r.censored),
                  reimbursements=c * waits, holding=holding,
                  net=posted + reserves + cutoffs - c * waits - holding)
    return CPMResult(receipts, m.log, ledger, m.agents, m.flags, m.sales, end, m, actor)


def cutoff_price(script: ArrivalScript, thresholds: Thresholds, auction_index: int, winner_id,
                 rules: Rules = CPM_RULES, seed: int = 0) -> CutoffReceipt:
    """Cutoff price of the buyer who won the item at event ``auction_index``."""
    res = run_cpm(script, thresholds, rules=rules, seed=seed, cutoff_for={winner_id})
    for r in res.receipts:
        if r.auction_index == auction_index:
            if r.winner != winner_id:
                raise ScriptError(f"{winner_id!r} did not win at event {auction_index}")
            if r.censored:
                raise CensoredCutoff(f"cutoff in [{r.lower}, {r.upper}] undetermined at script end")
            return r
    raise ScriptError(f"no assignment at event {auction_index}")


def deviation_payoff(script: ArrivalScript, thresholds: Thresholds, agent_id, deviation: Strategy,
                     rules: Rules = CPM_RULES, seed: int = 0, optimistic: bool = True) -> float:
    """Realised utility of ``agent_id`` when only their strategy is replaced."""
    res = run_cpm(script, thresholds, {agent_id: deviation}, rules=rules, seed=seed,
                  cutoff_for={agent_id}, check_monotone=False)
    return res.payoff(agent_id, optimistic)


# ----------------------------------------------------------------------------- scenarios

SCENARIO_THRESHOLDS = Thresholds.from_values((1.0, 2.0, 4.0), (), v_hat_zero=0.0)
SCENARIOS = {
    "scenario1": [("A", 6), ("B", 3), "item", "item"],
    "scenario2": [("A", 6), ("B", 3), "item", ("C", 5), ("D", 5)],
    "scenario3": [("A", 6), ("alpha", 8), ("beta", 7), "item", "item", ("B", 3), "item", "item"],
}
SCENARIO_CUTOFFS = {"scenario1": 2.0, "scenario2": 3.0, "scenario3": 4.0}


def scenario_script(name: str) -> ArrivalScript:
    return ArrivalScript.from_sequence(SCENARIOS[name])


def _lost_auction(obs):
    return any(h[0] == "auction" and not h[1] for h in obs.history)


@dataclass
class DisclosureCase:
    """A strategy profile under which A gains by bidding 7 once rules are relaxed."""
    name: str
    script: ArrivalScript
    thresholds: Thresholds
    altered: Rules
    agent: object = "A"
    deviation_bid: float = 7.0
    expected_cutoff: float = 2.0


def disclosure_cases() -> list:
    th3 = Thresholds.from_values((1.0, 2.0, 4.0), (), 0.0)
    th4 = Thresholds.from_values((1.0, 2.0, 3.0, 9.0), (), 0.0)
    seq1 = [("A", 3), ("B", 6), "item", ("C", 5), ("D", 5), "item"]
    seq2 = [("A", 4), ("B", 6), "item", ("C", 5), "item", ("D", 10), ("E", 10), ("F", 10)]

    def avoid_b(v, obs):  # stay out whenever B is seen in the queue
        return (0.0, v) if obs and obs.queue_ids and "B" in obs.queue_ids else (v, v)

    def avoid_bid7(v, obs):  # stay out if the first auction cleared at 7
        return (0.0, v) if obs and obs.winning_bids and obs.winning_bids[0] == 7.0 else (v, v)

    def b_quits(v, obs):  # after a loss, drop at the lowest clock price
        return (1.0, v) if obs and _lost_auction(obs) else (v, v)

    def c_mimics(v, obs):  # after a survival stop at v_hat_1, act as value v_hat_1
        surv = [h for h in (obs.history if obs else ()) if h[0] == "survival"]
        return (1.0, 1.0) if surv and surv[0][1] == 1.0 else (v, v)

    def c_counts(v, obs):  # act as value v_hat_1 if nobody real was queued on entry
        e = obs.at_entry if obs else None
        q = e.queue_length if e is not None else (obs.queue_length if obs else None)
        return (1.0, 1.0) if q == 0 else (v, v)

    def abandon_after_loss(v, obs):
        return bool(obs and _lost_auction(obs))

    cases = []
    for name, fn, mode in (("identities", avoid_b, "identities"),
                           ("bids", avoid_bid7, "bids")):
        strat = {x: FunctionStrategy(fn, name=name) for x in ("C", "D")}
        cases.append(DisclosureCase(name, ArrivalScript.from_sequence(seq1, strat), th3,
                                    Rules(mode, True)))
    strat = {"B": FunctionStrategy(b_quits, name="b-quits"),
             "C": FunctionStrategy(c_mimics, name="c-mimics")}
    cases.append(DisclosureCase("nonpassive", ArrivalScript.from_sequence(seq2, strat), th4,
                                Rules("opaque", False)))
    strat = {"B": FunctionStrategy(lambda v, o: (v, v), abandon_fn=abandon_after_loss,
                                   name="b-abandons"),
             "C": FunctionStrategy(c_counts, name="c-counts")}
    cases.append(DisclosureCase("queue-length", ArrivalScript.from_sequence(seq2, strat), th4,
                                Rules("queue_length", True)))
    return cases


def evaluate_disclosure_case(case: DisclosureCase, grid_size: int = 21) -> dict:
    """Deviation gain of the case's buyer under relaxed rules and under CPM rules."""
    a = case.agent
    dev = Deviation(bid=case.deviation_bid)
    out = {"name": case.name}
    for label, rules in (("altered", case.altered), ("cpm", CPM_RULES)):
        truth = run_cpm(case.script, case.thresholds, rules=rules)
        devres = run_cpm(case.script, case.thresholds, {a: dev}, rules=rules)
        rec = devres.receipt_for(a)
        out[label] = dict(truthful=truth.payoff(a, optimistic=False),
                          deviation=devres.payoff(a),
                          cutoff=None if rec is None else rec.cutoff_price,
                          censored=bool(rec and rec.censored))
    closed = case.script.with_trailing_items(len(case.script.events))
    rows = _deviation_rows(closed, case.thresholds, CPM_RULES, 0, grid_size, agents=None, tol=1e-9)
    out["cpm_violations"] = [r for r in rows if r["violation"]]
    out["cpm_unresolved"] = sum(1 for r in rows if r["censored"])
    out["cpm_checks"] = len(rows)
    return out


# ----------------------------------------------------------------------------- random scripts

class ScriptSource:
    """Lazily generated event stream with independent buyer, item and value streams."""

    def __init__(self, dist: ValueDistribution, params: MarketParams, seed: int,
                 value_scale: float = 1.0, start_time: float = 0.0):
        self.streams = Streams(seed, params.lam, params.mu, dist)
        self.scale = value_scale
        self.events: list = []
        self._scripts: dict = {}
        self._tb = start_time + self.streams.buyer_gap()
        self._ti = start_time + self.streams.item_gap()

    def script(self, count: int) -> ArrivalScript:
        cached = self._scripts.get(count)
        if cached is None:
            cached = self._scripts[count] = ArrivalScript(self.take(count))
        return cached

    def take(self, count: int) -> list:
        while len(self.events) < count:
            if self._tb <= self._ti:
                self.events.append(ScriptEvent(self._tb, "buyer", self.streams.value() * self.scale))
                self._tb += self.streams.buyer_gap()
            else:
                self.events.append(ScriptEvent(self._ti, "item"))
                self._ti += self.streams.item_gap()
        return self.events[:count]


def cycle_ends(events, thresholds: Thresholds) -> list:
    """Indices after which the optimal policy leaves the system empty again."""
    th = thresholds
    queue, inv, ends, busy = [], 0, [], False
    for n, e in enumerate(events):
        if e.kind == "buyer":
            if inv:
                if e.value >= th.inventory_threshold(inv):
                    inv -= 1
            else:
                queue.append(e.value)
                queue.sort(reverse=True)
                for k in range(1, len(queue) + 1):
                    if queue[k - 1] < _rank_cut(th, k):
                        del queue[k - 1:]
                        break
        elif queue:
            queue.pop(0)
        elif inv < th.l_star:
            inv += 1
        if queue or inv:
            busy = True
        elif busy:
            ends.append(n)
            busy = False
    return ends


def one_cycle_script(dist, params, thresholds, seed, value_scale=1.0, tail: int = 8) -> tuple:
    """Events covering the first busy cycle, plus a short tail; returns (source, length)."""
    src = ScriptSource(dist, params, seed, value_scale)
    n = 32
    while True:
        ends = cycle_ends(src.take(n), thresholds)
        if ends:
            return src, ends[0] + 1 + tail
        n *= 2
        if n > 1 << 20:
            raise ScriptError("no cycle completed")


def run_resolved(src: ScriptSource, length: int, thresholds, strategies=None, rules=CPM_RULES,
                 seed=0, cutoff_for=None, check_monotone=True, max_len=1 << 16, settle=(),
                 **kw):
    """run_cpm on a growing prefix of ``src`` until the requested cutoffs are determined
    and every buyer in ``settle`` has left the market."""
    while True:
        res = run_cpm(src.script(length), thresholds, strategies, rules, seed,
                      cutoff_for=cutoff_for, check_monotone=check_monotone, **kw)
        pending = any(res.agents[a].outcome is None for a in settle if a in res.agents)
        if (not res.ledger["censored"] and not pending) or length >= max_len:
            return res, length
        length *= 2


# ----------------------------------------------------------------------------- deviation harness

def _grid(script: ArrivalScript, grid_size: int) -> list:
    vmax = max((e.value for e in script.events if e.kind == "buyer"), default=1.0)
    return [1.5 * vmax * j / (grid_size - 1) for j in range(grid_size)] if grid_size > 1 else [vmax]


def _deviations(value, grid, others, consulted) -> list:
    devs = []
    probes = sorted(set(grid) | {x + s for x in others for s in (-1e-6, 0.0, 1e-6)})
    if "bid" in consulted or "drop" in consulted:
        devs += [("bid", b, Deviation(bid=b)) for b in probes if "bid" in consulted]
        devs += [("drop", p, Deviation(drop=p)) for p in probes if "drop" in consulted]
    if "accept" in consulted:
        devs.append(("flip", None, Deviation(flip=True)))
    return devs


def _deviation_rows(script, thresholds, rules, seed, grid_size, agents=None, tol=1e-9,
                    src: Optional[ScriptSource] = None, length: Optional[int] = None) -> list:
    span = [length or len(script.events)]

    in_scope = {ArrivalScript.agent_id(n, e) for n, e in enumerate(script.events) if e.kind == "buyer"}

    def run(strats, who, check, start=None, settle=()):
        if src is None:
            return run_cpm(script, thresholds, strats, rules, seed, cutoff_for=who,
                           check_monotone=check, start=start)
        res, span[0] = run_resolved(src, span[0], thresholds, strats, rules, seed,
                                    cutoff_for=who, check_monotone=check, start=start,
                                    settle=settle)
        return res

    truth = run({}, None, True, settle=in_scope)
    prefixes = _arrival_states(truth, thresholds, rules)
    consulted = _consulted(truth)
    # a buyer still waiting when the script ends has no realised payoff yet
    base_open = {r.winner for r in truth.receipts if r.censored}
    base_open |= {a for a in in_scope if a in truth.agents and truth.agents[a].outcome is None}
    ids = [aid for aid in truth.agents if aid in in_scope and (agents is None or aid in agents)]
    grid = _grid(script, grid_size)
    rows = []
    for aid in ids:
        ag = truth.agents[aid]
        base = truth.payoff(aid, optimistic=False)
        others = [a.true_value for a in truth.agents.values() if a.id != aid]
        others += list(thresholds.buyer)
        for kind, x, dev in _deviations(ag.true_value, grid, others, consulted.get(aid, set())):
            res = run({aid: dev}, {aid}, False, prefixes.get(aid), settle=(aid,))
            pay = res.payoff(aid, optimistic=True)
            rec = res.receipt_for(aid)
            censored = (aid in base_open or bool(rec and rec.censored)
                        or res.agents[aid].outcome is None)
            rows.append(dict(agent=aid, value=ag.true_value, kind=kind, x=x, truthful=base,
                             deviation=pay, censored=censored,
                             violation=(not censored) and pay > base + tol))
    return rows


def _arrival_states(res: CPMResult, thresholds, rules) -> dict:
    """Market state just before each buyer's arrival on the truthful path."""
    arrivals = {ag.entry_index: aid for aid, ag in res.agents.items()}
    m = _Market(res._market.events, thresholds, rules)
    actor = _LiveActor(res._actor.strategies, np.random.Generator(np.random.Philox(0)), False)
    out = {}
    last = max(arrivals, default=-1)
    for n in range(last + 1):
        if n in arrivals:
            out[arrivals[n]] = (m.clone(), n)
        m.process(n, actor)
    return out


def _consulted(res: CPMResult) -> dict:
    """Which decisions each buyer faced under truthful play.

    A deviation in a decision that was never consulted leaves the run unchanged.
    """
    out = {}
    for aid, ag in res.agents.items():
        if ag.outcome in ("bought", "rejected"):
            out[aid] = {"accept"}
            continue
        out[aid] = {"drop"}
        if any(h[0] == "auction" for h in ag.history):
            out[aid].add("bid")
    return out


@dataclass
class SuiteReport:
    n_paths: int
    n_checks: int
    violations: list
    disclosure_cases: list
    elapsed: float
    monotonicity_flags: int = 0

    @property
    def passed(self) -> bool:
        return not self.violations and self.monotonicity_flags == 0

    def summary(self) -> str:
        return (f"{self.n_paths} paths, {self.n_checks} deviation checks, "
                f"{len(self.violations)} violations, {self.elapsed:.1f}s")


def strategyproofness_suite(dist: ValueDistribution, params: MarketParams, thresholds: Thresholds,
                            n_paths: int = 500, grid_size: int = 21, seed: int = 0,
                            value_scale: float = 1.0, rules: Rules = CPM_RULES,
                            include_cases: bool = True) -> SuiteReport:
    """Check truthful >= deviation - 1e-9 for every buyer on random one-cycle scripts."""
    if n_paths < 1:
        raise ConfigError("n_paths must be >= 1")
    start = _time.perf_counter()
    seeds = np.random.SeedSequence(seed).generate_state(n_paths, dtype=np.uint32)
    violations, checks, flags = [], 0, 0
    for p, s in enumerate(seeds):
        src, length = one_cycle_script(dist, params, thresholds, int(s), value_scale)
        script = ArrivalScript(src.take(length))
        rows = _deviation_rows(script, thresholds, rules, int(s), grid_size, src=src, length=length)
        checks += len(rows)
        for r in rows:
            if r["violation"]:
                r["path"] = p
                violations.append(r)
    cases = [evaluate_disclosure_case(c, grid_size) for c in disclosure_cases()] if include_cases else []
    return SuiteReport(n_paths, checks, violations, cases, _time.perf_counter() - start, flags)


# ----------------------------------------------------------------------------- expected cutoff

@dataclass(frozen=True)
class MCResult:
    estimate: float
    stderr: float
    reps: int


def expected_cutoff_price(script: ArrivalScript, auction_index: int, thresholds: Thresholds,
                          params: MarketParams, dist: ValueDistribution, reps: int, seed: int = 0,
                          value_scale: float = 1.0) -> MCResult:
    """Mean cutoff of the winner at ``auction_index`` over random continuations.

    Only the script up to and including the auction is used; later events are
    redrawn, with all future buyers truthful.
    """
    if reps < 1:
        raise ConfigError("reps must be >= 1")
    prefix = script.events[:auction_index + 1]
    m = _Market(prefix, thresholds, CPM_RULES)
    live = _LiveActor(dict(script.strategies), np.random.Generator(np.random.Philox(seed)), True)
    for n in range(len(prefix)):
        m.process(n, live)
    win = [w for w in m.wins if w[1] == auction_index]
    if not win:
        raise ScriptError(f"no assignment at event {auction_index}")
    ag, n, sole, bid, reserve = win[0]
    if sole:
        return MCResult(reserve, 0.0, reps)
    return _ecpm_estimate(live.snapshots[n], n, ag.id, bid, reserve, live, params, dist, reps,
                          seed, value_scale)


def _ecpm_estimate(snap, n, wid, bid, reserve, live, params, dist, reps, seed, scale):
    t0 = snap.events[n].time
    vals = []
    for r, s in enumerate(np.random.SeedSequence([seed, n]).generate_state(reps, dtype=np.uint32)):
        src = ScriptSource(dist, params, int(s), scale, start_time=t0)
        length = 16
        while True:
            events = list(snap.events[:n + 1]) + src.take(length)
            base = snap.clone(events)
            rec = _solve_cutoff(base, n, wid, bid, reserve, _ReplayActor(live), False)
            if not rec.censored or length > 1 << 16:
                break
            length *= 2
        vals.append(rec.cutoff_price)
    v = np.asarray(vals)
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
    return MCResult(float(v.mean()), se, reps)


# ----------------------------------------------------------------------------- long run

@dataclass
class LongRunReport:
    pricing: str
    revenue_per_time: float
    stderr: float
    cycles: int
    horizon: float
    censored: int
    policy_log_matches: Optional[bool] = None


def long_run_revenue(dist: ValueDistribution, params: MarketParams, thresholds: Thresholds,
                     n_cycles: int = 200, seed: int = 0, pricing: str = "cpm",
                     ecpm_reps: int = 4) -> LongRunReport:
    """Net revenue per unit time over ``n_cycles`` regeneration cycles.

    Payments are credited to the cycle of the sale; waiting reimbursements
    and holding costs to the cycle in which they accrue.  The standard error
    is the regenerative ratio estimate.
    """
    if pricing not in ("cpm", "ecpm"):
        raise ConfigError("pricing must be 'cpm' or 'ecpm'")
    src = ScriptSource(dist, params, seed)
    length = 64
    while True:
        ends = cycle_ends(src.take(length), thresholds)
        if len(ends) >= n_cycles:
            break
        length *= 2
    last = ends[n_cycles - 1]
    # extra events so that counterfactuals of the final cycle can resolve
    res, _ = run_resolved(src, last + 1 + 64, thresholds, rules=CPM_RULES, seed=seed,
                          c=params.c, d=params.d, check_monotone=False,
                          price=pricing == "cpm")
    events = src.events
    bounds = [events[0].time] + [events[e + 1].time for e in ends[:n_cycles]]
    t_end = bounds[-1]
    rev = np.zeros(n_cycles)
    cyc_of = lambda t: min(int(np.searchsorted(bounds, t, side="right")) - 1, n_cycles - 1)

    m = res._market
    live = res._actor
    for ag, n, price in m.sales:
        if events[n].time < t_end:
            rev[cyc_of(events[n].time)] += price
    censored = 0
    for ag, n, sole, bid, reserve in m.wins:
        t = events[n].time
        if t >= t_end:
            continue
        if sole:
            rev[cyc_of(t)] += reserve
        elif pricing == "cpm":
            rec = res.receipt_for(ag.id)
            if rec.censored:
                censored += 1
                continue
            rev[cyc_of(t)] += rec.cutoff_price
        else:
            est = _ecpm_estimate(live.snapshots[n], n, ag.id, bid, reserve, live, params, dist,
                                 ecpm_reps, seed, 1.0)
            rev[cyc_of(t)] += est.estimate
    # waiting reimbursements and holding, split across cycles
    for ag in m.agents.values():
        if ag.outcome in ("bought", "rejected") or ag.entry_time >= t_end:
            continue
        leave = min(ag.exit_time if ag.exit_time is not None else res.end_time, t_end)
        rev[cyc_of(ag.entry_time)] -= params.c * (leave - ag.entry_time)
    if not math.isinf(params.d) and thresholds.l_star:
        # inventory is positive only inside a busy cycle
        inv = 0
        prev = events[0].time
        for n, action, _ in m.log:
            t = events[n].time
            if t >= t_end:
                break
            if action in ("store", "sell"):
                rev[cyc_of(prev)] -= params.d * inv * (t - prev)
                prev = t
                inv += 1 if action == "store" else -1
    lens = np.diff(bounds)
    total = rev.sum() / lens.sum()
    resid = rev - total * lens
    se = float(math.sqrt((resid ** 2).sum() / (n_cycles * (n_cycles - 1))) / lens.mean())
    return LongRunReport(pricing, float(total), se, n_cycles, float(lens.sum()), censored)


def policy_equivalence(script: ArrivalScript, thresholds: Thresholds) -> bool:
    """Truthful CPM allocation log equals the optimal-policy log on the same script."""
    res = run_cpm(script, thresholds, cutoff_for=set())
    ref = policy_event_log([(e.time, e.kind, e.value) for e in script.events], thresholds)
    return res.log == ref
