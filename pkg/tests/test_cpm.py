import pytest
from hypothesis import given, settings, strategies as st

from dynauction.cpm import (CPM_RULES, SCENARIO_CUTOFFS, SCENARIO_THRESHOLDS, ArrivalScript,
                            Deviation, Rules, ScriptSource, disclosure_cases, cutoff_price,
                            deviation_payoff, evaluate_disclosure_case, expected_cutoff_price,
                            long_run_revenue, policy_equivalence, run_cpm, scenario_script,
                            strategyproofness_suite)
from dynauction.errors import CensoredCutoff, ConfigError, ScriptError
from dynauction.solver import MarketParams, Thresholds
from dynauction.valuedist import make_uniform

TH = SCENARIO_THRESHOLDS


@pytest.mark.parametrize("name", sorted(SCENARIO_CUTOFFS))
def test_scenario_cutoffs(name):
    res = run_cpm(scenario_script(name), TH)
    rec = res.receipt_for("A")
    assert not rec.censored and rec.cutoff_price == SCENARIO_CUTOFFS[name]
    assert cutoff_price(scenario_script(name), TH, rec.auction_index, "A").cutoff_price == rec.cutoff_price


def test_overbid_keeps_price():
    s = scenario_script("scenario1")
    assert deviation_payoff(s, TH, "A", Deviation(bid=10.0)) == pytest.approx(4.0)
    res = run_cpm(s, TH, {"A": Deviation(bid=10.0)})
    assert res.receipt_for("A").cutoff_price == 2.0


def test_underbid_loses():
    s = scenario_script("scenario2")
    assert run_cpm(s, TH).payoff("A") == pytest.approx(3.0)
    assert deviation_payoff(s, TH, "A", Deviation(bid=2.5)) == 0.0


def test_truthful_self_replay():
    s = scenario_script("scenario3")
    assert deviation_payoff(s, TH, "A", Deviation()) == run_cpm(s, TH).payoff("A")


def test_sole_buyer_pays_reserve():
    res = run_cpm(ArrivalScript.from_sequence([("A", 6), "item"]), TH)
    rec = res.receipt_for("A")
    assert rec.sole and rec.cutoff_price == rec.reserve == 1.0


def test_censored_cutoff():
    # B could still be removed by later arrivals, so A's price is open
    s = ArrivalScript.from_sequence([("A", 6), ("B", 3), "item"])
    with pytest.raises(CensoredCutoff):
        cutoff_price(s, TH, 2, "A")


def test_script_errors():
    with pytest.raises(ScriptError):
        ArrivalScript([(1.0, "buyer", 1.0), (1.0, "item")])
    with pytest.raises(ScriptError):
        ArrivalScript([(1.0, "seller", 1.0)])
    with pytest.raises(ScriptError):
        ArrivalScript([(1.0, "buyer", 1.0, "x"), (2.0, "buyer", 2.0, "x")])
    with pytest.raises(ScriptError):
        cutoff_price(scenario_script("scenario1"), TH, 0, "A")
    with pytest.raises(ConfigError):
        Rules("everything")


@pytest.mark.parametrize("case", disclosure_cases(), ids=lambda c: c.name)
def test_disclosure_cases(case):
    out = evaluate_disclosure_case(case)
    alt, cpm = out["altered"], out["cpm"]
    assert alt["deviation"] > alt["truthful"]
    assert alt["cutoff"] == case.expected_cutoff
    assert cpm["deviation"] <= cpm["truthful"] + 1e-9
    assert out["cpm_violations"] == []


def _scripts(th_max):
    # distinct values off the thresholds: exact ties are a null event under continuous values
    value = st.floats(0.0, th_max, allow_nan=False).filter(lambda v: v not in TH.buyer)
    event = st.one_of(st.just(("item", 0.0)), st.tuples(st.just("buyer"), value))
    return st.lists(event, min_size=1, max_size=25,
                    unique_by=lambda e: e[1] if e[0] == "buyer" else object())


def _as_script(events):
    return ArrivalScript([(float(n + 1), kind, v) for n, (kind, v) in enumerate(events)])


@settings(max_examples=60, deadline=None)
@given(_scripts(6.0))
def test_policy_equivalence_random(events):
    assert policy_equivalence(_as_script(events), TH)


@settings(max_examples=40, deadline=None)
@given(_scripts(6.0))
def test_cutoff_between_reserve_and_bid(events):
    s = _as_script(events).with_trailing_items(len(events))
    res = run_cpm(s, TH)
    for rec in res.receipts:
        ag = res.agents[rec.winner]
        assert rec.monotone
        if rec.censored:
            continue
        assert rec.reserve - 1e-12 <= rec.cutoff_price
        if not rec.sole:
            assert rec.cutoff_price <= rec.winning_bid + 1e-12
        stops = [h[1] for h in ag.history if h[0] == "survival"]
        assert all(rec.reserve >= x for x in stops)


def test_policy_equivalence_with_inventory(uniform, platform_params, platform_solution):
    th = platform_solution[0]
    src = ScriptSource(uniform, platform_params, seed=4)
    assert policy_equivalence(ArrivalScript(src.take(400)), th)


def test_ecpm_sole_buyer_and_scenario_prefix(uniform):
    p = MarketParams(2, 1, 0.3)
    sole = ArrivalScript.from_sequence([("A", 6), "item"])
    est = expected_cutoff_price(sole, 1, TH, p, uniform, reps=5)
    assert est.estimate == 1.0 and est.stderr == 0.0
    est = expected_cutoff_price(scenario_script("scenario1"), 2, TH, p, uniform, reps=100,
                                seed=1, value_scale=5.0)
    assert 2.0 <= est.estimate <= 4.0
    with pytest.raises(ConfigError):
        expected_cutoff_price(sole, 1, TH, p, uniform, reps=0)


def test_long_run_cpm_matches_objective(uniform, fig_params, fig_solution):
    th, _, _, obj = fig_solution
    rep = long_run_revenue(uniform, fig_params, th, n_cycles=600, seed=5)
    assert rep.censored == 0
    assert abs(rep.revenue_per_time - obj) <= 3 * rep.stderr


def test_small_suite_on_solved_thresholds(uniform, fig_params, fig_solution):
    th = fig_solution[0]
    rep = strategyproofness_suite(uniform, fig_params, th, n_paths=25, grid_size=11, seed=2,
                                  include_cases=False)
    assert rep.passed, rep.violations[:3]
    assert rep.n_checks > 0


def test_suite_rejects_zero_paths(uniform, fig_params):
    with pytest.raises(ConfigError):
        strategyproofness_suite(uniform, fig_params, TH, n_paths=0)
