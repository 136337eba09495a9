import math

import numpy as np
import pytest

from dynauction.allocation import allocation_array
from dynauction.errors import ConfigError
from dynauction.simulator import (SimConfig, mc_gamblers_ruin, policy_event_log,
                                  run_fixed_threshold_policy, run_optimal_policy)
from dynauction.solver import MarketParams, Thresholds
from dynauction.steady import marginal_cdf


@pytest.fixture(scope="module")
def fig_run(uniform, fig_params, fig_solution):
    th, sd, mech, _ = fig_solution
    return run_optimal_policy(uniform, fig_params, th, mech, SimConfig(seed=5, horizon=2e5, warmup=2e3))


def test_config_validation():
    with pytest.raises(ConfigError):
        SimConfig(horizon=10, warmup=10)
    with pytest.raises(ConfigError):
        SimConfig(probe_values=[0.5, 1.5])


def test_determinism(uniform, fig_params, fig_solution):
    th, _, mech, _ = fig_solution
    cfg = SimConfig(seed=11, horizon=2e4, warmup=1e3)
    a = run_optimal_policy(uniform, fig_params, th, mech, cfg)
    b = run_optimal_policy(uniform, fig_params, th, mech, cfg)
    assert np.array_equal(a.cdf, b.cdf) and np.array_equal(a.q_hat, b.q_hat)
    assert a.counters == b.counters and a.net_per_time == b.net_per_time
    c = run_optimal_policy(uniform, fig_params, th, mech, SimConfig(seed=12, horizon=2e4, warmup=1e3))
    assert c.counters != a.counters


def test_counters_and_littles_law(fig_run):
    n = fig_run.counters
    assert n["served"] + n["removed"] + n["turned_away"] + n["still_present"] == n["arrivals"]
    assert n["items_served"] + n["stored"] + n["discarded"] == n["items"]
    assert fig_run.lambda_eff * fig_run.mean_wait == pytest.approx(fig_run.mean_queue, rel=0.02)


def test_cdf_agreement_short_run(fig_run, fig_solution):
    sd = fig_solution[1]
    # time-average of an ergodic chain at horizon 2e5: a few times 1e-3 of noise
    for k in (1, 2):
        exact = np.array([marginal_cdf(sd, k, v) for v in fig_run.probes])
        assert np.max(np.abs(fig_run.cdf[k - 1] - exact)) < 0.01
    assert abs(fig_run.cdf[0, 0] - sd.p1_0) < 0.01


def test_bin_frequency_matches_bin_average(fig_run, fig_solution):
    sd = fig_solution[1]
    edges = fig_run.bin_edges
    checked = 0
    for j in range(len(edges) - 1):
        n = fig_run.bin_resolved[j]
        if n < 1000:
            continue
        fine = np.linspace(edges[j], edges[j + 1], 2001)
        p = float(np.mean(allocation_array(sd, fine)))  # uniform density inside the bin
        se = math.sqrt(max(p * (1 - p), 1e-12) / n)
        assert abs(fig_run.bin_served[j] / n - p) <= 3 * se + 1e-12
        checked += 1
    assert checked >= 10


def test_no_buyers_fills_inventory(uniform, platform_params, platform_solution):
    th, _, mech, _ = platform_solution
    st = run_optimal_policy(uniform, platform_params, th, mech,
                            SimConfig(seed=1, horizon=2e3, warmup=100), inject_buyers=False)
    assert st.revenue == 0.0
    assert st.q_hat[th.l_star] > 0.99


def test_platform_run_invariants(uniform, platform_params, platform_solution):
    th, sd, mech, obj = platform_solution
    st = run_optimal_policy(uniform, platform_params, th, mech, SimConfig(seed=3, horizon=1e5, warmup=1e3))
    assert abs((st.net_per_time - obj) / st.net_stderr) <= 3
    assert np.max(np.abs(st.q_hat - np.array(sd.inventory_pmf))) < 0.01


def test_fixed_cutoff_one_admits_nobody(uniform, fig_params):
    st = run_fixed_threshold_policy(uniform, fig_params, 1.0, 0, SimConfig(seed=2, horizon=1e4, warmup=10))
    assert st.counters["admitted"] == 0 and st.revenue == 0.0


def test_fixed_cutoff_queue_baseline(uniform):
    p = MarketParams(2, 1, 1e-9)
    st = run_fixed_threshold_policy(uniform, p, 0.55, 0, SimConfig(seed=4, horizon=1e6, warmup=1e4))
    assert abs(st.net_per_time - 0.495) <= 3 * st.net_stderr
    util = 2 * 0.45
    se_queue = math.sqrt(2 * util * (1 + util) / (1 - util) ** 4 / 0.99e6)
    assert abs(st.mean_queue - util / (1 - util)) <= 3 * se_queue


def test_fixed_inventory_without_storage(uniform):
    p = MarketParams(2, 1, 0.1, 0.1)
    st = run_fixed_threshold_policy(uniform, p, 0.55, 0, SimConfig(seed=2, horizon=1e4, warmup=10),
                                    style="inventory")
    assert st.counters["items_served"] == 0 and st.revenue == 0.0


@pytest.mark.parametrize("rho, i, k, exact", [(0.5, 2, 1, 6 / 7), (1.0, 2, 2, 1 / 3), (2.0, 3, 1, None)])
def test_gamblers_ruin(rho, i, k, exact):
    from dynauction.allocation import conditional_win_prob
    est = mc_gamblers_ruin(rho, i, k, 200_000, seed=9)
    target = conditional_win_prob(rho, k, i) if exact is None else exact
    assert abs(est.estimate - target) <= 3 * est.stderr
    assert mc_gamblers_ruin(rho, i, 0, 10).estimate == 1.0


def test_policy_event_log_small_script():
    th = Thresholds.from_values((0.5, 0.8), (), 0.5)
    script = [(1.0, "buyer", 0.6), (2.0, "buyer", 0.7), (3.0, "buyer", 0.9), (4.0, "item", 0.0),
              (5.0, "buyer", 0.4), (6.0, "item", 0.0), (7.0, "item", 0.0)]
    log = policy_event_log(script, th)
    assert log == [(0, "admit", 0), (1, "admit", 1), (1, "remove", 0), (2, "admit", 2),
                   (2, "remove", 1), (3, "serve", 2), (4, "turn_away", 4), (5, "discard", None),
                   (6, "discard", None)]


def test_event_log_matches_replay(uniform, platform_params, platform_solution):
    th, _, mech, _ = platform_solution
    log = []
    run_optimal_policy(uniform, platform_params, th, mech, SimConfig(seed=8, horizon=300, warmup=0),
                       event_log=log)
    from dynauction.cpm import ScriptSource
    events = ScriptSource(uniform, platform_params, 8).take(log[-1][0] + 1)
    assert policy_event_log([(e.time, e.kind, e.value) for e in events], th) == log
    assert {a for _, a, _ in log} >= {"store", "sell"}
