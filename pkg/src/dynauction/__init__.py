"""Optimal dynamic allocation of stochastically arriving goods to impatient buyers."""

from .allocation import (InterimMechanism, conditional_win_prob, interim_allocation,
                         objective_value, oracle_benchmark, verify_rf_binding)
from .cpm import (CPM_RULES, ArrivalScript, Deviation, Rules, cutoff_price, deviation_payoff,
                  expected_cutoff_price, long_run_revenue, run_cpm, strategyproofness_suite)
from .errors import *  # noqa: F401,F403
from .simulator import SimConfig, run_fixed_threshold_policy, run_optimal_policy
from .solver import (MarketParams, Thresholds, build_dual_certificate, solve_platform_thresholds,
                     solve_service_thresholds, solve_thresholds)
from .steady import marginal_cdf, solve_stationary
from .valuedist import make_distribution, make_power, make_uniform

__version__ = "0.1.0"
