"""Command-line front end.

    dynauction solve    --config run.ini --out results/
    dynauction simulate --config run.ini --out results/ --seed 42
    dynauction plot     --config plot.ini --out figs/

Configs are INI-style key=value files with [market], [distribution] and one
section per command.  Every CSV starts with ``#`` header lines carrying the
schema version, a hash of the effective config and the seed.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import os
import sys

import numpy as np

from .allocation import (InterimMechanism, interim_allocation, objective_value,
                         oracle_benchmark)
from .cpm import (CPM_RULES, SCENARIO_CUTOFFS, SCENARIO_THRESHOLDS, ArrivalScript, Rules,
                  run_cpm, scenario_script, strategyproofness_suite)
from .errors import ConfigError, DynAuctionError
from .simulator import SimConfig, run_fixed_threshold_policy, run_optimal_policy
from .solver import MarketParams, Thresholds, build_dual_certificate, solve_thresholds
from .steady import marginal_cdf, mean_inventory, mean_queue_length, solve_stationary
from .valuedist import make_distribution

SCHEMA_VERSION = 1
COMMANDS = ("solve", "steady", "simulate", "cpm", "sweep", "certify", "plot")
EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2


def fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".12g")
    return str(x)


# ----------------------------------------------------------------------------- config

class RunConfig:
    """Parsed config plus the command-line overrides."""

    def __init__(self, parser: configparser.ConfigParser, command: str, out: str, seed: int):
        self.cp = parser
        self.command = command
        self.out = out
        self.seed = seed

    @classmethod
    def load(cls, path, command, out, seed, overrides=()) -> "RunConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        if path:
            if not os.path.exists(path):
                raise ConfigError(f"config file not found: {path}")
            try:
                cp.read(path)
            except configparser.Error as exc:
                raise ConfigError(f"cannot parse {path}: {exc}") from None
        for item in overrides:
            key, sep, value = item.partition("=")
            section, dot, name = key.partition(".")
            if not sep or not dot:
                raise ConfigError(f"override must look like section.key=value, got {item!r}")
            if not cp.has_section(section):
                cp.add_section(section)
            cp.set(section, name, value)
        if seed is None:
            seed = cp.getint("run", "seed", fallback=0) if cp.has_section("run") else 0
        return cls(cp, command, out, int(seed))

    def get(self, section, key, default=None):
        if self.cp.has_option(section, key):
            return self.cp.get(section, key).strip()
        return default

    def num(self, section, key, default=None) -> float:
        raw = self.get(section, key)
        if raw is None:
            if default is None:
                raise ConfigError(f"missing [{section}] {key}")
            return default
        try:
            return float(raw)  # accepts "inf"
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be a number, got {raw!r}") from None

    def numbers(self, section, key) -> list:
        raw = self.get(section, key)
        if raw is None:
            raise ConfigError(f"missing [{section}] {key}")
        try:
            return [float(x) for x in raw.replace(";", ",").split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be a comma-separated list") from None

    def market(self, **replace) -> MarketParams:
        vals = dict(lam=self.num("market", "lam"), mu=self.num("market", "mu"),
                    c=self.num("market", "c"), d=self.num("market", "d", math.inf),
                    w=self.num("market", "w", 0.0))
        vals.update(replace)
        return MarketParams(**vals)

    def distribution(self):
        name = self.get("distribution", "name", "uniform")
        extra = {}
        if name == "power":
            extra["a"] = self.num("distribution", "a", 1.0)
        try:
            return make_distribution(name, **extra)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def digest(self) -> str:
        canon = {s: dict(sorted(self.cp.items(s))) for s in sorted(self.cp.sections())}
        blob = json.dumps({"command": self.command, "seed": self.seed, "config": canon},
                          sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_csv(cfg: RunConfig, name: str, header: list, rows, notes=()) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, name)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema=dynauction/{os.path.splitext(name)[0]} v{SCHEMA_VERSION}\n")
        fh.write(f"# config_hash={cfg.digest()}\n")
        fh.write(f"# seed={cfg.seed}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(x) for x in row])
        for line in notes:
            fh.write(f"# {line}\n")
    return path


def read_csv(path: str) -> tuple:
    """(header, rows as dicts, comment lines) of a file written by write_csv."""
    if not os.path.exists(path):
        raise ConfigError(f"input file not found: {path}")
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    comments = [ln[1:].strip() for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    if not body:
        raise ConfigError(f"{path} has no header row")
    reader = csv.DictReader(body)
    rows = list(reader)
    return reader.fieldnames, rows, comments


def _solved(cfg: RunConfig):
    dist = cfg.distribution()
    params = cfg.market()
    th = solve_thresholds(dist, params)
    return dist, params, th


# ----------------------------------------------------------------------------- commands

def _threshold_rows(th: Thresholds) -> list:
    rows = [(-l, v, th.gamma_at(l)) for l, v in reversed(list(enumerate(th.inventory, 1)))]
    rows += [(k, v, "") for k, v in enumerate(th.buyer, 1)]
    return rows


def cmd_solve(cfg: RunConfig) -> int:
    dist, params, th = _solved(cfg)
    write_csv(cfg, "thresholds.csv", ["rank", "v_hat", "gamma"], _threshold_rows(th))
    with open(os.path.join(cfg.out, "thresholds.json"), "w") as fh:
        json.dump(dict(th.to_dict(), config_hash=cfg.digest(), seed=cfg.seed), fh, indent=2,
                  sort_keys=True)
        fh.write("\n")
    sd = solve_stationary(dist, params, th)
    rows = [("P", k, p) for k, p in enumerate(sd.p0, 1)]
    rows += [("q", l, q) for l, q in enumerate(sd.inventory_pmf)]
    write_csv(cfg, "stationary.csv", ["kind", "index", "value"], rows)
    n = int(cfg.num("solve", "grid", 101))
    mech_rows = []
    if th.k_star or th.l_star:
        mech = InterimMechanism(sd)
        for v in np.linspace(0.0, 1.0, n):
            mech_rows.append((v, mech.allocation(v), mech.transfer(v)))
    write_csv(cfg, "mechanism.csv", ["v", "allocation", "transfer"], mech_rows)
    obj = objective_value(dist, params, sd)
    cert = build_dual_certificate(dist, params, th, raise_on_violation=False)
    residual, passed = cert.max_violation, cert.passed
    status = EXIT_OK if passed else EXIT_CHECK
    bench = oracle_benchmark(dist, params)
    write_csv(cfg, "summary.csv", ["key", "value"], [
        ("k_star", th.k_star), ("l_star", th.l_star), ("objective", obj),
        ("objective_per_mu", obj / params.mu), ("r_star", bench.r_star),
        ("mean_queue", mean_queue_length(sd)),
        ("mean_inventory", mean_inventory(sd) if th.l_star else 0.0),
        ("certificate_residual", residual), ("certificate_passed", passed)])
    print(f"K*={th.k_star} L*={th.l_star} objective={fmt(obj)} certificate="
          f"{'pass' if passed else 'FAIL'}")
    return status


def cmd_certify(cfg: RunConfig) -> int:
    dist, params, th = _solved(cfg)
    cert = build_dual_certificate(dist, params, th, grid_n=int(cfg.num("certify", "grid", 1001)),
                                  raise_on_violation=False)
    rows = [("P0", k, v) for k, v in enumerate(cert.p0_coeffs, 1)]
    rows += [("Q", l, v) for l, v in enumerate(cert.q_coeffs, 1)]
    rows += [("PV_max", k, max(r)) for k, r in enumerate(cert.pv_coeffs, 1)]
    rows += [("X_max", 0, max(cert.x_coeffs))]
    write_csv(cfg, "certificate.csv", ["kind", "index", "value"], rows,
              notes=[f"max_violation={fmt(cert.max_violation)}",
                     f"passed={'yes' if cert.passed else 'no'}"])
    print(f"max residual {fmt(cert.max_violation)}: {'pass' if cert.passed else 'FAIL'}")
    return EXIT_OK if cert.passed else EXIT_CHECK


def cmd_steady(cfg: RunConfig) -> int:
    dist, params, th = _solved(cfg)
    sd = solve_stationary(dist, params, th)
    n = int(cfg.num("steady", "grid", 201))
    ks = range(1, th.k_star + 1)
    rows = [[v] + [marginal_cdf(sd, k, v) for k in ks] for v in np.linspace(0.0, 1.0, n)]
    write_csv(cfg, "cdf.csv", ["v"] + [f"P{k}" for k in ks], rows,
              notes=[f"v_hat_{k}={fmt(v)}" for k, v in enumerate(th.buyer, 1)])
    write_csv(cfg, "stationary.csv", ["kind", "index", "value"],
              [("P", k, p) for k, p in enumerate(sd.p0, 1)]
              + [("q", l, q) for l, q in enumerate(sd.inventory_pmf)])
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    dist = cfg.distribution()
    params = cfg.market()
    simcfg = SimConfig(seed=cfg.seed, horizon=cfg.num("simulate", "horizon", 1e5),
                       warmup=cfg.num("simulate", "warmup", 1e3))
    policy = cfg.get("simulate", "policy", "optimal")
    if policy == "fixed":
        stats = run_fixed_threshold_policy(dist, params, cfg.num("simulate", "cutoff"),
                                           int(cfg.num("simulate", "inventory_cap", 0)), simcfg)
        write_csv(cfg, "simstats.csv", ["key", "value"], _stat_rows(stats))
        return EXIT_OK
    if policy != "optimal":
        raise ConfigError(f"[simulate] policy must be optimal or fixed, got {policy!r}")
    th = solve_thresholds(dist, params)
    sd = solve_stationary(dist, params, th)
    mech = InterimMechanism(sd)
    stats = run_optimal_policy(dist, params, th, mech, simcfg)
    rows = []
    gap = 0.0
    for k in range(1, th.k_star + 1):
        for j, v in enumerate(stats.probes):
            exact = marginal_cdf(sd, k, v)
            gap = max(gap, abs(stats.cdf[k - 1, j] - exact))
            rows.append((k, v, stats.cdf[k - 1, j], exact))
    write_csv(cfg, "cdf_compare.csv", ["k", "v", "empirical", "analytic"], rows)
    q_exact = sd.inventory_pmf
    q_gap = max(abs(a - b) for a, b in zip(stats.q_hat, q_exact))
    obj = objective_value(dist, params, sd)
    z = (stats.net_per_time - obj) / stats.net_stderr if stats.net_stderr > 0 else 0.0
    checks = [("cdf_sup_gap", gap, gap < 0.01), ("q_hat_gap", q_gap, q_gap < 0.01),
              ("net_z_score", z, abs(z) <= 3.0)]
    write_csv(cfg, "simstats.csv", ["key", "value"],
              _stat_rows(stats) + [("objective", obj)],
              notes=[f"check {name}={fmt(val)} {'pass' if ok else 'FAIL'}"
                     for name, val, ok in checks])
    for name, val, ok in checks:
        print(f"{name}: {fmt(val)} {'pass' if ok else 'FAIL'}")
    return EXIT_OK if all(ok for _, _, ok in checks) else EXIT_CHECK


def _stat_rows(stats) -> list:
    rows = [("observed_time", stats.observed_time), ("revenue", stats.revenue),
            ("reimbursements", stats.reimbursements), ("holding", stats.holding),
            ("net_per_time", stats.net_per_time), ("net_stderr", stats.net_stderr),
            ("mean_queue", stats.mean_queue), ("mean_wait", stats.mean_wait),
            ("lambda_eff", stats.lambda_eff), ("mean_inventory", stats.mean_inventory)]
    rows += [(f"q_hat_{l}", q) for l, q in enumerate(stats.q_hat)]
    rows += sorted(stats.counters.items())
    return rows


def _cpm_script(cfg: RunConfig):
    name = cfg.get("cpm", "scenario")
    if name:
        if name not in SCENARIO_CUTOFFS:
            raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(SCENARIO_CUTOFFS)}")
        return scenario_script(name), SCENARIO_THRESHOLDS, name
    path = cfg.get("cpm", "script")
    if not path:
        raise ConfigError("[cpm] needs scenario= or script=")
    header, rows, _ = read_csv(path)
    need = {"time", "kind"}
    if not need <= set(header or ()):
        raise ConfigError(f"{path} must have columns time,kind[,value,agent_id]")
    script = ArrivalScript.from_rows(
        [(r["time"], r["kind"], r.get("value", ""), r.get("agent_id", "")) for r in rows])
    if cfg.get("cpm", "thresholds"):
        th = Thresholds.from_values(cfg.numbers("cpm", "thresholds"),
                                    cfg.numbers("cpm", "inventory_thresholds")
                                    if cfg.get("cpm", "inventory_thresholds") else (),
                                    cfg.num("cpm", "v_hat_zero", 0.0))
    else:
        th = solve_thresholds(cfg.distribution(), cfg.market())
    return script, th, None


def cmd_cpm(cfg: RunConfig) -> int:
    disclosure = cfg.get("cpm", "disclosure", "opaque")
    rules = Rules(disclosure=disclosure, passive=cfg.get("cpm", "passive", "yes") != "no")
    status = EXIT_OK
    paths = int(cfg.num("cpm", "suite_paths", 0))
    if paths:
        dist, params, th = _solved(cfg)
        rep = strategyproofness_suite(dist, params, th, n_paths=paths, seed=cfg.seed,
                                      include_cases=False)
        write_csv(cfg, "suite.csv", ["agent", "value", "kind", "x", "truthful", "deviation"],
                  [(r["agent"], r["value"], r["kind"], r["x"], r["truthful"], r["deviation"])
                   for r in rep.violations], notes=[rep.summary()])
        print(rep.summary())
        if not rep.passed:
            status = EXIT_CHECK
        if not (cfg.get("cpm", "scenario") or cfg.get("cpm", "script")):
            return status
    script, th, scenario = _cpm_script(cfg)
    res = run_cpm(script, th, rules=rules, seed=cfg.seed)
    write_csv(cfg, "receipts.csv",
              ["winner", "auction_index", "auction_time", "cutoff_price", "determination_time",
               "censored", "lower", "upper", "reserve", "sole"],
              [(r.winner, r.auction_index, r.auction_time, r.cutoff_price,
                "" if r.determination_time is None else r.determination_time, r.censored,
                r.lower, r.upper, r.reserve, r.sole) for r in res.receipts])
    write_csv(cfg, "log.csv", ["event", "action", "agent"],
              [(n, a, "" if who is None else who) for n, a, who in res.log])
    notes = [f"{k}={fmt(v)}" for k, v in sorted(res.ledger.items())]
    if scenario:
        want = SCENARIO_CUTOFFS[scenario]
        got = [r.cutoff_price for r in res.receipts if not r.sole]
        ok = bool(got) and got[0] == want
        notes.append(f"check cutoff={fmt(got[0] if got else float('nan'))} expected={fmt(want)} "
                     f"{'pass' if ok else 'FAIL'}")
        print(notes[-1])
        if not ok:
            status = EXIT_CHECK
    write_csv(cfg, "ledger.csv", ["key", "value"], sorted(res.ledger.items()), notes=notes)
    return status


SWEEP_PARAMS = ("c", "lam", "mu", "d", "w")


def _crossing_rank(low: tuple, high: tuple):
    """Largest k with low_j <= high_j for all j <= k when the order then flips for good."""
    m = min(len(low), len(high))
    signs = [low[j] <= high[j] for j in range(m)]
    kbar = 0
    while kbar < m and signs[kbar]:
        kbar += 1
    single = all(not s for s in signs[kbar:])
    return kbar, single


def cmd_sweep(cfg: RunConfig) -> int:
    dist = cfg.distribution()
    param = cfg.get("sweep", "param")
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"[sweep] param must be one of {SWEEP_PARAMS}")
    values = cfg.numbers("sweep", "values")
    if any(math.isnan(x) for x in values) or (param != "d" and any(math.isinf(x) for x in values)):
        raise ConfigError("sweep values must be finite")
    results = []
    for x in values:
        params = cfg.market(**{param: x})
        th = solve_thresholds(dist, params)
        obj = objective_value(dist, params, solve_stationary(dist, params, th))
        results.append((x, params, th, obj))
    width_k = max(th.k_star for _, _, th, _ in results)
    width_l = max(th.l_star for _, _, th, _ in results)
    header = [param, "k_star", "l_star", "objective", "objective_per_mu", "r_star"]
    header += [f"v_hat_{k}" for k in range(1, width_k + 1)]
    header += [f"v_hat_-{l}" for l in range(1, width_l + 1)]
    rows = []
    for x, params, th, obj in results:
        row = [x, th.k_star, th.l_star, obj, obj / params.mu, oracle_benchmark(dist, params).r_star]
        row += list(th.buyer) + [""] * (width_k - th.k_star)
        row += list(th.inventory) + [""] * (width_l - th.l_star)
        rows.append(row)
    checks = _sweep_checks(param, results)
    write_csv(cfg, "sweep.csv", header, rows,
              notes=[f"check {name}: {'pass' if ok else 'FAIL'}" for name, ok in checks])
    for name, ok in checks:
        print(f"{name}: {'pass' if ok else 'FAIL'}")
    return EXIT_OK if all(ok for _, ok in checks) else EXIT_CHECK


def _sweep_checks(param, results) -> list:
    """Comparative-statics assertions across consecutive grid points."""
    order = sorted(results, key=lambda r: r[0])
    pairs = [(a[2].buyer, b[2].buyer) for a, b in zip(order, order[1:])]
    checks = []
    if param in ("c", "lam", "mu"):
        up = param != "mu"
        trend = "increasing" if up else "decreasing"

        def moves(lo, hi):
            return hi > lo if up else hi < lo

        if param == "lam":
            checks.append(("v_hat_1 invariant in lam", all(a[:1] == b[:1] for a, b in pairs)))
        else:
            checks.append((f"v_hat_1 strictly {trend} in {param}",
                           all(moves(a[0], b[0]) for a, b in pairs if a and b)))
        checks.append((f"v_hat_k (k>=2) strictly {trend} in {param}",
                       all(moves(a[k], b[k]) for a, b in pairs
                           for k in range(1, min(len(a), len(b))))))
    elif param == "w":
        for (a, b), (x0, x1) in zip(pairs, zip(sorted(r[0] for r in results),
                                               sorted(r[0] for r in results)[1:])):
            kbar, single = _crossing_rank(b, a)
            checks.append((f"single crossing w={fmt(x0)} vs w={fmt(x1)} at k_bar={kbar}", single))
    return checks


def cmd_plot(cfg: RunConfig) -> int:
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "dynauction"
    kind = cfg.get("plot", "kind", "cdf")
    src = cfg.get("plot", "input")
    if not src:
        raise ConfigError("[plot] input= is required")
    header, rows, comments = read_csv(src)
    fig, ax = plt.subplots(figsize=(6, 4))
    if kind == "cdf":
        _need(header, ["v"], src)
        cols = [h for h in header if h.startswith("P")]
        v = [float(r["v"]) for r in rows]
        if not cols:
            ax.text(0.5, 0.5, "K* = 0: no buyer is ever queued", ha="center", va="center",
                    transform=ax.transAxes)
        for col in cols:
            ax.step(v, [float(r[col]) for r in rows], where="post", label=f"$P_{{{col[1:]}}}$")
        ax.set_xlabel("v")
        ax.set_ylabel("stationary CDF")
    elif kind == "thresholds":
        _need(header, ["w"], src)
        cols = [h for h in header if h.startswith("v_hat_") and not h.startswith("v_hat_-")]
        for r in rows:
            ks = [int(c.split("_")[-1]) for c in cols if r[c] != ""]
            ax.plot(ks, [float(r[f"v_hat_{k}"]) for k in ks], marker="o", label=f"w={r['w']}")
        ax.set_xlabel("rank k")
        ax.set_ylabel("threshold")
    elif kind == "convergence":
        _need(header, ["c", "objective_per_mu", "r_star"], src)
        c = [float(r["c"]) for r in rows]
        ax.plot(c, [float(r["objective_per_mu"]) for r in rows], marker="o",
                label="per-unit revenue")
        ax.plot(c, [float(r["r_star"]) for r in rows], linestyle="--", label="$R^*$")
        ax.set_xscale("log")
        ax.set_xlabel("waiting cost c")
        ax.set_ylabel("revenue per item")
    else:
        plt.close(fig)
        raise ConfigError(f"[plot] kind must be cdf, thresholds or convergence, got {kind!r}")
    if ax.get_legend_handles_labels()[0]:
        ax.legend()
    fig.tight_layout()
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, f"{kind}.svg")
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    print(path)
    return EXIT_OK


def _need(header, cols, src):
    missing = [c for c in cols if c not in (header or ())]
    if missing:
        raise ConfigError(f"{src} is missing columns {missing}")


HANDLERS = {"solve": cmd_solve, "steady": cmd_steady, "simulate": cmd_simulate,
            "cpm": cmd_cpm, "sweep": cmd_sweep, "certify": cmd_certify, "plot": cmd_plot}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dynauction",
                                 description="Optimal dynamic allocation with waiting costs.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config entry")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, args.command, args.out, args.seed, args.set)
        return HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DynAuctionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
