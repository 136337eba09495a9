import os

import pytest

from dynauction.cli import main, read_csv

MARKET = ["--set", "market.lam=2", "--set", "market.mu=1", "--set", "market.c=0.3"]


def run(tmp_path, command, *extra, sub="out"):
    out = tmp_path / sub
    code = main([command, "--out", str(out), *MARKET, *extra])
    return code, out


def test_solve_outputs(tmp_path):
    code, out = run(tmp_path, "solve")
    assert code == 0
    header, rows, comments = read_csv(out / "thresholds.csv")
    assert header == ["rank", "v_hat", "gamma"]
    assert [float(r["v_hat"]) for r in rows] == pytest.approx([0.65, 0.8703045124], abs=1e-8)
    assert comments[0] == "schema=dynauction/thresholds v1"
    assert comments[1].startswith("config_hash=") and comments[2] == "seed=0"
    s = {r["key"]: r["value"] for r in read_csv(out / "summary.csv")[1]}
    assert int(s["k_star"]) == 2 and int(s["certificate_passed"]) == 1
    assert float(s["objective"]) == pytest.approx(0.173345116, abs=1e-8)
    for name in ("stationary.csv", "mechanism.csv", "thresholds.json"):
        assert (out / name).exists()


def test_config_file_and_inline_comments(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[market]\nlam = 2   # buyers\nmu = 1\nc = 0.3\n[run]\nseed = 9\n")
    out = tmp_path / "o"
    assert main(["solve", "--config", str(ini), "--out", str(out)]) == 0
    assert read_csv(out / "summary.csv")[2][2] == "seed=9"


def test_config_errors(tmp_path):
    assert main(["solve", "--out", str(tmp_path), "--set", "market.lam=0", "--set", "market.mu=1",
                 "--set", "market.c=0.3"]) == 1
    assert main(["solve", "--out", str(tmp_path), "--set", "market.lam=2"]) == 1
    assert main(["solve", "--out", str(tmp_path), "--set", "bad"]) == 1
    assert main(["solve", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path)]) == 1
    assert run(tmp_path, "simulate", "--set", "simulate.policy=magic")[0] == 1
    assert run(tmp_path, "cpm")[0] == 1


def test_expensive_waiting_queues_nobody(tmp_path):
    code, out = main(["solve", "--out", str(tmp_path), "--set", "market.lam=2", "--set",
                      "market.mu=1", "--set", "market.c=2"]), tmp_path
    assert code == 0
    s = {r["key"]: r["value"] for r in read_csv(out / "summary.csv")[1]}
    assert int(s["k_star"]) == 0


def test_simulate_is_deterministic(tmp_path):
    extra = ["--seed", "3", "--set", "simulate.horizon=2e4", "--set", "simulate.warmup=500"]
    a = run(tmp_path, "simulate", *extra, sub="a")[1]
    b = run(tmp_path, "simulate", *extra, sub="b")[1]
    for name in ("simstats.csv", "cdf_compare.csv"):
        assert (a / name).read_text() == (b / name).read_text()


def test_fixed_policy(tmp_path):
    code, out = run(tmp_path, "simulate", "--set", "simulate.policy=fixed", "--set",
                    "simulate.cutoff=1", "--set", "simulate.horizon=1e3", "--set",
                    "simulate.warmup=10")
    assert code == 0
    rows = {r["key"]: r["value"] for r in read_csv(out / "simstats.csv")[1]}
    assert int(rows["admitted"]) == 0


@pytest.mark.parametrize("name, cutoff", [("scenario1", 2), ("scenario2", 3), ("scenario3", 4)])
def test_cpm_scenarios(tmp_path, name, cutoff):
    code, out = run(tmp_path, "cpm", "--set", f"cpm.scenario={name}")
    assert code == 0
    receipts = read_csv(out / "receipts.csv")[1]
    a = [r for r in receipts if r["winner"] == "A"][0]
    assert float(a["cutoff_price"]) == cutoff and a["censored"] == "0"


def test_cpm_script_file(tmp_path):
    script = tmp_path / "script.csv"
    script.write_text("time,kind,value,agent_id\n1,buyer,6,A\n2,buyer,3,B\n3,item,,\n4,item,,\n")
    code, out = run(tmp_path, "cpm", "--set", f"cpm.script={script}", "--set",
                    "cpm.thresholds=1,2,4")
    assert code == 0
    log = read_csv(out / "log.csv")[1]
    assert [(r["action"], r["agent"]) for r in log] == [("admit", "A"), ("admit", "B"),
                                                         ("serve", "A"), ("serve", "B")]
    bad = tmp_path / "bad.csv"
    bad.write_text("when,what\n1,buyer\n")
    assert run(tmp_path, "cpm", "--set", f"cpm.script={bad}")[0] == 1


def test_sweep_and_plots(tmp_path):
    code, out = run(tmp_path, "sweep", "--set", "sweep.param=c", "--set", "sweep.values=0.3,0.1")
    assert code == 0
    header, rows, comments = read_csv(out / "sweep.csv")
    assert [float(r["c"]) for r in rows] == [0.3, 0.1]
    assert all("FAIL" not in c for c in comments)
    plot = lambda sub: main(["plot", "--out", str(tmp_path / sub), "--set", "plot.kind=convergence",
                             "--set", f"plot.input={out / 'sweep.csv'}"])
    assert plot("p1") == 0 and plot("p2") == 0
    svg1 = (tmp_path / "p1" / "convergence.svg").read_text()
    assert svg1 == (tmp_path / "p2" / "convergence.svg").read_text()
    assert main(["plot", "--out", str(tmp_path), "--set", "plot.kind=thresholds",
                 "--set", f"plot.input={out / 'sweep.csv'}"]) == 1


def test_steady_and_cdf_plot(tmp_path):
    code, out = run(tmp_path, "steady")
    assert code == 0
    header = read_csv(out / "cdf.csv")[0]
    assert header == ["v", "P1", "P2"]
    assert main(["plot", "--out", str(tmp_path / "fig"), "--set", "plot.kind=cdf",
                 "--set", f"plot.input={out / 'cdf.csv'}"]) == 0
    assert os.path.getsize(tmp_path / "fig" / "cdf.svg") > 0


def test_certify(tmp_path):
    code, out = run(tmp_path, "certify")
    assert code == 0 and (out / "certificate.csv").exists()
