from __future__ import annotations

import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from allocbench import ConfigError, SimConfig, simulate
from allocbench.bench.checks import (CELL_CHECKS, GRID_CHECKS, Cell, CheckResult, choice_counts,
                                     check_baseline_ordering, check_choice_statistics,
                                     check_gap_theorem, check_retry_expectation,
                                     check_retry_tail, check_sampling_cost, run_checks)
from allocbench.bench.reference import first_divergence, reference_allocate
from allocbench.bench.runner import (CSV_COLUMNS, ExperimentIOError, ExperimentSpec,
                                     config_from_dict, run_experiment)
from allocbench.cli import main
from allocbench.core import report_from_arrays
from allocbench.rng import derive_seed


def _synthetic(loads, balls):
    loads = np.asarray(loads, dtype=float)
    return report_from_arrays(loads, np.full(loads.size, loads.mean()), {1: balls}, loads.sum())


# -------------------------------------------------------------------- oracle

def test_reference_refuses_large_instances():
    with pytest.raises(ValueError):
        reference_allocate(SimConfig(n=65, m=10))
    with pytest.raises(ValueError):
        reference_allocate(SimConfig(n=8, m=1001))


def test_reference_zero_balls_and_single_bin():
    assert reference_allocate(SimConfig(n=5, m=0)).trace == []
    ref = reference_allocate(SimConfig(n=1, m=7, d=1))
    assert all(rec["dest"] == 0 for rec in ref.trace) and ref.loads == [7]


def test_reference_accepts_plain_dict():
    cfg = SimConfig(n=4, m=8, seed=11)
    assert reference_allocate(cfg.to_dict()).trace == reference_allocate(cfg).trace


def test_first_divergence_positions():
    cfg = SimConfig(n=6, m=20, seed=3)
    ref = reference_allocate(cfg).trace
    main_trace = simulate(cfg, trace=True).trace
    assert first_divergence(main_trace, ref) is None
    tampered = [dict(r) for r in ref]
    tampered[12]["state_hash"] ^= 1
    assert first_divergence(main_trace, tampered) == 13
    assert first_divergence(main_trace, ref[:5]) == 6


@given(st.integers(1, 32), st.integers(0, 512), st.sampled_from(["numbered", "sampled"]),
       st.sampled_from(["unweighted", "weighted", "multidim", "parallel"]), st.data())
@settings(max_examples=30, deadline=None)
def test_oracle_equivalence_random(n, m, mode, variant, data):
    d = data.draw(st.integers(1, min(3, n)))
    kw = dict(n=n, m=m, d=d, mode=mode, variant=variant, seed=data.draw(st.integers(0, 2**64 - 1)))
    if variant == "parallel":
        kw["mode"] = "sampled"
    if variant == "weighted":
        kw["weight_model"] = {"w_star": 1.0, "k": 0.4,
                              "shape": data.draw(st.sampled_from(["uniform", "twopoint",
                                                                  "tnormal"])),
                              "param": 0.3}
    if variant == "multidim":
        D = data.draw(st.integers(1, 6))
        kw.update(dims=D, populated=data.draw(st.integers(1, D)))
    cfg = config_from_dict(kw)
    assert first_divergence(simulate(cfg, trace=True).trace,
                            reference_allocate(cfg).trace) is None


# -------------------------------------------------------------------- checks

def test_gap_check_balanced_passes():
    reports = {r: [_synthetic([r] * 10, 10 * r)] for r in (1, 10, 100, 1000)}
    res = check_gap_theorem(reports)
    assert res.passed and res.observed[0] == 0 and res.anchor == "Theorem 1"


def test_gap_check_log_growth_fails():
    reports = {}
    for r in (1, 10, 100, 1000):
        extra = math.log10(r) * 2
        reports[r] = [_synthetic([r + extra] + [r - extra / 9] * 9, 10 * r)]
    assert not check_gap_theorem(reports).passed


def test_gap_check_threshold_is_a_knob():
    reports = {1: [_synthetic([3, 0, 0], 3)]}
    assert not check_gap_theorem(reports, c0=1.5).passed
    assert check_gap_theorem(reports, c0=2.5).passed


def test_retry_expectation_targets():
    def rep(mean):
        # histogram with the requested mean draws per ball
        ones = int(round(1000 * (2 - mean)))
        return report_from_arrays(np.zeros(2), np.zeros(2), {1: ones, 2: 1000 - ones}, 0.0)

    assert check_retry_expectation([rep(4 / 3)], 2).passed
    assert check_retry_expectation([rep(1.016)], 6).passed
    assert "1.0159" in check_retry_expectation([rep(1.016)], 6).expected
    assert not check_retry_expectation([rep(1.6)], 2).passed


def test_retry_tail_geometric_passes_and_heavy_fails():
    d = 2
    good = {i: int(1e5 * (2 ** d - 1) / 2 ** (i * d)) for i in range(1, 8)}
    heavy = {1: 50_000, 2: 30_000, 3: 20_000}
    mk = lambda h: report_from_arrays(np.zeros(2), np.zeros(2), h, 0.0)  # noqa: E731
    assert check_retry_tail([mk(good)], d).passed
    assert not check_retry_tail([mk(heavy)], d).passed


def test_choice_statistics_full_choice_counts_everything():
    cfg = SimConfig(n=5, m=40, d=5, seed=2)
    trace = simulate(cfg, trace=True).trace
    assert list(choice_counts(trace, 5)) == [40] * 5
    res = check_choice_statistics([trace], 5, 5, 40)
    assert res.passed and res.observed[0] == 40


def test_choice_counts_match_direct_recount():
    cfg = SimConfig(n=30, m=900, seed=4)
    trace = simulate(cfg, trace=True).trace
    direct = np.zeros(30, dtype=int)
    for rec in trace:
        for b in rec.to_json()["candidates"][-1]:
            direct[b] += 1
    assert np.array_equal(choice_counts(trace, 30), direct)
    assert choice_counts(trace, 30).sum() == 900 * 2


def test_sampling_accounting_identity():
    n = 256
    cfg = SimConfig(n=n, m=1500, mode="sampled", seed=6)  # below n * log2 n: small polls only
    r = simulate(cfg)
    assert r.stats["messages"] == r.stats["sampling_decisions"] * math.ceil(math.log2(n))
    numbered = simulate(SimConfig(n=n, m=1500, seed=6))
    res = check_sampling_cost([numbered])
    assert res.passed and res.observed == 0


def test_baseline_ordering_check():
    assert check_baseline_ordering({"one": 4.0, "greedy": 2.0, "idea": 1.0}).passed
    assert not check_baseline_ordering({"one": 4.0, "greedy": 1.0, "idea": 1.0}).passed
    assert not check_baseline_ordering({"one": 4.0, "idea": 1.0}).passed


def test_anchor_coverage():
    cells = []
    for i, cfg in enumerate([
        SimConfig(n=64, m=640, seed=1),
        SimConfig(n=64, m=640, mode="sampled", seed=1),
        SimConfig(n=64, m=640, variant="weighted", weight_model={"w_star": 1, "k": 0.5}, seed=1),
        SimConfig(n=64, m=64, variant="multidim", dims=4, populated=2, seed=1),
        SimConfig(n=64, m=64, variant="parallel", mode="sampled", seed=1),
        SimConfig(n=64, m=640, algorithm="one", seed=1),
        SimConfig(n=64, m=640, algorithm="greedy", seed=1),
    ]):
        cells.append(Cell(i, cfg, [simulate(cfg, seed=s, trace=True) for s in range(2)]))
    results = run_checks([*CELL_CHECKS, *GRID_CHECKS], cells)
    anchors = {r.anchor for r in results}
    for needed in ("Lemma 1", "Lemma 3", "Lemma 5", "Lemma 6", "Lemma 7", "Observation 1",
                   "Theorem 1", "Theorem 2", "Theorem 3", "Appendix A", "Appendix B Lemma 11"):
        assert needed in anchors, needed
    assert all(isinstance(r, CheckResult) and r.line().startswith(("PASS", "FAIL"))
               for r in results)


def test_unknown_check_rejected():
    with pytest.raises(ValueError):
        run_checks(["bogus"], [])


# -------------------------------------------------------------------- runner

def test_empty_grid(tmp_path):
    spec = ExperimentSpec(base=SimConfig(n=10, m=10), sweep={"n": []}, checks=["zero_sum"])
    res = run_experiment(spec, tmp_path)
    assert res.rows == [] and res.exit_code == 0
    with open(tmp_path / "results.csv") as fh:
        assert list(csv.reader(fh)) == [list(CSV_COLUMNS)]


def test_one_cell_grid_rows_and_checks(tmp_path):
    spec = ExperimentSpec(base=SimConfig(n=50, m=500, seed=3), trials_per_cell=4,
                          checks=["zero_sum", "estimate_cap"])
    res = run_experiment(spec, tmp_path)
    assert len(res.rows) == 4 and [r["trial"] for r in res.rows] == [0, 1, 2, 3]
    assert [c.name for c in res.checks] == ["zero_sum", "estimate_cap"]
    with open(tmp_path / "results.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == list(CSV_COLUMNS)
    assert rows[0]["rounds"] == ""
    checks = json.loads((tmp_path / "checks.json").read_text())
    assert {c["name"] for c in checks} == {"zero_sum", "estimate_cap"}
    assert json.loads((tmp_path / "metadata.json").read_text())["gap_constant_c0"] == 4.0


def test_trial_seeds_replay():
    spec = ExperimentSpec(base=SimConfig(n=40, m=400, seed=9), trials_per_cell=3)
    res = run_experiment(spec)
    for row in res.rows:
        assert row["seed"] == derive_seed(9, row["cell_id"], row["trial"])
        assert simulate(SimConfig(n=40, m=400), seed=row["seed"]).report.gap == row["gap"]


def test_sweep_with_ratios_and_algorithms():
    spec = ExperimentSpec(base=SimConfig(n=20, m=20, beta=0.5, algorithm="beta"),
                          sweep={"ratio": [1, 10], "algorithm": ["idea", "beta"]})
    cells = spec.cells()
    assert [(c.m, c.algorithm.value) for c in cells] == [(20, "idea"), (20, "beta"),
                                                         (200, "idea"), (200, "beta")]
    assert cells[0].beta is None and cells[1].beta == 0.5


def test_json_format_and_traces(tmp_path):
    spec = ExperimentSpec(base=SimConfig(n=8, m=30, variant="parallel", mode="sampled"),
                          trials_per_cell=2)
    res = run_experiment(spec, tmp_path, fmt="json", trace=True)
    rows = json.loads((tmp_path / "results.json").read_text())
    assert len(rows) == 2 and rows[0]["rounds"] >= 1
    lines = (tmp_path / "traces" / "cell0_trial1.jsonl").read_text().splitlines()
    assert len(lines) == 30
    rec = json.loads(lines[0])
    assert list(rec)[:6] == ["ball", "retries", "candidates", "dest", "found_nonpositive",
                             "state_hash"]
    assert len(res.files["traces"]) == 2


def test_failing_check_gives_nonzero_exit():
    spec = ExperimentSpec(base=SimConfig(n=100, m=10_000, seed=1), checks=["gap_theorem"],
                          c0=0.0)
    assert run_experiment(spec).exit_code == 1


def test_io_error_names_path_and_cell(tmp_path):
    blocker = tmp_path / "traces"
    blocker.write_text("not a directory")
    spec = ExperimentSpec(base=SimConfig(n=4, m=4))
    with pytest.raises(ExperimentIOError, match=r"traces.*cell 0"):
        run_experiment(spec, tmp_path, trace=True)


def test_experiment_file_round_trip(tmp_path):
    spec = ExperimentSpec(base=SimConfig(n=16, m=64, d=3, seed=5), sweep={"n": [16, 32]},
                          trials_per_cell=2, checks=["zero_sum"])
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(spec.to_dict()))
    again = ExperimentSpec.from_file(path)
    assert again.cells() == spec.cells() and again.checks == ["zero_sum"]


@pytest.mark.parametrize("data", [{"sweep": {}}, {"base": {"n": 4, "m": 4, "bogus": 1}},
                                  {"base": {"n": 4, "m": 4}, "extra": 1},
                                  {"base": {"n": 4, "m": 4}, "sweep": {"n": 5}},
                                  {"base": {"n": 4, "m": 4}, "sweep": {"zz": [1]}},
                                  {"base": {"n": 4, "m": 4}, "trials_per_cell": 0}])
def test_bad_experiment_configs(data):
    with pytest.raises(ConfigError):
        ExperimentSpec.from_dict(data)


def test_config_from_dict_variants(tmp_path):
    assert config_from_dict({"n": 4, "m": 4, "weight_model": "uniform:2,1"}).variant.value == \
        "weighted"
    dims = tmp_path / "w.json"
    dims.write_text("[1, 2, 3]")
    cfg = config_from_dict({"n": 4, "m": 4, "dims": 3, "populated": 1,
                            "md_dist": f"custom:{dims}"})
    assert cfg.variant.value == "multidim" and cfg.md_weights == (1.0, 2.0, 3.0)
    with pytest.raises(ConfigError):
        config_from_dict({"n": 4, "m": 4, "dims": 3, "populated": 1, "md_dist": "zipf"})


# ----------------------------------------------------------------------- CLI

def test_cli_flags_run(tmp_path, capsys):
    code = main(["run", "--n", "100", "--m", "1000", "--trials", "2", "--seed", "4",
                 "--checks", "estimate_cap,nonpositive_abundance", "--out", str(tmp_path), "-q"])
    out = capsys.readouterr().out
    assert code == 0
    assert out.count("PASS") == 2
    with open(tmp_path / "results.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 2


def test_cli_config_file_and_overrides(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({"base": {"n": 32, "m": 64}, "sweep": {"d": [1, 2]},
                                "trials_per_cell": 1, "checks": []}))
    assert main(["run", "--config", str(path), "--m", "96", "--out", str(tmp_path / "o"),
                 "--format", "json", "-q"]) == 0
    rows = json.loads((tmp_path / "o" / "results.json").read_text())
    assert [(r["m"], r["d"]) for r in rows] == [(96, 1), (96, 2)]


def test_cli_variant_flags(tmp_path):
    assert main(["run", "--n", "64", "--m", "64", "--parallel", "--out", str(tmp_path / "p"),
                 "-q"]) == 0
    assert main(["run", "--n", "64", "--m", "64", "--dims", "4", "--populated", "2", "-q"]) == 0
    assert main(["run", "--n", "64", "--m", "640", "--weight-dist", "twopoint:1,0.5,0.5",
                 "--checks", "weighted_gap", "-q"]) == 0
    assert main(["run", "--n", "64", "--m", "640", "--algorithm", "greedy-retry",
                 "--retry-cap", "3", "-q"]) == 0


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["run", "--m", "10"]) == 2
    assert main(["run", "--n", "3", "--m", "10", "--d", "4"]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", "--n", "4", "--m", "4", "--out", str(blocker), "-q"]) == 3
    assert main(["run", "--n", "100", "--m", "10000", "--checks", "gap_theorem",
                 "--c0", "0", "-q"]) == 1
    assert main(["run", "--checks", "list"]) == 0
    assert "gap_theorem" in capsys.readouterr().out
