"""Invariant and concentration checks over simulation results.

Each check turns a batch of runs into one :class:`CheckResult` carrying the
observed statistic, the band it was compared against and the label of the
claim it tests.  Cell checks look at the trials of one grid cell; grid
checks (``gap_theorem``, ``baseline_ordering``) compare cells.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..core import Algorithm, GapReport, Mode, SimConfig, Variant
from ..engine import RunResult

DEFAULT_C0 = 4.0
DEFAULT_SPREAD = 1.5


@dataclass
class CheckResult:
    name: str
    passed: bool
    observed: object
    expected: str
    anchor: str
    cell_id: Optional[int] = None
    detail: str = ""

    def to_dict(self) -> dict:
        out = asdict(self)
        if isinstance(self.observed, float):
            out["observed"] = round(self.observed, 6)
        return out

    def line(self) -> str:
        cell = f" cell={self.cell_id}" if self.cell_id is not None else ""
        return (f"{'PASS' if self.passed else 'FAIL'} {self.name}{cell} [{self.anchor}] "
                f"observed={_fmt(self.observed)} expected {self.expected}"
                + (f" ({self.detail})" if self.detail else ""))


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.4g}"
    if isinstance(x, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in x) + "]"
    return str(x)


def _se(xs: Sequence[float]) -> float:
    return float(np.std(xs, ddof=1) / math.sqrt(len(xs))) if len(xs) > 1 else 0.0


@dataclass
class Cell:
    """One grid cell: its config and the runs of every trial."""

    cell_id: int
    config: SimConfig
    runs: list[RunResult]

    @property
    def reports(self) -> list[GapReport]:
        return [r.report for r in self.runs]


# ---------------------------------------------------------------- cell checks

def choice_counts(trace, n: int) -> np.ndarray:
    """How often each bin was in a ball's final candidate set."""
    counts = np.zeros(n, dtype=np.int64)
    for rec in trace:
        for b in (rec.candidates[-1] if hasattr(rec, "candidates") else rec["candidates"][-1]):
            counts[b] += 1
    return counts


def check_choice_statistics(traces: Sequence, n: int, d: int, m: int,
                            cell_id: Optional[int] = None) -> CheckResult:
    """Per-bin selection counts: mean ``md/n`` and maximum at most ``(md/n) log2 n``."""
    expect = m * d / n
    per_trial = [choice_counts(t, n) for t in traces]
    means = [float(c.mean()) for c in per_trial]
    worst = max(int(c.max()) for c in per_trial)
    band = 3 * max(_se(np.concatenate(per_trial).tolist()), 1e-12)
    limit = expect * max(math.log2(n), 1.0)
    mean = float(np.mean(means))
    ok = abs(mean - expect) <= band and worst <= limit
    return CheckResult("choice_statistics", ok, [mean, worst],
                       f"mean {expect:g} +/- {band:.3g}, max <= {limit:.4g}", "Lemma 1", cell_id)


def check_retry_expectation(reports: Sequence[GapReport], d: int, tol: float = 0.15,
                            cell_id: Optional[int] = None) -> CheckResult:
    """Mean draws per ball near ``1 + 1/(2^d - 1)`` and always below 2."""
    target = 1 + 1 / (2 ** d - 1)
    balls = sum(r.balls for r in reports)
    mean = sum(r.mean_retries * r.balls for r in reports) / balls if balls else 0.0
    worst = max(r.mean_retries for r in reports)
    ok = abs(mean - target) <= tol and worst < 2
    return CheckResult("retry_expectation", ok, mean,
                       f"{target:.4f} +/- {tol} and every trial < 2", "Lemma 7", cell_id,
                       f"max trial mean {worst:.4f}")


def check_retry_tail(reports: Sequence[GapReport], d: int,
                     cell_id: Optional[int] = None) -> CheckResult:
    """Retry counts are no heavier-tailed than ``P(draws > i) = 2^(-i d)``.

    That survival function is the one implied by ``p_i = (2^d - 1)/2^(i d)``;
    each empirical tail value may exceed it by three standard errors.
    """
    hist: dict[int, int] = {}
    for r in reports:
        for k, v in r.retry_histogram.items():
            hist[k] = hist.get(k, 0) + v
    total = sum(hist.values())
    if total == 0:
        return CheckResult("retry_tail", True, [], "no balls", "Lemma 7", cell_id)
    worst_excess = -1.0
    tails = []
    for i in range(1, max(hist) + 1):
        p = sum(v for k, v in hist.items() if k > i) / total
        model = 2.0 ** (-i * d)
        se = math.sqrt(max(model * (1 - model), 1e-300) / total)
        tails.append(p)
        worst_excess = max(worst_excess, (p - model) / se if se > 0 else 0.0)
    return CheckResult("retry_tail", worst_excess <= 3.0, tails,
                       "P(draws > i) <= 2^(-i d) + 3 SE", "Lemma 7", cell_id,
                       f"largest excess {worst_excess:.2f} SE")


def check_sampling_cost(runs: Sequence[RunResult], c: float = 4.0,
                        cell_id: Optional[int] = None) -> CheckResult:
    """Sampling messages of the sampled policy stay within ``c * n * d``."""
    cfg = runs[0].config
    limit = c * cfg.n * cfg.d
    worst = max(r.stats["messages"] for r in runs)
    if cfg.mode is Mode.NUMBERED and cfg.variant is not Variant.PARALLEL:
        return CheckResult("sampling_cost", worst == 0, worst, "0 in numbered mode",
                           "Appendix A", cell_id)
    return CheckResult("sampling_cost", worst <= limit, worst, f"<= {limit:g}", "Appendix A",
                       cell_id, f"m={cfg.m}")


def check_estimate_fidelity(runs: Sequence[RunResult], mean_tol: float = 0.05,
                            var_rel: float = 0.20, cell_id: Optional[int] = None) -> CheckResult:
    """Mean estimate near the true average; estimate variance near ``1/d - 1/n``.

    The variance target is stated for ``m = n`` unit balls.
    """
    cfg = runs[0].config
    means = [float(np.mean(r.est_avg)) / cfg.w_star for r in runs]
    avg = cfg.m / cfg.n
    var = float(np.mean([r.report.est_avg_variance for r in runs])) / cfg.w_star ** 2
    target = 1 / cfg.d - 1 / cfg.n
    mean = float(np.mean(means))
    ok = abs(mean - avg) <= mean_tol * max(avg, 1) and abs(var - target) <= var_rel * target
    return CheckResult("estimate_fidelity", ok, [mean, var],
                       f"mean {avg:g} +/- {mean_tol * max(avg, 1):g}, "
                       f"variance {target:.4g} +/- {100 * var_rel:.0f}%", "Observation 1", cell_id)


def check_zero_sum(runs: Sequence[RunResult], frac: float = 0.01,
                   cell_id: Optional[int] = None) -> CheckResult:
    """Ungated balls leave ``sum(L - A)`` unchanged; at multiples of ``n`` it stays near 0."""
    cfg = runs[0].config
    violations = sum(r.stats["zero_sum_violations"] for r in runs)
    drift = max((float(np.max(np.abs(r.boundary_sum_est_gap))) / cfg.w_star
                 if r.boundary_sum_est_gap.size else 0.0) for r in runs)
    limit = frac * cfg.n
    ok = violations == 0 and drift <= limit
    return CheckResult("zero_sum", ok, [violations, drift],
                       f"0 per-ball violations and |sum| <= {limit:g} at multiples of n",
                       "Lemma 3", cell_id)


def check_weighted_zero_sum(runs: Sequence[RunResult], cell_id: Optional[int] = None) -> CheckResult:
    """Per-ball zero sum for weighted balls: ``W(1 - 1/d) + (d-1)(-W/d) = 0``."""
    violations = sum(r.stats["zero_sum_violations"] for r in runs)
    return CheckResult("weighted_zero_sum", violations == 0, violations,
                       "0 per-ball violations", "Appendix B Lemma 11", cell_id)


def check_nonpositive_abundance(runs: Sequence[RunResult], cell_id: Optional[int] = None) -> CheckResult:
    """At every multiple of ``n`` balls at least ``n/(2d)`` bins have non-positive estimated gap."""
    cfg = runs[0].config
    fracs = [float(r.boundary_nonpositive.min()) / cfg.n for r in runs
             if r.boundary_nonpositive.size]
    low = min(fracs) if fracs else 1.0
    limit = 1 / (2 * cfg.d)
    return CheckResult("nonpositive_abundance", low >= limit, low, f">= {limit:g}", "Lemma 5",
                       cell_id)


def check_retry_success(runs: Sequence[RunResult], threshold: float = 0.90,
                        cell_id: Optional[int] = None) -> CheckResult:
    """Balls arriving while 45-55% of bins are non-positive succeed within two draws."""
    total = sum(r.stats["band_balls"] for r in runs)
    success = sum(r.stats["band_successes"] for r in runs)
    if total == 0:
        return CheckResult("retry_success", False, None, f">= {threshold}", "Lemma 6", cell_id,
                           "no ball arrived with a non-positive fraction in [0.45, 0.55]")
    rate = success / total
    return CheckResult("retry_success", rate >= threshold, rate, f">= {threshold}", "Lemma 6",
                       cell_id, f"{total} balls in band")


def check_cap(runs: Sequence[RunResult], cell_id: Optional[int] = None) -> CheckResult:
    """Numbered mode: no estimate exceeds the cap by more than one increment."""
    violations = sum(r.stats["cap_violations"] for r in runs)
    return CheckResult("estimate_cap", violations == 0, violations,
                       "0 estimates above ceil(j/n) W* + W/d", "Lemma 2", cell_id)


def check_weighted_gap(runs: Sequence[RunResult], factor: float = 5.0,
                       cell_id: Optional[int] = None) -> CheckResult:
    """Weighted gap at most ``factor * (W* + k)`` in every trial."""
    wm = runs[0].config.weight_model
    limit = factor * (wm.w_star + wm.k)
    worst = max(r.report.gap for r in runs)
    return CheckResult("weighted_gap", worst <= limit, worst, f"<= {limit:g} in every trial",
                       "Theorem 2", cell_id)


def check_md_gap(runs: Sequence[RunResult], limit: float = 3.0, share: float = 0.95,
                 cell_id: Optional[int] = None) -> CheckResult:
    """Per-dimension gap at most ``limit`` in at least ``share`` of trials."""
    gaps = [r.md_gap for r in runs]
    frac = sum(1 for g in gaps if g <= limit) / len(gaps)
    no_claim = any(r.no_claim for r in runs)
    return CheckResult("md_gap", frac >= share, frac,
                       f">= {share:g} of trials with md_gap <= {limit:g}",
                       "Theorem (multidimensional)", cell_id,
                       f"max {max(gaps):.4g}" + ("; non-uniform dimensions, no claim" if no_claim else ""))


def check_parallel_rounds(runs: Sequence[RunResult], gap_limit: float = 4.0,
                          cell_id: Optional[int] = None) -> CheckResult:
    """Mean rounds at most ``3 log2 log2 n + 5``; one ball per bin per round; no stall."""
    n = runs[0].config.n
    limit = 3 * math.log2(max(math.log2(n), 1.0)) + 5 if n > 1 else 5.0
    mean = float(np.mean([r.rounds for r in runs]))
    per_bin = sum(r.message_totals.get("one_per_bin_violations", 0) for r in runs)
    stalls = sum(r.message_totals.get("stalled_rounds", 0) for r in runs)
    unplaced = sum(1 for r in runs if r.report.balls != r.config.m)
    worst_gap = max(r.report.gap for r in runs)
    ok = mean <= limit and per_bin == 0 and stalls == 0 and unplaced == 0 and worst_gap <= gap_limit
    return CheckResult("parallel_rounds", ok, [mean, worst_gap],
                       f"mean rounds <= {limit:.3g}, gap <= {gap_limit:g}, "
                       "one ball per bin per round, no stalls", "Theorem 3", cell_id,
                       f"per-bin violations {per_bin}, stalls {stalls}")


# ---------------------------------------------------------------- grid checks

def check_gap_theorem(reports_by_ratio: dict, c0: float = DEFAULT_C0,
                      spread: float = DEFAULT_SPREAD) -> CheckResult:
    """Gap bounded by one constant ``c0`` for every ``m/n`` and mean gaps not drifting.

    ``reports_by_ratio`` maps ``m/n`` to the trial reports at that ratio.
    """
    if not reports_by_ratio:
        return CheckResult("gap_theorem", True, [], "no cells", "Theorem 1")
    worst = max(r.gap for rs in reports_by_ratio.values() for r in rs)
    means = {k: float(np.mean([r.gap for r in rs])) for k, rs in sorted(reports_by_ratio.items())}
    drift = max(means.values()) - min(means.values())
    ok = worst <= c0 and drift <= spread
    return CheckResult("gap_theorem", ok, [worst, drift],
                       f"max gap <= {c0:g} (acceptance constant), mean spread <= {spread:g}",
                       "Theorem 1", None,
                       "mean gap by m/n: " + ", ".join(f"{k:g}:{v:.3g}" for k, v in means.items()))


def check_baseline_ordering(mean_gaps: dict) -> CheckResult:
    """Strict ordering of mean gaps: one choice > greedy-d > IDEA."""
    order = [Algorithm.ONE_CHOICE.value, Algorithm.GREEDY_D.value, Algorithm.IDEA.value]
    vals = [mean_gaps.get(a) for a in order]
    ok = None not in vals and vals[0] > vals[1] > vals[2]
    return CheckResult("baseline_ordering", bool(ok), vals, "one > greedy > idea",
                       "Baseline bounds")


# ---------------------------------------------------------------- registry

CELL_CHECKS: dict[str, Callable[[Cell], CheckResult]] = {
    "retry_expectation": lambda c: check_retry_expectation(c.reports, c.config.d, cell_id=c.cell_id),
    "retry_tail": lambda c: check_retry_tail(c.reports, c.config.d, cell_id=c.cell_id),
    "sampling_cost": lambda c: check_sampling_cost(c.runs, cell_id=c.cell_id),
    "estimate_fidelity": lambda c: check_estimate_fidelity(c.runs, cell_id=c.cell_id),
    "zero_sum": lambda c: check_zero_sum(c.runs, cell_id=c.cell_id),
    "weighted_zero_sum": lambda c: check_weighted_zero_sum(c.runs, cell_id=c.cell_id),
    "nonpositive_abundance": lambda c: check_nonpositive_abundance(c.runs, cell_id=c.cell_id),
    "retry_success": lambda c: check_retry_success(c.runs, cell_id=c.cell_id),
    "estimate_cap": lambda c: check_cap(c.runs, cell_id=c.cell_id),
    "weighted_gap": lambda c: check_weighted_gap(c.runs, cell_id=c.cell_id),
    "md_gap": lambda c: check_md_gap(c.runs, cell_id=c.cell_id),
    "parallel_rounds": lambda c: check_parallel_rounds(c.runs, cell_id=c.cell_id),
    "choice_statistics": lambda c: check_choice_statistics(
        [r.trace for r in c.runs], c.config.n, c.config.d, c.config.m, cell_id=c.cell_id),
}

GRID_CHECKS = ("gap_theorem", "baseline_ordering")

# checks that need per-ball trace records
NEEDS_TRACE = {"choice_statistics"}


def _applies(name: str, cfg: SimConfig) -> bool:
    idea = cfg.algorithm is Algorithm.IDEA
    numbered = cfg.mode is Mode.NUMBERED and cfg.variant is not Variant.PARALLEL
    return {
        "weighted_gap": cfg.variant is Variant.WEIGHTED,
        "weighted_zero_sum": cfg.variant is Variant.WEIGHTED and numbered,
        "md_gap": cfg.variant is Variant.MULTIDIM,
        "parallel_rounds": cfg.variant is Variant.PARALLEL,
        "zero_sum": idea and numbered,
        "estimate_cap": idea and numbered,
        "estimate_fidelity": idea,
        "nonpositive_abundance": idea and cfg.variant is not Variant.PARALLEL and cfg.m >= cfg.n,
        "retry_success": idea and cfg.variant is not Variant.PARALLEL,
        "retry_expectation": idea,
        "retry_tail": idea,
        "choice_statistics": idea,
        "sampling_cost": idea,
    }.get(name, True)


def run_checks(names: Sequence[str], cells: Sequence[Cell], c0: float = DEFAULT_C0,
               spread: float = DEFAULT_SPREAD) -> list[CheckResult]:
    """Evaluate every enabled check: cell checks once per applicable cell, grid checks once."""
    unknown = [n for n in names if n not in CELL_CHECKS and n not in GRID_CHECKS]
    if unknown:
        raise ValueError(f"unknown checks: {', '.join(unknown)}; "
                         f"available: {', '.join(sorted([*CELL_CHECKS, *GRID_CHECKS]))}")
    out: list[CheckResult] = []
    for name in names:
        if name == "gap_theorem":
            by_ratio: dict = {}
            for c in cells:
                if c.config.algorithm is Algorithm.IDEA and c.config.m > 0:
                    by_ratio.setdefault(c.config.m / c.config.n, []).extend(c.reports)
            out.append(check_gap_theorem(by_ratio, c0, spread))
        elif name == "baseline_ordering":
            gaps: dict = {}
            for c in cells:
                gaps.setdefault(c.config.algorithm.value, []).extend(r.gap for r in c.reports)
            out.append(check_baseline_ordering({k: float(np.mean(v)) for k, v in gaps.items()}))
        else:
            for c in cells:
                if c.runs and _applies(name, c.config):
                    out.append(CELL_CHECKS[name](c))
    return out
