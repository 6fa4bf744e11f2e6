"""Drive the jitted kernels and turn their raw arrays into reports and traces."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .core import (Algorithm, GapReport, Mode, SimConfig, TraceRecord, Variant,
                   default_gamma_max, report_from_arrays)
from .rng import STREAM_COIN, Rng, derive_seed

_ALGO_CODES = {
    Algorithm.IDEA: K.ALGO_IDEA,
    Algorithm.ONE_CHOICE: K.ALGO_ONE,
    Algorithm.GREEDY_D: K.ALGO_GREEDY,
    Algorithm.ONE_PLUS_BETA: K.ALGO_BETA,
    Algorithm.GREEDY_D_RETRY: K.ALGO_GREEDY_RETRY,
}

_STAT_NAMES = {
    K.S_MESSAGES: "messages",
    K.S_GATED: "gated_increments",
    K.S_CREDITED: "hole_credits",
    K.S_BAND_TOTAL: "band_balls",
    K.S_BAND_SUCCESS: "band_successes",
    K.S_ZERO_SUM_VIOLATIONS: "zero_sum_violations",
    K.S_CAP_VIOLATIONS: "cap_violations",
    K.S_DECISIONS: "sampling_decisions",
}

_PSTAT_NAMES = {
    K.P_QUERY: "query",
    K.P_REPLY: "reply",
    K.P_C1: "c1",
    K.P_C2: "c2",
    K.P_INC: "inc",
    K.P_SAMPLING: "sampling",
    K.P_ONE_PER_BIN_VIOLATIONS: "one_per_bin_violations",
    K.P_STALLED_ROUNDS: "stalled_rounds",
}


@dataclass
class RunResult:
    config: SimConfig
    seed: int
    report: GapReport
    loads: np.ndarray
    est_avg: np.ndarray
    stats: dict
    boundary_sum_est_gap: np.ndarray
    boundary_nonpositive: np.ndarray
    trace: Optional[list[TraceRecord]] = None
    rounds: Optional[int] = None
    placed_per_round: Optional[np.ndarray] = None
    message_totals: dict = field(default_factory=dict)
    dim_loads: Optional[np.ndarray] = None
    md_gap: Optional[float] = None
    no_claim: bool = False
    dests: Optional[np.ndarray] = None


def small_sample_size(n: int) -> int:
    return default_gamma_max(n)


def execute_sequential(cfg: SimConfig, seed: Optional[int] = None,
                       weights: Optional[np.ndarray] = None, w_const: float = 1.0,
                       trace: bool = False, keep_dests: bool = False) -> RunResult:
    """Run one trial of a sequential allocator (IDEA or a baseline).

    ``weights`` (length ``m``) or ``w_const`` give the ball weights; the
    variant wrappers generate them from their own streams.  ``keep_dests``
    stores the destination of every ball without building trace records.
    """
    seed = cfg.seed if seed is None else seed
    n, m, d = cfg.n, cfg.m, cfg.d
    rng = Rng(seed)
    coin = Rng(derive_seed(seed, STREAM_COIN))
    retry_cap = cfg.effective_retry_cap if cfg.algorithm is Algorithm.GREEDY_D_RETRY else 1
    maxr = max(cfg.gamma_max + 1, retry_cap)
    width = max(d, 2)
    loads = np.zeros(n)
    esum = np.zeros(n)
    hist = np.zeros(maxr + 1, dtype=np.int64)
    stats = np.zeros(K.N_STATS, dtype=np.int64)
    nb = m // n
    bnd_sum = np.zeros(nb)
    bnd_nonpos = np.zeros(nb, dtype=np.int64)
    fill = trace or keep_dests
    tm = m if fill else 0
    t_dest = np.zeros(tm, dtype=np.int64)
    t_retries = np.zeros(tm, dtype=np.int64)
    t_found = np.zeros(tm, dtype=np.bool_)
    t_cands = np.zeros((tm, maxr, width), dtype=np.int64)
    t_hash = np.zeros(tm, dtype=np.uint64)
    t_net = np.zeros(tm)
    t_clean = np.zeros(tm, dtype=np.bool_)
    w_arr = np.zeros(0) if weights is None else np.ascontiguousarray(weights, dtype=np.float64)
    K.run_sequential_kernel(
        _ALGO_CODES[cfg.algorithm], n, m, d, cfg.gamma_max, retry_cap,
        cfg.beta if cfg.beta is not None else 0.0,
        cfg.mode is Mode.SAMPLED, cfg.catch_up,
        small_sample_size(n), cfg.sample_size_large, cfg.epsilon, cfg.w_star, w_arr, w_const,
        rng.state, coin.state, loads, esum, hist, stats, bnd_sum, bnd_nonpos,
        fill, t_dest, t_retries, t_found, t_cands, t_hash, t_net, t_clean)
    total_weight = float(w_arr.sum()) if weights is not None else w_const * m
    est = esum / d
    report = report_from_arrays(loads, est, dict(enumerate(hist.tolist())), total_weight,
                                messages=int(stats[K.S_MESSAGES]), unit=cfg.w_star)
    records = None
    if trace:
        records = [
            TraceRecord(
                ball=j + 1,
                retries=int(t_retries[j]),
                candidates=[[int(c) for c in t_cands[j, r] if c >= 0] for r in range(t_retries[j])],
                dest=int(t_dest[j]),
                found_nonpositive=bool(t_found[j]),
                state_hash=int(t_hash[j]),
                net_change=float(t_net[j]),
                ungated=bool(t_clean[j]),
            )
            for j in range(m)
        ]
    return RunResult(
        config=cfg, seed=seed, report=report, loads=loads, est_avg=est,
        stats={name: int(stats[i]) for i, name in _STAT_NAMES.items()},
        boundary_sum_est_gap=bnd_sum, boundary_nonpositive=bnd_nonpos, trace=records,
        dests=t_dest if fill else None,
    )


def execute_parallel(cfg: SimConfig, seed: Optional[int] = None, trace: bool = False) -> RunResult:
    """Run the round-synchronous protocol until every ball is placed."""
    seed = cfg.seed if seed is None else seed
    n, m, d = cfg.n, cfg.m, cfg.d
    rng = Rng(seed)
    maxr = cfg.gamma_max + 1
    loads = np.zeros(n)
    esum = np.zeros(n)
    pstats = np.zeros(K.N_PSTATS, dtype=np.int64)
    stats = np.zeros(K.N_STATS, dtype=np.int64)
    hist = np.zeros(maxr + 1, dtype=np.int64)
    per_round = np.zeros(max(m, 1), dtype=np.int64)
    tm = m if trace else 0
    t_ball = np.zeros(tm, dtype=np.int64)
    t_round = np.zeros(tm, dtype=np.int64)
    t_dest = np.zeros(tm, dtype=np.int64)
    t_retries = np.zeros(tm, dtype=np.int64)
    t_found = np.zeros(tm, dtype=np.bool_)
    t_cands = np.zeros((tm, maxr, d), dtype=np.int64)
    t_hash = np.zeros(tm, dtype=np.uint64)
    rounds = K.run_parallel_kernel(
        n, m, d, cfg.gamma_max, small_sample_size(n), cfg.sample_size_large, cfg.epsilon,
        rng.state, loads, esum, pstats, stats, hist, per_round,
        trace, t_ball, t_round, t_dest, t_retries, t_found, t_cands, t_hash)
    est = esum / d
    msgs = {name: int(pstats[i]) for i, name in _PSTAT_NAMES.items()}
    total_msgs = sum(msgs[k] for k in ("query", "reply", "c1", "c2", "inc", "sampling"))
    report = report_from_arrays(loads, est, dict(enumerate(hist.tolist())), float(m),
                                messages=total_msgs, rounds=int(rounds))
    records = None
    if trace:
        records = [
            TraceRecord(
                ball=int(t_ball[k]) + 1,
                retries=int(t_retries[k]),
                candidates=[[int(c) for c in t_cands[k, r]] for r in range(t_retries[k])],
                dest=int(t_dest[k]),
                found_nonpositive=bool(t_found[k]),
                state_hash=int(t_hash[k]),
                round=int(t_round[k]),
            )
            for k in range(m)
        ]
    return RunResult(
        config=cfg, seed=seed, report=report, loads=loads, est_avg=est,
        stats={name: int(stats[i]) for i, name in _STAT_NAMES.items()},
        boundary_sum_est_gap=np.zeros(0), boundary_nonpositive=np.zeros(0, dtype=np.int64),
        trace=records, rounds=int(rounds), placed_per_round=per_round[:rounds].copy(),
        message_totals=msgs,
    )


def simulate(cfg: SimConfig, seed: Optional[int] = None, trace: bool = False) -> RunResult:
    """Run one trial of any configuration, dispatching on its variant."""
    if cfg.variant is Variant.WEIGHTED:
        from .weighted import run_weighted
        return run_weighted(cfg, seed=seed, trace=trace)
    if cfg.variant is Variant.MULTIDIM:
        from .multidim import run_multidim
        return run_multidim(cfg, seed=seed, trace=trace)
    if cfg.variant is Variant.PARALLEL:
        return execute_parallel(cfg, seed=seed, trace=trace)
    return execute_sequential(cfg, seed=seed, trace=trace)
