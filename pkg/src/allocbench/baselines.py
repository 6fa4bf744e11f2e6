"""Load-only allocators used as comparison points.

They share the candidate stream with IDEA: a ball's ``d`` candidates come
from the same ``draw_subset`` call, and ties on the minimum load are broken
with one ``uniform_int`` only when several bins share it.  The
one-plus-beta coin is drawn from a separate stream
(``derive_seed(seed, STREAM_COIN)``), so with the same seed it uses the
same candidate draws as greedy-2 whenever the coin selects two choices.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels as K
from .core import (Algorithm, AllocationOutcome, ConfigError, GapReport, SimConfig,
                   TraceRecord)
from .engine import simulate
from .rng import Rng


class BaselineKind(str, enum.Enum):
    ONE_CHOICE = "one"
    GREEDY_D = "greedy"
    ONE_PLUS_BETA = "beta"
    GREEDY_D_RETRY = "greedy-retry"

    @property
    def algorithm(self) -> Algorithm:
        return Algorithm(self.value)


@dataclass(frozen=True)
class Baseline:
    kind: BaselineKind
    beta: Optional[float] = None
    retry_cap: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", BaselineKind(self.kind))
        if (self.kind is BaselineKind.ONE_PLUS_BETA) != (self.beta is not None):
            raise ConfigError("beta is required for one-plus-beta and only there")
        if self.beta is not None and not 0 < self.beta < 1:
            raise ConfigError(f"beta must be in (0,1), got {self.beta}")
        if self.retry_cap is not None and self.retry_cap < 1:
            raise ConfigError("retry_cap must be >= 1")

    def config(self, n: int, m: int, d: int = 2, seed: int = 0, **extra) -> SimConfig:
        return SimConfig(n=n, m=m, d=d, seed=seed, algorithm=self.kind.algorithm,
                         beta=self.beta, retry_cap=self.retry_cap, **extra)


def _ball(state, algo: int, rng: Rng, d: int, retry_cap: int = 1, beta: float = 0.0,
          coin_rng: Optional[Rng] = None) -> AllocationOutcome:
    n = state.n
    width = max(d, 2)
    cands = np.empty(width, dtype=np.int64)
    keys = np.empty(retry_cap * width, dtype=np.float64)
    seen = np.empty(retry_cap * width, dtype=np.int64)
    log = np.full((retry_cap, width), -1, dtype=np.int64)
    coin = (coin_rng if coin_rng is not None else rng).state
    dest, retries = K.baseline_ball(algo, state.loads, 1.0, float(state.loads.sum()), n, d,
                                    retry_cap, beta, rng.state,
                                    coin, cands, keys, seen, log, True)
    state.balls_placed += 1
    return AllocationOutcome(
        ball_index=state.balls_placed,
        retries_used=int(retries),
        candidates=[[int(c) for c in log[r] if c >= 0] for r in range(retries)],
        destination=int(dest),
        found_nonpositive=False,
    )


def one_choice_allocate(state, rng: Rng) -> AllocationOutcome:
    """One uniform bin."""
    return _ball(state, K.ALGO_ONE, rng, 1)


def greedy_d_allocate(state, rng: Rng, d: int) -> AllocationOutcome:
    """Least loaded of ``d`` distinct uniform bins."""
    if not 1 <= d <= state.n:
        raise ConfigError(f"need 1 <= d <= n, got d={d}")
    return _ball(state, K.ALGO_GREEDY, rng, d)


def one_plus_beta_allocate(state, rng: Rng, beta: float,
                           coin_rng: Optional[Rng] = None) -> AllocationOutcome:
    """Greedy-2 with probability ``beta``, one choice otherwise."""
    if not 0 < beta < 1:
        raise ConfigError(f"beta must be in (0,1), got {beta}")
    return _ball(state, K.ALGO_BETA, rng, 2 if state.n >= 2 else 1, beta=beta, coin_rng=coin_rng)


def greedy_d_retry_allocate(state, rng: Rng, d: int, retry_cap: int) -> AllocationOutcome:
    """Draw candidate sets until one holds a bin whose load is at most the
    current batch level ``ceil(j / n)`` (at most ``retry_cap`` sets), then
    take the least loaded bin seen."""
    if retry_cap < 1:
        raise ConfigError("retry_cap must be >= 1")
    return _ball(state, K.ALGO_GREEDY_RETRY, rng, d, retry_cap=retry_cap)


def run_baseline(cfg: SimConfig, trace: bool = False) -> tuple[GapReport, Optional[list[TraceRecord]]]:
    if cfg.algorithm is Algorithm.IDEA:
        raise ConfigError("run_baseline expects a baseline algorithm")
    result = simulate(cfg, trace=trace)
    return result.report, result.trace
