"""Round-synchronous IDEA: ``m`` balls arrive together and are placed by a
two-way handshake in rounds.

One round:

1. every unplaced ball draws ``d`` candidates and queries their estimated
   gaps (Query, Reply), retrying like the sequential allocator while none is
   non-positive.  Replies quote round-start values;
2. the ball sends C1 to its minimum-gap candidate;
3. a bin that received C1s accepts one, uniformly among them, and answers C2;
4. accepted balls are placed and send INC to all ``d`` final candidates,
   which update their estimates with the sampled policy.

Rejected balls start over next round with fresh candidates.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .core import ConfigError, GapReport, SimConfig, Variant, report_from_arrays
from .engine import small_sample_size
from .rng import Rng

MESSAGE_KINDS = ("query", "reply", "c1", "c2", "inc", "sampling")
_PSTAT_INDEX = {"query": K.P_QUERY, "reply": K.P_REPLY, "c1": K.P_C1, "c2": K.P_C2,
                "inc": K.P_INC, "sampling": K.P_SAMPLING}


class MessageKind(str, enum.Enum):
    QUERY = "query"
    REPLY = "reply"
    C1 = "c1"
    C2 = "c2"
    INC = "inc"


@dataclass(frozen=True)
class RoundMessage:
    kind: MessageKind
    ball_id: int
    bin_id: int
    round: int
    est_gap: Optional[float] = None


@dataclass
class ParallelState:
    """Bins, the set of unplaced balls and per-kind message counters."""

    n: int
    m: int
    d: int
    gamma_max: int
    loads: np.ndarray = None
    esum: np.ndarray = None
    round: int = 0
    placed: int = 0
    pstats: np.ndarray = None
    stats: np.ndarray = None
    retry_hist: np.ndarray = None
    _unplaced: np.ndarray = field(default=None, repr=False)
    _remaining: int = 0

    def __post_init__(self):
        if self.loads is None:
            self.loads = np.zeros(self.n)
        if self.esum is None:
            self.esum = np.zeros(self.n)
        self.pstats = np.zeros(K.N_PSTATS, dtype=np.int64)
        self.stats = np.zeros(K.N_STATS, dtype=np.int64)
        self.retry_hist = np.zeros(self.gamma_max + 2, dtype=np.int64)
        self._unplaced = np.arange(self.m)
        self._remaining = self.m
        self._choice = np.empty(self.m, dtype=np.int64)
        self._final = np.empty((self.m, self.d), dtype=np.int64)
        self._tries = np.empty(self.m, dtype=np.int64)
        self._hit = np.zeros(self.m, dtype=np.bool_)
        self._accepted = np.zeros(self.m, dtype=np.bool_)
        self._rlog = np.empty((0, self.gamma_max + 1, self.d), dtype=np.int64)
        self._nonpos = np.zeros(1, dtype=np.int64)
        self._nonpos[0] = K.count_nonpositive(self.loads, self.esum, self.d, 1e-9 * self.d)

    @classmethod
    def for_config(cls, cfg: SimConfig) -> "ParallelState":
        return cls(cfg.n, cfg.m, cfg.d, cfg.gamma_max)

    @property
    def unplaced(self) -> set[int]:
        return {int(b) for b in self._unplaced[:self._remaining]}

    @property
    def message_totals(self) -> dict:
        return {k: int(self.pstats[i]) for k, i in _PSTAT_INDEX.items()}

    @property
    def destinations(self) -> dict:
        """Chosen bin of every ball placed so far (valid once placed)."""
        done = np.ones(self.m, dtype=bool)
        done[self._unplaced[:self._remaining]] = False
        return {int(b): int(self._choice[b]) for b in np.flatnonzero(done)}


def run_parallel_round(state: ParallelState, rng: Rng, cfg: SimConfig) -> tuple[set[int], dict]:
    """Run one round; returns the balls placed in it and that round's message counts."""
    if state._remaining == 0:
        raise ValueError("no unplaced balls")
    before = state.pstats.copy()
    loads_before = state.loads.copy()
    state.round += 1
    remaining, placed_now = K.parallel_round(
        state.n, state.d, state.gamma_max, small_sample_size(state.n), cfg.sample_size_large,
        cfg.epsilon, rng.state, state.loads, state.esum, state.pstats, state.stats,
        state.retry_hist, state._unplaced, state._remaining, state.placed, state._choice,
        state._final, state._tries, state._hit, state._accepted, state._rlog, False,
        state._nonpos)
    placed = {int(b) for b in np.flatnonzero(state._accepted)}
    state._accepted[:] = False
    state._remaining = int(remaining)
    state.placed += int(placed_now)
    if np.any(state.loads - loads_before > 1):
        raise AssertionError(f"round {state.round}: a bin accepted more than one ball")
    delta = {k: int(state.pstats[i] - before[i]) for k, i in _PSTAT_INDEX.items()}
    return placed, delta


def run_parallel(cfg: SimConfig) -> tuple[GapReport, int, dict]:
    """Run rounds until every ball is placed.

    Returns the final report, the number of rounds and per-kind message totals.
    """
    if cfg.variant is not Variant.PARALLEL:
        raise ConfigError("run_parallel needs the parallel variant")
    from .engine import execute_parallel

    result = execute_parallel(cfg)
    return result.report, result.rounds, result.message_totals


def report_for_state(state: ParallelState) -> GapReport:
    msgs = state.message_totals
    return report_from_arrays(state.loads, state.esum / state.d,
                              dict(enumerate(state.retry_hist.tolist())), float(state.placed),
                              messages=sum(msgs.values()), rounds=state.round)
