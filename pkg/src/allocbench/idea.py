"""Sequential IDEA: place each ball in the candidate with the lowest
estimated gap, re-drawing candidates while none has a non-positive gap.

Two estimate-update policies:

- numbered: ball ``j`` tells its candidates ``ceil(j/n)``.  A candidate whose
  estimated average already exceeds that level skips the ``w/d`` increment.
  With ``catch_up`` (the default) a contacted bin whose estimate is below the
  last completed level ``ceil(j/n) - 1`` is first raised to it: the
  increments it missed while under-selected are credited back.  Without this
  credit an under-selected bin never recovers and the gap grows like
  ``sqrt(m/n)``.
- sampled: balls are anonymous.  When an increment would push a bin's
  estimate past an integer level ``alpha``, the bin polls ``N`` bins i.u.r.
  and keeps the increment only if their mean estimate is at least
  ``alpha - epsilon``; otherwise the increment is dropped.  ``N`` is
  ``ceil(log2 n)`` until ``n*ceil(log2 n)`` balls are placed, then a constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .core import (AllocationOutcome, BinState, ConfigError, GapReport, Mode, SimConfig,
                   TraceRecord, default_gamma_max)
from .engine import simulate
from .rng import Rng


@dataclass(frozen=True)
class EstimateUpdatePolicy:
    mode: Mode = Mode.NUMBERED
    sample_size_small: int = 1
    sample_size_large: int = 8
    epsilon: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.sample_size_small < 1 or self.sample_size_large < 1:
            raise ConfigError("sample sizes must be >= 1")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be > 0")

    @classmethod
    def for_n(cls, n: int, mode: Mode = Mode.NUMBERED, sample_size_large: int = 8,
              epsilon: float = 0.05) -> "EstimateUpdatePolicy":
        return cls(mode, default_gamma_max(n), sample_size_large, epsilon)

    def sample_size(self, n: int, balls_placed: int) -> int:
        return int(K.sample_size(n, balls_placed, self.sample_size_small, self.sample_size_large))


@dataclass
class SystemState:
    """Bin arrays for ball-at-a-time driving.

    ``esum`` holds ``d`` times each estimated average (see ``_kernels``).
    """

    n: int
    d: int
    w_star: float = 1.0
    loads: np.ndarray = None
    esum: np.ndarray = None
    balls_placed: int = 0
    messages_sent: int = 0
    _stats: np.ndarray = field(default=None, repr=False)
    _nonpos: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.loads is None:
            self.loads = np.zeros(self.n)
        if self.esum is None:
            self.esum = np.zeros(self.n)
        self._stats = np.zeros(K.N_STATS, dtype=np.int64)
        self._nonpos = np.zeros(1, dtype=np.int64)
        self._nonpos[0] = K.count_nonpositive(self.loads, self.esum, self.d, self.tol)

    @classmethod
    def from_bins(cls, bins: list[BinState], d: int, w_star: float = 1.0) -> "SystemState":
        return cls(len(bins), d, w_star,
                   np.array([b.load for b in bins], dtype=np.float64),
                   np.array([b.est_avg * d for b in bins], dtype=np.float64))

    @property
    def tol(self) -> float:
        return 1e-9 * self.d * self.w_star

    @property
    def bins(self) -> list[BinState]:
        return [BinState(float(l), float(e) / self.d) for l, e in zip(self.loads, self.esum)]

    @property
    def est_avg(self) -> np.ndarray:
        return self.esum / self.d

    @property
    def gated(self) -> int:
        return int(self._stats[K.S_GATED])

    def _sync_messages(self) -> None:
        self.messages_sent = int(self._stats[K.S_MESSAGES])


def _policy(cfg: SimConfig) -> EstimateUpdatePolicy:
    return EstimateUpdatePolicy.for_n(cfg.n, cfg.mode, cfg.sample_size_large, cfg.epsilon)


def allocate_ball(state: SystemState, ball_index: int, rng: Rng, cfg: SimConfig,
                  weight: float = 1.0) -> AllocationOutcome:
    """Place ball ``ball_index`` (1-based, must be ``balls_placed + 1``)."""
    if ball_index != state.balls_placed + 1:
        raise ValueError(f"expected ball {state.balls_placed + 1}, got {ball_index}")
    if state.n != cfg.n or state.d != cfg.d:
        raise ConfigError("state shape does not match config")
    policy = _policy(cfg)
    d = cfg.d
    cands = np.empty(max(d, 2), dtype=np.int64)
    keys = np.empty(d, dtype=np.float64)
    log = np.full((cfg.gamma_max + 1, max(d, 2)), -1, dtype=np.int64)
    dest, retries, found, _, _ = K.idea_ball(
        state.loads, state.esum, float(weight), state.w_star, ball_index, state.balls_placed,
        cfg.n, d, cfg.gamma_max, cfg.mode is Mode.SAMPLED, cfg.catch_up,
        policy.sample_size_small, policy.sample_size_large, policy.epsilon,
        rng.state, cands, keys, log, True, state._stats, state._nonpos)
    state.balls_placed += 1
    state._sync_messages()
    return AllocationOutcome(
        ball_index=ball_index,
        retries_used=int(retries),
        candidates=[[int(c) for c in log[r, :d]] for r in range(retries)],
        destination=int(dest),
        found_nonpositive=bool(found),
    )


def numbered_increment(state: SystemState, candidates, ball_index: int, d: int,
                       weight: float = 1.0) -> list[bool]:
    """Apply the numbered-mode estimate update to ``candidates``.

    A bin gains ``weight/d`` unless its estimate already exceeds
    ``ceil(ball_index/n) * w_star``.  Returns which bins were incremented.
    """
    if d != state.d:
        raise ConfigError("d does not match state")
    applied = []
    for c in candidates:
        applied.append(bool(K.apply_increment(
            state.loads, state.esum, int(c), float(weight), ball_index, state.balls_placed,
            state.n, d, state.w_star, False, 1, 1, 0.05, state.tol, np.zeros(4, dtype=np.uint64),
            state._stats, state._nonpos)))
    return applied


def sampled_increment_decision(state: SystemState, bin_index: int, rng: Rng,
                               policy: EstimateUpdatePolicy, weight: float = 1.0) -> bool:
    """Should ``bin_index`` accept a pending ``weight/d`` increment?

    Only an increment that crosses an integer level triggers a poll; any
    other increment is allowed without communication.
    """
    alpha = K.crossed_level(state.esum[bin_index], float(weight), state.d, state.w_star)
    if alpha <= 0.0:
        return True
    sn = policy.sample_size(state.n, state.balls_placed)
    ok = bool(K.sampled_decision(state.esum, alpha, state.n, state.d, state.w_star, sn,
                                 policy.epsilon, rng.state, state._stats))
    state._sync_messages()
    return ok


def run_sequential(cfg: SimConfig, trace: bool = False) -> tuple[GapReport, Optional[list[TraceRecord]]]:
    """Allocate all ``cfg.m`` balls for one trial seeded with ``cfg.seed``."""
    result = simulate(cfg, trace=trace)
    return result.report, result.trace
