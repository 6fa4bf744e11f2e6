"""Multi-dimensional 0-1 balls.

A ball is a ``D``-dimensional 0-1 vector with ``f`` ones.  IDEA runs
unchanged on the scalar load (the sum over dimensions), so every ball
weighs ``f`` and estimates move by ``f/d``.  Per-dimension loads are
tracked on the side and only enter the reported ``md_gap``.

Populated dimensions come from their own stream
(``derive_seed(seed, STREAM_MD)``) and never influence placement.  Under
the uniform generator each of the ``C(D, f)`` subsets is equally likely;
a custom per-dimension weight vector is accepted as an input generator,
but its runs are marked ``no_claim``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .core import AllocationOutcome, ConfigError, SimConfig, Variant
from .engine import RunResult, execute_sequential
from .idea import SystemState, allocate_ball
from .rng import STREAM_MD, Rng, derive_seed, draw_subset, uniform_float


@dataclass(frozen=True)
class MdBall:
    D: int
    populated: tuple

    def __post_init__(self):
        if len(set(self.populated)) != len(self.populated):
            raise ValueError("populated dimensions must be distinct")
        if not all(0 <= q < self.D for q in self.populated):
            raise ValueError("populated dimension out of range")

    @property
    def f(self) -> int:
        return len(self.populated)


@dataclass
class MdBinState:
    dim_loads: list = field(default_factory=list)
    est_avg: float = 0.0

    @property
    def scalar_load(self) -> int:
        return sum(self.dim_loads)


@njit(cache=True)
def _weighted_subset(s, probs, f, out):
    # successive sampling without replacement, proportional to probs
    taken = np.zeros(probs.shape[0], dtype=np.bool_)
    for t in range(f):
        total = 0.0
        for q in range(probs.shape[0]):
            if not taken[q]:
                total += probs[q]
        x = uniform_float(s) * total
        pick = -1
        for q in range(probs.shape[0]):
            if taken[q] or probs[q] <= 0.0:
                continue
            pick = q
            x -= probs[q]
            if x < 0.0:
                break
        taken[pick] = True
        out[t] = pick


@njit(cache=True)
def _place_dims(s, dests, D, f, probs, dim_loads):
    sub = np.empty(f, dtype=np.int64)
    for j in range(dests.shape[0]):
        if probs.shape[0] == 0:
            draw_subset(s, D, f, sub)
        else:
            _weighted_subset(s, probs, f, sub)
        for t in range(f):
            dim_loads[dests[j], sub[t]] += 1


def generate_md_ball(D: int, f: int, rng: Rng, weights: Optional[Sequence[float]] = None) -> MdBall:
    """A ball with ``f`` populated dimensions out of ``D``.

    Without ``weights`` the subset is uniform over all ``C(D, f)`` choices.
    """
    if not 1 <= f <= D:
        raise ConfigError(f"need 1 <= f <= D, got f={f}, D={D}")
    out = np.empty(f, dtype=np.int64)
    if weights is None:
        draw_subset(rng.state, D, f, out)
    else:
        probs = np.asarray(weights, dtype=np.float64)
        if probs.shape != (D,) or probs.min() < 0 or np.count_nonzero(probs) < f:
            raise ConfigError("weights need D nonnegative entries with at least f positive")
        _weighted_subset(rng.state, probs, f, out)
    return MdBall(D, tuple(int(q) for q in out))


def load_md_weights(path: str | Path) -> tuple:
    """Read a custom dimension distribution: a JSON list, or ``{"weights": [...]}``."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read dimension weights from {path}: {exc}") from None
    if isinstance(data, dict):
        data = data.get("weights")
    if not isinstance(data, list) or not data:
        raise ConfigError(f"{path}: expected a non-empty list of dimension weights")
    return tuple(float(x) for x in data)


def md_gap(bins: Sequence[MdBinState] | np.ndarray, balls_thrown: int, D: int, f: int,
           dim_avgs: Optional[Sequence[float]] = None) -> float:
    """Largest per-dimension excess of any bin over that dimension's average.

    The average of dimension ``a`` is ``balls_thrown * f / (n * D)`` unless
    ``dim_avgs`` supplies one per dimension.
    """
    loads = np.asarray([b.dim_loads for b in bins] if not isinstance(bins, np.ndarray) else bins,
                       dtype=np.float64)
    if loads.size == 0 or balls_thrown == 0:
        return 0.0
    n = loads.shape[0]
    if loads.shape[1] != D:
        raise ValueError(f"bins have {loads.shape[1]} dimensions, expected {D}")
    avg = (np.full(D, balls_thrown * f / (n * D)) if dim_avgs is None
           else np.asarray(dim_avgs, dtype=np.float64))
    return float(np.max(loads.max(axis=0) - avg))


@dataclass
class MdSystemState(SystemState):
    """Scalar IDEA state plus an ``n x D`` matrix of per-dimension loads."""

    dims: int = 1
    dim_loads: np.ndarray = None

    def __post_init__(self):
        super().__post_init__()
        if self.dim_loads is None:
            self.dim_loads = np.zeros((self.n, self.dims), dtype=np.int64)

    @classmethod
    def for_config(cls, cfg: SimConfig) -> "MdSystemState":
        return cls(n=cfg.n, d=cfg.d, w_star=float(cfg.populated), dims=cfg.dims)

    @property
    def md_bins(self) -> list[MdBinState]:
        return [MdBinState([int(x) for x in row], float(e) / self.d)
                for row, e in zip(self.dim_loads, self.esum)]


def allocate_md_ball(state: MdSystemState, ball: MdBall, rng: Rng,
                     cfg: SimConfig) -> AllocationOutcome:
    """Place ``ball`` by IDEA on scalar loads, then record its dimensions."""
    if cfg.variant is not Variant.MULTIDIM:
        raise ConfigError("allocate_md_ball needs the multidim variant")
    if ball.D != cfg.dims or ball.f != cfg.populated:
        raise ConfigError("ball shape does not match config")
    out = allocate_ball(state, state.balls_placed + 1, rng, cfg, weight=float(ball.f))
    for q in ball.populated:
        state.dim_loads[out.destination, q] += 1
    return out


def run_multidim(cfg: SimConfig, seed: Optional[int] = None, trace: bool = False) -> RunResult:
    if cfg.variant is not Variant.MULTIDIM:
        raise ConfigError("run_multidim needs the multidim variant")
    seed = cfg.seed if seed is None else seed
    f, D = cfg.populated, cfg.dims
    result = execute_sequential(cfg, seed=seed, w_const=float(f), trace=trace, keep_dests=True)
    probs = (np.zeros(0) if cfg.md_weights is None
             else np.asarray(cfg.md_weights, dtype=np.float64))
    dim_loads = np.zeros((cfg.n, D), dtype=np.int64)
    _place_dims(Rng(derive_seed(seed, STREAM_MD)).state, result.dests, D, f, probs, dim_loads)
    no_claim = cfg.md_weights is not None
    # without a uniform generator there is no analytic average; use the realised one
    dim_avgs = dim_loads.sum(axis=0) / cfg.n if no_claim else None
    result.dim_loads = dim_loads
    result.md_gap = md_gap(dim_loads, cfg.m, D, f, dim_avgs)
    result.no_claim = no_claim
    return result
