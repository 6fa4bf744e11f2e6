"""Weighted balls: each ball carries a weight from a bounded distribution
with mean ``w_star`` and IDEA's bookkeeping moves by ``W/d`` instead of
``1/d``.  In numbered mode the cap level for ball ``j`` is
``ceil(j/n) * w_star``.

All weights of a trial are drawn up front from their own stream
(``derive_seed(seed, STREAM_WEIGHTS)``), so the candidate and tie-break
stream is consumed exactly as in the unweighted allocator.
"""

from __future__ import annotations

import re
from typing import Optional

import numpy as np
from numba import njit

from .core import (AllocationOutcome, ConfigError, SimConfig, Variant, WeightModel,
                   WeightShape)
from .engine import RunResult, execute_sequential
from .rng import STREAM_WEIGHTS, Rng, derive_seed, standard_normal, uniform_float

_SHAPE_CODES = {WeightShape.UNIFORM: 0, WeightShape.TWO_POINT: 1, WeightShape.TRUNCATED_NORMAL: 2}


@njit(cache=True)
def _draw(s, shape, w_star, k, param):
    if k == 0.0:
        return w_star
    if shape == 0:
        return w_star + k * (2.0 * uniform_float(s) - 1.0)
    if shape == 1:
        # P(high) = p; the short side sits at distance k so the mean stays w_star
        p = param
        if p <= 0.5:
            high = w_star + k
            low = w_star - k * p / (1.0 - p)
        else:
            high = w_star + k * (1.0 - p) / p
            low = w_star - k
        return high if uniform_float(s) < p else low
    if k < param:
        # narrow window: uniform proposal thinned by the normal density
        while True:
            x = k * (2.0 * uniform_float(s) - 1.0)
            if uniform_float(s) < np.exp(-0.5 * (x / param) ** 2):
                return w_star + x
    while True:
        x = param * standard_normal(s)
        if -k <= x <= k:
            return w_star + x


@njit(cache=True)
def _fill(s, shape, w_star, k, param, out):
    for i in range(out.shape[0]):
        out[i] = _draw(s, shape, w_star, k, param)


def sample_weight(model: WeightModel, rng: Rng) -> float:
    """One weight in ``[w_star - k, w_star + k]``."""
    return float(_draw(rng.state, _SHAPE_CODES[model.shape], model.w_star, model.k, model.param))


def sample_weights(model: WeightModel, rng: Rng, count: int) -> np.ndarray:
    out = np.empty(count)
    _fill(rng.state, _SHAPE_CODES[model.shape], model.w_star, model.k, model.param, out)
    return out


def trial_weights(cfg: SimConfig, seed: Optional[int] = None) -> np.ndarray:
    seed = cfg.seed if seed is None else seed
    return sample_weights(cfg.weight_model, Rng(derive_seed(seed, STREAM_WEIGHTS)), cfg.m)


_DIST_ARGS = {"uniform": 2, "twopoint": 3, "tnormal": 3}


def parse_weight_dist(text: str) -> WeightModel:
    """Parse ``uniform:w_star,k``, ``twopoint:w_star,k,p`` or ``tnormal:w_star,k,sigma``."""
    m = re.fullmatch(r"\s*(\w+)\s*:\s*(.+)", text)
    if not m or m.group(1).lower() not in _DIST_ARGS:
        raise ConfigError(f"bad weight distribution {text!r}; "
                          "expected uniform:w,k | twopoint:w,k,p | tnormal:w,k,sigma")
    shape = m.group(1).lower()
    try:
        args = [float(x) for x in m.group(2).split(",")]
    except ValueError:
        raise ConfigError(f"non-numeric weight parameters in {text!r}") from None
    if len(args) != _DIST_ARGS[shape]:
        raise ConfigError(f"{shape} takes {_DIST_ARGS[shape]} parameters, got {len(args)}")
    if shape == "uniform":
        return WeightModel(args[0], args[1], WeightShape.UNIFORM)
    return WeightModel(args[0], args[1], WeightShape(shape), args[2])


def allocate_weighted_ball(state, rng: Rng, cfg: SimConfig, model: WeightModel,
                           weight: Optional[float] = None,
                           weight_rng: Optional[Rng] = None) -> AllocationOutcome:
    """Place the next ball with weight ``weight`` (drawn from ``model`` if omitted).

    ``state`` must be an :class:`allocbench.idea.SystemState` built with
    ``w_star = model.w_star``.
    """
    from .idea import allocate_ball

    if cfg.variant is not Variant.WEIGHTED:
        raise ConfigError("allocate_weighted_ball needs the weighted variant")
    if abs(state.w_star - model.w_star) > 1e-12 * model.w_star:
        raise ConfigError("state.w_star must equal the model's w_star")
    if weight is None:
        weight = sample_weight(model, weight_rng if weight_rng is not None else rng)
    return allocate_ball(state, state.balls_placed + 1, rng, cfg, weight=weight)


def run_weighted(cfg: SimConfig, seed: Optional[int] = None, trace: bool = False,
                 keep_dests: bool = False) -> RunResult:
    if cfg.variant is not Variant.WEIGHTED:
        raise ConfigError("run_weighted needs the weighted variant")
    weights = trial_weights(cfg, seed)
    return execute_sequential(cfg, seed=seed, weights=weights, trace=trace, keep_dests=keep_dests)


__all__ = ["sample_weight", "sample_weights", "parse_weight_dist", "allocate_weighted_ball",
           "run_weighted", "trial_weights"]
