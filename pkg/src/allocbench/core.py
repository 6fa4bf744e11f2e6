"""Domain types, configuration, candidate selection and gap metrics."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .rng import Rng

# Two reals closer than this (in units of the expected ball weight) compare equal.
TIE_TOL = 1e-9


class ConfigError(ValueError):
    """Invalid simulation configuration."""


class Mode(str, enum.Enum):
    NUMBERED = "numbered"
    SAMPLED = "sampled"


class Algorithm(str, enum.Enum):
    IDEA = "idea"
    ONE_CHOICE = "one"
    GREEDY_D = "greedy"
    ONE_PLUS_BETA = "beta"
    GREEDY_D_RETRY = "greedy-retry"


class Variant(str, enum.Enum):
    UNWEIGHTED = "unweighted"
    WEIGHTED = "weighted"
    MULTIDIM = "multidim"
    PARALLEL = "parallel"


class WeightShape(str, enum.Enum):
    UNIFORM = "uniform"
    TWO_POINT = "twopoint"
    TRUNCATED_NORMAL = "tnormal"


@dataclass(frozen=True)
class WeightModel:
    """Bounded ball-weight distribution with mean ``w_star``.

    Every draw lies in ``[w_star - k, w_star + k]``.  ``param`` is ``p`` for
    the two-point shape and ``sigma`` for the truncated normal.
    """

    w_star: float
    k: float = 0.0
    shape: WeightShape = WeightShape.UNIFORM
    param: float = 0.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "shape", WeightShape(self.shape))
        if not (self.w_star > 0 and math.isfinite(self.w_star)):
            raise ConfigError(f"w_star must be positive, got {self.w_star}")
        if not (0 <= self.k < self.w_star):
            raise ConfigError(f"need 0 <= k < w_star, got k={self.k}, w_star={self.w_star}")
        if self.shape is WeightShape.TWO_POINT and not (0 < self.param < 1):
            raise ConfigError(f"two-point p must be in (0,1), got {self.param}")
        if self.shape is WeightShape.TRUNCATED_NORMAL and not self.param > 0:
            raise ConfigError(f"truncated-normal sigma must be > 0, got {self.param}")

    def scaled(self, s: float) -> "WeightModel":
        param = self.param * s if self.shape is WeightShape.TRUNCATED_NORMAL else self.param
        return replace(self, w_star=self.w_star * s, k=self.k * s, param=param)


def default_gamma_max(n: int) -> int:
    return max(1, math.ceil(math.log2(n))) if n > 1 else 1


@dataclass(frozen=True)
class SimConfig:
    """One experiment cell: what to allocate, how, and with which seed.

    ``gamma_max=None`` resolves to ``ceil(log2 n)``.  ``catch_up`` enables the
    hole-credit rule of numbered mode (see :mod:`allocbench.idea`); turning it
    off gives the bare cap-only update.
    """

    n: int
    m: int
    d: int = 2
    gamma_max: Optional[int] = None
    mode: Mode = Mode.NUMBERED
    algorithm: Algorithm = Algorithm.IDEA
    beta: Optional[float] = None
    retry_cap: Optional[int] = None
    seed: int = 0
    trials: int = 1
    variant: Variant = Variant.UNWEIGHTED
    weight_model: Optional[WeightModel] = None
    dims: Optional[int] = None
    populated: Optional[int] = None
    md_weights: Optional[tuple] = None
    catch_up: bool = True
    sample_size_large: int = 8
    epsilon: float = 0.05

    def __post_init__(self) -> None:
        for name, enum_type in (("mode", Mode), ("algorithm", Algorithm), ("variant", Variant)):
            try:
                object.__setattr__(self, name, enum_type(getattr(self, name)))
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if isinstance(self.weight_model, Mapping):
            object.__setattr__(self, "weight_model", WeightModel(**self.weight_model))
        if self.md_weights is not None:
            object.__setattr__(self, "md_weights", tuple(float(x) for x in self.md_weights))
        if self.gamma_max is None:
            object.__setattr__(self, "gamma_max", default_gamma_max(self.n))
        self.validate()

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.m < 0:
            raise ConfigError(f"m must be >= 0, got {self.m}")
        if not 1 <= self.d <= self.n:
            raise ConfigError(f"need 1 <= d <= n, got d={self.d}, n={self.n}")
        if self.gamma_max < 1:
            raise ConfigError(f"gamma_max must be >= 1, got {self.gamma_max}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.algorithm is Algorithm.ONE_PLUS_BETA:
            if self.beta is None or not 0 < self.beta < 1:
                raise ConfigError(f"beta must be in (0,1) for one-plus-beta, got {self.beta}")
        elif self.beta is not None:
            raise ConfigError("beta is only meaningful for the one-plus-beta algorithm")
        if self.retry_cap is not None and self.retry_cap < 1:
            raise ConfigError(f"retry_cap must be >= 1, got {self.retry_cap}")
        if self.variant is Variant.WEIGHTED and self.weight_model is None:
            raise ConfigError("weighted variant needs a weight_model")
        if self.variant is Variant.MULTIDIM:
            if self.dims is None or self.populated is None:
                raise ConfigError("multidim variant needs dims and populated")
            if not 1 <= self.populated <= self.dims:
                raise ConfigError(f"need 1 <= f <= D, got f={self.populated}, D={self.dims}")
            if self.md_weights is not None:
                if len(self.md_weights) != self.dims or min(self.md_weights) < 0:
                    raise ConfigError("md_weights needs D nonnegative entries")
                if sum(1 for w in self.md_weights if w > 0) < self.populated:
                    raise ConfigError("md_weights has fewer than f positive entries")
        if self.variant is not Variant.UNWEIGHTED and self.algorithm is not Algorithm.IDEA:
            raise ConfigError(f"{self.variant.value} variant is only defined for IDEA")
        if self.variant is Variant.PARALLEL and self.mode is not Mode.SAMPLED:
            raise ConfigError("parallel variant runs the sampled update policy only")
        if self.sample_size_large < 1:
            raise ConfigError("sample_size_large must be >= 1")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be > 0")

    @property
    def w_star(self) -> float:
        """Expected ball weight: the unit in which levels and tolerances are measured."""
        if self.variant is Variant.WEIGHTED:
            return self.weight_model.w_star
        if self.variant is Variant.MULTIDIM:
            return float(self.populated)
        return 1.0

    @property
    def effective_retry_cap(self) -> int:
        return self.retry_cap if self.retry_cap is not None else self.gamma_max

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for key, value in self.__dict__.items():
            if isinstance(value, enum.Enum):
                value = value.value
            elif isinstance(value, WeightModel):
                value = {"w_star": value.w_star, "k": value.k,
                         "shape": value.shape.value, "param": value.param}
            elif isinstance(value, tuple):
                value = list(value)
            out[key] = value
        return out


@dataclass
class BinState:
    load: float = 0.0
    est_avg: float = 0.0


@dataclass
class AllocationOutcome:
    """What happened to one ball: every candidate set drawn and where it went."""

    ball_index: int
    retries_used: int
    candidates: list[list[int]]
    destination: int
    found_nonpositive: bool


@dataclass
class TraceRecord:
    """One placed ball plus the hash chain of the state right after it.

    ``net_change`` is the ball's change of sum(L - A) and ``ungated`` whether
    every estimate increment was applied with no hole credit; both are kept
    in memory only.  ``round`` is set by the parallel simulator.
    """

    ball: int
    retries: int
    candidates: list[list[int]]
    dest: int
    found_nonpositive: bool
    state_hash: int
    round: Optional[int] = None
    net_change: Optional[float] = None
    ungated: Optional[bool] = None

    def to_json(self) -> dict:
        out = {
            "ball": self.ball,
            "retries": self.retries,
            "candidates": self.candidates,
            "dest": self.dest,
            "found_nonpositive": self.found_nonpositive,
            "state_hash": f"{self.state_hash:016x}",
        }
        if self.round is not None:
            out["round"] = self.round
        return out

    @property
    def outcome(self) -> AllocationOutcome:
        return AllocationOutcome(self.ball, self.retries, self.candidates, self.dest,
                                 self.found_nonpositive)


def choose_candidates(rng: Rng, n: int, d: int) -> list[int]:
    """``d`` distinct bins drawn uniformly from ``range(n)``, in draw order."""
    if not 1 <= d <= n:
        raise ConfigError(f"cannot choose d={d} distinct bins out of n={n}")
    return rng.draw_subset(n, d)


def estimated_gap(bin: BinState) -> float:
    return bin.load - bin.est_avg


@dataclass
class GapReport:
    max_load: float
    min_load: float
    true_avg: float
    gap: float
    est_avg_max_error: float
    est_avg_variance: float
    nonpositive_gap_fraction: float
    retry_histogram: dict[int, int]
    mean_retries: float
    sum_est_gap: float
    messages: int = 0
    rounds: Optional[int] = None

    @property
    def balls(self) -> int:
        return sum(self.retry_histogram.values())


def report_from_arrays(loads: np.ndarray, est: np.ndarray, retry_hist: Mapping[int, int],
                       total_weight: float, messages: int = 0,
                       rounds: Optional[int] = None, unit: float = 1.0) -> GapReport:
    n = len(loads)
    if n == 0:
        raise ValueError("gap report needs at least one bin")
    loads = np.asarray(loads, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    true_avg = total_weight / n
    max_load = float(loads.max())
    hist = {int(k): int(v) for k, v in sorted(retry_hist.items()) if v}
    balls = sum(hist.values())
    mean_retries = sum(k * v for k, v in hist.items()) / balls if balls else 0.0
    gaps = loads - est
    return GapReport(
        max_load=max_load,
        min_load=float(loads.min()),
        true_avg=true_avg,
        # rounding in total_weight/n can leave max_load a hair under the mean
        gap=max(0.0, max_load - true_avg),
        est_avg_max_error=float(np.abs(est - true_avg).max()),
        est_avg_variance=float(est.var(ddof=1)) if n > 1 else 0.0,
        nonpositive_gap_fraction=float(np.count_nonzero(gaps <= TIE_TOL * unit)) / n,
        retry_histogram=hist,
        mean_retries=mean_retries,
        sum_est_gap=math.fsum(gaps.tolist()),
        messages=int(messages),
        rounds=rounds,
    )


def gap_report(bins: Sequence[BinState], outcomes: Iterable[AllocationOutcome],
               total_weight: float, messages: int = 0, rounds: Optional[int] = None,
               unit: float = 1.0) -> GapReport:
    """Aggregate final bin states and per-ball outcomes into a :class:`GapReport`."""
    if not bins:
        raise ValueError("gap report needs at least one bin")
    hist: dict[int, int] = {}
    for out in outcomes:
        hist[out.retries_used] = hist.get(out.retries_used, 0) + 1
    return report_from_arrays(
        np.array([b.load for b in bins]), np.array([b.est_avg for b in bins]),
        hist, total_weight, messages, rounds, unit)


@dataclass(frozen=True)
class MergedReport:
    """Order-independent fold of per-trial reports."""

    trials: int
    mean_gap: float
    max_gap: float
    min_gap: float
    mean_retries: float
    retry_histogram: dict[int, int]
    total_messages: int
    mean_est_avg_variance: float
    max_est_avg_error: float
    min_nonpositive_fraction: float
    mean_rounds: Optional[float] = None
    max_rounds: Optional[int] = None


def merge_reports(reports: Sequence[GapReport]) -> MergedReport:
    if not reports:
        raise ValueError("nothing to merge")
    hist: dict[int, int] = {}
    for r in reports:
        for k, v in r.retry_histogram.items():
            hist[k] = hist.get(k, 0) + v
    hist = dict(sorted(hist.items()))
    balls = sum(hist.values())
    rounds = [r.rounds for r in reports if r.rounds is not None]
    t = len(reports)
    # fsum is exactly rounded, so the fold does not depend on report order
    return MergedReport(
        trials=t,
        mean_gap=math.fsum(r.gap for r in reports) / t,
        max_gap=max(r.gap for r in reports),
        min_gap=min(r.gap for r in reports),
        mean_retries=math.fsum(k * v for k, v in hist.items()) / balls if balls else 0.0,
        retry_histogram=hist,
        total_messages=sum(r.messages for r in reports),
        mean_est_avg_variance=math.fsum(r.est_avg_variance for r in reports) / t,
        max_est_avg_error=max(r.est_avg_max_error for r in reports),
        min_nonpositive_fraction=min(r.nonpositive_gap_fraction for r in reports),
        mean_rounds=math.fsum(rounds) / len(rounds) if rounds else None,
        max_rounds=max(rounds) if rounds else None,
    )
