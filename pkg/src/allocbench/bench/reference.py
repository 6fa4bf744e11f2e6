"""Slow, plain-Python re-implementation of every allocator, used as a test oracle.

Nothing here imports the optimized allocator, its kernels or its random
generator: the xoshiro256** stream, the subset draw, the weight and
dimension generators, the state hash and every allocator are written out
again in the most direct form.  Both implementations follow the same
documented arithmetic (estimates kept as ``d * A`` running sums, gaps
compared as ``d*L - d*A``, ties within ``1e-9 * d * w_star``), so their
traces are expected to agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

MAX_N = 64
MAX_M = 1000

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

_TAG_WEIGHTS = 0x57
_TAG_COIN = 0xC0
_TAG_MD = 0x4D


def _mix(x: int) -> int:
    x = (x + _GOLDEN) & _M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _M64
    return x ^ (x >> 31)


def _substream_seed(seed: int, *keys: int) -> int:
    h = _mix(seed & _M64)
    for k in keys:
        h = _mix(h ^ (k & _M64))
    return h


class _Xoshiro:
    def __init__(self, seed: int):
        x = seed & _M64
        self.s = []
        for _ in range(4):
            self.s.append(_mix(x))
            x = (x + _GOLDEN) & _M64

    @staticmethod
    def _rotl(x: int, k: int) -> int:
        return ((x << k) | (x >> (64 - k))) & _M64

    def next(self) -> int:
        s0, s1, s2, s3 = self.s
        out = (self._rotl((s1 * 5) & _M64, 7) * 9) & _M64
        t = (s1 << 17) & _M64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = self._rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return out

    def below(self, k: int) -> int:
        reject_under = ((1 << 64) - k) % k
        while True:
            r = self.next()
            if r >= reject_under:
                return r % k

    def unit(self) -> float:
        return (self.next() >> 11) * 2.0 ** -53

    def distinct(self, n: int, d: int) -> list[int]:
        picked: list[int] = []
        while len(picked) < d:
            c = self.below(n)
            if c not in picked:
                picked.append(c)
        return picked

    def normal(self) -> float:
        u1, u2 = self.unit(), self.unit()
        return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)


def _q(x: float) -> int:
    return math.floor(x * 1e9 + 0.5) & _M64


def _chain(h: int, loads: list[float], dsum: list[float], d: int) -> int:
    for load, s in zip(loads, dsum):
        h = _mix(h ^ _q(load))
        h = _mix(h ^ _q(s / d))
    return h


def _argmin_uniform(values: list[float], tol: float, gen: _Xoshiro) -> int:
    lo = min(values)
    tied = [i for i, v in enumerate(values) if v - lo <= tol]
    if len(tied) == 1:
        return tied[0]
    return tied[gen.below(len(tied))]


def _weights(spec: dict, m: int, gen: _Xoshiro) -> list[float]:
    w, k, shape, p = spec["w_star"], spec["k"], spec["shape"], spec["param"]
    out = []
    for _ in range(m):
        if k == 0:
            out.append(w)
        elif shape == "uniform":
            out.append(w + k * (2.0 * gen.unit() - 1.0))
        elif shape == "twopoint":
            if p <= 0.5:
                hi, lo = w + k, w - k * p / (1.0 - p)
            else:
                hi, lo = w + k * (1.0 - p) / p, w - k
            out.append(hi if gen.unit() < p else lo)
        elif k < p:
            while True:
                x = k * (2.0 * gen.unit() - 1.0)
                if gen.unit() < math.exp(-0.5 * (x / p) ** 2):
                    out.append(w + x)
                    break
        else:
            while True:
                x = p * gen.normal()
                if -k <= x <= k:
                    out.append(w + x)
                    break
    return out


def _dims_for_ball(D: int, f: int, probs: Optional[list[float]], gen: _Xoshiro) -> list[int]:
    if probs is None:
        return gen.distinct(D, f)
    chosen: list[int] = []
    for _ in range(f):
        total = 0.0
        for q in range(D):
            if q not in chosen:
                total += probs[q]
        x = gen.unit() * total
        pick = -1
        for q in range(D):
            if q in chosen or probs[q] <= 0.0:
                continue
            pick = q
            x -= probs[q]
            if x < 0.0:
                break
        chosen.append(pick)
    return chosen


@dataclass
class ReferenceResult:
    trace: list[dict]
    loads: list[float]
    est_avg: list[float]
    messages: int
    report: dict
    rounds: Optional[int] = None
    dim_loads: Optional[list[list[int]]] = None
    md_gap: Optional[float] = None
    message_totals: dict = field(default_factory=dict)


class _Bins:
    """Loads and ``d``-scaled estimate sums plus the IDEA update rules."""

    def __init__(self, n: int, d: int, unit: float, gamma: int, sampled: bool, catch_up: bool,
                 small: int, large: int, eps: float):
        self.n, self.d, self.unit = n, d, unit
        self.gamma, self.sampled, self.catch_up = gamma, sampled, catch_up
        self.small, self.large, self.eps = small, large, eps
        self.L = [0.0] * n
        self.S = [0.0] * n
        self.tol = 1e-9 * d * unit
        self.messages = 0

    def gap(self, i: int) -> float:
        return self.d * self.L[i] - self.S[i]

    def keeps_increment(self, i: int, w: float, j: int, placed: int, gen: _Xoshiro) -> bool:
        d, n = self.d, self.n
        if not self.sampled:
            level = -(-j // n)
            return not self.S[i] > d * self.unit * level + self.tol
        step = d * self.unit
        before, after = self.S[i] / step, (self.S[i] + w) / step
        alpha = float(math.ceil(after - 1e-9)) - 1.0
        if not (alpha >= 1.0 and before <= alpha + 1e-9):
            return True
        size = self.small if placed < n * self.small else self.large
        acc = 0.0
        for _ in range(size):
            acc += self.S[gen.below(n)]
        self.messages += size
        return acc / (size * d) >= (alpha - self.eps) * self.unit

    def choose(self, w: float, j: int, gen: _Xoshiro, gaps=None):
        """Retry loop; returns (sets drawn, index of dest in last set, found)."""
        d, n = self.d, self.n
        sets = []
        floor_sum = d * self.unit * ((j - 1) // n)
        while True:
            cand = gen.distinct(n, d)
            sets.append(cand)
            if gaps is None and self.catch_up and not self.sampled:
                for c in cand:
                    if self.S[c] < floor_sum - self.tol:
                        self.S[c] = floor_sum
            vals = [gaps[c] if gaps is not None else self.gap(c) for c in cand]
            found = any(v <= self.tol for v in vals)
            if found or len(sets) > self.gamma:
                break
        return sets, _argmin_uniform(vals, self.tol, gen), found


def _report(loads, est, hist, total, messages, rounds, unit):
    n = len(loads)
    avg = total / n
    mean_est = math.fsum(est) / n
    var = math.fsum((e - mean_est) ** 2 for e in est) / (n - 1) if n > 1 else 0.0
    balls = sum(hist.values())
    return {
        "max_load": max(loads),
        "min_load": min(loads),
        "true_avg": avg,
        "gap": max(0.0, max(loads) - avg),
        "est_avg_max_error": max(abs(e - avg) for e in est),
        "est_avg_variance": var,
        "nonpositive_gap_fraction": sum(1 for l, e in zip(loads, est) if l - e <= 1e-9 * unit) / n,
        "retry_histogram": dict(sorted(hist.items())),
        "mean_retries": sum(k * v for k, v in hist.items()) / balls if balls else 0.0,
        "sum_est_gap": math.fsum(l - e for l, e in zip(loads, est)),
        "messages": messages,
        "rounds": rounds,
    }


def _log2ceil(n: int) -> int:
    return max(1, math.ceil(math.log2(n))) if n > 1 else 1


def reference_allocate(cfg) -> ReferenceResult:
    """Allocate per ``cfg`` (a ``SimConfig`` or its ``to_dict()``) one ball at a time."""
    c = cfg if isinstance(cfg, dict) else cfg.to_dict()
    n, m, d, seed = c["n"], c["m"], c["d"], c["seed"]
    if n > MAX_N or m > MAX_M:
        raise ValueError(f"reference oracle is limited to n <= {MAX_N}, m <= {MAX_M}")
    gamma = c["gamma_max"] if c.get("gamma_max") is not None else _log2ceil(n)
    variant = c.get("variant", "unweighted")
    algo = c.get("algorithm", "idea")
    sampled = c.get("mode", "numbered") == "sampled"
    small, large, eps = _log2ceil(n), c.get("sample_size_large", 8), c.get("epsilon", 0.05)
    if variant == "parallel":
        return _parallel(n, m, d, gamma, seed, small, large, eps)

    gen = _Xoshiro(seed)
    unit = 1.0
    weights = [1.0] * m
    if variant == "weighted":
        unit = c["weight_model"]["w_star"]
        weights = _weights(c["weight_model"], m, _Xoshiro(_substream_seed(seed, _TAG_WEIGHTS)))
    elif variant == "multidim":
        unit = float(c["populated"])
        weights = [unit] * m
    bins = _Bins(n, d, unit, gamma, sampled, c.get("catch_up", True), small, large, eps)
    coin = _Xoshiro(_substream_seed(seed, _TAG_COIN))
    retry_cap = c.get("retry_cap") or gamma
    trace: list[dict] = []
    hist: dict[int, int] = {}
    h = 0
    for j in range(1, m + 1):
        w = weights[j - 1]
        found = False
        if algo == "idea":
            sets, k, found = bins.choose(w, j, gen)
            final = sets[-1]
            dest = final[k]
            bins.L[dest] += w
            for cnd in final:
                if bins.keeps_increment(cnd, w, j, j - 1, gen):
                    bins.S[cnd] += w
        else:
            if algo == "one":
                sets = [gen.distinct(n, 1)]
            elif algo == "beta":
                two = gen.distinct(n, 2 if n >= 2 else 1) if coin.unit() < c["beta"] else None
                sets = [two] if two is not None else [gen.distinct(n, 1)]
            else:
                sets = []
                limit = retry_cap if algo == "greedy-retry" else 1
                level = -(-j // n)  # ceil(j / n); baselines run with unit weights
                while len(sets) < limit:
                    sets.append(gen.distinct(n, d))
                    if any(bins.L[b] <= level for b in sets[-1]):
                        break
            pool: list[int] = []
            for s in sets:
                for b in s:
                    if b not in pool:
                        pool.append(b)
            dest = pool[_argmin_uniform([bins.L[b] for b in pool], 1e-9 * w, gen)]
            bins.L[dest] += w
        hist[len(sets)] = hist.get(len(sets), 0) + 1
        h = _chain(h, bins.L, bins.S, d)
        trace.append({"ball": j, "retries": len(sets), "candidates": sets, "dest": dest,
                      "found_nonpositive": found, "state_hash": h})
    est = [s / d for s in bins.S]
    total = math.fsum(weights) if variant == "weighted" else (weights[0] * m if m else 0.0)
    res = ReferenceResult(trace, bins.L, est, bins.messages,
                          _report(bins.L, est, hist, total, bins.messages, None, unit))
    if variant == "multidim":
        D, f = c["dims"], c["populated"]
        probs = list(c["md_weights"]) if c.get("md_weights") is not None else None
        dgen = _Xoshiro(_substream_seed(seed, _TAG_MD))
        dl = [[0] * D for _ in range(n)]
        for rec in trace:
            for q in _dims_for_ball(D, f, probs, dgen):
                dl[rec["dest"]][q] += 1
        res.dim_loads = dl
        if m == 0:
            res.md_gap = 0.0
        else:
            avgs = ([m * f / (n * D)] * D if probs is None
                    else [sum(row[a] for row in dl) / n for a in range(D)])
            res.md_gap = max(max(row[a] for row in dl) - avgs[a] for a in range(D))
    return res


def _parallel(n, m, d, gamma, seed, small, large, eps) -> ReferenceResult:
    gen = _Xoshiro(seed)
    bins = _Bins(n, d, 1.0, gamma, True, False, small, large, eps)
    waiting = list(range(m))
    counts = dict.fromkeys(("query", "reply", "c1", "c2", "inc"), 0)
    trace: list[dict] = []
    hist: dict[int, int] = {}
    h = 0
    rnd = 0
    placed = 0
    while waiting:
        rnd += 1
        gaps = [bins.gap(i) for i in range(n)]
        picks = {}
        for b in waiting:
            sets, k, found = bins.choose(1.0, 0, gen, gaps=gaps)
            counts["query"] += d * len(sets)
            counts["reply"] += d * len(sets)
            counts["c1"] += 1
            picks[b] = (sets, sets[-1][k], found)
        winners = []
        for i in range(n):
            asked = [b for b in waiting if picks[b][1] == i]
            if not asked:
                continue
            winners.append(asked[gen.below(len(asked))] if len(asked) > 1 else asked[0])
            counts["c2"] += 1
        winners.sort()
        for b in winners:
            sets, dest, _ = picks[b]
            bins.L[dest] += 1.0
            for cnd in sets[-1]:
                counts["inc"] += 1
                if bins.keeps_increment(cnd, 1.0, 0, placed, gen):
                    bins.S[cnd] += 1.0
            hist[len(sets)] = hist.get(len(sets), 0) + 1
        if not winners:
            break
        placed += len(winners)
        h = _chain(h, bins.L, bins.S, d)
        for b in winners:
            sets, dest, found = picks[b]
            trace.append({"ball": b + 1, "retries": len(sets), "candidates": sets, "dest": dest,
                          "found_nonpositive": found, "state_hash": h, "round": rnd})
        waiting = [b for b in waiting if b not in set(winners)]
    counts["sampling"] = bins.messages
    est = [s / d for s in bins.S]
    total_msgs = sum(counts.values())
    return ReferenceResult(trace, bins.L, est, bins.messages,
                           _report(bins.L, est, hist, float(m), total_msgs, rnd, 1.0),
                           rounds=rnd, message_totals=counts)


def first_divergence(main_trace, ref_trace) -> Optional[int]:
    """1-based position of the first record that differs, or ``None`` if equal.

    ``main_trace`` holds :class:`allocbench.core.TraceRecord` objects or
    dicts with the same keys.
    """
    keys = ("ball", "retries", "candidates", "dest", "found_nonpositive", "state_hash", "round")
    for pos, (a, b) in enumerate(zip(main_trace, ref_trace), start=1):
        a = a if isinstance(a, dict) else {k: getattr(a, k) for k in keys}
        for k in keys:
            if a.get(k) != b.get(k):
                return pos
    if len(main_trace) != len(ref_trace):
        return min(len(main_trace), len(ref_trace)) + 1
    return None
