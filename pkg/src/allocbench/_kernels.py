"""Jitted inner loops.

Arithmetic contract (the reference oracle in ``bench.reference`` follows the
same one, so traces agree bit for bit):

- ``loads[i]`` is the bin's total placed weight.
- ``esum[i]`` is ``d`` times the bin's estimated average, i.e. the running
  sum of the weights of the increments it accepted.  Estimated gaps are
  compared as ``d*loads[i] - esum[i]``; with unit weights every quantity is an
  integer held exactly in a float64.
- ``tol = TIE_TOL * d * w_star`` decides ties, non-positivity and cap checks.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .rng import draw_subset, uniform_float, uniform_int

ALGO_IDEA = 0
ALGO_ONE = 1
ALGO_GREEDY = 2
ALGO_BETA = 3
ALGO_GREEDY_RETRY = 4

# indices into the int64 stats vector
S_MESSAGES = 0
S_GATED = 1
S_CREDITED = 2
S_BAND_TOTAL = 3
S_BAND_SUCCESS = 4
S_ZERO_SUM_VIOLATIONS = 5
S_CAP_VIOLATIONS = 6
S_DECISIONS = 7
N_STATS = 8

# parallel message counters
P_QUERY = 0
P_REPLY = 1
P_C1 = 2
P_C2 = 3
P_INC = 4
P_SAMPLING = 5
P_ONE_PER_BIN_VIOLATIONS = 6
P_STALLED_ROUNDS = 7
N_PSTATS = 8

BAND_LO = 0.45
BAND_HI = 0.55

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)


@njit(cache=True)
def _splitmix(x):
    z = x + _GOLDEN
    z = (z ^ (z >> _S30)) * _C1
    z = (z ^ (z >> _S27)) * _C2
    return z ^ (z >> _S31)


@njit(cache=True)
def _quantize(x):
    return np.uint64(np.int64(np.floor(x * 1e9 + 0.5)))


@njit(cache=True)
def state_hash(h, loads, esum, d):
    """Chain ``h`` through every bin's (load, est_avg), both quantized to 1e-9."""
    for i in range(loads.shape[0]):
        h = _splitmix(h ^ _quantize(loads[i]))
        h = _splitmix(h ^ _quantize(esum[i] / d))
    return h


@njit(cache=True)
def _set_load(loads, esum, i, val, d, tol, nonpos):
    was = d * loads[i] - esum[i] <= tol
    loads[i] = val
    now = d * loads[i] - esum[i] <= tol
    nonpos[0] += np.int64(now) - np.int64(was)


@njit(cache=True)
def _set_esum(loads, esum, i, val, d, tol, nonpos):
    was = d * loads[i] - esum[i] <= tol
    esum[i] = val
    now = d * loads[i] - esum[i] <= tol
    nonpos[0] += np.int64(now) - np.int64(was)


@njit(cache=True)
def count_nonpositive(loads, esum, d, tol):
    c = 0
    for i in range(loads.shape[0]):
        if d * loads[i] - esum[i] <= tol:
            c += 1
    return c


@njit(cache=True)
def _pick_min(keys, cands, d, tol, rng):
    """Index into ``cands`` of the smallest key; ties broken uniformly."""
    best = keys[0]
    for t in range(1, d):
        if keys[t] < best:
            best = keys[t]
    ties = 0
    for t in range(d):
        if keys[t] - best <= tol:
            ties += 1
    pick = 0
    if ties > 1:
        pick = uniform_int(rng, ties)
    seen = 0
    for t in range(d):
        if keys[t] - best <= tol:
            if seen == pick:
                return t
            seen += 1
    return 0


@njit(cache=True)
def sample_size(n, placed_before, n_small, n_large):
    if placed_before < n * n_small:
        return n_small
    return n_large


@njit(cache=True)
def crossed_level(esum_i, w, d, w_star):
    """Integer level the pending increment would cross, or 0 if none."""
    unit = d * w_star
    x_before = esum_i / unit
    x_after = (esum_i + w) / unit
    alpha = np.ceil(x_after - 1e-9) - 1.0
    if alpha >= 1.0 and x_before <= alpha + 1e-9:
        return alpha
    return 0.0


@njit(cache=True)
def sampled_decision(esum, alpha, n, d, w_star, sample_n, eps, rng, stats):
    """Poll ``sample_n`` bins i.u.r.; allow the increment iff their mean
    estimated average is at least ``(alpha - eps) * w_star``."""
    total = 0.0
    for _ in range(sample_n):
        total += esum[uniform_int(rng, n)]
    stats[S_MESSAGES] += sample_n
    stats[S_DECISIONS] += 1
    return total / (sample_n * d) >= (alpha - eps) * w_star


@njit(cache=True)
def apply_increment(loads, esum, c, w, j, placed_before, n, d, w_star, sampled,
                    n_small, n_large, eps, tol, rng, stats, nonpos):
    """One candidate's estimate update; returns True if it was applied."""
    if sampled:
        alpha = crossed_level(esum[c], w, d, w_star)
        if alpha > 0.0:
            sn = sample_size(n, placed_before, n_small, n_large)
            if not sampled_decision(esum, alpha, n, d, w_star, sn, eps, rng, stats):
                stats[S_GATED] += 1
                return False
    else:
        cap = d * w_star * ((j + n - 1) // n)
        if esum[c] > cap + tol:
            stats[S_GATED] += 1
            return False
    _set_esum(loads, esum, c, esum[c] + w, d, tol, nonpos)
    return True


@njit(cache=True)
def idea_ball(loads, esum, w, w_star, j, placed_before, n, d, gmax, sampled, catch_up,
              n_small, n_large, eps, rng, cands, keys, log_cands, logging, stats, nonpos):
    """Place ball ``j`` (1-based) with IDEA.

    Returns (dest, retries, found, applied, credit): ``applied`` counts the
    accepted estimate increments, ``credit`` the total hole credit added to
    ``esum`` by the catch-up rule.
    """
    tol = 1e-9 * d * w_star
    floor_s = d * w_star * ((j - 1) // n)
    retries = 0
    found = False
    credit = 0.0
    while True:
        draw_subset(rng, n, d, cands)
        if logging:
            for t in range(d):
                log_cands[retries, t] = cands[t]
        if catch_up and not sampled:
            for t in range(d):
                c = cands[t]
                if esum[c] < floor_s - tol:
                    credit += floor_s - esum[c]
                    _set_esum(loads, esum, c, floor_s, d, tol, nonpos)
                    stats[S_CREDITED] += 1
        for t in range(d):
            c = cands[t]
            keys[t] = d * loads[c] - esum[c]
            if keys[t] <= tol:
                found = True
        retries += 1
        if found or retries > gmax:
            break
    dest = cands[_pick_min(keys, cands, d, tol, rng)]
    _set_load(loads, esum, dest, loads[dest] + w, d, tol, nonpos)
    applied = 0
    for t in range(d):
        if apply_increment(loads, esum, cands[t], w, j, placed_before, n, d, w_star, sampled,
                           n_small, n_large, eps, tol, rng, stats, nonpos):
            applied += 1
    return dest, retries, found, applied, credit


@njit(cache=True)
def baseline_ball(algo, loads, w, placed_w, n, d, retry_cap, beta, rng, coin_rng, cands, keys,
                  seen, log_cands, logging):
    """Place one ball with a load-only baseline.  Returns (dest, retries).

    ``placed_w`` is the total weight already placed.  Greedy with retries
    stops drawing once a set holds a bin at or below the current batch level
    ``ceil(j / n)`` (in units of ``w``, with ``j`` the index of this ball),
    and after ``retry_cap`` sets at the latest.
    """
    if algo == ALGO_ONE:
        draw_subset(rng, n, 1, cands)
        if logging:
            log_cands[0, 0] = cands[0]
        dest = cands[0]
        loads[dest] += w
        return dest, 1
    if algo == ALGO_BETA:
        dd = 2 if n >= 2 else 1
        if uniform_float(coin_rng) >= beta:
            dd = 1
        draw_subset(rng, n, dd, cands)
        if logging:
            for t in range(dd):
                log_cands[0, t] = cands[t]
        for t in range(dd):
            keys[t] = loads[cands[t]]
        dest = cands[_pick_min(keys, cands, dd, 1e-9 * w, rng)]
        loads[dest] += w
        return dest, 1
    rounds = 1
    if algo == ALGO_GREEDY_RETRY:
        rounds = retry_cap
    k = 0
    drawn = 0
    tol = 1e-9 * w
    level = np.ceil((placed_w + w) / (n * w) - 1e-9) * w
    for r in range(rounds):
        draw_subset(rng, n, d, cands)
        drawn += 1
        if logging:
            for t in range(d):
                log_cands[r, t] = cands[t]
        below = False
        for t in range(d):
            if loads[cands[t]] <= level + tol:
                below = True
            dup = False
            for q in range(k):
                if seen[q] == cands[t]:
                    dup = True
                    break
            if not dup:
                seen[k] = cands[t]
                k += 1
        if below:
            break
    for t in range(k):
        keys[t] = loads[seen[t]]
    dest = seen[_pick_min(keys, seen, k, tol, rng)]
    loads[dest] += w
    return dest, drawn


@njit(cache=True)
def run_sequential_kernel(algo, n, m, d, gmax, retry_cap, beta, sampled, catch_up,
                          n_small, n_large, eps, w_star, weights, w_const,
                          rng, coin_rng, loads, esum, retry_hist, stats,
                          bnd_sum, bnd_nonpos,
                          trace, t_dest, t_retries, t_found, t_cands, t_hash, t_net, t_clean):
    """Allocate ``m`` balls into the given (possibly non-empty) state.

    ``weights`` of length 0 means every ball weighs ``w_const``.  Boundary
    statistics are recorded after every multiple of ``n`` balls.  With
    ``trace`` set, per-ball outcome arrays and the state hash chain are
    filled in.
    """
    maxr = max(gmax + 1, retry_cap)
    # one-plus-beta always needs room for two candidates
    cands = np.empty(max(d, 2), dtype=np.int64)
    keys = np.empty(maxr * d, dtype=np.float64)
    seen = np.empty(maxr * d, dtype=np.int64)
    log_cands = np.full((maxr, max(d, 2)), -1, dtype=np.int64)
    tol = 1e-9 * d * w_star
    nonpos = np.zeros(1, dtype=np.int64)
    nonpos[0] = count_nonpositive(loads, esum, d, tol)
    # running sum of d*(L - A); exact for integer weights
    total = 0.0
    placed_w = 0.0
    for i in range(n):
        total += d * loads[i] - esum[i]
        placed_w += loads[i]
    h = np.uint64(0)
    is_idea = algo == ALGO_IDEA
    # an accepted increment can overshoot the cap by at most one ball weight
    w_hi = 0.0
    for j in range(1, m + 1):
        w = weights[j - 1] if weights.shape[0] > 0 else w_const
        if w > w_hi:
            w_hi = w
        if trace:
            log_cands[:, :] = -1
        frac = nonpos[0] / n
        gated0 = stats[S_GATED]
        cred0 = stats[S_CREDITED]
        if is_idea:
            dest, retries, found, applied, credit = idea_ball(
                loads, esum, w, w_star, j, j - 1, n, d, gmax, sampled, catch_up,
                n_small, n_large, eps, rng, cands, keys, log_cands, trace, stats, nonpos)
            delta = d * w - applied * w - credit
            if not sampled:
                cap = d * w_star * ((j + n - 1) // n)
                for t in range(d):
                    if esum[cands[t]] > cap + w_hi + tol:
                        stats[S_CAP_VIOLATIONS] += 1
        else:
            dest, retries = baseline_ball(algo, loads, w, placed_w, n, d, retry_cap, beta, rng,
                                          coin_rng, cands, keys, seen, log_cands, trace)
            found = False
            delta = d * w
        placed_w += w
        clean = stats[S_GATED] == gated0 and stats[S_CREDITED] == cred0
        if is_idea and clean and abs(delta) > tol:
            stats[S_ZERO_SUM_VIOLATIONS] += 1
        total += delta
        retry_hist[retries] += 1
        if is_idea and BAND_LO <= frac <= BAND_HI:
            stats[S_BAND_TOTAL] += 1
            if found and retries <= 2:
                stats[S_BAND_SUCCESS] += 1
        if j % n == 0 and bnd_sum.shape[0] >= j // n:
            b = j // n - 1
            bnd_sum[b] = total / d
            bnd_nonpos[b] = nonpos[0]
        if trace:
            t_dest[j - 1] = dest
            t_retries[j - 1] = retries
            t_found[j - 1] = found
            for r in range(maxr):
                for t in range(log_cands.shape[1]):
                    t_cands[j - 1, r, t] = log_cands[r, t]
            h = state_hash(h, loads, esum, d)
            t_hash[j - 1] = h
            t_net[j - 1] = delta / d
            t_clean[j - 1] = clean
    return total / d


@njit(cache=True)
def parallel_round(n, d, gmax, n_small, n_large, eps, rng, loads, esum, pstats, stats,
                   retry_hist, unplaced, u, placed_before, choice, final, tries, hit,
                   accepted, rlog, trace, nonpos):
    """One synchronous round over the first ``u`` entries of ``unplaced``.

    Every unplaced ball runs the retry loop against round-start estimated
    gaps (Query/Reply) and sends C1 to its minimum-gap candidate; every bin
    accepts one C1 uniformly among those received (C2); accepted balls send
    INC to their final candidates, applied in ball order with the sampled
    update policy.  Accepted balls are flagged in ``accepted`` (the caller
    clears it) and ``unplaced`` is compacted in place.  Returns
    ``(remaining, placed_now)``.
    """
    w = 1.0
    w_star = 1.0
    tol = 1e-9 * d
    snap = np.empty(n, dtype=np.float64)
    cands = np.empty(d, dtype=np.int64)
    keys = np.empty(d, dtype=np.float64)
    recv = np.zeros(n + 1, dtype=np.int64)
    order = np.empty(max(u, 1), dtype=np.int64)
    fill = np.empty(n, dtype=np.int64)
    took = np.zeros(n, dtype=np.int64)
    for i in range(n):
        snap[i] = d * loads[i] - esum[i]
    # steps 1-4: candidate draws, gap queries, C1
    for q in range(u):
        b = unplaced[q]
        r = 0
        found = False
        while True:
            draw_subset(rng, n, d, cands)
            pstats[P_QUERY] += d
            pstats[P_REPLY] += d
            if trace:
                for t in range(d):
                    rlog[b, r, t] = cands[t]
            for t in range(d):
                keys[t] = snap[cands[t]]
                if keys[t] <= tol:
                    found = True
            r += 1
            if found or r > gmax:
                break
        k = _pick_min(keys, cands, d, tol, rng)
        choice[b] = cands[k]
        for t in range(d):
            final[b, t] = cands[t]
        tries[b] = r
        hit[b] = found
        pstats[P_C1] += 1
    # step 5: each bin accepts one C1, uniformly among received, in ball order
    for q in range(u):
        recv[choice[unplaced[q]] + 1] += 1
    for i in range(n):
        recv[i + 1] += recv[i]
    for i in range(n):
        fill[i] = recv[i]
    for q in range(u):
        b = unplaced[q]
        c = choice[b]
        order[fill[c]] = b
        fill[c] += 1
    for i in range(n):
        cnt = recv[i + 1] - recv[i]
        if cnt == 0:
            continue
        pick = 0
        if cnt > 1:
            pick = uniform_int(rng, cnt)
        accepted[order[recv[i] + pick]] = True
        took[i] += 1
        pstats[P_C2] += 1
    for i in range(n):
        if took[i] > 1:
            pstats[P_ONE_PER_BIN_VIOLATIONS] += 1
    # steps 6-7: commit and INC, in ball order
    placed_now = 0
    keep = 0
    for q in range(u):
        b = unplaced[q]
        if accepted[b]:
            dest = choice[b]
            _set_load(loads, esum, dest, loads[dest] + w, d, tol, nonpos)
            for t in range(d):
                pstats[P_INC] += 1
                apply_increment(loads, esum, final[b, t], w, 0, placed_before, n, d, w_star,
                                True, n_small, n_large, eps, tol, rng, stats, nonpos)
            retry_hist[tries[b]] += 1
            placed_now += 1
        else:
            unplaced[keep] = b
            keep += 1
    pstats[P_SAMPLING] = stats[S_MESSAGES]
    return keep, placed_now


@njit(cache=True)
def run_parallel_kernel(n, m, d, gmax, n_small, n_large, eps, rng, loads, esum, pstats,
                        stats, retry_hist, placed_per_round,
                        trace, t_ball, t_round, t_dest, t_retries, t_found, t_cands, t_hash):
    """Run rounds until every one of ``m`` simultaneous balls is placed.

    Returns the number of rounds; a round that places nothing is counted in
    ``P_STALLED_ROUNDS`` and ends the run.
    """
    tol = 1e-9 * d
    maxr = gmax + 1
    nonpos = np.zeros(1, dtype=np.int64)
    nonpos[0] = count_nonpositive(loads, esum, d, tol)
    unplaced = np.arange(m)
    u = m
    choice = np.empty(m, dtype=np.int64)
    final = np.empty((m, d), dtype=np.int64)
    tries = np.empty(m, dtype=np.int64)
    hit = np.zeros(m, dtype=np.bool_)
    accepted = np.zeros(m, dtype=np.bool_)
    rlog = np.full((m, maxr, d), -1, dtype=np.int64) if trace else np.empty((0, maxr, d), dtype=np.int64)
    placed_total = 0
    rounds = 0
    h = np.uint64(0)
    rec = 0
    while u > 0:
        rounds += 1
        keep, placed_now = parallel_round(
            n, d, gmax, n_small, n_large, eps, rng, loads, esum, pstats, stats, retry_hist,
            unplaced, u, placed_total, choice, final, tries, hit, accepted, rlog, trace, nonpos)
        if placed_now == 0:
            pstats[P_STALLED_ROUNDS] += 1
            break
        placed_per_round[rounds - 1] = placed_now
        placed_total += placed_now
        if trace:
            h = state_hash(h, loads, esum, d)
            for b in range(m):
                if accepted[b]:
                    t_ball[rec] = b
                    t_round[rec] = rounds
                    t_dest[rec] = choice[b]
                    t_retries[rec] = tries[b]
                    t_found[rec] = hit[b]
                    for r in range(maxr):
                        for t in range(d):
                            t_cands[rec, r, t] = rlog[b, r, t]
                    t_hash[rec] = h
                    rec += 1
        for b in range(m):
            if accepted[b]:
                accepted[b] = False
                if trace:
                    for r in range(maxr):
                        for t in range(d):
                            rlog[b, r, t] = -1
        u = keep
    return rounds
