from __future__ import annotations

import math

import numpy as np
import pytest

from allocbench import ConfigError, SimConfig, simulate
from allocbench.bench.reference import first_divergence, reference_allocate
from allocbench.idea import SystemState, allocate_ball
from allocbench.parallel import (MessageKind, ParallelState, RoundMessage, report_for_state,
                                 run_parallel, run_parallel_round)
from allocbench.rng import Rng


def _pcfg(n, m, **kw):
    return SimConfig(n=n, m=m, variant="parallel", mode="sampled", **kw)


def test_single_bin_single_ball_messages():
    report, rounds, msgs = run_parallel(_pcfg(1, 1, d=1))
    assert rounds == 1
    assert [msgs[k] for k in ("query", "reply", "c1", "c2", "inc")] == [1, 1, 1, 1, 1]
    assert report.max_load == 1


def test_two_balls_one_bin_defers_one():
    cfg = _pcfg(1, 2, d=1)
    state = ParallelState.for_config(cfg)
    rng = Rng(cfg.seed)
    placed, delta = run_parallel_round(state, rng, cfg)
    assert len(placed) == 1 and len(state.unplaced) == 1
    assert delta["c1"] == 2 and delta["c2"] == 1
    placed2, _ = run_parallel_round(state, rng, cfg)
    assert placed | placed2 == {0, 1} and not state.unplaced
    with pytest.raises(ValueError):
        run_parallel_round(state, rng, cfg)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_round_trace_matches_reference(seed):
    cfg = _pcfg(8, 8, d=2, seed=seed)
    r = simulate(cfg, trace=True)
    ref = reference_allocate(cfg)
    assert first_divergence(r.trace, ref.trace) is None
    assert r.rounds == ref.rounds
    assert {k: r.message_totals[k] for k in ref.message_totals} == ref.message_totals


def test_reference_agreement_heavier_load():
    cfg = _pcfg(16, 200, d=3, seed=44)
    r = simulate(cfg, trace=True)
    assert first_divergence(r.trace, reference_allocate(cfg).trace) is None


def test_trace_ordered_by_round_then_ball():
    r = simulate(_pcfg(32, 96, seed=5), trace=True)
    keys = [(rec.round, rec.ball) for rec in r.trace]
    assert keys == sorted(keys) and len(keys) == 96


def test_message_accounting():
    cfg = _pcfg(500, 2000, d=3, seed=9)
    r = simulate(cfg)
    msgs = r.message_totals
    assert msgs["inc"] == 3 * 2000
    assert msgs["c2"] == 2000
    assert msgs["query"] == msgs["reply"]
    assert msgs["c1"] == int(np.sum(2000 - np.concatenate([[0], np.cumsum(r.placed_per_round)[:-1]])))
    assert msgs["one_per_bin_violations"] == 0 and msgs["stalled_rounds"] == 0


def test_every_round_makes_progress():
    for s in range(5):
        r = simulate(_pcfg(256, 1024, seed=s))
        assert np.all(r.placed_per_round >= 1)
        assert r.placed_per_round.sum() == 1024
        assert r.rounds <= 1024


def test_round_api_matches_batch_run():
    cfg = _pcfg(64, 300, seed=12)
    batch = simulate(cfg)
    state = ParallelState.for_config(cfg)
    rng = Rng(cfg.seed)
    per_round = []
    while state.unplaced:
        before = state.loads.copy()
        placed, _ = run_parallel_round(state, rng, cfg)
        assert np.all(state.loads - before <= 1)
        assert set(state.destinations) >= placed
        per_round.append(len(placed))
    assert np.array_equal(state.loads, batch.loads)
    assert np.allclose(state.esum / cfg.d, batch.est_avg)
    assert per_round == list(batch.placed_per_round)
    assert report_for_state(state).gap == batch.report.gap
    assert state.message_totals == {k: batch.message_totals[k] for k in state.message_totals}


def test_single_ball_round_is_sequential_step():
    cfg = SimConfig(n=50, m=400, mode="sampled", seed=3)
    one = _pcfg(50, 1, seed=3)
    state, rng = SystemState(50, 2), Rng(3)
    for j in range(1, cfg.m + 1):
        ps = ParallelState(50, 1, 2, one.gamma_max, loads=state.loads.copy(),
                           esum=state.esum.copy())
        ps.placed = j - 1
        prng = rng.copy()
        run_parallel_round(ps, prng, one)
        allocate_ball(state, j, rng, cfg)
        assert np.array_equal(ps.loads, state.loads)
        assert np.array_equal(ps.esum, state.esum)
        assert np.array_equal(prng.state, rng.state)


@pytest.mark.parametrize("n", [2**8, 2**10])
def test_rounds_grow_slowly(n):
    rounds = [simulate(_pcfg(n, n, seed=s)).rounds for s in range(20)]
    assert np.mean(rounds) <= 3 * math.log2(math.log2(n)) + 5


def test_heavily_loaded_gap_stays_small():
    gaps = [simulate(_pcfg(1000, 10_000, seed=s)).report.gap for s in range(5)]
    assert max(gaps) <= 4


def test_parallel_needs_sampled_mode_and_variant():
    with pytest.raises(ConfigError):
        SimConfig(n=4, m=4, variant="parallel", mode="numbered")
    with pytest.raises(ConfigError):
        run_parallel(SimConfig(n=4, m=4))


def test_round_message_record():
    msg = RoundMessage(MessageKind.REPLY, ball_id=3, bin_id=1, round=2, est_gap=-0.5)
    assert msg.kind.value == "reply" and msg.est_gap == -0.5
