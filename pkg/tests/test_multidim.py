from __future__ import annotations

import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from allocbench import ConfigError, SimConfig, simulate
from allocbench.bench.reference import first_divergence, reference_allocate
from allocbench.multidim import (MdBall, MdBinState, MdSystemState, allocate_md_ball,
                                 generate_md_ball, load_md_weights, md_gap, run_multidim)
from allocbench.rng import STREAM_MD, Rng, derive_seed


def _mcfg(n, m, D, f, **kw):
    return SimConfig(n=n, m=m, variant="multidim", dims=D, populated=f, **kw)


# ----------------------------------------------------------------- generator

def test_full_ball_populates_everything():
    assert sorted(generate_md_ball(5, 5, Rng(1)).populated) == [0, 1, 2, 3, 4]


def test_single_dimension_is_uniform_index():
    rng = Rng(2)
    counts = np.bincount([generate_md_ball(6, 1, rng).populated[0] for _ in range(60_000)],
                         minlength=6)
    assert np.all(np.abs(counts - 10_000) <= 5 * np.sqrt(10_000 * 5 / 6))


def test_two_of_four_subsets_uniform():
    rng = Rng(2024)
    subsets = list(itertools.combinations(range(4), 2))
    counts = dict.fromkeys(subsets, 0)
    T = 100_000
    for _ in range(T):
        counts[tuple(sorted(generate_md_ball(4, 2, rng).populated))] += 1
    se = np.sqrt(T * (1 / 6) * (5 / 6))
    assert all(abs(c - T / 6) <= 3 * se for c in counts.values())


def test_generator_rejects_bad_shapes():
    with pytest.raises(ConfigError):
        generate_md_ball(3, 4, Rng(0))
    with pytest.raises(ConfigError):
        generate_md_ball(3, 0, Rng(0))
    with pytest.raises(ConfigError):
        generate_md_ball(3, 2, Rng(0), weights=[1.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        MdBall(3, (0, 0))


def test_custom_weights_never_pick_zero_dimensions():
    rng = Rng(9)
    for _ in range(2000):
        ball = generate_md_ball(4, 2, rng, weights=[1.0, 0.0, 3.0, 1.0])
        assert 1 not in ball.populated and len(set(ball.populated)) == 2


# -------------------------------------------------------------------- md_gap

def test_md_gap_no_balls():
    assert md_gap([MdBinState([0, 0]), MdBinState([0, 0])], 0, 2, 1) == 0


def test_md_gap_one_full_ball_two_bins():
    bins = [MdBinState([1, 1]), MdBinState([0, 0])]
    assert md_gap(bins, 1, 2, 2) == pytest.approx(0.5)


def test_md_gap_accepts_matrix_and_checks_width():
    assert md_gap(np.array([[2, 0], [0, 2]]), 2, 2, 2) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        md_gap(np.zeros((2, 3)), 1, 2, 1)


def test_bin_scalar_load():
    assert MdBinState([1, 0, 2]).scalar_load == 3


# ---------------------------------------------------------------- allocation

def test_one_dimension_matches_unweighted():
    plain = simulate(SimConfig(n=50, m=3000, seed=6), trace=True)
    md = simulate(_mcfg(50, 3000, 1, 1, seed=6), trace=True)
    assert [r.dest for r in plain.trace] == [r.dest for r in md.trace]
    assert [r.state_hash for r in plain.trace] == [r.state_hash for r in md.trace]
    assert np.array_equal(md.dim_loads[:, 0], plain.loads.astype(np.int64))


def test_scalar_consistency_and_zero_sum():
    cfg = _mcfg(100, 2000, 8, 3, seed=3)
    r = simulate(cfg, trace=True)
    placed = np.bincount([rec.dest for rec in r.trace], minlength=cfg.n)
    assert np.array_equal(r.dim_loads.sum(axis=1), 3 * placed)
    assert np.array_equal(r.loads, 3 * placed)
    assert all(abs(rec.net_change) <= 1e-9 for rec in r.trace if rec.ungated)
    assert r.stats["zero_sum_violations"] == 0


def test_dimension_relabelling_leaves_placement_unchanged():
    # decisions see only the scalar sum; relabelling dimensions is a no-op for them
    cfg = _mcfg(64, 800, 6, 2, seed=14)
    r = simulate(cfg, trace=True)
    perm = np.random.default_rng(0).permutation(6)
    state = MdSystemState.for_config(cfg)
    rng, mdrng = Rng(14), Rng(derive_seed(14, STREAM_MD))
    for rec in r.trace:
        ball = generate_md_ball(6, 2, mdrng)
        out = allocate_md_ball(state, MdBall(6, tuple(int(perm[q]) for q in ball.populated)),
                               rng, cfg)
        assert out.destination == rec.dest
    assert np.array_equal(state.dim_loads[:, perm], r.dim_loads)


def test_per_ball_api_matches_batch():
    cfg = _mcfg(40, 600, 5, 2, seed=21, d=3)
    r = simulate(cfg, trace=True)
    state = MdSystemState.for_config(cfg)
    rng, mdrng = Rng(21), Rng(derive_seed(21, STREAM_MD))
    for rec in r.trace:
        out = allocate_md_ball(state, generate_md_ball(5, 2, mdrng), rng, cfg)
        assert (out.destination, out.candidates) == (rec.dest, rec.candidates)
    assert np.array_equal(state.dim_loads, r.dim_loads)
    bins = state.md_bins
    assert md_gap(bins, cfg.m, 5, 2) == pytest.approx(r.md_gap)
    assert all(b.scalar_load == load for b, load in zip(bins, r.loads))


def test_per_ball_api_validates_shape():
    cfg = _mcfg(10, 10, 4, 2)
    with pytest.raises(ConfigError):
        allocate_md_ball(MdSystemState.for_config(cfg), MdBall(4, (0,)), Rng(0), cfg)
    with pytest.raises(ConfigError):
        run_multidim(SimConfig(n=4, m=4))


@pytest.mark.parametrize("mode", ["numbered", "sampled"])
def test_trace_matches_reference(mode):
    cfg = _mcfg(32, 500, 6, 3, seed=8, mode=mode)
    r = simulate(cfg, trace=True)
    ref = reference_allocate(cfg)
    assert first_divergence(r.trace, ref.trace) is None
    assert np.array_equal(r.dim_loads, np.asarray(ref.dim_loads))
    assert r.md_gap == pytest.approx(ref.md_gap, abs=1e-12)


@given(st.integers(1, 24), st.integers(0, 300), st.integers(1, 6), st.data())
@settings(max_examples=25, deadline=None)
def test_reference_agreement_random(n, m, D, data):
    f = data.draw(st.integers(1, D))
    d = data.draw(st.integers(1, min(n, 3)))
    cfg = _mcfg(n, m, D, f, d=d, seed=data.draw(st.integers(0, 2**63)))
    r = simulate(cfg)
    ref = reference_allocate(cfg)
    assert np.array_equal(r.dim_loads, np.asarray(ref.dim_loads))


def test_constant_md_gap_at_m_equals_n():
    n = 1000
    gaps = [simulate(_mcfg(n, n, 16, 4, seed=s)).md_gap for s in range(50)]
    assert sum(g <= 3 for g in gaps) >= 48


def test_custom_distribution_flagged_no_claim(tmp_path):
    path = tmp_path / "dims.json"
    path.write_text(json.dumps({"weights": [4, 1, 1, 1]}))
    weights = load_md_weights(path)
    assert weights == (4.0, 1.0, 1.0, 1.0)
    r = simulate(_mcfg(50, 500, 4, 2, md_weights=weights, seed=1))
    assert r.no_claim
    realised = r.dim_loads.sum(axis=0) / 50
    assert r.md_gap == pytest.approx(float(np.max(r.dim_loads.max(axis=0) - realised)))
    assert realised[0] > realised[1]
    assert not simulate(_mcfg(50, 500, 4, 2, seed=1)).no_claim


def test_load_md_weights_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_md_weights(bad)
    bad.write_text(json.dumps({"w": [1]}))
    with pytest.raises(ConfigError):
        load_md_weights(bad)
    with pytest.raises(ConfigError):
        load_md_weights(tmp_path / "missing.json")
    lst = tmp_path / "list.json"
    lst.write_text("[1, 2]")
    assert load_md_weights(lst) == (1.0, 2.0)
