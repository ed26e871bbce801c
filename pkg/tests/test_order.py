import itertools
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import logsumexp

from conftest import dag_table_score, order_compatible, random_lattices, random_space
from hybridbn.chain import ChainConfig, read_dag_stream, write_dag_stream, write_trace
from hybridbn.data import simulate
from hybridbn.graphs import enumerate_dags
from hybridbn.lattice import ScoreLattices
from hybridbn.order import (
    OrderSampler,
    default_move_probs,
    map_dag_given_order,
    run_chain,
    run_chains,
    sample_dag_given_order,
    score_order,
)
from hybridbn.scores import make_scorer
from hybridbn.space import SearchSpace


def uniform_lattices(n):
    space = SearchSpace.full(n)
    return ScoreLattices.from_raw([np.zeros(1 << (n - 1))] * n, space)


def test_single_node_order():
    lat = ScoreLattices.from_raw([np.array([-3.25])], SearchSpace.full(1))
    assert score_order([0], lat) == -3.25


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_uniform_full_space_counts_dags(n):
    lat = uniform_lattices(n)
    perm = list(np.random.default_rng(n).permutation(n))
    assert score_order(perm, lat) == pytest.approx(math.comb(n, 2) * math.log(2), abs=1e-12)


@pytest.mark.parametrize("n,extension,seed", [(3, False, 0), (3, True, 1), (4, False, 2), (4, True, 3)])
def test_order_score_matches_enumeration(n, extension, seed):
    _, d = simulate(n, 1.0, n_obs=25, seed=seed)
    rng = np.random.default_rng(seed)
    space = random_space(n, 0.5, rng)
    lat = ScoreLattices(make_scorer(d), space, extension=extension)
    raw = [nl.raw for nl in lat.nodes]
    ext = [(el.outside.tolist(), el.raw) for el in lat.ext] if extension else None
    dags = list(enumerate_dags(n))
    for perm in itertools.permutations(range(n)):
        scores = [dag_table_score(a, space, raw, ext) for a in dags if order_compatible(a, perm)]
        scores = [s for s in scores if s is not None]
        assert score_order(perm, lat) == pytest.approx(logsumexp(scores), rel=1e-10)
        assert score_order(perm, lat, "map") == pytest.approx(max(scores), rel=1e-12)
        adj, best = map_dag_given_order(perm, lat)
        assert order_compatible(adj, perm)
        assert best == pytest.approx(max(scores), rel=1e-12)
        assert dag_table_score(adj, space, raw, ext) == pytest.approx(best, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(
    st.integers(3, 9),
    st.booleans(),
    st.sampled_from(["sum", "map"]),
    st.integers(0, 10_000),
    st.lists(st.tuples(st.integers(0, 2), st.integers(0, 100), st.integers(0, 100), st.floats(0, 1)),
             min_size=1, max_size=60),
)
def test_incremental_matches_full_rescore(n, extension, mode, seed, moves):
    rng = np.random.default_rng(seed)
    lat, _, _ = random_lattices(random_space(n, 0.4, rng), rng, extension, scale=3.0)
    st_ = OrderSampler(lat, mode, list(rng.permutation(n)))
    for kind, a, b, u in moves:
        if kind == 0:
            p, q = a % n, b % n
            if p == q:
                continue
            _, prop = st_.propose_global(p, q)
            st_.commit(prop)
        elif kind == 1:
            _, prop = st_.propose_local(a % (n - 1))
            st_.commit(prop)
        else:
            st_.relocate(a % n, u)
        assert sorted(st_.perm) == list(range(n))
        ref = score_order(st_.perm, lat, "map" if mode == "map" else "sum")
        assert abs(st_.total - ref) < 1e-6
        assert abs(math.fsum(st_.c) - st_.total) < 1e-8


def test_proposal_delta_matches_rescore():
    rng = np.random.default_rng(4)
    lat, _, _ = random_lattices(random_space(8, 0.4, rng), rng, True)
    st_ = OrderSampler(lat, "sum", list(range(8)))
    base = st_.total
    d, _ = st_.propose_global(1, 6)
    perm = list(range(8))
    perm[1], perm[6] = perm[6], perm[1]
    assert base + d == pytest.approx(score_order(perm, lat), abs=1e-9)
    assert st_.perm == list(range(8))  # proposals leave the state alone


def test_local_transposition_touches_two_nodes():
    space = SearchSpace(np.zeros((4, 4), dtype=np.int8))
    rng = np.random.default_rng(0)
    lat, _, _ = random_lattices(space, rng)
    st_ = OrderSampler(lat, "sum", [0, 1, 2, 3])
    d, (_, changes) = st_.propose_local(1)
    assert sorted(v for v, _, _ in changes) == [1, 2]
    assert d == 0.0
    lat2, _, _ = random_lattices(space, rng, extension=True)
    st2 = OrderSampler(lat2, "sum", [0, 1, 2, 3])
    d2, (_, changes2) = st2.propose_local(1)
    assert len(changes2) == 2 and d2 != 0.0


def test_relocation_neighbourhood_size():
    rng = np.random.default_rng(1)
    lat, _, _ = random_lattices(random_space(6, 0.5, rng), rng, True)
    st_ = OrderSampler(lat, "sum", list(range(6)))
    deltas, _ = st_.relocation_scores(2)
    assert len(deltas) == 6
    assert deltas[2] == 0.0
    for q in range(6):
        perm = [v for v in range(6) if v != 2]
        perm.insert(q, 2)
        assert st_.total + deltas[q] == pytest.approx(score_order(perm, lat), abs=1e-9)


@pytest.mark.slow
def test_relocation_uniform_on_flat_landscape():
    lat = uniform_lattices(5)
    st_ = OrderSampler(lat, "sum", list(range(5)))
    rng = random.Random(0)
    counts = np.zeros(5)
    for _ in range(100_000):
        node = st_.perm[2]
        st_.relocate(node, rng.random())
        counts[st_.pos[node]] += 1
    assert stats.chisquare(counts).pvalue > 1e-3


def test_two_node_chain_stationary():
    raw = [np.array([0.0, 1.3]), np.array([0.0, -0.4])]
    lat = ScoreLattices.from_raw(raw, SearchSpace.full(2))
    res = run_chain(ChainConfig(steps=100_000, burn_in_fraction=0.0, thin=1, seed=5, record_states=True), lat)
    w = np.array([score_order([0, 1], lat), score_order([1, 0], lat)])
    exact = np.exp(w - logsumexp(w))
    freq = np.mean([s == (0, 1) for s in res.states])
    assert abs(freq - exact[0]) < 0.01


def test_map_finds_best_order_all_seeds():
    rng = np.random.default_rng(11)
    lat, _, _ = random_lattices(SearchSpace.full(5), rng, scale=4.0)
    best = max(score_order(p, lat, "map") for p in itertools.permutations(range(5)))
    for seed in range(20):
        res = run_chain(ChainConfig(steps=600, gamma=50.0, seed=seed), lat, mode="map")
        assert res.best_score == pytest.approx(best, abs=1e-12)


def test_map_equals_exhaustive_dag_max():
    _, d = simulate(5, 1.5, n_obs=50, seed=6)
    sc = make_scorer(d)
    lat = ScoreLattices(sc, SearchSpace.full(5))
    from hybridbn.scores import dag_score

    best = max(dag_score(sc, a) for a in enumerate_dags(5))
    res = run_chain(ChainConfig(steps=2000, gamma="adaptive", seed=1), lat, mode="map")
    assert res.best_score == pytest.approx(best, abs=1e-9)
    assert dag_score(sc, res.best_dag) == pytest.approx(best, abs=1e-9)


def test_greedy_flag_runs():
    rng = np.random.default_rng(2)
    lat, _, _ = random_lattices(random_space(6, 0.5, rng), rng)
    res = run_chain(ChainConfig(steps=300, greedy=True, seed=0, move_probs=(0, 0, 1)), lat, mode="map")
    assert np.all(np.diff(res.trace) >= -1e-9)


def test_move_probs_fallback():
    assert default_move_probs(5) == pytest.approx((1 / 3, 1 / 3, 1 / 3))
    assert default_move_probs(7) == pytest.approx((1 / 3, 1 / 3, 1 / 3))
    p = default_move_probs(20)
    assert p == pytest.approx((0.3, 0.65, 0.05))
    rng = np.random.default_rng(0)
    lat, _, _ = random_lattices(SearchSpace.full(4), rng)
    res = run_chain(ChainConfig(steps=3000, seed=0), lat)
    assert set(res.stats.proposed) == {"global", "local", "relocation"}


def test_sample_uniform_over_order_dags():
    lat = uniform_lattices(3)
    perm = [2, 0, 1]
    rng = np.random.default_rng(0)
    counts = {}
    draws = 40_000
    for _ in range(draws):
        a = sample_dag_given_order(perm, lat, rng)
        assert order_compatible(a, perm)
        counts[a.tobytes()] = counts.get(a.tobytes(), 0) + 1
    assert len(counts) == 8
    assert stats.chisquare(list(counts.values())).pvalue > 1e-3


def test_sample_single_parent_probability():
    h = np.zeros((2, 2), dtype=np.int8)
    h[0, 1] = 1
    raw = [np.array([0.0]), np.array([0.0, 1.5])]
    lat = ScoreLattices.from_raw(raw, SearchSpace(h))
    rng = np.random.default_rng(3)
    freq = np.mean([sample_dag_given_order([1, 0], lat, rng)[0, 1] for _ in range(20_000)])
    assert abs(freq - 1 / (1 + math.exp(-1.5))) < 0.01


def test_empty_space_gives_empty_dag():
    lat = ScoreLattices.from_raw([np.array([0.0])] * 4, SearchSpace.empty(4))
    res = run_chain(ChainConfig(steps=200, seed=0, thin=5), lat)
    assert all(s.adjacency.sum() == 0 for s in res.samples)


def test_order_bias_is_real():
    lat = uniform_lattices(3)
    res = run_chain(ChainConfig(steps=60_000, thin=3, seed=2), lat)
    p = res.edge_posterior("dag")
    exact = 8 / 25
    se = math.sqrt(exact * (1 - exact) / len(res.samples))
    off = ~np.eye(3, dtype=bool)
    assert np.all(np.abs(p[off] - exact) > 4 * se)
    assert np.allclose(p[off], 0.25, atol=0.02)


def test_adaptive_gamma_bounded_and_sample_rejects_it():
    rng = np.random.default_rng(5)
    lat, _, _ = random_lattices(random_space(10, 0.3, rng), rng, scale=5.0)
    res = run_chain(ChainConfig(steps=3000, gamma="adaptive", seed=1), lat, mode="map")
    assert res.gamma_trace and all(1.0 <= g <= 64.0 for g in res.gamma_trace)
    with pytest.raises(ValueError):
        run_chain(ChainConfig(steps=10, gamma="adaptive"), lat, mode="sample")


def test_resync_drift_small():
    rng = np.random.default_rng(8)
    lat, _, _ = random_lattices(random_space(15, 0.3, rng), rng, True, scale=3.0)
    res = run_chain(ChainConfig(steps=5000, seed=3, resync_every=500), lat)
    assert res.max_drift < 1e-6


def test_chains_deterministic_and_parallel_equal():
    rng = np.random.default_rng(9)
    lat, _, _ = random_lattices(random_space(6, 0.5, rng), rng)
    cfg = ChainConfig(steps=500, seed=0)
    a = run_chains(cfg, lat, [1, 2], workers=1)
    b = run_chains(cfg, lat, [1, 2], workers=2)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.trace, y.trace)
        assert all(np.array_equal(s.adjacency, t.adjacency) for s, t in zip(x.samples, y.samples))


def test_trace_and_stream_io(tmp_path):
    rng = np.random.default_rng(10)
    lat, _, _ = random_lattices(random_space(5, 0.5, rng), rng)
    res = run_chain(ChainConfig(steps=200, seed=0, thin=10), lat)
    write_trace(res, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "step,log_score"
    write_dag_stream(res.samples, tmp_path / "d.csv")
    back = read_dag_stream(tmp_path / "d.csv", 5)
    assert len(back) == len(res.samples)
    for s, t in zip(res.samples, back):
        np.testing.assert_array_equal(s.adjacency, t.adjacency)
