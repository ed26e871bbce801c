import math
import random
from collections import Counter, defaultdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import logsumexp

from conftest import dag_table_score, exact_edge_posterior, random_lattices, random_space
from hybridbn.chain import ChainConfig
from hybridbn.data import simulate
from hybridbn.graphs import GraphError, enumerate_dags
from hybridbn.lattice import ScoreLattices
from hybridbn.partition import (
    LabelledPartition,
    PartitionSampler,
    dag_to_partition,
    default_move_probs,
    neighbourhood_size,
    run_partition_chain,
    sample_dag_given_partition,
    score_partition,
)
from hybridbn.scores import dag_score, make_scorer
from hybridbn.space import SearchSpace


def edges(n, pairs):
    a = np.zeros((n, n), dtype=np.int8)
    for p, c in pairs:
        a[p, c] = 1
    return a


def uniform_lattices(n):
    return ScoreLattices.from_raw([np.zeros(1 << (n - 1))] * n, SearchSpace.full(n))


# the DAG 1 -> 3 -> 2, 5 -> 4 (1-based labels), peeled into [2 | 3 4 | 1 5]
CHAIN_FORK_DAG = edges(5, [(0, 2), (2, 1), (4, 3)])
THREE_ELEMENT_PARTITION = LabelledPartition(((1,), (2, 3), (0, 4)))


def composition_weights(n):
    """Number of labelled DAGs on n nodes per count of partition elements (exact integers)."""
    frontier = {(k, k, 1): 1 for k in range(1, n + 1)}
    out = defaultdict(int)
    while frontier:
        nxt = defaultdict(int)
        for (r, k, m), c in frontier.items():
            if r == n:
                out[m] += c
                continue
            for j in range(1, n - r + 1):
                nxt[(r + j, j, m + 1)] += c * math.comb(r + j, j) * (2**k - 1) ** j * 2 ** (j * (r - k))
        frontier = nxt
    return dict(out)


def test_dag_to_partition_examples():
    p = dag_to_partition(CHAIN_FORK_DAG)
    assert p == THREE_ELEMENT_PARTITION
    assert p.sizes == [1, 2, 2] and p.perm == [1, 2, 3, 0, 4]
    p2 = dag_to_partition(edges(3, [(2, 0), (2, 1)]))
    assert p2.sizes == [2, 1] and p2.perm == [0, 1, 2]
    assert dag_to_partition(np.zeros((4, 4))).sizes == [4]
    with pytest.raises(GraphError):
        dag_to_partition(edges(2, [(0, 1), (1, 0)]))


def test_partition_validation():
    with pytest.raises(ValueError):
        LabelledPartition(((1, 0),))
    with pytest.raises(ValueError):
        LabelledPartition(((0,), ()))
    with pytest.raises(ValueError):
        LabelledPartition(((0,), (2,)))
    assert LabelledPartition.from_sizes([2, 1], [0, 2, 1]).elements == ((0, 2), (1,))


def test_composition_counts_match_dag_counts():
    assert [sum(composition_weights(n).values()) for n in (1, 2, 3, 4, 5)] == [1, 3, 25, 543, 29281]


def test_unit_scores_give_108():
    assert score_partition(THREE_ELEMENT_PARTITION, uniform_lattices(5)) == pytest.approx(math.log(108), abs=1e-12)


def test_single_element_scores_empty_dag():
    rng = np.random.default_rng(0)
    lat, raw, _ = random_lattices(random_space(5, 0.5, rng), rng)
    p = LabelledPartition((tuple(range(5)),))
    assert score_partition(p, lat) == pytest.approx(sum(r[0] for r in raw), abs=1e-12)


def test_no_needed_parent_is_impossible():
    # node 0 sits left of node 1 but may not take it as a parent
    lat = ScoreLattices.from_raw([np.zeros(1)] * 2, SearchSpace.empty(2))
    assert score_partition(LabelledPartition(((0,), (1,))), lat) == -np.inf


@pytest.mark.parametrize("n,extension,seed", [(3, False, 0), (3, True, 1), (4, False, 2), (4, True, 3)])
def test_partition_scores_group_dags(n, extension, seed):
    rng = np.random.default_rng(seed)
    space = random_space(n, 0.6, rng)
    lat, raw, ext = random_lattices(space, rng, extension)
    groups = {}
    for a in enumerate_dags(n):
        s = dag_table_score(a, space, raw, ext)
        if s is not None:
            groups.setdefault(dag_to_partition(a), []).append(s)
    for p, scores in groups.items():
        assert score_partition(p, lat) == pytest.approx(logsumexp(scores), rel=1e-10)


def test_neighbourhood_sizes():
    assert neighbourhood_size([2, 1]) == 3
    assert neighbourhood_size([1]) == 0
    assert neighbourhood_size([1, 1]) == 1
    assert neighbourhood_size([3]) == 6


def test_join_acceptance_closed_form():
    raw = [np.array([0.0, 0.9]), np.array([0.2])]
    h = np.zeros((2, 2), dtype=np.int8)
    h[1, 0] = 1
    lat = ScoreLattices.from_raw(raw, SearchSpace(h))
    start = LabelledPartition(((0,), (1,)))
    # P(start) = S0({1}) S1(), P(joined) = S0() S1(); neighbourhoods 1 and 2
    ratio = math.exp(0.0 - 0.9) * 1 / 2
    rng = random.Random(0)
    acc = 0
    trials = 20_000
    for _ in range(trials):
        s = PartitionSampler(lat, start)
        acc += s.split_join(rng)
    assert abs(acc / trials - ratio) < 0.015


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 7), st.booleans(), st.integers(0, 10_000),
       st.lists(st.sampled_from(["split_join", "adjacent_swap", "global_swap", "relocation"]),
                min_size=1, max_size=50))
def test_incremental_matches_full(n, extension, seed, moves):
    rng = np.random.default_rng(seed)
    lat, _, _ = random_lattices(random_space(n, 0.6, rng), rng, extension)
    s = PartitionSampler(lat)
    r = random.Random(seed)
    for kind in moves:
        s.step(kind, r)
        state = s.state
        for e in state.elements:
            assert list(e) == sorted(e)
        assert abs(score_partition(state, lat) - s.total) < 1e-6
        assert np.isfinite(s.total)


def test_relocation_follows_scores():
    rng = np.random.default_rng(4)
    lat, _, _ = random_lattices(SearchSpace.full(4), rng)
    start = LabelledPartition(((1,), (0, 3), (2,)))
    s0 = PartitionSampler(lat, start)
    rest, _, cands = s0.relocation_candidates(3)
    targets = []
    for kind, t in cands:
        new = rest[:t] + [[3]] + rest[t:] if kind == "gap" else rest[:t] + [sorted(rest[t] + [3])] + rest[t + 1:]
        targets.append(LabelledPartition.canonical(new))
    assert len(set(targets)) == len(targets)
    logp = np.array([score_partition(p, lat) for p in targets])
    expect = np.exp(logp - logsumexp(logp))
    r = random.Random(1)
    counts = Counter()
    draws = 20_000
    for _ in range(draws):
        s = PartitionSampler(lat, start)
        s.relocate(3, r.random())
        counts[s.state] += 1
    obs = np.array([counts[p] for p in targets])
    assert obs.sum() == draws
    keep = expect * draws > 5
    assert stats.chisquare(obs[keep], expect[keep] / expect[keep].sum() * obs[keep].sum()).pvalue > 1e-3


def test_roundtrip_sampled_dags():
    rng = np.random.default_rng(5)
    lat, _, _ = random_lattices(random_space(5, 0.7, rng), rng, True)
    s = PartitionSampler(lat)
    r = random.Random(2)
    nrng = np.random.default_rng(0)
    for k in range(1000):
        s.step(["split_join", "adjacent_swap", "global_swap", "relocation"][k % 4], r)
        a = sample_dag_given_partition(s.state, lat, nrng)
        assert dag_to_partition(a) == s.state


def test_middle_node_parent_sets_uniform():
    lat = uniform_lattices(5)
    rng = np.random.default_rng(3)
    counts = Counter()
    for _ in range(12_000):
        a = sample_dag_given_partition(THREE_ELEMENT_PARTITION, lat, rng)
        counts[tuple(np.flatnonzero(a[:, 1]))] += 1
    assert len(counts) == 12
    assert stats.chisquare(list(counts.values())).pvalue > 1e-3


def test_single_element_samples_empty_dag():
    lat = uniform_lattices(4)
    a = sample_dag_given_partition(LabelledPartition(((0, 1, 2, 3),)), lat, np.random.default_rng(0))
    assert a.sum() == 0


def test_move_mixture_defaults():
    assert default_move_probs(4) == (0.25, 0.25, 0.25, 0.25)
    assert sum(default_move_probs(10)) == pytest.approx(1.0)
    assert default_move_probs(10)[3] == pytest.approx(0.1)


@pytest.mark.slow
def test_chain_matches_exact_n3():
    _, d = simulate(3, 1.0, n_obs=20, seed=12)
    sc = make_scorer(d)
    lat = ScoreLattices(sc, SearchSpace.full(3))
    dags = list(enumerate_dags(3))
    exact = exact_edge_posterior(dags, [dag_score(sc, a) for a in dags])
    res = run_partition_chain(ChainConfig(steps=100_000, thin=2, seed=4), lat)
    assert np.abs(res.edge_posterior("dag") - exact).max() < 0.02


@pytest.mark.slow
def test_uniform_scores_uniform_dags():
    res = run_partition_chain(ChainConfig(steps=100_000, thin=4, seed=7), uniform_lattices(3))
    counts = Counter(s.adjacency.tobytes() for s in res.samples)
    assert len(counts) == 25
    # thinned draws are close to independent; loose level for the residual correlation
    assert stats.chisquare(list(counts.values())).pvalue > 1e-4


@pytest.mark.slow
def test_average_element_size():
    w20 = composition_weights(20)
    tot = sum(w20.values())
    exact20 = sum(c * 20 / m for m, c in w20.items()) / tot
    assert abs(exact20 - 1.5) <= 0.2
    # the sampler reproduces the exact value where the full-space tables fit
    n = 7
    w = composition_weights(n)
    exact = sum(c * n / m for m, c in w.items()) / sum(w.values())
    res = run_partition_chain(ChainConfig(steps=60_000, thin=7, seed=3, record_states=True), uniform_lattices(n))
    est = np.mean([n / len(s) for s in res.states])
    assert abs(est - exact) < 0.03


def test_starting_partition_must_be_possible():
    lat = ScoreLattices.from_raw([np.zeros(1)] * 2, SearchSpace.empty(2))
    with pytest.raises(ValueError):
        run_partition_chain(ChainConfig(steps=10, start=((0,), (1,))), lat)
    with pytest.raises(ValueError):
        run_partition_chain(ChainConfig(steps=10, gamma=2.0), lat)
