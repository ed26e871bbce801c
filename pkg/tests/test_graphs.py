import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridbn.chain import DagSample
from hybridbn.graphs import (
    Cpdag,
    GraphError,
    consensus,
    dag_to_cpdag,
    diagnostics,
    edge_posteriors,
    enumerate_dags,
    is_acyclic,
    shd,
    topological_order,
    tpr_fprn,
)


def edges(n, pairs):
    a = np.zeros((n, n), dtype=np.int8)
    for p, c in pairs:
        a[p, c] = 1
    return a


def markov_signature(a):
    """Skeleton plus v-structures: equal signatures mean Markov equivalence."""
    a = a != 0
    skel = a | a.T
    vs = set()
    for c in range(a.shape[0]):
        pa = np.flatnonzero(a[:, c])
        for p, q in itertools.combinations(pa, 2):
            if not skel[p, q]:
                vs.add((int(p), int(q), c))
    return skel.tobytes(), frozenset(vs)


def test_dag_counts():
    assert [sum(1 for _ in enumerate_dags(n)) for n in (1, 2, 3, 4)] == [1, 3, 25, 543]


def test_collider_stays_directed():
    cp = dag_to_cpdag(edges(3, [(0, 2), (1, 2)]))
    assert cp.directed == {(0, 2), (1, 2)}
    assert cp.undirected == set()


def test_chain_becomes_undirected():
    cp = dag_to_cpdag(edges(3, [(0, 1), (1, 2)]))
    assert cp.directed == set()
    assert cp.undirected == {(0, 1), (1, 2)}


def test_empty_dag():
    assert dag_to_cpdag(np.zeros((4, 4))).adjacency.sum() == 0


def test_cyclic_rejected():
    with pytest.raises(GraphError):
        dag_to_cpdag(edges(3, [(0, 1), (1, 2), (2, 0)]))
    assert not is_acyclic(edges(2, [(0, 1), (1, 0)]))


def test_three_node_classes():
    classes = {}
    for a in enumerate_dags(3):
        classes.setdefault(markov_signature(a), set()).add(dag_to_cpdag(a))
    assert len(classes) == 11
    assert all(len(v) == 1 for v in classes.values())


@pytest.mark.parametrize("n", [3, 4])
def test_cpdag_matches_equivalence_class(n):
    groups = {}
    for a in enumerate_dags(n):
        groups.setdefault(markov_signature(a), []).append(a != 0)
    for members in groups.values():
        stack = np.array(members)
        always = stack.all(axis=0)
        ever = stack.any(axis=0)
        # an edge is directed in the CPDAG exactly when every member agrees on it
        expect = always | (ever & ever.T)
        for a in members:
            np.testing.assert_array_equal(dag_to_cpdag(a).adjacency != 0, expect)


def test_meek_r1_orients_downstream_edge():
    # 0 -> 2 <- 1 collider then 2 - 3 must become 2 -> 3
    cp = dag_to_cpdag(edges(4, [(0, 2), (1, 2), (2, 3)]))
    assert (2, 3) in cp.directed


def test_topological_order_parents_after_children():
    a = edges(4, [(0, 1), (1, 2), (0, 3)])
    order = topological_order(a)
    pos = {v: k for k, v in enumerate(order)}
    assert all(pos[p] > pos[c] for p, c in zip(*np.nonzero(a)))


def test_shd_examples():
    a = dag_to_cpdag(edges(3, [(0, 1), (1, 2)]))
    assert shd(a, a) == 0
    b = Cpdag(np.array([[0, 1, 1], [1, 0, 1], [1, 1, 0]], dtype=np.int8))
    assert shd(a, b) == 1
    directed = edges(2, [(0, 1)])
    undirected = np.array([[0, 1], [1, 0]])
    assert shd(directed, undirected) == 1
    assert shd(directed, directed.T) == 1
    with pytest.raises(GraphError):
        shd(np.zeros((2, 2)), np.zeros((3, 3)))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 542), min_size=3, max_size=3))
def test_shd_is_metric(idx):
    dags = _dags4()
    a, b, c = (dag_to_cpdag(dags[i]) for i in idx)
    assert shd(a, b) == shd(b, a)
    assert (shd(a, b) == 0) == (a == b)
    assert shd(a, c) <= shd(a, b) + shd(b, c)


_CACHE = {}


def _dags4():
    if "d4" not in _CACHE:
        _CACHE["d4"] = list(enumerate_dags(4))
    return _CACHE["d4"]


def test_edge_posteriors_frequencies():
    a = edges(3, [(0, 1)])
    b = edges(3, [(0, 1), (1, 2)])
    p = edge_posteriors([a, b], mode="dag")
    assert p[0, 1] == 1.0 and p[1, 2] == 0.5
    same = edge_posteriors([DagSample(a, 0, 0, 0.0)] * 3, mode="dag")
    assert set(np.unique(same)) <= {0.0, 1.0}
    with pytest.raises(ValueError):
        edge_posteriors([])


def test_edge_posteriors_cpdag_mode_symmetric():
    p = edge_posteriors([edges(2, [(0, 1)])], mode="cpdag")
    assert p[0, 1] == p[1, 0] == 1.0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 24), min_size=1, max_size=30))
def test_edge_posteriors_recount(idx):
    dags = list(enumerate_dags(3))
    sample = [dags[i] for i in idx]
    p = edge_posteriors(sample, mode="dag")
    for i, j in itertools.permutations(range(3), 2):
        assert p[i, j] == sum(int(s[i, j]) for s in sample) / len(sample)


def test_diagnostics_identical_and_flipped():
    a = np.array([[0, 0.3, 0.9], [0.1, 0, 0.6], [0, 0.2, 0]])
    d = diagnostics(a, a)
    assert d["rho_squared"] == pytest.approx(1.0) and d["rmse"] == 0.0
    b = np.array([[0, 0.7, 0], [0, 0, 0], [0, 0, 0]])
    a2 = np.array([[0, 0.3, 0], [0, 0, 0], [0, 0.6, 0]])
    b2 = np.array([[0, 0.7, 0], [0, 0, 0], [0, 0.4, 0]])
    flip = diagnostics(a2, b2)
    assert flip["rho_squared"] == pytest.approx(1.0) and flip["rmse"] > 0
    undefined = diagnostics(b, b * 0)
    assert not undefined["defined"] and np.isnan(undefined["rho_squared"])
    one_flat = diagnostics(np.array([[0, 1.0], [1.0, 0]]), np.array([[0, 0.9], [1.0, 0]]))
    assert one_flat["defined"] and not one_flat["rho_squared_defined"]
    assert one_flat["rmse"] == pytest.approx(math.sqrt(0.005))


def test_tpr_fprn_examples():
    truth = edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)])
    assert tpr_fprn(truth, truth)["tpr"] == 1.0
    half = edges(6, [(1, 0), (2, 1)])
    m = tpr_fprn(half, truth)
    assert (m["tp"], m["fp"]) == (2, 0)
    empty = tpr_fprn(np.zeros((6, 6)), truth)
    assert empty["tpr"] == 0 and empty["fprn"] == 0
    extra = tpr_fprn(edges(6, [(0, 5)]), truth)
    assert extra["fprn"] == pytest.approx(0.2)
    assert np.isnan(tpr_fprn(truth, np.zeros((6, 6)))["tpr"])


def test_consensus_strict_threshold():
    p = np.array([[0, 0.5], [0.51, 0]])
    np.testing.assert_array_equal(consensus(p, 0.5), [[0, 0], [1, 0]])


def test_cpdag_csv(tmp_path):
    cp = dag_to_cpdag(edges(3, [(0, 2), (1, 2)]))
    cp.save(tmp_path / "c.csv", ["a", "b", "c"])
    lines = (tmp_path / "c.csv").read_text(encoding="utf-8").splitlines()
    assert lines == ["from,to,direction", "a,c,→", "b,c,→"]
    dag_to_cpdag(edges(2, [(0, 1)])).save(tmp_path / "u.csv")
    assert (tmp_path / "u.csv").read_text(encoding="utf-8").splitlines()[1] == "X1,X2,–"
