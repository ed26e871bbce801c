"""DAG and CPDAG utilities plus evaluation metrics.

Adjacency matrices are ``n x n`` with ``a[p, c] = 1`` for an edge ``p -> c``.
A CPDAG stores undirected edges as ``a[p, c] = a[c, p] = 1``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class GraphError(ValueError):
    pass


def topological_order(adj) -> list[int]:
    """Kahn peeling; raises :class:`GraphError` on a cycle.

    Returned with parents *after* children (the order convention used by the
    samplers), i.e. the reverse of the usual source-first sort.
    """
    adj = np.asarray(adj) != 0
    n = adj.shape[0]
    indeg = adj.sum(axis=0).astype(int)
    ready = [i for i in range(n) if indeg[i] == 0]
    out = []
    while ready:
        ready.sort()
        v = ready.pop(0)
        out.append(v)
        for c in np.flatnonzero(adj[v]):
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(int(c))
    if len(out) != n:
        raise GraphError("graph contains a directed cycle")
    return out[::-1]


def is_acyclic(adj) -> bool:
    try:
        topological_order(adj)
    except GraphError:
        return False
    return True


@dataclass(frozen=True)
class Cpdag:
    adjacency: np.ndarray

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def directed(self) -> set[tuple[int, int]]:
        a = self.adjacency != 0
        return {(int(p), int(c)) for p, c in zip(*np.nonzero(a & ~a.T))}

    @property
    def undirected(self) -> set[tuple[int, int]]:
        a = self.adjacency != 0
        return {(int(p), int(c)) for p, c in zip(*np.nonzero(np.triu(a & a.T)))}

    def __eq__(self, other):
        return isinstance(other, Cpdag) and np.array_equal(
            self.adjacency != 0, other.adjacency != 0
        )

    def __hash__(self):
        return hash((self.adjacency != 0).tobytes())

    def save(self, path, names=None) -> None:
        names = names or [f"X{i + 1}" for i in range(self.n)]
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["from", "to", "direction"])
            for p, c in sorted(self.directed):
                w.writerow([names[p], names[c], "→"])
            for p, c in sorted(self.undirected):
                w.writerow([names[p], names[c], "–"])


def _meek_closure(a: np.ndarray) -> np.ndarray:
    """Apply orientation rules R1-R3 until nothing changes (R1, R2, R3 order)."""
    n = a.shape[0]
    changed = True
    while changed:
        changed = False
        und = a & a.T
        dirc = a & ~a.T
        adjc = a | a.T
        for x in range(n):
            for y in range(n):
                if not und[x, y]:
                    continue
                # R1: z -> x - y, z and y non-adjacent  =>  x -> y
                r1 = np.any(dirc[:, x] & ~adjc[:, y] & (np.arange(n) != y))
                # R2: x -> z -> y  =>  x -> y
                r2 = np.any(dirc[x, :] & dirc[:, y])
                # R3: x - z1 -> y, x - z2 -> y, z1, z2 non-adjacent  =>  x -> y
                r3 = False
                zs = np.flatnonzero(und[x, :] & dirc[:, y])
                for i1 in range(len(zs)):
                    for i2 in range(i1 + 1, len(zs)):
                        if not adjc[zs[i1], zs[i2]]:
                            r3 = True
                            break
                    if r3:
                        break
                if r1 or r2 or r3:
                    a[y, x] = False
                    und[x, y] = und[y, x] = False
                    dirc[x, y] = True
                    changed = True
    return a


def dag_to_cpdag(adj) -> Cpdag:
    """CPDAG of the Markov equivalence class of a DAG.

    Keeps v-structure edges directed, leaves the rest of the skeleton undirected
    and then closes the pattern under the orientation rules.
    """
    g = np.asarray(adj) != 0
    if not is_acyclic(g):
        raise GraphError("dag_to_cpdag needs an acyclic graph")
    n = g.shape[0]
    skel = g | g.T
    a = skel.copy()
    for c in range(n):
        pa = np.flatnonzero(g[:, c])
        for i in range(len(pa)):
            for j in range(i + 1, len(pa)):
                p, q = pa[i], pa[j]
                if not skel[p, q]:
                    a[c, p] = False
                    a[c, q] = False
    a = _meek_closure(a)
    return Cpdag(a.astype(np.int8))


def _pair_states(a: np.ndarray) -> np.ndarray:
    a = a != 0
    iu = np.triu_indices(a.shape[0], k=1)
    return a[iu].astype(int) + 2 * a.T[iu].astype(int)


def shd(a, b) -> int:
    """Structural Hamming distance between two CPDAGs (or DAGs).

    Each unordered pair contributes 1 when its state differs: missing or extra
    edge, reversed orientation, or directed versus undirected.
    """
    a = a.adjacency if isinstance(a, Cpdag) else np.asarray(a)
    b = b.adjacency if isinstance(b, Cpdag) else np.asarray(b)
    if a.shape != b.shape:
        raise GraphError(f"size mismatch: {a.shape} vs {b.shape}")
    return int(np.sum(_pair_states(a) != _pair_states(b)))


def edge_posteriors(samples, mode: str = "cpdag") -> np.ndarray:
    """Edge frequencies over a stream of DAG adjacency matrices (or DagSample objects)."""
    total = None
    count = 0
    for s in samples:
        adj = getattr(s, "adjacency", s)
        adj = np.asarray(adj) != 0
        if mode == "cpdag":
            adj = dag_to_cpdag(adj).adjacency != 0
        elif mode != "dag":
            raise ValueError("mode must be 'dag' or 'cpdag'")
        total = adj.astype(float) if total is None else total + adj
        count += 1
    if count == 0:
        raise ValueError("edge_posteriors needs at least one sample")
    return total / count


def consensus(posterior: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Edges whose posterior probability exceeds ``threshold``."""
    return (np.asarray(posterior) > threshold).astype(np.int8)


def diagnostics(run_a, run_b, threshold: float = 0.05) -> dict:
    """Squared correlation and RMSE between two runs' edge probabilities.

    Only off-diagonal entries above ``threshold`` in at least one run count.
    With fewer than two such entries both values are ``nan`` and ``defined`` is
    False. When exactly one run is constant over those entries the correlation
    does not exist: ``rho_squared`` stays ``nan`` and ``rho_squared_defined`` is
    False while the RMSE is still reported.
    """
    a = np.asarray(run_a, dtype=float)
    b = np.asarray(run_b, dtype=float)
    if a.shape != b.shape:
        raise GraphError("runs must have the same shape")
    off = ~np.eye(a.shape[0], dtype=bool)
    keep = off & ((a > threshold) | (b > threshold))
    x, y = a[keep], b[keep]
    out = {"n_edges": int(keep.sum()), "rho_squared": float("nan"), "rmse": float("nan"),
           "defined": False, "rho_squared_defined": False}
    if x.size < 2:
        return out
    out["rmse"] = float(np.sqrt(np.mean((x - y) ** 2)))
    if np.ptp(x) == 0 and np.ptp(y) == 0 and np.array_equal(x, y):
        out["rho_squared"] = 1.0
    elif np.ptp(x) > 0 and np.ptp(y) > 0:
        out["rho_squared"] = float(np.corrcoef(x, y)[0, 1] ** 2)
    out["defined"] = True
    out["rho_squared_defined"] = not np.isnan(out["rho_squared"])
    return out


def tpr_fprn(estimate, truth) -> dict:
    """Skeleton true and false positives, both divided by the number of true edges."""
    est = estimate.adjacency if isinstance(estimate, Cpdag) else np.asarray(estimate)
    tru = truth.adjacency if isinstance(truth, Cpdag) else np.asarray(truth)
    iu = np.triu_indices(tru.shape[0], k=1)
    es = ((est != 0) | (est.T != 0))[iu]
    ts = ((tru != 0) | (tru.T != 0))[iu]
    P = int(ts.sum())
    tp = int(np.sum(es & ts))
    fp = int(np.sum(es & ~ts))
    if P == 0:
        return {"tp": tp, "fp": fp, "p": 0, "tpr": float("nan"), "fprn": float("nan")}
    return {"tp": tp, "fp": fp, "p": P, "tpr": tp / P, "fprn": fp / P}


def enumerate_dags(n: int):
    """Yield every labelled DAG on ``n`` nodes as an int8 adjacency matrix."""
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    for states in np.ndindex(*([3] * len(pairs))):
        a = np.zeros((n, n), dtype=np.int8)
        for (i, j), s in zip(pairs, states):
            if s == 1:
                a[i, j] = 1
            elif s == 2:
                a[j, i] = 1
        if is_acyclic(a):
            yield a
