"""Search spaces: PC-style skeletons and iterative expansion around the best DAG."""

from __future__ import annotations

import hashlib
import itertools
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _st

from .data import Dataset, read_adjacency, write_adjacency

log = logging.getLogger(__name__)


class SpaceError(ValueError):
    pass


@dataclass
class SearchSpace:
    """Directed permissibility graph: ``h_matrix[j, i] == 1`` lets ``j`` be a parent of ``i``."""

    h_matrix: np.ndarray
    extension: bool = False

    def __post_init__(self):
        h = np.asarray(self.h_matrix, dtype=np.int8).copy()
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise SpaceError("permissibility matrix must be square")
        if np.any((h != 0) & (h != 1)):
            raise SpaceError("permissibility matrix must be 0/1")
        np.fill_diagonal(h, 0)
        self.h_matrix = h
        self._parents = [np.flatnonzero(h[:, i]) for i in range(h.shape[0])]

    @property
    def n(self) -> int:
        return self.h_matrix.shape[0]

    def parents(self, i: int) -> np.ndarray:
        return self._parents[i]

    @property
    def permissible(self) -> list[np.ndarray]:
        return list(self._parents)

    @property
    def max_parents(self) -> int:
        return max((len(p) for p in self._parents), default=0)

    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.h_matrix, self.h_matrix.T))

    def digest(self) -> str:
        return hashlib.sha256(self.h_matrix.tobytes()).hexdigest()[:16]

    def with_extension(self, flag: bool = True) -> "SearchSpace":
        return SearchSpace(self.h_matrix, flag)

    @classmethod
    def full(cls, n: int, extension: bool = False) -> "SearchSpace":
        return cls(1 - np.eye(n, dtype=np.int8), extension)

    @classmethod
    def empty(cls, n: int, extension: bool = False) -> "SearchSpace":
        return cls(np.zeros((n, n), dtype=np.int8), extension)

    def save(self, path, names=None) -> None:
        write_adjacency(self.h_matrix, path, names)

    @classmethod
    def load(cls, path, extension: bool = False) -> "SearchSpace":
        adj, _ = read_adjacency(path)
        return cls(adj, extension)


def fisher_z_pvalue(corr: np.ndarray, n_obs: int, i: int, j: int, cond) -> float:
    cond = list(cond)
    df = n_obs - len(cond) - 3
    if df < 1:
        return 1.0
    idx = [i, j] + cond
    prec = np.linalg.pinv(corr[np.ix_(idx, idx)])
    r = -prec[0, 1] / np.sqrt(prec[0, 0] * prec[1, 1])
    r = float(np.clip(r, -1 + 1e-12, 1 - 1e-12))
    z = np.sqrt(df) * abs(np.arctanh(r))
    return float(2.0 * _st.norm.sf(z))


def binary_chi2_pvalue(x: np.ndarray, i: int, j: int, cond) -> float:
    """Pearson chi-squared test of X_i independent of X_j, stratified by ``cond``."""
    cond = list(cond)
    cfg = np.zeros(x.shape[0], dtype=np.int64)
    for k, c in enumerate(cond):
        cfg |= x[:, c].astype(np.int64) << k
    cell = (cfg * 4 + 2 * x[:, i].astype(np.int64) + x[:, j].astype(np.int64))
    counts = np.bincount(cell, minlength=4 << len(cond)).reshape(-1, 2, 2).astype(float)
    tot = counts.sum(axis=(1, 2))
    ri = counts.sum(axis=2)
    cj = counts.sum(axis=1)
    ok = (tot > 0) & np.all(ri > 0, axis=1) & np.all(cj > 0, axis=1)
    if not ok.any():
        return 1.0
    c, t, r_, c_ = counts[ok], tot[ok], ri[ok], cj[ok]
    expected = r_[:, :, None] * c_[:, None, :] / t[:, None, None]
    stat = float(np.sum((c - expected) ** 2 / expected))
    return float(_st.chi2.sf(stat, int(ok.sum())))


def pc_skeleton(d: Dataset, alpha: float = 0.05, max_cond: int | None = None) -> SearchSpace:
    """Skeleton phase of the PC algorithm with order-independent edge removal.

    Starting from the complete graph, each level ``l`` tests every adjacent pair
    against conditioning sets of size ``l`` drawn from the neighbourhoods fixed
    at the start of the level, in lexicographic order. Edges are deleted as soon
    as independence is not rejected at level ``alpha``. Continuous data use
    Fisher's z on partial correlations; binary data a stratified chi-squared test.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    n = d.n_vars
    x = d.values
    if d.kind == "continuous":
        sd = x.std(axis=0)
        if np.any(sd == 0):
            raise SpaceError("constant column(s) in data: " + ", ".join(
                d.var_names[k] for k in np.flatnonzero(sd == 0)))
        corr = np.corrcoef(x, rowvar=False)

        def pval(i, j, s):
            return fisher_z_pvalue(corr, d.n_obs, i, j, s)
    else:

        def pval(i, j, s):
            return binary_chi2_pvalue(x, i, j, s)

    adj = ~np.eye(n, dtype=bool)
    level = 0
    while True:
        frozen = [np.flatnonzero(adj[i]) for i in range(n)]
        if all(len(f) - 1 < level for f in frozen):
            break
        if max_cond is not None and level > max_cond:
            break
        for i in range(n):
            for j in range(i + 1, n):
                if not adj[i, j]:
                    continue
                removed = False
                for a, b in ((i, j), (j, i)):
                    nb = [k for k in frozen[a] if k != b]
                    if len(nb) < level:
                        continue
                    for s in itertools.combinations(nb, level):
                        if pval(i, j, s) > alpha:
                            adj[i, j] = adj[j, i] = False
                            removed = True
                            break
                    if removed:
                        break
        level += 1
    return SearchSpace(adj.astype(np.int8))


@dataclass
class IterationRecord:
    iteration: int
    space_hash: str
    n_core_edges: int
    best_dag: np.ndarray
    best_score: float
    iteration_score: float
    seconds: float


@dataclass
class IterationTrace:
    records: list[IterationRecord] = field(default_factory=list)

    @property
    def best_scores(self) -> list[float]:
        return [r.best_score for r in self.records]

    def to_json(self) -> list[dict]:
        return [
            {
                "iteration": r.iteration,
                "space_hash": r.space_hash,
                "n_core_edges": r.n_core_edges,
                "best_score": r.best_score,
                "iteration_score": r.iteration_score,
                "seconds": r.seconds,
                "best_edges": [[int(a), int(b)] for a, b in zip(*np.nonzero(r.best_dag))],
            }
            for r in self.records
        ]


def cpdag_union(core: np.ndarray, cpdag_adj: np.ndarray) -> np.ndarray:
    """Add CPDAG edges to a permissibility matrix.

    ``cpdag_adj`` uses ``a[j, i] = a[i, j] = 1`` for undirected edges, so both
    directions enter; a directed edge adds only its parent-to-child direction.
    """
    return ((core != 0) | (cpdag_adj != 0)).astype(np.int8)


def improve_space(
    initial: SearchSpace,
    scorer,
    cfg=None,
    max_iterations: int = 20,
    k_max: int = 25,
    tol: float = 1e-9,
):
    """Grow the core space by the CPDAG of the best DAG found in its expansion.

    Each iteration builds tables with one extra outside parent per node, runs a
    MAP order search started from the previous best DAG, and sets the next core
    to the initial space plus that DAG's CPDAG edges. Stops once the best CPDAG already lies inside the
    core and the score stopped improving (the very first iteration only needs
    the containment).
    """
    from .graphs import dag_to_cpdag, topological_order
    from .lattice import ScoreLattices, LatticeError
    from .order import ChainConfig, run_chain, default_steps

    n = initial.n
    initial_h = initial.h_matrix.copy()
    core = initial_h.copy()
    trace = IterationTrace()
    best_dag = np.zeros((n, n), dtype=np.int8)
    best_score = -np.inf
    prev_iter_score = None
    base_cfg = cfg or ChainConfig(steps=default_steps(n), gamma="adaptive")
    for it in range(max_iterations):
        t0 = time.perf_counter()
        space = SearchSpace(core, extension=True)
        for i in range(n):
            if len(space.parents(i)) > k_max:
                raise LatticeError(
                    f"iteration {it}: node {i} has {len(space.parents(i))} permissible "
                    f"parents after the union, above k_max={k_max}"
                )
        lat = ScoreLattices(scorer, space, extension=True, k_max=k_max)
        start = topological_order(best_dag) if it > 0 else base_cfg.start
        seed = None if base_cfg.seed is None else base_cfg.seed + it
        run_cfg = base_cfg.replace(start=start, seed=seed)
        res = run_chain(run_cfg, lat, mode="map")
        g = res.best_dag
        score = res.best_score
        if score > best_score + tol or it == 0:
            best_dag, best_score = g, max(score, best_score)
        cp = dag_to_cpdag(best_dag).adjacency
        new_core = cpdag_union(initial_h, cp)
        contained = bool(np.all(core[cp != 0] == 1))
        improved = prev_iter_score is not None and score > prev_iter_score + tol
        trace.records.append(
            IterationRecord(it, space.digest(), int(core.sum()), best_dag.copy(), best_score,
                            score, time.perf_counter() - t0)
        )
        log.info("iteration %d: score %.4f, core edges %d", it, score, int(core.sum()))
        prev_iter_score = score
        if contained and not improved:
            break
        core = new_core
    return SearchSpace(core, extension=initial.extension), best_dag, trace
