"""Partition MCMC: unbiased DAG sampling over labelled ordered partitions.

A labelled partition is a left-to-right list of elements, each holding node
labels in ascending order. The rightmost element holds the source nodes of a
DAG; every node in any other element needs at least one parent from the
element directly to its right and may take further parents only from elements
beyond it. Each DAG maps to exactly one labelled partition.
"""

from __future__ import annotations

import math
import random
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .chain import ChainConfig, ChainResult, DagSample, MoveStats, worker_count
from .graphs import GraphError

NEG_INF = -math.inf
MOVES = ("split_join", "adjacent_swap", "global_swap", "relocation")


@dataclass(frozen=True)
class LabelledPartition:
    elements: tuple

    def __post_init__(self):
        els = tuple(tuple(int(v) for v in e) for e in self.elements)
        if any(len(e) == 0 for e in els):
            raise ValueError("partition elements must be non-empty")
        flat = [v for e in els for v in e]
        if sorted(flat) != list(range(len(flat))):
            raise ValueError("partition must cover nodes 0..n-1 exactly once")
        if any(list(e) != sorted(e) for e in els):
            raise ValueError("labels must ascend within each element")
        object.__setattr__(self, "elements", els)

    @classmethod
    def from_sizes(cls, sizes, perm) -> "LabelledPartition":
        if sum(sizes) != len(perm):
            raise ValueError("sizes must sum to the number of nodes")
        out, k = [], 0
        for s in sizes:
            out.append(tuple(perm[k : k + s]))
            k += s
        return cls(tuple(out))

    @classmethod
    def canonical(cls, elements) -> "LabelledPartition":
        return cls(tuple(tuple(sorted(e)) for e in elements if len(e)))

    @property
    def sizes(self) -> list[int]:
        return [len(e) for e in self.elements]

    @property
    def perm(self) -> list[int]:
        return [v for e in self.elements for v in e]

    @property
    def n(self) -> int:
        return sum(len(e) for e in self.elements)

    def element_of(self) -> list[int]:
        out = [0] * self.n
        for k, e in enumerate(self.elements):
            for v in e:
                out[v] = k
        return out


def dag_to_partition(adj) -> LabelledPartition:
    """Peel source nodes repeatedly; the first batch forms the rightmost element."""
    a = np.asarray(adj) != 0
    n = a.shape[0]
    left = np.ones(n, dtype=bool)
    layers = []
    while left.any():
        indeg = a[np.ix_(left, left)].sum(axis=0)
        idx = np.flatnonzero(left)
        src = idx[indeg == 0]
        if src.size == 0:
            raise GraphError("graph contains a directed cycle")
        layers.append(tuple(int(v) for v in src))
        left[src] = False
    return LabelledPartition(tuple(layers[::-1]))


def neighbourhood_size(sizes) -> int:
    """Number of split and join proposals: sum of 2^s - 2 over elements, plus m - 1."""
    return sum((1 << s) - 2 for s in sizes) + len(sizes) - 1


def default_move_probs(n: int) -> tuple:
    """(split/join, adjacent swap, global swap, relocation)."""
    if n >= 6:
        return (1 - 4.0 / n, 2.0 / n, 1.0 / n, 1.0 / n)
    return (0.25, 0.25, 0.25, 0.25)


class _Tables:
    """Per-node lookups flattened to Python lists for the scoring loop."""

    def __init__(self, lattices):
        if not lattices.has_restricted:
            lattices.ensure_restricted()
        self.lat = lattices
        self.n = lattices.n
        self.parents = [nl.parents.tolist() for nl in lattices.nodes]
        self.pow3 = [[3**k for k in range(nl.K)] for nl in lattices.nodes]
        self.restr = [nl.restricted.tolist() for nl in lattices.nodes]
        self.summed = [nl.summed for nl in lattices.nodes]
        self.empty = [float(nl.raw[0]) for nl in lattices.nodes]
        self.ext = lattices.ext is not None
        if self.ext:
            self.out = [el.outside for el in lattices.ext]
            self.ext_summed = [el.summed for el in lattices.ext]
            self.ext_restr = [el.restricted for el in lattices.ext]

    def contrib(self, u: int, elem_of, elem_arr, m: int) -> float:
        e = elem_of[u]
        if e == m - 1:
            return self.empty[u]
        g = 0
        allowed = 0
        need = False
        for k, p in enumerate(self.parents[u]):
            ep = elem_of[p]
            if ep <= e:
                g += self.pow3[u][k]
            else:
                allowed |= 1 << k
                if ep == e + 1:
                    g += 2 * self.pow3[u][k]
                    need = True
        base = self.restr[u][g] if need else NEG_INF
        if not self.ext or len(self.out[u]) == 0:
            return base
        eo = elem_arr[self.out[u]]
        terms = [self.ext_summed[u][eo == e + 1, allowed]]
        if need:
            terms.append(self.ext_restr[u][eo > e + 1, g])
        vals = np.concatenate(terms)
        if vals.size == 0:
            return base
        m_ = max(base, float(vals.max()))
        if m_ == NEG_INF:
            return NEG_INF
        return m_ + math.log(math.exp(base - m_) + float(np.exp(vals - m_).sum()))


def _index(elements, n):
    elem_of = [0] * n
    for k, e in enumerate(elements):
        for v in e:
            elem_of[v] = k
    return elem_of, np.array(elem_of, dtype=np.int64)


def score_partition(p: LabelledPartition, lattices) -> float:
    """Log of the summed score of all DAGs in the space that map to ``p``."""
    tb = _Tables(lattices)
    elem_of, arr = _index(p.elements, p.n)
    m = len(p.elements)
    return math.fsum(tb.contrib(u, elem_of, arr, m) for u in range(p.n))


def _candidate_sets(tb: _Tables, u: int, elem_of, elem_arr, m: int):
    """(log weights, parent lists) of every parent set compatible with ``u``'s placement."""
    lat = tb.lat
    nl = lat.nodes[u]
    e = elem_of[u]
    if e == m - 1:
        return np.array([float(nl.raw[0])]), [[]]
    allowed = wmask = 0
    for k, p in enumerate(tb.parents[u]):
        if elem_of[p] > e:
            allowed |= 1 << k
            if elem_of[p] == e + 1:
                wmask |= 1 << k
    ar = np.arange(1 << nl.K)
    sel = ar[(ar & ~allowed) == 0]
    hit = sel[(sel & wmask) != 0]
    blocks = [(None, hit, nl.raw[hit])]
    if tb.ext:
        el = lat.ext[u]
        for r, j in enumerate(el.outside.tolist()):
            if elem_of[j] == e + 1:
                blocks.append((j, sel, el.raw[r, sel]))
            elif elem_of[j] > e + 1 and hit.size:
                blocks.append((j, hit, el.raw[r, hit]))
    logw = np.concatenate([b[2] for b in blocks])
    return logw, blocks


def sample_dag_given_partition(p: LabelledPartition, lattices, rng) -> np.ndarray:
    """Draw each node's parent set proportionally to exp(raw score) among partition-compatible sets."""
    tb = _Tables(lattices)
    return _sample_dag(tb, p.elements, rng)


def _sample_dag(tb: _Tables, elements, rng) -> np.ndarray:
    n = tb.n
    elem_of, arr = _index(elements, n)
    m = len(elements)
    adj = np.zeros((n, n), dtype=np.int8)
    for u in range(n):
        logw, blocks = _candidate_sets(tb, u, elem_of, arr, m)
        if blocks == [[]]:
            continue
        if logw.size == 0 or not np.isfinite(logw.max()):
            raise ValueError(f"node {u} has no compatible parent set in this partition")
        w = np.exp(logw - logw.max())
        c = np.cumsum(w)
        k = int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), len(c) - 1))
        for extra, subs, vals in blocks:
            if k < len(subs):
                sub = int(subs[k])
                for b, par in enumerate(tb.parents[u]):
                    if (sub >> b) & 1:
                        adj[par, u] = 1
                if extra is not None:
                    adj[extra, u] = 1
                break
            k -= len(subs)
    return adj


class PartitionSampler:
    """Mutable partition state with the four partition moves."""

    def __init__(self, lattices, start: LabelledPartition | None = None):
        self.tb = _Tables(lattices)
        self.n = n = lattices.n
        if start is None:
            start = LabelledPartition((tuple(range(n)),))
        self.elements = [list(e) for e in start.elements]
        self.elem_of, self.elem_arr = _index(self.elements, n)
        self.c = [0.0] * n
        self.resync()

    @property
    def state(self) -> LabelledPartition:
        return LabelledPartition(tuple(tuple(e) for e in self.elements))

    def resync(self) -> float:
        m = len(self.elements)
        drift = 0.0
        for u in range(self.n):
            c = self.tb.contrib(u, self.elem_of, self.elem_arr, m)
            if math.isfinite(c) and math.isfinite(self.c[u]):
                drift = max(drift, abs(c - self.c[u]))
            self.c[u] = c
        self.total = math.fsum(self.c)
        return drift

    def _evaluate(self, elements, nodes):
        """Score change and new contributions of ``nodes`` under a candidate element list."""
        elem_of, arr = _index(elements, self.n)
        m = len(elements)
        new = {}
        delta = 0.0
        for u in nodes:
            cu = self.tb.contrib(u, elem_of, arr, m)
            new[u] = cu
            if cu == NEG_INF:
                return NEG_INF, None
            delta += cu - self.c[u]
        return delta, (elements, elem_of, arr, new)

    def _commit(self, info) -> None:
        elements, elem_of, arr, new = info
        self.elements = elements
        self.elem_of = elem_of
        self.elem_arr = arr
        for u, cu in new.items():
            self.total += cu - self.c[u]
            self.c[u] = cu

    def _window(self, elements, lo, hi):
        lo = max(lo, 0)
        return [u for e in elements[lo : hi + 1] for u in e]

    # -- moves ---------------------------------------------------------------
    def split_join(self, rng) -> bool:
        els = self.elements
        sizes = [len(e) for e in els]
        nbd = neighbourhood_size(sizes)
        if nbd == 0:
            return False
        k = rng.randrange(nbd)
        for j, e in enumerate(els):
            cnt = (1 << len(e)) - 2
            if k < cnt:
                mask = k + 1
                left = [v for b, v in enumerate(e) if (mask >> b) & 1]
                right = [v for b, v in enumerate(e) if not (mask >> b) & 1]
                new = els[:j] + [left, right] + els[j + 1 :]
                nodes = self._window(els, j - 1, j)
                break
            k -= cnt
        else:
            j = k
            new = els[:j] + [sorted(els[j] + els[j + 1])] + els[j + 2 :]
            nodes = self._window(els, j - 1, j + 1)
        delta, info = self._evaluate(new, nodes)
        if info is None:
            return False
        log_ratio = delta + math.log(nbd) - math.log(neighbourhood_size([len(e) for e in new]))
        if log_ratio >= 0 or math.log(rng.random() or 1e-300) < log_ratio:
            self._commit(info)
            return True
        return False

    def _swap(self, u: int, v: int, rng) -> bool:
        els = self.elements
        eu, ev = self.elem_of[u], self.elem_of[v]
        new = [list(e) for e in els]
        new[eu] = sorted([x for x in els[eu] if x != u] + [v])
        new[ev] = sorted([x for x in els[ev] if x != v] + [u])
        lo, hi = min(eu, ev), max(eu, ev)
        delta, info = self._evaluate(new, self._window(els, lo - 1, hi))
        if info is None:
            return False
        if delta >= 0 or math.log(rng.random() or 1e-300) < delta:
            self._commit(info)
            return True
        return False

    def adjacent_swap(self, rng) -> bool:
        els = self.elements
        weights = [len(els[j]) * len(els[j + 1]) for j in range(len(els) - 1)]
        tot = sum(weights)
        if tot == 0:
            return False
        k = rng.randrange(tot)
        for j, w in enumerate(weights):
            if k < w:
                break
            k -= w
        u = els[j][k // len(els[j + 1])]
        v = els[j + 1][k % len(els[j + 1])]
        return self._swap(u, v, rng)

    def global_swap(self, rng) -> bool:
        if len(self.elements) < 2:
            return False
        while True:
            u, v = rng.sample(range(self.n), 2)
            if self.elem_of[u] != self.elem_of[v]:
                return self._swap(u, v, rng)

    def relocation_candidates(self, v: int):
        """Every placement of ``v`` into the partition with ``v`` removed, left to right."""
        els = self.elements
        e = self.elem_of[v]
        rest = [list(x) for x in els]
        rest[e] = [x for x in rest[e] if x != v]
        if rest[e]:
            home = ("into", e)
        else:
            del rest[e]
            home = ("gap", e)
        out = []
        for t in range(len(rest) + 1):
            out.append(("gap", t))
            if t < len(rest):
                out.append(("into", t))
        return rest, home, out

    def relocate(self, v: int, u01: float) -> None:
        rest, home, cands = self.relocation_candidates(v)
        scored = []
        for kind, t in cands:
            if kind == "gap":
                new = rest[:t] + [[v]] + rest[t:]
            else:
                new = rest[:t] + [sorted(rest[t] + [v])] + rest[t + 1 :]
            if (kind, t) == home:
                scored.append((0.0, None))
                continue
            # rest-index window touched by either placement
            lo = min(t, home[1]) - 1
            hi = max(t, home[1])
            new_lo = lo
            new_hi = hi + 1
            nodes = set(self._window(new, new_lo, new_hi)) | {v}
            delta, info = self._evaluate(new, sorted(nodes))
            scored.append((delta, info))
        w = [d for d, _ in scored]
        mx = max(w)
        ws = [math.exp(d - mx) if d != NEG_INF else 0.0 for d in w]
        target = u01 * sum(ws)
        acc = 0.0
        pick = len(ws) - 1
        for k, x in enumerate(ws):
            acc += x
            if acc > target:
                pick = k
                break
        info = scored[pick][1]
        if info is not None:
            self._commit(info)

    def step(self, kind: str, rng) -> bool:
        if kind == "split_join":
            return self.split_join(rng)
        if kind == "adjacent_swap":
            return self.adjacent_swap(rng)
        if kind == "global_swap":
            return self.global_swap(rng)
        if kind == "relocation":
            self.relocate(rng.randrange(self.n), rng.random())
            return True
        raise ValueError(f"unknown move {kind!r}")


def run_partition_chain(cfg: ChainConfig, lattices, chain_id: int = 0) -> ChainResult:
    """Partition MCMC with DAG draws every ``thin`` steps after burn-in."""
    if cfg.gamma != 1.0:
        raise ValueError("partition sampling does not support tempering")
    n = lattices.n
    rng = random.Random(cfg.seed)
    np_rng = np.random.default_rng(None if cfg.seed is None else cfg.seed + 7919)
    start = cfg.start
    if start is not None and not isinstance(start, LabelledPartition):
        start = LabelledPartition(start)
    st = PartitionSampler(lattices, start)
    if st.total == NEG_INF:
        raise ValueError("starting partition has no compatible DAG in the search space")
    probs = cfg.move_probs or default_move_probs(n)
    cum = np.cumsum(probs).tolist()
    burn, thin = cfg.burn_in(), cfg.thin_for(n)
    stats = MoveStats()
    trace = np.empty(cfg.steps)
    samples, states = [], []
    max_drift = 0.0
    for s in range(cfg.steps):
        if n >= 2:
            u = rng.random()
            kind = MOVES[next((k for k, c in enumerate(cum) if u < c), 3)]
            stats.record(kind, st.step(kind, rng))
        trace[s] = st.total
        if cfg.resync_every and (s + 1) % cfg.resync_every == 0:
            drift = st.resync()
            max_drift = max(max_drift, drift)
            if drift > 1e-6:
                warnings.warn(f"partition score drift {drift:.3g} at step {s + 1}", RuntimeWarning)
        if s >= burn and (s - burn) % thin == 0:
            if cfg.record_states:
                states.append(tuple(tuple(e) for e in st.elements))
            adj = _sample_dag(st.tb, st.elements, np_rng)
            samples.append(DagSample(adj, chain_id, s, st.total))
    return ChainResult("sample", "partition", chain_id, trace, burn, samples, states, stats,
                       max_drift=max_drift)


def _run_one(args):
    cfg, lattices, cid = args
    return run_partition_chain(cfg, lattices, cid)


def run_partition_chains(cfg: ChainConfig, lattices, seeds, workers=None):
    lattices.ensure_restricted()
    jobs = [(cfg.replace(seed=sd), lattices, k) for k, sd in enumerate(seeds)]
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(jobs) == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_one, jobs))
