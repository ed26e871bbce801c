"""Order MCMC over a (possibly extended) restricted search space.

An order is a permutation ``perm`` of the nodes; a DAG is compatible when every
parent sits to the *right* of its child. A node's contribution to the order
score is the summed-table entry for the mask of permissible parents to its
right, plus (with extension) one summed entry per outside node to its right.
In ``map`` mode sums become maxima and the chain targets the best DAG score
per order.
"""

from __future__ import annotations

import math
import random
import warnings
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .chain import ChainConfig, ChainResult, DagSample, MoveStats, default_steps, worker_count

NEG_INF = -math.inf
LN_HALF = -math.log(2.0)

__all__ = [
    "ChainConfig",
    "OrderSampler",
    "default_move_probs",
    "default_steps",
    "map_dag_given_order",
    "run_chain",
    "run_chains",
    "sample_dag_given_order",
    "score_order",
]


def _logadd(a: float, b: float) -> float:
    if a < b:
        a, b = b, a
    if b == NEG_INF:
        return a
    return a + math.log1p(math.exp(b - a))


def _lse_list(vals) -> float:
    m = max(vals)
    if m == NEG_INF:
        return NEG_INF
    return m + math.log(sum(math.exp(v - m) for v in vals))


def default_move_probs(n: int) -> tuple[float, float, float]:
    """(global swap, local transposition, node relocation) mixture weights."""
    if n > 7:
        return (6.0 / n, (n - 7.0) / n, 1.0 / n)
    return (1.0 / 3, 1.0 / 3, 1.0 / 3)


def _allowed_mask(i, parents, pos) -> int:
    return sum(1 << k for k, p in enumerate(parents) if pos[p] > pos[i])


def score_order(perm, lattices, mode: str = "sum") -> float:
    """Log order score computed from scratch (sum, or max for ``mode='map'``)."""
    pos = {int(v): k for k, v in enumerate(perm)}
    use_max = mode == "map"
    total = 0.0
    for i in range(lattices.n):
        nl = lattices.nodes[i]
        a = _allowed_mask(i, nl.parents.tolist(), pos)
        terms = [float((nl.maxed if use_max else nl.summed)[a])]
        if lattices.ext is not None:
            el = lattices.ext[i]
            tab = el.maxed if use_max else el.summed
            for r, j in enumerate(el.outside.tolist()):
                if pos[j] > pos[i]:
                    terms.append(float(tab[r, a]))
        total += max(terms) if use_max else _lse_list(terms)
    return total


def _subsets_of(mask: int, K: int) -> np.ndarray:
    ar = np.arange(1 << K)
    return ar[(ar & ~mask) == 0]


def _draw(logw: np.ndarray, u: float) -> int:
    m = logw.max()
    w = np.exp(logw - m)
    c = np.cumsum(w)
    return int(min(np.searchsorted(c, u * c[-1], side="right"), len(c) - 1))


def _node_options(i, perm_pos, lattices, allowed_mask, extra_rows):
    nl = lattices.nodes[i]
    sel = _subsets_of(allowed_mask, nl.K)
    logw = [nl.raw[sel]]
    if extra_rows is not None and len(extra_rows):
        logw.append(lattices.ext[i].raw[np.ix_(extra_rows, sel)].ravel())
    return sel, np.concatenate(logw)


def sample_dag_given_order(perm, lattices, rng) -> np.ndarray:
    """Draw parents for every node proportionally to exp(raw score) among order-compatible sets."""
    n = lattices.n
    pos = {int(v): k for k, v in enumerate(perm)}
    adj = np.zeros((n, n), dtype=np.int8)
    for i in range(n):
        nl = lattices.nodes[i]
        parents = nl.parents.tolist()
        a = _allowed_mask(i, parents, pos)
        rows = None
        if lattices.ext is not None:
            out = lattices.ext[i].outside.tolist()
            rows = np.array([r for r, j in enumerate(out) if pos[j] > pos[i]], dtype=np.int64)
        sel, logw = _node_options(i, pos, lattices, a, rows)
        k = _draw(logw, rng.random())
        sub = int(sel[k % len(sel)])
        for b, p in enumerate(parents):
            if (sub >> b) & 1:
                adj[p, i] = 1
        if k >= len(sel):
            adj[lattices.ext[i].outside[rows[k // len(sel) - 1]], i] = 1
    return adj


def map_dag_given_order(perm, lattices) -> tuple[np.ndarray, float]:
    """Highest scoring DAG compatible with the order, via max-table back-pointers."""
    n = lattices.n
    pos = {int(v): k for k, v in enumerate(perm)}
    adj = np.zeros((n, n), dtype=np.int8)
    total = 0.0
    for i in range(n):
        nl = lattices.nodes[i]
        parents = nl.parents.tolist()
        a = _allowed_mask(i, parents, pos)
        best, sub, extra = float(nl.maxed[a]), int(nl.argmax[a]), None
        if lattices.ext is not None:
            el = lattices.ext[i]
            for r, j in enumerate(el.outside.tolist()):
                if pos[j] > pos[i] and el.maxed[r, a] > best:
                    best, sub, extra = float(el.maxed[r, a]), int(el.argmax[r, a]), j
        for b, p in enumerate(parents):
            if (sub >> b) & 1:
                adj[p, i] = 1
        if extra is not None:
            adj[extra, i] = 1
        total += best
    return adj, total


class OrderSampler:
    """Mutable order state with incremental rescoring for the three order moves."""

    def __init__(self, lattices, mode: str = "sum", perm=None, gamma: float = 1.0):
        if mode not in ("sum", "map"):
            raise ValueError("mode must be 'sum' or 'map'")
        self.lat = lattices
        self.n = n = lattices.n
        self.mode = mode
        self.is_max = mode == "map"
        self.gamma = float(gamma)
        self.parents = [nl.parents.tolist() for nl in lattices.nodes]
        self.tab = [(nl.maxed if self.is_max else nl.summed).tolist() for nl in lattices.nodes]
        self.bit = [[0] * n for _ in range(n)]
        for i, ps in enumerate(self.parents):
            for k, p in enumerate(ps):
                self.bit[i][p] = 1 << k
        self.ext = lattices.ext is not None
        if self.ext:
            self.out = [el.outside for el in lattices.ext]
            self.oix = [[-1] * n for _ in range(n)]
            self.extT = []
            self.extTpad = []
            for i, el in enumerate(lattices.ext):
                for r, j in enumerate(el.outside.tolist()):
                    self.oix[i][j] = r
                t = np.ascontiguousarray((el.maxed if self.is_max else el.summed).T)
                self.extT.append(t)
                self.extTpad.append(np.hstack([t, np.full((t.shape[0], 1), NEG_INF)]))
        perm = list(range(n)) if perm is None else [int(v) for v in perm]
        if sorted(perm) != list(range(n)):
            raise ValueError("perm must be a permutation of 0..n-1")
        self.perm = perm
        self.pos = [0] * n
        for k, v in enumerate(perm):
            self.pos[v] = k
        self.posarr = np.array(self.pos, dtype=np.int64)
        self.a = [0] * n
        self.c = [0.0] * n
        self.resync()

    # -- scoring primitives -------------------------------------------------
    def _mask(self, i: int) -> int:
        pos = self.pos
        pi = pos[i]
        m = 0
        for k, p in enumerate(self.parents[i]):
            if pos[p] > pi:
                m |= 1 << k
        return m

    def _full(self, i: int, a: int, drop: int = -1) -> float:
        base = self.tab[i][a]
        if not self.ext or len(self.out[i]) == 0:
            return base
        out = self.out[i]
        after = self.posarr[out] > self.pos[i]
        if drop >= 0:
            after &= out != drop
        vals = self.extT[i][a][after]
        if vals.size == 0:
            return base
        vmax = float(vals.max())
        if self.is_max:
            return base if base >= vmax else vmax
        m = base if base > vmax else vmax
        if m == NEG_INF:
            return NEG_INF
        return m + math.log(math.exp(base - m) + float(np.exp(vals - m).sum()))

    def _flip(self, i: int, j: int, now_after: bool):
        """New (mask, contribution) of ``i`` once ``j`` switches side."""
        a = self.a[i]
        c = self.c[i]
        b = self.bit[i][j]
        if b:
            a2 = (a | b) if now_after else (a & ~b)
            return a2, self._full(i, a2, -1 if now_after else j)
        if self.ext:
            t = float(self.extT[i][a, self.oix[i][j]])
            if now_after:
                if self.is_max:
                    return a, (c if c >= t else t)
                return a, _logadd(c, t)
            if self.is_max:
                return a, (c if t < c else self._full(i, a, j))
            if t == NEG_INF:
                return a, c
            d = t - c
            if d < LN_HALF:
                return a, c + math.log1p(-math.exp(d))
            return a, self._full(i, a, j)
        return a, c

    def resync(self) -> float:
        """Recompute every contribution from scratch; returns the largest drift seen."""
        drift = 0.0
        for i in range(self.n):
            a = self._mask(i)
            c = self._full(i, a)
            old = self.c[i]
            if math.isfinite(old) and math.isfinite(c):
                drift = max(drift, abs(old - c))
            self.a[i] = a
            self.c[i] = c
        self.total = math.fsum(self.c)
        return drift

    def _swap_positions(self, p: int, q: int) -> None:
        perm, pos = self.perm, self.pos
        x, y = perm[p], perm[q]
        perm[p], perm[q] = y, x
        pos[x], pos[y] = q, p
        self.posarr[x] = q
        self.posarr[y] = p

    # -- moves ---------------------------------------------------------------
    def propose_local(self, k: int):
        """Transpose the nodes at positions ``k`` and ``k + 1``; returns (delta, changes)."""
        x, y = self.perm[k], self.perm[k + 1]
        self._swap_positions(k, k + 1)
        ax, cx = self._flip(x, y, False)
        ay, cy = self._flip(y, x, True)
        self._swap_positions(k, k + 1)
        delta = (cx - self.c[x]) + (cy - self.c[y])
        return delta, (("swap", k, k + 1), [(x, ax, cx), (y, ay, cy)])

    def propose_global(self, p: int, q: int):
        """Swap the nodes at positions ``p`` and ``q``; rescored nodes are those in between."""
        if p > q:
            p, q = q, p
        x, y = self.perm[p], self.perm[q]
        self._swap_positions(p, q)
        changes = []
        delta = 0.0
        bit, a_, c_ = self.bit, self.a, self.c
        for k in self.perm[p + 1 : q]:
            bx, by = bit[k][x], bit[k][y]
            if bx or by:
                a2 = (a_[k] | bx) & ~by
                c2 = self._full(k, a2)
            elif self.ext:
                a2 = a_[k]
                ext = self.extT[k]
                tx = float(ext[a2, self.oix[k][x]])
                ty = float(ext[a2, self.oix[k][y]])
                if self.is_max:
                    c2 = c_[k] if c_[k] >= tx else tx
                    if ty >= c2:
                        c2 = self._full(k, a2)
                else:
                    c2 = _logadd(c_[k], tx)
                    if ty != NEG_INF:
                        d = ty - c2
                        c2 = c2 + math.log1p(-math.exp(d)) if d < LN_HALF else self._full(k, a2)
            else:
                continue
            changes.append((k, a2, c2))
            delta += c2 - c_[k]
        for v in (x, y):
            a2 = self._mask(v)
            c2 = self._full(v, a2)
            changes.append((v, a2, c2))
            delta += c2 - c_[v]
        self._swap_positions(p, q)
        return delta, (("swap", p, q), changes)

    def commit(self, proposal) -> None:
        (_, p, q), changes = proposal
        self._swap_positions(p, q)
        for v, a2, c2 in changes:
            self.total += c2 - self.c[v]
            self.a[v] = a2
            self.c[v] = c2

    def relocation_scores(self, i: int):
        """Log score changes for every placement of node ``i``, plus the bookkeeping to commit one."""
        n = self.n
        perm = self.perm
        p = self.pos[i]
        c_ = self.c
        d = [0.0] * n
        flips = [None] * n
        for k in range(n):
            if k == p:
                continue
            y = perm[k]
            a2, c2 = self._flip(y, i, k > p)
            flips[k] = (y, a2, c2)
            d[k] = c2 - c_[y]
        rest = perm[:p] + perm[p + 1 :]
        bits = self.bit[i]
        masks = [0] * n
        m = 0
        for q in range(n - 2, -1, -1):
            m |= bits[rest[q]]
            masks[q] = m
        tab = self.tab[i]
        base = [tab[a] for a in masks]
        if self.ext and len(self.out[i]):
            n_out = len(self.out[i])
            oix = self.oix[i]
            cols = np.array([oix[y] if oix[y] >= 0 else n_out for y in rest], dtype=np.int64)
            A = np.array(masks, dtype=np.int64)
            M = self.extTpad[i][A[:, None], cols[None, :]]
            M[_lower_mask(n)] = NEG_INF
            full = np.column_stack([np.array(base), M])
            if self.is_max:
                ci = full.max(axis=1)
            else:
                mx = full.max(axis=1)
                safe = np.where(np.isfinite(mx), mx, 0.0)
                with np.errstate(divide="ignore"):
                    ci = safe + np.log(np.exp(full - safe[:, None]).sum(axis=1))
            ci = ci.tolist()
        else:
            ci = base
        ci_old = c_[i]
        ci[p] = ci_old  # current placement keeps its known score
        deltas = [0.0] * n
        acc = 0.0
        for q in range(p - 1, -1, -1):
            acc += d[q]
            deltas[q] = acc
        acc = 0.0
        for q in range(p + 1, n):
            acc += d[q]
            deltas[q] = acc
        for q in range(n):
            deltas[q] += ci[q] - ci_old
        return deltas, (rest, masks, ci, flips)

    def relocate(self, i: int, u: float, greedy: bool = False) -> int:
        """Node relocation: score all ``n`` placements, pick one proportional to score^gamma."""
        deltas, info = self.relocation_scores(i)
        g = self.gamma
        if greedy:
            q = max(range(self.n), key=lambda k: deltas[k])
        else:
            w = [g * v for v in deltas]
            m = max(w)
            if m == NEG_INF:
                return self.pos[i]
            ws = [math.exp(v - m) for v in w]
            target = u * sum(ws)
            acc = 0.0
            q = self.n - 1
            for k, v in enumerate(ws):
                acc += v
                if acc > target:
                    q = k
                    break
        self._commit_relocation(i, q, deltas[q], info)
        return q

    def _commit_relocation(self, i, q, delta, info):
        rest, masks, ci, flips = info
        p = self.pos[i]
        if q == p:
            return
        lo, hi = (q, p - 1) if q < p else (p + 1, q)
        for k in range(lo, hi + 1):
            y, a2, c2 = flips[k]
            self.a[y] = a2
            self.c[y] = c2
        self.a[i] = masks[q]
        self.c[i] = ci[q]
        self.total += delta
        self.perm = rest[:q] + [i] + rest[q:]
        a, b = min(p, q), max(p, q)
        for k in range(a, b + 1):
            v = self.perm[k]
            self.pos[v] = k
            self.posarr[v] = k


_LOWER_CACHE: dict[int, np.ndarray] = {}


def _lower_mask(n: int) -> np.ndarray:
    """Boolean (n, n-1) mask of placements q whose after-set excludes rest[k] (k < q)."""
    m = _LOWER_CACHE.get(n)
    if m is None:
        q = np.arange(n)[:, None]
        k = np.arange(n - 1)[None, :]
        m = k < q
        _LOWER_CACHE[n] = m
    return m


def run_chain(cfg: ChainConfig, lattices, mode: str = "sample", chain_id: int = 0) -> ChainResult:
    """Run one order chain.

    ``mode='sample'`` targets the summed order score and draws DAGs every
    ``thin`` steps after burn-in. ``mode='map'`` targets the tempered max score
    and returns the best DAG encountered.
    """
    if mode not in ("sample", "map"):
        raise ValueError("mode must be 'sample' or 'map'")
    n = lattices.n
    rng = random.Random(cfg.seed)
    if cfg.start is not None:
        perm = list(cfg.start)
    else:
        perm = list(range(n))
        rng.shuffle(perm)
    adaptive = cfg.gamma == "adaptive"
    if adaptive and mode == "sample":
        raise ValueError("adaptive gamma would bias sampling; use it with mode='map'")
    gamma = 1.0 if adaptive else float(cfg.gamma)
    st = OrderSampler(lattices, "map" if mode == "map" else "sum", perm, gamma)
    probs = cfg.move_probs or default_move_probs(n)
    p_glob, p_loc = probs[0], probs[0] + probs[1]
    steps = cfg.steps
    burn = cfg.burn_in()
    thin = cfg.thin_for(n)
    stats = MoveStats()
    trace = np.empty(steps)
    samples, states = [], []
    best_score, best_perm = st.total, list(st.perm)
    target = min(1.0, cfg.target_accept / max(n, 1))
    win_prop = win_acc = 0
    gamma_trace = []
    max_drift = 0.0
    np_rng = np.random.default_rng(None if cfg.seed is None else cfg.seed + 7919)
    for s in range(steps):
        if n >= 2:
            u = rng.random()
            if u < p_loc:
                if u < p_glob:
                    kind = "global"
                    p = rng.randrange(n)
                    q = rng.randrange(n - 1)
                    if q >= p:
                        q += 1
                    delta, prop = st.propose_global(p, q)
                else:
                    kind = "local"
                    delta, prop = st.propose_local(rng.randrange(n - 1))
                ok = delta >= 0 or math.log(rng.random() or 1e-300) < st.gamma * delta
                if delta != delta:  # nan from -inf - -inf
                    ok = False
                if ok:
                    st.commit(prop)
                stats.record(kind, ok)
                win_prop += 1
                win_acc += ok
            else:
                st.relocate(rng.randrange(n), rng.random(), greedy=cfg.greedy and mode == "map")
                stats.record("relocation", True)
        trace[s] = st.total
        if mode == "map" and st.total > best_score:
            best_score, best_perm = st.total, list(st.perm)
        if adaptive and (s + 1) % 100 == 0 and win_prop:
            rate = win_acc / win_prop
            if rate > target:
                st.gamma = min(64.0, st.gamma * 1.25)
            elif rate < target:
                st.gamma = max(1.0, st.gamma / 1.25)
            gamma_trace.append(st.gamma)
            win_prop = win_acc = 0
        if cfg.resync_every and (s + 1) % cfg.resync_every == 0:
            drift = st.resync()
            max_drift = max(max_drift, drift)
            if drift > 1e-6:
                warnings.warn(f"order score drift {drift:.3g} at step {s + 1}", RuntimeWarning)
        if s >= burn and (s - burn) % thin == 0:
            if cfg.record_states:
                states.append(tuple(st.perm))
            if mode == "sample":
                adj = sample_dag_given_order(st.perm, lattices, np_rng)
                samples.append(DagSample(adj, chain_id, s, st.total))
    result = ChainResult(mode, "order", chain_id, trace, burn, samples, states, stats,
                         max_drift=max_drift, gamma_trace=gamma_trace)
    if mode == "map":
        dag, sc = map_dag_given_order(best_perm, lattices)
        result.best_state = tuple(best_perm)
        result.best_dag = dag
        result.best_score = sc
    return result


def _run_one(args):
    cfg, lattices, mode, cid = args
    return run_chain(cfg, lattices, mode, cid)


def run_chains(cfg: ChainConfig, lattices, seeds, mode: str = "sample", workers=None):
    """Independent chains with the given seeds, fanned out over worker processes."""
    jobs = [(cfg.replace(seed=sd), lattices, mode, k) for k, sd in enumerate(seeds)]
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(jobs) == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_one, jobs))
