"""Per-node lookup tables over power sets of permissible parents.

Indexing conventions for a node with ordered permissible parents ``h`` (size K),
using 0-based ranks into ``h``:

* ``subset_index(Z)``: bitmask of the parent subset; raw score tables use it.
* ``banned_index(Z) = 2**K - 1 - subset_index(Z)``: the summed and max tables are
  indexed this way, so the entry for a banned set equals the bitmask of the
  parents still allowed. Scoring an order is then a direct lookup with the mask
  of permissible parents placed after the node.
* ``ternary_index(Z, W)``: base-3 digit 1 for banned members, 2 for needed ones;
  indexes the restricted (partition) tables.

Every table lives in log space.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .scores import popcounts

K_MAX_DEFAULT = 25
CACHE_VERSION = 1


class LatticeError(RuntimeError):
    """Raised when a table cannot be built within the configured limits."""


def subset_index(Z) -> int:
    return sum(1 << int(k) for k in set(Z))


def banned_index(Z, K: int) -> int:
    return (1 << K) - 1 - subset_index(Z)


def ternary_index(Z, W) -> int:
    Z, W = set(Z), set(W)
    if Z & W:
        raise ValueError("banned and needed sets must be disjoint")
    return sum(3 ** int(k) for k in Z) + 2 * sum(3 ** int(k) for k in W)


def ternary_banned(j: int) -> set[int]:
    out, k = set(), 0
    while j:
        j, d = divmod(j, 3)
        if d == 1:
            out.add(k)
        k += 1
    return out


def ternary_needed(j: int) -> set[int]:
    out, k = set(), 0
    while j:
        j, d = divmod(j, 3)
        if d == 2:
            out.add(k)
        k += 1
    return out


@lru_cache(maxsize=None)
def ternary_of_mask(K: int) -> np.ndarray:
    """``t[mask]`` = sum of 3**k over bits of mask, so g(Z, W) = t[Z] + 2 t[W]."""
    out = np.zeros(1 << K, dtype=np.int64)
    masks = np.arange(1 << K)
    for k in range(K):
        out += ((masks >> k) & 1) * 3**k
    return out


def _lse(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(x - m), axis=axis))


@lru_cache(maxsize=None)
def _hasse_layers(K: int):
    """Per layer: node indices and their parents (one member removed)."""
    pc = popcounts(1 << K)
    layers = []
    for l in range(K + 1):
        idx = np.flatnonzero(pc == l)
        if l == 0:
            par = np.zeros((idx.size, 0), dtype=np.int64)
        else:
            par = np.empty((idx.size, l), dtype=np.int64)
            for r, j in enumerate(idx):
                bits = [b for b in range(K) if (j >> b) & 1]
                par[r] = [j ^ (1 << b) for b in bits]
        layers.append((idx, par))
    return layers


def build_summed(raw: np.ndarray) -> np.ndarray:
    """Sum of raw scores over all subsets of each allowed set, by layered propagation.

    Follows the power-set propagation in which partial sums are pushed from each
    layer of the Hasse diagram to the next and divided by the number of remaining
    layers, so that every path multiplicity is cancelled. Works on batches: the
    last axis holds the ``2**K`` subsets.
    """
    raw = np.asarray(raw, dtype=float)
    size = raw.shape[-1]
    K = size.bit_length() - 1
    if 1 << K != size:
        raise ValueError("table length must be a power of two")
    layers = _hasse_layers(K)
    summed = np.empty_like(raw)
    summed[..., 0] = raw[..., 0]
    Y = raw.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        for l in range(1, K + 1):
            for m in range(l):
                idx, par = layers[m + 1]
                incoming = _lse(Y[..., par], axis=-1) - math.log(l - m)
                Y[..., idx] = np.logaddexp(raw[..., idx], incoming)
            idx = layers[l][0]
            summed[..., idx] = Y[..., idx]
    return summed


def build_max(raw: np.ndarray, return_argmax: bool = False):
    """Max of raw scores over subsets of each allowed set, one upward sweep.

    With ``return_argmax`` also returns the subset index attaining each maximum;
    ties keep the set itself first, then parents in bit order.
    """
    raw = np.asarray(raw, dtype=float)
    size = raw.shape[-1]
    K = size.bit_length() - 1
    layers = _hasse_layers(K)
    Y = raw.copy()
    arg = np.broadcast_to(np.arange(size), raw.shape).copy()
    for l in range(1, K + 1):
        idx, par = layers[l]
        cand = np.concatenate([Y[..., idx][..., None], Y[..., par]], axis=-1)
        cand_arg = np.concatenate([arg[..., idx][..., None], arg[..., par]], axis=-1)
        best = np.argmax(cand, axis=-1)
        Y[..., idx] = np.take_along_axis(cand, best[..., None], axis=-1)[..., 0]
        arg[..., idx] = np.take_along_axis(cand_arg, best[..., None], axis=-1)[..., 0]
    return (Y, arg) if return_argmax else Y


@lru_cache(maxsize=None)
def _ternary_network(K: int):
    """Structure of the banned/needed network used for restricted sums.

    Returns masks (Z, W) per ternary index, the complement (allowed) mask, and
    for each layer (number of non-banned parents) the indices with non-empty
    needed set plus their parent indices padded with ``-1``.
    """
    n3 = 3**K
    Z = np.zeros(n3, dtype=np.int64)
    W = np.zeros(n3, dtype=np.int64)
    j = np.arange(n3)
    for k in range(K):
        d = j % 3
        Z |= (d == 1).astype(np.int64) << k
        W |= (d == 2).astype(np.int64) << k
        j = j // 3
    full = (1 << K) - 1
    allowed = full & ~Z
    pc_allowed = popcounts(1 << K)[allowed]
    layers = []
    for l in range(K + 1):
        idx = np.flatnonzero((pc_allowed == l) & (W != 0))
        par = np.full((idx.size, max(l, 1)), -1, dtype=np.int64)
        for r, g in enumerate(idx):
            z, w = int(Z[g]), int(W[g])
            c = 0
            for b in range(K):
                bit = 1 << b
                if z & bit:
                    continue
                if w & bit:
                    if w == bit:
                        continue  # would leave the needed set empty
                    par[r, c] = g + 3**b - 2 * 3**b  # move b from needed to banned
                else:
                    par[r, c] = g + 3**b  # ban b
                c += 1
        layers.append((idx, par))
    return Z, W, allowed, layers


def build_restricted(raw: np.ndarray, summed: np.ndarray) -> np.ndarray:
    """Restricted sums over parent sets avoiding banned members and hitting the needed set.

    Entry ``ternary_index(Z, W)`` is the log-sum of raw scores over parent sets
    ``P`` with ``P`` disjoint from ``Z`` and, when ``W`` is non-empty,
    intersecting ``W``. Entries with empty ``W`` copy the summed table.
    """
    raw = np.asarray(raw, dtype=float)
    size = raw.shape[-1]
    K = size.bit_length() - 1
    Zm, Wm, allowed, layers = _ternary_network(K)
    lead = raw.shape[:-1]
    out = np.empty(lead + (3**K,))
    out[..., Wm == 0] = summed[..., allowed[Wm == 0]]
    # slot 3**K holds -inf for padded parents
    Y = np.full(lead + (3**K + 1,), -np.inf)
    node_score = raw[..., allowed]
    if K >= 1:
        idx1 = layers[1][0]
        Y[..., idx1] = node_score[..., idx1]
        out[..., idx1] = node_score[..., idx1]
    with np.errstate(divide="ignore", invalid="ignore"):
        for l in range(2, K + 1):
            for m in range(1, l):
                idx, par = layers[m + 1]
                par = np.where(par < 0, 3**K, par)
                incoming = _lse(Y[..., par], axis=-1) - math.log(l - m)
                Y[..., idx] = np.logaddexp(node_score[..., idx], incoming)
            idx = layers[l][0]
            out[..., idx] = Y[..., idx]
    return out


@dataclass
class NodeLattice:
    node: int
    parents: np.ndarray
    raw: np.ndarray
    summed: np.ndarray
    maxed: np.ndarray
    argmax: np.ndarray
    restricted: np.ndarray | None = None

    @property
    def K(self) -> int:
        return len(self.parents)


@dataclass
class ExtendedLattices:
    node: int
    outside: np.ndarray
    raw: np.ndarray
    summed: np.ndarray
    maxed: np.ndarray
    argmax: np.ndarray
    restricted: np.ndarray | None = None


def build_extended(node: int, h, outside, scorer) -> ExtendedLattices:
    outside = np.asarray(outside, dtype=np.int64)
    K = len(h)
    if outside.size:
        raw = scorer.extended(node, list(h), outside.tolist())
    else:
        raw = np.empty((0, 1 << K))
    summed = build_summed(raw)
    maxed, arg = build_max(raw, return_argmax=True)
    return ExtendedLattices(node, outside, raw, summed, maxed, arg)


def estimate_bytes(parent_sizes, n: int, extension: bool, restricted: bool) -> int:
    total = 0
    for K in parent_sizes:
        per = 4 * (1 << K) + (3**K if restricted else 0)
        copies = 1 + ((n - 1 - K) if extension else 0)
        total += 8 * per * copies
    return total


class ScoreLattices:
    """All lookup tables for a score and a search space.

    ``extension`` adds, per node, tables for one extra parent from outside its
    permissible set. Restricted tables are only built by
    :meth:`ensure_restricted` (needed by the partition sampler).
    """

    def __init__(
        self,
        scorer,
        space,
        extension: bool | None = None,
        k_max: int = K_MAX_DEFAULT,
        memory_cap: float = 4e9,
    ):
        self.scorer = scorer
        self.space = space
        self.n = space.n
        self.extension = space.extension if extension is None else bool(extension)
        self.k_max = k_max
        self.memory_cap = memory_cap
        sizes = [len(space.parents(i)) for i in range(self.n)]
        for i, K in enumerate(sizes):
            if K > k_max:
                raise LatticeError(
                    f"node {i} has {K} permissible parents, above k_max={k_max}; "
                    "shrink the search space (smaller alpha) or raise k_max"
                )
        need = estimate_bytes(sizes, self.n, self.extension, restricted=False)
        if need > memory_cap:
            raise LatticeError(
                f"score tables need about {need / 1e9:.2f} GB, above the cap of "
                f"{memory_cap / 1e9:.2f} GB; shrink the space or disable extension"
            )
        self.nodes: list[NodeLattice] = []
        self.ext: list[ExtendedLattices] | None = [] if self.extension else None
        for i in range(self.n):
            h = np.asarray(space.parents(i), dtype=np.int64)
            raw = np.asarray(scorer.table(i, h.tolist()), dtype=float)
            self.nodes.append(self._node_from_raw(i, h, raw))
            if self.extension:
                outside = np.array(
                    [j for j in range(self.n) if j != i and j not in set(h.tolist())],
                    dtype=np.int64,
                )
                self.ext.append(build_extended(i, h, outside, scorer))

    @staticmethod
    def _node_from_raw(i, h, raw):
        summed = build_summed(raw)
        maxed, arg = build_max(raw, return_argmax=True)
        return NodeLattice(i, h, raw, summed, maxed, arg)

    @classmethod
    def from_raw(cls, raw_tables, space, ext_raw=None):
        """Wrap precomputed raw tables (one per node) without a scorer."""
        self = cls.__new__(cls)
        self.scorer = None
        self.space = space
        self.n = space.n
        self.extension = ext_raw is not None
        self.k_max = K_MAX_DEFAULT
        self.memory_cap = float("inf")
        self.nodes = []
        for i in range(self.n):
            h = np.asarray(space.parents(i), dtype=np.int64)
            self.nodes.append(cls._node_from_raw(i, h, np.asarray(raw_tables[i], dtype=float)))
        if ext_raw is None:
            self.ext = None
        else:
            self.ext = []
            for i in range(self.n):
                outside, raw = ext_raw[i]
                raw = np.asarray(raw, dtype=float).reshape(len(outside), 1 << len(self.nodes[i].parents))
                maxed, arg = build_max(raw, return_argmax=True)
                self.ext.append(
                    ExtendedLattices(i, np.asarray(outside, dtype=np.int64), raw,
                                     build_summed(raw), maxed, arg)
                )
        return self

    def ensure_restricted(self):
        sizes = [nl.K for nl in self.nodes]
        need = estimate_bytes(sizes, self.n, self.extension, restricted=True)
        if need > self.memory_cap:
            raise LatticeError(
                f"restricted tables need about {need / 1e9:.2f} GB, above the cap; "
                "shrink the space or disable extension"
            )
        for nl in self.nodes:
            if nl.restricted is None:
                nl.restricted = build_restricted(nl.raw, nl.summed)
        if self.ext is not None:
            for el in self.ext:
                if el.restricted is None:
                    el.restricted = build_restricted(el.raw, el.summed)
        return self

    @property
    def has_restricted(self) -> bool:
        return all(nl.restricted is not None for nl in self.nodes)


def cache_key(data_values: np.ndarray, h_matrix: np.ndarray, score_config: dict) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(data_values, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(h_matrix, dtype="<i1").tobytes())
    h.update(json.dumps(score_config, sort_keys=True).encode())
    return h.hexdigest()


def save_lattices(path, lattices: ScoreLattices, key: str) -> None:
    """Write raw tables to a versioned ``.npz`` cache (little-endian float64).

    Derived tables are rebuilt on load, which is cheap next to scoring.
    """
    arrays = {
        "version": np.array([CACHE_VERSION], dtype="<i4"),
        "key": np.frombuffer(key.encode(), dtype=np.uint8),
        "h_matrix": np.ascontiguousarray(lattices.space.h_matrix, dtype="<i1"),
        "extension": np.array([int(lattices.extension)], dtype="<i1"),
    }
    for nl in lattices.nodes:
        arrays[f"raw_{nl.node}"] = nl.raw.astype("<f8")
    if lattices.ext is not None:
        for el in lattices.ext:
            arrays[f"ext_out_{el.node}"] = el.outside.astype("<i8")
            arrays[f"ext_raw_{el.node}"] = el.raw.astype("<f8")
    np.savez(path, **arrays)


def load_lattices(path, key: str, space):
    """Load a cache written by :func:`save_lattices`; ``None`` when stale or absent."""
    try:
        z = np.load(path)
    except (FileNotFoundError, OSError):
        return None
    with z:
        if int(z["version"][0]) != CACHE_VERSION or bytes(z["key"]).decode() != key:
            return None
        if not np.array_equal(z["h_matrix"], np.asarray(space.h_matrix, dtype=np.int8)):
            return None
        n = space.n
        raws = [z[f"raw_{i}"] for i in range(n)]
        ext = None
        if int(z["extension"][0]):
            ext = [(z[f"ext_out_{i}"], z[f"ext_raw_{i}"]) for i in range(n)]
    return ScoreLattices.from_raw(raws, space, ext)
