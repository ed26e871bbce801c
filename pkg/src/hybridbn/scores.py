"""Decomposable local scores: BGe for Gaussian data, BDe for binary data.

All values are natural logs. Score tables for a node with ordered permissible
parents ``h`` are arrays of length ``2**len(h)`` indexed by the bitmask of the
chosen parents (bit ``k`` set when ``h[k]`` is a parent).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln, multigammaln

from .data import Dataset, GaussianStats, gaussian_stats, BGeHyper


def popcounts(size: int) -> np.ndarray:
    idx = np.arange(size, dtype=np.int64)
    out = np.zeros(size, dtype=np.int64)
    while idx.any():
        out += idx & 1
        idx = idx >> 1
    return out


def mask_members(mask: int) -> list[int]:
    out, k = [], 0
    while mask:
        if mask & 1:
            out.append(k)
        mask >>= 1
        k += 1
    return out


class BGeScore:
    """BGe score with the corrected exponents of the Wishart marginal.

    For a variable subset ``Y`` of size ``l`` the marginal likelihood is
    ``(am/(N+am))^(l/2) Gamma_l((N+aw-n+l)/2) / (pi^(lN/2) Gamma_l((aw-n+l)/2))
    |T_YY|^((aw-n+l)/2) / |R_YY|^((N+aw-n+l)/2)`` and a local score is the ratio
    of the family marginal to the parent marginal.
    """

    kind = "bge"

    def __init__(self, stats: GaussianStats):
        self.stats = stats
        self.n = stats.n_vars
        h = stats.hyper
        N, n = stats.n_obs, self.n
        am, aw, t = h.alpha_mu, h.alpha_w, h.t_scale
        dev = -stats.means  # prior mean is zero
        self.R = t * np.eye(n) + stats.scatter + (N * am / (N + am)) * np.outer(dev, dev)
        self._const = np.zeros(n + 2)
        self._expo = np.zeros(n + 2)
        for l in range(1, n + 2):
            a_post = (N + aw - n + l) / 2.0
            a_prior = (aw - n + l) / 2.0
            self._const[l] = (
                0.5 * l * math.log(am / (N + am))
                - 0.5 * l * N * math.log(math.pi)
                + multigammaln(a_post, l)
                - multigammaln(a_prior, l)
                + a_prior * l * math.log(t)
            )
            self._expo[l] = a_post

    @classmethod
    def from_data(cls, d: Dataset, hyper: BGeHyper | None = None) -> "BGeScore":
        return cls(gaussian_stats(d, hyper))

    def log_marginal(self, subset) -> float:
        subset = list(subset)
        l = len(subset)
        if l == 0:
            return 0.0
        sign, logdet = np.linalg.slogdet(self.R[np.ix_(subset, subset)])
        if sign <= 0:
            raise np.linalg.LinAlgError("posterior scatter submatrix is not positive definite")
        return self._const[l] - self._expo[l] * logdet

    def local(self, node: int, parents) -> float:
        parents = [int(p) for p in parents]
        if node in parents:
            raise ValueError("node cannot be its own parent")
        if any(p < 0 or p >= self.n for p in parents) or not 0 <= node < self.n:
            raise IndexError("node index out of range")
        return self.log_marginal(parents + [node]) - self.log_marginal(parents)

    def _batched_logmarg(self, variables, sel) -> np.ndarray:
        """log marginal for each row of boolean selector ``sel`` over ``variables``."""
        sub = self.R[np.ix_(variables, variables)]
        on = sel[:, :, None] & sel[:, None, :]
        mats = np.where(on, sub[None], np.eye(len(variables))[None])
        sign, logdet = np.linalg.slogdet(mats)
        if np.any(sign <= 0):
            raise np.linalg.LinAlgError("posterior scatter submatrix is not positive definite")
        sizes = sel.sum(axis=1)
        return self._const[sizes] - self._expo[sizes] * logdet

    def table(self, node: int, parents) -> np.ndarray:
        parents = [int(p) for p in parents]
        K = len(parents)
        masks = np.arange(2**K)
        bits = ((masks[:, None] >> np.arange(K)[None, :]) & 1).astype(bool)
        variables = parents + [node]
        with_node = np.hstack([bits, np.ones((2**K, 1), dtype=bool)])
        without = np.hstack([bits, np.zeros((2**K, 1), dtype=bool)])
        return self._batched_logmarg(variables, with_node) - self._batched_logmarg(variables, without)

    def extended(self, node: int, parents, outside) -> np.ndarray:
        """Tables of S(node, Z + {j}) for every outside node ``j``, shape (len(outside), 2**K)."""
        parents = [int(p) for p in parents]
        K = len(parents)
        masks = np.arange(2**K)
        bits = ((masks[:, None] >> np.arange(K)[None, :]) & 1).astype(bool)
        ones = np.ones((2**K, 1), dtype=bool)
        with_node = np.hstack([bits, ones, ones])
        without = np.hstack([bits, ones, ~ones])
        out = np.empty((len(outside), 2**K))
        for r, j in enumerate(outside):
            variables = parents + [int(j), node]
            out[r] = self._batched_logmarg(variables, with_node) - self._batched_logmarg(
                variables, without
            )
        return out


def bge_local(node: int, parents, stats: GaussianStats) -> float:
    """BGe local score of ``node`` given ``parents`` from precomputed Gaussian statistics."""
    return BGeScore(stats).local(node, parents)


def bde_local(counts_n1, counts_n0, chi: float = 1.0) -> float:
    """BDe log score from per-configuration counts of the child being 1 and 0.

    Each of the ``2**m`` parent configurations gets pseudocount ``chi / 2**(m+1)``
    per child state.
    """
    if chi <= 0:
        raise ValueError("chi must be positive")
    n1 = np.asarray(counts_n1, dtype=float)
    n0 = np.asarray(counts_n0, dtype=float)
    if n1.shape != n0.shape or n1.ndim != 1:
        raise ValueError("count vectors must be 1-d of equal length")
    size = n1.size
    if size & (size - 1):
        raise ValueError("count vectors must have power-of-two length")
    a_cfg = chi / size
    a_cell = a_cfg / 2.0
    return float(
        np.sum(
            gammaln(a_cfg)
            - 2.0 * gammaln(a_cell)
            + gammaln(n1 + a_cell)
            + gammaln(n0 + a_cell)
            - gammaln(n1 + n0 + a_cfg)
        )
    )


def collapse_index(t, j):
    """Position (1-based) in the parent count vector feeding entry ``t`` after dropping parent ``j``.

    ``t`` indexes the collapsed vector and ``j`` is the 1-based rank of the dropped
    parent among the remaining parent set.
    """
    t = np.asarray(t)
    step = 2 ** (j - 1)
    return t + (-(-t // step) - 1) * step


def collapse_counts(counts: np.ndarray, j: int) -> np.ndarray:
    """Merge the two halves of a count vector that differ only in parent ``j`` (1-based)."""
    half = counts.size // 2
    t = np.arange(1, half + 1)
    v = collapse_index(t, j) - 1
    return counts[v] + counts[v + 2 ** (j - 1)]


def parent_counts(node: int, parents, values: np.ndarray):
    """Count vectors (n1, n0) of the child over all configurations of ``parents``."""
    parents = list(parents)
    x = np.asarray(values)
    cfg = np.zeros(x.shape[0], dtype=np.int64)
    for k, p in enumerate(parents):
        cfg |= x[:, p].astype(np.int64) << k
    size = 2 ** len(parents)
    child = x[:, node] == 1
    n1 = np.bincount(cfg[child], minlength=size)
    n0 = np.bincount(cfg[~child], minlength=size)
    return n1, n0


def binary_count_lattice(node: int, h, d: Dataset) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Count vectors for every subset of ``h``, built from one pass over the data.

    Subsets are visited from the full set downwards; each one collapses the
    vectors of a superset with one extra parent (its lowest missing member).
    """
    h = list(h)
    K = len(h)
    full = 2**K - 1
    lattice = {full: parent_counts(node, h, d.values)}
    order = sorted(range(full), key=lambda m: -bin(m).count("1"))
    for mask in order:
        missing = (~mask) & full
        low = missing & -missing
        child = mask | low
        rank = bin(child & (low - 1)).count("1") + 1
        n1, n0 = lattice[child]
        lattice[mask] = (collapse_counts(n1, rank), collapse_counts(n0, rank))
    return lattice


def binary_score_table(node: int, h, d: Dataset, chi: float = 1.0) -> np.ndarray:
    if d.kind != "binary":
        raise ValueError("binary_score_table needs binary data")
    lattice = binary_count_lattice(node, h, d)
    table = np.empty(2 ** len(h))
    for mask, (n1, n0) in lattice.items():
        table[mask] = bde_local(n1, n0, chi)
    return table


class BDeScore:
    """BDe score for binary data with total pseudocount ``chi``."""

    kind = "bde"

    def __init__(self, d: Dataset, chi: float = 1.0):
        if d.kind != "binary":
            raise ValueError("BDe score needs binary data")
        if chi <= 0:
            raise ValueError("chi must be positive")
        self.data = d
        self.chi = float(chi)
        self.n = d.n_vars

    def local(self, node: int, parents) -> float:
        parents = list(parents)
        if node in parents:
            raise ValueError("node cannot be its own parent")
        n1, n0 = parent_counts(node, parents, self.data.values)
        return bde_local(n1, n0, self.chi)

    def table(self, node: int, parents) -> np.ndarray:
        return binary_score_table(node, parents, self.data, self.chi)

    def extended(self, node: int, parents, outside) -> np.ndarray:
        parents = list(parents)
        K = len(parents)
        out = np.empty((len(outside), 2**K))
        for r, j in enumerate(outside):
            out[r] = binary_score_table(node, parents + [int(j)], self.data, self.chi)[2**K :]
        return out


def make_scorer(d: Dataset, **params):
    if d.kind == "binary":
        return BDeScore(d, chi=params.get("chi", 1.0))
    hyper = BGeHyper(
        alpha_mu=params.get("alpha_mu", 1.0),
        alpha_w=params.get("alpha_w"),
        t_scale=params.get("t_scale"),
    )
    return BGeScore.from_data(d, hyper)


def dag_score(scorer, adj) -> float:
    adj = np.asarray(adj)
    return sum(scorer.local(i, np.flatnonzero(adj[:, i])) for i in range(adj.shape[0]))
