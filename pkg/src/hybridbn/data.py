"""Observation data: CSV ingestion, sufficient statistics and synthetic benchmarks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GRAPH_KINDS = ("uniform", "erdos", "powerlaw", "islands")


class DataError(ValueError):
    """Raised for malformed or invalid observation data."""


@dataclass(frozen=True)
class Dataset:
    values: np.ndarray
    kind: str = "continuous"
    var_names: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError("values must be a 2-d observations x variables matrix")
        if values.shape[0] < 1:
            raise DataError("dataset needs at least one observation")
        if self.kind not in ("continuous", "binary"):
            raise DataError(f"unknown data kind {self.kind!r}")
        if not np.all(np.isfinite(values)):
            r, c = np.argwhere(~np.isfinite(values))[0]
            raise DataError(f"missing or non-finite value at row {r + 1}, column {c + 1}")
        if self.kind == "binary" and not np.all((values == 0) | (values == 1)):
            r, c = np.argwhere((values != 0) & (values != 1))[0]
            raise DataError(
                f"binary data must be 0/1, found {values[r, c]:g} at row {r + 1}, column {c + 1}"
            )
        names = tuple(self.var_names) or tuple(f"X{i + 1}" for i in range(values.shape[1]))
        if len(names) != values.shape[1]:
            raise DataError("var_names length does not match number of columns")
        if len(set(names)) != len(names):
            raise DataError("variable names must be unique")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "var_names", names)

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]

    @property
    def n_obs(self) -> int:
        return self.values.shape[0]


def load_dataset(path, kind: str = "continuous") -> Dataset:
    """Read a comma separated file with a mandatory header row of variable names.

    Rows are observations, columns are variables. Empty cells and ``NA``/``NaN``
    markers are rejected with their (1-based) row and column.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        rows = []
        for r, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
            parsed = []
            for c, cell in enumerate(row, start=1):
                cell = cell.strip()
                if cell == "" or cell.upper() in ("NA", "NAN", "NULL"):
                    raise DataError(f"{path}: missing value at row {r}, column {c}")
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: cannot parse {cell!r} at row {r}, column {c}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no observations")
    return Dataset(np.array(rows), kind=kind, var_names=tuple(header))


def save_dataset(d: Dataset, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(d.var_names)
        for row in d.values:
            w.writerow([repr(float(x)) if d.kind == "continuous" else int(x) for x in row])


@dataclass(frozen=True)
class BGeHyper:
    """Normal-Wishart prior hyperparameters for the BGe score.

    ``alpha_w`` defaults to ``n + alpha_mu + 1`` and ``t_scale`` to
    ``alpha_mu * (alpha_w - n - 1) / (alpha_mu + 1)`` once ``n`` is known.
    """

    alpha_mu: float = 1.0
    alpha_w: float | None = None
    t_scale: float | None = None

    def resolve(self, n: int) -> "BGeHyper":
        am = float(self.alpha_mu)
        aw = float(self.alpha_w) if self.alpha_w is not None else n + am + 1.0
        if am <= 0:
            raise ValueError("alpha_mu must be positive")
        if aw <= n + 1:
            raise ValueError(f"alpha_w must exceed n + 1 = {n + 1}, got {aw}")
        t = float(self.t_scale) if self.t_scale is not None else am * (aw - n - 1) / (am + 1)
        if t <= 0:
            raise ValueError("t_scale must be positive")
        return BGeHyper(am, aw, t)


@dataclass(frozen=True)
class GaussianStats:
    n_obs: int
    scatter: np.ndarray
    means: np.ndarray
    hyper: BGeHyper = field(default_factory=BGeHyper)

    @property
    def n_vars(self) -> int:
        return self.scatter.shape[0]


def gaussian_stats(d: Dataset, hyper: BGeHyper | None = None) -> GaussianStats:
    if d.kind != "continuous":
        raise DataError("gaussian_stats needs continuous data")
    x = d.values
    if x.shape[0] == 0:
        raise DataError("no observations")
    means = x.mean(axis=0)
    xc = x - means
    scatter = xc.T @ xc
    scatter = 0.5 * (scatter + scatter.T)
    hyper = (hyper or BGeHyper()).resolve(d.n_vars)
    return GaussianStats(x.shape[0], scatter, means, hyper)


@dataclass(frozen=True)
class GroundTruth:
    dag: np.ndarray
    weights: np.ndarray

    def edges(self):
        return [(int(a), int(b), float(self.weights[a, b])) for a, b in zip(*np.nonzero(self.dag))]


def _random_edges(n, p, kind, rng, interconnect=0.1):
    """Upper-triangular edge indicator in topological index order."""
    if kind in ("uniform", "erdos"):
        return np.triu(rng.random((n, n)) < p, k=1)
    if kind == "islands":
        half = n // 2
        block = np.zeros((n, n), dtype=bool)
        block[:half, :half] = True
        block[half:, half:] = True
        probs = np.where(block, p, p * interconnect)
        return np.triu(rng.random((n, n)) < probs, k=1)
    if kind == "powerlaw":
        # preferential attachment: node k picks parents among 0..k-1 by degree + 1
        adj = np.zeros((n, n), dtype=bool)
        deg = np.zeros(n)
        per_node = p * n / 2.0  # mean parents per attached node
        base = int(math.floor(per_node))
        for k in range(1, n):
            m = min(base + int(rng.random() < per_node - base), k)
            if m == 0:
                continue
            w = deg[:k] + 1.0
            parents = rng.choice(k, size=m, replace=False, p=w / w.sum())
            adj[parents, k] = True
            deg[parents] += 1
            deg[k] += m
        return adj
    raise ValueError(f"unknown graph kind {kind!r}; choose from {GRAPH_KINDS}")


def simulate(
    n: int,
    avg_parents: float,
    weight_range=(0.4, 2.0),
    n_obs: int = 100,
    graph_kind: str = "uniform",
    seed=None,
    signed: bool = False,
) -> tuple[GroundTruth, Dataset]:
    """Random DAG plus linear-Gaussian data with unit noise and zero intercepts.

    Edges are drawn with probability ``2 * avg_parents / n`` between index-ordered
    pairs, giving ``avg_parents * (n - 1)`` edges on average. ``uniform`` keeps the
    index order as topological order; the other kinds relabel nodes randomly.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    lo, hi = map(float, weight_range)
    if not lo < hi:
        raise ValueError("weight_range must satisfy lo < hi")
    if avg_parents < 0 or avg_parents >= n - 1 or 2.0 * avg_parents / n > 1.0:
        raise ValueError(f"avg_parents={avg_parents} impossible for n={n}")
    rng = np.random.default_rng(seed)
    p = 2.0 * avg_parents / n
    adj = _random_edges(n, p, graph_kind, rng)
    w = np.zeros((n, n))
    k = int(adj.sum())
    mags = rng.uniform(lo, hi, size=k)
    if signed:
        mags *= rng.choice([-1.0, 1.0], size=k)
    w[adj] = mags
    x = np.zeros((n_obs, n))
    eps = rng.standard_normal((n_obs, n))
    for j in range(n):
        x[:, j] = x @ w[:, j] + eps[:, j]
    if graph_kind != "uniform":
        perm = rng.permutation(n)
        adj = adj[np.ix_(perm, perm)]
        w = w[np.ix_(perm, perm)]
        x = x[:, perm]
    truth = GroundTruth(adj.astype(np.int8), w)
    return truth, Dataset(x)


def save_truth(truth: GroundTruth, edges_path, adjacency_path, names=None) -> None:
    n = truth.dag.shape[0]
    names = names or [f"X{i + 1}" for i in range(n)]
    with Path(edges_path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["from", "to", "weight"])
        for a, b, wt in truth.edges():
            w.writerow([names[a], names[b], repr(wt)])
    write_adjacency(truth.dag, adjacency_path, names)


def write_adjacency(adj, path, names=None) -> None:
    adj = np.asarray(adj)
    n = adj.shape[0]
    names = list(names) if names is not None else [f"X{i + 1}" for i in range(n)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + names)
        for i in range(n):
            w.writerow([names[i]] + [int(v) for v in adj[i]])


def read_adjacency(path) -> tuple[np.ndarray, list[str]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty adjacency file")
    names = [c.strip() for c in rows[0][1:]]
    mat = []
    for r, row in enumerate(rows[1:], start=1):
        if not row:
            continue
        try:
            mat.append([int(float(c)) for c in row[1:]])
        except ValueError:
            raise DataError(f"{path}: non-numeric entry in row {r}") from None
    adj = np.array(mat, dtype=np.int8)
    if adj.shape != (len(names), len(names)):
        raise DataError(f"{path}: adjacency must be square with a header of {len(names)} names")
    return adj, names
