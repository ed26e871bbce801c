"""Configuration, results and trace export shared by the order and partition samplers."""

from __future__ import annotations

import csv
import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def default_steps(n: int, c: float = 20.0) -> int:
    """Chain length ``ceil(c * n^2 * log n)``; at least 1000 for tiny problems."""
    if n < 2:
        return 1000
    return max(1000, int(math.ceil(c * n * n * math.log(n))))


@dataclass(frozen=True)
class ChainConfig:
    steps: int = 10_000
    burn_in_fraction: float = 0.2
    thin: int | None = None
    move_probs: tuple | None = None
    gamma: float | str = 1.0
    target_accept: float = 1.0
    seed: int | None = None
    resync_every: int = 1000
    greedy: bool = False
    start: tuple | None = None
    record_states: bool = False

    def __post_init__(self):
        if not 0.0 <= self.burn_in_fraction < 1.0:
            raise ValueError("burn_in_fraction must lie in [0, 1)")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.thin is not None and self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.move_probs is not None:
            p = np.asarray(self.move_probs, dtype=float)
            if np.any(p < 0) or not math.isclose(p.sum(), 1.0, abs_tol=1e-9):
                raise ValueError("move_probs must be non-negative and sum to 1")
        if not (self.gamma == "adaptive" or (isinstance(self.gamma, (int, float)) and self.gamma > 0)):
            raise ValueError("gamma must be a positive number or 'adaptive'")

    def replace(self, **kw) -> "ChainConfig":
        return dataclasses.replace(self, **kw)

    def burn_in(self) -> int:
        return int(self.burn_in_fraction * self.steps)

    def thin_for(self, n: int) -> int:
        return self.thin if self.thin is not None else max(1, n)


@dataclass
class DagSample:
    adjacency: np.ndarray
    chain: int
    step: int
    log_score: float


@dataclass
class MoveStats:
    proposed: dict = field(default_factory=dict)
    accepted: dict = field(default_factory=dict)

    def record(self, kind: str, accepted: bool) -> None:
        self.proposed[kind] = self.proposed.get(kind, 0) + 1
        if accepted:
            self.accepted[kind] = self.accepted.get(kind, 0) + 1

    def rate(self, kind: str) -> float:
        p = self.proposed.get(kind, 0)
        return self.accepted.get(kind, 0) / p if p else float("nan")


@dataclass
class ChainResult:
    mode: str
    sampler: str
    chain_id: int
    trace: np.ndarray
    burn_in: int
    samples: list[DagSample]
    states: list
    stats: MoveStats
    best_score: float = -math.inf
    best_state: object = None
    best_dag: np.ndarray | None = None
    max_drift: float = 0.0
    gamma_trace: list = field(default_factory=list)

    def edge_posterior(self, mode: str = "dag") -> np.ndarray:
        from .graphs import edge_posteriors

        return edge_posteriors(self.samples, mode=mode)


def write_trace(result: ChainResult, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "log_score"])
        for s, v in enumerate(result.trace):
            w.writerow([s, repr(float(v))])


def write_dag_stream(samples, path, names=None) -> None:
    """One row per edge: ``sample,chain,step,log_score,from,to``; edgeless samples get one blank-edge row."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "chain", "step", "log_score", "from", "to"])
        for k, s in enumerate(samples):
            edges = list(zip(*np.nonzero(s.adjacency)))
            head = [k, s.chain, s.step, repr(float(s.log_score))]
            if not edges:
                w.writerow(head + ["", ""])
            for p, c in edges:
                w.writerow(head + [names[p] if names else int(p), names[c] if names else int(c)])


def read_dag_stream(path, n: int, names=None) -> list[DagSample]:
    index = {nm: i for i, nm in enumerate(names)} if names else None
    out: dict[int, DagSample] = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            k = int(row["sample"])
            if k not in out:
                out[k] = DagSample(np.zeros((n, n), dtype=np.int8), int(row["chain"]),
                                   int(row["step"]), float(row["log_score"]))
            if row["from"] != "":
                p = index[row["from"]] if index else int(row["from"])
                c = index[row["to"]] if index else int(row["to"])
                out[k].adjacency[p, c] = 1
    return [out[k] for k in sorted(out)]


def worker_count() -> int:
    """Worker processes for multi-chain runs, from ``HYBRIDBN_WORKERS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("HYBRIDBN_WORKERS", "1")))
    except ValueError:
        return 1
