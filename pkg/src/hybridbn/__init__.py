"""Bayesian network structure learning with precomputed score tables.

Order and partition MCMC run over a restricted search space of permissible
parents. All per-node sums and maxima the samplers need are tabulated up
front, so every MCMC step is a handful of table lookups.
"""

__version__ = "0.1.0"

from .chain import ChainConfig, ChainResult, DagSample, default_steps
from .data import BGeHyper, Dataset, DataError, GroundTruth, gaussian_stats, load_dataset, simulate
from .graphs import Cpdag, consensus, dag_to_cpdag, diagnostics, edge_posteriors, shd, tpr_fprn
from .lattice import LatticeError, ScoreLattices, build_max, build_restricted, build_summed
from .order import map_dag_given_order, run_chain, run_chains, sample_dag_given_order, score_order
from .partition import (
    LabelledPartition,
    dag_to_partition,
    run_partition_chain,
    run_partition_chains,
    sample_dag_given_partition,
    score_partition,
)
from .scores import BDeScore, BGeScore, bde_local, binary_score_table, dag_score, make_scorer
from .space import SearchSpace, improve_space, pc_skeleton

__all__ = [
    "BDeScore", "BGeHyper", "BGeScore", "ChainConfig", "ChainResult", "Cpdag", "DagSample",
    "DataError", "Dataset", "GroundTruth", "LabelledPartition", "LatticeError", "ScoreLattices",
    "SearchSpace", "bde_local", "binary_score_table", "build_max", "build_restricted",
    "build_summed", "consensus", "dag_score", "dag_to_cpdag", "dag_to_partition", "default_steps",
    "diagnostics", "edge_posteriors", "gaussian_stats", "improve_space", "load_dataset",
    "make_scorer", "map_dag_given_order", "pc_skeleton", "run_chain", "run_chains",
    "run_partition_chain", "run_partition_chains", "sample_dag_given_order",
    "sample_dag_given_partition", "score_order", "score_partition", "shd", "simulate", "tpr_fprn",
]
