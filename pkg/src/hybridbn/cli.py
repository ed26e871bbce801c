"""Command-line entry point: ``hybridbn <subcommand> ...``.

Exit codes: 0 success, 2 bad usage, 3 data or file problem, 4 search space or
score table problem, 5 graph problem, 1 anything unexpected.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .chain import ChainConfig, default_steps, write_dag_stream, write_trace
from .data import DataError, load_dataset, read_adjacency, save_dataset, save_truth, simulate, write_adjacency
from .graphs import GraphError, consensus, dag_to_cpdag, diagnostics, edge_posteriors, shd, tpr_fprn
from .lattice import LatticeError, ScoreLattices, cache_key, load_lattices, save_lattices
from .scores import dag_score, make_scorer
from .space import SearchSpace, SpaceError, improve_space, pc_skeleton

log = logging.getLogger("hybridbn")

EXIT_USAGE, EXIT_DATA, EXIT_SPACE, EXIT_GRAPH, EXIT_OTHER = 2, 3, 4, 5, 1


class UsageError(Exception):
    pass


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_config(out: Path, args, **extra) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg.update(extra)
    cfg["version"] = __version__
    with (out / "config.json").open("w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _write_matrix(mat, path, names, fmt=repr) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + list(names))
        for i, row in enumerate(np.asarray(mat)):
            w.writerow([names[i]] + [fmt(float(v)) for v in row])


def _read_matrix(path) -> tuple[np.ndarray, list[str]]:
    try:
        with Path(path).open(newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except FileNotFoundError:
        raise DataError(f"{path}: file not found") from None
    if not rows:
        raise DataError(f"{path}: empty matrix file")
    try:
        mat = np.array([[float(c) for c in r[1:]] for r in rows[1:]])
    except ValueError:
        raise DataError(f"{path}: non-numeric matrix entry") from None
    return mat, rows[0][1:]


def _score_params(args) -> dict:
    if args.kind == "binary":
        return {"chi": args.chi}
    return {"alpha_mu": args.alpha_mu, "alpha_w": args.alpha_w, "t_scale": args.t_scale}


def _load_space(args, d) -> SearchSpace:
    if args.space == "pc":
        return pc_skeleton(d, alpha=args.alpha)
    try:
        adj, names = read_adjacency(args.space)
    except FileNotFoundError:
        raise DataError(f"--space {args.space}: file not found") from None
    if adj.shape != (d.n_vars, d.n_vars):
        raise SpaceError(f"--space {args.space}: {adj.shape} matrix for {d.n_vars} variables")
    return SearchSpace(adj)


def _lattices(args, d, scorer, space, extension: bool) -> ScoreLattices:
    key = cache_key(d.values, space.h_matrix, {"kind": d.kind, "ext": extension, **_score_params(args)})
    if args.cache:
        lat = load_lattices(args.cache, key, space.with_extension(extension))
        if lat is not None and lat.extension == extension:
            log.info("score tables loaded from %s", args.cache)
            return lat
    lat = ScoreLattices(scorer, space, extension=extension, k_max=args.k_max)
    if args.cache:
        save_lattices(args.cache, lat, key)
    return lat


def _seeds(text: str | None, chains: int) -> list[int]:
    if text is None:
        return list(range(1, chains + 1))
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {text!r}") from None
    if len(seeds) != chains:
        raise UsageError(f"--seeds lists {len(seeds)} values but --chains is {chains}")
    return seeds


# -- subcommands -------------------------------------------------------------
def cmd_simulate(args) -> None:
    out = _out_dir(args.out)
    truth, d = simulate(args.n, args.avg_parents, (args.weight_lo, args.weight_hi), args.n_obs,
                        args.graph_kind, args.seed, args.signed)
    save_dataset(d, out / "data.csv")
    save_truth(truth, out / "truth_edges.csv", out / "truth_adjacency.csv", list(d.var_names))
    _write_config(out, args)
    print(f"wrote {d.n_obs}x{d.n_vars} data and a {int(truth.dag.sum())}-edge DAG to {out}")


def cmd_space(args) -> None:
    d = load_dataset(args.data, args.kind)
    out = _out_dir(args.out)
    sp = pc_skeleton(d, alpha=args.alpha, max_cond=args.max_cond)
    sp.save(out / "space.csv", list(d.var_names))
    _write_config(out, args, n_edges=int(sp.h_matrix.sum() // 2), max_parents=sp.max_parents)
    print(f"skeleton with {int(sp.h_matrix.sum() // 2)} edges written to {out / 'space.csv'}")


def cmd_learn(args) -> None:
    d = load_dataset(args.data, args.kind)
    out = _out_dir(args.out)
    scorer = make_scorer(d, **_score_params(args))
    space = _load_space(args, d)
    steps = args.steps or default_steps(d.n_vars, args.c)
    gamma = "adaptive" if args.gamma == "adaptive" else float(args.gamma)
    cfg = ChainConfig(steps=steps, gamma=gamma, seed=args.seed, greedy=args.greedy)
    if args.no_iterate:
        lat = _lattices(args, d, scorer, space, args.extension)
        from .order import run_chain

        res = run_chain(cfg, lat, mode="map")
        final, best, records = space, res.best_dag, []
    else:
        final, best, trace = improve_space(space, scorer, cfg, args.max_iterations, args.k_max)
        records = trace.to_json()
    names = list(d.var_names)
    final.save(out / "space.csv", names)
    write_adjacency(best, out / "best_dag.csv", names)
    dag_to_cpdag(best).save(out / "best_cpdag.csv", names)
    score = dag_score(scorer, best)
    with (out / "trace.json").open("w") as fh:
        json.dump({"best_score": score, "iterations": records}, fh, indent=2)
        fh.write("\n")
    _write_config(out, args, resolved_steps=steps)
    print(f"best DAG: {int(best.sum())} edges, log score {score:.4f}")


def cmd_sample(args) -> None:
    d = load_dataset(args.data, args.kind)
    out = _out_dir(args.out)
    scorer = make_scorer(d, **_score_params(args))
    space = _load_space(args, d)
    n = d.n_vars
    steps = args.steps or default_steps(n, args.c)
    seeds = _seeds(args.seeds, args.chains)
    cfg = ChainConfig(steps=steps, burn_in_fraction=args.burn_in, thin=args.thin)
    lat = _lattices(args, d, scorer, space, args.extension)
    if args.sampler == "partition":
        from .partition import run_partition_chains

        results = run_partition_chains(cfg, lat, seeds)
    else:
        from .order import run_chains

        results = run_chains(cfg, lat, seeds, mode="sample")
    names = list(d.var_names)
    all_samples = []
    for r in results:
        write_trace(r, out / f"trace_chain{r.chain_id + 1}.csv")
        _write_matrix(edge_posteriors(r.samples, args.mode), out / f"edge_posterior_chain{r.chain_id + 1}.csv",
                      names)
        all_samples.extend(r.samples)
    write_dag_stream(all_samples, out / "dags.csv", names)
    post = edge_posteriors(all_samples, args.mode)
    _write_matrix(post, out / "edge_posterior.csv", names)
    _write_config(out, args, resolved_steps=steps, resolved_seeds=seeds, thin=cfg.thin_for(n))
    print(f"{len(all_samples)} DAG samples from {len(results)} chain(s) written to {out}")


def cmd_diagnose(args) -> None:
    a, _ = _read_matrix(args.run_a)
    b, _ = _read_matrix(args.run_b)
    if a.shape != b.shape:
        raise GraphError(f"{args.run_a} is {a.shape} but {args.run_b} is {b.shape}")
    res = diagnostics(a, b, args.threshold)
    # strict JSON has no NaN
    res = {k: (None if isinstance(v, float) and np.isnan(v) else v) for k, v in res.items()}
    text = json.dumps(res, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    print(text)


def cmd_eval(args) -> None:
    truth, names = read_adjacency(args.truth)
    true_cp = dag_to_cpdag(truth)
    rows = []
    for label, path in (("posterior", args.posterior), ("dag", args.dag), ("skeleton", args.skeleton)):
        if path is None:
            continue
        if label == "posterior":
            mat, _ = _read_matrix(path)
            est = consensus(mat, args.threshold)
        else:
            est, _ = read_adjacency(path)
        if est.shape != truth.shape:
            raise GraphError(f"{path}: {est.shape} matrix against a {truth.shape} truth")
        m = tpr_fprn(est, truth)
        if label == "dag":
            dist = shd(dag_to_cpdag(est), true_cp)
        elif label == "posterior":
            dist = shd(est, true_cp)
        else:
            dist = shd(est, true_cp)
        rows.append({"estimate": label, "path": str(path), "tp": m["tp"], "fp": m["fp"], "p": m["p"],
                     "tpr": m["tpr"], "fprn": m["fprn"], "shd": dist})
    if not rows:
        raise UsageError("give at least one of --posterior, --dag, --skeleton")
    fields = list(rows[0])
    writer = csv.DictWriter(sys.stdout, fields, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    if args.out:
        with Path(args.out).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fields, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)


# -- parser --------------------------------------------------------------------
def _add_score(p) -> None:
    p.add_argument("--data", required=True, help="CSV with a header row of variable names")
    p.add_argument("--kind", choices=["continuous", "binary"], default="continuous")
    p.add_argument("--alpha-mu", type=float, default=1.0)
    p.add_argument("--alpha-w", type=float, default=None)
    p.add_argument("--t-scale", type=float, default=None)
    p.add_argument("--chi", type=float, default=1.0, help="BDe pseudocount (binary data)")


def _add_space(p) -> None:
    p.add_argument("--space", default="pc", help="'pc' or an adjacency CSV of permissible parents")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--k-max", type=int, default=25)
    p.add_argument("--extension", action="store_true", help="allow one parent from outside the space")
    p.add_argument("--cache", default=None, help="score table cache file (.npz)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybridbn", description="Bayesian network structure learning "
                                 "with score tables over a restricted search space.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="random DAG and linear-Gaussian data")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--avg-parents", type=float, default=2.0)
    p.add_argument("--n-obs", type=int, default=100)
    p.add_argument("--weight-lo", type=float, default=0.4)
    p.add_argument("--weight-hi", type=float, default=2.0)
    p.add_argument("--graph-kind", choices=["uniform", "erdos", "powerlaw", "islands"], default="uniform")
    p.add_argument("--signed", action="store_true", help="random signs on edge weights")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("space", help="PC skeleton as a permissibility matrix")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=["continuous", "binary"], default="continuous")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--max-cond", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_space)

    p = sub.add_parser("learn", help="MAP search with iterative space improvement")
    _add_score(p)
    _add_space(p)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--c", type=float, default=20.0, help="steps = c n^2 log n when --steps is absent")
    p.add_argument("--gamma", default="adaptive", help="tempering exponent or 'adaptive'")
    p.add_argument("--greedy", action="store_true", help="take the best relocation instead of sampling")
    p.add_argument("--max-iterations", type=int, default=20)
    p.add_argument("--no-iterate", action="store_true", help="single MAP search on the given space")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("sample", help="posterior DAG sampling")
    _add_score(p)
    _add_space(p)
    p.add_argument("--sampler", choices=["order", "partition"], default="order")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--c", type=float, default=20.0)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--seeds", default=None, help="comma-separated, one per chain")
    p.add_argument("--thin", type=int, default=None)
    p.add_argument("--burn-in", type=float, default=0.2)
    p.add_argument("--mode", choices=["cpdag", "dag"], default="cpdag", help="edge posterior space")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("diagnose", help="squared correlation and RMSE of two edge-posterior runs")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("eval", help="TPR, FPRn and SHD against a true DAG")
    p.add_argument("--truth", required=True, help="true DAG adjacency CSV")
    p.add_argument("--posterior", default=None, help="edge-posterior CSV, thresholded")
    p.add_argument("--dag", default=None, help="point-estimate DAG adjacency CSV")
    p.add_argument("--skeleton", default=None, help="undirected skeleton adjacency CSV")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as e:
        print(f"hybridbn {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as e:
        print(f"hybridbn {args.command}: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (SpaceError, LatticeError) as e:
        print(f"hybridbn {args.command}: search space error: {e}", file=sys.stderr)
        return EXIT_SPACE
    except GraphError as e:
        print(f"hybridbn {args.command}: graph error: {e}", file=sys.stderr)
        return EXIT_GRAPH
    except ValueError as e:
        print(f"hybridbn {args.command}: invalid value: {e}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
