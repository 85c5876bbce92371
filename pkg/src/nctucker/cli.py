"""Command-line surface tying the pipeline together.

Subcommands: ``preprocess``, ``train``, ``query``, ``cluster``, ``subtype``,
``eval``.  Delimited results go to stdout; pass ``--out-dir`` to also write
them as CSV files with a rendered figure next to each report.  All indices
on the command line and in data files are 1-based (the wire convention);
the Python API underneath is 0-based.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io as nio
from . import plots
from .analytics import fold_in, gap_statistic, kmeans, subtype_matrix, top_k
from .engine import train
from .model import TrainConfig, init_random, objective, reconstruct_entries

# ShapeError/ConfigError/DataFormatError/NormalizationError are ValueErrors;
# ModelArchiveError/DivergenceError are RuntimeErrors
_ERRORS = (ValueError, OSError, RuntimeError)


def _emit(header, rows, out_dir, filename):
    """Print one CSV table to stdout; mirror it to a file when requested."""
    lines = [header]
    for row in rows:
        lines.append(
            ",".join(repr(float(c)) if isinstance(c, float) else str(c) for c in row)
        )
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if out_dir is not None:
        (out_dir / filename).write_text(text, encoding="utf-8")


def _out_dir(args):
    if args.out_dir is None:
        return None
    path = Path(args.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _cmd_preprocess(args):
    tensor = nio.load_sparse_tensor(args.input)
    normalized = nio.normalize_slices(tensor, args.slice_mode - 1)
    nio.save_sparse_tensor(normalized, args.output)
    print(
        f"normalized {tensor.dims[args.slice_mode - 1]} slices along mode "
        f"{args.slice_mode}; wrote {args.output}",
        file=sys.stderr,
    )
    return 0


class _Tee:
    def __init__(self, *streams):
        self.streams = streams

    def write(self, text):
        for stream in self.streams:
            stream.write(text)

    def flush(self):
        for stream in self.streams:
            stream.flush()


def _cmd_train(args):
    tensor = nio.load_sparse_tensor(args.tensor)
    config = TrainConfig(
        core_dims=tuple(int(j) for j in args.core_size.split(",")),
        learning_rate=args.lr,
        lam=args.lam,
        lam_g=args.lambda_g,
        threads=args.threads,
        constrained_mode=args.constrained_mode - 1,
        max_epochs=args.epochs,
        tolerance=args.tol,
        seed=args.seed,
    )
    config.validate(tensor.dims)
    graph = None
    if args.network is not None:
        graph = nio.load_network(
            args.network,
            tensor.dims[config.constrained_mode],
            config.constrained_mode,
        )
    out_dir = _out_dir(args)
    model = init_random(tensor.dims, config)
    if out_dir is not None:
        with open(out_dir / "metrics.csv", "wt", encoding="utf-8") as handle:
            report = train(model, tensor, graph, config, metrics=_Tee(sys.stdout, handle))
        plots.save_convergence_figure(
            report.objective_trace, out_dir / "convergence.png"
        )
    else:
        report = train(model, tensor, graph, config, metrics=sys.stdout)
    nio.save_model(model, config, args.model_out)
    print(
        f"{'converged' if report.converged else 'stopped'} after "
        f"{report.epochs_run} epochs; model saved to {args.model_out}",
        file=sys.stderr,
    )
    return 0


def _cmd_query(args):
    archive = nio.load_model(args.model)
    q = nio.load_query_slice(args.query_file, archive.model)
    u_q = fold_in(archive.model, q, archive.config)
    results = top_k(archive.model, u_q, args.k)
    out_dir = _out_dir(args)
    _emit(
        "component,value",
        [(j + 1, float(v)) for j, v in enumerate(u_q)],
        out_dir,
        "query_factor.csv",
    )
    sys.stdout.write("\n")
    _emit(
        "rank,entity,distance",
        [(r + 1, e + 1, d) for r, (e, d) in enumerate(results)],
        out_dir,
        "topk.csv",
    )
    if out_dir is not None:
        plots.save_topk_figure(u_q, results, out_dir / "query.png")
    return 0


def _cmd_cluster(args):
    archive = nio.load_model(args.model)
    rows = archive.model.factors[args.mode - 1]
    out_dir = _out_dir(args)
    gap = None
    if args.k is not None:
        k = args.k
    else:
        gap = gap_statistic(rows, 1, args.gap_kmax, args.gap_b, seed=args.seed)
        k = gap.selected_k
        print(f"gap statistic selected k = {k}", file=sys.stderr)
    assignments, _ = kmeans(rows, k, seed=args.seed)
    _emit(
        "entity,cluster",
        [(i + 1, int(c) + 1) for i, c in enumerate(assignments)],
        out_dir,
        "assignments.csv",
    )
    if gap is not None:
        sys.stdout.write("\n")
        _emit("k,gap,se", gap.table, out_dir, "gap.csv")
        if out_dir is not None:
            plots.save_gap_figure(gap.table, gap.selected_k, out_dir / "gap.png")
    if out_dir is not None:
        plots.save_cluster_sizes_figure(assignments, out_dir / "cluster_sizes.png")
    return 0


def _cmd_subtype(args):
    archive = nio.load_model(args.model)
    model = archive.model
    if args.entity is not None:
        if not 1 <= args.entity <= model.dims[0]:
            raise ValueError(
                f"entity {args.entity} outside 1..{model.dims[0]}"
            )
        u = model.factors[0][args.entity - 1]
    else:
        q = nio.load_query_slice(args.query_file, model)
        u = fold_in(model, q, archive.config)
    subtype = subtype_matrix(model, u)
    out_dir = _out_dir(args)
    header = "component," + ",".join(
        f"c{j + 1}" for j in range(subtype.s.shape[1])
    )
    _emit(
        header,
        [(j + 1, *map(float, row)) for j, row in enumerate(subtype.s)],
        out_dir,
        "subtype.csv",
    )
    sys.stdout.write("\n")
    _emit(
        "component,influence",
        [(j + 1, float(v)) for j, v in enumerate(subtype.row_influence)],
        out_dir,
        "row_influence.csv",
    )
    sys.stdout.write("\n")
    _emit(
        "platform,influence",
        [(i + 1, float(v)) for i, v in enumerate(subtype.platform_influence)],
        out_dir,
        "platform_influence.csv",
    )
    if out_dir is not None:
        plots.save_subtype_figure(subtype, out_dir / "subtype.png")
    return 0


def _cmd_eval(args):
    archive = nio.load_model(args.model)
    tensor = nio.load_sparse_tensor(args.tensor)
    config = archive.config
    graph = None
    if args.network is not None:
        graph = nio.load_network(
            args.network,
            tensor.dims[config.constrained_mode],
            config.constrained_mode,
        )
    f, f_g, f_opt = objective(archive.model, tensor, graph, config)
    residual = tensor.values - reconstruct_entries(archive.model, tensor.indices)
    rmse = float(np.sqrt(np.mean(residual**2)))
    _emit(
        "f,f_g,f_opt,rmse",
        [(f, f_g, f_opt, rmse)],
        _out_dir(args),
        "eval.csv",
    )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nctucker",
        description=(
            "Network-constrained sparse Tucker decomposition and the "
            "query/stratification tools built on it."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="per-slice min-max + unit-norm scaling")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--slice-mode", type=int, default=3,
                   help="1-based mode to slice along (default 3)")
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("train", help="fit a model with parallel SGD")
    p.add_argument("--tensor", required=True)
    p.add_argument("--network", default=None)
    p.add_argument("--constrained-mode", type=int, default=2,
                   help="1-based mode the network constrains (default 2)")
    p.add_argument("--core-size", required=True,
                   help="comma-separated core dims, e.g. 78,48,5")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--lambda", type=float, default=0.0, dest="lam")
    p.add_argument("--lambda-g", type=float, default=0.0, dest="lambda_g")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-out", required=True)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("query", help="fold in a profile and search neighbors")
    p.add_argument("--model", required=True)
    p.add_argument("--query-file", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("cluster", help="k-means stratification of factor rows")
    p.add_argument("--model", required=True)
    p.add_argument("--mode", type=int, default=1,
                   help="1-based mode whose rows are clustered (default 1)")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--gap-kmax", type=int, default=10)
    p.add_argument("--gap-B", type=int, default=10, dest="gap_b")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("subtype", help="per-entity subtype weight matrix")
    p.add_argument("--model", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--entity", type=int, default=None,
                       help="1-based mode-1 entity index")
    group.add_argument("--query-file", default=None)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=_cmd_subtype)

    p = sub.add_parser("eval", help="objective and RMSE on provided entries")
    p.add_argument("--model", required=True)
    p.add_argument("--tensor", required=True)
    p.add_argument("--network", default=None)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=_cmd_eval)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def console_main():
    sys.exit(main())


if __name__ == "__main__":
    console_main()
