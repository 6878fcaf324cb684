"""Command-line interface: dataset synthesis, growth, training, evaluation,
bond-level explanations and multi-run aggregation.

Exit codes: 0 success, 2 usage or configuration problems, 3 data or file
format problems, 4 numeric or training failures. Every command that writes
files also writes a run manifest beside them; the manifest timestamp is the
only non-deterministic output.

Relative ``--out`` paths resolve under ``$ENVGNN_OUT_ROOT`` when that
variable is set.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import os
import statistics
import sys

import numpy as np

from . import __version__
from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config, serialize_config
from .datasets import (
    MotifSpec,
    generate_spurious_motif,
    load_records,
    load_tu_dataset,
    save_records,
)
from .errors import (
    ArgumentError,
    CheckpointError,
    ChemistryError,
    ConfigError,
    DataFormatError,
    MetricError,
    NumericError,
    SmilesParseError,
    StateError,
    TrainingError,
)
from .generator import (
    generate_augmented_dataset,
    knowledge_validity_rate,
    load_library,
    starter_library,
)
from .logging_util import configure, get_logger
from .model import build_model_params
from .train import (
    ExperimentConfig,
    config_hash,
    edge_probability_map,
    eval_feature_view,
    evaluate,
    metrics_csv,
    run_experiment,
    split_dataset,
    summary_text,
)

log = get_logger(__name__)

OUT_ROOT_ENV = "ENVGNN_OUT_ROOT"
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_USAGE_ERRORS = (ConfigError, ArgumentError)
_DATA_ERRORS = (DataFormatError, SmilesParseError, ChemistryError, CheckpointError, OSError)
_NUMERIC_ERRORS = (NumericError, TrainingError, MetricError, StateError)


# ----------------------------------------------------------- shared bits


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _resolve_out(path: str) -> str:
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def _write_manifest(
    path: str,
    command: str,
    arg_pairs: list[tuple[str, object]],
    *,
    seed: int | None = None,
    cfg_hash: str | None = None,
    config_text: str | None = None,
) -> None:
    """Key-colon-value run record; the timestamp is its only varying field."""
    lines = [
        f"command: {command}",
        f"version: {__version__}",
        f"timestamp: {_utc_now()}",
    ]
    if seed is not None:
        lines.append(f"seed: {seed}")
    if cfg_hash is not None:
        lines.append(f"config_hash: {cfg_hash}")
    lines.append("args: " + " ".join(f"{k}={v}" for k, v in arg_pairs))
    if config_text is not None:
        lines.append("config:")
        lines.extend("  " + line for line in config_text.rstrip("\n").split("\n"))
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _load_dataset(path: str):
    """A directory is read as a TU-format dataset, a file as JSON records."""
    if os.path.isdir(path):
        return load_tu_dataset(path)
    return load_records(path)


def _restore_model(
    checkpoint_path: str, config: ExperimentConfig, feature_dim: int
) -> ad.ParameterStore:
    data = load_checkpoint(checkpoint_path, expected_config_hash=config_hash(config))
    store = ad.ParameterStore(np.random.default_rng(0))
    build_model_params(
        store,
        config.model,
        feature_dim,
        config.n_classes,
        config.gnn,
        config.mask,
        config.interaction,
    )
    store.load_state(data.params)
    return store


def _select_split(config: ExperimentConfig, dataset, which: str):
    if which == "all":
        return list(dataset)
    parts = split_dataset(config, dataset)
    return parts[("train", "val", "test").index(which)]


# ------------------------------------------------------------- commands


def _cmd_gen_motif(args: argparse.Namespace) -> int:
    out = _resolve_out(args.out)
    spec = MotifSpec(
        args.b, base_size_min=args.base_size_min, base_size_max=args.base_size_max
    )
    rng = np.random.default_rng(args.seed)
    graphs = generate_spurious_motif(args.n, spec, rng)
    _ensure_parent(out)
    save_records(graphs, out)
    _write_manifest(
        out + ".manifest.txt",
        "gen-motif",
        [("n", args.n), ("b", args.b), ("out", out)],
        seed=args.seed,
    )
    print(f"wrote {len(graphs)} graphs to {out}")
    return EXIT_OK


def _cmd_grow(args: argparse.Namespace) -> int:
    out = _resolve_out(args.out)
    dataset = _load_dataset(args.input)
    library = load_library(args.library) if args.library else starter_library()
    rng = np.random.default_rng(args.seed)
    grown = generate_augmented_dataset(dataset, library, args.k, args.mode, rng)
    new = grown[len(dataset):]
    _ensure_parent(out)
    save_records(grown, out)
    _write_manifest(
        out + ".manifest.txt",
        "grow",
        [("input", args.input), ("k", args.k), ("mode", args.mode), ("out", out)],
        seed=args.seed,
    )
    if new:
        rate = knowledge_validity_rate(new)
        print(
            f"grew {len(new)} graphs from {len(dataset)} inputs; "
            f"valence-valid: {100.0 * rate:.1f}%"
        )
    else:
        print(f"no graphs grown from {len(dataset)} inputs")
    return EXIT_OK


def _cmd_train(args: argparse.Namespace) -> int:
    out_dir = _resolve_out(args.out)
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    dataset = _load_dataset(args.data)
    result = run_experiment(config, dataset)

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8") as fh:
        fh.write(metrics_csv(result.report))
    with open(os.path.join(out_dir, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(summary_text(result.report))
    # The effective config (defaults and seed override applied), so eval
    # and explain have a ready-made --config for this run.
    with open(os.path.join(out_dir, "config.cfg"), "w", encoding="utf-8") as fh:
        fh.write(serialize_config(config))
    save_checkpoint(
        os.path.join(out_dir, "model.ckpt"),
        result.store.snapshot("float32"),
        config_hash=result.config_hash,
        adam_state=result.adam_state,
    )
    _write_manifest(
        os.path.join(out_dir, "manifest.txt"),
        "train",
        [("data", args.data), ("out", out_dir)],
        seed=config.seed,
        cfg_hash=result.config_hash,
        config_text=serialize_config(config),
    )
    print(summary_text(result.report), end="")
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    dataset = _load_dataset(args.data)
    part = eval_feature_view(config, _select_split(config, dataset, args.split))
    if not part:
        raise ArgumentError(f"split {args.split!r} selected no graphs")
    store = _restore_model(args.checkpoint, config, part[0].feature_matrix.shape[1])
    view = evaluate(store, part, config)
    text = (
        f"split: {args.split}\n"
        f"n_graphs: {len(part)}\n"
        f"accuracy: {view.accuracy!r}\n"
        f"auc: {view.auc!r}\n"
    )
    print(text, end="")
    if args.out:
        out = _resolve_out(args.out)
        _ensure_parent(out)
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
        _write_manifest(
            out + ".manifest.txt",
            "eval",
            [("checkpoint", args.checkpoint), ("data", args.data), ("split", args.split)],
            cfg_hash=config_hash(config),
        )
    return EXIT_OK


def _dot_text(graphs, p_per_graph, top_k: int) -> str:
    """One DOT graph block per input graph, invariant candidates in blue.

    The top-k bonds by (1 - p) are the invariant candidates; everything
    else renders gray.
    """
    lines = []
    for gi, (graph, p) in enumerate(zip(graphs, p_per_graph)):
        keep = {int(i) for i in np.argsort(p, kind="stable")[:top_k]}
        lines.append(f"graph g{gi} {{")
        lines.append("  node [shape=circle];")
        for ni, node in enumerate(graph.nodes):
            lines.append(f'  n{ni} [label="{node.element}"];')
        for ei, edge in enumerate(graph.edges):
            style = "color=blue, penwidth=2.0" if ei in keep else "color=gray"
            lines.append(f"  n{edge.u} -- n{edge.v} [{style}];")
        lines.append("}")
    return "\n".join(lines) + "\n"


def _cmd_explain(args: argparse.Namespace) -> int:
    out_dir = _resolve_out(args.out)
    config = load_config(args.config)
    graphs = eval_feature_view(config, _load_dataset(args.data))
    if not graphs:
        raise ArgumentError("no graphs to explain")
    store = _restore_model(args.checkpoint, config, graphs[0].feature_matrix.shape[1])
    p_per_graph = edge_probability_map(store, graphs, config)

    os.makedirs(out_dir, exist_ok=True)
    edge_lines = ["graph_id,u,v,p_uv"]
    top_lines = ["graph_id,rank,u,v,p_uv"]
    for gi, (graph, p) in enumerate(zip(graphs, p_per_graph)):
        for edge, value in zip(graph.edges, p):
            edge_lines.append(f"{gi},{edge.u},{edge.v},{float(value)!r}")
        for rank, ei in enumerate(np.argsort(p, kind="stable")[: args.top_k], start=1):
            edge = graph.edges[int(ei)]
            top_lines.append(f"{gi},{rank},{edge.u},{edge.v},{float(p[int(ei)])!r}")
    with open(os.path.join(out_dir, "edges.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(edge_lines) + "\n")
    with open(os.path.join(out_dir, "invariant_topk.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(top_lines) + "\n")
    with open(os.path.join(out_dir, "graphs.dot"), "w", encoding="utf-8") as fh:
        fh.write(_dot_text(graphs, p_per_graph, args.top_k))
    _write_manifest(
        os.path.join(out_dir, "manifest.txt"),
        "explain",
        [("checkpoint", args.checkpoint), ("data", args.data), ("top_k", args.top_k)],
        cfg_hash=config_hash(config),
    )
    print(f"wrote bond scores for {len(graphs)} graphs to {out_dir}")
    return EXIT_OK


def _read_key_colon_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            key, sep, value = raw.partition(":")
            if sep and not raw.startswith(" "):
                out[key.strip()] = value.strip()
    return out


def _cmd_report(args: argparse.Namespace) -> int:
    runs_dir = args.runs_dir
    if not os.path.isdir(runs_dir):
        raise ArgumentError(f"runs directory {runs_dir!r} does not exist")
    groups: dict[str, list[dict[str, str]]] = {}
    for dirpath, _dirnames, filenames in sorted(os.walk(runs_dir)):
        if "manifest.txt" not in filenames or "summary.txt" not in filenames:
            continue
        manifest = _read_key_colon_file(os.path.join(dirpath, "manifest.txt"))
        if manifest.get("command") != "train" or "config_hash" not in manifest:
            continue
        summary = _read_key_colon_file(os.path.join(dirpath, "summary.txt"))
        groups.setdefault(manifest["config_hash"], []).append(summary)
    if not groups:
        raise ArgumentError(f"no completed training runs found under {runs_dir!r}")

    csv_lines = [
        "config_hash,n_runs,mean_test_acc,std_test_acc,mean_test_auc,std_test_auc"
    ]
    print(f"{'config':12s} {'runs':>4s} {'test_acc':>20s} {'test_auc':>20s}")
    for cfg in sorted(groups):
        accs = [float(s["final_test_acc"]) for s in groups[cfg]]
        aucs = [float(s["final_test_auc"]) for s in groups[cfg]]
        acc_m, acc_s = statistics.fmean(accs), statistics.pstdev(accs)
        auc_m, auc_s = statistics.fmean(aucs), statistics.pstdev(aucs)
        csv_lines.append(
            f"{cfg},{len(accs)},{acc_m!r},{acc_s!r},{auc_m!r},{auc_s!r}"
        )
        print(
            f"{cfg[:12]:12s} {len(accs):4d} "
            f"{acc_m:9.4f} +/- {acc_s:.4f} {auc_m:9.4f} +/- {auc_s:.4f}"
        )
    if args.out:
        out = _resolve_out(args.out)
        _ensure_parent(out)
        with open(out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(csv_lines) + "\n")
    return EXIT_OK


# ------------------------------------------------------------ entrypoint


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="envgnn",
        description="Out-of-distribution graph classification workbench.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="debug-level logging"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "gen-motif", help="synthesize labeled graphs with a spuriously correlated base"
    )
    p.add_argument("--n", type=int, required=True, help="number of graphs")
    p.add_argument(
        "--b", type=float, required=True, help="base-motif correlation in [1/3, 1]"
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--base-size-min", type=int, default=8)
    p.add_argument("--base-size-max", type=int, default=15)
    p.add_argument("--out", required=True, help="records file to write")
    p.set_defaults(func=_cmd_gen_motif)

    p = sub.add_parser("grow", help="augment a dataset with grown variants")
    p.add_argument("--input", required=True, help="records file or TU directory")
    p.add_argument("--library", help="fragment library file (default: built-in)")
    p.add_argument("--k", type=int, default=1, help="grown variants per graph")
    p.add_argument("--mode", choices=("knowledge", "random"), default="knowledge")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="records file to write")
    p.set_defaults(func=_cmd_grow)

    p = sub.add_parser("train", help="train a model and write run artifacts")
    p.add_argument("--config", help="config file (default: all defaults)")
    p.add_argument("--data", required=True, help="records file or TU directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True, help="config the checkpoint was trained with")
    p.add_argument("--data", required=True, help="records file or TU directory")
    p.add_argument(
        "--split",
        choices=("train", "val", "test", "all"),
        default="all",
        help="evaluate this config-determined split of the data",
    )
    p.add_argument("--out", help="also write the metrics to this file")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("explain", help="write per-bond environment probabilities")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True, help="config the checkpoint was trained with")
    p.add_argument("--data", required=True, help="records file or TU directory")
    p.add_argument("--top-k", type=int, default=5, help="invariant candidates per graph")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_explain)

    p = sub.add_parser("report", help="aggregate metrics across training runs")
    p.add_argument("--runs-dir", required=True, help="directory holding run outputs")
    p.add_argument("--out", help="write the aggregate table as CSV")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse has already printed its message; fold into the int contract.
        return int(exc.code or 0)
    configure(verbose=args.verbose)
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
