"""Command-line entry point: ``angm <command> [options]``.

Commands
--------
generate        sample a synthetic planted-block network
train           fit the model and write embeddings, responsibilities and a checkpoint
cluster         Gaussian mixture clustering of an embedding file
classify        linear-probe node classification of an embedding file
inspect-blocks  block density matrix of a labelled graph
eval-synthetic  generate, train and score all synthetic patterns

Options can also come from a flat ``key = value`` config file passed with
``--config``; command-line flags take precedence. Keys use the long option
names with dashes or underscores. Outputs go to ``--out-dir``, which defaults
to ``$ANGM_OUTPUT_DIR`` or ``./angm-out``. Every run writes one JSON manifest.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from angm import evaluation, kernels
from angm.graph import (
    ATTR_MODES,
    BINARY,
    GraphFormatError,
    load_graph,
    read_embeddings,
    read_labels,
    write_embeddings,
    write_labels,
    write_matrix,
)
from angm.inference import TrainConfig, initial_result, save_checkpoint, train, write_history
from angm.synthgen import PATTERNS, SyntheticSpec, generate, write_synthetic

log = logging.getLogger("angm")

OUTPUT_DIR_ENV = "ANGM_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "angm-out"
PRESETS = {
    "small": {"hidden": 32, "lr": 0.001, "iters": 600},
    "large": {"hidden": 128, "lr": 0.01, "iters": 2000},
}
SYNTHETIC_ITERS = 200


# --- config file ---------------------------------------------------------------


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def _apply_config(parser, sub, values):
    """Turn config values into subparser defaults, typed like the flags."""
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key == "config":
            parser.error(f"unknown config key {key!r}")
        if action.nargs == 0:
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif action.nargs in ("+", "*"):
            defaults[key] = [action.type(v) if action.type else v for v in raw.replace(",", " ").split()]
        else:
            try:
                defaults[key] = action.type(raw) if action.type else raw
            except (TypeError, ValueError):
                parser.error(f"config key {key!r}: invalid value {raw!r}")
            if action.choices is not None and defaults[key] not in action.choices:
                parser.error(f"config key {key!r}: {raw!r} not in {list(action.choices)}")
    sub.set_defaults(**defaults)
    # required flags satisfied by the config file are no longer required
    for dest in defaults:
        actions[dest].required = False


# --- manifest ------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    seeds: list = field(default_factory=list)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    wall_seconds: float = 0.0
    environment: dict = field(default_factory=dict)

    def add_input(self, name, path):
        if path is not None:
            self.inputs[name] = {"path": os.path.abspath(path), "sha256": sha256_file(path)}

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, default=_json_default)
            fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _environment():
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "kernel_backend": kernels.BACKEND,
    }


# --- argument parser -----------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out-dir", help=f"output directory (default ${OUTPUT_DIR_ENV} or ./{DEFAULT_OUTPUT_DIR})")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_graph_inputs(p, labels_required=False):
    p.add_argument("--edges", required=True, help="edge list, one 'i j' pair per line")
    p.add_argument("--attrs", required=True, help="attribute CSV, one row per node")
    p.add_argument("--labels", required=labels_required, help="label file, one id per line")
    p.add_argument("--attr-mode", choices=ATTR_MODES, default=BINARY)


def _add_training(p, iters_default=None):
    p.add_argument("--k", type=int, required=True, help="number of blocks")
    p.add_argument("--d", type=int, default=20, help="embedding dimension")
    p.add_argument("--preset", choices=sorted(PRESETS), default="small")
    p.add_argument("--hidden", type=int, help="hidden layer width (preset default)")
    p.add_argument("--layers", type=int, default=2, help="hidden layers per network")
    p.add_argument("--lr", type=float, help="Adam learning rate (preset default)")
    p.add_argument("--iters", type=int, default=iters_default, help="maximum outer iterations (preset default)")
    p.add_argument("--samples", type=int, default=1, help="reparameterized samples per step")
    p.add_argument("--tol", type=float, default=1e-6, help="relative ELBO change for convergence")
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--inner-steps", type=int, default=5, help="network steps per outer iteration")
    p.add_argument("--warmup", type=int, default=200, help="network pre-training iterations")
    p.add_argument("--jobs", type=int, default=1, help="parallel restarts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="angm", description=__doc__.split("\n\n")[0])
    subs = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = subs.add_parser("generate", help="sample a synthetic network")
    _add_common(p)
    p.add_argument("--pattern", choices=PATTERNS, default="community")
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--h", type=int, default=50, help="attribute columns per block")
    p.add_argument("--ps1", type=float, default=0.4, help="dense link probability")
    p.add_argument("--ps2", type=float, default=0.1, help="sparse link probability")
    p.add_argument("--pa1", type=float, default=0.4, help="on-stripe attribute probability")
    p.add_argument("--pa2", type=float, default=0.1, help="off-stripe attribute probability")
    p.add_argument("--k1", type=int, help="community blocks of the hybrid pattern")
    p.add_argument("--k2", type=int, help="multipartite blocks of the hybrid pattern")
    p.add_argument("--omega", type=float, nargs="+", help="block proportions")
    p.add_argument("--prefix", help="output file prefix (default <out-dir>/<pattern>)")

    p = subs.add_parser("train", help="fit the model")
    _add_common(p)
    _add_graph_inputs(p)
    _add_training(p)

    p = subs.add_parser("cluster", help="Gaussian mixture clustering of embeddings")
    _add_common(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--labels", help="ground truth for NMI / AC")
    p.add_argument("--restarts", type=int, default=10)

    p = subs.add_parser("classify", help="linear-probe node classification")
    _add_common(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--train-ratios", type=float, nargs="+", default=[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8])
    p.add_argument("--test-ratio", type=float, default=0.2)
    p.add_argument("--repeats", type=int, default=10)

    p = subs.add_parser("inspect-blocks", help="block density matrix of a labelled graph")
    _add_common(p)
    _add_graph_inputs(p, labels_required=True)
    p.add_argument("--margin", type=float, default=2.0, help="standard errors of slack before flagging a pair")

    p = subs.add_parser("eval-synthetic", help="score the four synthetic patterns")
    _add_common(p)
    p.add_argument("--patterns", nargs="+", choices=PATTERNS, default=list(PATTERNS))
    p.add_argument("--repeats", type=int, default=1, help="generator seeds per pattern (median reported)")
    p.add_argument("--n", type=int, default=128)
    _add_training(p, iters_default=SYNTHETIC_ITERS)
    p.set_defaults(k=4)
    for a in p._actions:
        if a.dest == "k":
            a.required = False
    return parser


def parse_args(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    subs = parser._subparsers._group_actions[0].choices
    if known.config and argv and argv[0] in subs:
        try:
            values = read_config(known.config)
        except (OSError, ValueError) as exc:
            parser.error(str(exc))
        _apply_config(parser, subs[argv[0]], values)
    return parser.parse_args(argv)


# --- commands ------------------------------------------------------------------


def _out_dir(args):
    path = args.out_dir or os.environ.get(OUTPUT_DIR_ENV) or DEFAULT_OUTPUT_DIR
    os.makedirs(path, exist_ok=True)
    return path


def _train_config(args) -> TrainConfig:
    preset = PRESETS[args.preset]
    return TrainConfig(
        K=args.k,
        D=args.d,
        hidden=args.hidden if args.hidden is not None else preset["hidden"],
        n_layers=args.layers,
        lr=args.lr if args.lr is not None else preset["lr"],
        max_iter=args.iters if args.iters is not None else preset["iters"],
        samples=args.samples,
        tol=args.tol,
        restarts=args.restarts,
        seed=args.seed,
        attr_mode=getattr(args, "attr_mode", BINARY),
        inner_steps=args.inner_steps,
        warmup_iters=args.warmup,
        n_jobs=args.jobs,
    )


def cmd_generate(args, manifest):
    spec = SyntheticSpec(
        n=args.n, K=args.k, pattern=args.pattern, p_s1=args.ps1, p_s2=args.ps2,
        p_a1=args.pa1, p_a2=args.pa2, h=args.h, k1=args.k1, k2=args.k2,
        omega=args.omega, seed=args.seed,
    )
    prefix = args.prefix or os.path.join(_out_dir(args), spec.pattern)
    files = write_synthetic(spec, prefix)
    graph = files.pop("graph")
    manifest.config = spec.to_dict()
    manifest.outputs = files
    manifest.metrics = {"n_nodes": graph.n, "n_edges": graph.n_edges, "block_sizes": np.bincount(graph.labels).tolist()}
    print(f"wrote {files['edges']}, {files['attributes']}, {files['labels']} ({graph.n_edges} edges)")
    return os.path.dirname(os.path.abspath(prefix))


def cmd_train(args, manifest):
    graph = load_graph(args.edges, args.attrs, args.labels, args.attr_mode)
    for name in ("edges", "attrs", "labels"):
        manifest.add_input(name, getattr(args, name))
    config = _train_config(args)
    manifest.config = asdict(config)
    manifest.seeds = [config.seed + r for r in range(config.restarts)]
    out = _out_dir(args)

    if config.max_iter == 0:
        warnings.warn("--iters 0: writing the initialization only")
        result = initial_result(graph, config)
    else:
        result = train(graph, config)

    paths = {
        "embeddings": os.path.join(out, "embeddings.csv"),
        "tau": os.path.join(out, "tau.csv"),
        "checkpoint": os.path.join(out, "checkpoint.json"),
        "history": os.path.join(out, "history.csv"),
    }
    write_embeddings(result.embeddings, paths["embeddings"])
    write_matrix(result.tau, paths["tau"])
    save_checkpoint(paths["checkpoint"], result.params, result.nets, result.tau, config, len(result.history))
    write_history(result.history, paths["history"])
    manifest.outputs = paths
    metrics = {
        "iterations": len(result.history),
        "converged": result.converged,
        "elbo": result.elbo if result.history else None,
        "restart_elbos": result.restart_elbos,
        "best_seed": result.seed,
    }
    if graph.labels is not None:
        metrics["nmi_tau"] = evaluation.nmi(graph.labels, result.assignments)
        metrics["ac_tau"] = evaluation.accuracy(graph.labels, result.assignments)
    manifest.metrics = metrics
    elbo = f"{result.elbo:.4f}" if result.history else "n/a"
    print(f"iterations={len(result.history)} converged={result.converged} elbo={elbo}")
    return out


def cmd_cluster(args, manifest):
    emb = read_embeddings(args.embeddings)
    manifest.add_input("embeddings", args.embeddings)
    manifest.add_input("labels", args.labels)
    manifest.config = {"k": args.k, "restarts": args.restarts, "seed": args.seed}
    manifest.seeds = [args.seed]
    model, assign = evaluation.gmm_fit(emb, args.k, restarts=args.restarts, seed=args.seed)
    out = _out_dir(args)
    path = os.path.join(out, "clusters.labels")
    write_labels(assign, path)
    manifest.outputs = {"assignments": path}
    metrics = {"log_likelihood": model.log_likelihood[-1]}
    if args.labels:
        truth = read_labels(args.labels)
        metrics["nmi"] = evaluation.nmi(truth, assign)
        metrics["ac"] = evaluation.accuracy(truth, assign)
        print(f"NMI={metrics['nmi']:.4f} AC={metrics['ac']:.4f}")
    manifest.metrics = metrics
    print(f"wrote {path}")
    return out


def cmd_classify(args, manifest):
    emb = read_embeddings(args.embeddings)
    labels = read_labels(args.labels)
    manifest.add_input("embeddings", args.embeddings)
    manifest.add_input("labels", args.labels)
    manifest.config = {
        "train_ratios": args.train_ratios, "test_ratio": args.test_ratio, "repeats": args.repeats, "seed": args.seed,
    }
    manifest.seeds = [args.seed]
    scores = evaluation.classify_probe(
        emb, labels, args.train_ratios, test_ratio=args.test_ratio, repeats=args.repeats, seed=args.seed
    )
    rows = [{"train_ratio": f"{r:g}", "macro_f1": m, "micro_f1": u} for r, (m, u) in scores.items()]
    return _write_tables(args, manifest, rows, ["train_ratio", "macro_f1", "micro_f1"], "classification")


def cmd_inspect_blocks(args, manifest):
    graph = load_graph(args.edges, args.attrs, args.labels, args.attr_mode)
    for name in ("edges", "attrs", "labels"):
        manifest.add_input(name, getattr(args, name))
    manifest.config = {"margin": args.margin}
    report = evaluation.block_matrix(graph, graph.labels, margin_sigmas=args.margin)
    out = _out_dir(args)
    path = os.path.join(out, "blocks.json")
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    manifest.outputs = {"report": path}
    manifest.metrics = {"verdict": report.verdict}
    print(report.format())
    return out


def cmd_eval_synthetic(args, manifest):
    config = _train_config(args)
    manifest.config = {**asdict(config), "patterns": args.patterns, "repeats": args.repeats, "n": args.n}
    rows = []
    for pattern in args.patterns:
        per_seed = []
        for rep in range(args.repeats):
            gen_seed = args.seed + rep
            manifest.seeds.append(gen_seed)
            graph = generate(SyntheticSpec(n=args.n, K=config.K, pattern=pattern, seed=gen_seed))
            result = train(graph, config)
            _, gmm_assign = evaluation.gmm_fit(result.embeddings, config.K, seed=gen_seed)
            per_seed.append([
                evaluation.nmi(graph.labels, result.assignments),
                evaluation.accuracy(graph.labels, result.assignments),
                evaluation.nmi(graph.labels, gmm_assign),
                evaluation.accuracy(graph.labels, gmm_assign),
            ])
            log.info("%s seed %d: %s", pattern, gen_seed, per_seed[-1])
        med = np.median(np.array(per_seed), axis=0)
        rows.append({"pattern": pattern, "nmi_tau": med[0], "ac_tau": med[1], "nmi_gmm": med[2], "ac_gmm": med[3]})
    return _write_tables(args, manifest, rows, ["pattern", "nmi_tau", "ac_tau", "nmi_gmm", "ac_gmm"], "synthetic")


def _write_tables(args, manifest, rows, columns, stem):
    out = _out_dir(args)
    csv_path = os.path.join(out, f"{stem}.csv")
    txt_path = os.path.join(out, f"{stem}.txt")
    with open(csv_path, "w") as fh:
        fh.write(evaluation.results_csv(rows, columns))
    table = evaluation.results_table(rows, columns)
    with open(txt_path, "w") as fh:
        fh.write(table)
    manifest.outputs = {"csv": csv_path, "table": txt_path}
    manifest.metrics = {"rows": rows}
    print(table, end="")
    return out


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "cluster": cmd_cluster,
    "classify": cmd_classify,
    "inspect-blocks": cmd_inspect_blocks,
    "eval-synthetic": cmd_eval_synthetic,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    manifest = RunManifest(command=args.command, argv=argv, config={}, environment=_environment())
    start = time.perf_counter()
    try:
        out = COMMANDS[args.command](args, manifest)
    except (GraphFormatError, OSError, ValueError, RuntimeError) as exc:
        print(f"angm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    manifest.wall_seconds = time.perf_counter() - start
    path = os.path.join(out, f"manifest-{args.command}.json")
    manifest.write(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
