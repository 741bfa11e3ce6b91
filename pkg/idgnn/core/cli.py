"""
Command-line entry point
------------------------
    python -m idgnn <subcommand> [flags]

Subcommands: gen-istriangle, gen-wlhard, train, eval-invariance,
verify-theorem3, verify-wl, export-curves, grid, reproduce.

Every subcommand writes its outputs and a provenance.json under --out.
Exit codes: 0 ok, 1 runtime failure (one line on stderr), 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from idgnn.core.graph import Dataset, load_jsonl, make_batch, save_jsonl
from idgnn.core.layers import LayerKind, Model, ModelConfig, load_checkpoint, pooled_embedding
from idgnn.core.node_ids import IdConfig, IdMode, sample_ids
from idgnn.core.orchestrator import TASKS, reproduce
from idgnn.errors import IdgnnError, TrainingDiverged
from idgnn.harness.invariance import evaluate_invariance
from idgnn.harness.metrics import MetricsLog
from idgnn.harness.plots import export_curves
from idgnn.harness.provenance import ProvenanceWriter
from idgnn.harness.train import RECIPE_SECTIONS, Method, TrainConfig, grid_search, train_seeds
from idgnn.loadConfig import env_seed, read_config
from idgnn.tasks.constructive import canonicalize_ids, triangle_net, triangle_net_layers
from idgnn.tasks.synthetic import (
    BAParams,
    IsTriangleConfig,
    WLHardConfig,
    build_istriangle_dataset,
    build_wlhard_pairs,
    generate_ba,
    label_triangles,
)
from idgnn.tasks.wl import wl_distinguishable

logger = logging.getLogger("idgnn")

EMBEDDING_TOLERANCE = 1e-6


class UsageError(Exception):
    """Bad flags or missing input files; exit code 2."""


def configure_logging(verbose: bool = False, debug: bool = False) -> None:
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("[%(levelname)s] %(name)s: %(message)s"))
        logger.addHandler(handler)
    logger.setLevel(logging.DEBUG if (verbose or debug) else logging.INFO)


def _csv(kind: Callable[[str], Any]) -> Callable[[str], List[Any]]:
    def parse(text: str) -> List[Any]:
        try:
            return [kind(x.strip()) for x in text.split(",") if x.strip()]
        except ValueError as e:
            raise argparse.ArgumentTypeError(f"bad list {text!r}: {e}") from e
    return parse


def _env_seed() -> Optional[int]:
    try:
        return env_seed()
    except ValueError as e:
        raise UsageError(str(e)) from e


def _resolve_seed(args: argparse.Namespace) -> int:
    override = _env_seed()
    return override if override is not None else args.seed


def _require_file(path: Optional[str], what: str) -> Optional[Path]:
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _train_config(args: argparse.Namespace, ini: Dict[str, Dict[str, str]]) -> TrainConfig:
    """INI defaults, then the JSON --config document, then explicit flags."""
    cfg = TrainConfig.from_ini(ini, recipe=getattr(args, "recipe", None))
    config_path = _require_file(getattr(args, "config_json", None), "config file")
    if config_path is not None:
        with open(config_path, "r", encoding="utf-8") as f:
            try:
                doc = json.load(f)
            except json.JSONDecodeError as e:
                raise UsageError(f"{config_path}: not valid JSON ({e.msg})") from e
        cfg = TrainConfig.model_validate({**cfg.model_dump(), **doc})
    updates = {
        "kind": getattr(args, "model", None),
        "epochs": getattr(args, "epochs", None),
        "seeds": getattr(args, "seeds", None),
        "lr": getattr(args, "lr", None),
        "batch_size": getattr(args, "batch_size", None),
        "invariance_K": getattr(args, "K", None),
        "invariance_every": getattr(args, "invariance_every", None),
        "test_curve": True if getattr(args, "test_curve", False) else None,
    }
    seed = _env_seed()
    if seed is not None:
        updates["seeds"] = [seed]
    cfg = TrainConfig.model_validate({**cfg.model_dump(), **{k: v for k, v in updates.items() if v is not None}})
    method = getattr(args, "method", None)
    return cfg.for_method(method) if method else cfg


def _write_record(doc: Dict[str, Any], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_dataset(path: str, split: Optional[str] = None) -> Dataset:
    data = _require_file(path, "dataset")
    split_path = _require_file(split, "split file")
    return load_jsonl(data, split_path)


# ------------------
# Subcommands
# ------------------
def cmd_gen_istriangle(args, ini, out: Path, prov: ProvenanceWriter) -> List[Path]:
    cfg = IsTriangleConfig.from_ini(
        ini,
        num_graphs=args.graphs,
        num_nodes=args.nodes,
        m_train=args.m_train,
        m_test=args.m_extrap,
        node_budget=args.node_budget,
        num_test_graphs=args.test_graphs,
        seed=_resolve_seed(args),
    )
    prov.start(cfg.model_dump(mode="json"))
    datasets = build_istriangle_dataset(
        num_graphs=cfg.num_graphs,
        n=cfg.num_nodes,
        m_train=cfg.m_train,
        m_test=cfg.m_test,
        seed=cfg.seed,
        node_budget=cfg.node_budget,
        valid_fraction=cfg.valid_fraction,
        num_test_graphs=cfg.num_test_graphs,
    )
    written: List[Path] = []
    for ds in datasets:
        written.extend(save_jsonl(ds, out / f"{ds.name}.jsonl"))
    gen_path = out / "generator.json"
    gen_path.write_text(json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return written + [gen_path]


def cmd_gen_wlhard(args, ini, out: Path, prov: ProvenanceWriter) -> List[Path]:
    cfg = WLHardConfig.from_ini(ini, num_pairs=args.pairs, sizes=args.sizes, seed=_resolve_seed(args))
    prov.start(cfg.model_dump(mode="json"))
    ds = build_wlhard_pairs(cfg.num_pairs, cfg.sizes, cfg.seed)
    written = save_jsonl(ds, out / f"{ds.name}.jsonl")
    gen_path = out / "generator.json"
    gen_path.write_text(json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return written + [gen_path]


def cmd_train(args, ini, out: Path, prov: ProvenanceWriter) -> List[Path]:
    cfg = _train_config(args, ini)
    dataset = _load_dataset(args.data, args.split)
    test_sets = {Path(p).stem: _load_dataset(p) for p in (args.test or [])}
    prov.start(cfg.model_dump(mode="json"))
    metrics_path = out / "metrics.csv"
    record_path = out / "record.json"
    prov.keep(metrics_path)
    try:
        record = train_seeds(
            None, dataset, cfg, jobs=args.jobs,
            test_sets=test_sets, metrics_log=MetricsLog(metrics_path), checkpoint_dir=out / "checkpoints",
        )
    except TrainingDiverged as e:
        if e.record is not None:
            _write_record(e.record.to_dict(), record_path)
            prov.keep(record_path)
            logger.error("Partial record up to the divergence written to %s", record_path)
        raise
    _write_record(record.to_dict(), record_path)
    for name, stats in record.final.items():
        print(f"{name}: {stats['mean']:.4f} +/- {stats['std']:.4f}")
    return [metrics_path, record_path] + [Path(p) for p in record.checkpoints.values()]


def cmd_eval_invariance(args, ini, out: Path, prov: ProvenanceWriter) -> List[Path]:
    model = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    dataset = _load_dataset(args.data, args.split_file)
    K = args.K or int(ini.get("Invariance", {}).get("K", 200))
    seed = _resolve_seed(args)
    prov.start({"checkpoint": args.checkpoint, "data": args.data, "split": args.split, "K": K})
    report = evaluate_invariance(model, dataset.subset(args.split), K, seed, args.split)
    path = out / "invariance.json"
    path.write_text(report.to_json() + "\n", encoding="utf-8")
    print(f"{args.split}: invariance ratio {report.mean:.4f} over {len(report.per_example)} examples (K={K})")
    return [path]


def cmd_verify_theorem3(args, ini, out: Path, prov: ProvenanceWriter) -> List[Path]:
    seed = _resolve_seed(args)
    prov.start({"graphs": args.graphs, "max_nodes": args.max_nodes, "m": args.m, "resamples": args.resamples})
    rng = np.random.default_rng(seed)
    agree, invariant, intermediates_vary, canonical_ok = 0, 0, 0, 0
    for _ in range(args.graphs):
        n = int(rng.integers(args.m + 2, args.max_nodes + 1))
        graph = generate_ba(BAParams(n=n, m=args.m, seed=int(rng.integers(2**31))))
        truth = label_triangles(graph)
        first = triangle_net_layers(graph, sample_ids(n, 1, rng))
        agree += int(first.output == truth)
        outputs_same, layers_differ = True, False
        for _ in range(args.resamples):
            ids = sample_ids(n, 1, rng)
            trace = triangle_net_layers(graph, ids)
            outputs_same &= trace.output == first.output
            layers_differ |= trace.layer1 != first.layer1
            canonical_ok += int(triangle_net(graph, canonicalize_ids(graph, ids)) == truth)
        invariant += int(outputs_same)
        intermediates_vary += int(layers_differ)
    report = {
        "graphs": args.graphs,
        "agree": agree,
        "invariant": invariant,
        "intermediates_vary": intermediates_vary,
        "resamples": args.resamples,
        "canonical_agree": canonical_ok,
    }
    path = out / "theorem3.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{agree}/{args.graphs} agree; invariant under {args.resamples} resamples")
    if agree != args.graphs or invariant != args.graphs:
        raise IdgnnError(f"triangle_net check failed: {agree} agree, {invariant} invariant of {args.graphs}")
    return [path]


def cmd_verify_wl(args, ini, out: Path, prov: ProvenanceWriter) -> List[Path]:
    seed = _resolve_seed(args)
    ds = build_wlhard_pairs(args.pairs, args.sizes, seed)
    prov.start({"pairs": args.pairs, "sizes": list(args.sizes), "model": args.model})
    model = Model(ModelConfig(
        kind=args.model,
        feature_dim=1,
        ids=IdConfig(id_mode=IdMode.CONSTANT),
        hidden_dim=args.hidden_dim,
        num_layers=args.layers,
    ), seed=seed)
    indistinguishable, max_gap = 0, 0.0
    for p in range(args.pairs):
        g0, g1 = ds.graphs[2 * p], ds.graphs[2 * p + 1]
        indistinguishable += int(not wl_distinguishable(g0, g1))
        emb = pooled_embedding(model, make_batch([g0, g1]))
        max_gap = max(max_gap, float(np.max(np.abs(emb[0] - emb[1]))))
    report = {"pairs": args.pairs, "indistinguishable": indistinguishable, "max_embedding_gap": max_gap}
    path = out / "wl.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{indistinguishable}/{args.pairs} pairs 1-WL-indistinguishable; max pooled embedding gap {max_gap:.3e}")
    if indistinguishable != args.pairs or max_gap > EMBEDDING_TOLERANCE:
        raise IdgnnError(f"1-WL ceiling check failed (gap {max_gap:.3e})")
    return [path]


def cmd_export_curves(args, ini, out: Path, prov: ProvenanceWriter) -> List[Path]:
    metrics = _require_file(args.metrics, "metrics CSV")
    prov.start({"metrics": args.metrics})
    return export_curves(metrics, out)


def cmd_grid(args, ini, out: Path, prov: ProvenanceWriter) -> List[Path]:
    cfg = _train_config(args, ini)
    dataset = _load_dataset(args.data, args.split)
    prov.start(cfg.model_dump(mode="json"))
    cells, best = grid_search(dataset, cfg, jobs=args.jobs)
    path = out / "grid.json"
    path.write_text(json.dumps({"cells": cells, "best": best}, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print("best cell: " + ", ".join(f"{k}={best[k]}" for k in ("lr", "batch_size", "num_layers", "hidden_dim")))
    return [path]


def cmd_reproduce(args, ini, out: Path, prov: ProvenanceWriter) -> List[Path]:
    if args.recipe is None and args.task in RECIPE_SECTIONS:
        args.recipe = args.task
    cfg = _train_config(args, ini)
    models = args.models or [cfg.kind.value]
    seed = _resolve_seed(args)
    if args.task == "istriangle":
        gen = IsTriangleConfig.from_ini(ini, seed=seed).model_dump(mode="json")
    else:
        gen = WLHardConfig.from_ini(ini, seed=seed).model_dump(mode="json")
    prov.start({"train": cfg.model_dump(mode="json"), "generator": gen, "task": args.task})
    state = reproduce(
        args.task, str(out), cfg.model_dump(mode="json"),
        models=models, methods=args.methods, seed=seed, generator_config=gen,
    )
    return [Path(p) for p in state.get("artifacts", [])]


# ------------------
# Parser
# ------------------
def build_parser(ini: Dict[str, Dict[str, str]]) -> argparse.ArgumentParser:
    default_out = ini.get("General", {}).get("out_dir", "runs")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=default_out, help="directory every output is written under")
    common.add_argument("--seed", type=int, default=0, help="random seed (IDGNN_SEED overrides)")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--config", dest="config_json", help="JSON document of training settings")
    training.add_argument("--recipe", choices=sorted(RECIPE_SECTIONS), help="task recipe section layered over the INI defaults")
    training.add_argument("--method", choices=[m.value for m in Method], help="baseline, rni or icon")
    training.add_argument("--model", choices=[k.value for k in LayerKind], help="GNN layer kind")
    training.add_argument("--epochs", type=int, help="training epochs")
    training.add_argument("--seeds", type=_csv(int), help="comma-separated training seeds")
    training.add_argument("--lr", type=float, help="learning rate")
    training.add_argument("--batch-size", type=int, help="mini-batch size")
    training.add_argument("--K", type=int, help="ID resamples per invariance measurement")
    training.add_argument("--invariance-every", type=int, help="measure invariance every N epochs (0: only at the end)")
    training.add_argument("--jobs", type=int, default=1, help="worker processes")

    parser = argparse.ArgumentParser(prog="idgnn", description="ID-invariant GNN experiments")
    parser.add_argument("--ini", help="INI configuration file (default: config.ini)")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-istriangle", parents=[common], help="generate isInTriangle datasets")
    p.add_argument("--graphs", type=int, help="training graphs")
    p.add_argument("--nodes", type=int, help="nodes per graph")
    p.add_argument("--m-train", type=int, help="BA m for train and interpolation graphs")
    p.add_argument("--m-extrap", type=int, help="BA m for extrapolation graphs")
    p.add_argument("--node-budget", type=int, help="labeled nodes per split")
    p.add_argument("--test-graphs", type=int, help="graphs per test set")
    p.set_defaults(handler=cmd_gen_istriangle)

    p = sub.add_parser("gen-wlhard", parents=[common], help="generate 1-WL-indistinguishable cycle pairs")
    p.add_argument("--pairs", type=int, help="number of pairs")
    p.add_argument("--sizes", type=_csv(int), help="comma-separated even cycle sizes >= 6")
    p.set_defaults(handler=cmd_gen_wlhard)

    p = sub.add_parser("train", parents=[common, training], help="train one configuration over its seeds")
    p.add_argument("--data", required=True, help="dataset JSONL")
    p.add_argument("--split", help="split JSON (default: <data stem>.split.json)")
    p.add_argument("--test", action="append", help="extra test dataset JSONL (repeatable)")
    p.add_argument("--test-curve", action="store_true", help="log test accuracy at every evaluation")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval-invariance", parents=[common], help="invariance ratio of a checkpoint")
    p.add_argument("--checkpoint", required=True, help="model checkpoint JSON")
    p.add_argument("--data", required=True, help="dataset JSONL")
    p.add_argument("--split-file", help="split JSON")
    p.add_argument("--split", default="test", help="split to measure")
    p.add_argument("--K", type=int, help="ID resamples per example")
    p.set_defaults(handler=cmd_eval_invariance)

    p = sub.add_parser("verify-theorem3", parents=[common], help="check triangle_net against brute force")
    p.add_argument("--graphs", type=int, default=100, help="random BA graphs")
    p.add_argument("--max-nodes", type=int, default=50, help="largest graph size")
    p.add_argument("--m", type=int, default=2, help="BA edges per new node")
    p.add_argument("--resamples", type=int, default=50, help="ID resamples per graph")
    p.set_defaults(handler=cmd_verify_theorem3)

    p = sub.add_parser("verify-wl", parents=[common], help="check the 1-WL ceiling on cycle pairs")
    p.add_argument("--pairs", type=int, default=50, help="number of pairs")
    p.add_argument("--sizes", type=_csv(int), default=[6, 8, 10, 12], help="comma-separated even cycle sizes")
    p.add_argument("--model", choices=[k.value for k in LayerKind], default="GIN", help="GNN layer kind")
    p.add_argument("--layers", type=int, default=3, help="GNN layers")
    p.add_argument("--hidden-dim", type=int, default=32, help="hidden width")
    p.set_defaults(handler=cmd_verify_wl)

    p = sub.add_parser("export-curves", parents=[common], help="SVG curves and summary from a metrics CSV")
    p.add_argument("--metrics", required=True, help="metrics CSV")
    p.set_defaults(handler=cmd_export_curves)

    p = sub.add_parser("grid", parents=[common, training], help="hyperparameter grid search")
    p.add_argument("--data", required=True, help="dataset JSONL")
    p.add_argument("--split", help="split JSON")
    p.set_defaults(handler=cmd_grid)

    p = sub.add_parser("reproduce", parents=[common, training], help="generate, train, measure and export end to end")
    p.add_argument("--task", choices=TASKS, required=True, help="experiment to run")
    p.add_argument("--models", type=_csv(str), help="comma-separated layer kinds (default: the configured kind)")
    p.add_argument("--methods", type=_csv(str), default=["rni", "icon"], help="comma-separated methods")
    p.set_defaults(handler=cmd_reproduce)
    return parser


def _ini_path(argv: Sequence[str]) -> Optional[str]:
    for i, arg in enumerate(argv):
        if arg == "--ini" and i + 1 < len(argv):
            return argv[i + 1]
        if arg.startswith("--ini="):
            return arg.split("=", 1)[1]
    return None


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ini_path = _ini_path(argv)
    if ini_path is not None and not Path(ini_path).is_file():
        print(f"error: configuration file not found: {ini_path}", file=sys.stderr)
        return 2
    ini = read_config(ini_path)
    parser = build_parser(ini)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else 2

    debug = ini.get("General", {}).get("debug", "false").lower() == "true"
    configure_logging(args.verbose, debug)
    out = Path(args.out)
    prov = ProvenanceWriter(out, args.command, argv)
    try:
        prov.record.seed = _resolve_seed(args)
        artifacts = args.handler(args, ini, out, prov)
    except (UsageError, ValidationError) as e:
        prov.finish([], status="usage-error", error=str(e))
        print(f"error: {type(e).__name__}: {str(e).splitlines()[0]}", file=sys.stderr)
        return 2
    except (IdgnnError, OSError) as e:
        prov.finish([], status="failed", error=str(e))
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    prov.finish(artifacts)
    return 0


def main() -> None:
    sys.exit(run())
