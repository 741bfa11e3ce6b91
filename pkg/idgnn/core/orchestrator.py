"""
LangGraph experiment pipeline: generate -> train -> invariance -> export
-----------------------------------------------------------------------
- generate: builds the isInTriangle datasets or the 1-WL-hard pair dataset
  and writes them as JSONL under <out>/data.
- train: every (layer kind, method) combination over the configured seeds,
  appending to <out>/metrics.csv and saving selected checkpoints.
- invariance: reloads the checkpoints and measures the invariance ratio on
  the train split and every test set.
- export: SVG curves and summary.csv under <out>/curves, records.json.

generate routes straight to export when no training is requested.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, TypedDict

from langgraph.graph import StateGraph

from idgnn.core.graph import Dataset, save_jsonl
from idgnn.core.layers import load_checkpoint
from idgnn.errors import ContractViolation
from idgnn.harness.invariance import evaluate_invariance
from idgnn.harness.metrics import MetricsLog
from idgnn.harness.plots import export_curves
from idgnn.harness.train import TrainConfig, train
from idgnn.tasks.synthetic import IsTriangleConfig, WLHardConfig, build_istriangle_dataset, build_wlhard_pairs

logger = logging.getLogger(__name__)

TASKS = ("istriangle", "wlhard")


class PipelineState(TypedDict, total=False):
    task: str
    out_dir: str
    seed: int
    models: List[str]
    methods: List[str]
    train_config: Dict[str, Any]
    generator_config: Dict[str, Any]

    datasets: Dict[str, Dataset]
    records: List[Dict[str, Any]]
    checkpoints: List[Dict[str, Any]]
    invariance: List[Dict[str, Any]]
    artifacts: List[str]

    processing_info: Dict[str, Any]


def _stage(state: PipelineState, stage: str) -> Dict[str, Any]:
    return {**state.get("processing_info", {}), "stage": stage}


# ------------------
# Nodes
# ------------------
def _node_generate(state: PipelineState) -> PipelineState:
    out = Path(state["out_dir"]) / "data"
    gen = state.get("generator_config", {})
    artifacts = list(state.get("artifacts", []))
    if state["task"] == "istriangle":
        cfg = IsTriangleConfig(**{**gen, "seed": state.get("seed", 0)})
        train_ds, interp, extrap = build_istriangle_dataset(
            num_graphs=cfg.num_graphs,
            n=cfg.num_nodes,
            m_train=cfg.m_train,
            m_test=cfg.m_test,
            seed=cfg.seed,
            node_budget=cfg.node_budget,
            valid_fraction=cfg.valid_fraction,
            num_test_graphs=cfg.num_test_graphs,
        )
        datasets = {"train": train_ds, "interp": interp, "extrap": extrap}
    else:
        cfg = WLHardConfig(**{**gen, "seed": state.get("seed", 0)})
        datasets = {"train": build_wlhard_pairs(cfg.num_pairs, cfg.sizes, cfg.seed)}
    for ds in datasets.values():
        artifacts.extend(p.as_posix() for p in save_jsonl(ds, out / f"{ds.name}.jsonl"))
    logger.info("Generated %s datasets: %s", state["task"], ", ".join(ds.name for ds in datasets.values()))
    return {
        **state,
        "generator_config": cfg.model_dump(mode="json"),
        "datasets": datasets,
        "artifacts": artifacts,
        "processing_info": _stage(state, "generated"),
    }


def _node_train(state: PipelineState) -> PipelineState:
    out = Path(state["out_dir"])
    datasets = state["datasets"]
    base = TrainConfig.model_validate({**state.get("train_config", {}), "final_invariance": False})
    test_sets = {name: ds for name, ds in datasets.items() if name != "train"}
    metrics_path = out / "metrics.csv"
    log = MetricsLog(metrics_path)

    records: List[Dict[str, Any]] = []
    checkpoints: List[Dict[str, Any]] = []
    for kind in state.get("models", ["GIN"]):
        for method in state.get("methods", ["rni", "icon"]):
            cfg = base.model_copy(update={"kind": kind}).for_method(method)
            logger.info("Training %s with %s on %s", kind, method, datasets["train"].name)
            record = train(None, datasets["train"], cfg, test_sets=test_sets, metrics_log=log,
                           checkpoint_dir=out / "checkpoints")
            records.append(record.to_dict())
            for seed, path in record.checkpoints.items():
                checkpoints.append({"model": record.model, "method": record.method, "seed": seed, "path": path})
    return {
        **state,
        "records": records,
        "checkpoints": checkpoints,
        "artifacts": list(state.get("artifacts", [])) + [metrics_path.as_posix()],
        "processing_info": _stage(state, "trained"),
    }


def _node_invariance(state: PipelineState) -> PipelineState:
    datasets = state["datasets"]
    cfg = TrainConfig.model_validate(state.get("train_config", {}))
    targets = [("train", datasets["train"], "train")]
    targets += [(name, ds, "test") for name, ds in datasets.items() if name != "train"]
    if datasets["train"].subset("test"):
        targets.append(("test", datasets["train"], "test"))

    results: List[Dict[str, Any]] = []
    for ckpt in state.get("checkpoints", []):
        model = load_checkpoint(ckpt["path"])
        for name, ds, split in targets:
            report = evaluate_invariance(model, ds.subset(split), cfg.invariance_K, cfg.eval_seed, split, cfg.chunk_size)
            results.append({**ckpt, "set": name, "ratio": report.mean, "K": report.K})
    path = Path(state["out_dir"]) / "invariance.json"
    path.write_text(json.dumps(results, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {
        **state,
        "invariance": results,
        "artifacts": list(state.get("artifacts", [])) + [path.as_posix()],
        "processing_info": _stage(state, "invariance_measured"),
    }


def _node_export(state: PipelineState) -> PipelineState:
    out = Path(state["out_dir"])
    artifacts = list(state.get("artifacts", []))
    metrics_path = out / "metrics.csv"
    if metrics_path.exists():
        artifacts.extend(p.as_posix() for p in export_curves(metrics_path, out / "curves"))
    records_path = out / "records.json"
    records_path.write_text(json.dumps(state.get("records", []), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    artifacts.append(records_path.as_posix())
    return {**state, "artifacts": artifacts, "processing_info": _stage(state, "exported")}


def route_after_generate(state: PipelineState) -> str:
    if state.get("methods") and state.get("models"):
        return "train"
    logger.info("No models or methods requested; skipping training")
    return "export"


# ------------------
# Graph builder API
# ------------------
def build_pipeline():
    """START -> generate -> (train -> invariance ->) export -> END"""
    graph = StateGraph(PipelineState)
    graph.add_node("generate", _node_generate)
    graph.add_node("train", _node_train)
    graph.add_node("invariance", _node_invariance)
    graph.add_node("export", _node_export)

    graph.set_entry_point("generate")
    graph.add_conditional_edges("generate", route_after_generate, {"train": "train", "export": "export"})
    graph.add_edge("train", "invariance")
    graph.add_edge("invariance", "export")
    graph.set_finish_point("export")
    return graph.compile()


def reproduce(
    task: str,
    out_dir: str,
    train_config: Dict[str, Any],
    models: List[str],
    methods: List[str],
    seed: int = 0,
    generator_config: Optional[Dict[str, Any]] = None,
) -> PipelineState:
    """Run the whole experiment for one task and return the final pipeline state."""
    if task not in TASKS:
        raise ContractViolation(f"unknown task {task!r}; expected one of {TASKS}")
    initial: PipelineState = {
        "task": task,
        "out_dir": str(out_dir),
        "seed": seed,
        "models": list(models),
        "methods": list(methods),
        "train_config": train_config,
        "generator_config": generator_config or {},
        "artifacts": [],
        "processing_info": {"stage": "start"},
    }
    return build_pipeline().invoke(initial)
