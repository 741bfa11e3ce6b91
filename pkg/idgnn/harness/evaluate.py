"""Accuracy evaluation with IDs fixed by an evaluation seed."""
from __future__ import annotations

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np

from idgnn.core.graph import Dataset, Graph, TaskKind, make_batch
from idgnn.core.node_ids import IdAssignment, IdMode, sample_ids
from idgnn.errors import ContractViolation

logger = logging.getLogger(__name__)

DEFAULT_EVAL_SEED = 12345
EVAL_BATCH_SIZE = 64


def example_ids(model, graphs: Sequence[Graph], rngs: Sequence[np.random.Generator]) -> Optional[IdAssignment]:
    """One ID draw per graph from its own stream, stacked in batch order; None outside rni mode."""
    cfg = model.id_config
    if cfg.id_mode != IdMode.RNI:
        return None
    parts = [sample_ids(g.num_nodes, cfg.id_dim, rng, cfg.id_dist).values for g, rng in zip(graphs, rngs)]
    return IdAssignment(np.concatenate(parts, axis=0), seed_info="eval")


def evaluate(model, dataset: Dataset, split: str, eval_seed: int = DEFAULT_EVAL_SEED) -> Dict[str, float]:
    """Accuracy on one split: per graph for graph tasks, per labeled node for node tasks.

    Dropout is off. Each example gets its own ID stream spawned from
    `eval_seed`, so the numbers do not depend on batching.
    """
    graphs = dataset.subset(split)
    if not graphs:
        raise ContractViolation(f"split {split!r} of {dataset.name} is empty")
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(eval_seed).spawn(len(graphs))]

    correct, total = 0, 0
    for start in range(0, len(graphs), EVAL_BATCH_SIZE):
        chunk: List[Graph] = graphs[start:start + EVAL_BATCH_SIZE]
        batch = make_batch(chunk)
        preds = model.predict_classes(batch, example_ids(model, chunk, streams[start:start + EVAL_BATCH_SIZE]))
        if dataset.task_kind == TaskKind.GRAPH:
            correct += int(np.sum(preds == batch.graph_labels))
            total += batch.num_graphs
        else:
            targets = batch.target_nodes
            correct += int(np.sum(preds[targets] == batch.node_labels[targets]))
            total += int(targets.size)
    if total == 0:
        raise ContractViolation(f"split {split!r} of {dataset.name} has no labeled targets")
    return {"accuracy": correct / total, "count": float(total)}
