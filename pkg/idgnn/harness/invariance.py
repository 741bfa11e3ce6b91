"""
Invariance ratio
----------------
For one example, resample IDs K times, take the argmax class each time and
report the frequency of the most common class. Node tasks average the
per-node ratios over the example's labeled nodes; a split reports the mean
over its examples.

Also home to the witness predictor that is ID-invariant on a chosen set of
graphs and not invariant anywhere else.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, List, Optional, Protocol, Sequence, Tuple, runtime_checkable

import numpy as np

from idgnn.core.graph import Dataset, Graph, GraphBatch, TaskKind, make_batch, unbatch
from idgnn.core.node_ids import IdAssignment, IdConfig, IdMode, sample_ids
from idgnn.errors import ContractViolation, InternalError
from idgnn.harness.evaluate import DEFAULT_EVAL_SEED, evaluate
from idgnn.harness.metrics import MetricsLog, MetricsRow

logger = logging.getLogger(__name__)

DEFAULT_K = 200
DEFAULT_CHUNK = 50


@runtime_checkable
class IdPredictor(Protocol):
    """Anything that maps (batch, IDs) to one class per graph or per node."""

    num_classes: int
    task_kind: TaskKind
    id_config: IdConfig

    def predict_classes(self, batch: GraphBatch, ids: Optional[IdAssignment] = None) -> np.ndarray: ...


@dataclass
class InvarianceReport:
    per_example: List[float]
    mean: float
    K: int
    split: str
    num_classes: int
    epoch: Optional[int] = None

    def __post_init__(self) -> None:
        low = 1.0 / self.num_classes - 1e-12
        for r in self.per_example:
            if not low <= r <= 1.0 + 1e-12:
                raise InternalError(f"invariance ratio {r} outside [1/{self.num_classes}, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _targets(example: Graph, task_kind: TaskKind) -> np.ndarray:
    if task_kind == TaskKind.GRAPH:
        return np.zeros(1, dtype=np.int64)
    if example.node_labels is None:
        return np.arange(example.num_nodes, dtype=np.int64)
    return np.array(example.supervised_nodes(), dtype=np.int64)


def invariance_ratio(
    model: IdPredictor,
    example: Graph,
    K: int,
    rng: np.random.Generator,
    chunk_size: int = DEFAULT_CHUNK,
) -> float:
    """max_class P[argmax = class] over K ID draws; argmax ties go to the lowest class."""
    if K < 1:
        raise ContractViolation(f"invariance_ratio needs K >= 1, got {K}")
    targets = _targets(example, model.task_kind)
    if targets.size == 0:
        raise ContractViolation("example has no labeled nodes to measure")
    n = example.num_nodes
    counts = np.zeros((targets.size, model.num_classes), dtype=np.int64)
    rows = np.arange(targets.size)
    cfg = model.id_config

    if cfg.id_mode != IdMode.RNI:
        # output cannot depend on IDs: one forward stands for all K draws
        preds = model.predict_classes(make_batch([example]), None)
        picked = preds[targets] if model.task_kind == TaskKind.NODE else preds
        np.add.at(counts, (rows, picked), K)
    else:
        remaining = K
        while remaining > 0:
            c = min(chunk_size, remaining)
            batch = make_batch([example] * c)
            ids = np.concatenate([sample_ids(n, cfg.id_dim, rng, cfg.id_dist).values for _ in range(c)], axis=0)
            preds = model.predict_classes(batch, IdAssignment(ids, "invariance"))
            if model.task_kind == TaskKind.NODE:
                picked = preds.reshape(c, n)[:, targets]
            else:
                picked = preds.reshape(c, 1)
            for j in range(c):
                np.add.at(counts, (rows, picked[j]), 1)
            remaining -= c

    per_target = counts.max(axis=1) / K
    return float(per_target.mean())


def evaluate_invariance(
    model: IdPredictor,
    graphs: Sequence[Graph],
    K: int = DEFAULT_K,
    seed: int = DEFAULT_EVAL_SEED,
    split: str = "test",
    chunk_size: int = DEFAULT_CHUNK,
    epoch: Optional[int] = None,
) -> InvarianceReport:
    """Ratio per example, each on its own stream spawned from `seed`.

    Node-task examples without labeled nodes are skipped.
    """
    streams = np.random.SeedSequence(seed).spawn(len(graphs))
    per_example: List[float] = []
    for graph, stream in zip(graphs, streams):
        if _targets(graph, model.task_kind).size == 0:
            continue
        per_example.append(invariance_ratio(model, graph, K, np.random.default_rng(stream), chunk_size))
    if not per_example:
        raise ContractViolation(f"no example in split {split!r} has anything to measure")
    report = InvarianceReport(
        per_example=per_example,
        mean=float(np.mean(per_example)),
        K=K,
        split=split,
        num_classes=model.num_classes,
        epoch=epoch,
    )
    logger.info("Invariance on %s: %.4f over %d examples (K=%d)", split, report.mean, len(per_example), K)
    return report


Snapshots = Iterable[Tuple[int, IdPredictor]]


def invariance_curve(
    snapshots: Snapshots,
    dataset: Dataset,
    K: int = DEFAULT_K,
    seed: int = DEFAULT_EVAL_SEED,
    splits: Sequence[str] = ("train", "test"),
    metrics_log: Optional[MetricsLog] = None,
    labels: Optional[dict] = None,
) -> List[InvarianceReport]:
    """One report per (epoch, split) over a sequence of (epoch, model) snapshots.

    Splits missing from the dataset are skipped. With `metrics_log`, each report
    is appended together with the split accuracy; `labels` fills the
    dataset/model/method/seed columns.
    """
    labels = {"dataset": dataset.name, "model": "", "method": "", "seed": 0, **(labels or {})}
    reports: List[InvarianceReport] = []
    for epoch, model in snapshots:
        for split in splits:
            graphs = dataset.subset(split)
            if not graphs:
                continue
            report = evaluate_invariance(model, graphs, K, seed, split, epoch=epoch)
            reports.append(report)
            if metrics_log is not None:
                accuracy = evaluate(model, dataset, split, seed)["accuracy"]
                metrics_log.append(MetricsRow(
                    dataset=labels["dataset"],
                    model=labels["model"],
                    method=labels["method"],
                    epoch=epoch,
                    split=split,
                    task_metric=accuracy,
                    invariance_ratio=report.mean,
                    K=K,
                    seed=labels["seed"],
                ))
    return reports


# ---- Witness: invariant on S, not invariant off S ----

def even_edge_count(graph: Graph) -> float:
    return 1.0 if graph.num_edges % 2 == 0 else 0.0


def theorem1_witness(
    graph: Graph,
    ids: IdAssignment,
    member_of_S: Callable[[Graph], bool],
    prop: Callable[[Graph], float] = even_edge_count,
) -> float:
    """prop(G) for graphs in S (no ID dependence); the sum of all IDs otherwise."""
    if member_of_S(graph):
        return prop(graph)
    return float(np.sum(ids.values))


@dataclass
class WitnessPredictor:
    """theorem1_witness as an IdPredictor: class = floor(value) mod num_classes."""

    member_of_S: Callable[[Graph], bool]
    num_classes: int = 2
    id_config: IdConfig = field(default_factory=lambda: IdConfig(id_mode=IdMode.RNI, id_dim=1))
    task_kind: TaskKind = TaskKind.GRAPH

    def predict_classes(self, batch: GraphBatch, ids: Optional[IdAssignment] = None) -> np.ndarray:
        graphs = list(batch.source) if batch.source else unbatch(batch)
        if ids is None:
            raise ContractViolation("the witness reads IDs; pass an IdAssignment")
        out = np.zeros(len(graphs), dtype=np.int64)
        for i, (g, start) in enumerate(zip(graphs, batch.offsets)):
            value = theorem1_witness(g, ids.rows(int(start), int(start) + g.num_nodes), self.member_of_S)
            out[i] = int(np.floor(value)) % self.num_classes
        return out
