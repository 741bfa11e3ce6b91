"""
Graph core
----------
Graph / GraphBatch / Dataset containers, batching, and the JSON-lines
dataset format (one graph per line, plus `.split.json` and `.meta.json`
side files).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from idgnn.errors import BatchError, DatasetParseError, GraphValidationError, IndexRangeError

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "valid", "test")


class TaskKind(str, Enum):
    GRAPH = "graph-classification"
    NODE = "node-classification"


# -------- Graph --------

def _integral(value: Any, what: str) -> int:
    if isinstance(value, (bool, np.bool_)):
        raise ValueError(f"{what} must be an integer, got {value!r}")
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)) and float(value).is_integer():
        return int(value)
    raise ValueError(f"{what} must be an integer, got {value!r}")


@dataclass(frozen=True, eq=False)
class Graph:
    num_nodes: int
    edges: Tuple[Tuple[int, int], ...]       # undirected, stored once with u < v
    features: Optional[np.ndarray] = None     # n x d
    graph_label: Optional[int] = None
    node_labels: Optional[Tuple[int, ...]] = None
    labeled_nodes: Optional[Tuple[int, ...]] = None  # supervised subset; None means all nodes

    @classmethod
    def from_edges(
        cls,
        num_nodes: int,
        edges: Iterable[Sequence[int]],
        features: Optional[Union[np.ndarray, Sequence[Sequence[float]]]] = None,
        graph_label: Optional[int] = None,
        node_labels: Optional[Sequence[int]] = None,
        labeled_nodes: Optional[Sequence[int]] = None,
    ) -> "Graph":
        """Build a graph, orienting every pair as (min, max). Does not validate.

        Indices and labels must be integral (2.0 passes, 2.5 raises
        ValueError). Features keep the shape they were given, except that a
        flat vector becomes one column; validate() checks the row count.
        """
        pairs = [(_integral(u, "edge endpoint"), _integral(v, "edge endpoint")) for u, v in edges]
        feats = None
        if features is not None:
            feats = np.array(features, dtype=np.float64)
            if feats.ndim == 1:
                feats = feats.reshape(-1, 1)
        return cls(
            num_nodes=_integral(num_nodes, "num_nodes"),
            edges=tuple((min(u, v), max(u, v)) for u, v in pairs),
            features=feats,
            graph_label=None if graph_label is None else _integral(graph_label, "graph_label"),
            node_labels=None if node_labels is None else tuple(_integral(x, "node label") for x in node_labels),
            labeled_nodes=None if labeled_nodes is None else tuple(sorted(_integral(x, "labeled node") for x in labeled_nodes)),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        if (self.features is None) != (other.features is None):
            return False
        if self.features is not None and not np.array_equal(self.features, other.features):
            return False
        return (
            self.num_nodes == other.num_nodes
            and self.edges == other.edges
            and self.graph_label == other.graph_label
            and self.node_labels == other.node_labels
            and self.labeled_nodes == other.labeled_nodes
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def feature_dim(self) -> int:
        return 0 if self.features is None else int(self.features.shape[1])

    @cached_property
    def edge_index(self) -> np.ndarray:
        return np.array(self.edges, dtype=np.int64).reshape(-1, 2)

    @cached_property
    def neighbors(self) -> Tuple[Tuple[int, ...], ...]:
        """Ascending neighbour lists, one per node."""
        adj: List[List[int]] = [[] for _ in range(self.num_nodes)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return tuple(tuple(sorted(a)) for a in adj)

    def adjacency(self) -> np.ndarray:
        """Dense symmetric 0/1 adjacency matrix (test oracle only)."""
        a = np.zeros((self.num_nodes, self.num_nodes))
        for u, v in self.edges:
            a[u, v] = 1.0
            a[v, u] = 1.0
        return a

    def supervised_nodes(self) -> Tuple[int, ...]:
        if self.node_labels is None:
            return ()
        if self.labeled_nodes is None:
            return tuple(range(self.num_nodes))
        return self.labeled_nodes

    def validate(self, graph_index: Optional[int] = None, num_classes: Optional[int] = None) -> None:
        n = self.num_nodes
        if n < 1:
            raise GraphValidationError(f"num_nodes must be positive, got {n}", graph_index)
        seen = set()
        for u, v in self.edges:
            if u == v:
                raise GraphValidationError(f"self-loop on node {u}", graph_index)
            if u > v:
                raise GraphValidationError(f"edge ({u}, {v}) is not stored with u < v", graph_index)
            if u < 0 or v >= n:
                raise GraphValidationError(f"edge ({u}, {v}) has an endpoint outside [0, {n})", graph_index)
            if (u, v) in seen:
                raise GraphValidationError(f"duplicate edge ({u}, {v})", graph_index)
            seen.add((u, v))
        if self.features is not None and (self.features.ndim != 2 or self.features.shape[0] != n):
            raise GraphValidationError(f"features of shape {self.features.shape} for {n} nodes", graph_index)
        if self.node_labels is not None and len(self.node_labels) != n:
            raise GraphValidationError(f"{len(self.node_labels)} node labels for {n} nodes", graph_index)
        if self.labeled_nodes is not None:
            if self.node_labels is None:
                raise GraphValidationError("labeled_nodes given without node_labels", graph_index)
            if len(set(self.labeled_nodes)) != len(self.labeled_nodes):
                raise GraphValidationError("labeled_nodes contains duplicates", graph_index)
            if any(v < 0 or v >= n for v in self.labeled_nodes):
                raise GraphValidationError("labeled_nodes entry outside the node range", graph_index)
        if num_classes is not None:
            labels = list(self.node_labels or ())
            if self.graph_label is not None:
                labels.append(self.graph_label)
            if any(y < 0 or y >= num_classes for y in labels):
                raise GraphValidationError(f"label outside [0, {num_classes})", graph_index)

    def to_record(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {"num_nodes": self.num_nodes, "edges": [list(e) for e in self.edges]}
        if self.features is not None:
            record["features"] = self.features.tolist()
        if self.graph_label is not None:
            record["graph_label"] = self.graph_label
        if self.node_labels is not None:
            record["node_labels"] = list(self.node_labels)
        if self.labeled_nodes is not None:
            record["labeled_nodes"] = list(self.labeled_nodes)
        return record


def relabel(graph: Graph, perm: Sequence[int]) -> Graph:
    """Rename node v to perm[v]; features and labels move with their nodes."""
    perm = np.asarray(perm, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(graph.num_nodes)):
        raise IndexRangeError("relabel: perm is not a permutation of the node set")
    features = None
    if graph.features is not None:
        features = np.zeros_like(graph.features)
        features[perm] = graph.features
    node_labels = None
    if graph.node_labels is not None:
        moved = [0] * graph.num_nodes
        for v, y in enumerate(graph.node_labels):
            moved[perm[v]] = y
        node_labels = moved
    labeled = None if graph.labeled_nodes is None else sorted(int(perm[v]) for v in graph.labeled_nodes)
    return Graph.from_edges(
        graph.num_nodes,
        [(perm[u], perm[v]) for u, v in graph.edges],
        features=features,
        graph_label=graph.graph_label,
        node_labels=node_labels,
        labeled_nodes=labeled,
    )


# -------- Batching --------

@dataclass(frozen=True, eq=False)
class GraphBatch:
    features: Optional[np.ndarray]   # merged n_total x d, None when every graph is featureless
    edge_index: np.ndarray           # E x 2 with per-graph node offsets applied
    membership: np.ndarray           # node -> graph index, non-decreasing
    node_counts: np.ndarray
    edge_counts: np.ndarray
    graph_labels: Optional[np.ndarray]
    node_labels: Optional[np.ndarray]
    labeled_mask: np.ndarray         # nodes whose labels count as targets
    source: Tuple[Graph, ...] = ()

    @property
    def num_nodes(self) -> int:
        return int(self.membership.shape[0])

    @property
    def num_graphs(self) -> int:
        return int(self.node_counts.shape[0])

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.node_counts)[:-1]]).astype(np.int64)

    @property
    def target_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.labeled_mask)


def make_batch(graphs: Sequence[Graph]) -> GraphBatch:
    if not graphs:
        raise BatchError("cannot batch an empty list of graphs")
    dims = {g.feature_dim for g in graphs}
    if len(dims) != 1:
        raise BatchError(f"graphs disagree on feature dimension: {sorted(dims)}")
    node_counts = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    edge_counts = np.array([g.num_edges for g in graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(node_counts)[:-1]]).astype(np.int64)

    edge_parts = [g.edge_index + off for g, off in zip(graphs, offsets)]
    edge_index = np.concatenate(edge_parts, axis=0) if edge_parts else np.zeros((0, 2), dtype=np.int64)
    membership = np.repeat(np.arange(len(graphs), dtype=np.int64), node_counts)

    features = None
    if dims != {0}:
        features = np.concatenate([g.features for g in graphs], axis=0)

    graph_labels = None
    if all(g.graph_label is not None for g in graphs):
        graph_labels = np.array([g.graph_label for g in graphs], dtype=np.int64)
    node_labels = None
    labeled_mask = np.zeros(int(node_counts.sum()), dtype=bool)
    if all(g.node_labels is not None for g in graphs):
        node_labels = np.concatenate([np.array(g.node_labels, dtype=np.int64) for g in graphs])
        for g, off in zip(graphs, offsets):
            labeled_mask[np.array(g.supervised_nodes(), dtype=np.int64) + off] = True

    return GraphBatch(
        features=features,
        edge_index=edge_index,
        membership=membership,
        node_counts=node_counts,
        edge_counts=edge_counts,
        graph_labels=graph_labels,
        node_labels=node_labels,
        labeled_mask=labeled_mask,
        source=tuple(graphs),
    )


def unbatch(batch: GraphBatch) -> List[Graph]:
    """Rebuild the member graphs from the merged arrays alone."""
    graphs: List[Graph] = []
    node_start, edge_start = 0, 0
    for i in range(batch.num_graphs):
        n = int(batch.node_counts[i])
        e = int(batch.edge_counts[i])
        edges = batch.edge_index[edge_start:edge_start + e] - node_start
        features = None if batch.features is None else batch.features[node_start:node_start + n]
        node_labels = None
        labeled = None
        if batch.node_labels is not None:
            node_labels = batch.node_labels[node_start:node_start + n].tolist()
            mask = batch.labeled_mask[node_start:node_start + n]
            original = batch.source[i].labeled_nodes if batch.source else None
            labeled = None if original is None and mask.all() else np.flatnonzero(mask).tolist()
        graphs.append(Graph.from_edges(
            n,
            edges.tolist(),
            features=features,
            graph_label=None if batch.graph_labels is None else int(batch.graph_labels[i]),
            node_labels=node_labels,
            labeled_nodes=labeled,
        ))
        node_start += n
        edge_start += e
    return graphs


# -------- Dataset --------

@dataclass
class Dataset:
    graphs: List[Graph]
    split: Dict[str, List[int]]
    task_kind: TaskKind
    num_classes: int
    name: str = "dataset"
    meta: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.graphs)

    def subset(self, split: str) -> List[Graph]:
        return [self.graphs[i] for i in self.split.get(split, [])]

    def validate(self) -> None:
        if self.num_classes < 2:
            raise GraphValidationError(f"num_classes must be >= 2, got {self.num_classes}")
        for i, g in enumerate(self.graphs):
            g.validate(graph_index=i, num_classes=self.num_classes)
            if self.task_kind == TaskKind.GRAPH and (g.graph_label is None or g.node_labels is not None):
                raise GraphValidationError("graph-classification needs exactly a graph_label", i)
            if self.task_kind == TaskKind.NODE and (g.node_labels is None or g.graph_label is not None):
                raise GraphValidationError("node-classification needs exactly node_labels", i)
        seen: Dict[int, str] = {}
        for name, indices in self.split.items():
            if name not in SPLIT_NAMES:
                raise GraphValidationError(f"unknown split name {name!r}")
            for idx in indices:
                if idx < 0 or idx >= len(self.graphs):
                    raise GraphValidationError(f"split {name!r} references missing graph {idx}")
                if idx in seen:
                    raise GraphValidationError(f"graph {idx} is in both {seen[idx]!r} and {name!r}")
                seen[idx] = name

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.graphs == other.graphs
            and self.split == other.split
            and self.task_kind == other.task_kind
            and self.num_classes == other.num_classes
            and self.name == other.name
            and self.meta == other.meta
        )


def _side_paths(path: Path) -> Tuple[Path, Path]:
    stem = path.with_suffix("")
    return Path(f"{stem}.split.json"), Path(f"{stem}.meta.json")


def save_jsonl(dataset: Dataset, path: Union[str, Path]) -> List[Path]:
    """Write graphs as JSON lines plus split and meta side files; returns the paths written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    split_path, meta_path = _side_paths(path)
    with open(path, "w", encoding="utf-8") as f:
        for g in dataset.graphs:
            f.write(json.dumps(g.to_record(), separators=(",", ":")) + "\n")
    with open(split_path, "w", encoding="utf-8") as f:
        json.dump({name: list(idx) for name, idx in dataset.split.items()}, f, indent=2)
    with open(meta_path, "w", encoding="utf-8") as f:
        json.dump(
            {
                "name": dataset.name,
                "task_kind": dataset.task_kind.value,
                "num_classes": dataset.num_classes,
                "meta": dataset.meta,
            },
            f,
            indent=2,
            sort_keys=True,
        )
    logger.info("Wrote %d graphs to %s", len(dataset.graphs), path)
    return [path, split_path, meta_path]


def _parse_record(obj: Any, line_number: int) -> Graph:
    if not isinstance(obj, dict):
        raise DatasetParseError("record is not a JSON object", line_number)
    for key in ("num_nodes", "edges"):
        if key not in obj:
            raise DatasetParseError(f"missing field {key!r}", line_number)
    if "graph_label" not in obj and "node_labels" not in obj:
        raise DatasetParseError("record carries neither graph_label nor node_labels", line_number)
    try:
        graph = Graph.from_edges(
            obj["num_nodes"],
            obj["edges"],
            features=obj.get("features"),
            graph_label=obj.get("graph_label"),
            node_labels=obj.get("node_labels"),
            labeled_nodes=obj.get("labeled_nodes"),
        )
        graph.validate()
    except GraphValidationError as e:
        raise DatasetParseError(str(e), line_number) from e
    except (TypeError, ValueError) as e:
        raise DatasetParseError(f"bad field value: {e}", line_number) from e
    return graph


def load_jsonl(path: Union[str, Path], split_path: Optional[Union[str, Path]] = None) -> Dataset:
    path = Path(path)
    default_split, meta_path = _side_paths(path)
    graphs: List[Graph] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetParseError(f"invalid JSON: {e.msg}", line_number) from e
            graphs.append(_parse_record(obj, line_number))

    meta: Dict[str, Any] = {}
    if meta_path.exists():
        with open(meta_path, "r", encoding="utf-8") as f:
            meta = json.load(f)
    if "task_kind" in meta:
        task_kind = TaskKind(meta["task_kind"])
    else:
        task_kind = TaskKind.NODE if graphs and graphs[0].node_labels is not None else TaskKind.GRAPH
    if "num_classes" in meta:
        num_classes = int(meta["num_classes"])
    else:
        labels = [y for g in graphs for y in (g.node_labels or ())] + [
            g.graph_label for g in graphs if g.graph_label is not None
        ]
        num_classes = max(2, max(labels, default=0) + 1)

    split_file = Path(split_path) if split_path is not None else default_split
    if split_file.exists():
        with open(split_file, "r", encoding="utf-8") as f:
            split = {name: [int(i) for i in idx] for name, idx in json.load(f).items()}
    else:
        split = {"train": list(range(len(graphs)))}

    dataset = Dataset(
        graphs=graphs,
        split=split,
        task_kind=task_kind,
        num_classes=num_classes,
        name=meta.get("name", path.stem),
        meta=meta.get("meta", {}),
    )
    dataset.validate()
    logger.info("Loaded %d graphs from %s (%s)", len(graphs), path, task_kind.value)
    return dataset
