"""
Synthetic tasks
---------------
- Barabasi-Albert graphs (seed clique + degree urn) and isInTriangle labels
- isInTriangle train / interpolation / extrapolation datasets
- 1-WL-indistinguishable cycle pairs (C_2k vs C_k + C_k) for graph classification
"""
from __future__ import annotations

import logging
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from idgnn.core.graph import Dataset, Graph, TaskKind, relabel
from idgnn.errors import InternalError
from idgnn.tasks.wl import wl_distinguishable

logger = logging.getLogger(__name__)


# ---- Generator configs ----

class BAParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: int = Field(gt=1)
    m: int = Field(ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _m_below_n(self) -> "BAParams":
        if self.m >= self.n:
            raise ValueError(f"BA needs 1 <= m < n, got m={self.m}, n={self.n}")
        return self


class IsTriangleConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_graphs: int = Field(100, ge=1)
    num_nodes: int = Field(100, ge=4)
    m_train: int = Field(2, ge=1)
    m_test: int = Field(3, ge=1)
    node_budget: int = Field(500, ge=1)
    valid_fraction: float = Field(0.2, ge=0.0, lt=1.0)
    num_test_graphs: int = Field(20, ge=1)
    seed: int = 0

    @classmethod
    def from_ini(cls, config: Dict[str, Dict[str, str]], **overrides) -> "IsTriangleConfig":
        section = {k: v for k, v in config.get("Synthetic", {}).items() if k in cls.model_fields}
        section.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**section)


class WLHardConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_pairs: int = Field(100, ge=1)
    sizes: List[int] = Field(default_factory=lambda: [6, 8, 10, 12])
    seed: int = 0

    @field_validator("sizes", mode="before")
    @classmethod
    def _parse_sizes(cls, value):
        if isinstance(value, str):
            return [int(x) for x in value.split(",") if x.strip()]
        return value

    @field_validator("sizes")
    @classmethod
    def _even_and_large(cls, sizes: List[int]) -> List[int]:
        if not sizes:
            raise ValueError("sizes must not be empty")
        bad = [s for s in sizes if s < 6 or s % 2]
        if bad:
            raise ValueError(f"pair sizes must be even and >= 6, got {bad}")
        return sizes

    @classmethod
    def from_ini(cls, config: Dict[str, Dict[str, str]], **overrides) -> "WLHardConfig":
        section = {k: v for k, v in config.get("WLHard", {}).items() if k in cls.model_fields}
        section.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**section)


# ---- BA graphs and triangle labels ----

def generate_ba(params: BAParams) -> Graph:
    """Seed clique on m+1 nodes, then each new node picks m distinct targets from the degree urn."""
    rng = np.random.default_rng(params.seed)
    n, m = params.n, params.m
    edges: List[Tuple[int, int]] = list(combinations(range(m + 1), 2))
    urn: List[int] = [x for e in edges for x in e]
    for new in range(m + 1, n):
        targets = set()
        while len(targets) < m:
            targets.add(urn[int(rng.integers(len(urn)))])
        for t in sorted(targets):
            edges.append((t, new))
            urn.extend((t, new))
    return Graph.from_edges(n, edges)


def label_triangles(graph: Graph) -> List[int]:
    """1 for every node on at least one triangle, by brute force over adjacent pairs."""
    adjacent = [set(nb) for nb in graph.neighbors]
    labels = []
    for v in range(graph.num_nodes):
        found = any(w in adjacent[u] for u, w in combinations(graph.neighbors[v], 2))
        labels.append(int(found))
    return labels


# ---- isInTriangle ----

def _graph_seeds(children: Sequence[np.random.SeedSequence]) -> List[int]:
    return [int(c.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)) for c in children]


def _sample_labeled(graphs: List[Graph], indices: Sequence[int], budget: int, rng: np.random.Generator) -> Dict[int, List[int]]:
    """Pick `budget` (graph, node) pairs uniformly from the graphs in `indices`."""
    pool = [(gi, v) for gi in indices for v in range(graphs[gi].num_nodes)]
    take = min(budget, len(pool))
    chosen = rng.choice(len(pool), size=take, replace=False) if take else np.array([], dtype=np.int64)
    per_graph: Dict[int, List[int]] = {gi: [] for gi in indices}
    for k in chosen:
        gi, v = pool[int(k)]
        per_graph[gi].append(v)
    return per_graph


def _triangle_graphs(seeds: Sequence[int], n: int, m: int) -> List[Graph]:
    graphs = []
    for s in seeds:
        g = generate_ba(BAParams(n=n, m=m, seed=s))
        graphs.append(Graph.from_edges(g.num_nodes, g.edges, node_labels=label_triangles(g)))
    return graphs


def _with_labeled(graphs: List[Graph], labeled: Dict[int, List[int]]) -> List[Graph]:
    out = []
    for gi, g in enumerate(graphs):
        nodes = labeled.get(gi, [])
        out.append(Graph.from_edges(g.num_nodes, g.edges, node_labels=g.node_labels, labeled_nodes=nodes))
    return out


def build_istriangle_dataset(
    num_graphs: int = 100,
    n: int = 100,
    m_train: int = 2,
    m_test: int = 3,
    seed: int = 0,
    node_budget: int = 500,
    valid_fraction: float = 0.2,
    num_test_graphs: int = 20,
) -> Tuple[Dataset, Dataset, Dataset]:
    """Return (train, interpolation test, extrapolation test).

    The train dataset carries a train/valid split by graph. Each split keeps
    `node_budget` labeled nodes chosen uniformly over its graphs. The two test
    datasets are generated from fresh seeds, so no graph is shared with train.
    """
    children = np.random.SeedSequence(seed).spawn(num_graphs + 2 * num_test_graphs + 1)
    seeds = _graph_seeds(children[:-1])
    train_seeds = seeds[:num_graphs]
    interp_seeds = seeds[num_graphs:num_graphs + num_test_graphs]
    extrap_seeds = seeds[num_graphs + num_test_graphs:]
    rng = np.random.default_rng(children[-1])

    train_graphs = _triangle_graphs(train_seeds, n, m_train)
    order = rng.permutation(num_graphs)
    n_valid = int(round(valid_fraction * num_graphs))
    split = {
        "train": sorted(int(i) for i in order[n_valid:]),
        "valid": sorted(int(i) for i in order[:n_valid]),
    }
    labeled: Dict[int, List[int]] = {}
    for name in ("train", "valid"):
        labeled.update(_sample_labeled(train_graphs, split[name], node_budget, rng))
    common = {"n": n, "node_budget": node_budget, "seed": seed}
    train = Dataset(
        graphs=_with_labeled(train_graphs, labeled),
        split=split,
        task_kind=TaskKind.NODE,
        num_classes=2,
        name="istriangle",
        meta={**common, "m": m_train, "graph_seeds": train_seeds},
    )

    def _test_set(name: str, test_seeds: List[int], m: int) -> Dataset:
        graphs = _triangle_graphs(test_seeds, n, m)
        indices = list(range(len(graphs)))
        return Dataset(
            graphs=_with_labeled(graphs, _sample_labeled(graphs, indices, node_budget, rng)),
            split={"test": indices},
            task_kind=TaskKind.NODE,
            num_classes=2,
            name=name,
            meta={**common, "m": m, "graph_seeds": test_seeds},
        )

    interp = _test_set("istriangle-interp", interp_seeds, m_train)
    extrap = _test_set("istriangle-extrap", extrap_seeds, m_test)
    for ds in (train, interp, extrap):
        ds.validate()
        positives = [g.node_labels[v] for g in ds.graphs for v in g.supervised_nodes()]
        logger.info("Generated %s: %d graphs, %d labeled nodes, positive fraction %.3f",
                    ds.name, len(ds), len(positives), float(np.mean(positives)) if positives else 0.0)
    return train, interp, extrap


# ---- 1-WL-hard pairs ----

def _cycle_edges(nodes: Sequence[int]) -> List[Tuple[int, int]]:
    return [(nodes[i], nodes[(i + 1) % len(nodes)]) for i in range(len(nodes))]


def wlhard_pair(size: int, rng: Optional[np.random.Generator] = None) -> Tuple[Graph, Graph]:
    """(C_size labeled 0, C_{size/2} + C_{size/2} labeled 1), nodes randomly permuted."""
    k = size // 2
    one = _cycle_edges(list(range(size)))
    two = _cycle_edges(list(range(k))) + _cycle_edges(list(range(k, size)))
    ones = np.ones((size, 1))
    g0 = Graph.from_edges(size, one, features=ones, graph_label=0)
    g1 = Graph.from_edges(size, two, features=ones, graph_label=1)
    if rng is not None:
        g0 = relabel(g0, rng.permutation(size).tolist())
        g1 = relabel(g1, rng.permutation(size).tolist())
    return g0, g1


def build_wlhard_pairs(num_pairs: int = 100, sizes: Sequence[int] = (6, 8, 10, 12), seed: int = 0) -> Dataset:
    """Binary pair-classification dataset; pairs are split 60/20/20 so both members share a split."""
    cfg = WLHardConfig(num_pairs=num_pairs, sizes=list(sizes), seed=seed)
    rng = np.random.default_rng(seed)
    graphs: List[Graph] = []
    pair_sizes: List[int] = []
    for p in range(cfg.num_pairs):
        size = int(cfg.sizes[int(rng.integers(len(cfg.sizes)))])
        g0, g1 = wlhard_pair(size, rng)
        if wl_distinguishable(g0, g1):
            raise InternalError(f"pair {p} (size {size}) is 1-WL-distinguishable; the cycle generator is broken")
        graphs.extend((g0, g1))
        pair_sizes.append(size)

    order = rng.permutation(cfg.num_pairs)
    n_train = int(round(0.6 * cfg.num_pairs))
    n_valid = int(round(0.2 * cfg.num_pairs))
    groups = {
        "train": order[:n_train],
        "valid": order[n_train:n_train + n_valid],
        "test": order[n_train + n_valid:],
    }
    split = {name: sorted(int(i) for p in pairs for i in (2 * p, 2 * p + 1)) for name, pairs in groups.items()}
    dataset = Dataset(
        graphs=graphs,
        split=split,
        task_kind=TaskKind.GRAPH,
        num_classes=2,
        name="wlhard",
        meta={"seed": seed, "sizes": list(cfg.sizes), "pair_sizes": pair_sizes},
    )
    dataset.validate()
    logger.info("Generated wlhard: %d pairs (%s)", cfg.num_pairs, {k: len(v) for k, v in split.items()})
    return dataset
