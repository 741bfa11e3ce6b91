"""
Hand-built networks over node IDs
---------------------------------
triangle_net: three concatenation layers. The first two copy IDs around
(and so depend on the ID values); the third only matches IDs against each
other, which makes its output the triangle indicator for any unique IDs.

canonicalize_ids: replaces arbitrary IDs with first-occurrence ranks found
through a node-equality oracle, so anything computed downstream of it is
ID-invariant.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from idgnn.core.graph import Graph
from idgnn.core.node_ids import IdAssignment
from idgnn.errors import ContractViolation

Layer1 = Tuple[float, ...]                                  # [own, neighbour IDs...]
Layer2 = Tuple[Layer1, Tuple[Layer1, ...]]                  # (own layer-1 list, neighbour layer-1 lists)
NodeOracle = Callable[[int, int], bool]


@dataclass
class IdList:
    """Per-node messages of every triangle_net layer."""

    layer1: List[Layer1]
    layer2: List[Layer2]
    output: List[int]

    def to_dict(self) -> Dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _scalar_ids(graph: Graph, ids: Union[IdAssignment, Sequence[float], np.ndarray]) -> List[float]:
    values = ids.values if isinstance(ids, IdAssignment) else np.asarray(ids, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 2:
        if values.shape[1] != 1:
            raise ContractViolation(f"triangle_net needs scalar IDs (r=1), got r={values.shape[1]}")
        values = values[:, 0]
    if values.shape[0] != graph.num_nodes:
        raise ContractViolation(f"{values.shape[0]} IDs for {graph.num_nodes} nodes")
    flat = [float(x) for x in values]
    if len(set(flat)) != len(flat):
        raise ContractViolation("triangle_net needs pairwise distinct IDs")
    return flat


def triangle_net_layers(graph: Graph, ids: Union[IdAssignment, Sequence[float], np.ndarray]) -> IdList:
    h0 = _scalar_ids(graph, ids)
    nbrs = graph.neighbors

    # layer 1: own ID at position 0, then neighbour IDs in ascending node order
    h1: List[Layer1] = [(h0[v],) + tuple(h0[u] for u in nbrs[v]) for v in range(graph.num_nodes)]
    # layer 2: own layer-1 list plus every neighbour's layer-1 list
    h2: List[Layer2] = [(h1[v], tuple(h1[u] for u in nbrs[v])) for v in range(graph.num_nodes)]

    # layer 3: v fires iff its ID sits among the neighbour IDs of some w two
    # hops away through u; lists whose entry 0 is v's own ID are the v->u->v echo
    out: List[int] = []
    for v in range(graph.num_nodes):
        own = h2[v][0][0]
        hit = any(
            own in lst[1:]
            for u in nbrs[v]
            for lst in h2[u][1]
            if lst[0] != own
        )
        out.append(int(hit))
    return IdList(layer1=h1, layer2=h2, output=out)


def triangle_net(graph: Graph, ids: Union[IdAssignment, Sequence[float], np.ndarray]) -> List[int]:
    """1 for nodes on a triangle, 0 otherwise; equals label_triangles for any unique IDs."""
    return triangle_net_layers(graph, ids).output


# ---- Matching-oracle canonicalization ----

@dataclass
class IdCache:
    """Nodes seen so far, in first-occurrence order; the k-th one has value k."""

    entries: List[Tuple[int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, node: int, oracle: NodeOracle) -> Optional[int]:
        for handle, value in self.entries:
            if oracle(handle, node):
                return value
        return None

    def assign(self, node: int, oracle: NodeOracle) -> int:
        value = self.lookup(node, oracle)
        if value is None:
            value = len(self) + 1
            self.entries.append((node, value))
        return value


def _same_node(a: int, b: int) -> bool:
    return a == b


def _traversal(graph: Graph) -> List[int]:
    """Every node encounter of a BFS from node 0 (ascending neighbours), restarted per component."""
    encounters: List[int] = []
    visited = [False] * graph.num_nodes
    for root in range(graph.num_nodes):
        if visited[root]:
            continue
        visited[root] = True
        encounters.append(root)
        queue = deque([root])
        while queue:
            v = queue.popleft()
            for u in graph.neighbors[v]:
                encounters.append(u)
                if not visited[u]:
                    visited[u] = True
                    queue.append(u)
    return encounters


def canonicalize_ids(
    graph: Graph,
    ids: Optional[IdAssignment] = None,
    oracle: Optional[NodeOracle] = None,
) -> IdAssignment:
    """Canonical IDs 1..n from the first time each node is met during a fixed traversal.

    The input IDs are never read; only the oracle's node-equality answers are.
    """
    if ids is not None and ids.num_nodes != graph.num_nodes:
        raise ContractViolation(f"{ids.num_nodes} IDs for {graph.num_nodes} nodes")
    oracle = oracle or _same_node
    cache = IdCache()
    canonical = np.zeros((graph.num_nodes, 1))
    for node in _traversal(graph):
        canonical[node, 0] = cache.assign(node, oracle)
    return IdAssignment(canonical, seed_info="canonical")


def with_matching_oracle(
    fn: Callable[[Graph, IdAssignment], object],
    oracle: Optional[NodeOracle] = None,
) -> Callable[[Graph, IdAssignment], object]:
    """Wrap fn so it always sees canonical IDs instead of the ones passed in."""

    def wrapped(graph: Graph, ids: IdAssignment) -> object:
        return fn(graph, canonicalize_ids(graph, ids, oracle))

    return wrapped
