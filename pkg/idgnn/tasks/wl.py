"""1-WL color refinement and the distinguishability test built on it."""
from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from idgnn.core.graph import Graph


@dataclass
class WLColoring:
    colors: List[str]    # stable color per node; a fixpoint of wl_refine
    rounds: int          # refinement rounds until the partition stopped splitting

    def histogram(self) -> Counter:
        return Counter(self.colors)

    def to_dict(self) -> Dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _hash_color(color: str, neighbour_colors: Sequence[str]) -> str:
    payload = color + "|" + ",".join(sorted(neighbour_colors))
    return hashlib.blake2b(payload.encode("utf-8"), digest_size=12).hexdigest()


def _refine(neighbors: Sequence[Sequence[int]], colors: List[str]) -> Tuple[List[str], int]:
    rounds = 0
    distinct = len(set(colors))
    while True:
        nxt = [_hash_color(colors[v], [colors[u] for u in neighbors[v]]) for v in range(len(colors))]
        rounds += 1
        n_next = len(set(nxt))
        if n_next == distinct:
            return colors, rounds
        colors = nxt
        distinct = n_next


def wl_refine(graph: Graph, initial_colors: Optional[Sequence[object]] = None) -> WLColoring:
    """Refine colors with color <- hash(color, sorted neighbour colors) until stable.

    The result holds the colors of the last round that still split the
    partition; the confirming round is counted but its hashes are dropped.
    A stable coloring fed back as `initial_colors` therefore comes back
    unchanged. Colors are content hashes, so relabeling the nodes moves
    colors with them and leaves the histogram alone.
    """
    if initial_colors is None:
        colors = ["0"] * graph.num_nodes
    else:
        colors = [str(c) for c in initial_colors]
    colors, rounds = _refine(graph.neighbors, colors)
    return WLColoring(colors=colors, rounds=rounds)


def wl_distinguishable(g1: Graph, g2: Graph) -> bool:
    """True iff 1-WL separates the two graphs.

    Both graphs are refined as one disjoint union so the stopping round is
    shared, then the stable histograms of the two halves are compared.
    """
    if g1.num_nodes != g2.num_nodes:
        return True
    offset = g1.num_nodes
    union = Graph.from_edges(
        g1.num_nodes + g2.num_nodes,
        list(g1.edges) + [(u + offset, v + offset) for u, v in g2.edges],
    )
    coloring = wl_refine(union)
    left = Counter(coloring.colors[:offset])
    right = Counter(coloring.colors[offset:])
    return left != right
