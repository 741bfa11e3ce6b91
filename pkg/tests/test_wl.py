import networkx as nx
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from idgnn.core.graph import Graph, relabel
from idgnn.tasks.synthetic import wlhard_pair
from idgnn.tasks.wl import wl_distinguishable, wl_refine


def _nx(g: Graph) -> nx.Graph:
    out = nx.Graph()
    out.add_nodes_from(range(g.num_nodes))
    out.add_edges_from(g.edges)
    return out


@st.composite
def small_graphs(draw, n):
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    edges = draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    return Graph.from_edges(n, edges, graph_label=0)


def test_cycle_pair_is_indistinguishable():
    g0, g1 = wlhard_pair(8)
    assert not wl_distinguishable(g0, g1)


def test_triangle_vs_path_is_distinguishable():
    tri = Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)], graph_label=0)
    path = Graph.from_edges(3, [(0, 1), (1, 2)], graph_label=0)
    assert wl_distinguishable(tri, path)


def test_different_sizes_are_distinguishable():
    assert wl_distinguishable(Graph.from_edges(2, [], graph_label=0), Graph.from_edges(3, [], graph_label=0))


def test_regular_graph_stays_one_color():
    g0, _ = wlhard_pair(10)
    coloring = wl_refine(g0)
    assert len(set(coloring.colors)) == 1
    assert coloring.rounds == 1


def test_path_colors_by_distance_to_end():
    path = Graph.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)], graph_label=0)
    colors = wl_refine(path).colors
    assert colors[0] == colors[4] and colors[1] == colors[3]
    assert len(set(colors)) == 3


def test_refinement_is_idempotent_at_fixpoint():
    path = Graph.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)], graph_label=0)
    stable = wl_refine(path)
    again = wl_refine(path, initial_colors=stable.colors)
    assert again.colors == stable.colors
    assert again.rounds == 1


@settings(max_examples=40, deadline=None)
@given(data=st.data(), n=st.integers(1, 7))
def test_refining_a_stable_coloring_changes_nothing(data, n):
    g = data.draw(small_graphs(n))
    stable = wl_refine(g).colors
    assert wl_refine(g, initial_colors=stable).colors == stable


@settings(max_examples=40, deadline=None)
@given(data=st.data(), n=st.integers(1, 7))
def test_relabeling_preserves_the_color_histogram(data, n):
    g = data.draw(small_graphs(n))
    perm = data.draw(st.permutations(range(n)))
    moved = relabel(g, perm)
    before, after = wl_refine(g).colors, wl_refine(moved).colors
    assert wl_refine(g).histogram() == wl_refine(moved).histogram()
    assert all(after[perm[v]] == before[v] for v in range(n))


def test_initial_colors_split_classes():
    g0, _ = wlhard_pair(6)
    colors = wl_refine(g0, initial_colors=[1, 0, 0, 0, 0, 0]).colors
    assert len(set(colors)) > 1


@settings(max_examples=40, deadline=None)
@given(data=st.data(), n=st.integers(1, 7))
def test_isomorphic_copies_are_never_separated(data, n):
    g = data.draw(small_graphs(n))
    perm = data.draw(st.permutations(range(n)))
    assert not wl_distinguishable(g, relabel(g, perm))


@settings(max_examples=60, deadline=None)
@given(data=st.data(), n=st.integers(1, 6))
def test_agrees_with_networkx_wl_hash(data, n):
    a = data.draw(small_graphs(n))
    b = data.draw(small_graphs(n))
    ha = nx.weisfeiler_lehman_graph_hash(_nx(a), iterations=2 * n)
    hb = nx.weisfeiler_lehman_graph_hash(_nx(b), iterations=2 * n)
    assert wl_distinguishable(a, b) == (ha != hb)


def test_pair_members_are_not_isomorphic():
    g0, g1 = wlhard_pair(12, np.random.default_rng(0))
    assert not nx.is_isomorphic(_nx(g0), _nx(g1))
