import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pydantic import ValidationError

from idgnn.core.graph import TaskKind
from idgnn.tasks.synthetic import (
    BAParams,
    IsTriangleConfig,
    WLHardConfig,
    build_istriangle_dataset,
    build_wlhard_pairs,
    generate_ba,
    label_triangles,
    wlhard_pair,
)
from idgnn.tasks.wl import wl_distinguishable


def _nx(g):
    out = nx.Graph()
    out.add_nodes_from(range(g.num_nodes))
    out.add_edges_from(g.edges)
    return out


@settings(max_examples=30, deadline=None)
@given(n=st.integers(4, 40), m=st.integers(1, 3), seed=st.integers(0, 10_000))
def test_ba_edge_count_and_validity(n, m, seed):
    if m >= n:
        return
    g = generate_ba(BAParams(n=n, m=m, seed=seed))
    g.validate()
    assert g.num_edges == m * (m + 1) // 2 + (n - m - 1) * m
    assert nx.is_connected(_nx(g))


def test_ba_is_deterministic_per_seed():
    a = generate_ba(BAParams(n=30, m=2, seed=4))
    b = generate_ba(BAParams(n=30, m=2, seed=4))
    c = generate_ba(BAParams(n=30, m=2, seed=5))
    assert a == b
    assert a != c


def test_ba_degrees_are_heavy_tailed():
    max_ratio = []
    for seed in range(200):
        g = generate_ba(BAParams(n=100, m=2, seed=seed))
        degrees = np.array([len(nb) for nb in g.neighbors])
        max_ratio.append(degrees.max() / degrees.mean())
    assert max(max_ratio) > 3.0
    assert np.median(max_ratio) > 3.0


def test_ba_params_validation():
    with pytest.raises(ValidationError):
        BAParams(n=3, m=3)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(3, 30), m=st.integers(1, 3), seed=st.integers(0, 10_000))
def test_triangle_labels_match_networkx(n, m, seed):
    if m >= n:
        return
    g = generate_ba(BAParams(n=n, m=m, seed=seed))
    triangles = nx.triangles(_nx(g))
    assert label_triangles(g) == [int(triangles[v] > 0) for v in range(n)]


def test_istriangle_datasets():
    train, interp, extrap = build_istriangle_dataset(
        num_graphs=10, n=20, m_train=2, m_test=3, seed=1, node_budget=30, num_test_graphs=4,
    )
    assert train.task_kind == TaskKind.NODE and train.num_classes == 2
    assert sorted(train.split) == ["train", "valid"]
    assert len(train.split["valid"]) == 2 and len(train.split["train"]) == 8
    labeled = lambda ds, split: sum(len(g.supervised_nodes()) for g in ds.subset(split))
    assert labeled(train, "train") == 30
    assert labeled(train, "valid") == 30
    assert labeled(interp, "test") == 30 and labeled(extrap, "test") == 30
    assert interp.meta["m"] == 2 and extrap.meta["m"] == 3
    assert not set(train.meta["graph_seeds"]) & set(interp.meta["graph_seeds"])
    for g in extrap.graphs:
        assert g.num_edges == 3 * 4 // 2 + (20 - 4) * 3


def test_istriangle_is_reproducible():
    first = build_istriangle_dataset(num_graphs=5, n=12, seed=3, node_budget=10, num_test_graphs=2)
    second = build_istriangle_dataset(num_graphs=5, n=12, seed=3, node_budget=10, num_test_graphs=2)
    assert all(a == b for a, b in zip(first, second))


def test_budget_larger_than_pool_labels_everything():
    train, _, _ = build_istriangle_dataset(num_graphs=3, n=10, seed=0, node_budget=1000, valid_fraction=0.0,
                                           num_test_graphs=1)
    assert sum(len(g.supervised_nodes()) for g in train.subset("train")) == 30


@pytest.mark.parametrize("size", [6, 8, 10, 12])
def test_wlhard_pair_shapes(size):
    g0, g1 = wlhard_pair(size, np.random.default_rng(size))
    assert g0.num_edges == g1.num_edges == size
    assert nx.number_connected_components(_nx(g0)) == 1
    assert nx.number_connected_components(_nx(g1)) == 2
    assert not wl_distinguishable(g0, g1)
    assert (g0.graph_label, g1.graph_label) == (0, 1)


def test_wlhard_dataset_keeps_pairs_together():
    ds = build_wlhard_pairs(num_pairs=10, sizes=(6, 8), seed=2)
    assert len(ds) == 20
    assert {k: len(v) for k, v in ds.split.items()} == {"train": 12, "valid": 4, "test": 4}
    for indices in ds.split.values():
        for i in indices:
            assert (i ^ 1) in indices
    assert set(ds.meta["pair_sizes"]) <= {6, 8}


def test_wlhard_config_rejects_odd_or_small_sizes():
    with pytest.raises(ValidationError):
        WLHardConfig(sizes="6,7")
    with pytest.raises(ValidationError):
        WLHardConfig(sizes=[4])
    assert WLHardConfig.from_ini({"WLHard": {"sizes": "8,10", "num_pairs": "5"}}).sizes == [8, 10]


def test_istriangle_config_overrides_ini():
    ini = {"Synthetic": {"num_graphs": "50", "num_nodes": "30"}}
    cfg = IsTriangleConfig.from_ini(ini, num_graphs=7, num_nodes=None)
    assert cfg.num_graphs == 7 and cfg.num_nodes == 30
