import numpy as np
import pytest

from idgnn.core.gradcheck import gradcheck
from idgnn.core.graph import Graph, TaskKind, make_batch
from idgnn.core.icon import (
    IconConfig,
    RegReduction,
    TaskLossSource,
    icon_step_loss,
    rni_step_loss,
    task_loss,
)
from idgnn.core.layers import LayerKind, Model, ModelConfig, Readout
from idgnn.core.node_ids import IdAssignment, IdConfig, IdMode, sample_ids
from idgnn.core.tensor import Tape, cross_entropy
from idgnn.errors import ContractViolation

GRAPHS = [
    Graph.from_edges(4, [(0, 1), (0, 2), (1, 2), (2, 3)], graph_label=1),
    Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)], graph_label=0),
]


def _model(kind=LayerKind.GIN, mode=IdMode.RNI, dropout_rate=0.0):
    return Model(ModelConfig(
        kind=kind,
        ids=IdConfig(id_mode=mode, id_dim=3),
        hidden_dim=6,
        num_layers=2,
        dropout_rate=dropout_rate,
    ), seed=0)


def test_identical_ids_give_zero_regularizer():
    model, batch = _model(), make_batch(GRAPHS)
    ids = sample_ids(batch.num_nodes, 3, np.random.default_rng(0))
    loss, parts = icon_step_loss(model, batch, IconConfig(), np.random.default_rng(1), ids_pair=(ids, ids))
    assert parts["reg"] == 0.0
    assert loss.item() == pytest.approx(parts["task"])


def test_regularizer_matches_embedding_distance():
    model, batch = _model(), make_batch(GRAPHS)
    rng = np.random.default_rng(0)
    ids1, ids2 = sample_ids(8, 3, rng), sample_ids(8, 3, rng)
    _, parts = icon_step_loss(model, batch, IconConfig(lambda_reg=0.5), rng, train=False, ids_pair=(ids1, ids2))
    h1 = model.forward(batch, ids1)[0].data
    h2 = model.forward(batch, ids2)[0].data
    assert parts["reg"] == pytest.approx(np.sum((h1 - h2) ** 2) / 2)


def test_total_is_task_plus_weighted_regularizer():
    model, batch = _model(), make_batch(GRAPHS)
    loss, parts = icon_step_loss(model, batch, IconConfig(lambda_reg=2.5), np.random.default_rng(3))
    assert loss.item() == pytest.approx(parts["task"] + 2.5 * parts["reg"])


def test_zero_lambda_reduces_to_rni_step():
    model, batch = _model(dropout_rate=0.3), make_batch(GRAPHS)
    params = model.parameters()

    with Tape():
        loss, _ = icon_step_loss(model, batch, IconConfig(lambda_reg=0.0), np.random.default_rng(9))
        loss.backward()
    icon_grads = {k: t.grad.copy() for k, t in params.items()}
    for t in params.values():
        t.zero_grad()

    with Tape():
        rni = rni_step_loss(model, batch, np.random.default_rng(9))
        rni.backward()
    assert rni.item() == pytest.approx(loss.item())
    for k, t in params.items():
        np.testing.assert_allclose(t.grad, icon_grads[k], atol=1e-12)


def test_average_task_loss_source():
    model, batch = _model(), make_batch(GRAPHS)
    rng = np.random.default_rng(0)
    ids1, ids2 = sample_ids(8, 3, rng), sample_ids(8, 3, rng)
    cfg = IconConfig(task_loss_source=TaskLossSource.AVERAGE)
    _, parts = icon_step_loss(model, batch, cfg, rng, train=False, ids_pair=(ids1, ids2))
    l1 = cross_entropy(model.forward(batch, ids1)[1], batch.graph_labels).item()
    l2 = cross_entropy(model.forward(batch, ids2)[1], batch.graph_labels).item()
    assert parts["task"] == pytest.approx((l1 + l2) / 2)


@pytest.mark.parametrize("kind", [LayerKind.GRAPHCONV, LayerKind.GIN, LayerKind.GAT])
def test_icon_loss_gradcheck(kind):
    model, batch = _model(kind), make_batch(GRAPHS)
    rng = np.random.default_rng(5)
    pair = (sample_ids(8, 3, rng), sample_ids(8, 3, rng))
    params = list(model.parameters().values())

    def fn():
        loss, _ = icon_step_loss(model, batch, IconConfig(lambda_reg=0.7), np.random.default_rng(0),
                                 train=False, ids_pair=pair)
        return loss

    assert gradcheck(fn, params).ok(1e-4)


def test_icon_requires_rni_and_enabled():
    batch = make_batch(GRAPHS)
    with pytest.raises(ContractViolation):
        icon_step_loss(_model(mode=IdMode.CONSTANT), batch, IconConfig(), np.random.default_rng(0))
    with pytest.raises(ContractViolation):
        icon_step_loss(_model(), batch, IconConfig(enabled=False), np.random.default_rng(0))


def test_node_task_loss_uses_labeled_nodes_only():
    g = Graph.from_edges(3, [(0, 1), (1, 2)], node_labels=[0, 1, 1], labeled_nodes=[0, 2])
    model = Model(ModelConfig(
        task_kind=TaskKind.NODE, readout=Readout.NONE, ids=IdConfig(id_dim=3), hidden_dim=4, num_layers=1,
    ), seed=0)
    batch = make_batch([g])
    _, logits = model.forward(batch, sample_ids(3, 3, np.random.default_rng(0)))
    picked = logits.data[[0, 2]]
    shifted = picked - picked.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    assert task_loss(logits, batch).item() == pytest.approx(-(logp[0, 0] + logp[1, 1]) / 2)


def test_icon_config_from_ini():
    cfg = IconConfig.from_ini({"Icon": {"enabled": "false", "lambda_reg": "0.25", "task_loss_source": "average"}})
    assert not cfg.enabled and cfg.lambda_reg == 0.25 and cfg.task_loss_source == TaskLossSource.AVERAGE


def test_mean_reduction_divides_by_embedding_entries():
    model, batch = _model(), make_batch(GRAPHS)
    rng = np.random.default_rng(2)
    pair = (sample_ids(8, 3, rng), sample_ids(8, 3, rng))
    _, per_graph = icon_step_loss(model, batch, IconConfig(), rng, train=False, ids_pair=pair)
    _, per_entry = icon_step_loss(model, batch, IconConfig(reg_reduction=RegReduction.MEAN), rng,
                                  train=False, ids_pair=pair)
    h_size = batch.num_nodes * 6
    assert per_entry["reg"] == pytest.approx(per_graph["reg"] * batch.num_graphs / h_size)


def test_regularizer_closed_form_for_linear_id_reader():
    # one GraphConv layer reading only the ID column: H_v = w * I[v, 0]
    model = Model(ModelConfig(
        kind=LayerKind.GRAPHCONV, ids=IdConfig(id_dim=1), hidden_dim=1, num_layers=1, dropout_rate=0.0,
    ), seed=0)
    w = 1.7
    model.layer_params[0]["W_self"].data = np.array([[0.0], [w]])
    model.layer_params[0]["W_neigh"].data = np.zeros((2, 1))
    batch = make_batch([Graph.from_edges(2, [(0, 1)], graph_label=0)])
    i1, i2 = np.array([[0.2], [0.9]]), np.array([[0.6], [0.1]])
    _, parts = icon_step_loss(model, batch, IconConfig(), np.random.default_rng(0), train=False,
                              ids_pair=(IdAssignment(i1), IdAssignment(i2)))
    assert parts["reg"] == pytest.approx(np.sum((w * (i1 - i2)) ** 2))


def test_uniform_logits_give_log_num_classes():
    model = Model(ModelConfig(ids=IdConfig(id_dim=3), hidden_dim=6, num_layers=2, num_classes=3), seed=0)
    for params in model.readout_params:
        for t in params.values():
            t.data = np.zeros_like(t.data)
    same_label = [Graph.from_edges(4, g.edges, graph_label=2) for g in GRAPHS]
    loss = rni_step_loss(model, make_batch(same_label), np.random.default_rng(0), train=False)
    assert loss.item() == pytest.approx(np.log(3))


def test_regularizer_gradient_reaches_id_weights():
    model, batch = _model(), make_batch(GRAPHS)
    with Tape():
        loss, parts = icon_step_loss(model, batch, IconConfig(), np.random.default_rng(4), train=False)
        loss.backward()
    assert parts["reg"] > 0.0
    # row 0 reads the constant column, rows 1..3 the IDs
    assert np.abs(model.parameters()["layers.0.W1"].grad[1:]).sum() > 0.0


def test_final_layer_is_linear_by_default():
    model = _model()
    assert model.layers[-1].activation.value == "identity"
    assert all(lc.activation.value == "relu" for lc in model.layers[:-1])
    h, _ = model.forward(make_batch(GRAPHS), sample_ids(8, 3, np.random.default_rng(0)))
    assert (h.data < 0).any()


def test_icon_config_reads_reduction():
    cfg = IconConfig.from_ini({"Icon": {"reg_reduction": "mean"}})
    assert cfg.reg_reduction == RegReduction.MEAN
