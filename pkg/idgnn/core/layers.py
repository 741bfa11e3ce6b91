"""
GNN layers and model assembly
-----------------------------
Three message-passing layer families (GraphConv, GIN, GAT), a pooled or
per-node readout head, and the Model that stacks them:

    H(l+1) = GNN_theta(l)(H(l); G),    logits = g(H(L))

Checkpoints are JSON documents tagged with CHECKPOINT_MAGIC / CHECKPOINT_VERSION.
"""
from __future__ import annotations

import json
import logging
from collections import OrderedDict
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from idgnn.core.graph import Graph, GraphBatch, TaskKind
from idgnn.core.node_ids import IdAssignment, IdConfig, assemble_input, input_dim
from idgnn.core.tensor import (
    Tensor,
    add,
    concat,
    dropout,
    gather_rows,
    leaky_relu,
    linear,
    matmul,
    mean_pool,
    mul,
    no_grad,
    parameter,
    relu,
    scatter_add,
    segment_sum,
    softmax_over_segments,
    sum_pool,
)
from idgnn.errors import CheckpointError, ShapeError

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "IDGNN-CKPT"
CHECKPOINT_VERSION = 1
GAT_SLOPE = 0.2

Params = Dict[str, Tensor]
GraphLike = Union[Graph, GraphBatch]


class LayerKind(str, Enum):
    GRAPHCONV = "GraphConv"
    GIN = "GIN"
    GAT = "GAT"


class Activation(str, Enum):
    RELU = "relu"
    IDENTITY = "identity"


class Readout(str, Enum):
    SUM = "sum"
    MEAN = "mean"
    NONE = "none"


class LayerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: LayerKind
    in_dim: int = Field(gt=0)
    out_dim: int = Field(gt=0)
    gin_eps: float = 0.0          # initial value; eps itself is learnable
    gat_heads: int = Field(1, ge=1)
    activation: Activation = Activation.RELU
    dropout_rate: float = Field(0.1, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def _heads_divide_width(self) -> "LayerConfig":
        if self.kind == LayerKind.GAT and self.out_dim % self.gat_heads != 0:
            raise ValueError(f"GAT out_dim {self.out_dim} is not divisible by {self.gat_heads} heads")
        return self


# ------------------
# Parameter init
# ------------------
def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_layer_params(cfg: LayerConfig, rng: np.random.Generator) -> Params:
    d_in, d_out = cfg.in_dim, cfg.out_dim
    if cfg.kind == LayerKind.GRAPHCONV:
        return OrderedDict(
            W_self=parameter(glorot(rng, d_in, d_out)),
            W_neigh=parameter(glorot(rng, d_in, d_out)),
            b=parameter(np.zeros(d_out)),
        )
    if cfg.kind == LayerKind.GIN:
        return OrderedDict(
            eps=parameter(np.array(cfg.gin_eps)),
            W1=parameter(glorot(rng, d_in, d_out)),
            b1=parameter(np.zeros(d_out)),
            W2=parameter(glorot(rng, d_out, d_out)),
            b2=parameter(np.zeros(d_out)),
        )
    head_dim = d_out // cfg.gat_heads
    params: Params = OrderedDict()
    for h in range(cfg.gat_heads):
        params[f"W.{h}"] = parameter(glorot(rng, d_in, head_dim))
        params[f"a_dst.{h}"] = parameter(glorot(rng, head_dim, 1))
        params[f"a_src.{h}"] = parameter(glorot(rng, head_dim, 1))
    return params


# ------------------
# Layer forwards
# ------------------
def _activate(x: Tensor, activation: Union[Activation, str]) -> Tensor:
    return relu(x) if Activation(activation) == Activation.RELU else x


def _check_input(op: str, h: Tensor, graph: GraphLike, weight: Tensor) -> None:
    if h.data.ndim != 2 or h.shape[0] != graph.num_nodes:
        raise ShapeError(f"{op}: H of shape {h.shape} for a graph with {graph.num_nodes} nodes")
    if h.shape[1] != weight.shape[0]:
        raise ShapeError(f"{op}: H of shape {h.shape} does not match weight of shape {weight.shape}")


def graphconv_forward(h: Tensor, graph: GraphLike, params: Params, activation: Union[Activation, str] = Activation.RELU) -> Tensor:
    """H'_v = act(W1 h_v + W2 sum_{u in N(v)} h_u + b)."""
    _check_input("graphconv", h, graph, params["W_self"])
    agg = segment_sum(h, graph.edge_index)
    out = add(add(matmul(h, params["W_self"]), matmul(agg, params["W_neigh"])), params["b"])
    return _activate(out, activation)


def gin_forward(h: Tensor, graph: GraphLike, params: Params, activation: Union[Activation, str] = Activation.RELU) -> Tensor:
    """H'_v = act(MLP((1 + eps) h_v + sum_{u in N(v)} h_u)), MLP = Linear-ReLU-Linear."""
    _check_input("gin", h, graph, params["W1"])
    z = add(mul(h, add(params["eps"], 1.0)), segment_sum(h, graph.edge_index))
    hidden = relu(linear(z, params["W1"], params["b1"]))
    return _activate(linear(hidden, params["W2"], params["b2"]), activation)


def _attention_edges(graph: GraphLike) -> Tuple[np.ndarray, np.ndarray]:
    """Directed (src, dst) pairs for both edge directions plus one self-loop per node."""
    edges = graph.edge_index
    loops = np.arange(graph.num_nodes, dtype=np.int64)
    src = np.concatenate([edges[:, 0], edges[:, 1], loops])
    dst = np.concatenate([edges[:, 1], edges[:, 0], loops])
    return src, dst


def gat_attention(h: Tensor, graph: GraphLike, params: Params, head: int = 0) -> Tuple[Tensor, Tensor, np.ndarray, np.ndarray]:
    """Attention weights alpha (E x 1, softmax over u in N(v) + {v} per target v) and W h."""
    src, dst = _attention_edges(graph)
    z = matmul(h, params[f"W.{head}"])
    score_dst = gather_rows(matmul(z, params[f"a_dst.{head}"]), dst)
    score_src = gather_rows(matmul(z, params[f"a_src.{head}"]), src)
    scores = leaky_relu(add(score_dst, score_src), GAT_SLOPE)
    alpha = softmax_over_segments(scores, dst, graph.num_nodes)
    return alpha, z, src, dst


def gat_forward(h: Tensor, graph: GraphLike, params: Params, activation: Union[Activation, str] = Activation.RELU) -> Tensor:
    """Per head: H'_v = sum_u alpha_vu W h_u; heads are concatenated, then activated."""
    _check_input("gat", h, graph, params["W.0"])
    heads = sum(1 for name in params if name.startswith("W."))
    outputs = []
    for head in range(heads):
        alpha, z, src, dst = gat_attention(h, graph, params, head)
        messages = mul(gather_rows(z, src), alpha)
        outputs.append(scatter_add(messages, dst, graph.num_nodes))
    out = outputs[0] if heads == 1 else concat(outputs, axis=1)
    return _activate(out, activation)


LAYER_FORWARD = {
    LayerKind.GRAPHCONV: graphconv_forward,
    LayerKind.GIN: gin_forward,
    LayerKind.GAT: gat_forward,
}


# ------------------
# Model
# ------------------
class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: LayerKind = LayerKind.GIN
    task_kind: TaskKind = TaskKind.GRAPH
    feature_dim: int = Field(0, ge=0)      # 0 for featureless graphs
    ids: IdConfig = Field(default_factory=IdConfig)
    hidden_dim: int = Field(64, gt=0)
    num_layers: int = Field(3, ge=1)
    num_classes: int = Field(2, ge=2)
    readout: Readout = Readout.SUM
    readout_layers: int = Field(1, ge=1)
    gat_heads: int = Field(1, ge=1)
    gin_eps: float = 0.0
    dropout_rate: float = Field(0.1, ge=0.0, lt=1.0)
    activation: Activation = Activation.RELU
    final_activation: Activation = Activation.IDENTITY   # last GNN layer, feeding g and the ICON term

    @model_validator(mode="after")
    def _readout_matches_task(self) -> "ModelConfig":
        if self.task_kind == TaskKind.NODE and self.readout != Readout.NONE:
            raise ValueError("node-classification models use readout 'none'")
        if self.task_kind == TaskKind.GRAPH and self.readout == Readout.NONE:
            raise ValueError("graph-classification models need a pooling readout")
        return self

    @property
    def input_dim(self) -> int:
        return input_dim(self.feature_dim, self.ids)

    def layer_configs(self) -> List[LayerConfig]:
        dims = [self.input_dim] + [self.hidden_dim] * self.num_layers
        return [
            LayerConfig(
                kind=self.kind,
                in_dim=dims[i],
                out_dim=dims[i + 1],
                gin_eps=self.gin_eps,
                gat_heads=self.gat_heads,
                activation=self.activation if i < self.num_layers - 1 else self.final_activation,
                dropout_rate=self.dropout_rate,
            )
            for i in range(self.num_layers)
        ]


class Model:
    """Ordered GNN layer stack plus readout head g."""

    def __init__(self, config: ModelConfig, seed: Union[int, np.random.SeedSequence] = 0):
        self.config = config
        self.layers: List[LayerConfig] = config.layer_configs()
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}")
        rng = np.random.default_rng(seed)
        self.layer_params: List[Params] = [init_layer_params(lc, rng) for lc in self.layers]

        dims = [config.hidden_dim] * config.readout_layers + [config.num_classes]
        self.readout_params: List[Params] = [
            OrderedDict(W=parameter(glorot(rng, dims[j], dims[j + 1])), b=parameter(np.zeros(dims[j + 1])))
            for j in range(config.readout_layers)
        ]

    # IdPredictor surface
    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    @property
    def task_kind(self) -> TaskKind:
        return self.config.task_kind

    @property
    def id_config(self) -> IdConfig:
        return self.config.ids

    def parameters(self) -> "OrderedDict[str, Tensor]":
        named: "OrderedDict[str, Tensor]" = OrderedDict()
        for i, params in enumerate(self.layer_params):
            for key, t in params.items():
                named[f"layers.{i}.{key}"] = t
        for j, params in enumerate(self.readout_params):
            for key, t in params.items():
                named[f"readout.{j}.{key}"] = t
        for name, t in named.items():
            t.name = name
        return named

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.parameters().items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(state) != set(params):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise CheckpointError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, t in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != t.shape:
                raise ShapeError(f"{name}: stored shape {value.shape} vs parameter shape {t.shape}")
            t.data = value.copy()
            t.grad = None

    def forward(
        self,
        batch: GraphBatch,
        ids: Optional[IdAssignment] = None,
        train: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> Tuple[Tensor, Tensor]:
        h = assemble_input(batch.features, ids, self.config.ids.id_mode, num_nodes=batch.num_nodes)
        if h.shape[1] != self.config.input_dim:
            raise ShapeError(f"assembled input of width {h.shape[1]} for a model expecting {self.config.input_dim}")

        last = len(self.layers) - 1
        for i, (lc, params) in enumerate(zip(self.layers, self.layer_params)):
            h = LAYER_FORWARD[lc.kind](h, batch, params, lc.activation)
            if i < last:
                h = dropout(h, lc.dropout_rate, train, rng)
        h_final = h

        if self.config.readout == Readout.SUM:
            z = sum_pool(h_final, batch.membership, batch.num_graphs)
        elif self.config.readout == Readout.MEAN:
            z = mean_pool(h_final, batch.membership, batch.num_graphs)
        else:
            z = h_final
        last_head = len(self.readout_params) - 1
        for j, params in enumerate(self.readout_params):
            z = linear(z, params["W"], params["b"])
            if j < last_head:
                z = dropout(relu(z), self.config.dropout_rate, train, rng)
        return h_final, z

    def predict_classes(self, batch: GraphBatch, ids: Optional[IdAssignment] = None) -> np.ndarray:
        """Argmax class per graph (graph tasks) or per node (node tasks); ties go to the lowest index."""
        with no_grad():
            _, logits = self.forward(batch, ids, train=False)
        return np.argmax(logits.data, axis=1)


def model_forward(
    model: Model,
    batch: GraphBatch,
    ids: Optional[IdAssignment] = None,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[Tensor, Tensor]:
    """Return (H_final, logits): pre-readout node embeddings and readout output."""
    return model.forward(batch, ids, train=train, rng=rng)


def pooled_embedding(model: Model, batch: GraphBatch, ids: Optional[IdAssignment] = None) -> np.ndarray:
    """Sum-pooled final node embeddings per graph, without gradient tracking."""
    with no_grad():
        h_final, _ = model.forward(batch, ids, train=False)
        return sum_pool(h_final, batch.membership, batch.num_graphs).data


# ------------------
# Checkpoints
# ------------------
def save_checkpoint(model: Model, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "config": model.config.model_dump(mode="json"),
        "params": {
            name: {"shape": list(value.shape), "data": value.reshape(-1).tolist()}
            for name, value in model.state_dict().items()
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
    logger.info("Checkpoint written to %s", path)
    return path


def load_checkpoint(path: Union[str, Path]) -> Model:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise CheckpointError(f"{path}: not a JSON checkpoint ({e.msg})") from e
    if doc.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: missing magic {CHECKPOINT_MAGIC!r}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    model = Model(ModelConfig.model_validate(doc["config"]))
    state = {
        name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["params"].items()
    }
    model.load_state_dict(state)
    return model
