"""
ICON objective: two forwards under independent ID draws,

    L = L_task + lambda_reg * ||H1 - H2||_F^2 / N

with N the number of graphs in the batch (reg_reduction "graph") or the
number of embedding entries (reg_reduction "mean"), plus the
single-forward RNI (or no-ID baseline) step loss.
"""
from __future__ import annotations

import logging
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from idgnn.core.graph import GraphBatch
from idgnn.core.layers import Model
from idgnn.core.node_ids import IdAssignment, IdMode, sample_ids
from idgnn.core.tensor import Tensor, add, cross_entropy, gather_rows, scale, sq_frobenius_diff
from idgnn.errors import ContractViolation, InternalError

logger = logging.getLogger(__name__)


class TaskLossSource(str, Enum):
    FIRST = "first"
    AVERAGE = "average"


class RegReduction(str, Enum):
    GRAPH = "graph"   # summed over nodes and channels, averaged over graphs
    MEAN = "mean"     # averaged over every node-embedding entry


class IconConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    enabled: bool = True
    lambda_reg: float = Field(1.0, ge=0.0)
    task_loss_source: TaskLossSource = TaskLossSource.FIRST
    reg_reduction: RegReduction = RegReduction.GRAPH

    @classmethod
    def from_ini(cls, config: Dict[str, Dict[str, str]]) -> "IconConfig":
        section = config.get("Icon", {})
        return cls(**{k: v for k, v in section.items() if k in cls.model_fields})


def task_loss(logits: Tensor, batch: GraphBatch) -> Tensor:
    """Mean cross-entropy over graphs, or over the labeled nodes of a node task."""
    if batch.graph_labels is not None and logits.shape[0] == batch.num_graphs:
        return cross_entropy(logits, batch.graph_labels)
    if batch.node_labels is None:
        raise ContractViolation("batch carries neither graph nor node labels")
    targets = batch.target_nodes
    return cross_entropy(gather_rows(logits, targets), batch.node_labels[targets])


def reg_normalizer(h: Tensor, batch: GraphBatch, reduction: RegReduction) -> float:
    if RegReduction(reduction) == RegReduction.MEAN:
        return float(h.data.size)
    return float(batch.num_graphs)


def _draw_ids(model: Model, batch: GraphBatch, rng: np.random.Generator) -> Optional[IdAssignment]:
    ids_cfg = model.id_config
    if ids_cfg.id_mode != IdMode.RNI:
        return None
    return sample_ids(batch.num_nodes, ids_cfg.id_dim, rng, ids_cfg.id_dist)


def _dropout_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))


def icon_step_loss(
    model: Model,
    batch: GraphBatch,
    cfg: IconConfig,
    rng: np.random.Generator,
    train: bool = True,
    ids_pair: Optional[Tuple[IdAssignment, IdAssignment]] = None,
) -> Tuple[Tensor, Dict[str, float]]:
    """Return (loss, {"task": ..., "reg": ...}) for one ICON step.

    RNG draw order is R1, dropout seed, R2. Both forwards reuse the same
    dropout seed so the masks match and the regularizer only sees the IDs.
    `ids_pair` overrides the sampled assignments.
    """
    if not cfg.enabled:
        raise ContractViolation("icon_step_loss called with icon disabled")
    if model.id_config.id_mode != IdMode.RNI:
        raise ContractViolation(f"ICON needs id_mode=rni, model uses {model.id_config.id_mode.value}")

    if ids_pair is None:
        ids1 = _draw_ids(model, batch, rng)
        dseed = _dropout_seed(rng)
        ids2 = _draw_ids(model, batch, rng)
    else:
        ids1, ids2 = ids_pair
        dseed = _dropout_seed(rng)

    h1, logits1 = model.forward(batch, ids1, train=train, rng=np.random.default_rng(dseed))
    h2, logits2 = model.forward(batch, ids2, train=train, rng=np.random.default_rng(dseed))
    if h1.shape != h2.shape:
        raise InternalError(f"ICON embeddings disagree in shape: {h1.shape} vs {h2.shape}")

    if cfg.task_loss_source == TaskLossSource.AVERAGE:
        l_task = scale(add(task_loss(logits1, batch), task_loss(logits2, batch)), 0.5)
    else:
        l_task = task_loss(logits1, batch)
    l_reg = scale(sq_frobenius_diff(h1, h2), 1.0 / reg_normalizer(h1, batch, cfg.reg_reduction))
    loss = add(l_task, scale(l_reg, cfg.lambda_reg))
    return loss, {"task": l_task.item(), "reg": l_reg.item()}


def rni_step_loss(model: Model, batch: GraphBatch, rng: np.random.Generator, train: bool = True) -> Tensor:
    """Single forward with fresh IDs (none in constant/none mode) and plain task loss."""
    ids = _draw_ids(model, batch, rng)
    dseed = _dropout_seed(rng)
    _, logits = model.forward(batch, ids, train=train, rng=np.random.default_rng(dseed))
    return task_loss(logits, batch)