"""
Random node identifiers (RNI) and input assembly H0 = [X || I].
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from idgnn.core.tensor import Tensor
from idgnn.errors import ContractViolation, InternalError, ShapeError

logger = logging.getLogger(__name__)

MAX_COLLISION_RETRIES = 3


class IdMode(str, Enum):
    NONE = "none"
    CONSTANT = "constant"
    RNI = "rni"


class IdDist(str, Enum):
    UNIFORM = "uniform"
    NORMAL = "normal"


class IdConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id_mode: IdMode = IdMode.RNI
    id_dim: int = Field(16, ge=1)
    id_dist: IdDist = IdDist.UNIFORM

    @classmethod
    def from_ini(cls, config: Dict[str, Dict[str, str]]) -> "IdConfig":
        section = config.get("Ids", {})
        return cls(**{k: v for k, v in section.items() if k in cls.model_fields})


@dataclass(frozen=True, eq=False)
class IdAssignment:
    values: np.ndarray   # n x r
    seed_info: str = ""

    @property
    def r(self) -> int:
        return int(self.values.shape[1])

    @property
    def num_nodes(self) -> int:
        return int(self.values.shape[0])

    def rows(self, start: int, stop: int) -> "IdAssignment":
        return IdAssignment(self.values[start:stop], self.seed_info)


def _describe_rng(rng: np.random.Generator) -> str:
    bitgen = rng.bit_generator
    seed_seq = getattr(bitgen, "seed_seq", None) or getattr(bitgen, "_seed_seq", None)
    if seed_seq is not None and hasattr(seed_seq, "entropy"):
        return f"{type(bitgen).__name__}(entropy={seed_seq.entropy}, spawn_key={tuple(seed_seq.spawn_key)})"
    return type(bitgen).__name__


def _rows_distinct(values: np.ndarray) -> bool:
    return np.unique(values, axis=0).shape[0] == values.shape[0]


def sample_ids(
    n: int,
    r: int,
    rng: np.random.Generator,
    dist: Union[IdDist, str] = IdDist.UNIFORM,
) -> IdAssignment:
    """Draw an n x r matrix of i.i.d. IDs with pairwise distinct rows."""
    if n < 1 or r < 1:
        raise ContractViolation(f"sample_ids needs n >= 1 and r >= 1, got n={n}, r={r}")
    dist = IdDist(dist)
    for attempt in range(MAX_COLLISION_RETRIES + 1):
        if dist == IdDist.UNIFORM:
            values = rng.random((n, r))
        else:
            values = rng.standard_normal((n, r))
        if _rows_distinct(values):
            return IdAssignment(values, _describe_rng(rng))
        logger.warning("ID rows collided (attempt %d); resampling", attempt + 1)
    raise InternalError(f"ID rows still collide after {MAX_COLLISION_RETRIES} retries; the RNG looks broken")


def input_dim(feature_dim: int, cfg: IdConfig) -> int:
    """Width of the assembled input for graphs with `feature_dim` features (0 = featureless)."""
    base = feature_dim if feature_dim > 0 else 1
    if cfg.id_mode == IdMode.RNI:
        return base + cfg.id_dim
    if cfg.id_mode == IdMode.CONSTANT and feature_dim > 0:
        return base + 1
    return base


def assemble_input(
    features: Optional[Union[np.ndarray, Tensor]],
    ids: Optional[IdAssignment],
    mode: Union[IdMode, str],
    num_nodes: Optional[int] = None,
) -> Tensor:
    """Column order is fixed to [X || I].

    Featureless graphs use a constant-1 column as X; in constant mode that
    column doubles as the ID stand-in.
    """
    mode = IdMode(mode)
    if isinstance(features, Tensor):
        features = features.data
    if mode == IdMode.RNI and ids is None:
        raise ContractViolation("id_mode=rni needs an IdAssignment")

    if features is None:
        n = num_nodes if num_nodes is not None else (ids.num_nodes if ids is not None else None)
        if n is None:
            raise ContractViolation("featureless input needs num_nodes")
        x = np.ones((n, 1))
        featureless = True
    else:
        x = np.asarray(features, dtype=np.float64)
        featureless = False
    n = x.shape[0]

    if mode == IdMode.RNI:
        if ids.num_nodes != n:
            raise ShapeError(f"IDs of shape {ids.values.shape} for {n} nodes")
        return Tensor(np.concatenate([x, ids.values], axis=1))
    if mode == IdMode.CONSTANT and not featureless:
        return Tensor(np.concatenate([x, np.ones((n, 1))], axis=1))
    return Tensor(x)
