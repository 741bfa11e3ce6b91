"""Functional SGD / Adam updates and the optimizer objects the training loop uses."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from idgnn.core.tensor import Tensor
from idgnn.errors import ContractViolation, ShapeError

Arrays = Dict[str, np.ndarray]


def _check_shapes(params: Mapping[str, np.ndarray], other: Mapping[str, np.ndarray], what: str) -> None:
    for name, p in params.items():
        if name not in other:
            raise ShapeError(f"{what} has no entry for {name!r}")
        if np.shape(other[name]) != np.shape(p):
            raise ShapeError(f"{what} for {name!r} has shape {np.shape(other[name])}, parameter has {np.shape(p)}")


def sgd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float) -> Arrays:
    _check_shapes(params, grads, "gradient")
    return {name: p - lr * grads[name] for name, p in params.items()}


@dataclass
class AdamState:
    m: Arrays = field(default_factory=dict)
    v: Arrays = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            t=0,
        )


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> Tuple[Arrays, AdamState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    _check_shapes(params, grads, "gradient")
    _check_shapes(params, state.m, "first moment")
    _check_shapes(params, state.v, "second moment")
    b1, b2 = betas
    t = state.t + 1
    new_params: Arrays = {}
    new_m: Arrays = {}
    new_v: Arrays = {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(new_m, new_v, t)


# ---- Optimizer objects over named Tensors ----

class Optimizer:
    def __init__(self, params: Mapping[str, Tensor], lr: float):
        if lr <= 0:
            raise ContractViolation(f"learning rate must be positive, got {lr}")
        self.params = dict(params)
        self.lr = lr

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def _values_and_grads(self) -> Tuple[Arrays, Arrays]:
        values = {k: t.data for k, t in self.params.items()}
        grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in self.params.items()}
        return values, grads

    def _assign(self, values: Arrays) -> None:
        for k, t in self.params.items():
            t.data = values[k]

    def step(self) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    def step(self) -> None:
        values, grads = self._values_and_grads()
        self._assign(sgd_step(values, grads, self.lr))


class Adam(Optimizer):
    def __init__(self, params: Mapping[str, Tensor], lr: float, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, lr)
        self.betas = betas
        self.eps = eps
        self.state = AdamState.zeros_like({k: t.data for k, t in self.params.items()})

    def step(self) -> None:
        values, grads = self._values_and_grads()
        new_values, self.state = adam_step(values, grads, self.state, self.lr, self.betas, self.eps)
        self._assign(new_values)


def make_optimizer(kind: str, params: Mapping[str, Tensor], lr: float) -> Optimizer:
    kind = str(getattr(kind, "value", kind)).lower()
    if kind == "adam":
        return Adam(params, lr)
    if kind == "sgd":
        return SGD(params, lr)
    raise ContractViolation(f"unknown optimizer {kind!r}")
