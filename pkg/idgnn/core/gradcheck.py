"""Central finite-difference check of tape gradients."""
from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np

from idgnn.core.tensor import Tape, Tensor, no_grad


@dataclass
class GradcheckResult:
    max_rel_error: float
    per_input: List[float]

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
    return float(diff / scale)


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> GradcheckResult:
    """Compare d fn() / d inputs from the tape with central differences.

    `fn` takes no arguments and must read the current `.data` of `inputs`
    (closures over the tensors are the usual way). Each input is perturbed
    by swapping in a modified copy of its buffer, then restored.
    """
    for t in inputs:
        t.zero_grad()
    with Tape():
        loss = fn()
        loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    errors: List[float] = []
    for t, grad in zip(inputs, analytic):
        original = t.data
        numeric = np.zeros_like(original)
        for pos in np.ndindex(original.shape):
            plus = original.copy()
            plus[pos] += eps
            t.data = plus
            with no_grad():
                f_plus = fn().item()
            minus = original.copy()
            minus[pos] -= eps
            t.data = minus
            with no_grad():
                f_minus = fn().item()
            numeric[pos] = (f_plus - f_minus) / (2.0 * eps)
        t.data = original
        errors.append(_rel_error(grad, numeric))
    return GradcheckResult(max(errors) if errors else 0.0, errors)
