"""Adam optimizer over named parameter groups.

Updates are lazy: a parameter whose grad is None this step (e.g. an expert
the router did not select) is skipped entirely, so its moments and value are
untouched. Bias correction uses the global step counter. Updates are
deterministic given (params, grads, state).
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .autograd import Tensor
from .errors import ContractError


class OptimizerState:
    """Adam state: learning rate, per-parameter moment buffers, step count."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.params = list(params)
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def moments(self, i: int):
        return self._m[i], self._v[i]


def optimizer_step(state: OptimizerState, require_grads: bool = False):
    """Apply one Adam update to every parameter with a populated grad.

    With ``require_grads=True`` a missing grad is a contract error instead
    of a lazy skip (used by the single-model pretraining loops, where every
    registered parameter is expected to be reachable).
    """
    state.step_count += 1
    t = state.step_count
    backend = kernels.get_backend()
    for i, p in enumerate(state.params):
        if p.grad is None:
            if require_grads:
                raise ContractError(f"parameter {p.name or i} has no gradient")
            continue
        backend.adam_step(
            p.data.reshape(-1), p.grad.reshape(-1),
            state._m[i].reshape(-1), state._v[i].reshape(-1),
            state.lr, state.beta1, state.beta2, state.eps, t,
        )


def zero_grads(params: list[Tensor]):
    for p in params:
        p.grad = None
