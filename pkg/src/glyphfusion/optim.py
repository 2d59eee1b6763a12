"""Adam with bias correction, applied in place to tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .tensor import Tensor


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def like(cls, param: Tensor, **kwargs) -> "AdamState":
        return cls(np.zeros_like(param.data), np.zeros_like(param.data), **kwargs)


def adam_step(param: Tensor, grad, state: AdamState, lr: float) -> None:
    """Apply one bias-corrected Adam update to ``param`` and advance ``state``."""
    if param.frozen:
        raise ContractError("optimizer step attempted on a frozen parameter")
    grad = np.asarray(grad, dtype=param.data.dtype)
    if grad.size != param.data.size or state.first_moment.size != param.data.size:
        raise ContractError(
            f"gradient/state length {grad.size}/{state.first_moment.size} "
            f"does not match parameter length {param.data.size}")
    grad = grad.reshape(param.data.shape)
    b1, b2 = state.beta1, state.beta2
    state.step_count += 1
    t = state.step_count
    state.first_moment = b1 * state.first_moment + (1 - b1) * grad
    state.second_moment = b2 * state.second_moment + (1 - b2) * grad * grad
    m_hat = state.first_moment / (1 - b1 ** t)
    v_hat = state.second_moment / (1 - b2 ** t)
    param.data -= (lr * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(param.data.dtype)


@dataclass
class Adam:
    """Adam over a fixed list of parameters; one ``AdamState`` per tensor."""

    params: list[Tensor]
    lr: float
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    states: list[AdamState] = field(init=False)

    def __post_init__(self):
        self.params = list(self.params)
        if any(p.frozen for p in self.params):
            raise ContractError("cannot build an optimizer over frozen parameters")
        self.states = [AdamState.like(p, beta1=self.betas[0], beta2=self.betas[1], epsilon=self.eps)
                       for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p, st in zip(self.params, self.states):
            if p.frozen:
                raise ContractError("optimizer step attempted on a frozen parameter")
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            adam_step(p, grad, st, self.lr)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, st in enumerate(self.states):
            out[f"{i}.m"] = st.first_moment
            out[f"{i}.v"] = st.second_moment
        out["step"] = np.array([self.states[0].step_count if self.states else 0], dtype=np.int64)
        return out
