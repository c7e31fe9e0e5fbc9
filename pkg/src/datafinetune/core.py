"""Dense numeric kernel shared by model training and perturbation learning.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Every public
function here is pure: inputs are never modified.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ValidationError

DTYPE = np.float64


def as_tensor(x, ndim: int | None = None) -> np.ndarray:
    """Return ``x`` as a contiguous float64 array, optionally checking its rank."""
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionError(f"expected a {ndim}-d array, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_tensor(a, 2)
    b = as_tensor(b, 2)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def tanh_elem(x) -> np.ndarray:
    return np.tanh(as_tensor(x))


def arctanh_elem(x, eps: float = 1e-6) -> np.ndarray:
    """Elementwise inverse tanh after clamping into ``[-1 + eps, 1 - eps]``."""
    x = np.clip(as_tensor(x), -1.0 + eps, 1.0 - eps)
    return np.arctanh(x)


def softmax(logits) -> np.ndarray:
    """Softmax over the last axis, computed with max subtraction."""
    z = as_tensor(logits)
    if z.ndim == 0:
        raise DimensionError("softmax needs at least one axis")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator; identical seeds give identical streams."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass
class AdamState:
    """Moment estimates for one parameter array."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def like(cls, param, learning_rate: float = 0.001, **kwargs) -> "AdamState":
        shape = np.shape(param)
        return cls(np.zeros(shape, DTYPE), np.zeros(shape, DTYPE),
                   learning_rate=learning_rate, **kwargs)


def adam_step(param, grad, state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Returns the new parameter and state."""
    param = as_tensor(param)
    grad = as_tensor(grad)
    if param.shape != grad.shape or param.shape != state.first_moment.shape:
        raise DimensionError(
            f"adam shapes differ: param {param.shape}, grad {grad.shape}, "
            f"state {state.first_moment.shape}"
        )
    t = state.step + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_param = param - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(m, v, t, state.learning_rate, state.beta1, state.beta2, state.epsilon)
    return new_param, new_state


@dataclass
class AdamOptimizer:
    """Adam over a list of parameter arrays, one state per array."""

    learning_rate: float
    states: list[AdamState] = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        if not self.states:
            self.states = [AdamState.like(p, self.learning_rate) for p in params]
        if len(params) != len(self.states) or len(grads) != len(params):
            raise ValidationError("parameter list changed between optimizer steps")
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            new_p, self.states[i] = adam_step(p, g, self.states[i])
            out.append(new_p)
        return out
