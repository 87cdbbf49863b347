"""Dense multilayer perceptron: parameter container, forward pass, Adam.

The network is a plain stack of affine layers with a smooth activation
between them. Parameters round-trip losslessly through a flat float64
vector, which is also the layout the optimizer and the checkpoint format
operate on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, silu, tanh
from .errors import NonFiniteError, ShapeError, ValidationError

ACTIVATIONS = {"silu": silu, "tanh": tanh}


@dataclass
class MlpParams:
    """Layered weights/biases plus one activation tag per hidden layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.weights or len(self.weights) != len(self.biases):
            raise ShapeError("need one bias vector per weight matrix")
        if len(self.activations) != len(self.weights) - 1:
            raise ShapeError("need one activation tag per hidden layer")
        for name in self.activations:
            if name not in ACTIVATIONS:
                raise ValidationError(f"unknown activation {name!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ShapeError(f"layer {i}: weight {w.shape} does not match bias {b.shape}")
            if i > 0 and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(
                    f"layer {i - 1} output {self.weights[i - 1].shape[1]} != layer {i} input {w.shape[0]}"
                )

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def layer_dims(self) -> list[int]:
        return [self.in_dim] + [w.shape[1] for w in self.weights]

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def to_vector(self) -> np.ndarray:
        """Flatten as (W0, b0, W1, b1, ...), each row-major."""
        pieces = []
        for w, b in zip(self.weights, self.biases):
            pieces.append(w.ravel())
            pieces.append(b.ravel())
        return np.concatenate(pieces)

    def replace_vector(self, vec: np.ndarray) -> "MlpParams":
        """A new MlpParams with the same shapes but values taken from `vec`."""
        if vec.shape != (self.n_params,):
            raise ShapeError(f"expected vector of length {self.n_params}, got {vec.shape}")
        weights, biases, offset = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(vec[offset:offset + w.size].reshape(w.shape).copy())
            offset += w.size
            biases.append(vec[offset:offset + b.size].copy())
            offset += b.size
        return MlpParams(weights, biases, self.activations)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activations)

    @classmethod
    def init(cls, dims: list[int], rng: np.random.Generator, activation: str = "silu") -> "MlpParams":
        """He-style initialization scaled by fan-in; biases start at zero."""
        if len(dims) < 2:
            raise ValidationError("need at least an input and an output dimension")
        weights = [rng.standard_normal((dims[i], dims[i + 1])) / np.sqrt(dims[i]) for i in range(len(dims) - 1)]
        biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
        return cls(weights, biases, (activation,) * (len(dims) - 2))


def lift(params: MlpParams, requires_grad: bool = True) -> list[Tensor]:
    """Wrap parameters as graph leaves, ordered like `to_vector`."""
    leaves = []
    for w, b in zip(params.weights, params.biases):
        leaves.append(Tensor(w, requires_grad=requires_grad))
        leaves.append(Tensor(b, requires_grad=requires_grad))
    return leaves


def mlp_apply(leaves: list[Tensor], params: MlpParams, x: Tensor) -> Tensor:
    """Differentiable forward pass through lifted parameters."""
    h = x
    n_layers = len(params.weights)
    for i in range(n_layers):
        h = h @ leaves[2 * i] + leaves[2 * i + 1]
        if i < n_layers - 1:
            h = ACTIVATIONS[params.activations[i]](h)
    return h


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Pure forward pass: same computation as the differentiable path.

    Accepts a single input vector or a batch of rows; the output mirrors the
    input's rank.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ShapeError(f"input shape {x.shape} does not match network input dim {params.in_dim}")
    out = mlp_apply(lift(params, requires_grad=False), params, Tensor(x)).data
    return out[0] if single else out


@dataclass
class AdamState:
    """First/second moment accumulators for one flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, n_params: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(m=np.zeros(n_params), v=np.zeros(n_params), beta1=beta1, beta2=beta2, eps=eps)


def adam_step(vec: np.ndarray, grad: np.ndarray, state: AdamState, lr: float) -> np.ndarray:
    """One bias-corrected adaptive-moment update; mutates `state` in place."""
    if grad.shape != vec.shape:
        raise ShapeError(f"gradient shape {grad.shape} does not match parameters {vec.shape}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("gradient contains non-finite entries")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return vec - lr * m_hat / (np.sqrt(v_hat) + state.eps)


__all__ = [
    "ACTIVATIONS",
    "AdamState",
    "MlpParams",
    "adam_step",
    "lift",
    "mlp_apply",
    "mlp_forward",
]
