"""Dense MLP substrate: forward pass, exact backprop, parameter flattening and Adam.

Weights are stored as ``(fan_in, fan_out)`` matrices so a layer computes
``x @ W + b`` on a row-major batch ``x``. Everything is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")


class DimensionError(ValueError):
    """Raised when array shapes do not chain through a network."""

    def __init__(self, message: str, layer: int | None = None):
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)
        self.layer = layer


def make_rng(seed: int | Sequence[int]) -> np.random.Generator:
    """PCG64 generator; a sequence seed lets callers derive independent streams."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def child_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))


@dataclass(frozen=True)
class Architecture:
    sizes: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.sizes) < 2:
            raise DimensionError("an architecture needs an input and an output width")
        if len(self.activations) != len(self.sizes) - 1:
            raise DimensionError(
                f"{len(self.sizes) - 1} layers but {len(self.activations)} activations"
            )
        for i, s in enumerate(self.sizes):
            if s < 1:
                raise DimensionError(f"width {s} must be positive", layer=max(i - 1, 0))
        for i, a in enumerate(self.activations):
            if a not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {a!r}")

    @property
    def n_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.sizes[:-1], self.sizes[1:]))


@dataclass(frozen=True)
class MlpParams:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        ws = tuple(np.asarray(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.asarray(b, dtype=np.float64).reshape(-1) for b in self.biases)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)
        object.__setattr__(self, "activations", tuple(self.activations))
        if not (len(ws) == len(bs) == len(self.activations)) or not ws:
            raise DimensionError("weights, biases and activations must have equal nonzero length")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2:
                raise DimensionError(f"weight must be 2-D, got shape {w.shape}", layer=i)
            if b.shape[0] != w.shape[1]:
                raise DimensionError(
                    f"bias length {b.shape[0]} != weight cols {w.shape[1]}", layer=i
                )
            if i > 0 and ws[i - 1].shape[1] != w.shape[0]:
                raise DimensionError(
                    f"weight rows {w.shape[0]} != previous layer width {ws[i - 1].shape[1]}",
                    layer=i,
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameter")
        for i, a in enumerate(self.activations):
            if a not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {a!r}")

    @property
    def architecture(self) -> Architecture:
        sizes = (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)
        return Architecture(sizes, self.activations)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def __eq__(self, other):
        if not isinstance(other, MlpParams):
            return NotImplemented
        return (
            self.activations == other.activations
            and len(self.weights) == len(other.weights)
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )

    __hash__ = None


def init_mlp(arch: Architecture, rng: np.random.Generator) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(arch.sizes[:-1], arch.sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(tuple(weights), tuple(biases), arch.activations)


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return z


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray, g: np.ndarray) -> np.ndarray:
    # g is dLoss/da; returns dLoss/dz
    if name == "relu":
        return g * (z > 0.0)
    if name == "tanh":
        return g * (1.0 - a * a)
    if name == "sigmoid":
        return g * a * (1.0 - a)
    return g


@dataclass
class Trace:
    """Per-layer activations kept for backprop.

    ``post[0]`` is the network input; ``post[l + 1]`` is the output of layer ``l``
    and ``pre[l]`` its pre-activation.
    """

    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]


def mlp_forward(params: MlpParams, x: np.ndarray) -> Trace:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"input must be 2-D (batch, features), got shape {x.shape}", layer=0)
    trace = Trace(post=[x])
    a = x
    for i, (w, b, act) in enumerate(zip(params.weights, params.biases, params.activations)):
        if a.shape[1] != w.shape[0]:
            raise DimensionError(f"input width {a.shape[1]} != weight rows {w.shape[0]}", layer=i)
        z = a @ w + b
        a = _activate(act, z)
        trace.pre.append(z)
        trace.post.append(a)
    return trace


def mlp_output(params: MlpParams, x: np.ndarray) -> np.ndarray:
    return mlp_forward(params, x).output


def mlp_backward(
    params: MlpParams, trace: Trace, output_grad: np.ndarray, need_param_grads: bool = True
) -> tuple[np.ndarray | None, np.ndarray]:
    """Backpropagate ``output_grad`` (dLoss/doutput) through the network.

    Returns the flat parameter gradient (in :func:`flatten_params` order) and the
    gradient with respect to the network input.
    """
    g = np.asarray(output_grad, dtype=np.float64)
    if len(trace.pre) != len(params.weights):
        raise DimensionError("trace depth does not match parameters")
    if g.shape != trace.output.shape:
        raise DimensionError(
            f"output_grad shape {g.shape} != output shape {trace.output.shape}",
            layer=len(params.weights) - 1,
        )
    grads: list[np.ndarray] = []
    for i in range(len(params.weights) - 1, -1, -1):
        g = _activation_grad(params.activations[i], trace.pre[i], trace.post[i + 1], g)
        if need_param_grads:
            grads.append(g.sum(axis=0))
            grads.append((trace.post[i].T @ g).reshape(-1))
        g = g @ params.weights[i].T
    flat = np.concatenate(grads[::-1]) if need_param_grads else None
    return flat, g


def flatten_params(params: MlpParams) -> np.ndarray:
    """Layer 0 weights row-major, layer 0 bias, layer 1 weights, ..."""
    parts = []
    for w, b in zip(params.weights, params.biases):
        parts.append(w.reshape(-1))
        parts.append(b)
    return np.concatenate(parts)


def unflatten_params(vector: np.ndarray, arch: Architecture) -> MlpParams:
    vector = np.asarray(vector, dtype=np.float64)
    if vector.ndim != 1 or vector.shape[0] != arch.n_params:
        raise DimensionError(
            f"vector length {vector.size} != parameter count {arch.n_params}"
        )
    weights, biases = [], []
    offset = 0
    for fan_in, fan_out in zip(arch.sizes[:-1], arch.sizes[1:]):
        n = fan_in * fan_out
        weights.append(vector[offset : offset + n].reshape(fan_in, fan_out).copy())
        offset += n
        biases.append(vector[offset : offset + fan_out].copy())
        offset += fan_out
    return MlpParams(tuple(weights), tuple(biases), arch.activations)


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n: int, lr: float = 1e-3, beta1: float = 0.5, beta2: float = 0.999,
              eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, eps)


def adam_step(
    state: AdamState, params_flat: np.ndarray, grads_flat: np.ndarray
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns new parameters and state."""
    params_flat = np.asarray(params_flat, dtype=np.float64)
    grads_flat = np.asarray(grads_flat, dtype=np.float64)
    if not (params_flat.shape == grads_flat.shape == state.m.shape):
        raise DimensionError(
            f"length mismatch: params {params_flat.shape}, grads {grads_flat.shape}, "
            f"state {state.m.shape}"
        )
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads_flat
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads_flat * grads_flat
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    new = params_flat - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, step, state.lr, state.beta1, state.beta2, state.eps)
