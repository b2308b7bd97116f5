"""Conditional Wasserstein GAN built on the MLP substrate.

The label is one-hot encoded and concatenated to the generator noise and to the
critic input. The critic is trained with weight clipping, so only first-order
gradients are ever needed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .data import LabelledDataset
from .numerics import (
    AdamState,
    Architecture,
    DimensionError,
    MlpParams,
    adam_step,
    flatten_params,
    init_mlp,
    mlp_backward,
    mlp_forward,
    unflatten_params,
)

if TYPE_CHECKING:
    from .federation import ClientState


@dataclass(frozen=True)
class GanHyper:
    batch_size: int = 64
    n_critic: int = 1
    clip_bound: float = 0.05
    critic_lr: float = 2e-3
    generator_lr: float = 2e-3
    beta1: float = 0.5
    beta2: float = 0.999
    local_epochs: int = 1

    def validate(self):
        for name in ("batch_size", "n_critic"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.local_epochs < 0:
            raise ValueError("local_epochs must be >= 0")
        if self.clip_bound <= 0:
            raise ValueError("clip_bound must be positive")
        if self.critic_lr < 0 or self.generator_lr < 0:
            raise ValueError("learning rates must be nonnegative")

    def critic_opt(self, n: int) -> AdamState:
        return AdamState.fresh(n, self.critic_lr, self.beta1, self.beta2)

    def generator_opt(self, n: int) -> AdamState:
        return AdamState.fresh(n, self.generator_lr, self.beta1, self.beta2)


@dataclass(frozen=True)
class GeneratorModel:
    params: MlpParams
    noise_dim: int
    label_dim: int
    output_dim: int

    def __post_init__(self):
        arch = self.params.architecture
        if arch.sizes[0] != self.noise_dim + self.label_dim:
            raise DimensionError(
                f"generator input width {arch.sizes[0]} != noise_dim + label_dim "
                f"({self.noise_dim} + {self.label_dim})"
            )
        if arch.sizes[-1] != self.output_dim:
            raise DimensionError(f"generator output width {arch.sizes[-1]} != {self.output_dim}")
        if arch.activations[-1] != "tanh":
            raise ValueError("generator output activation must be tanh")

    @property
    def n_params(self) -> int:
        return self.params.n_params


@dataclass(frozen=True)
class CriticModel:
    params: MlpParams
    clip_bound: float

    def __post_init__(self):
        arch = self.params.architecture
        if arch.sizes[-1] != 1 or arch.activations[-1] != "identity":
            raise ValueError("critic must end in a single identity unit")
        if self.clip_bound <= 0:
            raise ValueError("clip_bound must be positive")

    @property
    def input_dim(self) -> int:
        return self.params.architecture.sizes[0]


def make_generator(noise_dim: int, n_classes: int, output_dim: int, hidden: tuple[int, ...],
                   rng: np.random.Generator) -> GeneratorModel:
    sizes = (noise_dim + n_classes, *hidden, output_dim)
    arch = Architecture(sizes, ("relu",) * len(hidden) + ("tanh",))
    return GeneratorModel(init_mlp(arch, rng), noise_dim, n_classes, output_dim)


def make_critic(input_dim: int, n_classes: int, hidden: tuple[int, ...], clip_bound: float,
                rng: np.random.Generator) -> CriticModel:
    sizes = (input_dim + n_classes, *hidden, 1)
    arch = Architecture(sizes, ("relu",) * len(hidden) + ("identity",))
    params = init_mlp(arch, rng)
    return CriticModel(_clip(params, clip_bound), clip_bound)


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _clip(params: MlpParams, bound: float) -> MlpParams:
    return MlpParams(
        tuple(np.clip(w, -bound, bound) for w in params.weights),
        tuple(np.clip(b, -bound, bound) for b in params.biases),
        params.activations,
    )


def _check_labels(gen: GeneratorModel, labels: np.ndarray):
    if labels.size and (labels.min() < 0 or labels.max() >= gen.label_dim):
        raise ValueError(f"labels must lie in [0, {gen.label_dim})")


def _generator_input(gen: GeneratorModel, labels: np.ndarray, rng: np.random.Generator):
    z = rng.standard_normal((labels.shape[0], gen.noise_dim))
    return np.concatenate([z, one_hot(labels, gen.label_dim)], axis=1)


def generate(gen: GeneratorModel, labels, rng: np.random.Generator) -> LabelledDataset:
    """One artificial sample per requested label, labelled by construction."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    _check_labels(gen, labels)
    if labels.size == 0:
        return LabelledDataset(np.zeros((0, gen.output_dim)), labels, gen.label_dim, "artificial")
    x = mlp_forward(gen.params, _generator_input(gen, labels, rng)).output
    return LabelledDataset(x, labels, gen.label_dim, "artificial")


def critic_step(
    critic: CriticModel,
    gen: GeneratorModel,
    real_batch: LabelledDataset,
    hyper: GanHyper,
    rng: np.random.Generator,
    opt: AdamState,
) -> tuple[CriticModel, AdamState, float]:
    """One Adam step on ``mean C(fake) - mean C(real)`` followed by weight clipping.

    Fakes are conditioned on the real batch's labels. Returns the updated critic,
    its optimizer state and the pre-step critic gap ``mean C(real) - mean C(fake)``.
    """
    b = len(real_batch)
    if b == 0:
        raise ValueError("real batch is empty")
    if real_batch.dim != gen.output_dim or critic.input_dim != gen.output_dim + gen.label_dim:
        raise DimensionError(
            f"critic input {critic.input_dim} incompatible with data dim {real_batch.dim} "
            f"and generator output {gen.output_dim} + {gen.label_dim} labels"
        )
    cond = one_hot(real_batch.labels, gen.label_dim)
    fake = mlp_forward(gen.params, _generator_input(gen, real_batch.labels, rng)).output
    x = np.concatenate(
        [np.concatenate([real_batch.features, cond], axis=1), np.concatenate([fake, cond], axis=1)]
    )
    trace = mlp_forward(critic.params, x)
    scores = trace.output[:, 0]
    gap = float(scores[:b].mean() - scores[b:].mean())
    grad_out = np.concatenate([np.full(b, -1.0 / b), np.full(b, 1.0 / b)])[:, None]
    grads, _ = mlp_backward(critic.params, trace, grad_out)
    flat, opt = adam_step(opt, flatten_params(critic.params), grads)
    params = _clip(unflatten_params(flat, critic.params.architecture), critic.clip_bound)
    return CriticModel(params, critic.clip_bound), opt, gap


def generator_grad(
    gen: GeneratorModel, critic: CriticModel, labels: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Flat gradient of ``-mean C(G(z, y), y)`` w.r.t. the generator parameters."""
    labels = np.asarray(labels, dtype=np.int64)
    _check_labels(gen, labels)
    if critic.input_dim != gen.output_dim + gen.label_dim:
        raise DimensionError(
            f"critic input {critic.input_dim} != generator output {gen.output_dim} "
            f"+ {gen.label_dim} labels"
        )
    b = labels.shape[0]
    g_trace = mlp_forward(gen.params, _generator_input(gen, labels, rng))
    c_in = np.concatenate([g_trace.output, one_hot(labels, gen.label_dim)], axis=1)
    c_trace = mlp_forward(critic.params, c_in)
    # the critic is frozen here: only its input gradient is needed
    _, d_cin = mlp_backward(critic.params, c_trace, np.full((b, 1), -1.0 / b),
                            need_param_grads=False)
    grads, _ = mlp_backward(gen.params, g_trace, d_cin[:, : gen.output_dim])
    return grads


def generator_step(
    gen: GeneratorModel,
    critic: CriticModel,
    labels: np.ndarray,
    hyper: GanHyper,
    rng: np.random.Generator,
    opt: AdamState,
) -> tuple[GeneratorModel, AdamState]:
    """One Adam step on ``-mean C(G(z, y), y)`` for the given batch of labels."""
    grads = generator_grad(gen, critic, labels, rng)
    flat, opt = adam_step(opt, flatten_params(gen.params), grads)
    return replace(gen, params=unflatten_params(flat, gen.params.architecture)), opt


def local_update(global_gen: GeneratorModel, client: "ClientState", hyper: GanHyper):
    """Run the client's local epochs starting from ``global_gen``.

    One epoch walks the shuffled shard in critic batches and takes a generator
    step after every ``n_critic`` critic steps (and once more at the epoch end
    if steps are left over). The client's critic, optimizer states and RNG are
    updated in place; the returned delta is ``flatten(local) - flatten(global)``.
    """
    from .federation import GeneratorDelta

    shard = client.shard
    n = len(shard)
    if n == 0:
        raise ValueError(f"client {client.client_id}: empty shard")
    rng = client.rng
    arch = global_gen.params.architecture
    base = flatten_params(global_gen.params)
    # Adam runs on the offset from the broadcast generator, so the returned delta
    # reproduces the local generator exactly when added back to ``base``.
    offset = np.zeros_like(base)

    def current():
        return replace(global_gen, params=unflatten_params(base + offset, arch))

    gen = global_gen
    critic, c_opt, g_opt = client.critic, client.critic_opt, client.generator_opt
    gaps = []

    def gen_step():
        nonlocal gen, offset, g_opt
        labels = shard.labels[rng.integers(0, n, size=hyper.batch_size)]
        grads = generator_grad(gen, critic, labels, rng)
        offset, g_opt = adam_step(g_opt, offset, grads)
        gen = current()

    for _ in range(hyper.local_epochs):
        perm = rng.permutation(n)
        pending = 0
        for start in range(0, n, hyper.batch_size):
            batch = shard.subset(perm[start : start + hyper.batch_size])
            critic, c_opt, gap = critic_step(critic, gen, batch, hyper, rng, c_opt)
            gaps.append(gap)
            pending += 1
            if pending == hyper.n_critic:
                gen_step()
                pending = 0
        if pending:
            gen_step()
    client.critic, client.critic_opt, client.generator_opt = critic, c_opt, g_opt
    client.last_gap = float(np.mean(gaps)) if gaps else 0.0
    client.local_generator = gen
    return GeneratorDelta(offset, client.client_id, client.round_index)


def save_generator(gen: GeneratorModel, path: str | Path, header: dict | None = None) -> None:
    """JSON dump of a generator; ``repr`` floats make the round trip exact."""
    arch = gen.params.architecture
    doc = dict(header or {})
    doc.update({
        "noise_dim": gen.noise_dim,
        "label_dim": gen.label_dim,
        "output_dim": gen.output_dim,
        "sizes": list(arch.sizes),
        "activations": list(arch.activations),
        "params": [float(v) for v in flatten_params(gen.params)],
    })
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_generator(path: str | Path) -> GeneratorModel:
    doc = json.loads(Path(path).read_text())
    arch = Architecture(tuple(doc["sizes"]), tuple(doc["activations"]))
    params = unflatten_params(np.array(doc["params"], dtype=np.float64), arch)
    return GeneratorModel(params, doc["noise_dim"], doc["label_dim"], doc["output_dim"])
