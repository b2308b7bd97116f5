"""Federated training of a shared generator with private, client-resident critics.

Each round the server broadcasts the global generator, every client trains its
own critic and a local copy of the generator on its shard, and only the
generator deltas travel back, hidden behind pairwise additive masks. The server
learns nothing but their (weighted) sum.
"""

from __future__ import annotations

import copy
import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import LabelledDataset
from .gan import CriticModel, GanHyper, GeneratorModel, local_update, make_critic, make_generator
from .numerics import AdamState, flatten_params, make_rng, unflatten_params

# fixed-point resolution for the masked sum; masks live in Z / 2^64
FIXED_POINT_BITS = 40
TELEMETRY_COLUMNS = ("round", "client_count", "mean_critic_gap", "seconds")


class RoundError(RuntimeError):
    pass


@dataclass
class GeneratorDelta:
    values: np.ndarray
    client_id: int
    round_index: int


@dataclass
class ClientState:
    client_id: int
    shard: LabelledDataset
    critic: CriticModel
    critic_opt: AdamState
    generator_opt: AdamState
    rng: np.random.Generator
    round_index: int = 0
    last_gap: float = 0.0
    local_generator: GeneratorModel | None = None

    def __post_init__(self):
        if len(self.shard) < 1:
            raise ValueError(f"client {self.client_id}: shard must hold at least one row")

    def snapshot(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in
                ("critic", "critic_opt", "generator_opt", "rng", "round_index", "last_gap",
                 "local_generator")}

    def restore(self, snap: dict) -> None:
        for k, v in snap.items():
            setattr(self, k, v)


@dataclass
class ServerState:
    generator: GeneratorModel
    round_index: int = 0
    weighting: str = "uniform"

    def weights(self, clients: list[ClientState]) -> np.ndarray:
        if self.weighting == "uniform":
            return np.full(len(clients), 1.0 / len(clients))
        if self.weighting == "shard_size":
            sizes = np.array([len(c.shard) for c in clients], dtype=np.float64)
            return sizes / sizes.sum()
        raise ValueError(f"unknown weighting {self.weighting!r}")


@dataclass(frozen=True)
class ClientMessage:
    """The only thing a client ever sends to the server."""

    client_id: int
    round_index: int
    payload: np.ndarray  # uint64 masked fixed-point submission

    def to_wire(self) -> dict:
        return {
            "client_id": int(self.client_id),
            "round": int(self.round_index),
            "payload": [int(v) for v in self.payload],
        }


MESSAGE_FIELDS = frozenset({"client_id", "round", "payload"})


# --- sharding ---------------------------------------------------------------


@dataclass(frozen=True)
class ShardingConfig:
    n_clients: int = 20
    mean_points: int = 500
    mode: str = "iid"
    classes_per_client: int = 2
    min_points: int = 100
    seed: int = 0

    def validate(self, n_classes: int | None = None):
        if self.n_clients < 1:
            raise ValueError("n_clients must be >= 1")
        if self.mean_points < 1:
            raise ValueError("mean_points must be >= 1")
        if self.mode not in ("iid", "non_iid"):
            raise ValueError(f"unknown sharding mode {self.mode!r}")
        if self.classes_per_client < 1:
            raise ValueError("classes_per_client must be >= 1")
        if n_classes is not None and self.mode == "non_iid" and self.classes_per_client > n_classes:
            raise ValueError(
                f"{self.classes_per_client} classes per client requested but only "
                f"{n_classes} classes exist"
            )

    def size_range(self) -> tuple[float, float]:
        low = max(min(self.min_points, self.mean_points), 0.2 * self.mean_points)
        return low, 2.0 * self.mean_points - low


def shard_sizes(cfg: ShardingConfig, rng: np.random.Generator) -> np.ndarray:
    low, high = cfg.size_range()
    return np.rint(rng.uniform(low, high, size=cfg.n_clients)).astype(np.int64)


def _largest_remainder(total: int, proportions: np.ndarray) -> np.ndarray:
    raw = total * proportions
    counts = np.floor(raw).astype(np.int64)
    short = total - counts.sum()
    if short:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _class_assignment(n_clients: int, n_classes: int, per_client: int,
                      rng: np.random.Generator) -> list[np.ndarray]:
    # concatenated permutations keep class usage balanced; pairs never repeat a class
    seq: list[int] = []
    out = []
    while len(out) < n_clients:
        if len(seq) < per_client:
            seq.extend(rng.permutation(n_classes).tolist())
            continue
        pick = []
        i = 0
        while len(pick) < per_client and i < len(seq):
            if seq[i] not in pick:
                pick.append(seq.pop(i))
            else:
                i += 1
        if len(pick) < per_client:
            seq = pick + seq
            seq.extend(rng.permutation(n_classes).tolist())
            continue
        out.append(np.array(sorted(pick)))
    return out


def shard_dataset(data: LabelledDataset, cfg: ShardingConfig) -> list[LabelledDataset]:
    """Split ``data`` into disjoint client shards (sampling without replacement).

    iid shards follow the global class proportions (largest-remainder rounding);
    non-iid shards draw evenly from ``classes_per_client`` randomly assigned classes.
    Shard sizes are uniform on ``[low, 2 * mean - low]`` with
    ``low = max(min(min_points, mean), 0.2 * mean)``.
    """
    cfg.validate(data.n_classes)
    rng = make_rng([cfg.seed, 0x5A4D])
    sizes = shard_sizes(cfg, rng)
    if sizes.sum() > len(data):
        raise ValueError(f"insufficient data: shards need {sizes.sum()} rows, have {len(data)}")
    pools = [list(rng.permutation(np.flatnonzero(data.labels == c))) for c in range(data.n_classes)]
    counts = data.class_counts()
    shards = []
    if cfg.mode == "iid":
        props = counts / counts.sum()
        plans = [(np.arange(data.n_classes), _largest_remainder(s, props)) for s in sizes]
    else:
        present = np.flatnonzero(counts)
        if cfg.classes_per_client > present.size:
            raise ValueError(
                f"{cfg.classes_per_client} classes per client requested but only "
                f"{present.size} classes present"
            )
        assign = _class_assignment(cfg.n_clients, present.size, cfg.classes_per_client, rng)
        plans = []
        for s, a in zip(sizes, assign):
            share = np.full(a.size, 1.0 / a.size)
            plans.append((present[a], _largest_remainder(int(s), share)))
    for classes, per_class in plans:
        idx = []
        for c, k in zip(classes, per_class):
            if k > len(pools[c]):
                raise ValueError(f"insufficient data: class {c} exhausted")
            idx.extend(pools[c][:k])
            del pools[c][:k]
        shards.append(data.subset(np.sort(np.array(idx, dtype=np.int64))))
    return shards


# --- aggregation ------------------------------------------------------------


def aggregate_deltas(deltas: list[GeneratorDelta], weights) -> np.ndarray:
    """Weighted sum ``sum_i w_i * delta_i`` (weights must be a convex combination)."""
    if not deltas:
        raise ValueError("no deltas to aggregate")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(deltas),):
        raise ValueError(f"{len(deltas)} deltas but {weights.size} weights")
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights sum to {weights.sum()!r}, not 1")
    n = deltas[0].values.shape[0]
    r = deltas[0].round_index
    for d in deltas:
        if d.values.shape != (n,):
            raise ValueError(f"delta from client {d.client_id} has length {d.values.size}, not {n}")
        if d.round_index != r:
            raise ValueError(f"delta from client {d.client_id} is for round {d.round_index}, not {r}")
    # canonical order makes the floating-point sum independent of arrival order
    order = sorted(range(len(deltas)), key=lambda i: (deltas[i].client_id, i))
    out = np.zeros(n)
    for i in order:
        out += weights[i] * deltas[i].values
    return out


def encode_fixed(x: np.ndarray) -> np.ndarray:
    return np.rint(np.asarray(x, dtype=np.float64) * 2.0**FIXED_POINT_BITS).astype(np.int64).view(
        np.uint64
    )


def decode_fixed(u: np.ndarray) -> np.ndarray:
    return u.view(np.int64).astype(np.float64) / 2.0**FIXED_POINT_BITS


def masked_submissions(deltas: list[np.ndarray], rng: np.random.Generator) -> list[np.ndarray]:
    """Fixed-point submissions hidden by pairwise masks that cancel modulo 2^64.

    Client ``i`` adds ``m_ij`` for every ``j > i`` and subtracts ``m_ji`` for
    every ``j < i``. Each mask is uniform on the ring, so any single submission
    is uniformly distributed whatever the underlying delta.
    """
    n = len(deltas)
    if n < 2:
        raise ValueError("masked aggregation needs at least 2 participants")
    length = deltas[0].shape[0]
    subs = [encode_fixed(d).copy() for d in deltas]
    for i in range(n):
        for j in range(i + 1, n):
            m = rng.integers(0, 2**64, size=length, dtype=np.uint64, endpoint=False)
            subs[i] += m
            subs[j] -= m
    return subs


def unmask_sum(submissions: list[np.ndarray]) -> np.ndarray:
    total = np.zeros_like(submissions[0])
    for s in submissions:
        total += s
    return decode_fixed(total)


def masked_sum(deltas: list[np.ndarray], rng: np.random.Generator) -> np.ndarray:
    lengths = {np.asarray(d).shape for d in deltas}
    if len(lengths) > 1:
        raise ValueError(f"deltas have differing shapes {sorted(lengths)}")
    return unmask_sum(masked_submissions([np.asarray(d) for d in deltas], rng))


# --- protocol ---------------------------------------------------------------


def run_round(server: ServerState, clients: list[ClientState], hyper: GanHyper,
              rng: np.random.Generator, outbox: list | None = None) -> ServerState:
    """One synchronous round; returns the new server state.

    On any client failure the exception propagates as :class:`RoundError`, the
    input ``server`` is untouched and every client is rolled back.
    """
    if not clients:
        raise RoundError("a round needs at least one client")
    g = server.generator
    snaps = [c.snapshot() for c in clients]
    try:
        weights = server.weights(clients)
        deltas = []
        for c in clients:
            c.round_index = server.round_index
            d = local_update(g, c, hyper)
            if d.values.shape[0] != g.n_params:
                raise RoundError(f"client {c.client_id} returned a delta of wrong length")
            deltas.append(d)
        order = sorted(range(len(clients)), key=lambda i: clients[i].client_id)
        if len(clients) == 1:
            avg = aggregate_deltas(deltas, weights)
        else:
            scaled = [weights[i] * deltas[i].values for i in order]
            subs = masked_submissions(scaled, rng)
            msgs = [ClientMessage(clients[i].client_id, server.round_index, s)
                    for i, s in zip(order, subs)]
            if outbox is not None:
                outbox.extend(msgs)
            avg = unmask_sum([m.payload for m in msgs])
        new_flat = flatten_params(g.params) + avg
        new_gen = GeneratorModel(unflatten_params(new_flat, g.params.architecture),
                                 g.noise_dim, g.label_dim, g.output_dim)
    except Exception as exc:
        for c, s in zip(clients, snaps):
            c.restore(s)
        if isinstance(exc, RoundError):
            raise
        raise RoundError(f"round {server.round_index} aborted: {exc}") from exc
    return ServerState(new_gen, server.round_index + 1, server.weighting)


@dataclass(frozen=True)
class FederatedConfig:
    rounds: int = 200
    hyper: GanHyper = field(default_factory=GanHyper)
    noise_dim: int = 16
    generator_hidden: tuple[int, ...] = (128,)
    critic_hidden: tuple[int, ...] = (128,)
    weighting: str = "uniform"
    seed: int = 0

    def validate(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.noise_dim < 1:
            raise ValueError("noise_dim must be >= 1")
        if any(h < 1 for h in self.generator_hidden + self.critic_hidden):
            raise ValueError("hidden widths must be >= 1")
        if self.weighting not in ("uniform", "shard_size"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        self.hyper.validate()


def init_federation(cfg: FederatedConfig, shards: list[LabelledDataset]
                    ) -> tuple[ServerState, list[ClientState], np.random.Generator]:
    cfg.validate()
    if not shards:
        raise ValueError("at least one client shard is required")
    d, n_classes = shards[0].dim, shards[0].n_classes
    if d < 1:
        raise ValueError("generator output width must be >= 1")
    rng = make_rng([cfg.seed, 0xFED])
    gen = make_generator(cfg.noise_dim, n_classes, d, cfg.generator_hidden, make_rng([cfg.seed, 1]))
    clients = []
    for i, shard in enumerate(shards):
        critic = make_critic(d, n_classes, cfg.critic_hidden, cfg.hyper.clip_bound,
                             make_rng([cfg.seed, 2, i]))
        clients.append(ClientState(
            client_id=i,
            shard=shard,
            critic=critic,
            critic_opt=cfg.hyper.critic_opt(critic.params.n_params),
            generator_opt=cfg.hyper.generator_opt(gen.n_params),
            rng=make_rng([cfg.seed, 3, i]),
        ))
    return ServerState(gen, 0, cfg.weighting), clients, rng


def train_federated(
    cfg: FederatedConfig,
    shards: list[LabelledDataset],
    telemetry: list | None = None,
    telemetry_path: str | Path | None = None,
    wall_time: bool = True,
    on_round: Callable[[ServerState, list[ClientState]], None] | None = None,
) -> GeneratorModel:
    """Run ``cfg.rounds`` rounds and return the final global generator.

    A single shard gives plain centralised GAN training. Telemetry rows
    ``(round, client_count, mean_critic_gap, seconds)`` are appended to
    ``telemetry`` and/or written to ``telemetry_path``; with ``wall_time=False``
    the seconds column is left empty so the file is reproducible.
    """
    server, clients, rng = init_federation(cfg, shards)
    rows = telemetry if telemetry is not None else []
    for _ in range(cfg.rounds):
        t0 = time.perf_counter()
        server = run_round(server, clients, cfg.hyper, rng)
        secs = time.perf_counter() - t0
        gap = float(np.mean([c.last_gap for c in clients]))
        rows.append((server.round_index, len(clients), gap, secs if wall_time else None))
        if on_round is not None:
            on_round(server, clients)
    if telemetry_path is not None:
        write_telemetry(rows, telemetry_path)
    return server.generator


def write_telemetry(rows, path: str | Path, header: dict | None = None) -> None:
    with Path(path).open("w", newline="") as f:
        if header:
            for k, v in header.items():
                f.write(f"# {k}={v}\n")
        w = csv.writer(f)
        w.writerow(TELEMETRY_COLUMNS)
        for r, n, gap, secs in rows:
            w.writerow([r, n, repr(gap), "" if secs is None else f"{secs:.6f}"])
