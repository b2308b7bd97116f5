"""Experiment configuration: a strict JSON schema with every default spelled out.

Unknown keys and wrongly typed values are rejected before any work starts. All
randomness is derived from the single master ``seed``; the config hash embedded
in every output covers everything except ``out_dir``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .attacks import BASELINE_DETECTION_TARGET, BASELINE_RECOGNITION_TARGET, StudentHyper
from .federation import ShardingConfig
from .gan import GanHyper


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MixtureSection:
    n_classes: int = 8
    dim: int = 64
    image_like: bool = True
    mean_scale: float = 1.0
    noise_scale: float = 0.5
    points_per_class: int | None = None  # None: just enough for the requested shards


@dataclass(frozen=True)
class DatasetSection:
    source: str = "mixture"  # "mixture" | "idx"
    mixture: MixtureSection = field(default_factory=MixtureSection)
    idx_images: str | None = None
    idx_labels: str | None = None
    downscale: int = 1
    test_points_per_class: int = 250

    def validate(self):
        if self.source not in ("mixture", "idx"):
            raise ConfigError(f"dataset.source must be 'mixture' or 'idx', got {self.source!r}")
        if self.source == "idx" and not (self.idx_images and self.idx_labels):
            raise ConfigError("dataset.source 'idx' needs idx_images and idx_labels")
        if self.downscale < 1:
            raise ConfigError("dataset.downscale must be >= 1")
        if self.test_points_per_class < 1:
            raise ConfigError("dataset.test_points_per_class must be >= 1")
        m = self.mixture
        if m.n_classes < 2:
            raise ConfigError("dataset.mixture.n_classes must be >= 2")
        if m.image_like and m.dim != 64:
            raise ConfigError("image-like mixtures are 8x8, so dataset.mixture.dim must be 64")
        if m.noise_scale <= 0:
            raise ConfigError("dataset.mixture.noise_scale must be positive")
        if m.points_per_class is not None and m.points_per_class < 0:
            raise ConfigError("dataset.mixture.points_per_class must be nonnegative")


@dataclass(frozen=True)
class ShardingSection:
    n_clients: int = 20
    mean_points: int = 500
    mode: str = "iid"  # mode of the privacy pipeline; the learning pipeline runs learning.modes
    classes_per_client: int = 2
    min_points: int = 100

    def to_sharding(self, mode: str, seed: int) -> ShardingConfig:
        return ShardingConfig(self.n_clients, self.mean_points, mode, self.classes_per_client,
                              self.min_points, seed)


@dataclass(frozen=True)
class ModelSection:
    noise_dim: int = 16
    generator_hidden: tuple[int, ...] = (128,)
    critic_hidden: tuple[int, ...] = (128,)
    weighting: str = "uniform"


@dataclass(frozen=True)
class LearningSection:
    modes: tuple[str, ...] = ("iid", "non_iid")
    centgp: bool = True
    student: StudentHyper = field(default_factory=StudentHyper)


@dataclass(frozen=True)
class DapSection:
    k: int | None = None
    trials: int = 64
    gamma: float = 1e-15
    knn_k: int = 2
    direction: str = "forward"
    sim: str = "auto"  # "auto" | "raw" | "projection"
    projection_dim: int = 32

    def validate(self):
        if self.k is not None and self.k < 1:
            raise ConfigError("dap.k must be >= 1")
        if self.trials < 2:
            raise ConfigError("dap.trials must be >= 2")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("dap.gamma must lie in (0, 1)")
        if self.knn_k < 1:
            raise ConfigError("dap.knn_k must be >= 1")
        if self.direction not in ("forward", "reverse", "symmetric"):
            raise ConfigError(f"unknown dap.direction {self.direction!r}")
        if self.sim not in ("auto", "raw", "projection"):
            raise ConfigError(f"unknown dap.sim {self.sim!r}")
        if self.projection_dim < 1:
            raise ConfigError("dap.projection_dim must be >= 1")


@dataclass(frozen=True)
class AttackSection:
    steps: int = 500
    step_sizes: tuple[float, ...] = (0.01, 0.02, 0.05, 0.1)
    student: StudentHyper = field(default_factory=StudentHyper)
    detection_target: float = BASELINE_DETECTION_TARGET
    recognition_target: float = BASELINE_RECOGNITION_TARGET
    dump_reconstructions: bool = True

    def validate(self):
        if self.steps < 1:
            raise ConfigError("attack.steps must be >= 1")
        if not self.step_sizes or any(s < 0 for s in self.step_sizes):
            raise ConfigError("attack.step_sizes must be a nonempty list of nonnegative values")
        for name in ("detection_target", "recognition_target"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ConfigError(f"attack.{name} must lie in (0, 1]")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    sharding: ShardingSection = field(default_factory=ShardingSection)
    gan: GanHyper = field(default_factory=GanHyper)
    model: ModelSection = field(default_factory=ModelSection)
    rounds: int = 80
    learning: LearningSection = field(default_factory=LearningSection)
    dap: DapSection = field(default_factory=DapSection)
    attack: AttackSection = field(default_factory=AttackSection)
    out_dir: str = "runs/default"
    seed: int = 0
    telemetry_wall_time: bool = False

    def validate(self) -> "ExperimentConfig":
        self.dataset.validate()
        sh = self.sharding
        try:
            sh.to_sharding(sh.mode, self.seed).validate(self.dataset.mixture.n_classes
                                                        if self.dataset.source == "mixture" else None)
            for mode in self.learning.modes:
                sh.to_sharding(mode, self.seed).validate()
            self.gan.validate()
            self.learning.student.validate()
            self.attack.student.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        m = self.model
        if m.noise_dim < 1 or any(h < 1 for h in m.generator_hidden + m.critic_hidden):
            raise ConfigError("model widths must be >= 1")
        if m.weighting not in ("uniform", "shard_size"):
            raise ConfigError(f"unknown model.weighting {m.weighting!r}")
        if not self.learning.modes:
            raise ConfigError("learning.modes must not be empty")
        self.dap.validate()
        self.attack.validate()
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        return self

    # --- serialisation ----------------------------------------------------

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _build(cls, data, "").validate()

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes).validate()

    @property
    def config_hash(self) -> str:
        body = self.to_dict()
        body.pop("out_dir")
        canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def provenance(self) -> dict:
        return {"config_hash": self.config_hash, "seed": self.seed}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None:
            if type(None) in args:
                return None
            raise ConfigError(f"{where}: null is not allowed")
        (inner,) = [a for a in args if a is not type(None)]
        return _coerce(inner, value, where)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected an object")
        return _build(tp, value, where)
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        (inner, _) = typing.get_args(tp)
        return tuple(_coerce(inner, v, f"{where}[{i}]") for i, v in enumerate(value))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    raise ConfigError(f"{where}: unsupported field type {tp!r}")


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{prefix or 'config'}: unknown keys {unknown}")
    kwargs = {k: _coerce(hints[k], v, f"{prefix}.{k}" if prefix else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix or 'config'}: {exc}") from exc
