"""Downstream students and the model inversion attack against them.

Reconstruction quality is scored with a nearest-class-mean proxy: a
reconstruction is *detected* when it lies within ``tau_d`` of some real class
mean and *recognised* when, in addition, that nearest mean belongs to the
attacked class and is within ``tau_r``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import LabelledDataset
from .gan import one_hot
from .numerics import (
    AdamState,
    Architecture,
    MlpParams,
    adam_step,
    flatten_params,
    init_mlp,
    mlp_backward,
    mlp_forward,
    unflatten_params,
)
from .privacy.similarity import SimilarityMetric

DEFAULT_STUDENT_HIDDEN = (1000, 300)


@dataclass(frozen=True)
class StudentHyper:
    hidden: tuple[int, ...] = DEFAULT_STUDENT_HIDDEN
    epochs: int = 10
    batch_size: int = 128
    lr: float = 1e-3
    beta1: float = 0.9

    def validate(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0:
            raise ValueError("invalid student hyperparameters")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be >= 1")


@dataclass(frozen=True)
class StudentModel:
    """Softmax classifier over standardised inputs ``(x - mean) / std``."""

    params: MlpParams
    n_classes: int
    input_mean: np.ndarray
    input_std: np.ndarray

    def normalise(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.input_mean) / self.input_std

    def logits(self, x: np.ndarray) -> np.ndarray:
        return mlp_forward(self.params, self.normalise(np.atleast_2d(x))).output

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.logits(x))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def linear_student(weights: np.ndarray, bias: np.ndarray | None = None) -> StudentModel:
    """Softmax-linear model (no hidden layers) with identity normalisation."""
    weights = np.asarray(weights, dtype=np.float64)
    d, k = weights.shape
    bias = np.zeros(k) if bias is None else bias
    params = MlpParams((weights,), (bias,), ("identity",))
    return StudentModel(params, k, np.zeros(d), np.ones(d))


def train_student(train: LabelledDataset, hyper: StudentHyper,
                  rng: np.random.Generator) -> StudentModel:
    """Cross-entropy training with Adam; deterministic given ``rng``."""
    hyper.validate()
    if np.unique(train.labels).size < 2:
        raise ValueError("a student needs at least two classes in its training data")
    x, y = train.features, train.labels
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std < 1e-6] = 1.0
    xn = (x - mean) / std
    arch = Architecture((train.dim, *hyper.hidden, train.n_classes),
                        ("relu",) * len(hyper.hidden) + ("identity",))
    params = init_mlp(arch, rng)
    flat = flatten_params(params)
    opt = AdamState.fresh(flat.size, hyper.lr, hyper.beta1, 0.999)
    targets = one_hot(y, train.n_classes)
    n = len(train)
    for _ in range(hyper.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = perm[start : start + hyper.batch_size]
            trace = mlp_forward(params, xn[idx])
            grad_out = (softmax(trace.output) - targets[idx]) / idx.size
            grads, _ = mlp_backward(params, trace, grad_out)
            flat, opt = adam_step(opt, flat, grads)
            params = unflatten_params(flat, arch)
    return StudentModel(params, train.n_classes, mean, std)


def evaluate_accuracy(model: StudentModel, test: LabelledDataset) -> float:
    if len(test) == 0:
        raise ValueError("test set is empty")
    return float(np.mean(model.predict(test.features) == test.labels))


@dataclass
class InversionResult:
    target_class: int
    reconstruction: np.ndarray
    objective_trajectory: np.ndarray
    iterations: int

    @property
    def best_objective(self) -> float:
        return float(self.objective_trajectory.max())


def class_log_prob(model: StudentModel, x: np.ndarray, target: int) -> tuple[float, np.ndarray]:
    """``log p(target | x)`` for a single input and its gradient w.r.t. ``x``."""
    xr = np.atleast_2d(x)
    trace = mlp_forward(model.params, model.normalise(xr))
    logp = log_softmax(trace.output)
    g = -softmax(trace.output)
    g[0, target] += 1.0
    _, dx = mlp_backward(model.params, trace, g, need_param_grads=False)
    return float(logp[0, target]), dx[0] / model.input_std


def invert_class(model: StudentModel, target: int, steps: int = 500,
                 step_size: float = 0.05) -> InversionResult:
    """Gradient ascent on ``log p(target | x)`` from the zero (neutral grey) input.

    The iterate is clamped to [-1, 1] after every step; the best iterate seen is
    returned, so its objective never falls below the starting one.
    """
    if not 0 <= target < model.n_classes:
        raise ValueError(f"target class {target} outside [0, {model.n_classes})")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.zeros(model.input_mean.shape[0])
    best_x, best_obj = x.copy(), -np.inf
    traj = []
    for _ in range(steps + 1):
        obj, grad = class_log_prob(model, x, target)
        traj.append(obj)
        if obj > best_obj:
            best_obj, best_x = obj, x.copy()
        x = np.clip(x + step_size * grad, -1.0, 1.0)
    return InversionResult(target, best_x, np.array(traj), steps)


@dataclass
class ReconstructionReport:
    target_classes: list[int]
    nearest_class: list[int]
    nearest_distance: list[float]
    target_distance: list[float]
    detected: list[bool]
    recognised: list[bool]
    detection_rate: float
    recognition_rate: float
    tau_d: float
    tau_r: float
    metric: str = "euclidean_raw"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path: str | Path, extra: dict | None = None) -> None:
        doc = dict(extra or {})
        doc.update(self.to_dict())
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _class_mean_embeddings(real: LabelledDataset, sim: SimilarityMetric) -> np.ndarray:
    counts = real.class_counts()
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise ValueError(f"classes {missing.tolist()} have no real examples")
    emb = sim.embed(real.features)
    return np.stack([emb[real.labels == c].mean(axis=0) for c in range(real.n_classes)])


def mean_distances(results: list[InversionResult], real: LabelledDataset,
                   sim: SimilarityMetric) -> np.ndarray:
    """(n_results, n_classes) distances from each reconstruction to each class mean."""
    means = _class_mean_embeddings(real, sim)
    recon = sim.embed(np.stack([r.reconstruction for r in results]))
    return np.sqrt(((recon[:, None, :] - means[None, :, :]) ** 2).sum(axis=2))


def reconstruction_report(results: list[InversionResult], real: LabelledDataset,
                          sim: SimilarityMetric, tau_d: float, tau_r: float) -> ReconstructionReport:
    if not results:
        raise ValueError("no inversion results to score")
    dist = mean_distances(results, real, sim)
    targets = [r.target_class for r in results]
    nearest = dist.argmin(axis=1)
    nearest_d = dist.min(axis=1)
    target_d = dist[np.arange(len(results)), targets]
    detected = nearest_d <= tau_d
    recognised = detected & (nearest == np.array(targets)) & (target_d <= tau_r)
    return ReconstructionReport(
        target_classes=[int(t) for t in targets],
        nearest_class=[int(c) for c in nearest],
        nearest_distance=[float(v) for v in nearest_d],
        target_distance=[float(v) for v in target_d],
        detected=[bool(v) for v in detected],
        recognised=[bool(v) for v in recognised],
        detection_rate=float(detected.mean()),
        recognition_rate=float(recognised.mean()),
        tau_d=float(tau_d),
        tau_r=float(tau_r),
        metric=sim.description,
    )


# reference rates of the non-private baseline that the thresholds are anchored to
BASELINE_DETECTION_TARGET = 0.255
BASELINE_RECOGNITION_TARGET = 0.028


def calibrate_thresholds(baseline: list[InversionResult], real: LabelledDataset,
                         sim: SimilarityMetric,
                         detection_target: float = BASELINE_DETECTION_TARGET,
                         recognition_target: float = BASELINE_RECOGNITION_TARGET
                         ) -> tuple[float, float]:
    """Pick ``(tau_d, tau_r)`` so the baseline hits the target rates as closely as possible.

    ``tau_d`` admits the ``max(1, round(detection_target * n))`` closest baseline
    reconstructions; ``tau_r <= tau_d`` admits ``max(1, round(recognition_target * n))``
    of those whose nearest mean is the attacked class (or none if no such case).
    """
    dist = mean_distances(baseline, real, sim)
    n = len(baseline)
    nearest_d = np.sort(dist.min(axis=1))
    k_d = min(n, max(1, int(round(detection_target * n))))
    tau_d = float(nearest_d[k_d - 1])
    targets = np.array([r.target_class for r in baseline])
    hit = (dist.argmin(axis=1) == targets) & (dist.min(axis=1) <= tau_d)
    if not hit.any():
        return tau_d, 0.0
    cand = np.sort(dist[np.arange(n), targets][hit])
    k_r = min(cand.size, max(1, int(round(recognition_target * n))))
    return tau_d, float(min(cand[k_r - 1], tau_d))


def dump_reconstructions_csv(results: list[InversionResult], path: str | Path,
                             header: dict | None = None) -> None:
    with Path(path).open("w") as f:
        for k, v in (header or {}).items():
            f.write(f"# {k}={v}\n")
        f.write("target_class,iterations,best_objective," +
                ",".join(f"x{j}" for j in range(results[0].reconstruction.size)) + "\n")
        for r in results:
            f.write(f"{r.target_class},{r.iterations},{r.best_objective!r}," +
                    ",".join(repr(float(v)) for v in r.reconstruction) + "\n")


def write_pgm(path: str | Path, image: np.ndarray, comment: str | None = None) -> None:
    """Binary greyscale PGM of a [-1, 1] image (2-D array), with an optional comment line."""
    img = np.asarray(image, dtype=np.float64)
    pixels = np.clip(np.rint((img + 1.0) * 127.5), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    head = "P5\n" + (f"# {comment}\n" if comment else "") + f"{w} {h}\n255\n"
    Path(path).write_bytes(head.encode() + pixels.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(raw):
            raise ValueError("truncated PGM header")
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
        elif raw[pos:pos + 1].isspace():
            pos += 1
        else:
            end = pos
            while end < len(raw) and not raw[end:end + 1].isspace():
                end += 1
            tokens.append(raw[pos:end])
            pos = end
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h = int(tokens[1]), int(tokens[2])
    # exactly one whitespace byte separates the header from the pixels
    return np.frombuffer(raw[pos + 1 : pos + 1 + w * h], dtype=np.uint8).reshape(h, w)
