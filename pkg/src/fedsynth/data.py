"""Labelled datasets: the container type, Gaussian-mixture benchmarks, IDX ingestion, CSV I/O."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LabelledDataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    provenance: str = "real"

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim == 1 and x.size == 0:
            x = x.reshape(0, 0)
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        if x.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {x.shape}")
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"{x.shape[0]} feature rows but {y.shape[0]} labels")
        if self.n_classes < 1:
            raise ValueError("n_classes must be positive")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        if not np.all(np.isfinite(x)):
            raise ValueError("features must be finite")
        if x.size and np.abs(x).max() > 1.0 + 1e-9:
            raise ValueError("features must be scaled into [-1, 1]")
        if self.provenance not in ("real", "artificial"):
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "LabelledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabelledDataset(self.features[idx], self.labels[idx], self.n_classes, self.provenance)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def class_means(self) -> np.ndarray:
        """Per-class feature means; rows of NaN for absent classes."""
        means = np.full((self.n_classes, self.dim), np.nan)
        for c in range(self.n_classes):
            mask = self.labels == c
            if mask.any():
                means[c] = self.features[mask].mean(axis=0)
        return means

    @staticmethod
    def concat(parts: list["LabelledDataset"]) -> "LabelledDataset":
        if not parts:
            raise ValueError("nothing to concatenate")
        return LabelledDataset(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            parts[0].n_classes,
            parts[0].provenance,
        )


@dataclass(frozen=True)
class AffineMap:
    """Per-feature map ``x -> (x - offset) / scale`` into [-1, 1]."""

    offset: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "AffineMap":
        lo, hi = x.min(axis=0), x.max(axis=0)
        half = (hi - lo) / 2.0
        half[half <= 0] = 1.0
        return cls((hi + lo) / 2.0, half)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.clip((x - self.offset) / self.scale, -1.0, 1.0)

    def invert(self, x: np.ndarray) -> np.ndarray:
        return x * self.scale + self.offset


@dataclass
class MixtureSpec:
    """Gaussian mixture benchmark.

    In ``image_like`` mode every class is an 8x8 template (d=64) plus isotropic
    pixel noise of std ``noise_scale``. Otherwise class means are drawn from
    N(0, mean_scale^2 I) and covariances are random SPD matrices scaled by
    ``noise_scale^2``, unless ``means``/``covariances`` are given explicitly.
    """

    n_classes: int = 8
    dim: int = 64
    points_per_class: int = 1000
    seed: int = 0
    image_like: bool = True
    mean_scale: float = 1.0
    noise_scale: float = 0.5
    means: list | None = None
    covariances: list | None = None

    def validate(self):
        if self.n_classes < 2:
            raise ValueError("a mixture needs at least 2 classes")
        if self.points_per_class < 0:
            raise ValueError("points_per_class must be nonnegative")
        if self.image_like and self.dim != 64:
            raise ValueError("image-like mixtures are 8x8, so dim must be 64")
        if self.noise_scale <= 0:
            raise ValueError("noise_scale must be positive")
        if self.means is not None and np.shape(self.means) != (self.n_classes, self.dim):
            raise ValueError("means must have shape (n_classes, dim)")
        if self.covariances is not None:
            covs = np.asarray(self.covariances, dtype=np.float64)
            if covs.shape != (self.n_classes, self.dim, self.dim):
                raise ValueError("covariances must have shape (n_classes, dim, dim)")
            for c, cov in enumerate(covs):
                if not np.allclose(cov, cov.T):
                    raise ValueError(f"covariance of class {c} is not symmetric")
                if np.linalg.eigvalsh(cov).min() <= 0:
                    raise ValueError(f"covariance of class {c} is not positive definite")


def class_templates(n_classes: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth 8x8 blob templates with values in roughly [-0.8, 0.8]."""
    yy, xx = np.mgrid[0:8, 0:8]
    templates = np.empty((n_classes, 64))
    for c in range(n_classes):
        img = np.zeros((8, 8))
        for _ in range(3):
            cy, cx = rng.uniform(0, 7, size=2)
            sign = rng.choice([-1.0, 1.0])
            width = rng.uniform(1.0, 2.2)
            img += sign * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
        img = img / (np.abs(img).max() + 1e-12)
        templates[c] = 0.8 * img.reshape(-1)
    return templates


def mixture_parameters(spec: MixtureSpec) -> tuple[np.ndarray, np.ndarray]:
    """Class means and covariances implied by ``spec`` (deterministic in ``spec.seed``)."""
    spec.validate()
    rng = np.random.default_rng([spec.seed, 0xC1A55])
    d = spec.dim
    if spec.means is not None:
        means = np.asarray(spec.means, dtype=np.float64)
    elif spec.image_like:
        means = class_templates(spec.n_classes, rng)
    else:
        means = rng.normal(0.0, spec.mean_scale, size=(spec.n_classes, d))
    if spec.covariances is not None:
        covs = np.asarray(spec.covariances, dtype=np.float64)
    elif spec.image_like:
        covs = np.broadcast_to(spec.noise_scale**2 * np.eye(d), (spec.n_classes, d, d)).copy()
    else:
        covs = np.empty((spec.n_classes, d, d))
        for c in range(spec.n_classes):
            a = rng.normal(size=(d, d)) / np.sqrt(d)
            covs[c] = spec.noise_scale**2 * (0.5 * np.eye(d) + a @ a.T / 2.0)
    return means, covs


def gen_mixture_dataset(
    spec: MixtureSpec, rng: np.random.Generator
) -> tuple[LabelledDataset, AffineMap | None]:
    """Draw ``points_per_class`` rows per class; rescale features into [-1, 1].

    Image-like data uses the fixed pixel map [-1.5, 1.5] -> [-1, 1] (values outside
    are clipped); vector mixtures use a per-feature min/max map fitted on the draw.
    """
    means, covs = mixture_parameters(spec)
    n = spec.points_per_class
    if n == 0:
        return LabelledDataset(np.zeros((0, spec.dim)), np.zeros(0, dtype=np.int64),
                               spec.n_classes), None
    xs, ys = [], []
    for c in range(spec.n_classes):
        chol = np.linalg.cholesky(covs[c])
        xs.append(means[c] + rng.standard_normal((n, spec.dim)) @ chol.T)
        ys.append(np.full(n, c, dtype=np.int64))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    perm = rng.permutation(len(y))
    x, y = x[perm], y[perm]
    if spec.image_like:
        amap = AffineMap(np.zeros(spec.dim), np.full(spec.dim, 1.5))
    else:
        amap = AffineMap.fit(x)
    return LabelledDataset(amap.apply(x), y, spec.n_classes), amap


def train_test_split(
    data: LabelledDataset, test_fraction: float, rng: np.random.Generator
) -> tuple[LabelledDataset, LabelledDataset, np.ndarray, np.ndarray]:
    """Disjoint random split; also returns the row indices of each side."""
    n = len(data)
    perm = rng.permutation(n)
    n_test = int(round(test_fraction * n))
    test_idx, train_idx = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    return data.subset(train_idx), data.subset(test_idx), train_idx, test_idx


def _read_exact(buf: bytes, offset: int, n: int, what: str) -> bytes:
    if offset + n > len(buf):
        raise DataFormatError(
            f"truncated file: needed {n} bytes for {what} at offset {offset}, "
            f"only {len(buf) - offset} left"
        )
    return buf[offset : offset + n]


def read_idx(path: str | Path, expected_magic: int) -> np.ndarray:
    buf = Path(path).read_bytes()
    (magic,) = struct.unpack(">I", _read_exact(buf, 0, 4, "magic number"))
    if magic != expected_magic:
        raise DataFormatError(
            f"{path}: bad magic 0x{magic:08x} at offset 0 (expected 0x{expected_magic:08x})"
        )
    ndim = magic & 0xFF
    dims = struct.unpack(f">{ndim}I", _read_exact(buf, 4, 4 * ndim, "dimensions"))
    count = int(np.prod(dims))
    body = _read_exact(buf, 4 + 4 * ndim, count, "data")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_idx_images(
    images_path: str | Path, labels_path: str | Path, downscale: int = 1
) -> LabelledDataset:
    """Read an IDX image/label pair; pixels mapped to [-1, 1].

    ``downscale`` is the average-pooling factor (2 turns 28x28 into 14x14).
    """
    images = read_idx(images_path, IDX_IMAGES_MAGIC).astype(np.float64)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    if downscale < 1:
        raise ValueError("downscale must be >= 1")
    n, h, w = images.shape
    if downscale > 1:
        if h % downscale or w % downscale:
            raise ValueError(f"downscale {downscale} does not divide image size {h}x{w}")
        images = images.reshape(n, h // downscale, downscale, w // downscale, downscale).mean(
            axis=(2, 4)
        )
    x = images.reshape(n, -1) / 127.5 - 1.0
    n_classes = int(labels.max()) + 1 if n else 1
    return LabelledDataset(x, labels, max(n_classes, 2))


def write_idx(path: str | Path, array: np.ndarray, magic: int) -> None:
    array = np.asarray(array, dtype=np.uint8)
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.tobytes())


def save_dataset_csv(data: LabelledDataset, path: str | Path, header: dict | None = None) -> None:
    """One row per example: label then features (``repr`` floats round-trip exactly)."""
    path = Path(path)
    with path.open("w", newline="") as f:
        if header:
            for k, v in header.items():
                f.write(f"# {k}={v}\n")
        w = csv.writer(f)
        w.writerow(["label"] + [f"x{j}" for j in range(data.dim)])
        for label, row in zip(data.labels, data.features):
            w.writerow([int(label)] + [repr(float(v)) for v in row])


def load_dataset_csv(path: str | Path, n_classes: int | None = None,
                     provenance: str = "real") -> LabelledDataset:
    rows = []
    with Path(path).open() as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    reader = csv.reader(lines)
    head = next(reader)
    for r in reader:
        rows.append(r)
    labels = np.array([int(r[0]) for r in rows], dtype=np.int64)
    x = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64)
    if not rows:
        x = np.zeros((0, len(head) - 1))
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 1
    return LabelledDataset(x, labels, n_classes, provenance)
