"""The two end-to-end pipelines: learning performance and privacy analysis.

Both start from the same data pool, test split and client shards, so a
generator trained by one can be reused by the other within a run.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .attacks import (
    InversionResult,
    ReconstructionReport,
    StudentModel,
    calibrate_thresholds,
    dump_reconstructions_csv,
    evaluate_accuracy,
    invert_class,
    reconstruction_report,
    train_student,
    write_pgm,
)
from .config import ExperimentConfig
from .data import LabelledDataset, MixtureSpec, gen_mixture_dataset, load_idx_images, train_test_split
from .federation import FederatedConfig, shard_dataset, train_federated, write_telemetry
from .gan import GeneratorModel, generate, save_generator
from .numerics import make_rng
from .privacy.dap import DapReport, RemovalConfig, estimate_dap
from .privacy.similarity import SimilarityMetric

LEARNING_COLUMNS = ("setting", "mode", "mean_points_per_client", "baseline_acc", "centgp_acc",
                    "fedgp_acc", "seed")
ATTACK_COLUMNS = ("model", "student_test_acc", "detection_rate", "recognition_rate", "tau_d",
                  "tau_r", "reconstructions")

# stream tags under the master seed
_DATA, _SPLIT, _SYNTH, _STUDENT = 10, 11, 12, 13

Synthesizer = Callable[[str, str, list], LabelledDataset]


@dataclass
class Workbench:
    """Data shared by the pipelines of one run: real train/test and shards per mode."""

    cfg: ExperimentConfig
    train: LabelledDataset
    test: LabelledDataset
    image_shape: tuple[int, int] | None
    setting: str
    shards: dict = field(default_factory=dict)
    generators: dict = field(default_factory=dict)

    def shards_for(self, mode: str) -> list[LabelledDataset]:
        if mode not in self.shards:
            sh = self.cfg.sharding.to_sharding(mode, self.cfg.seed)
            self.shards[mode] = shard_dataset(self.train, sh)
        return self.shards[mode]

    def pooled(self, mode: str) -> LabelledDataset:
        return LabelledDataset.concat(self.shards_for(mode))


def required_points_per_class(cfg: ExperimentConfig, n_classes: int) -> int:
    """Pool size per class that every configured sharding mode can be cut from."""
    sh = cfg.sharding
    high = math.ceil(sh.to_sharding("iid", 0).size_range()[1]) + 1
    need = math.ceil(sh.n_clients * high / n_classes) + n_classes
    modes = set(cfg.learning.modes) | {sh.mode}
    if "non_iid" in modes:
        per = sh.classes_per_client
        slots = math.ceil(sh.n_clients * per / n_classes) + 1
        need = max(need, slots * math.ceil(high / per))
    # slack for the random test split
    return int(math.ceil(1.05 * need)) + cfg.dataset.test_points_per_class


def load_pool(cfg: ExperimentConfig) -> tuple[LabelledDataset, tuple[int, int] | None, str]:
    ds = cfg.dataset
    if ds.source == "idx":
        data = load_idx_images(ds.idx_images, ds.idx_labels, ds.downscale)
        side = int(round(math.sqrt(data.dim)))
        shape = (side, side) if side * side == data.dim else None
        return data, shape, f"idx{data.n_classes}x{data.dim}"
    m = ds.mixture
    per_class = m.points_per_class
    if per_class is None:
        per_class = required_points_per_class(cfg, m.n_classes)
    spec = MixtureSpec(m.n_classes, m.dim, per_class, cfg.seed, m.image_like, m.mean_scale,
                       m.noise_scale)
    data, _ = gen_mixture_dataset(spec, make_rng([cfg.seed, _DATA]))
    kind = "image" if m.image_like else "mixture"
    return data, ((8, 8) if m.image_like else None), f"{kind}{m.n_classes}x{m.dim}"


def prepare(cfg: ExperimentConfig) -> Workbench:
    cfg.validate()
    data, shape, setting = load_pool(cfg)
    n_test = cfg.dataset.test_points_per_class * data.n_classes
    if n_test >= len(data):
        raise ValueError(f"test split of {n_test} rows leaves no training data ({len(data)} rows)")
    train, test, train_idx, test_idx = train_test_split(data, n_test / len(data),
                                                        make_rng([cfg.seed, _SPLIT]))
    if np.intersect1d(train_idx, test_idx).size:
        raise AssertionError("train and test splits share rows")
    return Workbench(cfg, train, test, shape, setting)


def federated_config(cfg: ExperimentConfig) -> FederatedConfig:
    m = cfg.model
    return FederatedConfig(cfg.rounds, cfg.gan, m.noise_dim, m.generator_hidden, m.critic_hidden,
                           m.weighting, cfg.seed)


def _header(cfg: ExperimentConfig, **extra) -> dict:
    h = cfg.provenance()
    h.update(extra)
    return h


def train_generator(wb: Workbench, kind: str, mode: str, out: Path | None) -> GeneratorModel:
    """FedGP (``kind='fedgp'``) or CentGP (``'centgp'``: all shards pooled on one client)."""
    key = (kind, mode)
    if key in wb.generators:
        return wb.generators[key]
    cfg = wb.cfg
    shards = wb.shards_for(mode)
    if kind == "centgp":
        shards = [LabelledDataset.concat(shards)]
    rows: list = []
    gen = train_federated(federated_config(cfg), shards, telemetry=rows,
                          wall_time=cfg.telemetry_wall_time)
    if out is not None:
        write_telemetry(rows, out / f"telemetry_{kind}_{mode}.csv", _header(cfg, kind=kind, mode=mode))
        save_generator(gen, out / f"generator_{kind}_{mode}.json", _header(cfg, kind=kind, mode=mode))
    wb.generators[key] = gen
    return gen


def synthesize(wb: Workbench, kind: str, mode: str, out: Path | None) -> LabelledDataset:
    """Artificial copy of the pooled real data: same size and label multiset."""
    gen = train_generator(wb, kind, mode, out)
    tag = {"fedgp": 0, "centgp": 1}[kind]
    return generate(gen, wb.pooled(mode).labels, make_rng([wb.cfg.seed, _SYNTH, tag]))


def _student(wb: Workbench, data: LabelledDataset, hyper) -> StudentModel:
    # every student starts from the same stream, so identical data gives identical models
    return train_student(data, hyper, make_rng([wb.cfg.seed, _STUDENT]))


def _prepare_out(cfg: ExperimentConfig, out_dir: str | Path | None) -> Path | None:
    if out_dir is None:
        return None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    # out_dir is left out so that reruns elsewhere stay byte-identical
    doc = cfg.to_dict()
    doc.pop("out_dir")
    _write_json(out / "config.json", doc)
    return out


def _write_csv(path: Path, header: dict, columns, rows) -> None:
    with path.open("w", newline="") as f:
        for k, v in header.items():
            f.write(f"# {k}={v}\n")
        w = csv.writer(f)
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r[c]) for c in columns])


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# --- learning performance ---------------------------------------------------


@dataclass
class LearningReport:
    rows: list[dict]
    config_hash: str
    seed: int

    def row(self, mode: str) -> dict:
        return next(r for r in self.rows if r["mode"] == mode)


def run_learning_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None,
                            workbench: Workbench | None = None,
                            synthesizer: Synthesizer | None = None) -> LearningReport:
    """Baseline vs CentGP vs FedGP students, all scored on the held-out real test split.

    ``synthesizer(kind, mode, shards)`` replaces GAN training when given; it must
    return the artificial training set for ``kind`` in {"fedgp", "centgp"}.
    """
    wb = workbench or prepare(cfg)
    out = _prepare_out(cfg, out_dir)
    hyper = cfg.learning.student
    rows = []
    for mode in cfg.learning.modes:
        real = wb.pooled(mode)
        baseline = evaluate_accuracy(_student(wb, real, hyper), wb.test)
        accs = {}
        for kind in ("centgp", "fedgp"):
            if kind == "centgp" and not cfg.learning.centgp:
                accs[kind] = None
                continue
            if synthesizer is not None:
                art = synthesizer(kind, mode, wb.shards_for(mode))
            else:
                art = synthesize(wb, kind, mode, out)
            accs[kind] = evaluate_accuracy(_student(wb, art, hyper), wb.test)
        rows.append({
            "setting": wb.setting,
            "mode": mode,
            "mean_points_per_client": cfg.sharding.mean_points,
            "baseline_acc": baseline,
            "centgp_acc": accs["centgp"],
            "fedgp_acc": accs["fedgp"],
            "seed": cfg.seed,
        })
    if out is not None:
        _write_csv(out / "learning.csv", cfg.provenance(), LEARNING_COLUMNS, rows)
    return LearningReport(rows, cfg.config_hash, cfg.seed)


# --- privacy analysis -------------------------------------------------------


@dataclass
class PrivacyReport:
    dap: DapReport
    baseline: ReconstructionReport | None
    fedgp: ReconstructionReport | None
    gap: dict | None
    accuracies: dict | None
    config_hash: str
    seed: int


def similarity_for(cfg: ExperimentConfig, dim: int) -> SimilarityMetric:
    d = cfg.dap
    if d.sim == "raw":
        return SimilarityMetric()
    if d.sim == "projection":
        return SimilarityMetric.random_projection(dim, d.projection_dim, cfg.seed)
    if dim <= d.projection_dim:
        return SimilarityMetric()
    return SimilarityMetric.random_projection(dim, d.projection_dim, cfg.seed)


def invert_all(model: StudentModel, n_classes: int, steps: int, step_sizes) -> list[InversionResult]:
    return [invert_class(model, c, steps, s) for s in step_sizes for c in range(n_classes)]


def _gap_stats(base: ReconstructionReport, fed: ReconstructionReport) -> dict:
    def ratio(a, b):
        return None if a == 0 else b / a

    return {
        "detection_gap": base.detection_rate - fed.detection_rate,
        "recognition_gap": base.recognition_rate - fed.recognition_rate,
        "detection_ratio": ratio(base.detection_rate, fed.detection_rate),
        "recognition_ratio": ratio(base.recognition_rate, fed.recognition_rate),
        "mean_nearest_distance_baseline": float(np.mean(base.nearest_distance)),
        "mean_nearest_distance_fedgp": float(np.mean(fed.nearest_distance)),
    }


def _dump_reconstructions(out: Path, name: str, results: list[InversionResult], step_sizes,
                          shape, header: dict) -> None:
    dump_reconstructions_csv(results, out / f"reconstructions_{name}.csv", header)
    if shape is None:
        return
    rec_dir = out / "reconstructions"
    rec_dir.mkdir(exist_ok=True)
    n_classes = len(results) // len(step_sizes)
    comment = " ".join(f"{k}={v}" for k, v in header.items())
    for i, r in enumerate(results):
        j = i // n_classes
        write_pgm(rec_dir / f"{name}_class{r.target_class}_step{j}.pgm",
                  r.reconstruction.reshape(shape), comment)


def privacy_bound(cfg: ExperimentConfig, real: LabelledDataset, art: LabelledDataset,
                  out: Path | None, extra: dict | None = None) -> DapReport:
    """DAP report of ``art`` against ``real`` under the configured removal and metric."""
    sim = similarity_for(cfg, real.dim)
    d = cfg.dap
    dap = estimate_dap(real, art, sim, RemovalConfig(d.k, d.trials, cfg.seed), d.gamma, d.knn_k,
                       d.direction)
    dap.extra = {"n_real": len(real), "n_artificial": len(art), **(extra or {})}
    if out is not None:
        _write_json(out / "dap.json", {**cfg.provenance(), **dap.to_dict()})
        with (out / "dap.csv").open("w") as f:
            for k, v in cfg.provenance().items():
                f.write(f"# {k}={v}\n")
            f.write(DapReport.CSV_HEADER + "\n" + dap.csv_line() + "\n")
    return dap


@dataclass
class AttackOutcome:
    baseline: ReconstructionReport
    fedgp: ReconstructionReport
    gap: dict
    accuracies: dict


def inversion_attack(cfg: ExperimentConfig, real: LabelledDataset, art: LabelledDataset,
                     test: LabelledDataset | None, out: Path | None,
                     image_shape: tuple[int, int] | None = None) -> AttackOutcome:
    """Invert students trained on ``real`` and on ``art``; score both on one calibrated scale."""
    a = cfg.attack
    rng_student = [cfg.seed, _STUDENT]
    base_model = train_student(real, a.student, make_rng(rng_student))
    fed_model = train_student(art, a.student, make_rng(rng_student))
    accs = {}
    if test is not None:
        accs = {"baseline": evaluate_accuracy(base_model, test),
                "fedgp": evaluate_accuracy(fed_model, test)}
    base_res = invert_all(base_model, real.n_classes, a.steps, a.step_sizes)
    fed_res = invert_all(fed_model, real.n_classes, a.steps, a.step_sizes)
    # proxy scale is anchored on the non-private student and then held fixed
    sim = SimilarityMetric()
    tau_d, tau_r = calibrate_thresholds(base_res, real, sim, a.detection_target,
                                        a.recognition_target)
    base_rep = reconstruction_report(base_res, real, sim, tau_d, tau_r)
    fed_rep = reconstruction_report(fed_res, real, sim, tau_d, tau_r)
    gap = _gap_stats(base_rep, fed_rep)
    if out is not None:
        _write_json(out / "attack.json", {**cfg.provenance(), "baseline": base_rep.to_dict(),
                                          "fedgp": fed_rep.to_dict(), "gap": gap,
                                          "student_test_acc": accs,
                                          "step_sizes": list(a.step_sizes), "steps": a.steps})
        rows = [{"model": name, "student_test_acc": accs.get(name),
                 "detection_rate": rep.detection_rate, "recognition_rate": rep.recognition_rate,
                 "tau_d": rep.tau_d, "tau_r": rep.tau_r, "reconstructions": len(rep.detected)}
                for name, rep in (("baseline", base_rep), ("fedgp", fed_rep))]
        _write_csv(out / "attack.csv", cfg.provenance(), ATTACK_COLUMNS, rows)
        if a.dump_reconstructions:
            for name, res in (("baseline", base_res), ("fedgp", fed_res)):
                _dump_reconstructions(out, name, res, a.step_sizes, image_shape, cfg.provenance())
    return AttackOutcome(base_rep, fed_rep, gap, accs)


def run_privacy_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None,
                           workbench: Workbench | None = None,
                           generator: GeneratorModel | None = None,
                           run_attack: bool = True) -> PrivacyReport:
    """DAP bound of the released FedGP data, then model inversion against both students."""
    wb = workbench or prepare(cfg)
    out = _prepare_out(cfg, out_dir)
    mode = cfg.sharding.mode
    if generator is not None:
        wb.generators[("fedgp", mode)] = generator
    real = wb.pooled(mode)
    art = synthesize(wb, "fedgp", mode, out)
    dap = privacy_bound(cfg, real, art, out,
                        {"mode": mode, "mean_points_per_client": cfg.sharding.mean_points})
    if not run_attack:
        return PrivacyReport(dap, None, None, None, None, cfg.config_hash, cfg.seed)
    att = inversion_attack(cfg, real, art, wb.test, out, wb.image_shape)
    return PrivacyReport(dap, att.baseline, att.fedgp, att.gap, att.accuracies, cfg.config_hash,
                         cfg.seed)


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None,
                   pipelines=("learning", "privacy")) -> dict:
    """Run the selected pipelines on one shared workbench (generators are reused)."""
    unknown = set(pipelines) - {"learning", "privacy"}
    if unknown:
        raise ValueError(f"unknown pipelines {sorted(unknown)}")
    wb = prepare(cfg)
    result = {}
    if "learning" in pipelines:
        result["learning"] = run_learning_experiment(cfg, out_dir, wb)
    if "privacy" in pipelines:
        result["privacy"] = run_privacy_experiment(cfg, out_dir, wb)
    return result
