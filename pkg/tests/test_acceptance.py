"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``[PASS]``/``[FAIL]`` line (collected again in the terminal
summary). The benchmark runs are slow: about 35 minutes on one core in total.
"""

import math
import time

import numpy as np
import pytest

from fedsynth.attacks import linear_student, invert_class
from fedsynth.cli import main as cli_main
from fedsynth.config import AttackSection, ExperimentConfig, ShardingSection
from fedsynth.experiments import prepare, run_learning_experiment, run_privacy_experiment
from fedsynth.federation import GeneratorDelta, aggregate_deltas, masked_sum
from fedsynth.numerics import Architecture, init_mlp, make_rng
from fedsynth.privacy.dap import LossSamples, expected_loss_bound
from fedsynth.privacy.knn import knn_kl_estimate
from fedsynth.privacy.special import t_quantile

from conftest import record, tiny_config
from oracles import finite_difference_check, random_mlp

pytestmark = pytest.mark.slow

SEEDS = range(5)


def _check(criterion, passed, detail):
    record(criterion, passed, detail)
    assert passed, detail


@pytest.fixture(scope="session")
def benchmark_runs(tmp_path_factory):
    """Default benchmark per seed: learning pipeline, then the privacy pipeline on its generators."""
    runs = []
    for seed in SEEDS:
        cfg = ExperimentConfig(seed=seed)
        out = tmp_path_factory.mktemp(f"bench{seed}")
        wb = prepare(cfg)
        t0 = time.process_time()
        learning = run_learning_experiment(cfg, out, wb)
        t1 = time.process_time()
        privacy = run_privacy_experiment(cfg, out, wb)
        t2 = time.process_time()
        runs.append({"learning": learning, "privacy": privacy,
                     "learning_cpu": t1 - t0, "privacy_cpu": t2 - t1})
    return runs


class TestAcceptance:
    def test_c1_gradient_correctness(self):
        t0 = time.process_time()
        rng = make_rng(2024)
        errs = [finite_difference_check(random_mlp(rng, int(rng.integers(1, 5))), rng)
                for _ in range(50)]
        worst, cpu = max(errs), time.process_time() - t0
        _check("C1 gradient correctness", worst <= 1e-4 and cpu < 60,
               f"max relative error {worst:.2e} over 50 MLPs (<= 1e-4), {cpu:.1f}s")

    def test_c2_fedavg_algebra(self):
        t0 = time.process_time()
        rng = make_rng(7)
        worst_idem = worst_mask = 0.0
        perm_ok = True
        for _ in range(200):
            n, length = int(rng.integers(2, 9)), int(rng.integers(1, 50))
            w = rng.dirichlet(np.ones(n))
            vals = rng.normal(scale=float(rng.uniform(1e-3, 10)), size=(n, length))
            deltas = [GeneratorDelta(vals[i], i, 0) for i in range(n)]
            same = [GeneratorDelta(vals[0].copy(), i, 0) for i in range(n)]
            worst_idem = max(worst_idem, float(np.abs(aggregate_deltas(same, w) - vals[0]).max()))
            p = rng.permutation(n)
            perm_ok &= np.array_equal(aggregate_deltas(deltas, w),
                                      aggregate_deltas([deltas[i] for i in p], w[p]))
            worst_mask = max(worst_mask, float(np.abs(masked_sum(list(vals), rng)
                                                      - vals.sum(axis=0)).max()))
        cpu = time.process_time() - t0
        ok = worst_idem <= 1e-12 and perm_ok and worst_mask <= 1e-9 and cpu < 60
        _check("C2 FedAvg algebra", ok,
               f"idempotence err {worst_idem:.1e}, permutation bit-exact={perm_ok}, "
               f"masked vs plain {worst_mask:.1e} (<= 1e-9), 200 instances, {cpu:.1f}s")

    def test_c3_kl_estimator(self):
        t0 = time.process_time()
        cross, same, indep = [], [], []
        for seed in range(10):
            rng = make_rng([3, seed])
            p = rng.normal(0, 1, (10_000, 1))
            q = rng.normal(1, 1, (10_000, 1))
            cross.append(knn_kl_estimate(p, q, k=1))
            same.append(knn_kl_estimate(p, p, k=2))
            indep.append(knn_kl_estimate(p, rng.normal(0, 1, (10_000, 1)), k=2))
        a, b, c = float(np.mean(cross)), float(np.mean(same)), float(np.mean(indep))
        cpu = time.process_time() - t0
        ok = abs(a - 0.5) <= 0.05 and abs(b) <= 0.05 and abs(c) <= 0.05 and cpu < 120
        _check("C3 KL estimator", ok,
               f"KL(N(0,1)||N(1,1)) ~ {a:.4f} (0.5 +- 0.05, k=1), KL(P||P) ~ {b:+.4f} on the same "
               f"draw and {c:+.4f} on an independent one (k=2), 10 seeds, {cpu:.1f}s")

    def test_c4_bound_coverage(self):
        t0 = time.process_time()
        rng = make_rng(11)
        mu_true = 0.3
        draws = rng.normal(mu_true, 1.0, (10_000, 20))
        violations = sum(mu_true > expected_loss_bound(LossSamples(row), 0.05) for row in draws)
        freq, cpu = violations / 10_000, time.process_time() - t0
        _check("C4 expected-loss bound coverage", 0.04 <= freq <= 0.06 and cpu < 60,
               f"violation frequency {freq:.4f} at gamma=0.05 (in [0.04, 0.06]), {cpu:.1f}s")

    def test_c5_t_quantile(self):
        ps = np.linspace(0.001, 0.999, 999)
        cauchy = max(abs(t_quantile(1, p) - math.tan(math.pi * (p - 0.5))) for p in ps)
        normal = abs(t_quantile(10_000, 0.975) - 1.9600)
        mono = all(np.all(np.diff([t_quantile(df, p) for p in ps]) > 0) for df in (1, 3, 30))
        _check("C5 t quantile", cauchy <= 1e-8 and normal < 1e-3 and mono,
               f"Cauchy max err {cauchy:.1e} (<= 1e-8), |q(0.975, 10000) - 1.96| = {normal:.1e}, "
               f"monotone={mono}")

    def test_c6_learning_performance(self, benchmark_runs):
        parts, ok = [], True
        for mode in ("iid", "non_iid"):
            ratios = [r["learning"].row(mode)["fedgp_acc"] / r["learning"].row(mode)["baseline_acc"]
                      for r in benchmark_runs]
            med = float(np.median(ratios))
            ok &= med >= 0.85
            parts.append(f"{mode} median FedGP/baseline {med:.3f} (seeds {min(ratios):.3f}-"
                         f"{max(ratios):.3f})")
        cpu = sum(r["learning_cpu"] for r in benchmark_runs)
        ok &= cpu < 900
        _check("C6 learning performance", ok, ", ".join(parts) + f" (>= 0.85), {cpu / 60:.1f} CPU min")

    def test_c7_dap_direction(self, benchmark_runs, tmp_path_factory):
        small = [r["privacy"].dap.mu for r in benchmark_runs]
        large = []
        for seed in SEEDS:
            cfg = ExperimentConfig(seed=seed, sharding=ShardingSection(mean_points=2000))
            rep = run_privacy_experiment(cfg, tmp_path_factory.mktemp(f"dense{seed}"),
                                         run_attack=False)
            large.append(rep.dap.mu)
        finite = all(math.isfinite(m) for m in small + large)
        m_small, m_large = float(np.median(small)), float(np.median(large))
        gammas = {r["privacy"].dap.gamma for r in benchmark_runs}
        _check("C7 DAP direction", m_large < m_small and finite and gammas == {1e-15},
               f"median mu {m_small:.3e} at 500 pts/client vs {m_large:.3e} at 2000 "
               f"(gamma=1e-15, finite={finite})")

    def test_c8_inversion_mitigation(self, benchmark_runs):
        priv = [r["privacy"] for r in benchmark_runs]
        bd = float(np.median([p.baseline.detection_rate for p in priv]))
        br = float(np.median([p.baseline.recognition_rate for p in priv]))
        fd = float(np.median([p.fedgp.detection_rate for p in priv]))
        fr = float(np.median([p.fedgp.recognition_rate for p in priv]))
        mean_br = float(np.mean([p.baseline.recognition_rate for p in priv]))
        mean_fr = float(np.mean([p.fedgp.recognition_rate for p in priv]))
        cpu = sum(r["privacy_cpu"] for r in benchmark_runs)
        ok = fd <= bd / 2 and fr <= br / 2 and cpu < 600
        _check("C8 inversion mitigation", ok,
               f"median detection {bd:.3f} -> {fd:.3f}, recognition {br:.3f} -> {fr:.3f} "
               f"(each must at least halve); mean recognition {mean_br:.3f} -> {mean_fr:.3f}; "
               f"{cpu / 60:.1f} CPU min")

    def test_c9_linear_inversion(self):
        a = AttackSection()
        step = min(a.step_sizes)
        worst = 1.0
        for seed in range(10):
            w = init_mlp(Architecture((64, 8), ("identity",)), make_rng([9, seed])).weights[0]
            model = linear_student(w)
            for c in range(8):
                direction = w[:, c] - np.delete(w, c, axis=1).mean(axis=1)
                x = invert_class(model, c, a.steps, step).reconstruction
                worst = min(worst, float(x @ direction / np.linalg.norm(x) / np.linalg.norm(direction)))
        _check("C9 linear inversion oracle", worst > 0.99,
               f"min cosine {worst:.5f} over 10 models x 8 classes (> 0.99), step size {step}")

    def test_c10_reproducibility(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(tiny_config(seed=42).to_json())
        for name in ("a", "b"):
            assert cli_main(["experiment", "--config", str(cfg_path), "--out",
                             str(tmp_path / name)]) == 0
        capsys.readouterr()
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*")
                       if p.is_file())
        differing = [str(f) for f in files
                     if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
        listing_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*")
                           if p.is_file())
        _check("C10 reproducibility", not differing and files == listing_b,
               f"{len(files)} CSV/JSON/PGM files compared, {len(differing)} differ")
