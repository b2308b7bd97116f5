"""Small end-to-end run: federated GAN, students, privacy bound and inversion.

    python demos/quickstart.py [out_dir]

Runs the default benchmark (20 clients, 80 rounds) on the iid split only, with
smaller students and a shorter attack, so it finishes in about a minute.
``fedsynth experiment`` runs everything at full size.
"""

import sys

from fedsynth.attacks import StudentHyper
from fedsynth.config import (
    AttackSection,
    DapSection,
    ExperimentConfig,
    LearningSection,
)
from fedsynth.experiments import run_experiment

student = StudentHyper(hidden=(128,), epochs=5)
cfg = ExperimentConfig(
    learning=LearningSection(modes=("iid",), student=student),
    dap=DapSection(trials=32),
    attack=AttackSection(steps=200, step_sizes=(0.01, 0.05), student=student),
    seed=1,
).validate()

out = sys.argv[1] if len(sys.argv) > 1 else "runs/quickstart"
res = run_experiment(cfg, out)

row = res["learning"].row("iid")
print(f"student accuracy on held-out real data: baseline {row['baseline_acc']:.3f}, "
      f"trained on CentGP data {row['centgp_acc']:.3f}, on FedGP data {row['fedgp_acc']:.3f}")

p = res["privacy"]
print(f"average-case privacy: expected loss exceeds mu={p.dap.mu:.2e} with probability "
      f"at most {p.dap.gamma:g} ({p.dap.trials} simulated removals, k={p.dap.k})")
print(f"inversion proxy: baseline detection {p.baseline.detection_rate:.3f} / recognition "
      f"{p.baseline.recognition_rate:.3f}; FedGP student {p.fedgp.detection_rate:.3f} / "
      f"{p.fedgp.recognition_rate:.3f}")
print(f"outputs (CSV, JSON, PGM reconstructions) written to {out}/")
