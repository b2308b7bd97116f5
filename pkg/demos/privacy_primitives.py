"""The statistical pieces behind the privacy bound, on toy data.

    python demos/privacy_primitives.py
"""

import numpy as np

from fedsynth.numerics import make_rng
from fedsynth.privacy.dap import DpParams, LossSamples, expected_loss_bound, gaussian_sigma
from fedsynth.privacy.knn import knn_kl_estimate
from fedsynth.privacy.special import t_upper_quantile

rng = make_rng(0)

# k-NN divergence estimate against the closed form (mu_p - mu_q)^2 / 2 for unit variances
for shift in (0.25, 0.5, 1.0):
    est = [knn_kl_estimate(rng.normal(0, 1, (5000, 1)), rng.normal(shift, 1, (5000, 1)))
           for _ in range(8)]
    print(f"KL(N(0,1) || N({shift},1)): estimate {np.mean(est):.4f} +- {np.std(est):.4f} "
          f"over 8 draws, exact {shift**2 / 2:.4f}")

# one-sided t bound on a mean from few samples, and how it tightens with n
for n in (5, 20, 100):
    s = LossSamples(rng.normal(0.01, 0.02, n))
    print(f"n={n:3d}: sample mean {s.mean:.4f}, bound at gamma=0.05 {expected_loss_bound(s, 0.05):.4f}, "
          f"at gamma=1e-15 {expected_loss_bound(s, 1e-15):.4f}")

print("t quantile at 1 - 1e-15:", {df: round(t_upper_quantile(df, 1e-15), 3) for df in (3, 31, 63)})

# for comparison, the noise a worst-case Gaussian mechanism would need
print(f"Gaussian mechanism sigma for (eps=1, delta=1e-5), sensitivity 1: "
      f"{gaussian_sigma(1.0, DpParams(1.0, 1e-5)):.4f}")
