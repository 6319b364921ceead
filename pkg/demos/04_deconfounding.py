"""
Estimating the confounding effect
=================================

The estimate is a normalised, node-weighted copy of the observation:
``c_j = w_j x_j`` with ``w_j = px_j plx_j / sum_i px_i plx_i``. Outside the
model the weights come from ``PooledWeights``, fitted on all samples of a
skeleton. The gate subtracts the estimate only when ``omega`` clears the
threshold.
"""

import numpy as np

from idcausal import deconfound as D
from idcausal.synthgen import BenchConfig, generate_bench

x = np.array([[1.0, 2.0], [3.0, 4.0]])
print("hand weights (0.2, 0.8):\n", D.estimate_c(x, [0.2, 0.8], [0.5, 0.5]))
print("omega 0.3 gated?", D.apply_gate(x, x / 2, 0.3).gated, "  omega 0.5 gated?", D.apply_gate(x, x / 2, 0.5).gated)

# Strongly confounded benchmark: the estimator beats predicting C = 0.
cfg = BenchConfig(n_observed=20, pervasiveness=0.7, n_confounders=10, samples_per_skeleton=5, n_skeletons=10, seed=0)
ds = generate_bench(cfg)
est = D.pooled_estimator(ds, cfg.n_confounders)
print("\nC-MSE estimator %.3f vs zero %.3f" % (D.eval_c_mse(ds, est), D.eval_c_mse(ds, D.zero_estimator)))

# More samples per skeleton give better pooled weights; the first five
# samples of each skeleton are scored throughout so the rows are comparable.
print("\n n   mse_est  mse_zero   (mean of 5 seeds, N=20 K=5 P=0.4)")
for n in (5, 10, 50):
    runs = [D.c_mse_study(BenchConfig(n_observed=20, pervasiveness=0.4, n_confounders=5, samples_per_skeleton=n,
                                      n_skeletons=10, seed=s)) for s in range(5)]
    print("%3d  %8.4f  %8.4f" % (n, np.mean([r["mse_est"] for r in runs]), np.mean([r["mse_zero"] for r in runs])))
