"""
Telling cause from effect with residuals
========================================

Fit ``b`` from ``a`` and ``a`` from ``b`` by least squares, then test each
residual for independence of its regressor with a distance-correlation
permutation test. Only the causal direction leaves an independent residual,
provided the noise is non-Gaussian.
"""

import numpy as np

from idcausal import dirtest

rng = np.random.default_rng(0)
for case in ("A_causes_B", "B_causes_A", "common_confounder"):
    a, b = dirtest.simulate_pair(case, 3000, rng)
    v = dirtest.classify_pair(a, b)
    print(f"{case:18s} -> {v.case.value:18s} p-values {v.p_values}")

# Linear-Gaussian pairs are not identifiable: both residuals look independent.
a = rng.normal(size=3000)
b = 0.8 * a + rng.normal(size=3000)
v = dirtest.classify_pair(a, b)
print("\nGaussian a -> b     ->", v.case.value, v.p_values)

# An exact linear relation leaves nothing to test and is flagged.
v = dirtest.classify_pair(a, 2 * a)
print("b = 2a exactly      ->", v.case.value, " degenerate:", v.degenerate)
