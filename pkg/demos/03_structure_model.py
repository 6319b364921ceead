"""
Learning per-sample causal strengths
====================================

The model encodes each sample into a lower-triangular strength matrix
``a_hat`` plus noise and confounder estimates, decodes a reconstruction
through ``(I - a_hat)^-1`` and is trained on a correlation-space loss with
a Gaussian prior on the strengths.

Caveat: with scalar variables (D = 1) pairwise cosines are all +-1, so the
reconstruction term is flat and training is driven by the prior alone. Use
multi-dimensional embeddings.
"""

import numpy as np

from idcausal import metrics
from idcausal import model as M
from idcausal.synthgen import BenchConfig, generate_bench

ds = generate_bench(BenchConfig(n_observed=5, expected_neighborhood=2, pervasiveness=0.2, n_confounders=1,
                                samples_per_skeleton=40, n_skeletons=4, embed_dim=8, seed=0))

cfg = M.TrainConfig(lr=1e-3, batch_size=16, epochs=10, hidden_dim=16, seed=0)
params, history = M.train(ds, cfg)
for h in history[:: max(1, len(history) // 5)]:
    print(f"epoch {h['epoch']:3d}  total {h['total']:.4f}  recon {h['reconstruction']:.4f}  kl {h['kl']:.4f}")

outs = M.predict(params, ds)
print("\na_hat of the first sample (rows sum to 1 below the root):")
print(np.round(outs[0].a_hat, 3))
print("omega = rank(l_hat) / N:", outs[0].omega)

scores = metrics.structure_scores([o.a_hat for o in outs], [s.ground_truth.adjacency for s in ds])
print("edge AUROC %.3f  MSE %.3f  HD %.2f" % (scores["auroc"], scores["mse"], scores["hd"]))

# Gated representations feed the Cas/Cor probes.
reps = [M.representations(o, cfg.gate_threshold) for o in outs]
print("Cas AUROC %.3f" % metrics.cas_eval(reps, [s.ground_truth.adjacency for s in ds])[0])

M.save_checkpoint("/tmp/demo_ckpt", params, cfg, history)
again, _ = M.load_checkpoint("/tmp/demo_ckpt")
print("checkpoint restores identical predictions:",
      np.array_equal(M.predict(again, ds[:1])[0].a_hat, outs[0].a_hat))
