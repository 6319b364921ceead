"""
Scoring structures and representations
======================================

Edge AUROC, MSE and Hamming distance compare predicted strengths with the
true lower-triangular graph. Cas fits a linear probe on pairs of
representations to predict edges; Cor scores cosine similarity against
which pairs should be correlated. Out-of-distribution folds hold out whole
structures.
"""

import numpy as np

from idcausal import metrics

print("AUROC of the textbook example:", metrics.auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]))

chain = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]])
guess = np.array([[0, 0, 0], [0.9, 0, 0], [0.2, 0.4, 0]])
print("chain vs guess:", metrics.structure_scores([guess], [chain]))

# Correlation labels: moralised graph by default, or any open trek.
print("moral:\n", metrics.correlation_labels(chain))
print("trek:\n", metrics.correlation_labels(chain, rule="trek"))

reps = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]])
print("Cor on a hand-built triple:", metrics.cor_eval([reps], [metrics.correlation_labels(chain)]))

# Ten structures, two held out per fold; unclassified samples (-1) never enter a fold.
ids = np.r_[np.repeat(np.arange(10), 4), [-1, -1]]
for f in metrics.ood_split(ids, held_out=2, folds=3, seed=1):
    train_ids = sorted(set(ids[list(f.train)].tolist()))
    print(f"fold {f.index}: test structures {f.test_structures}, train structures {train_ids}")

print(metrics.confidence_interval([0.71, 0.69, 0.74, 0.70]))
