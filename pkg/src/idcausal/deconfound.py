"""Estimating and removing the additive confounding effect ``C = B L``.

The estimate puts a normalised weight on each node and scales its
observation: ``c_j = px_j * plx_j / sum_i(px_i * plx_i) * x_j``. Here ``px``
is how probable the node's value is and ``plx`` how likely it is to be
driven by the confounders. Inside the model both come from learned sigmoid
heads; for standalone use the caller supplies them, e.g. through
:class:`PooledWeights`, which fits them from all samples sharing a skeleton.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from sklearn.decomposition import FactorAnalysis
from sklearn.exceptions import ConvergenceWarning

__all__ = [
    "DegenerateWeightsError",
    "MissingGroundTruthError",
    "DeconfoundResult",
    "estimate_c",
    "apply_gate",
    "eval_c_mse",
    "zero_estimator",
    "PooledWeights",
    "pooled_estimator",
    "c_mse_study",
]


class DegenerateWeightsError(ValueError):
    """All node weights are zero, so the normalisation is undefined."""


class MissingGroundTruthError(ValueError):
    pass


@dataclass(frozen=True)
class DeconfoundResult:
    c_est: np.ndarray
    x_clean: np.ndarray
    gated: bool


def estimate_c(x, px, plx) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    px = np.asarray(px, dtype=np.float64).reshape(-1)
    plx = np.asarray(plx, dtype=np.float64).reshape(-1)
    n = x.shape[0]
    if px.shape != (n,) or plx.shape != (n,):
        raise ValueError(f"need one px and plx weight per node ({n}), got {px.shape} and {plx.shape}")
    if np.any(px < 0) or np.any(plx < 0):
        raise ValueError("weights must be non-negative")
    w = px * plx
    total = w.sum()
    if not total > 0:
        raise DegenerateWeightsError("px * plx is zero for every node")
    return (w / total)[:, None] * x


def apply_gate(x_star, c_est, omega: float, threshold: float = 0.5) -> DeconfoundResult:
    """Subtract ``c_est`` when ``omega >= threshold``; otherwise pass ``x_star`` through."""
    if not 0.0 <= omega <= 1.0:
        raise ValueError(f"omega must lie in [0, 1], got {omega}")
    x_star = np.asarray(x_star, dtype=np.float64)
    c_est = np.asarray(c_est, dtype=np.float64)
    if omega >= threshold:
        return DeconfoundResult(c_est=c_est, x_clean=x_star - c_est, gated=True)
    return DeconfoundResult(c_est=c_est, x_clean=x_star, gated=False)


def zero_estimator(sample) -> np.ndarray:
    return np.zeros_like(sample.x)


def eval_c_mse(dataset, estimator: Callable) -> float:
    """Mean over samples of ``mean((c_est - C_true)**2)``."""
    errors = []
    for i, sample in enumerate(dataset):
        if sample.confounding is None:
            raise MissingGroundTruthError(f"sample {i} carries no ground-truth confounding")
        c_est = np.asarray(estimator(sample), dtype=np.float64)
        errors.append(np.mean((c_est - sample.confounding) ** 2))
    if not errors:
        raise MissingGroundTruthError("empty dataset")
    return float(np.mean(errors))


class PooledWeights:
    """Plug-in node weights fitted on all samples of one skeleton.

    The skeleton's observations are pooled over samples and embedding
    columns, giving one column per observation. ``px_j`` is the peak height
    of node ``j``'s fitted zero-mean Gaussian (its inverse pooled scale), and
    ``plx_j`` is the node's communality under a ``n_confounders``-factor
    model: the share of its variance attributed to the common factors.
    """

    def __init__(self, n_confounders: int, seed: int = 0):
        if n_confounders < 1:
            raise ValueError("n_confounders must be >= 1")
        self.k = n_confounders
        self.seed = seed
        self.px: np.ndarray | None = None
        self.plx: np.ndarray | None = None

    def fit(self, xs) -> "PooledWeights":
        pooled = np.concatenate([np.asarray(x, dtype=np.float64) for x in xs], axis=1)
        scale2 = np.maximum(np.mean(pooled**2, axis=1), 1e-300)
        self.px = 1.0 / np.sqrt(scale2)
        n_obs = pooled.shape[1]
        if n_obs < 2:
            self.plx = np.ones(pooled.shape[0])
            return self
        k = max(1, min(self.k, n_obs - 1))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            fa = FactorAnalysis(n_components=k, random_state=self.seed).fit(pooled.T)
        common = np.sum(fa.components_**2, axis=0)
        self.plx = common / np.maximum(common + fa.noise_variance_, 1e-300)
        return self

    def weights(self, x=None) -> tuple[np.ndarray, np.ndarray]:
        if self.px is None:
            raise RuntimeError("PooledWeights used before fit")
        return self.px, self.plx

    def __call__(self, x) -> np.ndarray:
        return estimate_c(x, *self.weights(x))


def pooled_estimator(dataset, n_confounders: int) -> Callable:
    """Per-sample estimator backed by one :class:`PooledWeights` fit per structure id."""
    fitted = {
        sid: PooledWeights(n_confounders).fit([s.x for s in group])
        for sid, group in dataset.by_structure().items()
    }

    def estimator(sample) -> np.ndarray:
        return fitted[sample.structure_id](sample.x)

    return estimator


def c_mse_study(cfg, eval_per_skeleton: int = 5) -> dict:
    """Estimated-C and zero-baseline MSE on one synthetic benchmark draw.

    The estimator pools all ``samples_per_skeleton`` samples of a skeleton,
    but the error is scored on the first ``eval_per_skeleton`` samples only.
    Sample seeds are nested, so those samples are the same for every
    ``samples_per_skeleton`` and runs that differ only in it stay comparable.
    """
    from .scm import Dataset
    from .synthgen import generate_bench

    ds = generate_bench(cfg)
    estimator = pooled_estimator(ds, cfg.n_confounders)
    scored = Dataset([s for group in ds.by_structure().values() for s in group[:eval_per_skeleton]])
    return {
        "mse_est": eval_c_mse(scored, estimator),
        "mse_zero": eval_c_mse(scored, zero_estimator),
        "n_scored": len(scored),
    }
