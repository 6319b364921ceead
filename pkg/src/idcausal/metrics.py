"""Structure and representation metrics plus the structure-holdout split.

Structure scores are pooled over the strict lower triangle of every sample:
AUROC ranks the predicted strengths against the binary edge labels, MSE
compares the raw strengths with those labels and HD counts disagreeing
entries after thresholding. Representation quality is measured twice: Cor
scores pairwise cosine similarity against correlation labels, Cas fits a
linear probe on concatenated pairs to predict the causal labels.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata
from sklearn.linear_model import LogisticRegression

__all__ = [
    "UndefinedMetricError",
    "SplitError",
    "Estimate",
    "EvalReport",
    "auroc",
    "hamming",
    "strength_mse",
    "structure_scores",
    "correlation_labels",
    "PairSplit",
    "pair_split",
    "cas_eval",
    "cor_eval",
    "Fold",
    "ood_split",
    "confidence_interval",
]


class UndefinedMetricError(ValueError):
    """The metric has no value for this input (e.g. only one class present)."""


class SplitError(ValueError):
    pass


def _lower(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool), -1)


def auroc(scores, labels) -> float:
    """Rank-based area under the ROC curve; tied scores count one half."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(bool)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores for {y.size} labels")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both positive and negative labels")
    ranks = rankdata(s)  # average ranks give ties half credit
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def hamming(pred_adj, true_adj) -> int:
    """Number of strict-lower-triangle entries where two binary graphs differ."""
    p = np.asarray(pred_adj)
    t = np.asarray(true_adj)
    if p.shape != t.shape or p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValueError(f"adjacency shapes {p.shape} and {t.shape} differ or are not square")
    m = _lower(p.shape[0])
    return int(np.count_nonzero((p[m] != 0) != (t[m] != 0)))


def strength_mse(scores, labels) -> float:
    """Mean squared error between predicted strengths and binary edge labels."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores for {y.size} labels")
    if s.size == 0:
        raise UndefinedMetricError("no entries to score")
    return float(np.mean((s - y) ** 2))


def structure_scores(pred_strengths: Sequence, true_adj: Sequence, threshold: float = 0.5) -> dict:
    """Pooled AUROC and MSE plus mean per-sample HD after ``|strength| >= threshold``."""
    if len(pred_strengths) != len(true_adj):
        raise ValueError("one prediction per ground-truth graph required")
    scores, labels, hds = [], [], []
    for a_hat, adj in zip(pred_strengths, true_adj):
        a_hat = np.asarray(a_hat, dtype=np.float64)
        adj = np.asarray(adj)
        if a_hat.shape != adj.shape:
            raise ValueError(f"prediction {a_hat.shape} does not match ground truth {adj.shape}")
        m = _lower(adj.shape[0])
        scores.append(np.abs(a_hat[m]))
        labels.append(adj[m] != 0)
        hds.append(hamming(np.abs(a_hat) >= threshold, adj))
    s = np.concatenate(scores)
    y = np.concatenate(labels)
    return {"auroc": auroc(s, y), "mse": strength_mse(s, y), "hd": float(np.mean(hds))}


def correlation_labels(adjacency, loadings=None, rule: str = "moral") -> np.ndarray:
    """Symmetric 0/1 matrix of pairs counted as correlated.

    ``rule="moral"`` links parent-child pairs and co-parents of a common
    child. ``rule="trek"`` links pairs that are d-connected with nothing
    conditioned on, i.e. one is an ancestor of the other or they share an
    ancestor. Either way, nodes loading on a common confounder are linked.
    """
    adj = np.asarray(adjacency) != 0
    n = adj.shape[0]
    if rule == "moral":
        link = adj | adj.T
        a = adj.astype(np.int64)
        link |= (a.T @ a) > 0  # co-parents: both point into some child
    elif rule == "trek":
        reach = np.eye(n, dtype=np.int64)
        step = adj.astype(np.int64)
        for _ in range(n):
            nxt = ((reach + reach @ step) > 0).astype(np.int64)
            if np.array_equal(nxt, reach):
                break
            reach = nxt
        # reach[i, j] = 1 iff j is an ancestor of i (or i itself)
        link = (reach @ reach.T) > 0
    else:
        raise ValueError(f"unknown rule {rule!r}")
    if loadings is not None:
        b = np.asarray(loadings) != 0
        link |= (b.astype(np.int64) @ b.T.astype(np.int64)) > 0
    np.fill_diagonal(link, False)
    return link.astype(np.int64)


@dataclass(frozen=True)
class PairSplit:
    train: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        if len(self.train) == 0 or len(self.test) == 0:
            raise SplitError("train and test parts must both be non-empty")
        if np.intersect1d(self.train, self.test).size:
            raise SplitError("train and test pairs overlap")


def pair_split(n_pairs: int, test_fraction: float = 0.2, seed: int = 0) -> PairSplit:
    if not 0.0 < test_fraction < 1.0:
        raise SplitError("test_fraction must lie strictly between 0 and 1")
    order = np.random.default_rng(seed).permutation(n_pairs)
    n_test = int(round(test_fraction * n_pairs))
    return PairSplit(train=np.sort(order[n_test:]), test=np.sort(order[:n_test]))


def _pairs(representations: Sequence, labels: Sequence) -> tuple[np.ndarray, np.ndarray]:
    feats, ys = [], []
    for r, lab in zip(representations, labels):
        r = np.asarray(r, dtype=np.float64)
        lab = np.asarray(lab)
        i, j = np.nonzero(_lower(r.shape[0]))
        feats.append(np.concatenate([r[i], r[j]], axis=1))
        ys.append(lab[i, j] != 0)
    return np.concatenate(feats), np.concatenate(ys).astype(np.int64)


def cas_eval(
    representations: Sequence,
    pair_labels: Sequence,
    split: PairSplit | None = None,
    seed: int = 0,
    audit: Callable[[np.ndarray, np.ndarray], None] | None = None,
) -> tuple[float, float]:
    """Linear probe on ``x_i || x_j`` for every pair ``j < i``; returns test ``(auroc, mse)``.

    ``pair_labels[s][i, j]`` is 1 when ``j -> i`` in sample ``s``. Pairs are
    pooled over samples and split 80/20 unless ``split`` is given. ``audit``
    receives the pair indices used for fitting and for scoring.
    """
    if len(representations) != len(pair_labels):
        raise ValueError("one label matrix per representation required")
    feats, y = _pairs(representations, pair_labels)
    if y.min() == y.max():
        raise UndefinedMetricError("pair labels are constant")
    split = split or pair_split(len(y), 0.2, seed)
    if audit is not None:
        audit(split.train, split.test)
    if y[split.train].min() == y[split.train].max():
        raise SplitError("training pairs hold only one class")
    probe = LogisticRegression(max_iter=200, random_state=seed)
    probe.fit(feats[split.train], y[split.train])
    prob = probe.predict_proba(feats[split.test])[:, 1]
    return auroc(prob, y[split.test]), strength_mse(prob, y[split.test])


def cor_eval(representations: Sequence, corr_labels: Sequence) -> tuple[float, float]:
    """Cosine similarity of every pair ``i < j`` scored against 0/1 correlation labels."""
    if len(representations) != len(corr_labels):
        raise ValueError("one label matrix per representation required")
    sims, ys = [], []
    for r, lab in zip(representations, corr_labels):
        r = np.asarray(r, dtype=np.float64)
        norms = np.linalg.norm(r, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        cos = (r / safe[:, None]) @ (r / safe[:, None]).T
        cos[norms == 0, :] = 0.0
        cos[:, norms == 0] = 0.0
        m = _lower(r.shape[0]).T
        sims.append(cos[m])
        ys.append(np.asarray(lab)[m] != 0)
    s = np.concatenate(sims)
    y = np.concatenate(ys)
    return auroc(s, y), strength_mse(s, y)


@dataclass(frozen=True)
class Fold:
    index: int
    test_structures: tuple[int, ...]
    train: tuple[int, ...]
    valid: tuple[int, ...]
    test: tuple[int, ...]

    def to_dict(self) -> dict:
        return asdict(self)


def ood_split(
    structure_ids: Sequence[int],
    held_out: int = 2,
    folds: int = 10,
    valid_fraction: float = 0.1,
    seed: int = 0,
) -> list[Fold]:
    """Structure-holdout folds over sample indices.

    Each fold draws ``held_out`` distinct structures at random; all their
    samples form the test part and the rest is split train/valid. Structures
    may recur across folds. Samples with id ``-1`` (unclassified) are left
    out of every part.
    """
    ids = np.asarray(structure_ids, dtype=np.int64)
    known = np.unique(ids[ids != -1])
    if len(known) < held_out + 1:
        raise SplitError(
            f"need at least {held_out + 1} distinct structures to hold out {held_out}, got {len(known)}"
        )
    if folds < 1:
        raise SplitError("folds must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for f in range(folds):
        test_ids = np.sort(rng.choice(known, size=held_out, replace=False))
        is_test = np.isin(ids, test_ids)
        test = np.nonzero(is_test)[0]
        rest = rng.permutation(np.nonzero(~is_test & (ids != -1))[0])
        n_valid = int(round(valid_fraction * len(rest)))
        out.append(
            Fold(
                index=f,
                test_structures=tuple(int(i) for i in test_ids),
                train=tuple(int(i) for i in np.sort(rest[n_valid:])),
                valid=tuple(int(i) for i in np.sort(rest[:n_valid])),
                test=tuple(int(i) for i in test),
            )
        )
    return out


@dataclass(frozen=True)
class Estimate:
    """Mean over folds with the half-width of its normal-approximation 95% interval."""

    mean: float
    ci: float = 0.0
    n_folds: int = 1


def confidence_interval(values: Sequence[float]) -> Estimate:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise UndefinedMetricError("no fold values")
    half = 1.96 * v.std(ddof=1) / math.sqrt(v.size) if v.size > 1 else 0.0
    return Estimate(mean=float(v.mean()), ci=float(half), n_folds=int(v.size))


def _fmt(x: float | None) -> str:
    return "-" if x is None else f"{x:.4f}"


@dataclass(frozen=True)
class EvalReport:
    auroc: Estimate
    mse: Estimate
    hd: Estimate
    n_samples: int
    cas_auroc: float | None = None
    cas_mse: float | None = None
    cor_auroc: float | None = None
    cor_mse: float | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.auroc.mean <= 1.0:
            raise ValueError("auroc out of [0, 1]")
        if self.hd.mean < 0:
            raise ValueError("hd must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        rows = [
            ("AUROC", _fmt(self.auroc.mean), _fmt(self.auroc.ci)),
            ("MSE", _fmt(self.mse.mean), _fmt(self.mse.ci)),
            ("HD", _fmt(self.hd.mean), _fmt(self.hd.ci)),
            ("Cor AUROC", _fmt(self.cor_auroc), "-"),
            ("Cor MSE", _fmt(self.cor_mse), "-"),
            ("Cas AUROC", _fmt(self.cas_auroc), "-"),
            ("Cas MSE", _fmt(self.cas_mse), "-"),
        ]
        head = ("Metric", "Value", "+/- 95%")
        widths = [max(len(r[k]) for r in rows + [head]) for k in range(3)]
        line = lambda r: "  ".join(c.ljust(w) if k == 0 else c.rjust(w) for k, (c, w) in enumerate(zip(r, widths)))
        sep = "  ".join("-" * w for w in widths)
        body = [line(head), sep] + [line(r) for r in rows]
        body.append(f"samples: {self.n_samples}   folds: {self.auroc.n_folds}")
        return "\n".join(body) + "\n"
