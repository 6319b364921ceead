import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from idcausal import metrics as M


def test_auroc_examples():
    assert M.auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert M.auroc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0
    assert M.auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert M.auroc([0.5, 0.5], [0, 1]) == 0.5
    with pytest.raises(M.UndefinedMetricError):
        M.auroc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        M.auroc([0.1], [0, 1])


def _pairwise_auroc(s, y):
    pos, neg = s[y == 1], s[y == 0]
    return np.mean([(p > q) + 0.5 * (p == q) for p in pos for q in neg])


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, 12, elements=st.integers(-5, 5).map(float)), st.integers(0, 10**6))
def test_auroc_matches_pair_enumeration_and_is_monotone_invariant(scores, seed):
    y = np.random.default_rng(seed).permutation(np.array([0, 1] * 6))
    a = M.auroc(scores, y)
    assert np.isclose(a, _pairwise_auroc(scores, y))
    assert np.isclose(M.auroc(np.exp(scores) * 3 + 1, y), a)


def test_hamming_examples():
    full = np.tril(np.ones((4, 4)), -1)
    empty = np.zeros((4, 4))
    assert M.hamming(full, full) == 0
    one = full.copy()
    one[2, 0] = 0
    assert M.hamming(one, full) == 1
    assert M.hamming(empty, full) == 6 == M.hamming(full, empty)
    with pytest.raises(ValueError):
        M.hamming(np.zeros((3, 3)), full)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 7), st.integers(0, 10**6))
def test_binary_mse_is_normalised_hamming(n, seed):
    rng = np.random.default_rng(seed)
    p = np.tril(rng.integers(0, 2, (n, n)), -1)
    t = np.tril(rng.integers(0, 2, (n, n)), -1)
    m = np.tril(np.ones((n, n), dtype=bool), -1)
    assert np.isclose(M.strength_mse(p[m], t[m]), M.hamming(p, t) / (n * (n - 1) / 2))


def test_structure_scores_perfect_prediction():
    adj = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]])
    out = M.structure_scores([0.9 * adj], [adj])
    assert out["auroc"] == 1.0 and out["hd"] == 0.0
    assert np.isclose(out["mse"], 2 * 0.01 / 3)


def test_correlation_labels_rules():
    chain = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]])
    collider = np.array([[0, 0, 0], [0, 0, 0], [1, 1, 0]])
    assert M.correlation_labels(chain)[2, 0] == 0
    assert M.correlation_labels(chain, rule="trek")[2, 0] == 1
    assert M.correlation_labels(collider)[1, 0] == 1
    assert M.correlation_labels(collider, rule="trek")[1, 0] == 0
    conf = M.correlation_labels(np.zeros((3, 3)), loadings=np.array([[1.0], [0.0], [2.0]]))
    assert conf[2, 0] == conf[0, 2] == 1 and conf[1].sum() == 0


def test_cas_separable_features():
    # fixed chain 0 -> 1 -> 2 -> 3; each node carries its own and its parent's id
    n = 4
    feats = np.zeros((n, 2 * n))
    for i in range(n):
        feats[i, i] = 1
        if i:
            feats[i, n + i - 1] = 1
    adj = np.eye(n, k=-1)
    rng = np.random.default_rng(0)
    reps = [feats + 0.01 * rng.normal(size=feats.shape) for _ in range(50)]
    auc, mse = M.cas_eval(reps, [adj] * 50)
    assert auc >= 0.95 and mse < 0.25


def test_cas_random_is_chance():
    rng = np.random.default_rng(1)
    reps = [rng.normal(size=(11, 4)) for _ in range(10)]  # 10 x 55 = 550 pairs
    labels = [np.tril(rng.integers(0, 2, (11, 11)), -1) for _ in range(10)]
    auc, _ = M.cas_eval(reps, labels)
    assert 0.4 <= auc <= 0.6


def test_cas_constant_labels_and_audit():
    reps = [np.eye(3)] * 4
    with pytest.raises(M.UndefinedMetricError):
        M.cas_eval(reps, [np.zeros((3, 3))] * 4)
    seen = {}
    lab = np.eye(3, k=-1)
    M.cas_eval([np.eye(3)] * 20, [lab] * 20, audit=lambda tr, te: seen.update(tr=tr, te=te))
    assert len(seen["tr"]) + len(seen["te"]) == 60
    assert not set(seen["tr"]) & set(seen["te"])


def test_cor_examples():
    lab = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]])
    reps = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert M.cor_eval([reps], [lab])[0] == 1.0
    assert M.cor_eval([np.ones((3, 2))], [lab])[0] == 0.5
    # cos(0,1)=1 labelled 1; cos(0,2)=0 labelled 0; cos(1,2)=0 labelled 1 -> (1 + 0.5) / 2
    lab2 = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]])
    auc, mse = M.cor_eval([reps], [lab2])
    assert auc == 0.75 and np.isclose(mse, 1 / 3)


def test_ood_split_ten_structures():
    ids = np.repeat(np.arange(10), 5)
    folds = M.ood_split(ids)
    assert len(folds) == 10
    for f in folds:
        assert len(f.test_structures) == 2
        held = set(f.test_structures)
        assert not held & set(ids[list(f.train)]) and not held & set(ids[list(f.valid)])
        assert sorted(f.train + f.valid + f.test) == list(range(50))


def test_ood_split_few_structures_and_unknown_ids():
    ids = np.array([0, 0, 1, 1, 2, 2, -1])
    folds = M.ood_split(ids)
    assert len(folds) == 10
    assert all(6 not in f.train + f.valid + f.test for f in folds)
    with pytest.raises(M.SplitError):
        M.ood_split([3, 3, 3])
    assert M.ood_split(ids, seed=4) == M.ood_split(ids, seed=4)


def test_confidence_interval():
    est = M.confidence_interval([1.0, 2.0, 3.0])
    assert est.mean == 2.0 and np.isclose(est.ci, 1.96 / np.sqrt(3))
    assert M.confidence_interval([0.5]).ci == 0.0


def test_report_serialisation():
    rep = M.EvalReport(M.Estimate(0.9), M.Estimate(0.1), M.Estimate(2.0), n_samples=3, cor_auroc=0.5)
    assert json.loads(rep.to_json())["auroc"]["mean"] == 0.9
    assert "Cor AUROC" in rep.to_table()
    with pytest.raises(ValueError):
        M.EvalReport(M.Estimate(1.5), M.Estimate(0.0), M.Estimate(0.0), n_samples=1)
