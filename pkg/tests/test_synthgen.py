import json

import numpy as np
import pytest

from idcausal.synthgen import (
    BENCH_GRID,
    BenchConfig,
    attach_confounders,
    derive_seed,
    draw_weights,
    generate_bench,
    random_skeleton,
)


def test_config_validation():
    with pytest.raises(ValueError):
        BenchConfig(pervasiveness=1.5)
    with pytest.raises(ValueError):
        BenchConfig(n_observed=5, expected_neighborhood=5)
    with pytest.raises(ValueError):
        BenchConfig(samples_per_skeleton=0)


def test_empty_graph_when_no_neighbours():
    g = random_skeleton(BenchConfig(expected_neighborhood=0), seed=1)
    assert np.all(g.strengths == 0)


def test_two_nodes_edge_probability_capped():
    cfg = BenchConfig(n_observed=2, expected_neighborhood=1.0)
    assert cfg.edge_probability == 1.0
    g = random_skeleton(cfg, seed=0)
    assert g.adjacency[1, 0] == 1 and g.adjacency.sum() == 1


def test_mean_neighbourhood_size():
    cfg = BenchConfig(n_observed=20, expected_neighborhood=5.0)
    degrees = []
    for s in range(1000):
        adj = random_skeleton(cfg, derive_seed(7, s)).adjacency
        degrees.append((adj.sum(axis=0) + adj.sum(axis=1)).mean())
    assert 4.7 <= np.mean(degrees) <= 5.3
    # in-degree alone averages half of that, since every edge has one head
    in_deg = np.mean(degrees) / 2
    assert 2.35 <= in_deg <= 2.65


def test_weight_scheme_signs_and_magnitudes():
    w = draw_weights(np.random.default_rng(0), 10000, 0.5, 2.0)
    assert np.all((np.abs(w) >= 0.5) & (np.abs(w) <= 2.0))
    assert 0.48 < np.mean(w > 0) < 0.52


def test_loading_pervasiveness_extremes():
    g = random_skeleton(BenchConfig(n_observed=10), 0)
    assert np.all(attach_confounders(g, BenchConfig(n_observed=10, pervasiveness=0.0), 0).loadings == 0)
    full = attach_confounders(g, BenchConfig(n_observed=10, pervasiveness=1.0, n_confounders=1), 0).loadings
    assert np.all(full != 0)


def test_loading_fraction():
    cfg = BenchConfig(n_observed=50, pervasiveness=0.4, n_confounders=5)
    g = random_skeleton(cfg, 0)
    frac = np.mean([np.mean(attach_confounders(g, cfg, derive_seed(3, s)).loadings != 0) for s in range(100)])
    assert 0.37 <= frac <= 0.43


def test_single_sample_bench():
    ds = generate_bench(BenchConfig(n_skeletons=1, samples_per_skeleton=1))
    assert len(ds) == 1


def test_bench_grid_cell_round_trip():
    cfg = BenchConfig(n_observed=20, pervasiveness=0.1, n_confounders=1, samples_per_skeleton=5, n_skeletons=4)
    for s in generate_bench(cfg):
        a = s.ground_truth.strengths
        assert np.all(np.triu(a) == 0)
        assert np.allclose((np.eye(20) - a) @ s.x, s.confounding + s.noise, atol=1e-8)
    assert BENCH_GRID["samples_per_skeleton"] == (5, 10, 50)


def test_bench_is_deterministic_and_nested():
    small = generate_bench(BenchConfig(samples_per_skeleton=3, n_skeletons=2, seed=9))
    again = generate_bench(BenchConfig(samples_per_skeleton=3, n_skeletons=2, seed=9))
    large = generate_bench(BenchConfig(samples_per_skeleton=6, n_skeletons=2, seed=9))
    assert all(np.array_equal(a.x, b.x) for a, b in zip(small, again))
    # the first samples of each skeleton do not depend on how many are drawn
    for sk in (0, 1):
        for a, b in zip(small.by_structure()[sk], large.by_structure()[sk][:3]):
            assert np.array_equal(a.x, b.x)


def test_confounding_nonzero_iff_loaded():
    from idcausal.scm import forward_generate

    cfg = BenchConfig(n_observed=10, pervasiveness=0.3, n_confounders=2)
    for sk in range(5):
        g = random_skeleton(cfg, derive_seed(1, sk))
        conf = attach_confounders(g, cfg, derive_seed(2, sk))
        s = forward_generate(g, conf, derive_seed(3, sk))
        loaded = np.any(conf.loadings != 0, axis=1)
        assert np.array_equal(np.any(s.confounding != 0, axis=1), loaded)


def test_metadata_is_json():
    ds = generate_bench(BenchConfig())
    json.dumps(ds.metadata)
    assert ds.metadata["config"]["expected_neighborhood"] == 5.0
