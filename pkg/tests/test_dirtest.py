import numpy as np
import pytest

from idcausal import dirtest as T
from idcausal.dirtest import Case


def test_fit_k_exact_and_orthogonal():
    a = np.linspace(-1, 1, 50)
    assert np.isclose(T.fit_k(a, 2 * a), 2.0)
    b = np.cos(np.pi * np.arange(50))  # alternating signs, zero covariance with a centred ramp
    a_sym = np.repeat(np.linspace(-1, 1, 25), 2)
    assert abs(T.fit_k(a_sym, b)) < 1e-12


def test_fit_k_monte_carlo():
    rng = np.random.default_rng(0)
    a = rng.uniform(-1, 1, 1000)
    assert 0.6 <= T.fit_k(a, 0.7 * a + rng.uniform(-1, 1, 1000)) <= 0.8


def test_fit_k_errors():
    with pytest.raises(T.DegenerateInputError):
        T.fit_k(np.ones(40), np.arange(40.0))
    with pytest.raises(ValueError):
        T.fit_k(np.arange(10.0), np.arange(10.0))
    with pytest.raises(ValueError):
        T.fit_k(np.zeros((40, 2)), np.zeros((40, 3)))


def test_exact_fit_is_degenerate_common_effect():
    a = np.random.default_rng(1).uniform(-1, 1, 100)
    v = T.classify_pair(a, 3 * a)
    assert v.case is Case.COMMON_EFFECT and v.degenerate
    assert v.p_values == (1.0, 1.0)


def test_uncorrelated_raises():
    a = np.repeat(np.linspace(-1, 1, 25), 2)
    with pytest.raises(T.DegenerateInputError):
        T.classify_pair(a, np.cos(np.pi * np.arange(50)))


@pytest.mark.parametrize("case", [Case.A_CAUSES_B, Case.B_CAUSES_A, Case.COMMON_CONFOUNDER])
def test_simulated_cases_recovered(case):
    rng = np.random.default_rng(7)
    hits = 0
    for i in range(10):
        a, b = T.simulate_pair(case, 3000, rng)
        hits += T.classify_pair(a, b, seed=i).case is case
    assert hits >= 9


def test_swap_and_rescale():
    rng = np.random.default_rng(3)
    a, b = T.simulate_pair(Case.A_CAUSES_B, 800, rng)
    v = T.classify_pair(a, b)
    assert T.classify_pair(b, a).case is Case.B_CAUSES_A
    assert T.classify_pair(b, a).p_values == v.p_values[::-1]
    assert T.classify_pair(4.0 * a, 4.0 * b).case is v.case


def test_gaussian_pairs_are_not_confidently_directed():
    rng = np.random.default_rng(5)
    directed = 0
    for i in range(10):
        a = rng.normal(size=600)
        b = 0.8 * a + rng.normal(size=600)
        directed += T.classify_pair(a, b, seed=i).case in (Case.A_CAUSES_B, Case.B_CAUSES_A)
    assert directed <= 2


def test_fast_statistic_matches_matrix_path():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=200), rng.uniform(size=200) + 0.3 * rng.normal(size=200)
    perms = np.stack([rng.permutation(200) for _ in range(5)])
    fast = T._dcov_1d(x, y, perms)
    slow = T._dcov_nd(x[:, None], y[:, None], perms)
    assert np.isclose(fast[0], slow[0], rtol=1e-10)
    assert np.allclose(fast[1], slow[1], rtol=1e-10)
    assert np.isclose(T.dcor_test(x, y, 10)[0], T.distance_correlation(x, y), rtol=1e-10)


def test_dcor_basic_properties():
    rng = np.random.default_rng(4)
    x = rng.uniform(-1, 1, 300)
    assert T.dcor_test(x, x**2, 99)[1] == 0.01
    assert T.dcor_test(np.ones(50), x[:50])[0] == 0.0
    stat, p = T.dcor_test(rng.normal(size=(60, 3)), rng.normal(size=(60, 3)), 99)
    assert 0 <= stat <= 1 and 0 < p <= 1


def test_vector_representations():
    rng = np.random.default_rng(6)
    a = rng.uniform(-1, 1, (800, 2))
    b = a + rng.uniform(-1, 1, (800, 2))
    v = T.classify_pair(a, b, n_permutations=99)
    assert v.case is Case.A_CAUSES_B
    assert v.to_dict()["case"] == "A_causes_B"


def test_simulate_common_effect_unsupported():
    with pytest.raises(ValueError):
        T.simulate_pair("common_effect", 10, np.random.default_rng(0))
