import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gme_detect.featurize import (
    DENSE,
    GHZ_DIAGONAL,
    PER_POSITION,
    POOLED,
    NormStats,
    feature_length,
    featurize_dense,
    featurize_ghz_diagonal,
    normalize_features,
    unfeaturize_dense,
    unfeaturize_ghz_diagonal,
)
from gme_detect.statekit import GhzDiagonalSpec, random_density_matrix, random_ghz_diagonal, to_density_matrix

seeds = st.integers(min_value=0, max_value=2**32)


def test_lengths():
    assert feature_length(DENSE, 2) == 28
    assert feature_length(DENSE, 4) == 496
    assert feature_length(GHZ_DIAGONAL, 14) == 16384
    with pytest.raises(ValueError):
        feature_length("other", 3)


def test_dense_layout_by_hand():
    rho = np.array([[0.6, 0.1 + 0.2j], [0.1 - 0.2j, 0.4]])
    assert np.allclose(featurize_dense(rho), [0.6, 0.1, 0.1, 0.4, 0.2, -0.2])


@given(seeds, st.integers(1, 3))
def test_dense_round_trip(seed, n):
    rho = random_density_matrix(n, 1 << n, seed)
    x = featurize_dense(rho)
    assert x.shape == (feature_length(DENSE, n),)
    assert np.allclose(unfeaturize_dense(x), rho, atol=1e-15)


def test_dense_rejects_invalid_state():
    with pytest.raises(ValueError):
        featurize_dense(np.diag([2.0, -1.0]))


@given(seeds, st.sampled_from([-1, 1]), st.integers(2, 7))
def test_ghz_features_are_the_spectrum(seed, label, n):
    spec = random_ghz_diagonal(n, label, seed)
    x = featurize_ghz_diagonal(spec)
    assert x.shape == (1 << n,)
    assert np.allclose(np.sort(x), np.sort(spec.eigenvalues()))
    assert x.sum() == pytest.approx(1.0)
    back = unfeaturize_ghz_diagonal(x)
    assert np.allclose(back.lambdas, spec.lambdas) and np.allclose(back.mus, spec.mus)


def test_ghz_features_agree_with_dense_fidelities():
    spec = random_ghz_diagonal(3, -1, 4)
    rho = to_density_matrix(spec)
    x = featurize_ghz_diagonal(spec)
    # (|i> + |~i>)/sqrt2 and (|i> - |~i>)/sqrt2 expectation values
    for i in range(4):
        j = 7 - i
        plus = (rho[i, i] + rho[j, j] + rho[i, j] + rho[j, i]).real / 2
        minus = (rho[i, i] + rho[j, j] - rho[i, j] - rho[j, i]).real / 2
        assert x[2 * i] == pytest.approx(plus) and x[2 * i + 1] == pytest.approx(minus)


def test_complex_mu_uses_magnitude():
    spec = GhzDiagonalSpec(2, np.array([0.3, 0.2]), np.array([0.2j, 0.0]))
    assert np.allclose(featurize_ghz_diagonal(spec), [0.5, 0.1, 0.2, 0.2])


@given(arrays(np.float64, (20, 6), elements=st.floats(-1e3, 1e3)))
def test_per_position_normalization(x):
    stats = NormStats.fit(x)
    z = normalize_features(x, stats)
    assert np.all(np.isfinite(z))
    varying = x.std(axis=0) > 1e-6
    assert np.allclose(z.mean(axis=0)[varying], 0.0, atol=1e-8)
    assert np.allclose(z.std(axis=0)[varying], 1.0, atol=1e-6)


@given(arrays(np.float64, (10, 5), elements=st.floats(-1e3, 1e3)))
def test_pooled_normalization(x):
    stats = NormStats.fit(x, POOLED)
    assert np.all(stats.mean == stats.mean[0]) and np.all(stats.scale == stats.scale[0])
    z = normalize_features(x, stats)
    if x.std() > 1e-6:
        assert abs(z.mean()) < 1e-8
        assert z.std() == pytest.approx(1.0, rel=1e-6)


def test_constant_positions_normalize_to_zero():
    x = np.tile([168.07168156, 0.1, -3.3], (7, 1))
    x[:, 1] = np.linspace(0, 1, 7)
    z = normalize_features(x, NormStats.fit(x))
    assert np.all(z[:, 0] == 0.0) and np.all(z[:, 2] == 0.0)
    # pooled statistics can only do this when every entry is the same
    flat = np.full((5, 3), 168.07168156)
    assert np.all(normalize_features(flat, NormStats.fit(flat, POOLED)) == 0.0)


def test_training_statistics_are_used_for_test_data():
    rng = np.random.default_rng(0)
    train_x = rng.standard_normal((50, 4))
    test_x = rng.standard_normal((20, 4)) + 3.0
    with_train = normalize_features(test_x, NormStats.fit(train_x))
    with_test = normalize_features(test_x, NormStats.fit(test_x))
    assert not np.allclose(with_train, with_test)
    assert np.allclose(normalize_features(train_x, NormStats.fit(train_x)).mean(axis=0), 0.0, atol=1e-9)


def test_normalization_checks():
    with pytest.raises(ValueError):
        NormStats.fit(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        NormStats.fit(np.zeros((2, 3)), "bogus")
    stats = NormStats.fit(np.zeros((4, 3)))
    assert np.all(stats.scale > 0)
    with pytest.raises(ValueError):
        normalize_features(np.zeros(4), stats)
