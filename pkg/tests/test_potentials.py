import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import enumerate_batch_average
from rcsghmc.core import InvalidInputError, RngStream, finite_difference_gradient
from rcsghmc.potentials import (
    DataPotential,
    GaussianMixture,
    MiniBatch,
    MixturePotential,
    PotentialSpec,
    minibatch_potential,
    minibatch_potential_grad,
    mixture_potential,
    mixture_potential_grad,
)

LOG_2PI = 1.8378770664093453


def random_mixture(rng, K=None, d=None):
    K = K or int(rng.integers(1, 4))
    d = d or int(rng.integers(1, 4))
    w = rng.uniform(0.2, 1.0, K)
    return GaussianMixture(rng.normal(0, 2, (K, d)), rng.uniform(0.3, 2.0, (K, d)), w / w.sum())


def test_symmetric_modes_have_equal_potential():
    gm = GaussianMixture.symmetric_bimodal()
    assert mixture_potential(gm, gm.means[0]) == pytest.approx(mixture_potential(gm, gm.means[1]), abs=1e-14)


def test_standard_normal_potential_at_origin():
    gm = GaussianMixture(np.zeros((1, 2)), np.ones((1, 2)), [1.0])
    assert mixture_potential(gm, np.zeros(2)) == pytest.approx(LOG_2PI, abs=1e-14)
    gm3 = GaussianMixture(np.zeros((1, 3)), 1.0, [1.0])
    assert mixture_potential(gm3, np.zeros(3)) == pytest.approx(1.5 * LOG_2PI, abs=1e-14)


def test_gradient_vanishes_at_midpoint():
    gm = GaussianMixture.symmetric_bimodal()
    np.testing.assert_allclose(mixture_potential_grad(gm, np.zeros(2)), 0.0, atol=1e-15)


def test_standard_normal_gradient_is_identity(rng):
    gm = GaussianMixture(np.zeros((1, 3)), 1.0, [1.0])
    theta = rng.normal(size=3)
    np.testing.assert_allclose(mixture_potential_grad(gm, theta), theta, rtol=1e-14)


def test_gradient_small_at_isolated_mode():
    # modes 20 standard deviations apart
    gm = GaussianMixture([[-10.0, 0.0], [10.0, 0.0]], 0.25, [0.5, 0.5])
    assert np.linalg.norm(mixture_potential_grad(gm, gm.means[0])) < 1e-8


def test_mixture_gradient_matches_finite_differences(rng):
    for _ in range(20):
        gm = random_mixture(rng)
        theta = rng.normal(0, 2, gm.dim)
        fd = finite_difference_gradient(lambda t: mixture_potential(gm, t), theta)
        np.testing.assert_allclose(mixture_potential_grad(gm, theta), fd, rtol=1e-6, atol=1e-9)


def test_mixture_is_finite_far_away():
    gm = GaussianMixture.symmetric_bimodal()
    theta = np.array([1e3, -1e3])
    assert math.isfinite(mixture_potential(gm, theta))
    assert np.all(np.isfinite(mixture_potential_grad(gm, theta)))


@given(st.permutations(range(3)), st.lists(st.floats(-4, 4), min_size=2, max_size=2))
def test_component_permutation_invariance(perm, theta):
    rng = np.random.default_rng(0)
    gm = random_mixture(rng, K=3, d=2)
    perm = list(perm)
    shuffled = GaussianMixture(gm.means[perm], gm.variances[perm], gm.weights[perm])
    assert mixture_potential(shuffled, theta) == pytest.approx(mixture_potential(gm, theta), rel=1e-12)


def test_mixture_validation():
    gm = GaussianMixture.symmetric_bimodal()
    with pytest.raises(InvalidInputError):
        mixture_potential(gm, np.zeros(3))
    with pytest.raises(InvalidInputError):
        GaussianMixture([[0.0]], [[1.0]], [0.7])
    with pytest.raises(InvalidInputError):
        GaussianMixture([[0.0]], [[-1.0]], [1.0])
    with pytest.raises(InvalidInputError):
        GaussianMixture([[0.0, 0.0]], [[1.0, 1.0, 1.0]], [1.0])


def test_mixture_sample_moments():
    gm = GaussianMixture([[1.0, -2.0]], [[0.5, 2.0]], [1.0])
    x = gm.sample(np.random.default_rng(3), 200_000)
    np.testing.assert_allclose(x.mean(axis=0), [1.0, -2.0], atol=0.02)
    np.testing.assert_allclose(x.var(axis=0), [0.5, 2.0], rtol=0.02)


# mini-batch estimator on a toy regression: nll_i = (x_i . theta - y_i)^2 / 2

def regression(rng, n=6, d=3):
    X, y = rng.normal(size=(n, d)), rng.normal(size=n)

    def nll(idx, theta):
        return 0.5 * (X[idx] @ theta - y[idx]) ** 2

    def nll_grad(idx, theta):
        return X[idx].T @ (X[idx] @ theta - y[idx])

    return nll, nll_grad


def test_full_batch_equals_full_potential(rng):
    nll, _ = regression(rng)
    spec = PotentialSpec("classifier", 5e-4, 6)
    theta = rng.normal(size=3)
    full = float(np.sum(nll(np.arange(6), theta))) + 0.5 * 5e-4 * theta @ theta
    assert minibatch_potential(spec, nll, MiniBatch(np.arange(6), 6), theta) == full


def test_exhaustive_batch_average_is_unbiased(rng):
    nll, nll_grad = regression(rng)
    spec = PotentialSpec("classifier", 0.3, 6)
    theta = rng.normal(size=3)
    full = minibatch_potential(spec, nll, np.arange(6), theta)
    avg = enumerate_batch_average(lambda b: minibatch_potential(spec, nll, b, theta), 6, 2)
    assert abs(avg - full) < 1e-10
    gavg = enumerate_batch_average(lambda b: minibatch_potential_grad(spec, nll_grad, b, theta), 6, 2)
    np.testing.assert_allclose(gavg, minibatch_potential_grad(spec, nll_grad, np.arange(6), theta), atol=1e-10)


@pytest.mark.parametrize("n,m", [(4, 1), (5, 3), (8, 4)])
def test_unbiased_for_small_datasets(n, m):
    rng = np.random.default_rng(n * 10 + m)
    X, y = rng.normal(size=(n, 2)), rng.normal(size=n)
    nll = lambda idx, t: np.abs(X[idx] @ t - y[idx]) ** 3
    spec = PotentialSpec("classifier", 0.1, n)
    theta = rng.normal(size=2)
    avg = enumerate_batch_average(lambda b: minibatch_potential(spec, nll, b, theta), n, m)
    assert avg == pytest.approx(minibatch_potential(spec, nll, np.arange(n), theta), abs=1e-10)


def test_zero_losses_and_prior_only(rng):
    zero = lambda idx, t: np.zeros(len(idx))
    zero_grad = lambda idx, t: np.zeros_like(t)
    theta = rng.normal(size=4)
    assert minibatch_potential(PotentialSpec("classifier", 0.0, 10), zero, [1, 2], theta) == 0.0
    np.testing.assert_allclose(
        minibatch_potential_grad(PotentialSpec("classifier", 0.7, 10), zero_grad, [1, 2], theta), 0.7 * theta
    )


def test_duplicated_batch_leaves_value_unchanged(rng):
    nll, nll_grad = regression(rng)
    spec = PotentialSpec("classifier", 0.2, 6)
    theta = rng.normal(size=3)
    b = np.array([1, 4])
    assert minibatch_potential(spec, nll, np.concatenate([b, b]), theta) == pytest.approx(
        minibatch_potential(spec, nll, b, theta), rel=1e-14
    )
    np.testing.assert_allclose(
        minibatch_potential_grad(spec, nll_grad, np.concatenate([b, b]), theta),
        minibatch_potential_grad(spec, nll_grad, b, theta),
        rtol=1e-13,
    )


def test_minibatch_gradient_matches_finite_differences(rng):
    for _ in range(20):
        nll, nll_grad = regression(rng)
        spec = PotentialSpec("classifier", 0.05, 6)
        theta = rng.normal(size=3)
        batch = np.sort(rng.choice(6, 3, replace=False))
        fd = finite_difference_gradient(lambda t: minibatch_potential(spec, nll, batch, t), theta)
        np.testing.assert_allclose(minibatch_potential_grad(spec, nll_grad, batch, theta), fd, rtol=1e-4, atol=1e-8)


def test_empty_and_invalid_batches():
    nll = lambda idx, t: np.zeros(len(idx))
    with pytest.raises(InvalidInputError):
        minibatch_potential(PotentialSpec("classifier", 0.0, 3), nll, [], np.zeros(1))
    with pytest.raises(InvalidInputError):
        MiniBatch([], 3)
    with pytest.raises(InvalidInputError):
        MiniBatch([0, 0], 3)
    with pytest.raises(InvalidInputError):
        MiniBatch([3], 3)


def test_minibatch_sample_is_distinct_and_reproducible():
    a = MiniBatch.sample(RngStream(2, 0), 10, 4)
    b = MiniBatch.sample(RngStream(2, 0), 10, 4)
    assert np.array_equal(a.indices, b.indices)
    assert len(set(a.indices.tolist())) == 4


def test_potential_objects(rng):
    gm = GaussianMixture.symmetric_bimodal()
    pot = MixturePotential(gm)
    assert pot.sample_batch(RngStream(1)) is None
    theta = rng.normal(size=2)
    assert pot.value(theta) == mixture_potential(gm, theta)
    nll, nll_grad = regression(rng)
    dp = DataPotential(PotentialSpec("classifier", 0.1, 6), nll, nll_grad, 3, 2)
    assert dp.sample_batch(RngStream(1)).size == 2
    assert dp.value(theta[:1].repeat(3)) == minibatch_potential(dp.spec, nll, np.arange(6), theta[:1].repeat(3))
    with pytest.raises(InvalidInputError):
        DataPotential(PotentialSpec("classifier", 0.1, 6), nll, nll_grad, 3, 7)
