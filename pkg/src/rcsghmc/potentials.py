"""Potentials U(theta) = -log p(D | theta) - log p(theta) and their gradients.

Two kinds are provided: an analytic Gaussian mixture (toy targets) and a
data-driven classifier potential estimated on mini-batches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import InvalidInputError, RngStream, as_vector

DEFAULT_PRIOR_PRECISION = 5e-4


@dataclass(frozen=True)
class PotentialSpec:
    """Kind and prior/scale constants of a potential.

    Attributes:
        kind: ``"gaussian-mixture"`` or ``"classifier"``.
        prior_precision: precision of the isotropic Gaussian prior (the
            weight-decay analogue); 0 disables the prior.
        n: training-set size; the mini-batch estimator rescales by ``n / m``.
    """

    kind: str = "classifier"
    prior_precision: float = DEFAULT_PRIOR_PRECISION
    n: int = 1

    def __post_init__(self):
        if self.kind not in ("gaussian-mixture", "classifier"):
            raise InvalidInputError(f"unknown potential kind {self.kind!r}")
        if not self.prior_precision >= 0:
            raise InvalidInputError("prior_precision must be >= 0")
        if self.kind == "classifier" and self.n < 1:
            raise InvalidInputError("classifier potentials need n >= 1")


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of diagonal-covariance Gaussians.

    Attributes:
        means: (K, d) component means.
        variances: (K, d) positive diagonal variances.
        weights: (K,) mixture weights on the simplex.
    """

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        try:
            variances = np.broadcast_to(
                np.asarray(self.variances, dtype=np.float64), means.shape
            ).copy()
        except ValueError as exc:
            raise InvalidInputError("variances must broadcast to the (K, d) means shape") from exc
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if weights.shape[0] != means.shape[0]:
            raise InvalidInputError("one weight per component is required")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidInputError("weights must be non-negative and sum to 1")
        if np.any(variances <= 0) or not np.all(np.isfinite(variances)):
            raise InvalidInputError("variances must be positive and finite")
        if not np.all(np.isfinite(means)):
            raise InvalidInputError("means must be finite")
        with np.errstate(divide="ignore"):
            # log w_k - 0.5 log det(2 pi Sigma_k), reused by every evaluation
            log_const = np.log(weights) - 0.5 * np.sum(np.log(2.0 * np.pi * variances), axis=1)
        for arr in (means, variances, weights, log_const):
            arr.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "_log_const", log_const)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @classmethod
    def symmetric_bimodal(cls, separation=6.0, variance=0.5, dim=2):
        """Two equal-weight modes at ``(+-separation/2, 0, ...)``."""
        mu = np.zeros((2, dim))
        mu[0, 0], mu[1, 0] = -separation / 2.0, separation / 2.0
        return cls(mu, np.full((2, dim), variance), np.array([0.5, 0.5]))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        comp = rng.choice(self.n_components, size=size, p=self.weights)
        z = rng.standard_normal((size, self.dim))
        return self.means[comp] + np.sqrt(self.variances[comp]) * z


def _component_log_terms(gm: GaussianMixture, theta: np.ndarray):
    if theta.shape[0] != gm.dim:
        raise InvalidInputError(f"theta has dimension {theta.shape[0]}, mixture has {gm.dim}")
    diff = theta[None, :] - gm.means
    return gm._log_const - 0.5 * (diff * diff / gm.variances).sum(axis=1), diff


def _logsumexp(x: np.ndarray) -> float:
    # scipy.special.logsumexp costs ~50us per call here, which dominates a
    # sampler step on the toy
    top = x.max()
    if not math.isfinite(top):
        return float(top)
    return float(top + math.log(np.exp(x - top).sum()))


def mixture_potential(gm: GaussianMixture, theta) -> float:
    """Negative log density ``-log sum_k w_k N(theta | mu_k, Sigma_k)``."""
    theta = as_vector(theta, "theta")
    return -_logsumexp(_component_log_terms(gm, theta)[0])


def mixture_potential_grad(gm: GaussianMixture, theta) -> np.ndarray:
    """Gradient of :func:`mixture_potential`.

    Equals the responsibility-weighted sum of ``(theta - mu_k) / var_k``.
    """
    theta = as_vector(theta, "theta")
    log_terms, diff = _component_log_terms(gm, theta)
    resp = np.exp(log_terms - _logsumexp(log_terms))
    return (resp[:, None] * diff / gm.variances).sum(axis=0)


@dataclass(frozen=True)
class MiniBatch:
    """Distinct row indices into a dataset of size ``n``."""

    indices: np.ndarray
    n: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if idx.size == 0:
            raise InvalidInputError("mini-batch must be non-empty")
        if idx.size > self.n:
            raise InvalidInputError("mini-batch larger than the dataset")
        if idx.min() < 0 or idx.max() >= self.n:
            raise InvalidInputError("mini-batch index out of range")
        if np.unique(idx).size != idx.size:
            raise InvalidInputError("mini-batch indices must be distinct")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def size(self) -> int:
        return int(self.indices.size)

    @classmethod
    def sample(cls, rng: RngStream, n: int, m: int) -> "MiniBatch":
        """Uniform draw of ``m`` distinct rows out of ``n``."""
        if not 1 <= m <= n:
            raise InvalidInputError(f"need 1 <= m <= n, got m={m}, n={n}")
        return cls(np.sort(rng.choice(n, m, replace=False)), n)


BatchLike = Union[MiniBatch, Sequence[int], np.ndarray]


def _batch_indices(batch: BatchLike) -> np.ndarray:
    idx = batch.indices if isinstance(batch, MiniBatch) else np.asarray(batch, dtype=np.int64)
    idx = idx.reshape(-1)
    if idx.size == 0:
        raise InvalidInputError("mini-batch must be non-empty")
    return idx


def minibatch_potential(
    spec: PotentialSpec,
    nll: Callable[[np.ndarray, np.ndarray], np.ndarray],
    batch: BatchLike,
    theta,
) -> float:
    """Unbiased mini-batch estimate of the potential.

    ``(n / m) * sum_{i in batch} nll_i(theta) + (lambda / 2) ||theta||^2``.

    Args:
        spec: supplies ``n`` and the prior precision ``lambda``.
        nll: ``nll(indices, theta)`` returning per-example negative
            log-likelihoods.
        batch: a :class:`MiniBatch` or raw index array.
        theta: parameter vector.
    """
    theta = as_vector(theta, "theta")
    idx = _batch_indices(batch)
    losses = np.asarray(nll(idx, theta), dtype=np.float64)
    data_term = spec.n / idx.size * float(np.sum(losses))
    return data_term + 0.5 * spec.prior_precision * float(theta @ theta)


def minibatch_potential_grad(
    spec: PotentialSpec,
    nll_grad: Callable[[np.ndarray, np.ndarray], np.ndarray],
    batch: BatchLike,
    theta,
) -> np.ndarray:
    """Gradient of :func:`minibatch_potential`.

    ``nll_grad(indices, theta)`` must return the gradient of the *summed*
    negative log-likelihood over ``indices``.
    """
    theta = as_vector(theta, "theta")
    idx = _batch_indices(batch)
    g = np.asarray(nll_grad(idx, theta), dtype=np.float64)
    return spec.n / idx.size * g + spec.prior_precision * theta


class MixturePotential:
    """Deterministic potential of a :class:`GaussianMixture` (no data)."""

    stochastic = False

    def __init__(self, gm: GaussianMixture):
        self.gm = gm
        self.spec = PotentialSpec(kind="gaussian-mixture", prior_precision=0.0, n=1)

    @property
    def dim(self) -> int:
        return self.gm.dim

    def sample_batch(self, rng: RngStream) -> Optional[MiniBatch]:
        return None

    def value(self, theta, batch=None) -> float:
        return mixture_potential(self.gm, theta)

    def grad(self, theta, batch=None) -> np.ndarray:
        return mixture_potential_grad(self.gm, theta)


@dataclass
class DataPotential:
    """Mini-batch potential over a dataset of ``spec.n`` examples.

    Args:
        spec: scale constants.
        nll: per-example negative log-likelihood, ``nll(indices, theta)``.
        nll_grad: gradient of the summed NLL over ``indices``.
        dim: parameter dimension.
        batch_size: default mini-batch size ``m``.
    """

    spec: PotentialSpec
    nll: Callable[[np.ndarray, np.ndarray], np.ndarray]
    nll_grad: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dim: int
    batch_size: int
    stochastic: bool = field(default=True, init=False)

    def __post_init__(self):
        if not 1 <= self.batch_size <= self.spec.n:
            raise InvalidInputError("batch_size must lie in [1, n]")

    @property
    def full_batch(self) -> np.ndarray:
        return np.arange(self.spec.n)

    def sample_batch(self, rng: RngStream) -> MiniBatch:
        return MiniBatch.sample(rng, self.spec.n, self.batch_size)

    def value(self, theta, batch: Optional[BatchLike] = None) -> float:
        return minibatch_potential(
            self.spec, self.nll, self.full_batch if batch is None else batch, theta
        )

    def grad(self, theta, batch: Optional[BatchLike] = None) -> np.ndarray:
        return minibatch_potential_grad(
            self.spec, self.nll_grad, self.full_batch if batch is None else batch, theta
        )
