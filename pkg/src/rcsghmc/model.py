"""Desk-scale surrogate for prompt learning.

A frozen random tanh feature map plays the role of the pretrained encoder,
a small adapter with parameters ``theta`` plays the learnable prompt, and
classification uses a temperature-scaled softmax over cosine similarities
to fixed unit class embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import log_softmax, softmax

from .core import DegenerateInputError, InvalidInputError, as_points, as_vector
from .potentials import DataPotential, PotentialSpec

DEFAULT_TEMPERATURE = 0.07
NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class FrozenBackbone:
    """Fixed feature map ``phi(x) = tanh(P x)``."""

    projection: np.ndarray

    def __post_init__(self):
        proj = np.array(self.projection, dtype=np.float64)
        if proj.ndim != 2:
            raise InvalidInputError("projection must be a matrix")
        proj.setflags(write=False)
        object.__setattr__(self, "projection", proj)

    @classmethod
    def random(cls, seed: int, input_dim: int, feature_dim: int) -> "FrozenBackbone":
        rng = np.random.default_rng([seed, 0xBAC])
        return cls(rng.standard_normal((feature_dim, input_dim)) / np.sqrt(input_dim))

    @property
    def input_dim(self) -> int:
        return self.projection.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.projection.shape[0]

    def features(self, X) -> np.ndarray:
        X = as_points(X, "X")
        if X.shape[1] != self.input_dim:
            raise InvalidInputError(f"inputs have dimension {X.shape[1]}, backbone expects {self.input_dim}")
        return np.tanh(X @ self.projection.T)


@dataclass(frozen=True)
class AdapterModel:
    """Learnable adapter on top of the frozen features.

    ``shift``: ``u_i = phi(x_i) + B theta`` with a frozen ``p x p`` mixing
    matrix ``B``; ``theta`` has length ``p``.

    ``mlp``: ``u_i = tanh(W phi(x_i) + b)`` with ``theta = [vec(W), b]``,
    ``W`` of shape ``(h, p)`` flattened row-major.
    """

    kind: str
    feature_dim: int
    rep_dim: int
    mixing: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("shift", "mlp"):
            raise InvalidInputError(f"unknown adapter kind {self.kind!r}")
        if self.kind == "shift":
            if self.rep_dim != self.feature_dim:
                raise InvalidInputError("shift adapters keep the feature dimension")
            B = np.array(self.mixing, dtype=np.float64)
            if B.shape != (self.feature_dim, self.feature_dim):
                raise InvalidInputError("shift adapters need a (p, p) mixing matrix")
            B.setflags(write=False)
            object.__setattr__(self, "mixing", B)

    @classmethod
    def shift(cls, seed: int, feature_dim: int) -> "AdapterModel":
        rng = np.random.default_rng([seed, 0x5F7])
        B = rng.standard_normal((feature_dim, feature_dim)) / np.sqrt(feature_dim)
        return cls("shift", feature_dim, feature_dim, B)

    @classmethod
    def mlp(cls, feature_dim: int, rep_dim: int) -> "AdapterModel":
        return cls("mlp", feature_dim, rep_dim)

    @property
    def n_params(self) -> int:
        if self.kind == "shift":
            return self.feature_dim
        return self.rep_dim * self.feature_dim + self.rep_dim

    def unpack(self, theta):
        """Split an mlp parameter vector into ``(W, b)``."""
        h, p = self.rep_dim, self.feature_dim
        return theta[: h * p].reshape(h, p), theta[h * p :]

    def init_params(self, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
        if self.kind == "shift":
            return np.zeros(self.n_params)
        W = scale * rng.standard_normal((self.rep_dim, self.feature_dim)) / np.sqrt(self.feature_dim)
        return np.concatenate([W.ravel(), np.zeros(self.rep_dim)])


def _check_theta(model: AdapterModel, theta) -> np.ndarray:
    theta = as_vector(theta, "theta")
    if theta.shape[0] != model.n_params:
        raise InvalidInputError(f"theta has length {theta.shape[0]}, model expects {model.n_params}")
    return theta


def _features(model: AdapterModel, backbone: FrozenBackbone, X) -> np.ndarray:
    if backbone.feature_dim != model.feature_dim:
        raise InvalidInputError("backbone and adapter feature dimensions differ")
    return backbone.features(X)


def represent_features(model: AdapterModel, phi: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Adapter forward pass on precomputed backbone features ``phi``."""
    if model.kind == "shift":
        return phi + model.mixing @ theta
    W, b = model.unpack(theta)
    return np.tanh(phi @ W.T + b)


def represent(model: AdapterModel, backbone: FrozenBackbone, X, theta) -> np.ndarray:
    """Representations ``u_i`` of a batch of inputs, shape ``(n, rep_dim)``."""
    theta = _check_theta(model, theta)
    return represent_features(model, _features(model, backbone, X), theta)


def represent_features_vjp(
    model: AdapterModel, phi: np.ndarray, theta: np.ndarray, cotangents: np.ndarray, u=None
) -> np.ndarray:
    """``sum_i (du_i/dtheta)^T g_i`` on precomputed features.

    ``u`` may be passed to reuse the forward pass for the mlp kind.
    """
    if model.kind == "shift":
        return model.mixing.T @ cotangents.sum(axis=0)
    if u is None:
        u = represent_features(model, phi, theta)
    delta = cotangents * (1.0 - u**2)
    return np.concatenate([(delta.T @ phi).ravel(), delta.sum(axis=0)])


def represent_vjp(model: AdapterModel, backbone: FrozenBackbone, X, theta, cotangents) -> np.ndarray:
    """Reverse-mode product of the representation Jacobian with cotangents.

    Args:
        cotangents: ``(n, rep_dim)`` array, one row per input.

    Returns:
        Gradient in parameter space, length ``model.n_params``.
    """
    theta = _check_theta(model, theta)
    phi = _features(model, backbone, X)
    cot = np.asarray(cotangents, dtype=np.float64)
    if cot.shape != (phi.shape[0], model.rep_dim):
        raise InvalidInputError(
            f"cotangents must have shape {(phi.shape[0], model.rep_dim)}, got {cot.shape}"
        )
    return represent_features_vjp(model, phi, theta, cot)


@dataclass(frozen=True)
class ClassEmbeddings:
    """Unit-norm class vectors ``v_c`` (rows) and softmax temperature."""

    vectors: np.ndarray
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        V = np.array(self.vectors, dtype=np.float64)
        if V.ndim != 2 or V.shape[0] < 1:
            raise InvalidInputError("class embeddings must be a (C, d) matrix")
        if np.any(np.abs(np.linalg.norm(V, axis=1) - 1.0) > 1e-10):
            raise InvalidInputError("class embeddings must have unit norm")
        if not self.temperature > 0:
            raise InvalidInputError("temperature must be positive")
        V.setflags(write=False)
        object.__setattr__(self, "vectors", V)

    @classmethod
    def random(cls, seed: int, n_classes: int, dim: int, temperature=DEFAULT_TEMPERATURE):
        rng = np.random.default_rng([seed, 0xC1A])
        V = rng.standard_normal((n_classes, dim))
        return cls(V / np.linalg.norm(V, axis=1, keepdims=True), temperature)

    @property
    def n_classes(self) -> int:
        return self.vectors.shape[0]


def _logits(U: np.ndarray, emb: ClassEmbeddings) -> tuple[np.ndarray, np.ndarray]:
    norms = np.maximum(np.linalg.norm(U, axis=1), NORM_FLOOR)
    cos = (U @ emb.vectors.T) / norms[:, None]
    return cos / emb.temperature, norms


def class_log_probabilities(U, emb: ClassEmbeddings) -> np.ndarray:
    U = as_points(U, "representations")
    if U.shape[1] != emb.vectors.shape[1]:
        raise InvalidInputError("representation and class-embedding dimensions differ")
    logits, _ = _logits(U, emb)
    return log_softmax(logits, axis=1)


def class_probabilities(u, emb: ClassEmbeddings) -> np.ndarray:
    """Softmax over ``cossim(u, v_c) / tau``.

    Accepts a single representation (returns a length-C vector) or a batch
    (returns ``(n, C)``).

    Raises:
        DegenerateInputError: if a representation has zero norm.
    """
    arr = np.asarray(u, dtype=np.float64)
    single = arr.ndim == 1
    U = as_points(arr[None, :] if single else arr, "representation")
    if np.any(np.linalg.norm(U, axis=1) == 0.0):
        raise DegenerateInputError("cosine similarity is undefined for a zero representation")
    if U.shape[1] != emb.vectors.shape[1]:
        raise InvalidInputError("representation and class-embedding dimensions differ")
    logits, _ = _logits(U, emb)
    p = softmax(logits, axis=1)
    return p[0] if single else p


def nll_and_rep_grad(U: np.ndarray, labels: np.ndarray, emb: ClassEmbeddings):
    """Per-example NLL of the cosine-softmax head and ``dNLL_i/du_i``."""
    logits, norms = _logits(U, emb)
    logp = log_softmax(logits, axis=1)
    rows = np.arange(U.shape[0])
    nll = -logp[rows, labels]
    dlogit = np.exp(logp)
    dlogit[rows, labels] -= 1.0
    dcos = dlogit / emb.temperature
    cos = logits * emb.temperature
    # d cos_c / du = v_c / |u| - cos_c u / |u|^2
    g = (dcos @ emb.vectors) / norms[:, None] - (dcos * cos).sum(axis=1, keepdims=True) * U / (
        norms[:, None] ** 2
    )
    return nll, g


class SyntheticDataset(NamedTuple):
    inputs: np.ndarray
    labels: np.ndarray

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])


class SyntheticTask(NamedTuple):
    train: SyntheticDataset
    test: SyntheticDataset
    embeddings: ClassEmbeddings
    backbone: FrozenBackbone
    seed: int


def make_synthetic_task(
    seed: int,
    n: int,
    n_classes: int,
    input_dim: int,
    feature_dim: int = 16,
    rep_dim: int | None = None,
    n_test: int = 0,
    class_sep: float = 2.0,
    temperature: float = DEFAULT_TEMPERATURE,
) -> SyntheticTask:
    """Class-conditional Gaussian clusters with a random frozen backbone.

    Labels are assigned round-robin before shuffling, so every class has at
    least one training example whenever ``n >= n_classes``.

    Args:
        seed: determines centers, samples, backbone and class embeddings.
        n: number of training examples.
        n_classes: number of classes ``C``.
        input_dim: raw input dimension.
        feature_dim: backbone output dimension ``p``.
        rep_dim: class-embedding dimension; defaults to ``feature_dim``.
        n_test: number of held-out examples drawn from the same clusters.
        class_sep: standard deviation of the class centers (unit noise).
        temperature: softmax temperature of the classifier head.
    """
    if n_classes < 2:
        raise InvalidInputError("need at least two classes")
    if n < n_classes:
        raise InvalidInputError(f"n={n} is smaller than the number of classes {n_classes}")
    if input_dim < 1 or feature_dim < 1 or n_test < 0:
        raise InvalidInputError("dimensions must be positive and n_test non-negative")
    rep_dim = feature_dim if rep_dim is None else rep_dim
    rng = np.random.default_rng([seed, 0xDA7A])
    centers = class_sep * rng.standard_normal((n_classes, input_dim))

    def draw(count):
        labels = rng.permutation(np.arange(count) % n_classes)
        X = centers[labels] + rng.standard_normal((count, input_dim))
        return SyntheticDataset(X, labels.astype(np.int64))

    train = draw(n)
    test = draw(n_test) if n_test else SyntheticDataset(np.empty((0, input_dim)), np.empty(0, np.int64))
    return SyntheticTask(
        train,
        test,
        ClassEmbeddings.random(seed, n_classes, rep_dim, temperature),
        FrozenBackbone.random(seed, input_dim, feature_dim),
        seed,
    )


class ClassifierModel:
    """Backbone, adapter and head bound to a dataset, with cached features."""

    def __init__(self, adapter: AdapterModel, backbone: FrozenBackbone, embeddings: ClassEmbeddings):
        if embeddings.vectors.shape[1] != adapter.rep_dim:
            raise InvalidInputError("class embeddings must live in the representation space")
        self.adapter = adapter
        self.backbone = backbone
        self.embeddings = embeddings

    @property
    def n_params(self) -> int:
        return self.adapter.n_params

    def represent(self, X, theta) -> np.ndarray:
        return represent(self.adapter, self.backbone, X, theta)

    def predict_proba(self, X, theta) -> np.ndarray:
        return class_probabilities(self.represent(X, theta), self.embeddings)

    def potential(self, data: SyntheticDataset, batch_size: int, prior_precision: float) -> DataPotential:
        """Mini-batch potential ``(n/m) sum NLL + (lambda/2)|theta|^2`` on ``data``."""
        phi = self.backbone.features(data.inputs)
        labels = data.labels
        adapter, emb = self.adapter, self.embeddings

        def nll(idx, theta):
            U = represent_features(adapter, phi[idx], theta)
            return nll_and_rep_grad(U, labels[idx], emb)[0]

        def nll_grad(idx, theta):
            U = represent_features(adapter, phi[idx], theta)
            _, g = nll_and_rep_grad(U, labels[idx], emb)
            return represent_features_vjp(adapter, phi[idx], theta, g, u=U)

        spec = PotentialSpec("classifier", prior_precision, data.n)
        return DataPotential(spec, nll, nll_grad, adapter.n_params, batch_size)


def ensemble_predict(
    model: ClassifierModel, samples: Sequence[np.ndarray], X, weights=None
) -> np.ndarray:
    """Posterior-ensemble predictive ``sum_k w_k p(y | x, theta_k)``.

    Args:
        model: classifier used for every member.
        samples: parameter vectors ``theta_k``.
        X: one input (1-D) or a batch of inputs.
        weights: simplex weights; uniform ``1/K`` when omitted.

    Returns:
        Length-C vector for a single input, else ``(n, C)``.
    """
    if len(samples) == 0:
        raise InvalidInputError("ensemble needs at least one sample")
    K = len(samples)
    w = np.full(K, 1.0 / K) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (K,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise InvalidInputError("weights must be a simplex vector with one entry per sample")
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    Xb = X[None, :] if single else X
    p = sum(wk * model.predict_proba(Xb, theta) for wk, theta in zip(w, samples))
    return p[0] if single else p


def predictive_nll(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-probability of the true labels."""
    probs = np.atleast_2d(probs)
    return float(-np.mean(np.log(probs[np.arange(len(labels)), labels])))


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(np.atleast_2d(probs), axis=1) == labels))
