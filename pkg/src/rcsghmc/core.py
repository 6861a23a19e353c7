"""Shared numerics: error types, seeded per-chain random streams, and a
central finite-difference gradient used as a testing oracle.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

DEFAULT_FD_STEP = 1e-5


class RcsghmcError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(RcsghmcError, ValueError):
    """Raised when an argument violates an operation's preconditions."""


class DegenerateInputError(InvalidInputError):
    """Raised when an input is well-formed but numerically degenerate."""


class UnsupportedMarginalsError(InvalidInputError):
    """Raised for optimal-transport problems with unequal sample counts."""


class ConfigError(RcsghmcError, ValueError):
    """Raised for invalid sampler or experiment configuration."""


class EvaluationError(RcsghmcError, ArithmeticError):
    """Raised when a function evaluation returns a non-finite value."""


class DivergenceError(RcsghmcError, FloatingPointError):
    """A chain produced a non-finite or exploding state.

    Attributes:
        chain: index of the offending chain.
        cycle: 1-based cycle index, if known.
        iteration: 1-based within-cycle iteration, if known.
    """

    def __init__(self, message, chain=None, cycle=None, iteration=None):
        super().__init__(message)
        self.chain = chain
        self.cycle = cycle
        self.iteration = iteration

    def to_dict(self):
        return {
            "error": "chain-divergence",
            "message": str(self),
            "chain": self.chain,
            "cycle": self.cycle,
            "iteration": self.iteration,
        }


def as_vector(x, name="vector") -> np.ndarray:
    """Return ``x`` as a finite 1-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise InvalidInputError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise InvalidInputError(f"{name} must be non-empty")
    if not np.isfinite(arr).all():
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def as_points(x, name="points") -> np.ndarray:
    """Return ``x`` as a finite (n, d) float64 array; 1-D input is a column."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise InvalidInputError(f"{name} must be a non-empty (n, d) array, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


class RngStream:
    """Reproducible random stream owned by a single chain.

    The generator is Philox (counter-based) keyed by ``(seed, stream_id)``
    through :class:`numpy.random.SeedSequence`, so streams for different
    chains are independent and each replays exactly for a fixed seed.
    The stream counts how many standard normal variates it has produced;
    samplers rely on this to show that noise-free stages draw nothing.

    Args:
        seed: non-negative integer seed, at most 64 bits.
        stream_id: chain index (or any non-negative tag).
    """

    def __init__(self, seed: int, stream_id: int = 0):
        seed = int(seed)
        stream_id = int(stream_id)
        if not 0 <= seed < 2**64:
            raise InvalidInputError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
        if stream_id < 0:
            raise InvalidInputError(f"stream_id must be non-negative, got {stream_id}")
        self.seed = seed
        self.stream_id = stream_id
        seq = np.random.SeedSequence(entropy=seed, spawn_key=(stream_id,))
        self._gen = np.random.Generator(np.random.Philox(seq))
        self.normal_draws = 0

    def normal(self, size) -> np.ndarray:
        out = self._gen.standard_normal(size)
        self.normal_draws += int(np.size(out))
        return out

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    @property
    def generator(self) -> np.random.Generator:
        """Underlying generator, for draws that are not sampler noise."""
        return self._gen

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def gaussian_noise(rng: RngStream, dim: int) -> np.ndarray:
    """Draw ``dim`` i.i.d. standard normal variates from ``rng``."""
    if int(dim) < 1:
        raise InvalidInputError(f"dim must be >= 1, got {dim}")
    return rng.normal(int(dim))


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], theta, h: float = DEFAULT_FD_STEP
) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    Each coordinate uses ``(f(theta + h e_i) - f(theta - h e_i)) / (2 h)``.

    Args:
        f: scalar function of a 1-D array.
        theta: evaluation point.
        h: positive step.

    Returns:
        Array with the shape of ``theta``.

    Raises:
        EvaluationError: if any evaluation of ``f`` is not finite.
    """
    if not h > 0:
        raise InvalidInputError(f"step h must be positive, got {h}")
    theta = np.array(theta, dtype=np.float64)
    flat = theta.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(f(theta))
        flat[i] = orig - h
        f_minus = float(f(theta))
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise EvaluationError(f"non-finite function value near coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(theta.shape)
