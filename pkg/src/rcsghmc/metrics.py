"""Probability metrics between empirical point clouds and their gradients
with respect to the points of the first cloud.

MMD uses a Gaussian RBF kernel ``k(a, b) = exp(-|a - b|^2 / (2 sigma^2))``.
Wasserstein-2 is restricted to equal-size, uniformly weighted clouds, where
an optimal plan is a scaled permutation found by linear assignment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist, pdist

from .core import InvalidInputError, UnsupportedMarginalsError, as_points
from .model import AdapterModel, FrozenBackbone, represent

METRICS = ("mmd", "wasserstein")


@dataclass(frozen=True)
class RbfKernel:
    """Gaussian kernel; ``sigma=None`` selects the median heuristic."""

    sigma: Optional[float] = None

    def __post_init__(self):
        if self.sigma is not None and not self.sigma > 0:
            raise InvalidInputError("kernel bandwidth must be positive")

    def bandwidth(self, A: np.ndarray, B: np.ndarray) -> float:
        if self.sigma is not None:
            return float(self.sigma)
        return median_bandwidth(np.vstack([A, B]))


def median_bandwidth(points: np.ndarray) -> float:
    """Median pairwise Euclidean distance; 1.0 if all points coincide."""
    if points.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(points)))
    return med if med > 0 else 1.0


def _pair(A, B):
    A = as_points(A, "A")
    B = as_points(B, "B")
    if A.shape[1] != B.shape[1]:
        raise InvalidInputError(f"point dimensions differ: {A.shape[1]} vs {B.shape[1]}")
    return A, B


def _gram(X, Y, sigma):
    return np.exp(-cdist(X, Y, "sqeuclidean") / (2.0 * sigma**2))


def mmd_squared(A, B, kernel: RbfKernel = RbfKernel(), unbiased: bool = False) -> float:
    """Squared MMD between two point clouds.

    The default is the V-statistic
    ``mean k(A, A) + mean k(B, B) - 2 mean k(A, B)`` with diagonal terms
    included; it is non-negative and zero for identical clouds.
    ``unbiased=True`` drops the diagonal from the within-cloud sums
    (U-statistic) and needs at least two points per cloud.
    """
    A, B = _pair(A, B)
    sigma = kernel.bandwidth(A, B)
    n, m = A.shape[0], B.shape[0]
    Kaa, Kbb, Kab = _gram(A, A, sigma), _gram(B, B, sigma), _gram(A, B, sigma)
    if unbiased:
        if n < 2 or m < 2:
            raise InvalidInputError("the unbiased estimator needs at least two points per cloud")
        within = (Kaa.sum() - n) / (n * (n - 1)) + (Kbb.sum() - m) / (m * (m - 1))
    else:
        within = Kaa.sum() / n**2 + Kbb.sum() / m**2
    return float(within - 2.0 * Kab.sum() / (n * m))


def mmd_squared_grad_points(A, B, kernel: RbfKernel = RbfKernel(), unbiased: bool = False) -> np.ndarray:
    """Gradient of :func:`mmd_squared` with respect to each point of ``A``.

    Under the median heuristic the bandwidth is held fixed at its current
    value when differentiating.

    Returns:
        Array with the shape of ``A``.
    """
    A, B = _pair(A, B)
    sigma = kernel.bandwidth(A, B)
    n, m = A.shape[0], B.shape[0]
    Kaa, Kab = _gram(A, A, sigma), _gram(A, B, sigma)
    # d k(a, x) / d a = -k(a, x) (a - x) / sigma^2
    within_w = 2.0 / (n * (n - 1)) if unbiased else 2.0 / n**2
    g_within = -(Kaa.sum(axis=1)[:, None] * A - Kaa @ A) / sigma**2
    g_cross = -(Kab.sum(axis=1)[:, None] * A - Kab @ B) / sigma**2
    return within_w * g_within - 2.0 / (n * m) * g_cross


class TransportPlan(NamedTuple):
    """Optimal pairing ``i -> pairing[i]``, each pair carrying mass ``1/n``."""

    pairing: np.ndarray
    cost: float

    @property
    def n(self) -> int:
        return int(self.pairing.shape[0])

    def matrix(self) -> np.ndarray:
        gamma = np.zeros((self.n, self.n))
        gamma[np.arange(self.n), self.pairing] = 1.0 / self.n
        return gamma


def solve_assignment(cost) -> TransportPlan:
    """Minimum-cost perfect matching of a square cost matrix.

    Returns the pairing and the raw (unnormalised) total cost
    ``sum_i cost[i, pairing[i]]``.
    """
    C = np.asarray(cost, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[0] == 0:
        raise InvalidInputError(f"cost matrix must be square and non-empty, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise InvalidInputError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(C)
    pairing = np.empty(C.shape[0], dtype=np.int64)
    pairing[rows] = cols
    return TransportPlan(pairing, float(C[rows, cols].sum()))


def _equal_size_pair(A, B):
    A, B = _pair(A, B)
    if A.shape[0] != B.shape[0]:
        raise UnsupportedMarginalsError(
            f"exact W2 is implemented for equal sample counts only ({A.shape[0]} vs {B.shape[0]})"
        )
    return A, B


def wasserstein2_plan(A, B) -> TransportPlan:
    A, B = _equal_size_pair(A, B)
    return solve_assignment(cdist(A, B, "sqeuclidean"))


def wasserstein2_squared(A, B) -> float:
    """Squared 2-Wasserstein distance between equal-size uniform clouds."""
    A, B = _equal_size_pair(A, B)
    plan = solve_assignment(cdist(A, B, "sqeuclidean"))
    return plan.cost / A.shape[0]


def wasserstein2_grad_points(A, B) -> np.ndarray:
    """Gradient of :func:`wasserstein2_squared` in the points of ``A``.

    The optimal pairing is held fixed, giving ``2 (a_i - b_pi(i)) / n``;
    this is the exact gradient wherever the optimal pairing is unique.
    """
    A, B = _equal_size_pair(A, B)
    plan = solve_assignment(cdist(A, B, "sqeuclidean"))
    return 2.0 / A.shape[0] * (A - B[plan.pairing])


def distance_squared(A, B, metric: str, kernel: RbfKernel = RbfKernel(), unbiased: bool = False) -> float:
    if metric == "mmd":
        return mmd_squared(A, B, kernel, unbiased)
    if metric == "wasserstein":
        return wasserstein2_squared(A, B)
    raise InvalidInputError(f"unknown metric {metric!r}; expected one of {METRICS}")


def distance_squared_grad_points(
    A, B, metric: str, kernel: RbfKernel = RbfKernel(), unbiased: bool = False
) -> np.ndarray:
    if metric == "mmd":
        return mmd_squared_grad_points(A, B, kernel, unbiased)
    if metric == "wasserstein":
        return wasserstein2_grad_points(A, B)
    raise InvalidInputError(f"unknown metric {metric!r}; expected one of {METRICS}")


def representation_distance(
    theta,
    theta_other,
    model: AdapterModel,
    backbone: FrozenBackbone,
    X,
    metric: str = "wasserstein",
    kernel: RbfKernel = RbfKernel(),
    unbiased: bool = False,
) -> float:
    """Squared metric distance between the representation clouds that two
    parameter vectors induce on a shared probe batch ``X``."""
    A = represent(model, backbone, X, theta)
    B = represent(model, backbone, X, theta_other)
    return distance_squared(A, B, metric, kernel, unbiased)
