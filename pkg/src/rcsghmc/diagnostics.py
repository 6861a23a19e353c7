"""Post-hoc analysis of sample archives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .core import InvalidInputError, as_points
from .metrics import METRICS, RbfKernel, distance_squared
from .potentials import GaussianMixture
from .repulsion import RepresentationContext

DEFAULT_PROBE_SIZE = 100


@dataclass(frozen=True)
class DistanceMatrix:
    """Symmetric matrix of pairwise distances between archived samples."""

    entries: np.ndarray
    metric: str
    labels: tuple = ()

    @property
    def size(self) -> int:
        return self.entries.shape[0]


def pairwise_distance_matrix(
    samples: Sequence[np.ndarray],
    context: RepresentationContext,
    metric: str = "wasserstein",
    kernel: RbfKernel = RbfKernel(),
    labels: Sequence[str] = (),
) -> DistanceMatrix:
    """Distances ``D_ij = d(U_i, U_j)`` between representation clouds.

    ``U_i`` is the cloud of representations of sample ``i`` on the
    context's probe batch. Entries are distances (square roots of the
    squared metrics, clipped at zero), not squared distances.
    """
    if metric not in METRICS:
        raise InvalidInputError(f"unknown metric {metric!r}")
    S = len(samples)
    if S < 2:
        raise InvalidInputError("a distance matrix needs at least two samples")
    reps = [context.represent(np.asarray(s, dtype=np.float64)) for s in samples]
    D = np.zeros((S, S))
    for i in range(S):
        for j in range(i + 1, S):
            d2 = distance_squared(reps[i], reps[j], metric, kernel)
            D[i, j] = D[j, i] = np.sqrt(max(d2, 0.0))
    return DistanceMatrix(D, metric, tuple(labels) or tuple(f"s{i}" for i in range(S)))


def mean_offdiagonal(D) -> float:
    """Mean of the strict upper triangle."""
    M = D.entries if isinstance(D, DistanceMatrix) else np.asarray(D, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidInputError("expected a square matrix")
    if M.shape[0] < 2:
        raise InvalidInputError("need at least a 2 x 2 matrix")
    return float(M[np.triu_indices(M.shape[0], k=1)].mean())


class ModeCoverageReport(NamedTuple):
    hits: tuple
    coverage: float
    radius: float


def default_coverage_radius(gm: GaussianMixture) -> float:
    """Twice the mean RMS radius ``sqrt(trace Sigma_k)`` of the components."""
    return float(2.0 * np.mean(np.sqrt(gm.variances.sum(axis=1))))


def mode_coverage(samples, gm: GaussianMixture, radius: Optional[float] = None) -> ModeCoverageReport:
    """Fraction of mixture modes with a sample closer than ``radius``."""
    r = default_coverage_radius(gm) if radius is None else float(radius)
    if not r > 0:
        raise InvalidInputError("coverage radius must be positive")
    S = as_points(samples, "samples") if len(samples) else np.empty((0, gm.dim))
    if S.shape[0] and S.shape[1] != gm.dim:
        raise InvalidInputError("sample and mixture dimensions differ")
    if S.shape[0] == 0:
        hits = (False,) * gm.n_components
    else:
        dist = np.linalg.norm(S[:, None, :] - gm.means[None, :, :], axis=2)
        hits = tuple(bool(h) for h in (dist.min(axis=0) < r))
    return ModeCoverageReport(hits, sum(hits) / gm.n_components, r)


class MomentCheck(NamedTuple):
    passed: bool
    mean: np.ndarray
    variance: np.ndarray
    max_mean_error: float
    max_var_rel_error: float
    max_abs_correlation: float


def moment_check(
    tail,
    target: GaussianMixture,
    mean_tol: float = 0.1,
    var_rtol: float = 0.15,
    corr_tol: float = 0.15,
) -> MomentCheck:
    """Compare empirical moments of a trajectory tail with a Gaussian target.

    Passes when every coordinate mean is within ``mean_tol`` (absolute) of
    the target mean, every variance is within ``var_rtol`` (relative) of
    the target variance, and every off-diagonal correlation is below
    ``corr_tol`` in magnitude (the target covariance is diagonal).
    """
    if target.n_components != 1:
        raise InvalidInputError("moment_check needs a single-component target")
    X = as_points(tail, "tail")
    if X.shape[0] < 1000:
        raise InvalidInputError("moment_check needs a tail of at least 1000 samples")
    if X.shape[1] != target.dim:
        raise InvalidInputError("tail and target dimensions differ")
    mu, var = target.means[0], target.variances[0]
    mean = X.mean(axis=0)
    cov = np.atleast_2d(np.cov(X, rowvar=False))
    emp_var = np.diag(cov).copy()
    mean_err = float(np.max(np.abs(mean - mu)))
    var_err = float(np.max(np.abs(emp_var - var) / var))
    if X.shape[1] > 1 and np.all(emp_var > 0):
        corr = cov / np.sqrt(np.outer(emp_var, emp_var))
        max_corr = float(np.max(np.abs(corr[~np.eye(X.shape[1], dtype=bool)])))
    else:
        max_corr = 0.0
    passed = mean_err <= mean_tol and var_err <= var_rtol and max_corr <= corr_tol
    return MomentCheck(bool(passed), mean, emp_var, mean_err, var_err, max_corr)
