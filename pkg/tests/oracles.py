"""Independent reference implementations used as test oracles.

These deliberately avoid the library code paths: plain loops instead of
vectorised Gram matrices, permutation enumeration instead of an assignment
solver, explicit enumeration of mini-batches.
"""

import itertools
import math

import numpy as np


def rbf(a, b, sigma):
    d2 = sum((x - y) ** 2 for x, y in zip(a, b))
    return math.exp(-d2 / (2.0 * sigma * sigma))


def median_pairwise_distance(points):
    dists = []
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            dists.append(math.sqrt(sum((x - y) ** 2 for x, y in zip(points[i], points[j]))))
    if not dists:
        return 1.0
    med = float(np.median(dists))
    return med if med > 0 else 1.0


def mmd_triple_sum(A, B, sigma=None, unbiased=False):
    """Three explicit double sums over kernel evaluations."""
    A = [list(map(float, a)) for a in np.atleast_2d(A)]
    B = [list(map(float, b)) for b in np.atleast_2d(B)]
    if sigma is None:
        sigma = median_pairwise_distance(A + B)
    n, m = len(A), len(B)
    saa = sum(rbf(A[i], A[j], sigma) for i in range(n) for j in range(n) if not (unbiased and i == j))
    sbb = sum(rbf(B[i], B[j], sigma) for i in range(m) for j in range(m) if not (unbiased and i == j))
    sab = sum(rbf(a, b, sigma) for a in A for b in B)
    if unbiased:
        return saa / (n * (n - 1)) + sbb / (m * (m - 1)) - 2.0 * sab / (n * m)
    return saa / n**2 + sbb / m**2 - 2.0 * sab / (n * m)


def brute_force_assignment(cost):
    """Minimum total cost over all permutations; returns (cost, perm)."""
    n = len(cost)
    best, best_perm = math.inf, None
    for perm in itertools.permutations(range(n)):
        c = sum(cost[i][perm[i]] for i in range(n))
        if c < best:
            best, best_perm = c, perm
    return best, best_perm


def w2_squared_brute_force(A, B):
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    cost = [[float(np.sum((a - b) ** 2)) for b in B] for a in A]
    return brute_force_assignment(cost)[0] / len(A)


def enumerate_batch_average(f, n, m):
    """Average of ``f(batch)`` over every size-``m`` subset of ``range(n)``."""
    batches = list(itertools.combinations(range(n), m))
    return sum(f(np.array(b)) for b in batches) / len(batches)
