"""Inter-cycle repulsion.

The repulsive potential between parameters is ``V = 1 / (d^2 + eps)`` and
the force is ``F = -grad_theta V = grad_theta(d^2) / (d^2 + eps)^2``.  The
squared distance ``d^2`` is either Euclidean in parameter space or a
probability metric between the representation clouds of the two
parameter vectors on a probe batch.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import ConfigError, InvalidInputError, as_vector
from .metrics import (
    METRICS,
    RbfKernel,
    distance_squared,
    distance_squared_grad_points,
)
from .model import AdapterModel, FrozenBackbone, represent_features, represent_features_vjp

MODES = ("parameter-euclidean", "representation")
DEFAULT_STRENGTH = 1e-3
DEFAULT_EPSILON = 1e-6


@dataclass(frozen=True)
class RepulsionConfig:
    strength: float = DEFAULT_STRENGTH
    epsilon: float = DEFAULT_EPSILON
    mode: str = "parameter-euclidean"
    metric: str = "wasserstein"
    batch_size: int = 32
    mmd_sigma: Optional[float] = None
    mmd_unbiased: bool = False

    def __post_init__(self):
        if not self.strength >= 0:
            raise ConfigError("repulsion strength must be >= 0")
        if not self.epsilon > 0:
            raise ConfigError("repulsion epsilon must be > 0")
        if self.mode not in MODES:
            raise ConfigError(f"repulsion mode must be one of {MODES}")
        if self.metric not in METRICS:
            raise ConfigError(f"repulsion metric must be one of {METRICS}")
        if self.mode == "representation" and self.batch_size < 2:
            raise ConfigError("representation repulsion needs a probe batch of at least 2")

    @property
    def kernel(self) -> RbfKernel:
        return RbfKernel(self.mmd_sigma)


@dataclass(frozen=True)
class RepresentationContext:
    """Model and probe batch used to compare parameters through their
    representations. Backbone features of the probe batch are cached."""

    adapter: AdapterModel
    backbone: FrozenBackbone
    probe_inputs: np.ndarray
    probe_id: int = 0
    features: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        X = np.array(self.probe_inputs, dtype=np.float64)
        X.setflags(write=False)
        object.__setattr__(self, "probe_inputs", X)
        phi = self.backbone.features(X)
        phi.setflags(write=False)
        object.__setattr__(self, "features", phi)

    def represent(self, theta) -> np.ndarray:
        return represent_features(self.adapter, self.features, theta)


@dataclass(frozen=True)
class SnapshotSet:
    """Frozen cycle-end parameters that the current cycle repels from.

    In representation mode the snapshot representations on the context's
    probe batch are cached alongside.
    """

    params: tuple = ()
    representations: Optional[tuple] = None
    probe_id: Optional[int] = None

    @classmethod
    def freeze(cls, params: Sequence[np.ndarray], context: Optional[RepresentationContext] = None):
        frozen = []
        for p in params:
            arr = np.array(p, dtype=np.float64)
            arr.setflags(write=False)
            frozen.append(arr)
        if context is None:
            return cls(tuple(frozen))
        reps = []
        for p in frozen:
            u = context.represent(p)
            u.setflags(write=False)
            reps.append(u)
        return cls(tuple(frozen), tuple(reps), context.probe_id)

    def __len__(self):
        return len(self.params)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.params:
            h.update(p.tobytes())
        for u in self.representations or ():
            h.update(u.tobytes())
        return h.hexdigest()


def _rep_context(cfg: RepulsionConfig, context):
    if cfg.mode == "representation" and context is None:
        raise InvalidInputError("representation-mode repulsion needs a RepresentationContext")
    return context


def squared_distance(theta, theta_other, cfg: RepulsionConfig, context=None) -> float:
    """``d^2`` between two parameter vectors under the configured mode."""
    theta = as_vector(theta, "theta")
    theta_other = as_vector(theta_other, "theta_other")
    if cfg.mode == "parameter-euclidean":
        diff = theta - theta_other
        return float(diff @ diff)
    ctx = _rep_context(cfg, context)
    return distance_squared(
        ctx.represent(theta), ctx.represent(theta_other), cfg.metric, cfg.kernel, cfg.mmd_unbiased
    )


def repulsive_potential(theta, theta_other, cfg: RepulsionConfig, context=None) -> float:
    """``V = 1 / (d^2 + eps)``; equals ``1/eps`` when the two coincide."""
    return 1.0 / (squared_distance(theta, theta_other, cfg, context) + cfg.epsilon)


def repulsive_force(theta, theta_other, cfg: RepulsionConfig, context=None) -> np.ndarray:
    """``F = -grad_theta V`` for a single pair (not scaled by the strength)."""
    theta = as_vector(theta, "theta")
    theta_other = as_vector(theta_other, "theta_other")
    if cfg.mode == "parameter-euclidean":
        diff = theta - theta_other
        return 2.0 * diff / (float(diff @ diff) + cfg.epsilon) ** 2
    ctx = _rep_context(cfg, context)
    return _representation_force(theta, [ctx.represent(theta_other)], cfg, ctx)


def _representation_force(theta, other_reps, cfg: RepulsionConfig, ctx: RepresentationContext):
    U = ctx.represent(theta)
    cot = np.zeros_like(U)
    for V in other_reps:
        d2 = distance_squared(U, V, cfg.metric, cfg.kernel, cfg.mmd_unbiased)
        g = distance_squared_grad_points(U, V, cfg.metric, cfg.kernel, cfg.mmd_unbiased)
        cot += g / (d2 + cfg.epsilon) ** 2
    return represent_features_vjp(ctx.adapter, ctx.features, theta, cot, u=U)


def total_repulsion(theta, snapshots: SnapshotSet, cfg: RepulsionConfig, context=None) -> np.ndarray:
    """``strength * sum_l F(theta, theta_l)`` over the snapshot set.

    Zero when the set is empty or the strength is zero.
    """
    theta = as_vector(theta, "theta")
    if len(snapshots) == 0 or cfg.strength == 0.0:
        return np.zeros_like(theta)
    if cfg.mode == "parameter-euclidean":
        diffs = theta[None, :] - np.stack(snapshots.params)
        d2 = np.sum(diffs**2, axis=1)
        forces = 2.0 * diffs / ((d2 + cfg.epsilon) ** 2)[:, None]
        return cfg.strength * forces.sum(axis=0)
    ctx = _rep_context(cfg, context)
    if snapshots.representations is not None and snapshots.probe_id == ctx.probe_id:
        reps = snapshots.representations
    else:
        reps = [ctx.represent(p) for p in snapshots.params]
    return cfg.strength * _representation_force(theta, reps, cfg, ctx)
