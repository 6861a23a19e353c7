"""Cyclical stochastic-gradient samplers with inter-cycle repulsion.

Each cycle runs ``T`` iterations under a cosine step-size schedule that
restarts at ``step_size`` every cycle.  Iterations with ``t / T <= beta``
form the exploration stage (no injected noise); the rest form the sampling
stage.  From the second cycle on, the position update of ``rcsghmc`` adds
``strength * sum_l F(theta, theta_l)`` where ``theta_l`` are the previous
cycle's end points::

    theta <- theta + r + strength * sum_l F(theta, theta_l)
    r     <- (1 - friction) r - step * grad U~(theta)
             + [sampling] sqrt(2 (friction - gamma_hat) step) * noise
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional

import numpy as np
from scipy.optimize import minimize

from .core import ConfigError, DivergenceError, InvalidInputError, RngStream, as_vector, gaussian_noise
from .model import AdapterModel, FrozenBackbone
from .repulsion import RepresentationContext, RepulsionConfig, SnapshotSet, total_repulsion

logger = logging.getLogger(__name__)

ALGORITHMS = ("sgld", "sghmc", "rcsghmc")
DIVERGENCE_LIMIT = 1e8
# stream id of the run-level generator (probe batches); chain k uses stream k
RUN_STREAM_ID = 2**31


@dataclass(frozen=True)
class CyclicalSchedule:
    """Cosine cyclical step sizes.

    Attributes:
        step_size: initial step size ``alpha_0`` of every cycle.
        iters_per_cycle: iterations ``T`` per cycle.
        cycles: number of cycles ``C``.
        beta: fraction of each cycle spent exploring.
    """

    step_size: float = 2e-3
    iters_per_cycle: int = 100
    cycles: int = 3
    beta: float = 0.7

    def __post_init__(self):
        if not self.step_size > 0:
            raise ConfigError("step_size must be > 0")
        if self.iters_per_cycle < 1 or self.cycles < 1:
            raise ConfigError("iters_per_cycle and cycles must be >= 1")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("beta must lie in [0, 1]")


def cosine_stepsize(sched: CyclicalSchedule, t: int) -> float:
    """``alpha_t = alpha_0 / 2 * (cos(pi (t - 1) / T) + 1)`` for ``1 <= t <= T``."""
    T = sched.iters_per_cycle
    if not 1 <= t <= T:
        raise InvalidInputError(f"iteration {t} outside [1, {T}]")
    return 0.5 * sched.step_size * (math.cos(math.pi * (t - 1) / T) + 1.0)


def is_sampling_stage(sched: CyclicalSchedule, t: int) -> bool:
    return t / sched.iters_per_cycle > sched.beta


@dataclass(frozen=True)
class SghmcConfig:
    """Sampler dynamics.

    Attributes:
        algorithm: ``sgld``, ``sghmc`` (no repulsion) or ``rcsghmc``.
        friction: ``eta`` in (0, 1]; momentum decay is ``1 - eta``.
        gamma_hat: gradient-noise estimate, ``0 <= gamma_hat < friction``.
        repulsion: repulsion settings (ignored by ``sghmc``).
        burnin: ``"none"`` or ``"adamw"``; AdamW replaces the sampler
            updates for the first ``burnin_fraction`` of every cycle.
        burnin_fraction: defaults to the schedule's ``beta``.
        burnin_lr: AdamW learning rate at the start of a cycle; it follows
            the same cosine shape as the step size.
        burnin_weight_decay: decoupled AdamW weight decay.
        momentum_restart: ``"zero"`` resets ``r`` at each cycle start,
            ``"carry"`` keeps it.
        position_restart: ``"continue"`` starts each cycle where the last
            ended, ``"init"`` restarts from the initial point.
    """

    algorithm: str = "rcsghmc"
    friction: float = 0.1
    gamma_hat: float = 0.0
    repulsion: RepulsionConfig = field(default_factory=RepulsionConfig)
    burnin: str = "none"
    burnin_fraction: Optional[float] = None
    burnin_lr: float = 1e-2
    burnin_weight_decay: float = 0.0
    momentum_restart: str = "zero"
    position_restart: str = "continue"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}")
        if not 0.0 < self.friction <= 1.0:
            raise ConfigError("friction must lie in (0, 1]")
        if self.gamma_hat < 0 or not self.friction - self.gamma_hat > 0:
            raise ConfigError("need 0 <= gamma_hat < friction")
        if self.burnin not in ("none", "adamw"):
            raise ConfigError("burnin must be 'none' or 'adamw'")
        if self.burnin_fraction is not None and not 0.0 <= self.burnin_fraction <= 1.0:
            raise ConfigError("burnin_fraction must lie in [0, 1]")
        if not self.burnin_lr > 0 or self.burnin_weight_decay < 0:
            raise ConfigError("burnin_lr must be > 0 and burnin_weight_decay >= 0")
        if self.momentum_restart not in ("zero", "carry"):
            raise ConfigError("momentum_restart must be 'zero' or 'carry'")
        if self.position_restart not in ("continue", "init"):
            raise ConfigError("position_restart must be 'continue' or 'init'")

    @property
    def repulsive(self) -> bool:
        return self.algorithm != "sghmc" and self.repulsion.strength > 0

    def burnin_end(self, sched: CyclicalSchedule) -> float:
        if self.burnin == "none":
            return 0.0
        frac = sched.beta if self.burnin_fraction is None else self.burnin_fraction
        if frac > sched.beta:
            raise ConfigError("burnin_fraction cannot exceed beta")
        return frac


class AdamState(NamedTuple):
    m: np.ndarray
    v: np.ndarray
    count: int = 0


def adamw_step(theta, grad, state: AdamState, lr, weight_decay=0.0, b1=0.9, b2=0.999, eps=1e-8):
    """One AdamW update; returns ``(theta, state)``."""
    count = state.count + 1
    m = b1 * state.m + (1 - b1) * grad
    v = b2 * state.v + (1 - b2) * grad**2
    m_hat = m / (1 - b1**count)
    v_hat = v / (1 - b2**count)
    theta = theta - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * theta)
    return theta, AdamState(m, v, count)


def _check_finite(x, what, chain=None, cycle=None, iteration=None):
    # NaN fails the comparison too, so one reduction covers all cases
    if not np.abs(x).max() <= DIVERGENCE_LIMIT:
        raise DivergenceError(
            f"{what} diverged (chain {chain}, cycle {cycle}, iteration {iteration})",
            chain=chain,
            cycle=cycle,
            iteration=iteration,
        )


def sgld_step(theta, grad, step_size: float, rng: Optional[RngStream], noise: bool = True, chain=None):
    """Langevin step ``theta - a grad + sqrt(2 a) noise``.

    ``noise=False`` (or ``rng=None``) gives a plain gradient step.
    """
    if not step_size > 0:
        raise InvalidInputError("step_size must be > 0")
    theta = np.asarray(theta, dtype=np.float64)
    _check_finite(grad, "gradient", chain)
    out = theta - step_size * grad
    if noise and rng is not None:
        out = out + math.sqrt(2.0 * step_size) * gaussian_noise(rng, theta.size)
    _check_finite(out, "position", chain)
    return out


class ChainState(NamedTuple):
    theta: np.ndarray
    momentum: np.ndarray
    rng: RngStream
    adam: Optional[AdamState] = None


def rcsghmc_step(
    chain: ChainState,
    potential,
    cfg: SghmcConfig,
    sched: CyclicalSchedule,
    t: int,
    cycle: int = 1,
    snapshots: SnapshotSet = SnapshotSet(),
    context: Optional[RepresentationContext] = None,
    chain_id: int = 0,
) -> ChainState:
    """Advance one chain by iteration ``t`` of cycle ``cycle``.

    Dispatches on ``cfg.algorithm`` and on the burn-in window; both updates
    read the pre-step ``theta`` and ``r``.  Repulsion only acts when
    ``cycle > 1``.
    """
    alpha = cosine_stepsize(sched, t)
    theta, r, rng = chain.theta, chain.momentum, chain.rng
    batch = potential.sample_batch(rng)
    grad = potential.grad(theta, batch)
    _check_finite(grad, "gradient", chain_id, cycle, t)

    if cycle > 1 and cfg.repulsive:
        push = total_repulsion(theta, snapshots, cfg.repulsion, context)
    else:
        push = 0.0
    sampling = is_sampling_stage(sched, t)
    adam = chain.adam

    if t / sched.iters_per_cycle <= cfg.burnin_end(sched):
        if adam is None:
            adam = AdamState(np.zeros_like(theta), np.zeros_like(theta))
        lr = cfg.burnin_lr * alpha / sched.step_size
        new_theta, adam = adamw_step(theta, grad, adam, lr, cfg.burnin_weight_decay)
        new_theta = new_theta + push
        new_r = r
    elif cfg.algorithm == "sgld":
        new_theta = theta - alpha * grad + push
        if sampling:
            new_theta = new_theta + math.sqrt(2.0 * alpha) * gaussian_noise(rng, theta.size)
        new_r = r
    else:
        new_theta = theta + r + push
        new_r = (1.0 - cfg.friction) * r - alpha * grad
        if sampling:
            scale = math.sqrt(2.0 * (cfg.friction - cfg.gamma_hat) * alpha)
            new_r = new_r + scale * gaussian_noise(rng, theta.size)

    _check_finite(new_theta, "position", chain_id, cycle, t)
    _check_finite(new_r, "momentum", chain_id, cycle, t)
    return ChainState(new_theta, new_r, rng, adam)


class SampleRecord(NamedTuple):
    cycle: int
    chain: int
    theta: np.ndarray
    potential: float
    steps: int
    seed: int


@dataclass
class SampleArchive:
    """Cycle-end samples, ``K`` per completed cycle."""

    records: List[SampleRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def samples(self, cycle: Optional[int] = None) -> List[np.ndarray]:
        return [r.theta for r in self.records if cycle is None or r.cycle == cycle]

    @property
    def cycles(self) -> int:
        return max((r.cycle for r in self.records), default=0)

    def final_samples(self) -> List[np.ndarray]:
        return self.samples(self.cycles)

    def as_array(self) -> np.ndarray:
        return np.stack([r.theta for r in self.records])


@dataclass
class RunReport:
    """Diagnostics of a sampler run.

    Attributes:
        trajectory: rows ``(cycle, iter, chain, theta...)`` of recorded steps.
        noise_draws: per-chain counts of standard normal draws per cycle,
            shape ``(C, K)``.
        stage_noise: per-cycle draw counts split by stage, keys
            ``"exploration"`` and ``"sampling"``.
        snapshot_checksums: digest of the frozen snapshot set at the start
            and end of every cycle.
    """

    trajectory: np.ndarray
    noise_draws: np.ndarray
    stage_noise: dict
    snapshot_checksums: List[tuple]
    seed: int


@dataclass(frozen=True)
class ProbeSource:
    """Inputs from which a fresh probe batch is drawn at each cycle start."""

    adapter: AdapterModel
    backbone: FrozenBackbone
    inputs: np.ndarray


def _initial_points(init, K) -> np.ndarray:
    arr = np.asarray(init, dtype=np.float64)
    if arr.ndim == 1:
        arr = np.tile(as_vector(arr, "init"), (K, 1))
    if arr.shape[0] != K or not np.all(np.isfinite(arr)):
        raise InvalidInputError("init must be one vector or one finite vector per chain")
    return arr


def run(
    sched: CyclicalSchedule,
    cfg: SghmcConfig,
    potential,
    init,
    chains: int = 1,
    seed: int = 1,
    probe_source: Optional[ProbeSource] = None,
    record_every: int = 1,
    workers: int = 1,
    on_cycle_end: Optional[Callable[[int, List[np.ndarray]], None]] = None,
):
    """Run ``cycles x iters_per_cycle`` iterations of ``chains`` chains.

    At each cycle end the ``K`` end points are archived and frozen as the
    next cycle's snapshot set.  Chains are independent within a cycle and
    may be advanced on ``workers`` threads without changing the results.

    Args:
        sched: cyclical schedule.
        cfg: sampler dynamics.
        potential: object with ``sample_batch(rng)``, ``grad(theta, batch)``
            and ``value(theta)``.
        init: initial point, shared by all chains or one row per chain.
        chains: number of chains ``K``.
        seed: run seed; chain ``k`` uses stream ``(seed, k)``.
        probe_source: required for representation-mode repulsion.
        record_every: trajectory thinning (the last iteration of every cycle
            is always recorded).
        workers: threads used to advance chains.
        on_cycle_end: optional callback ``(cycle, end_points)``.

    Returns:
        ``(SampleArchive, RunReport)``.

    Raises:
        DivergenceError: when any chain leaves the finite/bounded region.
    """
    K = int(chains)
    if K < 1:
        raise InvalidInputError("need at least one chain")
    if record_every < 1:
        raise InvalidInputError("record_every must be >= 1")
    rep = cfg.repulsion
    needs_context = cfg.repulsive and rep.mode == "representation" and sched.cycles > 1
    if needs_context and probe_source is None:
        raise ConfigError("representation-mode repulsion needs a probe source")
    cfg.burnin_end(sched)  # fail on an invalid burn-in window before any work

    init_pts = _initial_points(init, K)
    run_rng = RngStream(seed, RUN_STREAM_ID)
    states = [
        ChainState(init_pts[k].copy(), np.zeros(init_pts.shape[1]), RngStream(seed, k)) for k in range(K)
    ]
    T = sched.iters_per_cycle
    archive = SampleArchive()
    rows, checksums = [], []
    noise_draws = np.zeros((sched.cycles, K), dtype=np.int64)
    stage_noise = {"exploration": [0] * sched.cycles, "sampling": [0] * sched.cycles}
    prev_end: List[np.ndarray] = []

    for c in range(1, sched.cycles + 1):
        context = None
        if needs_context and c > 1:
            n_src = probe_source.inputs.shape[0]
            m = min(rep.batch_size, n_src)
            idx = np.sort(run_rng.choice(n_src, m, replace=False))
            context = RepresentationContext(
                probe_source.adapter, probe_source.backbone, probe_source.inputs[idx], probe_id=c
            )
        snapshots = SnapshotSet.freeze(prev_end, context) if c > 1 else SnapshotSet()
        start_sum = snapshots.checksum()

        def advance(k, c=c, snapshots=snapshots, context=context):
            st = states[k]
            theta = init_pts[k].copy() if (c > 1 and cfg.position_restart == "init") else st.theta
            r = np.zeros_like(theta) if cfg.momentum_restart == "zero" else st.momentum
            st = ChainState(theta, r, st.rng, None)
            chain_rows = []
            explore_draws = 0
            for t in range(1, T + 1):
                before = st.rng.normal_draws
                st = rcsghmc_step(st, potential, cfg, sched, t, c, snapshots, context, chain_id=k)
                if not is_sampling_stage(sched, t):
                    explore_draws += st.rng.normal_draws - before
                if t % record_every == 0 or t == T:
                    chain_rows.append(np.concatenate([[c, t, k], st.theta]))
            return st, chain_rows, explore_draws

        draws_before = [s.rng.normal_draws for s in states]
        if workers > 1 and K > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(advance, range(K)))
        else:
            results = [advance(k) for k in range(K)]

        end_sum = snapshots.checksum()
        if end_sum != start_sum:
            raise RuntimeError(f"snapshot set mutated during cycle {c}")
        checksums.append((start_sum, end_sum))

        prev_end = []
        for k, (st, chain_rows, explore_draws) in enumerate(results):
            states[k] = st
            rows.extend(chain_rows)
            noise_draws[c - 1, k] = st.rng.normal_draws - draws_before[k]
            stage_noise["exploration"][c - 1] += explore_draws
            stage_noise["sampling"][c - 1] += int(noise_draws[c - 1, k]) - explore_draws
            prev_end.append(st.theta.copy())
            archive.records.append(
                SampleRecord(c, k, st.theta.copy(), float(potential.value(st.theta)), c * T, seed)
            )
        logger.debug("cycle %d done, potentials %s", c, [r.potential for r in archive.records[-K:]])
        if on_cycle_end is not None:
            on_cycle_end(c, prev_end)

    trajectory = np.array(rows) if rows else np.empty((0, 3 + init_pts.shape[1]))
    # stable order: cycle, chain, iteration
    order = np.lexsort((trajectory[:, 1], trajectory[:, 2], trajectory[:, 0]))
    report = RunReport(trajectory[order], noise_draws, stage_noise, checksums, seed)
    return archive, report


def map_baseline(potential, theta0, max_iter: int = 20000, tol: float = 1e-6) -> np.ndarray:
    """Full-batch local minimum of the potential by L-BFGS.

    Stops when the gradient norm falls below ``tol``, when the potential
    stops decreasing, or after ``max_iter`` iterations.

    Raises:
        DivergenceError: if the potential or the iterate becomes non-finite.
    """
    theta = as_vector(theta0, "theta0").copy()

    def fun(x):
        return potential.value(x), potential.grad(x)

    with np.errstate(over="ignore", invalid="ignore"):
        res = minimize(
            fun, theta, jac=True, method="L-BFGS-B", options={"maxiter": max_iter, "gtol": tol, "ftol": 0.0}
        )
    _check_finite(res.x, "MAP estimate")
    if not np.isfinite(res.fun):
        raise DivergenceError("MAP potential is not finite")
    return np.asarray(res.x, dtype=np.float64)
