"""Experiment configuration.

A config is one JSON document with the blocks ``task``, ``sampler``,
``repulsion``, ``diagnostics``, ``ensemble``, ``ablation`` plus ``seeds``
and ``outdir``.  Every block rejects unknown keys.  Missing keys are filled
from a preset chosen by ``task.kind`` and then from the field defaults, so
dumping a loaded config and loading the dump gives the same config back.
"""

from __future__ import annotations

import copy
import json
import math
import re
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .core import ConfigError, InvalidInputError
from .potentials import GaussianMixture

TASK_KINDS = ("toy-2d", "synthetic-classifier")

# Per-task overrides of the field defaults.  The toy values are tuned so
# that one repelled cycle reliably reaches the second mode; the classifier
# step size is scaled down because the mini-batch gradient grows with n.
PRESETS = {
    "toy-2d": {
        "sampler": {
            "step_size": 0.01,
            "iters_per_cycle": 100,
            "cycles": 2,
            "friction": 0.5,
            "position_restart": "init",
        },
        "repulsion": {"strength": 2.0},
    },
    "synthetic-classifier": {
        "sampler": {
            "step_size": 1e-4,
            "burnin": "adamw",
            "position_restart": "init",
        },
        "repulsion": {"mode": "representation"},
    },
}


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True, frozen=True)


class ToyTask(_Block):
    """Gaussian-mixture target; the potential is its negative log density."""

    kind: Literal["toy-2d"] = "toy-2d"
    means: List[List[float]] = [[-3.0, 0.0], [3.0, 0.0]]
    variances: Union[float, List[float], List[List[float]]] = 0.5
    weights: Optional[List[float]] = None
    init: List[float] = [-0.5, 0.0]
    coverage_radius: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _check(self):
        gm = self.mixture()
        if len(self.init) != gm.dim:
            raise ValueError(f"init has length {len(self.init)}, the mixture lives in {gm.dim} dimensions")
        return self

    def mixture(self) -> GaussianMixture:
        K = len(self.means)
        weights = self.weights if self.weights is not None else [1.0 / K] * K
        try:
            return GaussianMixture(self.means, self.variances, weights)
        except InvalidInputError as err:
            raise ValueError(str(err)) from None


class ClassifierTask(_Block):
    """Synthetic classification data behind a frozen backbone and an adapter."""

    kind: Literal["synthetic-classifier"] = "synthetic-classifier"
    n: int = Field(80, ge=2)
    n_classes: int = Field(5, ge=2)
    input_dim: int = Field(8, ge=1)
    feature_dim: int = Field(16, ge=1)
    rep_dim: int = Field(16, ge=1)
    adapter: Literal["mlp", "shift"] = "mlp"
    n_test: int = Field(500, ge=1)
    class_sep: float = Field(2.0, gt=0)
    temperature: float = Field(0.07, gt=0)
    prior_precision: float = Field(5e-4, ge=0)
    init_scale: float = Field(1.0, ge=0)
    seed: Optional[int] = Field(None, ge=0)  # None: data follow the run seed

    @model_validator(mode="after")
    def _check(self):
        if self.n < self.n_classes:
            raise ValueError("n must be at least n_classes")
        if self.adapter == "shift" and self.rep_dim != self.feature_dim:
            raise ValueError("the shift adapter needs rep_dim == feature_dim")
        return self


class SamplerBlock(_Block):
    algorithm: Literal["sgld", "sghmc", "rcsghmc", "map"] = "rcsghmc"
    cycles: int = Field(3, ge=1)
    iters_per_cycle: Optional[int] = Field(None, ge=1)
    epochs_per_cycle: int = Field(5, ge=1)
    batch_size: int = Field(4, ge=1)
    step_size: float = Field(2e-3, gt=0)
    beta: float = Field(0.7, ge=0, le=1)
    friction: float = Field(0.1, gt=0, le=1)
    gamma_hat: float = Field(0.0, ge=0)
    chains: int = Field(1, ge=1)
    burnin: Literal["none", "adamw"] = "none"
    burnin_fraction: Optional[float] = Field(None, ge=0, le=1)
    burnin_lr: float = Field(1e-2, gt=0)
    burnin_weight_decay: float = Field(0.0, ge=0)
    momentum_restart: Literal["zero", "carry"] = "zero"
    position_restart: Literal["continue", "init"] = "continue"
    record_every: int = Field(1, ge=1)
    map_max_iter: int = Field(20000, ge=1)
    map_tol: float = Field(1e-6, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if not self.friction - self.gamma_hat > 0:
            raise ValueError("gamma_hat must be smaller than friction")
        if self.burnin_fraction is not None and self.burnin_fraction > self.beta:
            raise ValueError("burnin_fraction cannot exceed beta")
        return self


class RepulsionBlock(_Block):
    mode: Literal["parameter-euclidean", "representation"] = "parameter-euclidean"
    metric: Literal["mmd", "wasserstein"] = "wasserstein"
    strength: float = Field(1e-3, ge=0)
    epsilon: float = Field(1e-6, gt=0)
    batch_size: int = Field(32, ge=2)
    mmd_sigma: Optional[float] = Field(None, gt=0)
    mmd_unbiased: bool = False


class DiagnosticsBlock(_Block):
    probe_size: int = Field(100, ge=1)
    probe_seed: int = Field(0, ge=0)
    metric: Literal["mmd", "wasserstein"] = "wasserstein"


class EnsembleBlock(_Block):
    members: Literal["all_cycles", "final_cycle"] = "all_cycles"


class AblationBlock(_Block):
    parameter: Literal["xi", "cycles", "repulsion_batch"] = "cycles"
    values: List[float] = Field(default_factory=lambda: [1, 2, 3, 4], min_length=1)

    @model_validator(mode="after")
    def _check(self):
        if self.parameter == "xi":
            if any(v < 0 or not math.isfinite(v) for v in self.values):
                raise ValueError("xi values must be finite and non-negative")
        else:
            low = 1 if self.parameter == "cycles" else 2
            if any(v != int(v) or v < low for v in self.values):
                raise ValueError(f"{self.parameter} values must be integers >= {low}")
        return self


class ExperimentConfig(_Block):
    task: Union[ToyTask, ClassifierTask] = Field(default_factory=ToyTask, discriminator="kind")
    sampler: SamplerBlock = SamplerBlock()
    repulsion: RepulsionBlock = RepulsionBlock()
    diagnostics: DiagnosticsBlock = DiagnosticsBlock()
    ensemble: EnsembleBlock = EnsembleBlock()
    ablation: AblationBlock = AblationBlock()
    seeds: List[int] = Field(default_factory=lambda: [1, 2, 3], min_length=1)
    outdir: str = "runs"

    @model_validator(mode="after")
    def _check(self):
        if len(set(self.seeds)) != len(self.seeds) or min(self.seeds) < 0:
            raise ValueError("seeds must be distinct non-negative integers")
        if isinstance(self.task, ToyTask):
            if self.repulsion.mode == "representation":
                raise ValueError("representation-mode repulsion needs the synthetic-classifier task")
            if self.sampler.iters_per_cycle is None:
                raise ValueError("sampler.iters_per_cycle is required for toy tasks")
        return self

    @property
    def is_toy(self) -> bool:
        return isinstance(self.task, ToyTask)

    def iterations_per_cycle(self) -> int:
        s = self.sampler
        if s.iters_per_cycle is not None:
            return s.iters_per_cycle
        return s.epochs_per_cycle * math.ceil(self.task.n / min(s.batch_size, self.task.n))

    def to_dict(self, include_outdir: bool = False) -> dict:
        return self.model_dump(mode="json", exclude=None if include_outdir else {"outdir"})

    def replace(self, **blocks) -> "ExperimentConfig":
        """Copy with some fields of some blocks changed, re-validated.

        Example: ``cfg.replace(repulsion={"strength": 0.0})``.
        """
        data = self.to_dict(include_outdir=True)
        for name, value in blocks.items():
            if isinstance(value, dict):
                data[name] = {**data[name], **value}
            else:
                data[name] = value
        return _validate(data, None)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _key_line(text: str, path) -> Optional[int]:
    """Best-effort source line of a key path in a JSON document."""
    pos, found = 0, False
    for key in path:
        if not isinstance(key, str):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(key)).search(text, pos)
        if m is None:
            continue
        pos, found = m.start(), True
    return text.count("\n", 0, pos) + 1 if found else None


def _validate(data: dict, text: Optional[str]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as err:
        problems = []
        for e in err.errors():
            path = [p for p in e["loc"] if p not in TASK_KINDS]
            key = ".".join(str(p) for p in path) or "<root>"
            line = _key_line(text, path) if text is not None else None
            where = f"{key} (line {line})" if line else key
            problems.append(f"{where}: {e['msg']}")
        raise ConfigError("invalid config: " + "; ".join(problems)) from None


def with_preset(data: dict, default_kind: str = "toy-2d") -> dict:
    """Fill missing keys of a raw config dict from the task preset."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    task = data.get("task", {})
    kind = task.get("kind", default_kind) if isinstance(task, dict) else default_kind
    if kind not in TASK_KINDS:
        raise ConfigError(f"task.kind: must be one of {TASK_KINDS}, got {kind!r}")
    base = _merge(PRESETS[kind], {"task": {"kind": kind}})
    return _merge(base, data)


def parse_config(text: str, default_kind: str = "toy-2d") -> ExperimentConfig:
    """Parse and validate a JSON config document.

    Raises:
        ConfigError: on malformed JSON (with line and column) or on schema
            violations (with key path and, where found, line).
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"malformed JSON at line {err.lineno}, column {err.colno}: {err.msg}") from None
    return _validate(with_preset(data, default_kind), text)


def load_config(path, default_kind: str = "toy-2d") -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    return parse_config(text, default_kind)


def default_config(kind: str = "toy-2d") -> ExperimentConfig:
    return _validate(with_preset({}, kind), None)
